//! Deterministic simulated apps: finite screen machines with element trees,
//! virtual step durations and UI mutation for staleness experiments.

pub mod catalog;
pub mod workload;

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::ui_model::{
    Action, ActionKind, Rect, UIElement, UIState, PARAM_APP_ID, PARAM_SOURCE, PARAM_TEXT,
};

pub const LAUNCHER: &str = "launcher";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub id: String,
    pub root: UIElement,
}

/// `(from, kind, target)` -> `to`. A `type_text` without a transition stays
/// put; declaring one only changes its duration or destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: String,
    pub kind: ActionKind,
    #[serde(default)]
    pub target: Option<String>,
    pub to: String,
    #[serde(default)]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Durations {
    pub launch_ms: u64,
    pub click_ms: u64,
    pub type_ms: u64,
    pub swipe_ms: u64,
    pub back_ms: u64,
    pub emit_ms: u64,
    pub done_ms: u64,
}

impl Default for Durations {
    fn default() -> Self {
        Self {
            launch_ms: 1500,
            click_ms: 800,
            type_ms: 1200,
            swipe_ms: 600,
            back_ms: 500,
            emit_ms: 300,
            done_ms: 0,
        }
    }
}

/// An app as data. Element text may contain `{field:rid}` (the value typed
/// into `rid`) or `{hash:rid}` (a stable number derived from that value).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSpec {
    pub app_id: String,
    pub home: String,
    pub screens: Vec<ScreenSpec>,
    pub transitions: Vec<TransitionSpec>,
    #[serde(default)]
    pub durations: Durations,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("no transition for {action} on {app}/{screen}")]
    NoTransition {
        app: String,
        screen: String,
        action: String,
    },
    #[error("unknown mutation target {0:?}")]
    UnknownTarget(String),
    #[error("invalid app spec {app}: {reason}")]
    InvalidSpec { app: String, reason: String },
}

impl AppSpec {
    pub fn screen(&self, id: &str) -> Option<&ScreenSpec> {
        self.screens.iter().find(|s| s.id == id)
    }

    fn screen_mut(&mut self, id: &str) -> Option<&mut ScreenSpec> {
        self.screens.iter_mut().find(|s| s.id == id)
    }

    pub fn launcher_root(&self) -> UIElement {
        UIElement::new(LAUNCHER, "FrameLayout", "", Rect::new(0, 0, 1080, 1920)).with_children(
            alloc::vec![UIElement::new(
                &format!("icon_{}", self.app_id),
                "ImageView",
                &self.app_id,
                Rect::new(40, 40, 240, 240),
            )],
        )
    }

    /// Transitions name known screens and every screen is reachable from home.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |reason: String| EnvError::InvalidSpec {
            app: self.app_id.clone(),
            reason,
        };
        if self.screen(&self.home).is_none() {
            return Err(bad(format!("home screen {:?} missing", self.home)));
        }
        let mut ids = BTreeSet::new();
        for s in &self.screens {
            if s.id == LAUNCHER || !ids.insert(s.id.as_str()) {
                return Err(bad(format!("screen id {:?} reserved or repeated", s.id)));
            }
        }
        for t in &self.transitions {
            if !ids.contains(t.from.as_str()) || !ids.contains(t.to.as_str()) {
                return Err(bad(format!("transition {} -> {} names unknown screen", t.from, t.to)));
            }
        }
        let mut seen = BTreeSet::from([self.home.as_str()]);
        let mut queue = VecDeque::from([self.home.as_str()]);
        while let Some(s) = queue.pop_front() {
            for t in self.transitions.iter().filter(|t| t.from == s) {
                if seen.insert(t.to.as_str()) {
                    queue.push_back(t.to.as_str());
                }
            }
        }
        if let Some(orphan) = ids.iter().find(|id| !seen.contains(**id)) {
            return Err(bad(format!("screen {orphan:?} unreachable from home")));
        }
        Ok(())
    }

    fn transition(&self, from: &str, kind: ActionKind, target: Option<&str>) -> Option<&TransitionSpec> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.kind == kind && t.target.as_deref() == target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum MutationOp {
    RenameText { text: String },
    MoveElement { new_parent: String },
    RemoveElement,
    ReorderChildren,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub screen: String,
    pub target: String,
    #[serde(flatten)]
    pub op: MutationOp,
}

/// Applies a mutation to one screen of `app`; other screens are untouched.
pub fn mutate_ui(app: &mut AppSpec, m: &Mutation) -> Result<(), EnvError> {
    let unknown = || EnvError::UnknownTarget(format!("{}/{}", m.screen, m.target));
    let screen = app.screen_mut(&m.screen).ok_or_else(unknown)?;
    let (path, _) = screen.root.find_resource(&m.target).ok_or_else(unknown)?;
    match &m.op {
        MutationOp::RenameText { text } => {
            screen.root.at_path_mut(&path).expect("found").text = text.clone();
        }
        MutationOp::ReorderChildren => {
            screen.root.at_path_mut(&path).expect("found").children.reverse();
        }
        MutationOp::RemoveElement | MutationOp::MoveElement { .. } => {
            let Some((last, parent_path)) = path.split_last() else {
                return Err(unknown());
            };
            if let MutationOp::MoveElement { new_parent } = &m.op {
                let (np, _) = screen.root.find_resource(new_parent).ok_or_else(unknown)?;
                if np.starts_with(&path) {
                    return Err(unknown());
                }
            }
            let parent = screen.root.at_path_mut(parent_path).expect("found");
            let mut el = parent.children.remove(*last);
            if let MutationOp::MoveElement { new_parent } = &m.op {
                let (np, _) = screen.root.find_resource(new_parent).expect("checked");
                let dest = screen.root.at_path_mut(&np).expect("found");
                el.bounds = dest.bounds;
                for c in &mut el.children {
                    c.bounds = dest.bounds;
                }
                dest.children.push(el);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub state: UIState,
    pub outputs: Vec<(String, String)>,
    pub duration_ms: u64,
}

/// What the replay engine needs from a device.
pub trait GuiEnvironment {
    fn app_id(&self) -> &str;
    fn observe(&self) -> UIState;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
    fn reset(&mut self);
}

/// Stable pseudo-quantity for `{hash:rid}` placeholders; differs per app.
pub fn value_hash(app_id: &str, value: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(app_id.as_bytes());
    h.write(&[0]);
    h.write(value.trim().to_lowercase().as_bytes());
    100 + h.finish() % 9000
}

/// One running instance of an app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimApp {
    spec: AppSpec,
    screen: String,
    fields: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl SimApp {
    pub fn new(spec: AppSpec) -> Self {
        Self {
            spec,
            screen: LAUNCHER.into(),
            fields: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &AppSpec {
        &self.spec
    }

    pub fn spec_mut(&mut self) -> &mut AppSpec {
        &mut self.spec
    }

    pub fn screen_id(&self) -> &str {
        &self.screen
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    pub fn mutate(&mut self, m: &Mutation) -> Result<(), EnvError> {
        mutate_ui(&mut self.spec, m)
    }

    fn render_text(&self, text: &str) -> String {
        let mut out = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let Some(close) = after.find('}') else {
                out.push_str(&rest[open..]);
                rest = "";
                break;
            };
            let inner = &after[..close];
            match inner.split_once(':') {
                Some(("field", rid)) => out.push_str(self.fields.get(rid).map_or("", String::as_str)),
                Some(("hash", rid)) => {
                    let v = self.fields.get(rid).map_or("", String::as_str);
                    out.push_str(&value_hash(&self.spec.app_id, v).to_string());
                }
                _ => {
                    out.push('{');
                    out.push_str(inner);
                    out.push('}');
                }
            }
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        out
    }

    fn render(&self, el: &UIElement) -> UIElement {
        let mut r = el.clone();
        r.text = match self.fields.get(&el.resource_id) {
            Some(v) if !el.resource_id.is_empty() => v.clone(),
            _ => self.render_text(&el.text),
        };
        r.children = el.children.iter().map(|c| self.render(c)).collect();
        r
    }

    fn no_transition(&self, action: &Action) -> EnvError {
        EnvError::NoTransition {
            app: self.spec.app_id.clone(),
            screen: self.screen.clone(),
            action: action.describe(),
        }
    }
}

impl GuiEnvironment for SimApp {
    fn app_id(&self) -> &str {
        &self.spec.app_id
    }

    fn observe(&self) -> UIState {
        let root = if self.screen == LAUNCHER {
            self.spec.launcher_root()
        } else {
            let s = self.spec.screen(&self.screen).expect("current screen exists");
            self.render(&s.root)
        };
        UIState::new(&self.spec.app_id, &self.screen, root)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let d = self.spec.durations;
        let current = self.observe();
        let target_rid = match &action.target {
            Some(t) => {
                let (_, el) = current
                    .find_resource(&t.resource_id)
                    .filter(|_| !t.resource_id.is_empty())
                    .ok_or_else(|| self.no_transition(action))?;
                Some(el.resource_id.clone())
            }
            None => None,
        };
        let mut outputs = Vec::new();
        let duration_ms = match action.kind {
            ActionKind::Launch => {
                if action.param(PARAM_APP_ID) != Some(self.spec.app_id.as_str()) {
                    return Err(self.no_transition(action));
                }
                self.fields.clear();
                self.screen = self.spec.home.clone();
                d.launch_ms
            }
            ActionKind::Done => d.done_ms,
            ActionKind::EmitOutput => {
                let slot = action.output_slot.clone().ok_or_else(|| self.no_transition(action))?;
                let source = action.param(PARAM_SOURCE).unwrap_or_default();
                let value = current
                    .text_of(source)
                    .ok_or_else(|| self.no_transition(action))?
                    .to_string();
                self.outputs.insert(slot.clone(), value.clone());
                outputs.push((slot, value));
                d.emit_ms
            }
            ActionKind::TypeText => {
                let rid = target_rid.clone().ok_or_else(|| self.no_transition(action))?;
                let t = self.spec.transition(&self.screen, ActionKind::TypeText, Some(&rid)).cloned();
                self.fields
                    .insert(rid, action.param(PARAM_TEXT).unwrap_or_default().to_string());
                match t {
                    Some(t) => {
                        self.screen = t.to.clone();
                        t.duration_ms.unwrap_or(d.type_ms)
                    }
                    None => d.type_ms,
                }
            }
            kind @ (ActionKind::Click | ActionKind::Swipe | ActionKind::Back) => {
                let t = self
                    .spec
                    .transition(&self.screen, kind, target_rid.as_deref())
                    .cloned()
                    .ok_or_else(|| self.no_transition(action))?;
                self.screen = t.to.clone();
                t.duration_ms.unwrap_or(match kind {
                    ActionKind::Click => d.click_ms,
                    ActionKind::Swipe => d.swipe_ms,
                    _ => d.back_ms,
                })
            }
        };
        Ok(StepResult {
            state: self.observe(),
            outputs,
            duration_ms,
        })
    }

    fn reset(&mut self) {
        self.screen = LAUNCHER.into();
        self.fields.clear();
        self.outputs.clear();
    }
}
