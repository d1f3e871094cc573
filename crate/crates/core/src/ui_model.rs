//! Simulated GUI vocabulary: element trees, screens, actions, traces and the
//! fuzzy element matcher used to detect stale cached actions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::text;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Rect {
    pub const fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIElement {
    #[serde(default)]
    pub resource_id: String,
    pub class_name: String,
    #[serde(default)]
    pub text: String,
    pub bounds: Rect,
    #[serde(default)]
    pub children: Vec<UIElement>,
}

impl UIElement {
    pub fn new(resource_id: &str, class_name: &str, text: &str, bounds: Rect) -> Self {
        Self {
            resource_id: resource_id.to_string(),
            class_name: class_name.to_string(),
            text: text.to_string(),
            bounds,
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<UIElement>) -> Self {
        self.children = children;
        self
    }

    /// Every child's bounds lie within its parent's, recursively.
    pub fn bounds_nested(&self) -> bool {
        self.children
            .iter()
            .all(|c| self.bounds.contains(&c.bounds) && c.bounds_nested())
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&UIElement> {
        let mut node = self;
        for &i in path {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    pub fn at_path_mut(&mut self, path: &[usize]) -> Option<&mut UIElement> {
        let mut node = self;
        for &i in path {
            node = node.children.get_mut(i)?;
        }
        Some(node)
    }

    /// Pre-order walk yielding `(path, element)`.
    pub fn preorder(&self) -> Vec<(Vec<usize>, &UIElement)> {
        let mut out = Vec::new();
        let mut stack: Vec<(Vec<usize>, &UIElement)> = alloc::vec![(Vec::new(), self)];
        while let Some((path, el)) = stack.pop() {
            for (i, child) in el.children.iter().enumerate().rev() {
                let mut p = path.clone();
                p.push(i);
                stack.push((p, child));
            }
            out.push((path, el));
        }
        out
    }

    /// First element in pre-order with the given resource id.
    pub fn find_resource(&self, resource_id: &str) -> Option<(Vec<usize>, &UIElement)> {
        self.preorder()
            .into_iter()
            .find(|(_, e)| e.resource_id == resource_id)
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(UIElement::count).sum::<usize>()
    }
}

/// Structural digest of a screen: app id plus the pre-order tree of
/// `(resource_id, class_name)` pairs. Text and bounds do not contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fingerprint(u64);

impl Fingerprint {
    pub const fn from_raw(raw: u64) -> Self {
        Self(raw)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl From<Fingerprint> for String {
    fn from(fp: Fingerprint) -> Self {
        format!("{fp}")
    }
}

impl TryFrom<String> for Fingerprint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.len() != 16 {
            return Err(format!("fingerprint must be 16 hex digits, got {s:?}"));
        }
        u64::from_str_radix(&s, 16)
            .map(Fingerprint)
            .map_err(|_| format!("invalid fingerprint {s:?}"))
    }
}

fn write_str(h: &mut FnvHasher, s: &str) {
    h.write_u64(s.len() as u64);
    h.write(s.as_bytes());
}

pub fn fingerprint(app_id: &str, root: &UIElement) -> Fingerprint {
    let mut h = FnvHasher::default();
    write_str(&mut h, app_id);
    let mut stack = alloc::vec![root];
    while let Some(el) = stack.pop() {
        write_str(&mut h, &el.resource_id);
        write_str(&mut h, &el.class_name);
        h.write_u64(el.children.len() as u64);
        stack.extend(el.children.iter().rev());
    }
    Fingerprint(h.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIState {
    pub app_id: String,
    pub screen_id: String,
    pub root: UIElement,
    pub fingerprint: Fingerprint,
}

impl UIState {
    pub fn new(app_id: &str, screen_id: &str, root: UIElement) -> Self {
        let fingerprint = fingerprint(app_id, &root);
        Self {
            app_id: app_id.to_string(),
            screen_id: screen_id.to_string(),
            root,
            fingerprint,
        }
    }

    /// Recomputes the digest; false when the stored one is out of date.
    pub fn fingerprint_consistent(&self) -> bool {
        fingerprint(&self.app_id, &self.root) == self.fingerprint
    }

    pub fn element(&self, path: &[usize]) -> Option<&UIElement> {
        self.root.at_path(path)
    }

    pub fn find_resource(&self, resource_id: &str) -> Option<(Vec<usize>, &UIElement)> {
        self.root.find_resource(resource_id)
    }

    /// Text of the first element carrying `resource_id`.
    pub fn text_of(&self, resource_id: &str) -> Option<&str> {
        self.find_resource(resource_id).map(|(_, e)| e.text.as_str())
    }
}

/// Identifies an element by what a cached action remembers about it.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Selector {
    #[serde(default)]
    pub resource_id: String,
    #[serde(default)]
    pub class_name: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub path: Vec<usize>,
}

impl Selector {
    pub fn new(resource_id: &str, class_name: &str, text: &str) -> Self {
        Self {
            resource_id: resource_id.to_string(),
            class_name: class_name.to_string(),
            text: text.to_string(),
            path: Vec::new(),
        }
    }

    pub fn of(element: &UIElement, path: Vec<usize>) -> Self {
        Self {
            resource_id: element.resource_id.clone(),
            class_name: element.class_name.clone(),
            text: element.text.clone(),
            path,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.resource_id.is_empty() && self.class_name.is_empty() && self.text.is_empty()
    }

    /// Same element identity ignoring the text snapshot.
    pub fn same_target(&self, other: &Selector) -> bool {
        self.resource_id == other.resource_id
            && self.class_name == other.class_name
            && self.path == other.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Launch,
    Click,
    TypeText,
    Swipe,
    Back,
    Done,
    EmitOutput,
}

impl ActionKind {
    pub fn needs_target(self) -> bool {
        matches!(self, Self::Click | Self::TypeText)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Launch => "launch",
            Self::Click => "click",
            Self::TypeText => "type_text",
            Self::Swipe => "swipe",
            Self::Back => "back",
            Self::Done => "done",
            Self::EmitOutput => "emit_output",
        }
    }
}

pub const PARAM_APP_ID: &str = "app_id";
pub const PARAM_TEXT: &str = "text";
pub const PARAM_DIRECTION: &str = "direction";
/// Resource id whose live text an `emit_output` action publishes.
pub const PARAM_SOURCE: &str = "source";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default)]
    pub target: Option<Selector>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub output_slot: Option<String>,
}

/// Everything that makes two actions "the same edge" in an action cache:
/// the target's text snapshot is excluded because it is rebound at replay.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ActionIdentity {
    kind: ActionKind,
    target: Option<(String, String, Vec<usize>)>,
    params: BTreeMap<String, String>,
    output_slot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("{kind} action requires a target")]
    MissingTarget { kind: &'static str },
    #[error("{kind} action must not carry a target")]
    UnexpectedTarget { kind: &'static str },
    #[error("launch action requires an app_id parameter")]
    MissingAppId,
    #[error("emit_output action requires an output slot")]
    MissingOutputSlot,
}

impl Action {
    fn bare(kind: ActionKind) -> Self {
        Self {
            kind,
            target: None,
            params: BTreeMap::new(),
            output_slot: None,
        }
    }

    pub fn launch(app_id: &str) -> Self {
        let mut a = Self::bare(ActionKind::Launch);
        a.params.insert(PARAM_APP_ID.into(), app_id.into());
        a
    }

    pub fn click(target: Selector) -> Self {
        let mut a = Self::bare(ActionKind::Click);
        a.target = Some(target);
        a
    }

    pub fn type_text(target: Selector, value: &str) -> Self {
        let mut a = Self::bare(ActionKind::TypeText);
        a.target = Some(target);
        a.params.insert(PARAM_TEXT.into(), value.into());
        a
    }

    pub fn swipe(target: Option<Selector>, direction: &str) -> Self {
        let mut a = Self::bare(ActionKind::Swipe);
        a.target = target;
        a.params.insert(PARAM_DIRECTION.into(), direction.into());
        a
    }

    pub fn back() -> Self {
        Self::bare(ActionKind::Back)
    }

    pub fn done() -> Self {
        Self::bare(ActionKind::Done)
    }

    pub fn emit_output(slot: &str, source_resource_id: &str) -> Self {
        let mut a = Self::bare(ActionKind::EmitOutput);
        a.output_slot = Some(slot.into());
        a.params.insert(PARAM_SOURCE.into(), source_resource_id.into());
        a
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn identity(&self) -> ActionIdentity {
        ActionIdentity {
            kind: self.kind,
            target: self
                .target
                .as_ref()
                .map(|t| (t.resource_id.clone(), t.class_name.clone(), t.path.clone())),
            params: self.params.clone(),
            output_slot: self.output_slot.clone(),
        }
    }

    pub fn same_as(&self, other: &Action) -> bool {
        self.identity() == other.identity()
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        let kind = self.kind.as_str();
        match self.kind {
            ActionKind::Click | ActionKind::TypeText if self.target.is_none() => {
                Err(ActionError::MissingTarget { kind })
            }
            ActionKind::Launch | ActionKind::Done | ActionKind::EmitOutput | ActionKind::Back
                if self.target.is_some() =>
            {
                Err(ActionError::UnexpectedTarget { kind })
            }
            ActionKind::Launch if !self.params.contains_key(PARAM_APP_ID) => {
                Err(ActionError::MissingAppId)
            }
            ActionKind::EmitOutput if self.output_slot.is_none() => {
                Err(ActionError::MissingOutputSlot)
            }
            _ => Ok(()),
        }
    }

    /// Short human-readable rendering, e.g. `click btn_search "Search"`.
    pub fn describe(&self) -> String {
        let mut s = String::from(self.kind.as_str());
        if let Some(t) = &self.target {
            s.push(' ');
            s.push_str(if t.resource_id.is_empty() {
                &t.class_name
            } else {
                &t.resource_id
            });
            if !t.text.is_empty() {
                s.push_str(&format!(" {:?}", t.text));
            }
        }
        for (k, v) in &self.params {
            s.push_str(&format!(" {k}={v:?}"));
        }
        if let Some(slot) = &self.output_slot {
            s.push_str(&format!(" -> {slot}"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrigin {
    Oracle,
    ActtreeReuse,
    ActchainReuse,
    UserCorrection,
}

impl StepOrigin {
    pub fn is_reuse(self) -> bool {
        matches!(self, Self::ActtreeReuse | Self::ActchainReuse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("trace has {steps} steps but {annotations} annotations")]
    AnnotationCount { steps: usize, annotations: usize },
    #[error("successful trace has no steps")]
    EmptySuccess,
    #[error("successful trace must end with done")]
    MissingDone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub task_text: String,
    pub steps: Vec<(UIState, Action)>,
    pub outcome: Outcome,
    pub annotations: Vec<StepOrigin>,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.steps.len() != self.annotations.len() {
            return Err(TraceError::AnnotationCount {
                steps: self.steps.len(),
                annotations: self.annotations.len(),
            });
        }
        if self.outcome == Outcome::Success {
            match self.steps.last() {
                None => return Err(TraceError::EmptySuccess),
                Some((_, a)) if a.kind != ActionKind::Done => return Err(TraceError::MissingDone),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        self.steps.iter().map(|(s, _)| s.fingerprint).collect()
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|(_, a)| a)
    }
}

/// Weights and acceptance threshold of the fuzzy element matcher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub resource_id_weight: f64,
    pub class_weight: f64,
    pub text_weight: f64,
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            resource_id_weight: 0.5,
            class_weight: 0.2,
            text_weight: 0.3,
            threshold: 0.8,
        }
    }
}

// Absorbs rounding in sums like 0.7 + 0.3 * (1/3).
const SCORE_EPSILON: f64 = 1e-9;

impl MatchConfig {
    pub fn score(&self, selector: &Selector, element: &UIElement) -> f64 {
        let rid = if selector.resource_id == element.resource_id {
            self.resource_id_weight
        } else {
            0.0
        };
        let class = if selector.class_name == element.class_name {
            self.class_weight
        } else {
            0.0
        };
        rid + class + self.text_weight * text::text_similarity(&selector.text, &element.text)
    }

    pub fn accepts(&self, score: f64) -> bool {
        score + SCORE_EPSILON >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatch<'a> {
    pub element: &'a UIElement,
    pub path: Vec<usize>,
    pub score: f64,
}

impl ElementMatch<'_> {
    pub fn selector(&self) -> Selector {
        Selector::of(self.element, self.path.clone())
    }
}

/// Highest-scoring element regardless of threshold; first in pre-order wins ties.
pub fn best_candidate<'a>(
    selector: &Selector,
    state: &'a UIState,
    config: &MatchConfig,
) -> Option<ElementMatch<'a>> {
    let mut best: Option<ElementMatch<'a>> = None;
    for (path, element) in state.root.preorder() {
        let score = config.score(selector, element);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(ElementMatch {
                element,
                path,
                score,
            });
        }
    }
    best
}

/// Locates the live element a cached selector refers to, or `None` (a miss)
/// when nothing scores at least the configured threshold.
pub fn fuzzy_match<'a>(
    selector: &Selector,
    state: &'a UIState,
    config: &MatchConfig,
) -> Option<ElementMatch<'a>> {
    if selector.is_empty() {
        return None;
    }
    best_candidate(selector, state, config).filter(|m| config.accepts(m.score))
}
