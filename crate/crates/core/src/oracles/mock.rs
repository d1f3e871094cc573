//! Deterministic stand-ins for every model role.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{
    ExperienceGenerator, Judge, Operator, OperatorFailed, OperatorRequest, ProfileCheck,
    ProfileUpdater, RefineRequest, RequiredElement, RewriteRequest, RewriteResponse,
    SplitRequest, SynthesisRequest, TaskRewriter, UpdateRequest,
};
use crate::experience_memory::{
    ActionHint, ExperienceTemplate, SlotSpec, StepKind, TemplateLevel, TemplateStep,
};
use crate::profile_memory::{ChangeSet, SplitProposal};
use crate::text::{self, TextPattern};
use crate::ui_model::{
    fuzzy_match, Action, ActionKind, MatchConfig, Selector, StepOrigin, TraceRecord, UIState,
    PARAM_TEXT,
};

/// Proposes nothing; every split it returns is rejected.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullUpdater;

impl ProfileUpdater for NullUpdater {
    fn propose(&self, _: &UpdateRequest) -> ChangeSet {
        ChangeSet::default()
    }

    fn split(&self, _: &SplitRequest) -> SplitProposal {
        SplitProposal {
            subconcepts: Vec::new(),
            assignment: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRule {
    /// Every token of every keyword must occur in the observation batch.
    /// An empty list never fires for `propose`.
    pub keywords: Vec<String>,
    #[serde(default)]
    pub changes: ChangeSet,
    /// Split proposal returned when this concept is split.
    #[serde(default)]
    pub split: Option<(String, SplitProposal)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBookUpdater {
    pub rules: Vec<UpdateRule>,
}

impl RuleBookUpdater {
    pub fn new(rules: Vec<UpdateRule>) -> Self {
        Self { rules }
    }
}

impl ProfileUpdater for RuleBookUpdater {
    fn propose(&self, req: &UpdateRequest) -> ChangeSet {
        let text = req.observations.join(" ");
        let mut out = ChangeSet::default();
        for r in &self.rules {
            if !r.keywords.is_empty() && text::contains_all_tokens(&text, &r.keywords.join(" ")) {
                out.extend(r.changes.clone());
            }
        }
        out
    }

    fn split(&self, req: &SplitRequest) -> SplitProposal {
        self.rules
            .iter()
            .filter_map(|r| r.split.as_ref())
            .find(|(c, _)| *c == req.concept.id)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| NullUpdater.split(req))
    }
}

/// Builds templates by aligning a trace with earlier traces of the same
/// family: a step whose parameters differ anywhere becomes variable.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiffGenerator;

fn short_hash(s: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(s.as_bytes());
    format!("{:08x}", h.finish() as u32)
}

fn slot_name(action: &Action, key: &str) -> String {
    match &action.target {
        Some(t) if !t.resource_id.is_empty() => t.resource_id.clone(),
        _ => key.to_string(),
    }
}

impl ExperienceGenerator for DiffGenerator {
    fn synthesize(&self, req: &SynthesisRequest) -> ExperienceTemplate {
        let trace = &req.trace;
        let aligned: Vec<&TraceRecord> = req
            .references
            .iter()
            .filter(|r| {
                r.steps.len() == trace.steps.len()
                    && r.actions().zip(trace.actions()).all(|(a, b)| a.kind == b.kind)
            })
            .collect();
        let mut slots: Vec<SlotSpec> = Vec::new();
        let mut steps = Vec::new();
        let mut removed_values: Vec<String> = Vec::new();
        for (i, (_, action)) in trace.steps.iter().enumerate() {
            let mut hint = ActionHint::from_action(action);
            let mut refs = Vec::new();
            for (key, value) in &action.params {
                let varies = aligned
                    .iter()
                    .any(|r| r.steps[i].1.params.get(key) != Some(value));
                if varies {
                    let mut name = slot_name(action, key);
                    while slots.iter().any(|s| s.name == name) {
                        name.push('_');
                    }
                    hint.params.insert(key.clone(), format!("{{{name}}}"));
                    slots.push(SlotSpec {
                        name: name.clone(),
                        description: format!("{key} for {}", action.kind.as_str()),
                        required: true,
                        default: None,
                    });
                    removed_values.push(value.clone());
                    refs.push(name);
                }
            }
            if let Some(sel) = &mut hint.selector {
                if !refs.is_empty() {
                    sel.text.clear();
                }
            }
            steps.push(TemplateStep {
                index: i,
                kind: if refs.is_empty() {
                    StepKind::Invariant
                } else {
                    StepKind::Variable
                },
                instruction: action.describe(),
                slot_refs: refs,
                action_hint: Some(hint),
            });
        }
        let mut key = trace.task_text.clone();
        for v in &removed_values {
            key = key.replace(v.as_str(), " ");
        }
        let key = text::normalize(&key);
        ExperienceTemplate {
            id: format!("syn_{}", short_hash(&key)),
            key_description: key,
            level: TemplateLevel::Low,
            app_id: None,
            steps,
            slots,
            subtasks: None,
        }
    }

    /// Replaces the template step at the first user correction with the
    /// corrective action. A corrective value not seen before becomes a slot
    /// whose default is that value.
    fn refine(&self, req: &RefineRequest) -> ExperienceTemplate {
        let mut t = req.original.clone();
        t.id = next_version(&t.id);
        let Some(pos) = req
            .trace
            .annotations
            .iter()
            .position(|o| *o == StepOrigin::UserCorrection)
        else {
            return t;
        };
        let Some(step) = t.steps.get_mut(pos) else {
            return t;
        };
        let action = &req.trace.steps[pos].1;
        let mut hint = ActionHint::from_action(action);
        let mut refs = Vec::new();
        let old_value = step
            .action_hint
            .as_ref()
            .and_then(|h| h.params.get(PARAM_TEXT).cloned());
        if let Some(new_value) = action.params.get(PARAM_TEXT) {
            if old_value.as_deref() != Some(new_value.as_str()) {
                let mut name = slot_name(action, PARAM_TEXT);
                while t.slots.iter().any(|s| s.name == name) {
                    name.push('_');
                }
                hint.params.insert(PARAM_TEXT.into(), format!("{{{name}}}"));
                t.slots.push(SlotSpec {
                    name: name.clone(),
                    description: String::from("value supplied by a user correction"),
                    required: false,
                    default: Some(new_value.clone()),
                });
                refs.push(name);
            }
        }
        step.instruction = action.describe();
        step.kind = if refs.is_empty() {
            StepKind::Invariant
        } else {
            StepKind::Variable
        };
        step.slot_refs = refs;
        step.action_hint = match t.level {
            TemplateLevel::Low => Some(hint),
            TemplateLevel::High => None,
        };
        t
    }
}

/// `tpl` -> `tpl@v2`, `tpl@v2` -> `tpl@v3`.
pub fn next_version(id: &str) -> String {
    if let Some((base, v)) = id.rsplit_once("@v") {
        if let Ok(n) = v.parse::<u32>() {
            return format!("{base}@v{}", n + 1);
        }
    }
    format!("{id}@v2")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewritePattern {
    /// Restricts the pattern to one template; `None` applies to all.
    #[serde(default)]
    pub template: Option<String>,
    pub pattern: String,
}

/// Extracts slot values with literal-with-holes patterns and appends the
/// profile context to the task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRewriter {
    pub patterns: Vec<RewritePattern>,
}

impl PatternRewriter {
    pub fn new(patterns: Vec<RewritePattern>) -> Self {
        Self { patterns }
    }

    pub fn personalize(task: &str, profile_context: &str) -> String {
        let lines: Vec<&str> = profile_context
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            task.to_string()
        } else {
            format!("{task} [preferences: {}]", lines.join("; "))
        }
    }
}

impl TaskRewriter for PatternRewriter {
    fn rewrite(&self, req: &RewriteRequest) -> RewriteResponse {
        let mut slot_values = BTreeMap::new();
        if let Some(t) = &req.template {
            let candidates = self
                .patterns
                .iter()
                .filter(|p| p.template.as_ref().is_none_or(|id| *id == t.id));
            for p in candidates {
                if let Some(caps) = TextPattern::new(&p.pattern).captures(&req.task) {
                    slot_values = caps
                        .into_iter()
                        .filter(|(k, _)| t.slot(k).is_some())
                        .collect();
                    break;
                }
            }
        }
        RewriteResponse {
            rewritten_task: Self::personalize(&req.task, &req.profile_context),
            slot_values,
        }
    }
}

/// Marks an element matched when all its expected tokens occur in the task.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJudge;

impl Judge for TokenJudge {
    fn check(&self, required: &[RequiredElement], rewritten_task: &str) -> Vec<ProfileCheck> {
        required
            .iter()
            .map(|r| {
                let matched = text::contains_all_tokens(rewritten_task, &r.expected_value);
                ProfileCheck {
                    profile_element: r.profile_element.clone(),
                    expected_value: r.expected_value.clone(),
                    matched,
                    evidence: if matched {
                        r.expected_value.clone()
                    } else {
                        String::new()
                    },
                }
            })
            .collect()
    }
}

/// Always fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullOperator;

impl Operator for NullOperator {
    fn next_action(&self, _: &OperatorRequest) -> Result<Action, OperatorFailed> {
        Err(OperatorFailed {
            reason: "no operator configured".into(),
        })
    }
}

/// Recognizes a task and names the app it runs in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub name: String,
    pub app_id: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "guard")]
pub enum Guard {
    /// The element's live text equals the (filled) value.
    FieldIs { resource_id: String, value: String },
    /// An `emit_output` for this slot is already in the history.
    Emitted { slot: String },
    /// The last action in the history has this kind.
    LastWas { kind: ActionKind },
}

/// What to do on one screen for one family. Target selectors name a
/// resource id; the live element is looked up at decision time, and a rule
/// whose target is absent is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub family: String,
    pub screen: String,
    pub action: Action,
    #[serde(default)]
    pub unless: Vec<Guard>,
}

/// Rule-driven operator with a capability knob: without a hint it gives
/// up once the history is `max_unaided_depth` actions long.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOperator {
    pub families: Vec<TaskFamily>,
    pub rules: Vec<PolicyRule>,
    #[serde(default)]
    pub max_unaided_depth: Option<usize>,
}

impl ScriptedOperator {
    pub fn with_capability(mut self, depth: Option<usize>) -> Self {
        self.max_unaided_depth = depth;
        self
    }

    /// First family whose app matches and whose pattern captures the task.
    pub fn recognize(&self, task: &str, app_id: &str) -> Option<(&TaskFamily, BTreeMap<String, String>)> {
        self.families
            .iter()
            .filter(|f| f.app_id == app_id)
            .find_map(|f| TextPattern::new(&f.pattern).captures(task).map(|c| (f, c)))
    }

    fn guard_holds(g: &Guard, req: &OperatorRequest, values: &BTreeMap<String, String>) -> bool {
        match g {
            Guard::FieldIs { resource_id, value } => {
                req.state.text_of(resource_id) == Some(text::fill_placeholders(value, values).as_str())
            }
            Guard::Emitted { slot } => req
                .history
                .iter()
                .any(|a| a.kind == ActionKind::EmitOutput && a.output_slot.as_deref() == Some(slot)),
            Guard::LastWas { kind } => req.history.last().is_some_and(|a| a.kind == *kind),
        }
    }

    fn instantiate(rule: &Action, state: &UIState, values: &BTreeMap<String, String>) -> Option<Action> {
        let mut a = rule.clone();
        for v in a.params.values_mut() {
            *v = text::fill_placeholders(v, values);
        }
        if let Some(t) = &rule.target {
            let (path, el) = state.find_resource(&t.resource_id)?;
            a.target = Some(Selector::of(el, path));
        }
        Some(a)
    }

    fn follow_hint(hint: &Action, state: &UIState) -> Option<Action> {
        let mut a = hint.clone();
        if let Some(sel) = &hint.target {
            let m = fuzzy_match(sel, state, &MatchConfig::default())?;
            a.target = Some(m.selector());
        }
        Some(a)
    }
}

impl Operator for ScriptedOperator {
    fn next_action(&self, req: &OperatorRequest) -> Result<Action, OperatorFailed> {
        if let Some(hint) = &req.hint {
            if let Some(a) = Self::follow_hint(hint, &req.state) {
                return Ok(a);
            }
        }
        if let Some(d) = self.max_unaided_depth {
            if req.history.len() >= d {
                return Err(OperatorFailed {
                    reason: format!("no hint at depth {} (capability {d})", req.history.len()),
                });
            }
        }
        let (family, values) = self
            .recognize(&req.task, &req.state.app_id)
            .ok_or_else(|| OperatorFailed {
                reason: format!("task not recognized in {}: {:?}", req.state.app_id, req.task),
            })?;
        self.rules
            .iter()
            .filter(|r| r.family == family.name && r.screen == req.state.screen_id)
            .filter(|r| !r.unless.iter().any(|g| Self::guard_holds(g, req, &values)))
            .find_map(|r| Self::instantiate(&r.action, &req.state, &values))
            .ok_or_else(|| OperatorFailed {
                reason: format!("no rule for {} on {}", family.name, req.state.screen_id),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile_memory::{ConceptSpec, NodeKind, NodeView};
    use crate::ui_model::{Rect, UIElement};
    use alloc::vec;

    fn home() -> UIState {
        let root = UIElement::new("root", "FrameLayout", "", Rect::new(0, 0, 100, 100)).with_children(vec![
            UIElement::new("search_box", "EditText", "", Rect::new(0, 0, 100, 10)),
            UIElement::new("btn_search", "Button", "Search", Rect::new(0, 10, 100, 20)),
        ]);
        UIState::new("shop", "home", root)
    }

    fn operator() -> ScriptedOperator {
        ScriptedOperator {
            families: vec![TaskFamily {
                name: "price".into(),
                app_id: "shop".into(),
                pattern: "query {item} price".into(),
            }],
            rules: vec![
                PolicyRule {
                    family: "price".into(),
                    screen: "home".into(),
                    action: Action::type_text(Selector::new("search_box", "", ""), "{item}"),
                    unless: vec![Guard::FieldIs {
                        resource_id: "search_box".into(),
                        value: "{item}".into(),
                    }],
                },
                PolicyRule {
                    family: "price".into(),
                    screen: "home".into(),
                    action: Action::click(Selector::new("btn_search", "", "")),
                    unless: vec![],
                },
            ],
            max_unaided_depth: None,
        }
    }

    fn req(state: UIState, history: Vec<Action>) -> OperatorRequest {
        OperatorRequest {
            task: "query DJI Action 5 price".into(),
            state,
            history,
            hint: None,
        }
    }

    #[test]
    fn operator_follows_rules_and_guards() {
        let op = operator();
        let a = op.next_action(&req(home(), vec![])).unwrap();
        assert_eq!(a.kind, ActionKind::TypeText);
        assert_eq!(a.params[PARAM_TEXT], "DJI Action 5");
        assert_eq!(a.target.as_ref().unwrap().class_name, "EditText");
        let mut typed = home();
        typed.root.children[0].text = "DJI Action 5".into();
        let a = op.next_action(&req(typed, vec![])).unwrap();
        assert_eq!(a.kind, ActionKind::Click);
    }

    #[test]
    fn capability_knob_and_hint() {
        let op = operator().with_capability(Some(2));
        let history = vec![Action::launch("shop"), Action::back()];
        assert!(op.next_action(&req(home(), history.clone())).is_err());
        let mut r = req(home(), history);
        r.hint = Some(Action::click(Selector::new("btn_search", "Button", "Search")));
        assert_eq!(op.next_action(&r).unwrap().target.unwrap().path, [1]);
    }

    #[test]
    fn unknown_task_fails() {
        let mut r = req(home(), vec![]);
        r.task = "play music".into();
        assert!(operator().next_action(&r).is_err());
    }

    #[test]
    fn judge_token_containment() {
        let req = [
            RequiredElement {
                profile_element: "brand_preference".into(),
                expected_value: "domestic brand".into(),
            },
            RequiredElement {
                profile_element: "color".into(),
                expected_value: "beige".into(),
            },
        ];
        let out = TokenJudge.check(&req, "a pillow from a Domestic brand, please");
        assert!(out[0].matched);
        assert_eq!(out[0].evidence, "domestic brand");
        assert!(!out[1].matched);
        assert!(out[1].evidence.is_empty());
    }

    #[test]
    fn rewriter_extracts_slot() {
        let t = crate::experience_memory::ExperienceTemplate {
            id: "t".into(),
            key_description: "price".into(),
            level: TemplateLevel::High,
            app_id: Some("shop".into()),
            steps: vec![],
            slots: vec![SlotSpec::required("item")],
            subtasks: None,
        };
        let rw = PatternRewriter::new(vec![RewritePattern {
            template: None,
            pattern: "price of {item}".into(),
        }]);
        let out = rw.rewrite(&RewriteRequest {
            task: "price of DJI Action 5".into(),
            template: Some(t),
            profile_context: "Shopping\nbrand: domestic".into(),
        });
        assert_eq!(out.slot_values["item"], "DJI Action 5");
        assert_eq!(out.rewritten_task, "price of DJI Action 5 [preferences: Shopping; brand: domestic]");
    }

    #[test]
    fn rulebook_lookup() {
        let rb = RuleBookUpdater::new(vec![UpdateRule {
            keywords: vec!["hilton".into()],
            changes: ChangeSet {
                concept_insertions: vec![ConceptSpec {
                    id: "c".into(),
                    name: "Hotel".into(),
                }],
                ..ChangeSet::default()
            },
            split: None,
        }]);
        let hit = rb.propose(&UpdateRequest {
            observations: vec!["Stayed at the Hilton".into()],
            nodes: vec![],
            edges: vec![],
        });
        assert_eq!(hit.concept_insertions.len(), 1);
        let miss = rb.propose(&UpdateRequest {
            observations: vec!["walked the dog".into()],
            nodes: vec![],
            edges: vec![],
        });
        assert!(miss.is_empty());
        let none = rb.split(&SplitRequest {
            concept: NodeView {
                id: "x".into(),
                kind: NodeKind::Concept,
                name: "X".into(),
                attributes: BTreeMap::new(),
            },
            entities: vec![],
            threshold: 1,
        });
        assert!(none.subconcepts.is_empty());
    }

    #[test]
    fn versions_increment() {
        assert_eq!(next_version("t"), "t@v2");
        assert_eq!(next_version("t@v2"), "t@v3");
    }
}
