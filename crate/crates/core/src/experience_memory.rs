//! Parameterized workflow templates: validation, storage keyed by an embedded
//! description, slot filling, synthesis from traces and subtask ordering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, VectorIndex};
use crate::oracles::{Oracles, RewriteRequest, SynthesisRequest};
use crate::text;
use crate::ui_model::{Action, ActionKind, Outcome, Selector, TraceRecord, PARAM_APP_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateLevel {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Invariant,
    Variable,
}

/// Concrete action a low-level step expects; params and the selector text
/// may contain `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHint {
    pub kind: ActionKind,
    #[serde(default)]
    pub selector: Option<Selector>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub output_slot: Option<String>,
}

impl ActionHint {
    pub fn from_action(a: &Action) -> Self {
        Self {
            kind: a.kind,
            selector: a.target.clone(),
            params: a.params.clone(),
            output_slot: a.output_slot.clone(),
        }
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        let texts = self
            .params
            .values()
            .chain(self.selector.iter().map(|s| &s.text));
        for t in texts {
            for p in text::placeholders(t) {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn fill(&self, values: &BTreeMap<String, String>) -> ActionHint {
        let mut h = self.clone();
        for v in h.params.values_mut() {
            *v = text::fill_placeholders(v, values);
        }
        if let Some(s) = &mut h.selector {
            s.text = text::fill_placeholders(&s.text, values);
        }
        h
    }

    pub fn is_resolved(&self) -> bool {
        self.placeholders().is_empty()
    }

    pub fn to_action(&self) -> Action {
        Action {
            kind: self.kind,
            target: self.selector.clone(),
            params: self.params.clone(),
            output_slot: self.output_slot.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStep {
    pub index: usize,
    pub kind: StepKind,
    pub instruction: String,
    #[serde(default)]
    pub slot_refs: Vec<String>,
    #[serde(default)]
    pub action_hint: Option<ActionHint>,
}

impl TemplateStep {
    pub fn fill(&self, values: &BTreeMap<String, String>) -> TemplateStep {
        let mut s = self.clone();
        s.instruction = text::fill_placeholders(&s.instruction, values);
        s.action_hint = s.action_hint.map(|h| h.fill(values));
        s
    }

    /// Values of the referenced slots, or `None` if any is missing.
    pub fn params(&self, values: &BTreeMap<String, String>) -> Option<BTreeMap<String, String>> {
        self.slot_refs
            .iter()
            .map(|r| values.get(r).map(|v| (r.clone(), v.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "yes")]
    pub required: bool,
    /// Used when the rewriter supplies no value.
    #[serde(default)]
    pub default: Option<String>,
}

fn yes() -> bool {
    true
}

impl SlotSpec {
    pub fn required(name: &str) -> Self {
        Self {
            name: name.to_string(),
            description: String::new(),
            required: true,
            default: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskNode {
    pub id: String,
    pub app_id: String,
    /// Instruction text for this subtask, with `{slot}` placeholders.
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub template_ref: Option<String>,
    #[serde(default)]
    pub steps: Vec<TemplateStep>,
    #[serde(default)]
    pub outputs: Vec<String>,
    /// consumer slot -> (producer subtask id, producer output slot)
    #[serde(default)]
    pub bindings: BTreeMap<String, (String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskDag {
    pub nodes: Vec<SubtaskNode>,
    #[serde(default)]
    pub ordering_edges: Vec<(String, String)>,
}

impl SubtaskDag {
    pub fn node(&self, id: &str) -> Option<&SubtaskNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Every dependency edge: bindings first, then explicit ordering.
    pub fn edges(&self) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for n in &self.nodes {
            for (producer, _) in n.bindings.values() {
                out.insert((producer.clone(), n.id.clone()));
            }
        }
        out.extend(self.ordering_edges.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceTemplate {
    pub id: String,
    pub key_description: String,
    pub level: TemplateLevel,
    #[serde(default)]
    pub app_id: Option<String>,
    #[serde(default)]
    pub steps: Vec<TemplateStep>,
    #[serde(default)]
    pub slots: Vec<SlotSpec>,
    #[serde(default)]
    pub subtasks: Option<SubtaskDag>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {0:?} already stored")]
    DuplicateId(String),
    #[error("template {id:?} invalid: {reason}")]
    Invalid { id: String, reason: String },
    #[error("required slot {0:?} has no value and no producer")]
    MissingRequiredSlot(String),
    #[error("subtask graph has a cycle through {0:?}")]
    CycleDetected(String),
    #[error("oracle template rejected: {0}")]
    OracleTemplateInvalid(String),
    #[error("only successful traces can be synthesized")]
    NotSuccessful,
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

impl ExperienceTemplate {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Explicit app, else the first launch hint's app.
    pub fn primary_app(&self) -> Option<String> {
        self.app_id.clone().or_else(|| {
            self.steps
                .iter()
                .filter_map(|s| s.action_hint.as_ref())
                .find(|h| h.kind == ActionKind::Launch)
                .and_then(|h| h.params.get(PARAM_APP_ID).cloned())
        })
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let bad = |reason: String| TemplateError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.slots {
            if s.name.is_empty() || !names.insert(s.name.as_str()) {
                return Err(bad(format!("slot name {:?} empty or repeated", s.name)));
            }
        }
        let has_subtasks = self.subtasks.as_ref().is_some_and(|d| !d.nodes.is_empty());
        if self.steps.is_empty() && !has_subtasks {
            return Err(bad("no steps and no subtasks".into()));
        }
        self.validate_steps(&self.steps, &names, &BTreeSet::new())
            .map_err(&bad)?;
        if let Some(dag) = &self.subtasks {
            let mut ids = BTreeSet::new();
            for n in &dag.nodes {
                if n.id.is_empty() || !ids.insert(n.id.as_str()) {
                    return Err(bad(format!("subtask id {:?} empty or repeated", n.id)));
                }
            }
            for n in &dag.nodes {
                for (slot, (producer, output)) in &n.bindings {
                    let p = dag
                        .node(producer)
                        .ok_or_else(|| bad(format!("{}.{slot} bound to unknown {producer:?}", n.id)))?;
                    if !p.outputs.contains(output) {
                        return Err(bad(format!(
                            "{}.{slot} bound to undeclared output {producer}.{output}",
                            n.id
                        )));
                    }
                }
                let bound: BTreeSet<&str> = n.bindings.keys().map(String::as_str).collect();
                self.validate_steps(&n.steps, &names, &bound).map_err(&bad)?;
            }
            for (a, b) in &dag.ordering_edges {
                if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                    return Err(bad(format!("ordering edge {a:?} -> {b:?} names unknown subtask")));
                }
            }
            topo_order(dag)?;
        }
        Ok(())
    }

    fn validate_steps(
        &self,
        steps: &[TemplateStep],
        slots: &BTreeSet<&str>,
        bound: &BTreeSet<&str>,
    ) -> Result<(), String> {
        for (i, s) in steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step {i} carries index {}", s.index));
            }
            for r in &s.slot_refs {
                if !slots.contains(r.as_str()) && !bound.contains(r.as_str()) {
                    return Err(format!("step {i} references undeclared slot {r:?}"));
                }
            }
            match s.kind {
                StepKind::Invariant if !s.slot_refs.is_empty() => {
                    return Err(format!("invariant step {i} references slots"));
                }
                StepKind::Variable if s.slot_refs.is_empty() => {
                    return Err(format!("variable step {i} references no slot"));
                }
                _ => {}
            }
            match (self.level, &s.action_hint) {
                (TemplateLevel::Low, None) => {
                    return Err(format!("low-level step {i} lacks an action hint"));
                }
                (TemplateLevel::High, Some(_)) => {
                    return Err(format!("high-level step {i} carries an action hint"));
                }
                (TemplateLevel::Low, Some(h)) => {
                    for p in h.placeholders() {
                        if !s.slot_refs.contains(&p) {
                            return Err(format!("step {i} hint uses {p:?} outside its slot refs"));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Kahn's algorithm; among ready subtasks the smallest id goes first.
pub fn topo_order(dag: &SubtaskDag) -> Result<Vec<String>, TemplateError> {
    let mut indegree: BTreeMap<&str, usize> = dag.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    let edges = dag.edges();
    let mut out_edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &edges {
        if let Some(d) = indegree.get_mut(b.as_str()) {
            *d += 1;
        }
        out_edges.entry(a.as_str()).or_default().push(b.as_str());
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for next in out_edges.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(next);
            }
        }
    }
    if order.len() < indegree.len() {
        let stuck = indegree
            .iter()
            .find(|(id, _)| !order.iter().any(|o| o == *id))
            .map(|(id, _)| id.to_string())
            .unwrap_or_default();
        return Err(TemplateError::CycleDetected(stuck));
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStore {
    templates: BTreeMap<String, ExperienceTemplate>,
    index: VectorIndex,
}

impl TemplateStore {
    pub fn new(dim: usize) -> Self {
        Self {
            templates: BTreeMap::new(),
            index: VectorIndex::new(dim),
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ExperienceTemplate> {
        self.templates.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExperienceTemplate> {
        self.templates.values()
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn store(
        &mut self,
        t: ExperienceTemplate,
        embedder: &dyn Embedder,
    ) -> Result<String, TemplateError> {
        t.validate()?;
        if self.templates.contains_key(&t.id) {
            return Err(TemplateError::DuplicateId(t.id));
        }
        let id = t.id.clone();
        self.index
            .insert(id.clone(), embedder.embed(&t.key_description))
            .map_err(|e| TemplateError::Invalid {
                id: id.clone(),
                reason: e.to_string(),
            })?;
        self.templates.insert(id.clone(), t);
        Ok(id)
    }

    /// Best match by description cosine, regardless of level.
    pub fn retrieve(
        &self,
        task_text: &str,
        embedder: &dyn Embedder,
        min_similarity: f64,
    ) -> Option<(&ExperienceTemplate, f64)> {
        let (id, score) = self.index.top_k(&embedder.embed(task_text), 1).pop()?;
        (score + 1e-9 >= min_similarity).then(|| (&self.templates[&id], score))
    }

    /// Up to `k` templates above `min_similarity`, best first.
    pub fn similar(
        &self,
        task_text: &str,
        embedder: &dyn Embedder,
        k: usize,
        min_similarity: f64,
    ) -> Vec<&ExperienceTemplate> {
        self.index
            .top_k(&embedder.embed(task_text), k)
            .into_iter()
            .filter(|(_, s)| *s + 1e-9 >= min_similarity)
            .map(|(id, _)| &self.templates[&id])
            .collect()
    }
}

pub const DEFAULT_MIN_SIMILARITY: f64 = 0.6;

/// One unit of work in a plan: a single app driven by a step list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSubtask {
    pub id: String,
    pub app_id: Option<String>,
    pub template_id: Option<String>,
    pub task_text: String,
    pub steps: Vec<TemplateStep>,
    pub slot_values: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub bindings: BTreeMap<String, (String, String)>,
}

impl PlannedSubtask {
    /// Fills a producer-bound slot with the value the producer emitted.
    pub fn bind(&mut self, slot: &str, value: &str) {
        self.slot_values.insert(slot.to_string(), value.to_string());
        let mut one = BTreeMap::new();
        one.insert(slot.to_string(), value.to_string());
        self.task_text = text::fill_placeholders(&self.task_text, &one);
        for s in &mut self.steps {
            *s = s.fill(&one);
        }
    }

    pub fn unresolved(&self) -> Vec<&str> {
        self.bindings
            .keys()
            .filter(|k| !self.slot_values.contains_key(*k))
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutablePlan {
    pub template_id: Option<String>,
    pub level: Option<TemplateLevel>,
    pub task_text: String,
    pub rewritten_task: String,
    pub profile_context: String,
    pub slot_values: BTreeMap<String, String>,
    pub subtasks: Vec<PlannedSubtask>,
    pub ordering_edges: Vec<(String, String)>,
    /// consumer slot (qualified `subtask.slot`) -> (producer, output)
    pub unresolved: BTreeMap<String, (String, String)>,
}

impl ExecutablePlan {
    /// Plan with no template: the operator drives everything.
    pub fn autonomous(
        task_text: &str,
        rewritten_task: &str,
        profile_context: &str,
        app_id: Option<String>,
    ) -> Self {
        Self {
            template_id: None,
            level: None,
            task_text: task_text.to_string(),
            rewritten_task: rewritten_task.to_string(),
            profile_context: profile_context.to_string(),
            slot_values: BTreeMap::new(),
            subtasks: alloc::vec![PlannedSubtask {
                id: "main".into(),
                app_id,
                template_id: None,
                task_text: task_text.to_string(),
                steps: Vec::new(),
                slot_values: BTreeMap::new(),
                outputs: Vec::new(),
                bindings: BTreeMap::new(),
            }],
            ordering_edges: Vec::new(),
            unresolved: BTreeMap::new(),
        }
    }

    pub fn is_autonomous(&self) -> bool {
        self.template_id.is_none()
    }

    pub fn subtask(&self, id: &str) -> Option<&PlannedSubtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    pub fn dag(&self) -> SubtaskDag {
        SubtaskDag {
            nodes: self
                .subtasks
                .iter()
                .map(|s| SubtaskNode {
                    id: s.id.clone(),
                    app_id: s.app_id.clone().unwrap_or_default(),
                    task: s.task_text.clone(),
                    template_ref: s.template_id.clone(),
                    steps: s.steps.clone(),
                    outputs: s.outputs.clone(),
                    bindings: s.bindings.clone(),
                })
                .collect(),
            ordering_edges: self.ordering_edges.clone(),
        }
    }
}

/// Asks the rewriter for slot values (one call) and resolves every step.
pub fn fill_parameters(
    template: &ExperienceTemplate,
    task_text: &str,
    profile_context: &str,
    store: &TemplateStore,
    oracles: &Oracles,
) -> Result<ExecutablePlan, TemplateError> {
    let response = oracles.rewrite(&RewriteRequest {
        task: task_text.to_string(),
        template: Some(template.clone()),
        profile_context: profile_context.to_string(),
    });
    build_plan(template, task_text, profile_context, store, response.rewritten_task, response.slot_values)
}

pub(crate) fn build_plan(
    template: &ExperienceTemplate,
    task_text: &str,
    profile_context: &str,
    store: &TemplateStore,
    rewritten_task: String,
    mut values: BTreeMap<String, String>,
) -> Result<ExecutablePlan, TemplateError> {
    for s in &template.slots {
        if !values.contains_key(&s.name) {
            if let Some(d) = &s.default {
                values.insert(s.name.clone(), d.clone());
            }
        }
    }
    let bound: BTreeSet<&str> = template
        .subtasks
        .iter()
        .flat_map(|d| d.nodes.iter())
        .flat_map(|n| n.bindings.keys().map(String::as_str))
        .collect();
    for s in &template.slots {
        if s.required && !values.contains_key(&s.name) && !bound.contains(s.name.as_str()) {
            return Err(TemplateError::MissingRequiredSlot(s.name.clone()));
        }
    }

    let mut subtasks = Vec::new();
    let mut unresolved = BTreeMap::new();
    let mut ordering_edges = Vec::new();
    match &template.subtasks {
        Some(dag) if !dag.nodes.is_empty() => {
            for id in topo_order(dag)? {
                let node = dag.node(&id).expect("ordered id");
                let (steps, template_id) = match &node.template_ref {
                    Some(r) => {
                        let t = store
                            .get(r)
                            .ok_or_else(|| TemplateError::UnknownTemplate(r.clone()))?;
                        (t.steps.clone(), Some(r.clone()))
                    }
                    None => (node.steps.clone(), Some(template.id.clone())),
                };
                for (slot, src) in &node.bindings {
                    unresolved.insert(format!("{}.{slot}", node.id), src.clone());
                }
                let local: BTreeMap<String, String> = values
                    .iter()
                    .filter(|(k, _)| !node.bindings.contains_key(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                subtasks.push(PlannedSubtask {
                    id: node.id.clone(),
                    app_id: Some(node.app_id.clone()),
                    template_id,
                    task_text: text::fill_placeholders(&node.task, &local),
                    steps: steps.iter().map(|s| s.fill(&local)).collect(),
                    slot_values: local,
                    outputs: node.outputs.clone(),
                    bindings: node.bindings.clone(),
                });
            }
            ordering_edges = dag.ordering_edges.clone();
        }
        _ => subtasks.push(PlannedSubtask {
            id: "main".into(),
            app_id: template.primary_app(),
            template_id: Some(template.id.clone()),
            task_text: task_text.to_string(),
            steps: template.steps.iter().map(|s| s.fill(&values)).collect(),
            slot_values: values.clone(),
            outputs: Vec::new(),
            bindings: BTreeMap::new(),
        }),
    }
    Ok(ExecutablePlan {
        template_id: Some(template.id.clone()),
        level: Some(template.level),
        task_text: task_text.to_string(),
        rewritten_task,
        profile_context: profile_context.to_string(),
        slot_values: values,
        subtasks,
        ordering_edges,
        unresolved,
    })
}

/// One generator call on a successful trace; the result is validated and
/// stored, or rejected without touching the store.
pub fn synthesize_template(
    trace: &TraceRecord,
    similar: Vec<ExperienceTemplate>,
    references: Vec<TraceRecord>,
    store: &mut TemplateStore,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<ExperienceTemplate, TemplateError> {
    if trace.outcome != Outcome::Success {
        return Err(TemplateError::NotSuccessful);
    }
    let t = oracles.synthesize(&SynthesisRequest {
        trace: trace.clone(),
        similar,
        references,
    });
    t.validate()
        .map_err(|e| TemplateError::OracleTemplateInvalid(e.to_string()))?;
    store.store(t.clone(), embedder)?;
    Ok(t)
}
