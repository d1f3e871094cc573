//! Record and replay: every executed step is buffered in a session, merged
//! into the action caches on success, and replayed with verification.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action_memory::{
    acttree_lookup, verify_action, ActChain, ActTree, ActionMemory, ChainUpdate, MergeError, MergeStats, NodeId,
    Verdict, ROOT,
};
use crate::embedding::Embedder;
use crate::experience_memory::{ExperienceTemplate, PlannedSubtask, TemplateStep};
use crate::oracles::{OperatorFailed, OperatorRequest, Oracles};
use crate::sim_env::{EnvError, GuiEnvironment, LAUNCHER};
use crate::ui_model::{
    fuzzy_match, Action, ActionKind, MatchConfig, Outcome, StepOrigin, TraceRecord, UIState, PARAM_SOURCE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedStep {
    pub state: UIState,
    pub action: Action,
    pub origin: StepOrigin,
    /// Template step this action carried out, if any.
    #[serde(default)]
    pub template_step: Option<usize>,
    /// Slot values the template step referenced.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum RrError {
    #[error("session {0:?} is closed")]
    SessionClosed(String),
    #[error(transparent)]
    OperatorFailed(#[from] OperatorFailed),
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(usize),
    #[error("environment rejected {action}: {reason}")]
    Environment { action: String, reason: String },
    #[error("subtask has no app")]
    NoApp,
}

/// Buffer of one execution. Nothing reaches the caches until finalize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingSession {
    pub id: String,
    pub task_text: String,
    pub template_id: Option<String>,
    pub app_stack: Vec<String>,
    pub steps: Vec<RecordedStep>,
    pub started_ms: u64,
    closed: bool,
}

/// A finalized session; the on-disk trace format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub task_text: String,
    #[serde(default)]
    pub template_id: Option<String>,
    pub app_id: String,
    pub outcome: Outcome,
    pub started_ms: u64,
    pub steps: Vec<RecordedStep>,
}

impl SessionRecord {
    pub fn trace(&self) -> TraceRecord {
        TraceRecord {
            task_text: self.task_text.clone(),
            steps: self.steps.iter().map(|s| (s.state.clone(), s.action.clone())).collect(),
            outcome: self.outcome,
            annotations: self.steps.iter().map(|s| s.origin).collect(),
        }
    }

    pub fn virtual_ms(&self) -> u64 {
        self.steps.iter().map(|s| s.duration_ms).sum()
    }
}

impl RecordingSession {
    pub fn new(id: &str, task_text: &str, template_id: Option<String>, app_id: &str, started_ms: u64) -> Self {
        Self {
            id: id.to_string(),
            task_text: task_text.to_string(),
            template_id,
            app_stack: alloc::vec![app_id.to_string()],
            steps: Vec::new(),
            started_ms,
            closed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn record_step(&mut self, step: RecordedStep) -> Result<(), RrError> {
        if self.closed {
            return Err(RrError::SessionClosed(self.id.clone()));
        }
        if step.action.kind == ActionKind::Launch {
            if let Some(app) = step.action.param(crate::ui_model::PARAM_APP_ID) {
                if self.app_stack.last().map(String::as_str) != Some(app) {
                    self.app_stack.push(app.to_string());
                }
            }
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn finalize(&mut self, outcome: Outcome) -> Result<SessionRecord, RrError> {
        if self.closed {
            return Err(RrError::SessionClosed(self.id.clone()));
        }
        self.closed = true;
        Ok(SessionRecord {
            id: self.id.clone(),
            task_text: self.task_text.clone(),
            template_id: self.template_id.clone(),
            app_id: self.app_stack.first().cloned().unwrap_or_default(),
            outcome,
            started_ms: self.started_ms,
            steps: self.steps.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    pub tree: Option<Result<MergeStats, MergeError>>,
    pub chain: Vec<(usize, ChainUpdate)>,
    /// Successful run with no template: a candidate for synthesis.
    pub synthesis_candidate: bool,
}

impl MergeReport {
    pub fn flagged(&self) -> usize {
        self.chain.iter().filter(|(_, u)| *u == ChainUpdate::Flagged).count()
    }
}

/// Steps eligible for merging: everything before the first user correction.
fn agent_prefix(steps: &[RecordedStep]) -> &[RecordedStep] {
    let cut = steps
        .iter()
        .position(|s| s.origin == StepOrigin::UserCorrection)
        .unwrap_or(steps.len());
    &steps[..cut]
}

/// Folds a finished session into the caches. Failed sessions change
/// nothing; they are kept only as session files.
pub fn finalize_record(
    record: &SessionRecord,
    memory: &mut ActionMemory,
    template: Option<&ExperienceTemplate>,
    embedder: &dyn Embedder,
) -> MergeReport {
    let mut report = MergeReport {
        tree: None,
        chain: Vec::new(),
        synthesis_candidate: false,
    };
    if record.outcome != Outcome::Success {
        return report;
    }
    let steps = agent_prefix(&record.steps);
    if let Some(first) = steps.first() {
        let pairs: Vec<(UIState, Action)> = steps.iter().map(|s| (s.state.clone(), s.action.clone())).collect();
        let tree = memory
            .trees
            .entry(record.app_id.clone())
            .or_insert_with(|| ActTree::new(&record.app_id, &first.state));
        report.tree = Some(tree.merge(&pairs, &record.task_text, embedder));
    }
    match template {
        Some(t) if record.template_id.as_deref() == Some(t.id.as_str()) => {
            let chain = memory
                .chains
                .entry(t.id.clone())
                .or_insert_with(|| ActChain::for_template(t));
            for s in steps {
                if let Some(i) = s.template_step {
                    if let Some(u) = chain.record(i, &s.params, &s.action) {
                        report.chain.push((i, u));
                    }
                }
            }
        }
        _ => report.synthesis_candidate = record.template_id.is_none(),
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaleSource {
    Tree { app_id: String, node: NodeId, action: Action },
    Chain { template_id: String, step: usize, params: BTreeMap<String, String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleEvent {
    pub step_no: usize,
    pub action: Action,
    pub source: StaleSource,
}

/// Discards the cache entries behind stale events; returns how many went.
pub fn apply_stale(memory: &mut ActionMemory, events: &[StaleEvent]) -> usize {
    let mut removed = 0;
    for e in events {
        match &e.source {
            StaleSource::Tree { app_id, node, action } => {
                if let Some(tree) = memory.trees.get_mut(app_id) {
                    let idx = tree
                        .node(*node)
                        .and_then(|n| n.edges.iter().position(|x| x.action.same_as(action)));
                    if let Some(i) = idx {
                        tree.remove_edge(*node, i);
                        removed += 1;
                    }
                }
            }
            StaleSource::Chain { template_id, step, params } => {
                if memory
                    .chains
                    .get_mut(template_id)
                    .is_some_and(|c| c.remove_variant(*step, params))
                {
                    removed += 1;
                }
            }
        }
    }
    removed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HookDecision {
    Proceed,
    /// The user performs the planned action themselves.
    PreEmpted,
    /// Stop before executing the planned action.
    Interrupt,
}

/// Consulted before every step with the action about to run.
pub trait StepHook {
    fn before_step(&mut self, state: &UIState, planned: &Action, history: &[RecordedStep]) -> HookDecision;
}

pub struct NoHook;

impl StepHook for NoHook {
    fn before_step(&mut self, _: &UIState, _: &Action, _: &[RecordedStep]) -> HookDecision {
        HookDecision::Proceed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interruption {
    pub planned: Action,
    pub origin: StepOrigin,
    pub template_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub step_limit: usize,
    /// Virtual time charged per operator call.
    pub operator_latency_ms: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            step_limit: 50,
            operator_latency_ms: 0,
        }
    }
}

/// Read-only dependencies of a replay.
#[derive(Clone, Copy)]
pub struct Runtime<'a> {
    pub memory: &'a ActionMemory,
    pub oracles: &'a Oracles,
    pub embedder: &'a dyn Embedder,
    pub config: &'a ReplayConfig,
}

/// Where a suspended run picks up again.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeState {
    pub history: Vec<RecordedStep>,
    pub template_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub subtask_id: String,
    pub record: SessionRecord,
    pub stale: Vec<StaleEvent>,
    pub operator_calls: usize,
    pub outputs: BTreeMap<String, String>,
    pub error: Option<RrError>,
    pub interruption: Option<Interruption>,
    /// Template cursor when the run stopped.
    pub template_step: usize,
}

impl ReplayReport {
    pub fn trace(&self) -> TraceRecord {
        self.record.trace()
    }

    pub fn outcome(&self) -> Outcome {
        self.record.outcome
    }

    pub fn virtual_ms(&self) -> u64 {
        self.record.virtual_ms()
    }

    pub fn reuse_rate(&self) -> f64 {
        crate::action_memory::reuse_rate(&self.trace())
    }
}

/// Whether a template step can be carried out on `state` as it stands.
pub fn step_applies(step: &TemplateStep, state: &UIState, cfg: &MatchConfig) -> bool {
    let Some(h) = &step.action_hint else {
        return false;
    };
    match h.kind {
        ActionKind::Launch => state.screen_id == LAUNCHER,
        ActionKind::EmitOutput => h
            .params
            .get(PARAM_SOURCE)
            .is_some_and(|src| state.find_resource(src).is_some()),
        _ => h.selector.as_ref().is_none_or(|s| fuzzy_match(s, state, cfg).is_some()),
    }
}

fn env_error(action: &Action, e: &EnvError) -> RrError {
    RrError::Environment {
        action: action.describe(),
        reason: e.to_string(),
    }
}

/// Runs one subtask. Template-bound subtasks consult the ActChain, then
/// the operator with the step's hint; unbound ones reuse an ActTree prefix
/// and hand over to the operator at the first miss. Cached actions are
/// verified against the live screen before they run.
pub fn replay(
    subtask: &PlannedSubtask,
    rt: Runtime<'_>,
    env: &mut dyn GuiEnvironment,
    hook: &mut dyn StepHook,
    resume: Option<ResumeState>,
) -> ReplayReport {
    let app_id = subtask.app_id.clone().unwrap_or_else(|| env.app_id().to_string());
    let mut session = RecordingSession::new(&subtask.id, &subtask.task_text, subtask.template_id.clone(), &app_id, 0);
    let resumed = resume.is_some();
    let resume = resume.unwrap_or_default();
    for s in resume.history {
        session.record_step(s).expect("fresh session");
    }
    let bound = !subtask.steps.is_empty();
    let chain = subtask
        .template_id
        .as_ref()
        .filter(|_| bound)
        .and_then(|id| rt.memory.chains.get(id));
    let tree = rt.memory.trees.get(&app_id).filter(|_| !bound && !resumed);
    let task_emb = rt.embedder.embed(&subtask.task_text);
    let matching = rt.memory.config.matching;

    let mut t = resume.template_step;
    let mut node: NodeId = ROOT;
    let mut tree_live = tree.is_some();
    let mut chain_live = chain.is_some();
    let mut stale = Vec::new();
    let mut operator_calls = 0;
    let mut outputs = BTreeMap::new();
    let mut error = None;
    let mut interruption = None;
    let mut done = false;

    while !done {
        if session.steps.len() >= rt.config.step_limit {
            error = Some(RrError::StepLimitExceeded(rt.config.step_limit));
            break;
        }
        let state = env.observe();
        let step_no = session.steps.len();
        let template_step = subtask.steps.get(t);
        let params = template_step
            .and_then(|s| s.params(&subtask.slot_values))
            .unwrap_or_default();

        // Cached candidate, verified.
        let mut planned: Option<(Action, StepOrigin, Option<StaleSource>)> = None;
        if let (Some(c), Some(_), true) = (chain, template_step, chain_live) {
            if let Some(cached) = c.lookup(t, &params) {
                let source = StaleSource::Chain {
                    template_id: c.template_id.clone(),
                    step: t,
                    params: c.entries[t].variants.iter().find(|v| v.action == *cached).map(|v| v.params.clone()).unwrap_or_default(),
                };
                match verify_action(cached, &state, &matching) {
                    Ok(a) => planned = Some((a, StepOrigin::ActchainReuse, Some(source))),
                    Err(_) => {
                        stale.push(StaleEvent { step_no, action: cached.clone(), source });
                        chain_live = false;
                    }
                }
            }
        }
        if let (Some(tr), true) = (tree, tree_live) {
            let d = acttree_lookup(tr, node, state.fingerprint, &task_emb, step_no, Some(&subtask.task_text), &rt.memory.config);
            match d.verdict {
                Verdict::Reuse { action, .. } => {
                    let source = StaleSource::Tree {
                        app_id: app_id.clone(),
                        node,
                        action: action.clone(),
                    };
                    match verify_action(&action, &state, &matching) {
                        Ok(a) => planned = Some((a, StepOrigin::ActtreeReuse, Some(source))),
                        Err(_) => {
                            stale.push(StaleEvent { step_no, action, source });
                            tree_live = false;
                        }
                    }
                }
                Verdict::Miss => tree_live = false,
            }
        }
        let (action, origin, source) = match planned {
            Some(p) => p,
            None => {
                let hint = template_step.and_then(|s| s.action_hint.as_ref()).map(|h| h.to_action());
                operator_calls += 1;
                let history: Vec<Action> = session.steps.iter().map(|s| s.action.clone()).collect();
                match rt.oracles.next_action(&OperatorRequest {
                    task: subtask.task_text.clone(),
                    state: state.clone(),
                    history,
                    hint,
                }) {
                    Ok(a) => (a, StepOrigin::Oracle, None),
                    Err(e) => {
                        error = Some(e.into());
                        break;
                    }
                }
            }
        };

        let origin = match hook.before_step(&state, &action, &session.steps) {
            HookDecision::Proceed => origin,
            HookDecision::PreEmpted => StepOrigin::UserCorrection,
            HookDecision::Interrupt => {
                interruption = Some(Interruption {
                    planned: action,
                    origin,
                    template_step: template_step.map(|_| t),
                });
                break;
            }
        };

        let result = match env.step(&action) {
            Ok(r) => r,
            Err(e) => {
                if let (true, Some(source)) = (origin.is_reuse(), source) {
                    // Matched but not actionable: treat as stale and retry.
                    stale.push(StaleEvent { step_no, action, source });
                    tree_live = false;
                    chain_live = false;
                    continue;
                }
                error = Some(env_error(&action, &e));
                break;
            }
        };
        let latency = if origin == StepOrigin::Oracle { rt.config.operator_latency_ms } else { 0 };
        done = action.kind == ActionKind::Done;
        for (k, v) in &result.outputs {
            outputs.insert(k.clone(), v.clone());
        }
        if origin == StepOrigin::ActtreeReuse {
            let tr = tree.expect("tree reuse");
            let child = tr.node(node).and_then(|n| n.edges.iter().find(|e| e.action.same_as(&action)).map(|e| e.child));
            match child.and_then(|c| tr.node(c).map(|n| (c, n.fingerprint))) {
                Some((c, fp)) if fp == result.state.fingerprint => node = c,
                _ => {
                    // The action still works but leads somewhere new: the
                    // cached subtree below it is out of date.
                    if let Some(source) = source {
                        stale.push(StaleEvent { step_no, action: action.clone(), source });
                    }
                    tree_live = false;
                }
            }
        } else {
            tree_live = false;
        }
        session
            .record_step(RecordedStep {
                state,
                action,
                origin,
                template_step: template_step.map(|_| t),
                params,
                duration_ms: result.duration_ms + latency,
            })
            .expect("open session");
        if template_step.is_some() {
            t += 1;
        }
    }

    let outcome = if interruption.is_some() {
        Outcome::Interrupted
    } else if done && error.is_none() {
        Outcome::Success
    } else {
        Outcome::Failure
    };
    ReplayReport {
        subtask_id: subtask.id.clone(),
        record: session.finalize(outcome).expect("finalized once"),
        stale,
        operator_calls,
        outputs,
        error,
        interruption,
        template_step: t,
    }
}

/// Replay, then drop stale entries and merge the new trace.
pub fn run_and_learn(
    subtask: &PlannedSubtask,
    memory: &mut ActionMemory,
    template: Option<&ExperienceTemplate>,
    oracles: &Oracles,
    embedder: &dyn Embedder,
    config: &ReplayConfig,
    env: &mut dyn GuiEnvironment,
) -> (ReplayReport, MergeReport) {
    env.reset();
    let report = replay(
        subtask,
        Runtime {
            memory,
            oracles,
            embedder,
            config,
        },
        env,
        &mut NoHook,
        None,
    );
    apply_stale(memory, &report.stale);
    let merge = finalize_record(&report.record, memory, template, embedder);
    (report, merge)
}

/// A plain task with no template, driven by the ActTree and the operator.
pub fn unbound_subtask(id: &str, app_id: &str, task_text: &str) -> PlannedSubtask {
    PlannedSubtask {
        id: id.to_string(),
        app_id: Some(app_id.to_string()),
        template_id: None,
        task_text: task_text.to_string(),
        steps: Vec::new(),
        slot_values: BTreeMap::new(),
        outputs: Vec::new(),
        bindings: BTreeMap::new(),
    }
}

/// A single-app subtask bound to a low-level template.
pub fn bound_subtask(
    id: &str,
    template: &ExperienceTemplate,
    task_text: &str,
    values: &BTreeMap<String, String>,
) -> PlannedSubtask {
    PlannedSubtask {
        id: id.to_string(),
        app_id: template.primary_app(),
        template_id: Some(template.id.clone()),
        task_text: task_text.to_string(),
        steps: template.steps.iter().map(|s| s.fill(values)).collect(),
        slot_values: values.clone(),
        outputs: Vec::new(),
        bindings: BTreeMap::new(),
    }
}

/// Re-executes a recorded session step by step and reports every step
/// whose observed fingerprint differs from the recording.
pub fn diff_session(record: &SessionRecord, env: &mut dyn GuiEnvironment) -> Vec<SessionDiff> {
    env.reset();
    let mut diffs = Vec::new();
    for (i, s) in record.steps.iter().enumerate() {
        let live = env.observe();
        if live.fingerprint != s.state.fingerprint {
            diffs.push(SessionDiff {
                step_no: i,
                expected: s.state.fingerprint.to_string(),
                found: live.fingerprint.to_string(),
                note: format!("screen {} vs {}", s.state.screen_id, live.screen_id),
            });
        }
        if let Err(e) = env.step(&s.action) {
            diffs.push(SessionDiff {
                step_no: i,
                expected: s.action.describe(),
                found: String::from("error"),
                note: e.to_string(),
            });
            break;
        }
    }
    diffs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDiff {
    pub step_no: usize,
    pub expected: String,
    pub found: String,
    pub note: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::oracles::Role;
    use crate::sim_env::catalog::{remove_search_button, Catalog, TemplateStyle};
    use crate::sim_env::SimApp;
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;

    struct Fixture {
        catalog: Catalog,
        oracles: Oracles,
        emb: HashEmbedder,
        cfg: ReplayConfig,
        memory: ActionMemory,
    }

    fn fixture() -> Fixture {
        let catalog = Catalog::standard();
        let oracles = Oracles::default().with_operator(Arc::new(catalog.operator()));
        Fixture {
            catalog,
            oracles,
            emb: HashEmbedder::default(),
            cfg: ReplayConfig::default(),
            memory: ActionMemory::default(),
        }
    }

    fn values(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    impl Fixture {
        fn env(&self, app: &str) -> SimApp {
            SimApp::new(self.catalog.app(app).unwrap().clone())
        }

        fn run(&mut self, st: &PlannedSubtask, t: Option<&ExperienceTemplate>, env: &mut SimApp) -> (ReplayReport, MergeReport) {
            let oracles = self.oracles.clone().with_fresh_log();
            let out = run_and_learn(st, &mut self.memory, t, &oracles, &self.emb, &self.cfg, env);
            assert_eq!(oracles.log.count(Role::Operator), out.0.operator_calls);
            out
        }
    }

    #[test]
    fn session_lifecycle() {
        let mut s = RecordingSession::new("s1", "t", None, "shop_a", 0);
        let st = SimApp::new(crate::sim_env::catalog::shop_app("shop_a")).observe();
        for (i, origin) in [StepOrigin::Oracle, StepOrigin::ActtreeReuse, StepOrigin::UserCorrection].into_iter().enumerate() {
            s.record_step(RecordedStep {
                state: st.clone(),
                action: Action::back(),
                origin,
                template_step: Some(i),
                params: BTreeMap::new(),
                duration_ms: 1,
            })
            .unwrap();
        }
        let rec = s.finalize(Outcome::Failure).unwrap();
        assert_eq!(rec.trace().annotations, [StepOrigin::Oracle, StepOrigin::ActtreeReuse, StepOrigin::UserCorrection]);
        assert!(matches!(s.finalize(Outcome::Failure), Err(RrError::SessionClosed(_))));
        let step = rec.steps[0].clone();
        assert!(matches!(s.record_step(step), Err(RrError::SessionClosed(_))));
    }

    #[test]
    fn warm_cache_second_run_is_pure_reuse() {
        let mut f = fixture();
        let st = unbound_subtask("t", "shop_a", "query the price of DJI Action 5");
        let mut env = f.env("shop_a");
        let (r1, m1) = f.run(&st, None, &mut env);
        assert_eq!(r1.outcome(), Outcome::Success);
        assert_eq!(r1.reuse_rate(), 0.0);
        assert!(m1.synthesis_candidate);
        let (r2, _) = f.run(&st, None, &mut env);
        assert_eq!(r2.outcome(), Outcome::Success);
        assert_eq!(r2.reuse_rate(), 1.0);
        assert_eq!(r2.operator_calls, 0);
        assert_eq!(r1.trace().fingerprints(), r2.trace().fingerprints());
        assert_eq!(r1.outputs, r2.outputs);
    }

    #[test]
    fn tree_reuses_shared_prefix_only() {
        let mut f = fixture();
        let mut env = f.env("shop_a");
        f.run(&unbound_subtask("a", "shop_a", "query the price of DJI Action 5"), None, &mut env);
        let (r, _) = f.run(&unbound_subtask("b", "shop_a", "query the price of Canon R50"), None, &mut env);
        assert_eq!(r.outcome(), Outcome::Success);
        // Launch is shared; typing a different item is not.
        let origins = r.trace().annotations;
        assert_eq!(origins[0], StepOrigin::ActtreeReuse);
        assert!(origins[1..].iter().all(|o| *o == StepOrigin::Oracle));
        let tree = &f.memory.trees["shop_a"];
        assert_eq!(tree.nodes[&ROOT].edges.len(), 1);
        assert_eq!(tree.nodes[&ROOT].edges[0].task_list.len(), 2);
        assert_eq!(tree.paths().len(), 2);
    }

    #[test]
    fn template_prefix_suffix_reuse() {
        let mut f = fixture();
        let tpl = f.catalog.flow("shop_a.price").unwrap().template(TemplateStyle::HumanCrafted);
        let mut env = f.env("shop_a");
        let a = bound_subtask("a", &tpl, "query the price of DJI Action 5", &values(&[("item", "DJI Action 5")]));
        let (r1, m1) = f.run(&a, Some(&tpl), &mut env);
        assert_eq!(r1.outcome(), Outcome::Success);
        assert!(!m1.synthesis_candidate);
        assert!(m1.chain.iter().all(|(_, u)| *u == ChainUpdate::Inserted));
        let b = bound_subtask("b", &tpl, "query the price of Canon R50", &values(&[("item", "Canon R50")]));
        let (r2, _) = f.run(&b, Some(&tpl), &mut env);
        assert_eq!(r2.outcome(), Outcome::Success);
        assert_eq!(r2.operator_calls, 1);
        let origins = r2.trace().annotations;
        let oracle_at: Vec<usize> = origins.iter().enumerate().filter(|(_, o)| **o == StepOrigin::Oracle).map(|(i, _)| i).collect();
        let variable: Vec<usize> = tpl.steps.iter().filter(|s| !s.slot_refs.is_empty()).map(|s| s.index).collect();
        assert_eq!(oracle_at, variable);
        assert!(r2.outputs["price"].starts_with('¥'));
        assert_ne!(r1.outputs["price"], r2.outputs["price"]);
    }

    #[test]
    fn staleness_round_trip() {
        let mut f = fixture();
        let tpl = f.catalog.flow("shop_a.price").unwrap().template(TemplateStyle::HumanCrafted);
        let v = values(&[("item", "DJI Action 5")]);
        let st = bound_subtask("a", &tpl, "query the price of DJI Action 5", &v);
        let mut env = f.env("shop_a");
        f.run(&st, Some(&tpl), &mut env);
        env.mutate(&remove_search_button()).unwrap();
        let (r2, m2) = f.run(&st, Some(&tpl), &mut env);
        assert_eq!(r2.outcome(), Outcome::Success);
        assert_eq!(r2.stale.len(), 1);
        assert!(m2.chain.iter().any(|(_, u)| *u == ChainUpdate::Inserted));
        let (r3, _) = f.run(&st, Some(&tpl), &mut env);
        assert_eq!(r3.outcome(), Outcome::Success);
        assert!(r3.stale.is_empty());
        assert_eq!(r3.reuse_rate(), 1.0);
        assert_eq!(r3.outputs, r2.outputs);
    }

    #[test]
    fn stale_tree_edge_is_replaced() {
        let mut f = fixture();
        let st = unbound_subtask("a", "shop_a", "query the price of DJI Action 5");
        let mut env = f.env("shop_a");
        f.run(&st, None, &mut env);
        env.mutate(&crate::sim_env::Mutation {
            screen: "home".into(),
            target: "btn_search".into(),
            op: crate::sim_env::MutationOp::RenameText { text: "Search now".into() },
        })
        .unwrap();
        let (r, _) = f.run(&st, None, &mut env);
        assert!(r.stale.is_empty(), "a close rename keeps the cached target valid");
        assert_eq!(r.reuse_rate(), 1.0);
        // Unrecognizable label, same shape: the edge fails verification.
        env.mutate(&crate::sim_env::catalog::relabel_search_button()).unwrap();
        let (r, _) = f.run(&st, None, &mut env);
        assert_eq!(r.outcome(), Outcome::Success);
        assert_eq!(r.stale.len(), 1);
        assert_eq!(r.stale[0].step_no, 2);
        let (r, _) = f.run(&st, None, &mut env);
        assert!(r.stale.is_empty());
        assert_eq!(r.reuse_rate(), 1.0);
        // Removing a button reshapes home, so the launch edge now leads to
        // an unknown screen.
        env.mutate(&remove_search_button()).unwrap();
        let (r, m) = f.run(&st, None, &mut env);
        assert_eq!(r.outcome(), Outcome::Success);
        assert_eq!(r.stale.len(), 1);
        assert!(matches!(m.tree, Some(Ok(_))));
        let tree = &f.memory.trees["shop_a"];
        assert_eq!(tree.paths().len(), 1);
        let (r, _) = f.run(&st, None, &mut env);
        assert!(r.stale.is_empty());
        assert_eq!(r.reuse_rate(), 1.0);
    }

    #[test]
    fn operator_failure_leaves_no_entry() {
        let mut f = fixture();
        let tpl = f.catalog.flow("shop_a.price").unwrap().template(TemplateStyle::HumanCrafted);
        let v = values(&[("item", "DJI Action 5")]);
        let st = bound_subtask("a", &tpl, "query the price of DJI Action 5", &v);
        let mut env = f.env("shop_a");
        f.run(&st, Some(&tpl), &mut env);
        env.mutate(&remove_search_button()).unwrap();
        env.mutate(&crate::sim_env::Mutation {
            screen: "home".into(),
            target: "ime_enter".into(),
            op: crate::sim_env::MutationOp::RemoveElement,
        })
        .unwrap();
        let (r, m) = f.run(&st, Some(&tpl), &mut env);
        assert_eq!(r.outcome(), Outcome::Failure);
        assert!(matches!(r.error, Some(RrError::OperatorFailed(_))));
        assert_eq!(r.stale.len(), 1);
        assert!(m.chain.is_empty());
        let step = r.stale[0].source.clone();
        let StaleSource::Chain { step, .. } = step else { panic!() };
        assert!(f.memory.chains[&tpl.id].entries[step].variants.is_empty());
    }

    #[test]
    fn step_limit_stops_loops() {
        let mut f = fixture();
        f.cfg.step_limit = 3;
        let st = unbound_subtask("a", "shop_a", "query the price of DJI Action 5");
        let mut env = f.env("shop_a");
        let (r, m) = f.run(&st, None, &mut env);
        assert_eq!(r.outcome(), Outcome::Failure);
        assert_eq!(r.error, Some(RrError::StepLimitExceeded(3)));
        assert_eq!(r.record.steps.len(), 3);
        assert!(m.tree.is_none());
    }

    #[test]
    fn interrupts_stop_before_executing() {
        struct At(usize);
        impl StepHook for At {
            fn before_step(&mut self, _: &UIState, _: &Action, h: &[RecordedStep]) -> HookDecision {
                if h.len() == self.0 { HookDecision::Interrupt } else { HookDecision::Proceed }
            }
        }
        let f = fixture();
        let st = unbound_subtask("a", "shop_a", "query the price of DJI Action 5");
        let mut env = f.env("shop_a");
        let rt = Runtime { memory: &f.memory, oracles: &f.oracles, embedder: &f.emb, config: &f.cfg };
        let r = replay(&st, rt, &mut env, &mut At(2), None);
        assert_eq!(r.outcome(), Outcome::Interrupted);
        assert_eq!(r.record.steps.len(), 2);
        assert_eq!(r.interruption.unwrap().planned.target.unwrap().resource_id, "btn_search");
        assert_eq!(env.observe().screen_id, "home");
    }

    #[test]
    fn diff_session_reports_mutations() {
        let mut f = fixture();
        let st = unbound_subtask("a", "shop_a", "query the price of DJI Action 5");
        let mut env = f.env("shop_a");
        let (r, _) = f.run(&st, None, &mut env);
        assert!(diff_session(&r.record, &mut env).is_empty());
        env.mutate(&crate::sim_env::Mutation {
            screen: "results".into(),
            target: "lbl_query".into(),
            op: crate::sim_env::MutationOp::RemoveElement,
        })
        .unwrap();
        let d = diff_session(&r.record, &mut env);
        assert_eq!(d[0].step_no, 3);
    }

    fn task_for(i: usize) -> (&'static str, String) {
        let items = ["DJI Action 5", "Canon R50", "Pixel 9"];
        let item = items[i % 3];
        if i.is_multiple_of(2) {
            ("shop_a", format!("query the price of {item}"))
        } else {
            ("shop_a", format!("place an order for {item}"))
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Cached prefixes replay to the stored fingerprints, recording is
        /// lossless and no reused action was ever unverified.
        #[test]
        fn replay_invariants(seq in proptest::collection::vec(0usize..6, 1..8)) {
            let mut f = fixture();
            let mut env = f.env("shop_a");
            for (n, i) in seq.iter().enumerate() {
                let (app, task) = task_for(*i);
                let st = unbound_subtask(&format!("t{n}"), app, &task);
                let (r, m) = f.run(&st, None, &mut env);
                prop_assert_eq!(r.outcome(), Outcome::Success);
                prop_assert!(matches!(m.tree, Some(Ok(_))));
                for s in &r.record.steps {
                    if s.origin.is_reuse() {
                        if let Some(t) = &s.action.target {
                            let live = s.state.element(&t.path).unwrap();
                            prop_assert_eq!(&live.resource_id, &t.resource_id);
                        }
                    }
                }
                // Re-executing the recorded actions reproduces the states.
                prop_assert!(diff_session(&r.record, &mut env).is_empty());
            }
            let tree = &f.memory.trees["shop_a"];
            for (fps, actions) in tree.paths() {
                let mut e = f.env("shop_a");
                let mut seen = vec![e.observe().fingerprint];
                for a in &actions {
                    let out = e.step(a).unwrap();
                    seen.push(out.state.fingerprint);
                }
                prop_assert_eq!(seen, fps);
            }
        }
    }
}
