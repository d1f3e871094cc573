//! Planning, step-level dependency graphs, virtual-clock timelines for
//! serial / coarse / fine execution, and prioritized background updates.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action_memory::ActionMemory;
use crate::agent_rr::{apply_stale, finalize_record, replay, NoHook, ReplayConfig, ReplayReport, Runtime};
use crate::embedding::Embedder;
use crate::experience_memory::{
    fill_parameters, topo_order, ExecutablePlan, ExperienceTemplate, PlannedSubtask, TemplateError, TemplateLevel,
    TemplateStore, DEFAULT_MIN_SIMILARITY,
};
use crate::oracles::{Oracles, RewriteRequest};
use crate::profile_memory::{retrieve_profile, ProfileContext, ProfileMemory};
use crate::sim_env::GuiEnvironment;
use crate::ui_model::{ActionKind, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    Serial,
    Coarse,
    Fine,
}

impl ExecutionMode {
    pub const ALL: [ExecutionMode; 3] = [ExecutionMode::Serial, ExecutionMode::Coarse, ExecutionMode::Fine];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Serial => "serial",
            Self::Coarse => "coarse",
            Self::Fine => "fine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("subtask {consumer:?} needs {slot:?} from {producer:?}, which does not provide it")]
    UnboundConsumer {
        consumer: String,
        slot: String,
        producer: String,
    },
    #[error("no environment for app {0:?}")]
    MissingEnvironment(String),
}

/// Three user memories behind one handle.
#[derive(Debug, Clone)]
pub struct Memories {
    pub profile: ProfileMemory,
    pub templates: TemplateStore,
    pub actions: ActionMemory,
}

/// Virtual cost of each planning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTiming {
    pub profile_ms: u64,
    pub template_ms: u64,
    pub rewrite_ms: u64,
}

impl Default for PlanTiming {
    fn default() -> Self {
        Self {
            profile_ms: 30,
            template_ms: 20,
            rewrite_ms: 100,
        }
    }
}

impl PlanTiming {
    /// The two retrievals overlap; the rewrite waits for both.
    pub fn span_ms(&self) -> u64 {
        self.profile_ms.max(self.template_ms) + self.rewrite_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: ExecutablePlan,
    pub profile: ProfileContext,
    pub similarity: Option<f64>,
    pub level: Option<TemplateLevel>,
    pub span_ms: u64,
}

/// Retrieves profile context and the best template independently, then
/// makes one rewriter call. Without a template the plan is autonomous.
pub fn plan(
    task_text: &str,
    memories: &Memories,
    oracles: &Oracles,
    embedder: &dyn Embedder,
    timing: &PlanTiming,
) -> Result<PlanOutcome, TemplateError> {
    let cfg = memories.profile.config;
    let profile = retrieve_profile(task_text, &memories.profile.graph, cfg.retrieval_k, cfg.token_budget, embedder);
    let found = memories.templates.retrieve(task_text, embedder, DEFAULT_MIN_SIMILARITY);
    let context = profile.text();
    let (plan, similarity, level) = match found {
        Some((t, sim)) => (
            fill_parameters(t, task_text, &context, &memories.templates, oracles)?,
            Some(sim),
            Some(t.level),
        ),
        None => {
            let r = oracles.rewrite(&RewriteRequest {
                task: task_text.to_string(),
                template: None,
                profile_context: context.clone(),
            });
            (ExecutablePlan::autonomous(task_text, &r.rewritten_task, &context, None), None, None)
        }
    };
    Ok(PlanOutcome {
        plan,
        profile,
        similarity,
        level,
        span_ms: timing.span_ms(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepNode {
    pub subtask: String,
    pub index: usize,
    pub label: String,
    pub duration_ms: u64,
    /// Output slot this step publishes.
    pub emits: Option<String>,
    /// Slots this step reads.
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepGraph {
    pub nodes: Vec<StepNode>,
    pub sequence_edges: Vec<(usize, usize)>,
    pub data_edges: Vec<(usize, usize)>,
    /// Subtasks in dependency order.
    pub order: Vec<String>,
    /// Subtask -> (first node, node count).
    pub spans: BTreeMap<String, (usize, usize)>,
    pub subtask_edges: BTreeSet<(String, String)>,
    pub executors: BTreeMap<String, String>,
}

struct Desc {
    label: String,
    duration_ms: u64,
    emits: Option<String>,
    refs: Vec<String>,
}

fn plan_descs(st: &PlannedSubtask) -> Vec<Desc> {
    st.steps
        .iter()
        .map(|s| Desc {
            label: s.instruction.clone(),
            duration_ms: 0,
            emits: s
                .action_hint
                .as_ref()
                .filter(|h| h.kind == ActionKind::EmitOutput)
                .and_then(|h| h.output_slot.clone()),
            refs: s.slot_refs.clone(),
        })
        .collect()
}

fn run_descs(st: &PlannedSubtask, r: &ReplayReport) -> Vec<Desc> {
    r.record
        .steps
        .iter()
        .map(|s| Desc {
            label: s.action.describe(),
            duration_ms: s.duration_ms,
            emits: (s.action.kind == ActionKind::EmitOutput)
                .then(|| s.action.output_slot.clone())
                .flatten(),
            refs: s
                .template_step
                .and_then(|i| st.steps.get(i))
                .map(|t| t.slot_refs.clone())
                .unwrap_or_default(),
        })
        .collect()
}

fn assemble(plan: &ExecutablePlan, descs: &BTreeMap<String, Vec<Desc>>, strict: bool) -> Result<StepGraph, ScheduleError> {
    let dag = plan.dag();
    let order = topo_order(&dag)?;
    let mut g = StepGraph {
        nodes: Vec::new(),
        sequence_edges: Vec::new(),
        data_edges: Vec::new(),
        order: order.clone(),
        spans: BTreeMap::new(),
        subtask_edges: dag.edges(),
        executors: BTreeMap::new(),
    };
    for id in &order {
        let st = plan.subtask(id).expect("ordered id");
        g.executors.insert(id.clone(), st.app_id.clone().unwrap_or_else(|| id.clone()));
        let first = g.nodes.len();
        let list = &descs[id];
        if list.is_empty() {
            g.nodes.push(StepNode {
                subtask: id.clone(),
                index: 0,
                label: String::from("(no steps)"),
                duration_ms: 0,
                emits: None,
                refs: Vec::new(),
            });
        }
        for (i, d) in list.iter().enumerate() {
            g.nodes.push(StepNode {
                subtask: id.clone(),
                index: i,
                label: d.label.clone(),
                duration_ms: d.duration_ms,
                emits: d.emits.clone(),
                refs: d.refs.clone(),
            });
        }
        let len = g.nodes.len() - first;
        for k in first + 1..first + len {
            g.sequence_edges.push((k - 1, k));
        }
        g.spans.insert(id.clone(), (first, len));
    }
    for id in &order {
        let st = plan.subtask(id).expect("ordered id");
        let (first, len) = g.spans[id];
        for (slot, (producer, out)) in &st.bindings {
            let unbound = || ScheduleError::UnboundConsumer {
                consumer: id.clone(),
                slot: slot.clone(),
                producer: producer.clone(),
            };
            let (pf, pl) = *g.spans.get(producer).ok_or_else(unbound)?;
            let found = (pf..pf + pl).find(|k| g.nodes[*k].emits.as_deref() == Some(out.as_str()));
            let source = match found {
                Some(k) => k,
                // A producer that failed at runtime still orders its consumer.
                None if !strict => pf + pl - 1,
                None => return Err(unbound()),
            };
            let mut targets: Vec<usize> = (first..first + len).filter(|k| g.nodes[*k].refs.contains(slot)).collect();
            if targets.is_empty() {
                targets.push(first);
            }
            for t in targets {
                g.data_edges.push((source, t));
            }
        }
    }
    g.data_edges.sort_unstable();
    g.data_edges.dedup();
    Ok(g)
}

/// Step graph of a plan before execution (durations unknown).
pub fn build_step_graph(plan: &ExecutablePlan) -> Result<StepGraph, ScheduleError> {
    let descs = plan.subtasks.iter().map(|s| (s.id.clone(), plan_descs(s))).collect();
    assemble(plan, &descs, true)
}

/// Step graph of what actually ran, with measured durations.
pub fn executed_step_graph(plan: &ExecutablePlan, reports: &BTreeMap<String, ReplayReport>) -> Result<StepGraph, ScheduleError> {
    let descs = plan
        .subtasks
        .iter()
        .map(|s| {
            let d = reports.get(&s.id).map(|r| run_descs(s, r)).unwrap_or_default();
            (s.id.clone(), d)
        })
        .collect();
    assemble(plan, &descs, false)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub subtask: String,
    pub index: usize,
    pub label: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub mode: ExecutionMode,
    pub steps: Vec<StepTiming>,
    /// Subtask -> (start, end).
    pub subtasks: BTreeMap<String, (u64, u64)>,
    pub total_ms: u64,
}

impl StepGraph {
    fn last(&self, id: &str) -> usize {
        let (f, l) = self.spans[id];
        f + l - 1
    }

    fn first(&self, id: &str) -> usize {
        self.spans[id].0
    }

    /// Edges a given mode must respect.
    pub fn mode_edges(&self, mode: ExecutionMode) -> BTreeSet<(usize, usize)> {
        let mut e: BTreeSet<(usize, usize)> = self.sequence_edges.iter().copied().collect();
        // One executor per app: same-app subtasks never overlap.
        let mut last_on: BTreeMap<&str, &str> = BTreeMap::new();
        for id in &self.order {
            let app = self.executors[id].as_str();
            if let Some(prev) = last_on.insert(app, id) {
                e.insert((self.last(prev), self.first(id)));
            }
        }
        match mode {
            ExecutionMode::Serial => {
                for w in self.order.windows(2) {
                    e.insert((self.last(&w[0]), self.first(&w[1])));
                }
            }
            ExecutionMode::Coarse => {
                for (p, c) in &self.subtask_edges {
                    e.insert((self.last(p), self.first(c)));
                }
            }
            ExecutionMode::Fine => {
                e.extend(self.data_edges.iter().copied());
                let data: BTreeSet<(&str, &str)> = self
                    .data_edges
                    .iter()
                    .map(|(a, b)| (self.nodes[*a].subtask.as_str(), self.nodes[*b].subtask.as_str()))
                    .collect();
                for (p, c) in &self.subtask_edges {
                    if !data.contains(&(p.as_str(), c.as_str())) {
                        e.insert((self.last(p), self.first(c)));
                    }
                }
            }
        }
        e
    }

    /// Earliest-start schedule on the virtual clock.
    pub fn timeline(&self, mode: ExecutionMode) -> Timeline {
        let edges = self.mode_edges(mode);
        let n = self.nodes.len();
        let mut preds: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        let mut indeg = alloc::vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for (a, b) in &edges {
            preds[*b].push(*a);
            succ[*a].push(*b);
            indeg[*b] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut end = alloc::vec![0u64; n];
        let mut start = alloc::vec![0u64; n];
        while let Some(i) = ready.pop_first() {
            start[i] = preds[i].iter().map(|p| end[*p]).max().unwrap_or(0);
            end[i] = start[i] + self.nodes[i].duration_ms;
            for s in &succ[i] {
                indeg[*s] -= 1;
                if indeg[*s] == 0 {
                    ready.insert(*s);
                }
            }
        }
        let steps: Vec<StepTiming> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, nd)| StepTiming {
                subtask: nd.subtask.clone(),
                index: nd.index,
                label: nd.label.clone(),
                start_ms: start[i],
                end_ms: end[i],
            })
            .collect();
        let subtasks = self
            .order
            .iter()
            .map(|id| (id.clone(), (start[self.first(id)], end[self.last(id)])))
            .collect();
        Timeline {
            mode,
            total_ms: end.iter().copied().max().unwrap_or(0),
            steps,
            subtasks,
        }
    }

    /// Every graph edge finishes before its successor starts.
    pub fn respected_by(&self, t: &Timeline) -> bool {
        self.mode_edges(t.mode)
            .iter()
            .chain(self.data_edges.iter())
            .all(|(a, b)| t.steps[*a].end_ms <= t.steps[*b].start_ms)
    }

    pub fn subtask_total(&self, id: &str) -> u64 {
        let (f, l) = self.spans[id];
        self.nodes[f..f + l].iter().map(|n| n.duration_ms).sum()
    }
}

impl Timeline {
    /// Steps of different subtasks on the same executor never overlap.
    pub fn executors_exclusive(&self, graph: &StepGraph) -> bool {
        for (i, a) in self.steps.iter().enumerate() {
            for b in &self.steps[i + 1..] {
                let same_exec = graph.executors[&a.subtask] == graph.executors[&b.subtask];
                let overlap = a.start_ms < b.end_ms && b.start_ms < a.end_ms;
                if same_exec && overlap {
                    return false;
                }
            }
        }
        true
    }

    /// `step,subtask,start,end` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,subtask,step,label,start_ms,end_ms\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},\"{}\",{},{}\n",
                self.mode.as_str(),
                s.subtask,
                s.index,
                s.label.replace('"', "'"),
                s.start_ms,
                s.end_ms
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Profile,
    Experience,
    Action,
}

/// Three FIFO queues. Experience and action updates share the top tier
/// (FIFO across both); profile updates run only when both are empty.
#[derive(Debug, Clone)]
pub struct BackgroundQueueSet<T> {
    profile: VecDeque<(u64, T)>,
    experience: VecDeque<(u64, T)>,
    action: VecDeque<(u64, T)>,
    seq: u64,
}

impl<T> Default for BackgroundQueueSet<T> {
    fn default() -> Self {
        Self {
            profile: VecDeque::new(),
            experience: VecDeque::new(),
            action: VecDeque::new(),
            seq: 0,
        }
    }
}

impl<T> BackgroundQueueSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, kind: UpdateKind, item: T) {
        let q = match kind {
            UpdateKind::Profile => &mut self.profile,
            UpdateKind::Experience => &mut self.experience,
            UpdateKind::Action => &mut self.action,
        };
        q.push_back((self.seq, item));
        self.seq += 1;
    }

    pub fn len(&self) -> usize {
        self.profile.len() + self.experience.len() + self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn high_priority_pending(&self) -> bool {
        !self.experience.is_empty() || !self.action.is_empty()
    }

    pub fn dequeue(&mut self) -> Option<(UpdateKind, T)> {
        let e = self.experience.front().map(|(s, _)| *s);
        let a = self.action.front().map(|(s, _)| *s);
        match (e, a) {
            (Some(x), Some(y)) if x < y => self.experience.pop_front().map(|(_, t)| (UpdateKind::Experience, t)),
            (Some(_), Some(_)) | (None, Some(_)) => self.action.pop_front().map(|(_, t)| (UpdateKind::Action, t)),
            (Some(_), None) => self.experience.pop_front().map(|(_, t)| (UpdateKind::Experience, t)),
            (None, None) => self.profile.pop_front().map(|(_, t)| (UpdateKind::Profile, t)),
        }
    }

    /// Processes at most `budget` items in priority order.
    pub fn drain(&mut self, budget: usize, mut f: impl FnMut(UpdateKind, T)) -> usize {
        let mut n = 0;
        while n < budget {
            let Some((k, t)) = self.dequeue() else {
                break;
            };
            f(k, t);
            n += 1;
        }
        n
    }
}

/// A closed memory mutation waiting in the background queues.
#[derive(Debug, Clone, PartialEq)]
pub enum MemoryUpdate {
    Trace { report: Box<ReplayReport> },
    Template(ExperienceTemplate),
    Observations(Vec<String>),
}

impl MemoryUpdate {
    pub fn kind(&self) -> UpdateKind {
        match self {
            Self::Trace { .. } => UpdateKind::Action,
            Self::Template(_) => UpdateKind::Experience,
            Self::Observations(_) => UpdateKind::Profile,
        }
    }
}

/// Applies one update; errors are reported, not fatal.
pub fn apply_update(
    memories: &mut Memories,
    update: MemoryUpdate,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<(), String> {
    match update {
        MemoryUpdate::Trace { report } => {
            apply_stale(&mut memories.actions, &report.stale);
            let template = report
                .record
                .template_id
                .as_ref()
                .and_then(|id| memories.templates.get(id))
                .cloned();
            let merge = finalize_record(&report.record, &mut memories.actions, template.as_ref(), embedder);
            match merge.tree {
                Some(Err(e)) => Err(e.to_string()),
                _ => Ok(()),
            }
        }
        MemoryUpdate::Template(t) => memories.templates.store(t, embedder).map(|_| ()).map_err(|e| e.to_string()),
        MemoryUpdate::Observations(batch) => {
            memories.profile.observe(batch);
            match memories.profile.process_next(oracles, embedder) {
                Some(Err(e)) => Err(e.to_string()),
                _ => Ok(()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub reports: BTreeMap<String, ReplayReport>,
    pub failures: BTreeMap<String, String>,
    pub graph: StepGraph,
}

impl ExecutionReport {
    pub fn timeline(&self, mode: ExecutionMode) -> Timeline {
        self.graph.timeline(mode)
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.reports.values().all(|r| r.outcome() == Outcome::Success)
    }

    pub fn outputs(&self) -> BTreeMap<String, String> {
        self.reports
            .iter()
            .flat_map(|(id, r)| r.outputs.iter().map(move |(k, v)| (format!("{id}.{k}"), v.clone())))
            .collect()
    }
}

/// Executes every subtask in dependency order against a shared memory
/// snapshot, binding producer outputs into consumers. Memory updates are
/// queued, not applied. The timeline of any mode is derived afterwards.
pub fn execute<E: GuiEnvironment>(
    plan: &ExecutablePlan,
    envs: &mut BTreeMap<String, E>,
    memory: &ActionMemory,
    oracles: &Oracles,
    embedder: &dyn Embedder,
    config: &ReplayConfig,
    queue: &mut BackgroundQueueSet<MemoryUpdate>,
) -> Result<ExecutionReport, ScheduleError> {
    let order = topo_order(&plan.dag())?;
    let mut reports: BTreeMap<String, ReplayReport> = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for id in &order {
        let mut st = plan.subtask(id).expect("ordered id").clone();
        let mut unbound = None;
        for (slot, (producer, out)) in st.bindings.clone() {
            match reports
                .get(&producer)
                .filter(|r| r.outcome() == Outcome::Success)
                .and_then(|r| r.outputs.get(&out))
            {
                Some(v) => st.bind(&slot, v),
                None => {
                    unbound = Some(ScheduleError::UnboundConsumer {
                        consumer: id.clone(),
                        slot,
                        producer,
                    });
                    break;
                }
            }
        }
        if let Some(e) = unbound {
            failures.insert(id.clone(), e.to_string());
            continue;
        }
        let app = st.app_id.clone().unwrap_or_default();
        let env = envs.get_mut(&app).ok_or_else(|| ScheduleError::MissingEnvironment(app.clone()))?;
        env.reset();
        let rt = Runtime {
            memory,
            oracles,
            embedder,
            config,
        };
        let report = replay(&st, rt, env, &mut NoHook, None);
        if let Some(e) = &report.error {
            failures.insert(id.clone(), e.to_string());
        }
        queue.enqueue(UpdateKind::Action, MemoryUpdate::Trace { report: Box::new(report.clone()) });
        reports.insert(id.clone(), report);
    }
    let graph = executed_step_graph(plan, &reports)?;
    Ok(ExecutionReport {
        reports,
        failures,
        graph,
    })
}
