//! Scheduler experiments: plan each scenario once, execute it, and lay the
//! measured steps out on the virtual clock under every mode.

use std::collections::BTreeMap;
use std::sync::Arc;

use agentmem_core::action_memory::ActionMemory;
use agentmem_core::agent_rr::ReplayConfig;
use agentmem_core::embedding::Embedder;
use agentmem_core::experience_memory::{fill_parameters, TemplateError, TemplateStore};
use agentmem_core::oracles::mock::PatternRewriter;
use agentmem_core::oracles::Oracles;
use agentmem_core::scheduler::{execute, BackgroundQueueSet, ExecutionMode, ExecutionReport, ScheduleError, Timeline};
use agentmem_core::sim_env::catalog::{timing_catalog, Catalog, TemplateStyle};
use agentmem_core::sim_env::workload::{build_scenario, Scenario};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("scenario {0} failed: {1}")]
    Failed(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRun {
    pub id: String,
    pub category: String,
    pub totals: BTreeMap<ExecutionMode, u64>,
    #[serde(skip)]
    pub timelines: Vec<Timeline>,
}

impl ScenarioRun {
    pub fn total(&self, m: ExecutionMode) -> u64 {
        self.totals[&m]
    }

    pub fn dominance_holds(&self) -> bool {
        let [s, c, f] = ExecutionMode::ALL.map(|m| self.totals.get(&m).copied());
        let le = |a: Option<u64>, b: Option<u64>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        le(f, c) && le(c, s) && le(f, s)
    }
}

/// Plans a scenario through its own template and executes it once.
pub fn execute_scenario(s: &Scenario, catalog: &Catalog, embedder: &dyn Embedder) -> Result<ExecutionReport, BenchError> {
    let mut store = TemplateStore::new(embedder.dim());
    for t in catalog.templates(TemplateStyle::HumanCrafted) {
        store.store(t, embedder)?;
    }
    let rewriter = PatternRewriter::new(vec![s.rewrite_pattern()]);
    let oracles = Oracles::default()
        .with_operator(Arc::new(catalog.operator()))
        .with_rewriter(Arc::new(rewriter));
    let plan = fill_parameters(&s.template, &s.task_text, "", &store, &oracles)?;
    let mut envs = catalog.environments();
    let mut queue = BackgroundQueueSet::new();
    let memory = ActionMemory::default();
    let report = execute(&plan, &mut envs, &memory, &oracles, embedder, &ReplayConfig::default(), &mut queue)?;
    if !report.succeeded() {
        return Err(BenchError::Failed(s.id.clone(), format!("{:?}", report.failures)));
    }
    Ok(report)
}

pub fn run_scenario(s: &Scenario, catalog: &Catalog, modes: &[ExecutionMode], embedder: &dyn Embedder) -> Result<ScenarioRun, BenchError> {
    let report = execute_scenario(s, catalog, embedder)?;
    let timelines: Vec<Timeline> = modes.iter().map(|m| report.timeline(*m)).collect();
    Ok(ScenarioRun {
        id: s.id.clone(),
        category: s.category.clone(),
        totals: timelines.iter().map(|t| (t.mode, t.total_ms)).collect(),
        timelines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormCheck {
    pub name: String,
    pub expected: BTreeMap<ExecutionMode, u64>,
    pub measured: BTreeMap<ExecutionMode, u64>,
}

impl ClosedFormCheck {
    pub fn holds(&self) -> bool {
        self.expected == self.measured
    }
}

/// The two timing scenarios with declared durations: two producers and a
/// consumer, and a full dependency chain.
pub fn closed_form_checks(embedder: &dyn Embedder) -> Result<Vec<ClosedFormCheck>, BenchError> {
    let catalog = timing_catalog();
    let params = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>();

    let two = build_scenario(
        &catalog,
        "timing_two_producers",
        "multi-shop+social",
        &["shop_a", "shop_b", "chat_a"],
        params(&[("item", "Pixel 9"), ("contact", "Bob")]),
    )
    .expect("timing scenario");
    let r = execute_scenario(&two, &catalog, embedder)?;
    let g = &r.graph;
    let (ta, tb, tc) = (g.subtask_total("A"), g.subtask_total("B"), g.subtask_total("C"));
    // The consumer's send part starts at its first step fed by a producer.
    let (first, len) = g.spans["C"];
    let send_start = g
        .data_edges
        .iter()
        .map(|(_, to)| *to)
        .filter(|to| (first..first + len).contains(to))
        .min()
        .unwrap_or(first);
    let setup: u64 = g.nodes[first..send_start].iter().map(|n| n.duration_ms).sum();
    let send = tc - setup;
    let expected = BTreeMap::from([
        (ExecutionMode::Serial, ta + tb + tc),
        (ExecutionMode::Coarse, ta.max(tb) + tc),
        (ExecutionMode::Fine, ta.max(tb).max(setup) + send),
    ]);
    let measured = ExecutionMode::ALL.iter().map(|m| (*m, r.timeline(*m).total_ms)).collect();
    let mut out = vec![ClosedFormCheck {
        name: two.id.clone(),
        expected,
        measured,
    }];

    let chain = build_scenario(
        &catalog,
        "timing_full_chain",
        "search+shop+social",
        &["notes_a", "shop_a", "chat_a"],
        params(&[("topic", "canon cameras"), ("contact", "Eve")]),
    )
    .expect("timing scenario");
    let r = execute_scenario(&chain, &catalog, embedder)?;
    let serial = r.timeline(ExecutionMode::Serial).total_ms;
    out.push(ClosedFormCheck {
        name: chain.id.clone(),
        expected: BTreeMap::from([(ExecutionMode::Serial, serial), (ExecutionMode::Coarse, serial)]),
        measured: [ExecutionMode::Serial, ExecutionMode::Coarse]
            .iter()
            .map(|m| (*m, r.timeline(*m).total_ms))
            .collect(),
    });
    Ok(out)
}

pub fn summary_csv(runs: &[ScenarioRun], modes: &[ExecutionMode]) -> String {
    let mut s = String::from("scenario,category");
    for m in modes {
        s.push_str(&format!(",{}_ms", m.as_str()));
    }
    if modes.contains(&ExecutionMode::Serial) {
        for m in modes.iter().filter(|m| **m != ExecutionMode::Serial) {
            s.push_str(&format!(",{}_speedup", m.as_str()));
        }
    }
    s.push('\n');
    for r in runs {
        s.push_str(&format!("{},{}", r.id, r.category));
        for m in modes {
            s.push_str(&format!(",{}", r.total(*m)));
        }
        if modes.contains(&ExecutionMode::Serial) {
            let serial = r.total(ExecutionMode::Serial) as f64;
            for m in modes.iter().filter(|m| **m != ExecutionMode::Serial) {
                s.push_str(&format!(",{:.3}", serial / r.total(*m).max(1) as f64));
            }
        }
        s.push('\n');
    }
    s
}
