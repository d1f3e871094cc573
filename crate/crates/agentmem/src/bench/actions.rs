//! Action-reuse workload: every task runs against its app with the shared
//! action caches, optionally planned through a template set.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use agentmem_core::action_memory::{ActionMemory, ReuseConfig};
use agentmem_core::agent_rr::{run_and_learn, unbound_subtask, ReplayConfig};
use agentmem_core::embedding::Embedder;
use agentmem_core::experience_memory::{fill_parameters, TemplateStore, DEFAULT_MIN_SIMILARITY};
use agentmem_core::oracles::Oracles;
use agentmem_core::sim_env::catalog::{Catalog, TemplateStyle};
use agentmem_core::sim_env::workload::ActionTask;
use agentmem_core::sim_env::GuiEnvironment;
use agentmem_core::ui_model::{Action, Outcome};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSet {
    None,
    LlmStyle,
    HumanCrafted,
}

impl TemplateSet {
    pub const ALL: [TemplateSet; 3] = [TemplateSet::None, TemplateSet::LlmStyle, TemplateSet::HumanCrafted];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateSet::None => "none",
            TemplateSet::LlmStyle => "llm-style",
            TemplateSet::HumanCrafted => "human-crafted",
        }
    }

    fn style(self) -> Option<TemplateStyle> {
        match self {
            TemplateSet::None => None,
            TemplateSet::LlmStyle => Some(TemplateStyle::LlmStyle),
            TemplateSet::HumanCrafted => Some(TemplateStyle::HumanCrafted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown template set {0:?} (expected none, llm-style or human-crafted)")]
pub struct UnknownTemplateSet(pub String);

impl FromStr for TemplateSet {
    type Err = UnknownTemplateSet;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "llm" | "llm-style" => Ok(Self::LlmStyle),
            "human" | "human-crafted" => Ok(Self::HumanCrafted),
            _ => Err(UnknownTemplateSet(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CategoryReuse {
    pub category: String,
    pub app_id: String,
    pub tasks: usize,
    pub failures: usize,
    pub steps: usize,
    pub reused: usize,
    pub operator_calls: usize,
    pub stale: usize,
}

impl CategoryReuse {
    pub fn rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.reused as f64 / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionReport {
    pub set: TemplateSet,
    pub pass: usize,
    pub rows: Vec<CategoryReuse>,
    /// Task id -> executed step count.
    pub steps_by_task: BTreeMap<String, usize>,
    /// Executed actions per task, in workload order.
    #[serde(skip)]
    pub traces: Vec<(String, Vec<Action>)>,
}

impl ActionReport {
    /// Mean of the per-category rates.
    pub fn average(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(CategoryReuse::rate).sum::<f64>() / self.rows.len() as f64
    }

    pub fn row(&self, category: &str) -> Option<&CategoryReuse> {
        self.rows.iter().find(|r| r.category == category)
    }

    pub fn csv_header() -> &'static str {
        "set,pass,category,app,tasks,failures,steps,reused,reuse_rate,operator_calls,stale\n"
    }

    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.4},{},{}\n",
                self.set.as_str(),
                self.pass,
                r.category,
                r.app_id,
                r.tasks,
                r.failures,
                r.steps,
                r.reused,
                r.rate(),
                r.operator_calls,
                r.stale
            ));
        }
        s
    }
}

/// Runs the workload `passes` times over one set of caches and reports
/// each pass separately.
pub fn run_action_bench(
    tasks: &[ActionTask],
    set: TemplateSet,
    catalog: &Catalog,
    reuse: ReuseConfig,
    passes: usize,
    embedder: &dyn Embedder,
) -> Vec<ActionReport> {
    let oracles = Oracles::default()
        .with_operator(Arc::new(catalog.operator()))
        .with_rewriter(Arc::new(catalog.rewriter()));
    let mut store = TemplateStore::new(embedder.dim());
    if let Some(style) = set.style() {
        for t in catalog.templates(style) {
            store.store(t, embedder).expect("catalog templates are valid");
        }
    }
    let mut memory = ActionMemory {
        config: reuse,
        ..ActionMemory::default()
    };
    let mut envs = catalog.environments();
    let config = ReplayConfig::default();
    let mut out = Vec::new();
    for pass in 1..=passes {
        let mut rows: BTreeMap<String, CategoryReuse> = BTreeMap::new();
        let mut steps_by_task = BTreeMap::new();
        let mut traces = Vec::new();
        for task in tasks {
            let row = rows.entry(task.category.clone()).or_insert_with(|| CategoryReuse {
                category: task.category.clone(),
                app_id: task.app_id.clone(),
                ..CategoryReuse::default()
            });
            row.tasks += 1;
            let env: &mut dyn GuiEnvironment = envs.get_mut(&task.app_id).expect("workload app in catalog");
            let planned = match set {
                TemplateSet::None => Some((unbound_subtask(&task.id, &task.app_id, &task.task_text), None)),
                _ => store.retrieve(&task.task_text, embedder, DEFAULT_MIN_SIMILARITY).and_then(|(t, _)| {
                    let plan = fill_parameters(t, &task.task_text, "", &store, &oracles).ok()?;
                    let mut st = plan.subtasks.into_iter().next()?;
                    st.id = task.id.clone();
                    Some((st, Some(t.clone())))
                }),
            };
            let Some((subtask, template)) = planned else {
                row.failures += 1;
                continue;
            };
            let (report, _) = run_and_learn(&subtask, &mut memory, template.as_ref(), &oracles, embedder, &config, env);
            if report.outcome() != Outcome::Success {
                row.failures += 1;
            }
            let n = report.record.steps.len();
            row.steps += n;
            row.reused += report.record.steps.iter().filter(|s| s.origin.is_reuse()).count();
            row.operator_calls += report.operator_calls;
            row.stale += report.stale.len();
            steps_by_task.insert(task.id.clone(), n);
            traces.push((task.id.clone(), report.record.steps.iter().map(|s| s.action.clone()).collect()));
        }
        out.push(ActionReport {
            set,
            pass,
            rows: rows.into_values().collect(),
            steps_by_task,
            traces,
        });
    }
    out
}
