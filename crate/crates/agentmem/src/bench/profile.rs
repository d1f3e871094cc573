//! Profile benchmark: learn each user's graph from history batches, rewrite
//! the test tasks with retrieved context, and judge the rewrites against the
//! required profile elements. A flat top-k over raw history lines is the
//! baseline.

use std::sync::Arc;
use std::time::Instant;

use agentmem_core::embedding::{Embedder, VectorIndex};
use agentmem_core::oracles::mock::RuleBookUpdater;
use agentmem_core::oracles::{Oracles, ProfileCheck, RewriteRequest, Role};
use agentmem_core::profile_memory::{retrieve_profile, DisGraph, ProfileConfig, ProfileError, ProfileMemory};
use agentmem_core::text;
use serde::Serialize;

use crate::fixtures::{ProfileFixture, UserFixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Graph,
    Flat,
    NoProfile,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Graph => "graph",
            Method::Flat => "flat",
            Method::NoProfile => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub user: String,
    pub test_id: String,
    pub method: Method,
    pub rewritten_task: String,
    pub profile_check: Vec<ProfileCheck>,
    pub alignment: f64,
    /// Nodes (graph) or chunks (flat) touched by retrieval.
    pub visited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserLearning {
    pub user: String,
    pub batches: usize,
    pub splits: usize,
    pub updater_calls: usize,
    pub nodes: usize,
    pub edges: usize,
    pub write_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub k: usize,
    pub budget: usize,
    pub learning: Vec<UserLearning>,
    pub results: Vec<TaskResult>,
    /// Oracle calls of any role made while retrieving (graph and flat).
    pub retrieval_oracle_calls: usize,
    pub retrieval_ms: f64,
}

impl ProfileReport {
    pub fn alignment(&self, method: Method) -> f64 {
        let r: Vec<f64> = self.results.iter().filter(|r| r.method == method).map(|r| r.alignment).collect();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("user,test_id,method,required,matched,alignment,visited\n");
        for r in &self.results {
            let matched = r.profile_check.iter().filter(|c| c.matched).count();
            s.push_str(&format!(
                "{},{},{},{},{},{:.4},{}\n",
                r.user,
                r.test_id,
                r.method.as_str(),
                r.profile_check.len(),
                matched,
                r.alignment,
                r.visited
            ));
        }
        s
    }
}

/// Learns a user's graph batch by batch through the user's rulebook.
pub fn learn(
    user: &UserFixture,
    config: ProfileConfig,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<(ProfileMemory, UserLearning), ProfileError> {
    let mut mem = ProfileMemory::new(DisGraph::new(embedder.dim()), config);
    let before = oracles.log.count(Role::ProfileUpdater);
    let start = Instant::now();
    let mut splits = 0;
    let batches = user.batches();
    for b in &batches {
        mem.observe(b.clone());
        if let Some(r) = mem.process_next(oracles, embedder) {
            splits += r?.splits.len();
        }
    }
    let learning = UserLearning {
        user: user.user.clone(),
        batches: batches.len(),
        splits,
        updater_calls: oracles.log.count(Role::ProfileUpdater) - before,
        nodes: mem.graph.node_count(),
        edges: mem.graph.edge_count(),
        write_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((mem, learning))
}

/// Top-k history lines by cosine, cut to the token budget. No graph.
pub fn flat_context(task: &str, history: &[String], k: usize, budget: usize, embedder: &dyn Embedder) -> (String, usize) {
    let mut index = VectorIndex::new(embedder.dim());
    for (i, h) in history.iter().enumerate() {
        index.insert(format!("{i:04}"), embedder.embed(h)).expect("dimension");
    }
    let hits = index.top_k(&embedder.embed(task), k);
    let mut used = 0;
    let mut lines = Vec::new();
    for (id, _) in &hits {
        let line = &history[id.parse::<usize>().expect("numeric id")];
        let cost = text::whitespace_tokens(line);
        if used + cost > budget {
            break;
        }
        used += cost;
        lines.push(line.as_str());
    }
    (lines.join("\n"), hits.len())
}

fn judge(oracles: &Oracles, user: &str, test: &crate::fixtures::TestTask, method: Method, context: &str, visited: usize) -> TaskResult {
    let rewritten = oracles
        .rewrite(&RewriteRequest {
            task: test.task.clone(),
            template: None,
            profile_context: context.to_string(),
        })
        .rewritten_task;
    let checks = oracles.check(&test.required, &rewritten);
    let matched = checks.iter().filter(|c| c.matched).count();
    TaskResult {
        user: user.to_string(),
        test_id: test.id.clone(),
        method,
        rewritten_task: rewritten,
        alignment: if checks.is_empty() { 1.0 } else { matched as f64 / checks.len() as f64 },
        profile_check: checks,
        visited,
    }
}

pub fn run_profile_bench(
    fixture: &ProfileFixture,
    k: usize,
    budget: usize,
    embedder: &dyn Embedder,
) -> Result<ProfileReport, ProfileError> {
    let config = ProfileConfig {
        retrieval_k: k,
        token_budget: budget,
        ..ProfileConfig::default()
    };
    let mut learning = Vec::new();
    let mut results = Vec::new();
    let mut retrieval_oracle_calls = 0;
    let mut retrieval_ms = 0.0;
    for user in &fixture.users {
        let oracles = Oracles::default().with_updater(Arc::new(RuleBookUpdater::new(user.rules.clone())));
        let (mem, l) = learn(user, config, &oracles, embedder)?;
        learning.push(l);
        for t in &user.tests {
            let before = oracles.log.total();
            let start = Instant::now();
            let graph_ctx = retrieve_profile(&t.task, &mem.graph, k, budget, embedder);
            let (flat_ctx, chunks) = flat_context(&t.task, &user.history, k, budget, embedder);
            retrieval_ms += start.elapsed().as_secs_f64() * 1e3;
            retrieval_oracle_calls += oracles.log.total() - before;
            results.push(judge(&oracles, &user.user, t, Method::Graph, &graph_ctx.text(), graph_ctx.visited));
            results.push(judge(&oracles, &user.user, t, Method::Flat, &flat_ctx, chunks));
            results.push(judge(&oracles, &user.user, t, Method::NoProfile, "", 0));
        }
    }
    Ok(ProfileReport {
        k,
        budget,
        learning,
        results,
        retrieval_oracle_calls,
        retrieval_ms,
    })
}

/// Eight repeats of one token: a copy keeps roughly a third of the
/// original's cosine to any query.
pub const REPLICA_MARKER: &str = "replica replica replica replica replica replica replica replica";

/// Copies of `base` added until the graph has exactly `target` nodes. Ids
/// get `#r<n>`, copies share no edges with the base, and every copied name
/// is padded with [`REPLICA_MARKER`] so a query's start nodes stay in the
/// base at every size.
pub fn replicate(base: &DisGraph, target: usize, embedder: &dyn Embedder) -> DisGraph {
    use agentmem_core::profile_memory::NodeView;
    let views = base.views();
    let edges: Vec<(String, String)> = base.edges().cloned().collect();
    let mut nodes: Vec<NodeView> = views.clone();
    let mut all_edges = edges.clone();
    let mut copy = 0;
    while nodes.len() < target {
        copy += 1;
        let take = (target - nodes.len()).min(views.len());
        let kept: Vec<&NodeView> = views.iter().take(take).collect();
        let rename = |id: &str| format!("{id}#r{copy}");
        for v in &kept {
            let mut n = (*v).clone();
            n.id = rename(&n.id);
            n.name = format!("{} {REPLICA_MARKER}", if n.name.is_empty() { &v.id } else { &n.name });
            nodes.push(n);
        }
        let ids: std::collections::BTreeSet<&str> = kept.iter().map(|v| v.id.as_str()).collect();
        for (a, b) in &edges {
            if ids.contains(a.as_str()) && ids.contains(b.as_str()) {
                all_edges.push((rename(a), rename(b)));
            }
        }
    }
    DisGraph::from_parts(&nodes, &all_edges, embedder).expect("replica of a valid graph")
}
