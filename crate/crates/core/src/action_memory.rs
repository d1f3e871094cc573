//! Action caches. An ActTree shares action prefixes across tasks of one app;
//! an ActChain caches per-step actions of a template keyed by slot values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding};
use crate::experience_memory::{ExperienceTemplate, StepKind};
use crate::text;
use crate::ui_model::{fuzzy_match, Action, ActionKind, Fingerprint, MatchConfig, TraceRecord, UIState, PARAM_TEXT};

pub type NodeId = u32;
pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub action: Action,
    pub child: NodeId,
    pub task_list: Vec<String>,
    pub task_embeddings: Vec<Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub fingerprint: Fingerprint,
    pub screen_id: String,
    pub parent: Option<NodeId>,
    pub edges: Vec<TreeEdge>,
}

/// Trie over recorded traces of one app. Nodes are positions, not screens:
/// the same fingerprint can appear at several depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActTree {
    pub app_id: String,
    pub nodes: BTreeMap<NodeId, TreeNode>,
    next_id: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("trace starts at {found} but the tree root is {expected}")]
    RootMismatch { expected: Fingerprint, found: Fingerprint },
    #[error("merge conflict at depth {depth}: {action} led to {found}, cached {expected}")]
    MergeConflict {
        depth: usize,
        action: String,
        expected: Fingerprint,
        found: Fingerprint,
    },
    #[error("trace belongs to app {found:?}, tree is for {expected:?}")]
    WrongApp { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub shared_edges: usize,
    pub new_edges: usize,
}

impl ActTree {
    pub fn new(app_id: &str, root: &UIState) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            ROOT,
            TreeNode {
                fingerprint: root.fingerprint,
                screen_id: root.screen_id.clone(),
                parent: None,
                edges: Vec::new(),
            },
        );
        Self {
            app_id: app_id.to_string(),
            nodes,
            next_id: 1,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(&id)
    }

    pub fn root_fingerprint(&self) -> Fingerprint {
        self.nodes[&ROOT].fingerprint
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.edges.len()).sum()
    }

    pub fn depth_of(&self, mut id: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes.get(&id).and_then(|n| n.parent) {
            d += 1;
            id = p;
        }
        d
    }

    fn find_edge(&self, node: NodeId, action: &Action) -> Option<usize> {
        let id = action.identity();
        self.nodes[&node].edges.iter().position(|e| e.action.identity() == id)
    }

    /// Adds one trace path. Matching edges gain the task; the first
    /// unmatched step starts a new branch. Checked fully before mutating.
    pub fn merge(
        &mut self,
        steps: &[(UIState, Action)],
        task_text: &str,
        embedder: &dyn Embedder,
    ) -> Result<MergeStats, MergeError> {
        let Some((first, _)) = steps.first() else {
            return Ok(MergeStats::default());
        };
        if first.app_id != self.app_id {
            return Err(MergeError::WrongApp {
                expected: self.app_id.clone(),
                found: first.app_id.clone(),
            });
        }
        if first.fingerprint != self.root_fingerprint() {
            return Err(MergeError::RootMismatch {
                expected: self.root_fingerprint(),
                found: first.fingerprint,
            });
        }
        // A step's child is the next recorded state; the final action
        // (done) leaves the screen unchanged.
        let child_state = |i: usize| steps.get(i + 1).map_or(&steps[i].0, |(s, _)| s);

        let mut node = ROOT;
        let mut shared = 0;
        for (i, (_, action)) in steps.iter().enumerate() {
            let Some(e) = self.find_edge(node, action) else {
                break;
            };
            let edge = &self.nodes[&node].edges[e];
            let expected = self.nodes[&edge.child].fingerprint;
            let found = child_state(i).fingerprint;
            if expected != found {
                return Err(MergeError::MergeConflict {
                    depth: i,
                    action: action.describe(),
                    expected,
                    found,
                });
            }
            node = edge.child;
            shared += 1;
        }

        let emb = embedder.embed(task_text);
        let mut node = ROOT;
        for (i, (_, action)) in steps.iter().enumerate() {
            if i < shared {
                let e = self.find_edge(node, action).expect("checked above");
                let edge = &mut self.nodes.get_mut(&node).expect("live node").edges[e];
                if !edge.task_list.iter().any(|t| t == task_text) {
                    edge.task_list.push(task_text.to_string());
                    edge.task_embeddings.push(emb.clone());
                }
                node = edge.child;
                continue;
            }
            let child = self.next_id;
            self.next_id += 1;
            let cs = child_state(i);
            self.nodes.insert(
                child,
                TreeNode {
                    fingerprint: cs.fingerprint,
                    screen_id: cs.screen_id.clone(),
                    parent: Some(node),
                    edges: Vec::new(),
                },
            );
            self.nodes.get_mut(&node).expect("live node").edges.push(TreeEdge {
                action: action.clone(),
                child,
                task_list: alloc::vec![task_text.to_string()],
                task_embeddings: alloc::vec![emb.clone()],
            });
            node = child;
        }
        Ok(MergeStats {
            shared_edges: shared,
            new_edges: steps.len() - shared,
        })
    }

    /// Drops an edge together with everything below it. Returns the number
    /// of nodes removed.
    pub fn remove_edge(&mut self, node: NodeId, edge: usize) -> usize {
        let Some(n) = self.nodes.get_mut(&node) else {
            return 0;
        };
        if edge >= n.edges.len() {
            return 0;
        }
        let removed = n.edges.remove(edge);
        let mut stack = alloc::vec![removed.child];
        let mut count = 0;
        while let Some(id) = stack.pop() {
            if let Some(gone) = self.nodes.remove(&id) {
                count += 1;
                stack.extend(gone.edges.iter().map(|e| e.child));
            }
        }
        count
    }

    /// Every root-to-leaf path as (fingerprints from the root, actions).
    pub fn paths(&self) -> Vec<(Vec<Fingerprint>, Vec<Action>)> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![(ROOT, alloc::vec![self.root_fingerprint()], Vec::new())];
        while let Some((id, fps, acts)) = stack.pop() {
            let n = &self.nodes[&id];
            if n.edges.is_empty() {
                out.push((fps, acts));
                continue;
            }
            for e in n.edges.iter().rev() {
                let mut f = fps.clone();
                f.push(self.nodes[&e.child].fingerprint);
                let mut a = acts.clone();
                a.push(e.action.clone());
                stack.push((e.child, f, a));
            }
        }
        out
    }

    /// Structure without embeddings, for isomorphism checks.
    pub fn shape(&self) -> Vec<(usize, Fingerprint, String, Fingerprint, Vec<String>)> {
        let mut out = Vec::new();
        for (id, n) in &self.nodes {
            for e in &n.edges {
                let mut tasks = e.task_list.clone();
                tasks.sort();
                out.push((
                    self.depth_of(*id),
                    n.fingerprint,
                    e.action.describe(),
                    self.nodes[&e.child].fingerprint,
                    tasks,
                ));
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub params: BTreeMap<String, String>,
    pub action: Action,
    /// A conflicting newer action awaiting a second successful run.
    #[serde(default)]
    pub pending: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub index: usize,
    pub kind: StepKind,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActChain {
    pub template_id: String,
    pub entries: Vec<ChainEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainUpdate {
    Inserted,
    Confirmed,
    /// Conflicts with the cached action; held as pending.
    Flagged,
    /// A pending action was seen again and replaced the cached one.
    Promoted,
}

fn trimmed(params: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    params
        .iter()
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

impl ActChain {
    pub fn for_template(t: &ExperienceTemplate) -> Self {
        Self {
            template_id: t.id.clone(),
            entries: t
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| ChainEntry {
                    index: i,
                    kind: s.kind,
                    variants: Vec::new(),
                })
                .collect(),
        }
    }

    fn key(&self, step: usize, params: &BTreeMap<String, String>) -> BTreeMap<String, String> {
        match self.entries[step].kind {
            StepKind::Invariant => BTreeMap::new(),
            StepKind::Variable => trimmed(params),
        }
    }

    fn position(&self, step: usize, params: &BTreeMap<String, String>) -> Option<usize> {
        let key = self.key(step, params);
        self.entries[step].variants.iter().position(|v| v.params == key)
    }

    pub fn lookup(&self, step: usize, params: &BTreeMap<String, String>) -> Option<&Action> {
        if step >= self.entries.len() {
            return None;
        }
        self.position(step, params).map(|i| &self.entries[step].variants[i].action)
    }

    /// Records a verified action for a step.
    pub fn record(&mut self, step: usize, params: &BTreeMap<String, String>, action: &Action) -> Option<ChainUpdate> {
        if step >= self.entries.len() {
            return None;
        }
        let key = self.key(step, params);
        let pos = self.position(step, params);
        let variants = &mut self.entries[step].variants;
        Some(match pos {
            None => {
                variants.push(Variant {
                    params: key,
                    action: action.clone(),
                    pending: None,
                });
                ChainUpdate::Inserted
            }
            Some(i) if variants[i].action.same_as(action) => {
                variants[i].pending = None;
                ChainUpdate::Confirmed
            }
            Some(i) => {
                let v = &mut variants[i];
                if v.pending.as_ref().is_some_and(|p| p.same_as(action)) {
                    v.action = action.clone();
                    v.pending = None;
                    ChainUpdate::Promoted
                } else {
                    v.pending = Some(action.clone());
                    ChainUpdate::Flagged
                }
            }
        })
    }

    pub fn remove_variant(&mut self, step: usize, params: &BTreeMap<String, String>) -> bool {
        if step >= self.entries.len() {
            return false;
        }
        match self.position(step, params) {
            Some(i) => {
                self.entries[step].variants.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn variant_count(&self) -> usize {
        self.entries.iter().map(|e| e.variants.len()).sum()
    }

    pub fn flagged(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.variants.iter().any(|v| v.pending.is_some()))
            .map(|e| e.index)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseConfig {
    pub tau0: f64,
    pub delta: f64,
    pub tau_max: f64,
    #[serde(default)]
    pub matching: MatchConfig,
}

impl Default for ReuseConfig {
    fn default() -> Self {
        Self {
            tau0: 0.55,
            delta: 0.05,
            tau_max: 0.95,
            matching: MatchConfig::default(),
        }
    }
}

impl ReuseConfig {
    pub fn threshold(&self, depth: usize) -> f64 {
        (self.tau0 + self.delta * depth as f64).min(self.tau_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Reuse { action: Action, edge: usize },
    Miss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReuseDecision {
    pub verdict: Verdict,
    pub depth: usize,
    pub similarity: f64,
    pub threshold_used: f64,
}

impl ReuseDecision {
    pub fn is_reuse(&self) -> bool {
        matches!(self.verdict, Verdict::Reuse { .. })
    }
}

// Absorbs f32 rounding in cosines of identical texts.
const SIM_EPSILON: f64 = 1e-6;

/// Typed values must come from the task itself.
fn grounded(action: &Action, task_text: &str) -> bool {
    match (action.kind, action.param(PARAM_TEXT)) {
        (ActionKind::TypeText, Some(v)) => text::contains_all_tokens(task_text, v),
        _ => true,
    }
}

/// Picks the outgoing edge of `node` most similar to the task and reuses
/// it when the similarity clears the depth threshold. With `task_text`,
/// edges that would type text absent from the task are skipped.
pub fn acttree_lookup(
    tree: &ActTree,
    node: NodeId,
    live: Fingerprint,
    task_embedding: &Embedding,
    depth: usize,
    task_text: Option<&str>,
    cfg: &ReuseConfig,
) -> ReuseDecision {
    let threshold_used = cfg.threshold(depth);
    let miss = |similarity| ReuseDecision {
        verdict: Verdict::Miss,
        depth,
        similarity,
        threshold_used,
    };
    let Some(n) = tree.node(node).filter(|n| n.fingerprint == live) else {
        return miss(0.0);
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in n.edges.iter().enumerate() {
        if task_text.is_some_and(|t| !grounded(&e.action, t)) {
            continue;
        }
        let sim = e
            .task_embeddings
            .iter()
            .map(|t| task_embedding.cosine(t))
            .fold(0.0, f64::max);
        let better = match best {
            None => true,
            Some((b, bs)) => {
                if (sim - bs).abs() > 1e-12 {
                    sim > bs
                } else {
                    let be = &n.edges[b];
                    (e.task_list.len(), core::cmp::Reverse(tree.nodes[&e.child].fingerprint))
                        > (be.task_list.len(), core::cmp::Reverse(tree.nodes[&be.child].fingerprint))
                }
            }
        };
        if better {
            best = Some((i, sim));
        }
    }
    match best {
        Some((i, sim)) if sim + SIM_EPSILON >= threshold_used => ReuseDecision {
            verdict: Verdict::Reuse {
                action: n.edges[i].action.clone(),
                edge: i,
            },
            depth,
            similarity: sim,
            threshold_used,
        },
        Some((_, sim)) => miss(sim),
        None => miss(0.0),
    }
}

/// Cached action for one template step, or `None`.
pub fn actchain_lookup<'a>(chain: &'a ActChain, step: usize, params: &BTreeMap<String, String>) -> Option<&'a Action> {
    chain.lookup(step, params)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stale cached action {action}")]
pub struct Stale {
    pub action: String,
}

/// Rebinds a cached action's target to the live element, or reports it
/// stale. Targetless actions pass unchanged.
pub fn verify_action(action: &Action, state: &UIState, cfg: &MatchConfig) -> Result<Action, Stale> {
    let Some(sel) = &action.target else {
        return Ok(action.clone());
    };
    match fuzzy_match(sel, state, cfg) {
        Some(m) => {
            let mut a = action.clone();
            a.target = Some(m.selector());
            Ok(a)
        }
        None => Err(Stale {
            action: action.describe(),
        }),
    }
}

/// Fraction of steps that came from a cache.
pub fn reuse_rate(trace: &TraceRecord) -> f64 {
    if trace.annotations.is_empty() {
        return 0.0;
    }
    let reused = trace.annotations.iter().filter(|o| o.is_reuse()).count();
    reused as f64 / trace.annotations.len() as f64
}

/// All caches of one user: a tree per app and a chain per template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionMemory {
    pub trees: BTreeMap<String, ActTree>,
    pub chains: BTreeMap<String, ActChain>,
    #[serde(default)]
    pub config: ReuseConfig,
}

impl ActionMemory {
    pub fn new(config: ReuseConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    /// Cached actions across all trees and chains.
    pub fn cached_actions(&self) -> usize {
        self.trees.values().map(ActTree::edge_count).sum::<usize>()
            + self.chains.values().map(ActChain::variant_count).sum::<usize>()
    }

    pub fn apps(&self) -> BTreeSet<&str> {
        self.trees.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::experience_memory::{ActionHint, SlotSpec, TemplateLevel, TemplateStep};
    use crate::ui_model::{Outcome, Rect, Selector, StepOrigin, UIElement};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn state(screen: &str, rids: &[&str]) -> UIState {
        let root = UIElement::new("root", "FrameLayout", "", Rect::new(0, 0, 100, 100)).with_children(
            rids.iter()
                .map(|r| UIElement::new(r, "Button", "Go", Rect::new(0, 0, 10, 10)))
                .collect(),
        );
        UIState::new("app", screen, root)
    }

    fn click(rid: &str) -> Action {
        Action::click(Selector::new(rid, "Button", "Go"))
    }

    fn embed(t: &str) -> Embedding {
        HashEmbedder::default().embed(t)
    }

    /// Builds a tree whose root has one edge per (action, tasks).
    fn fan(edges: &[(&str, &[&str])]) -> ActTree {
        let root = state("home", &["a", "b", "c"]);
        let mut tree = ActTree::new("app", &root);
        for (rid, tasks) in edges {
            for t in *tasks {
                let steps = vec![(root.clone(), click(rid)), (state(rid, &[]), Action::done())];
                tree.merge(&steps, t, &HashEmbedder::default()).unwrap();
            }
        }
        tree
    }

    #[test]
    fn lookup_absent_fingerprint_misses() {
        let tree = fan(&[("a", &["open a"])]);
        let d = acttree_lookup(&tree, ROOT, Fingerprint::from_raw(1), &embed("open a"), 0, None, &ReuseConfig::default());
        assert_eq!(d.verdict, Verdict::Miss);
        let d = acttree_lookup(&tree, 99, tree.root_fingerprint(), &embed("open a"), 0, None, &ReuseConfig::default());
        assert_eq!(d.verdict, Verdict::Miss);
    }

    #[test]
    fn lookup_identical_text_reuses() {
        let tree = fan(&[("a", &["open the a page"])]);
        let d = acttree_lookup(
            &tree,
            ROOT,
            tree.root_fingerprint(),
            &embed("open the a page"),
            0,
            None,
            &ReuseConfig::default(),
        );
        assert!(d.is_reuse());
        assert!((d.similarity - 1.0).abs() < 1e-6);
        assert!((d.threshold_used - 0.55).abs() < 1e-12);
    }

    /// Unit vectors with a chosen cosine to `q = e0`.
    fn at_cos(c: f64) -> Embedding {
        let s = libm::sqrt(1.0 - c * c);
        Embedding(vec![c as f32, s as f32, 0.0])
    }

    #[test]
    fn depth_threshold_blocks_weak_best_edge() {
        let mut tree = fan(&[("a", &["x"]), ("b", &["y"])]);
        let n = tree.nodes.get_mut(&ROOT).unwrap();
        n.edges[0].task_embeddings = vec![at_cos(0.70)];
        n.edges[1].task_embeddings = vec![at_cos(0.60)];
        let q = Embedding(vec![1.0, 0.0, 0.0]);
        let cfg = ReuseConfig::default();
        // Oracle: tau(4) = 0.55 + 4 * 0.05 = 0.75 > 0.70.
        let d = acttree_lookup(&tree, ROOT, tree.root_fingerprint(), &q, 4, None, &cfg);
        assert_eq!(d.verdict, Verdict::Miss);
        assert!((d.threshold_used - 0.75).abs() < 1e-9);
        assert!((d.similarity - 0.70).abs() < 1e-6);
        let d = acttree_lookup(&tree, ROOT, tree.root_fingerprint(), &q, 2, None, &cfg);
        assert!(matches!(d.verdict, Verdict::Reuse { edge: 0, .. }));
        assert!((cfg.threshold(100) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_busier_edge() {
        let mut tree = fan(&[("a", &["t1"]), ("b", &["t2", "t3"])]);
        let n = tree.nodes.get_mut(&ROOT).unwrap();
        n.edges[0].task_embeddings = vec![at_cos(0.8)];
        n.edges[1].task_embeddings = vec![at_cos(0.8), at_cos(0.8)];
        let q = Embedding(vec![1.0, 0.0, 0.0]);
        let d = acttree_lookup(&tree, ROOT, tree.root_fingerprint(), &q, 0, None, &ReuseConfig::default());
        assert!(matches!(d.verdict, Verdict::Reuse { edge: 1, .. }));
    }

    #[test]
    fn grounding_guard_skips_foreign_text() {
        let root = state("home", &["box"]);
        let mut tree = ActTree::new("app", &root);
        let ty = Action::type_text(Selector::new("box", "Button", "Go"), "usb cable");
        tree.merge(
            &[(root.clone(), ty), (root.clone(), Action::done())],
            "check the price of usb cable",
            &HashEmbedder::default(),
        )
        .unwrap();
        let task = "check the price of desk lamp";
        let cfg = ReuseConfig::default();
        let fp = tree.root_fingerprint();
        assert!(acttree_lookup(&tree, ROOT, fp, &embed(task), 0, None, &cfg).is_reuse());
        assert!(!acttree_lookup(&tree, ROOT, fp, &embed(task), 0, Some(task), &cfg).is_reuse());
    }

    fn linear(rids: &[&str]) -> Vec<(UIState, Action)> {
        let mut steps = vec![(state("s0", &["a", "b", "c"]), click(rids[0]))];
        for (i, r) in rids.iter().enumerate().skip(1) {
            steps.push((state(&format!("s{i}"), &["a", "b", "c", rids[i - 1]]), click(r)));
        }
        steps.push((state("end", &[]), Action::done()));
        steps
    }

    #[test]
    fn identical_traces_share_every_edge() {
        let e = HashEmbedder::default();
        let steps = linear(&["a", "b", "c"]);
        let mut tree = ActTree::new("app", &steps[0].0);
        tree.merge(&steps, "one", &e).unwrap();
        let shape = tree.node_count();
        let stats = tree.merge(&steps, "two", &e).unwrap();
        assert_eq!(stats, MergeStats { shared_edges: 4, new_edges: 0 });
        assert_eq!(tree.node_count(), shape);
        for n in tree.nodes.values() {
            for edge in &n.edges {
                assert_eq!(edge.task_list, ["one", "two"]);
            }
        }
    }

    #[test]
    fn divergent_traces_branch() {
        let e = HashEmbedder::default();
        let a = linear(&["a", "b", "c", "a"]);
        let mut b = a.clone();
        b[3].1 = click("b");
        let mut tree = ActTree::new("app", &a[0].0);
        tree.merge(&a, "one", &e).unwrap();
        let stats = tree.merge(&b, "two", &e).unwrap();
        assert_eq!(stats.shared_edges, 3);
        assert_eq!(tree.paths().len(), 2);
        let branching: Vec<_> = tree.nodes.iter().filter(|(_, n)| n.edges.len() == 2).map(|(id, _)| tree.depth_of(*id)).collect();
        assert_eq!(branching, [3]);
    }

    #[test]
    fn conflicting_child_is_rejected_untouched() {
        let e = HashEmbedder::default();
        let a = linear(&["a", "b"]);
        let mut tree = ActTree::new("app", &a[0].0);
        tree.merge(&a, "one", &e).unwrap();
        let before = tree.clone();
        let mut b = a.clone();
        b[1].0 = state("elsewhere", &["q"]);
        assert!(matches!(tree.merge(&b, "two", &e), Err(MergeError::MergeConflict { depth: 0, .. })));
        assert_eq!(tree, before);
        let mut c = a.clone();
        c[0].0 = state("other", &[]);
        assert!(matches!(tree.merge(&c, "three", &e), Err(MergeError::RootMismatch { .. })));
    }

    #[test]
    fn remove_edge_drops_subtree() {
        let e = HashEmbedder::default();
        let steps = linear(&["a", "b", "c"]);
        let mut tree = ActTree::new("app", &steps[0].0);
        tree.merge(&steps, "one", &e).unwrap();
        let first_child = tree.nodes[&ROOT].edges[0].child;
        assert_eq!(tree.remove_edge(first_child, 0), 3);
        assert_eq!(tree.node_count(), 2);
        assert_eq!(tree.remove_edge(first_child, 0), 0);
    }

    fn chain_template() -> ExperienceTemplate {
        let hint = |a: &Action| Some(ActionHint::from_action(a));
        ExperienceTemplate {
            id: "t".into(),
            key_description: "price".into(),
            level: TemplateLevel::Low,
            app_id: Some("app".into()),
            steps: vec![
                TemplateStep {
                    index: 0,
                    kind: StepKind::Invariant,
                    instruction: "open".into(),
                    slot_refs: vec![],
                    action_hint: hint(&Action::launch("app")),
                },
                TemplateStep {
                    index: 1,
                    kind: StepKind::Variable,
                    instruction: "type {item}".into(),
                    slot_refs: vec!["item".into()],
                    action_hint: hint(&Action::type_text(Selector::new("box", "EditText", ""), "{item}")),
                },
            ],
            slots: vec![SlotSpec::required("item")],
            subtasks: None,
        }
    }

    fn item(v: &str) -> BTreeMap<String, String> {
        BTreeMap::from([("item".to_string(), v.to_string())])
    }

    #[test]
    fn chain_lookup_rules() {
        let mut c = ActChain::for_template(&chain_template());
        let launch = Action::launch("app");
        let ty = Action::type_text(Selector::new("box", "EditText", ""), "DJI Action 5");
        assert_eq!(c.record(0, &item("ignored"), &launch), Some(ChainUpdate::Inserted));
        assert_eq!(c.record(1, &item("DJI Action 5"), &ty), Some(ChainUpdate::Inserted));
        assert_eq!(c.entries[0].variants[0].params, BTreeMap::new());
        assert_eq!(actchain_lookup(&c, 0, &item("anything")), Some(&launch));
        assert_eq!(actchain_lookup(&c, 1, &item(" DJI Action 5 ")), Some(&ty));
        assert_eq!(actchain_lookup(&c, 1, &item("iPhone 15")), None);
        assert_eq!(actchain_lookup(&c, 7, &item("x")), None);
        assert!(c.remove_variant(1, &item("DJI Action 5")));
        assert_eq!(actchain_lookup(&c, 1, &item("DJI Action 5")), None);
    }

    #[test]
    fn chain_conflicts_need_confirmation() {
        let mut c = ActChain::for_template(&chain_template());
        let old = Action::launch("app");
        let mut new = Action::launch("app");
        new.params.insert("cold".into(), "1".into());
        c.record(0, &BTreeMap::new(), &old);
        assert_eq!(c.record(0, &BTreeMap::new(), &new), Some(ChainUpdate::Flagged));
        assert_eq!(c.lookup(0, &BTreeMap::new()), Some(&old));
        assert_eq!(c.flagged(), [0]);
        assert_eq!(c.record(0, &BTreeMap::new(), &new), Some(ChainUpdate::Promoted));
        assert_eq!(c.lookup(0, &BTreeMap::new()), Some(&new));
        assert!(c.flagged().is_empty());
    }

    #[test]
    fn verify_rebinds_or_goes_stale() {
        let live = state("home", &["x", "a"]);
        let cached = Action::click(Selector {
            path: vec![0],
            ..Selector::new("a", "Button", "Go")
        });
        let v = verify_action(&cached, &live, &MatchConfig::default()).unwrap();
        assert_eq!(v.target.unwrap().path, [1]);

        // Renamed button: rid + class + a third of the text term.
        let renamed = UIState::new(
            "app",
            "home",
            UIElement::new("root", "FrameLayout", "", Rect::new(0, 0, 100, 100))
                .with_children(vec![UIElement::new("a", "Button", "Gone", Rect::new(0, 0, 10, 10))]),
        );
        // Oracle: levenshtein(go, gone) = 2, sim = 1 - 2/4 = 0.5; 0.7 + 0.15 >= 0.8.
        assert!(verify_action(&cached, &renamed, &MatchConfig::default()).is_ok());

        let gone = state("home", &["x"]);
        assert!(verify_action(&cached, &gone, &MatchConfig::default()).is_err());
        assert!(verify_action(&Action::done(), &gone, &MatchConfig::default()).is_ok());
    }

    #[test]
    fn reuse_rate_counts() {
        let s = state("s", &[]);
        let mk = |origins: Vec<StepOrigin>| TraceRecord {
            task_text: "t".into(),
            steps: origins.iter().map(|_| (s.clone(), Action::back())).collect(),
            outcome: Outcome::Success,
            annotations: origins,
        };
        assert_eq!(reuse_rate(&mk(vec![StepOrigin::Oracle; 4])), 0.0);
        let mut o = vec![StepOrigin::ActtreeReuse; 4];
        o.extend([StepOrigin::ActchainReuse; 3]);
        o.extend([StepOrigin::Oracle, StepOrigin::UserCorrection, StepOrigin::Oracle]);
        assert!((reuse_rate(&mk(o)) - 0.7).abs() < 1e-12);
        assert_eq!(reuse_rate(&mk(vec![])), 0.0);
    }

    /// States are a function of the action prefix, so merges never conflict.
    fn trace_from(script: &[u8]) -> Vec<(UIState, Action)> {
        let mut steps = Vec::new();
        let mut prefix = String::new();
        for (i, a) in script.iter().enumerate() {
            let rids: Vec<String> = (0..=(prefix.len() % 3)).map(|k| format!("r{k}")).collect();
            let refs: Vec<&str> = rids.iter().map(String::as_str).collect();
            let mut st = if i == 0 { state("root", &["r0"]) } else { state(&prefix, &refs) };
            st.fingerprint = Fingerprint::from_raw(text_hash(&prefix));
            steps.push((st, click(&format!("r{}", a % 3))));
            prefix.push(char::from(b'a' + a % 3));
        }
        let mut end = state(&prefix, &[]);
        end.fingerprint = Fingerprint::from_raw(text_hash(&prefix));
        steps.push((end, Action::done()));
        steps
    }

    fn text_hash(s: &str) -> u64 {
        use core::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write(s.as_bytes());
        h.finish()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn merge_is_idempotent(scripts in proptest::collection::vec(proptest::collection::vec(0u8..3, 1..6), 1..6)) {
            let e = HashEmbedder::new(16);
            let root = trace_from(&[0])[0].0.clone();
            let mut once = ActTree::new("app", &root);
            let mut twice = ActTree::new("app", &root);
            for (i, s) in scripts.iter().enumerate() {
                let steps = trace_from(s);
                let task = format!("task {i}");
                once.merge(&steps, &task, &e).unwrap();
                twice.merge(&steps, &task, &e).unwrap();
                twice.merge(&steps, &task, &e).unwrap();
            }
            prop_assert_eq!(once.shape(), twice.shape());
            // Every stored path is a prefix-closed union of the inputs.
            for (fps, _) in once.paths() {
                prop_assert_eq!(fps[0], root.fingerprint);
            }
            for n in once.nodes.values() {
                for edge in &n.edges {
                    prop_assert!(!edge.task_list.is_empty());
                    prop_assert_eq!(edge.task_list.len(), edge.task_embeddings.len());
                }
            }
        }

        #[test]
        fn raising_tau_never_adds_reuse(
            sims in proptest::collection::vec(0.0f64..1.0, 1..5),
            depth in 0usize..8,
            t0 in 0.3f64..0.9,
            bump in 0.0f64..0.3,
        ) {
            let mut tree = fan(&[("a", &["x"]), ("b", &["y"]), ("c", &["z"])]);
            let n = tree.nodes.get_mut(&ROOT).unwrap();
            for (i, e) in n.edges.iter_mut().enumerate() {
                e.task_embeddings = vec![at_cos(sims[i % sims.len()])];
            }
            let q = Embedding(vec![1.0, 0.0, 0.0]);
            let fp = tree.root_fingerprint();
            let lo = ReuseConfig { tau0: t0, ..ReuseConfig::default() };
            let hi = ReuseConfig { tau0: t0 + bump, ..ReuseConfig::default() };
            let a = acttree_lookup(&tree, ROOT, fp, &q, depth, None, &lo);
            let b = acttree_lookup(&tree, ROOT, fp, &q, depth, None, &hi);
            prop_assert!(b.similarity == a.similarity);
            prop_assert!(!b.is_reuse() || a.is_reuse());
            if let Verdict::Reuse { edge, .. } = &b.verdict {
                prop_assert_eq!(&a.verdict, &Verdict::Reuse { action: tree.nodes[&ROOT].edges[*edge].action.clone(), edge: *edge });
            }
            if a.is_reuse() {
                prop_assert!(a.similarity + SIM_EPSILON >= a.threshold_used);
            }
        }
    }
}
