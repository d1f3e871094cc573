//! User-profile store: a two-kind graph of concepts and entities joined by
//! unlabeled edges, updated through one oracle call per observation batch and
//! queried by breadth-first expansion with no oracle calls at all.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, VectorIndex};
use crate::oracles::{Oracles, SplitRequest, UpdateRequest};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Concept,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: String,
    pub name: String,
    pub embedding: Embedding,
    pub entity_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub name: String,
    pub attributes: BTreeMap<String, String>,
    pub embedding: Embedding,
}

impl EntityNode {
    fn embedding_text(name: &str, attributes: &BTreeMap<String, String>) -> String {
        let mut s = String::from(name);
        for (k, v) in attributes {
            s.push(' ');
            s.push_str(k);
            s.push(' ');
            s.push_str(v);
        }
        s
    }
}

/// Read-only view of a node handed to oracles and persistence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: String,
    pub kind: NodeKind,
    pub name: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// A batch of graph mutations applied all-or-nothing.
///
/// Inserting an id that already exists with the same kind is an upsert: the
/// name is replaced and attributes are merged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    #[serde(default)]
    pub concept_insertions: Vec<ConceptSpec>,
    #[serde(default)]
    pub entity_insertions: Vec<EntitySpec>,
    /// entity id -> attribute key -> new value (`None` deletes the key).
    #[serde(default)]
    pub entity_updates: BTreeMap<String, BTreeMap<String, Option<String>>>,
    #[serde(default)]
    pub new_edges: Vec<(String, String)>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.concept_insertions.is_empty()
            && self.entity_insertions.is_empty()
            && self.entity_updates.is_empty()
            && self.new_edges.is_empty()
    }

    /// Appends `other`; later entries win on conflicting upserts.
    pub fn extend(&mut self, other: ChangeSet) {
        self.concept_insertions.extend(other.concept_insertions);
        self.entity_insertions.extend(other.entity_insertions);
        for (id, patch) in other.entity_updates {
            self.entity_updates.entry(id).or_default().extend(patch);
        }
        self.new_edges.extend(other.new_edges);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProposal {
    pub subconcepts: Vec<ConceptSpec>,
    /// (entity id, subconcept id)
    pub assignment: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("empty node id")]
    EmptyId,
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("{0:?} is not an entity")]
    NotAnEntity(String),
    #[error("{0:?} already exists with a different kind")]
    KindConflict(String),
    #[error("entity-entity edge {0:?} -> {1:?}")]
    EntityEntityEdge(String, String),
    #[error("self loop on {0:?}")]
    SelfLoop(String),
    #[error("embedding dimension {got} does not match graph dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("observation batch is empty")]
    EmptyObservations,
    #[error("oracle change set rejected: {0}")]
    OracleChangeSetInvalid(GraphError),
    #[error("oracle split of {concept:?} rejected: {reason}")]
    OracleSplitInvalid { concept: String, reason: String },
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisGraph {
    concepts: BTreeMap<String, ConceptNode>,
    entities: BTreeMap<String, EntityNode>,
    /// Entity edges are stored entity -> concept; concept pairs in id order.
    edges: BTreeSet<(String, String)>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
    index: VectorIndex,
}

impl DisGraph {
    pub fn new(dim: usize) -> Self {
        Self {
            concepts: BTreeMap::new(),
            entities: BTreeMap::new(),
            edges: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            index: VectorIndex::new(dim),
        }
    }

    /// Rebuilds a graph from persisted parts, rejecting anything that breaks
    /// the edge rules. Embeddings and entity counts are recomputed.
    pub fn from_parts(
        nodes: &[NodeView],
        edges: &[(String, String)],
        embedder: &dyn Embedder,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(embedder.dim());
        let mut cs = ChangeSet::default();
        for n in nodes {
            if g.kind_of(&n.id).is_some() || cs_has(&cs, &n.id) {
                return Err(GraphError::KindConflict(n.id.clone()));
            }
            match n.kind {
                NodeKind::Concept => cs.concept_insertions.push(ConceptSpec {
                    id: n.id.clone(),
                    name: n.name.clone(),
                }),
                NodeKind::Entity => cs.entity_insertions.push(EntitySpec {
                    id: n.id.clone(),
                    name: n.name.clone(),
                    attributes: n.attributes.clone(),
                }),
            }
        }
        cs.new_edges = edges.to_vec();
        g.apply(&cs, embedder)?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn node_count(&self) -> usize {
        self.concepts.len() + self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    pub fn concepts(&self) -> impl Iterator<Item = &ConceptNode> {
        self.concepts.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityNode> {
        self.entities.values()
    }

    pub fn concept(&self, id: &str) -> Option<&ConceptNode> {
        self.concepts.get(id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.get(id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &(String, String)> {
        self.edges.iter()
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn kind_of(&self, id: &str) -> Option<NodeKind> {
        if self.concepts.contains_key(id) {
            Some(NodeKind::Concept)
        } else if self.entities.contains_key(id) {
            Some(NodeKind::Entity)
        } else {
            None
        }
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &String> {
        self.adjacency.get(id).into_iter().flatten()
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }

    pub fn view(&self, id: &str) -> Option<NodeView> {
        if let Some(c) = self.concepts.get(id) {
            return Some(NodeView {
                id: c.id.clone(),
                kind: NodeKind::Concept,
                name: c.name.clone(),
                attributes: BTreeMap::new(),
            });
        }
        self.entities.get(id).map(|e| NodeView {
            id: e.id.clone(),
            kind: NodeKind::Entity,
            name: e.name.clone(),
            attributes: e.attributes.clone(),
        })
    }

    pub fn views(&self) -> Vec<NodeView> {
        self.concepts
            .keys()
            .chain(self.entities.keys())
            .filter_map(|id| self.view(id))
            .collect()
    }

    /// Entities attached directly to `concept`.
    pub fn entity_neighbors(&self, concept: &str) -> Vec<String> {
        self.neighbors(concept)
            .filter(|n| self.entities.contains_key(*n))
            .cloned()
            .collect()
    }

    /// Text a retrieval emits for a node: the concept name, or the entity
    /// name followed by its attributes.
    pub fn render(&self, id: &str) -> Option<String> {
        if let Some(c) = self.concepts.get(id) {
            return Some(if c.name.is_empty() { c.id.clone() } else { c.name.clone() });
        }
        let e = self.entities.get(id)?;
        let mut s = if e.name.is_empty() { e.id.clone() } else { e.name.clone() };
        if !e.attributes.is_empty() {
            let attrs: Vec<String> = e
                .attributes
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect();
            s.push_str(&format!(" ({})", attrs.join(", ")));
        }
        Some(s)
    }

    fn canonical_edge(&self, a: &str, b: &str, kinds: (NodeKind, NodeKind)) -> (String, String) {
        match kinds {
            (NodeKind::Concept, NodeKind::Entity) => (b.to_string(), a.to_string()),
            (NodeKind::Concept, NodeKind::Concept) if b < a => (b.to_string(), a.to_string()),
            _ => (a.to_string(), b.to_string()),
        }
    }

    /// Checks a change set against the current graph without mutating it.
    pub fn validate(&self, cs: &ChangeSet) -> Result<(), GraphError> {
        let mut kinds: BTreeMap<&str, NodeKind> = BTreeMap::new();
        for c in &cs.concept_insertions {
            Self::check_insert(&c.id, NodeKind::Concept, self.kind_of(&c.id), &mut kinds)?;
        }
        for e in &cs.entity_insertions {
            Self::check_insert(&e.id, NodeKind::Entity, self.kind_of(&e.id), &mut kinds)?;
        }
        let kind = |id: &str| kinds.get(id).copied().or_else(|| self.kind_of(id));
        for id in cs.entity_updates.keys() {
            match kind(id) {
                Some(NodeKind::Entity) => {}
                Some(NodeKind::Concept) => return Err(GraphError::NotAnEntity(id.clone())),
                None => return Err(GraphError::UnknownNode(id.clone())),
            }
        }
        for (a, b) in &cs.new_edges {
            let ka = kind(a).ok_or_else(|| GraphError::UnknownNode(a.clone()))?;
            let kb = kind(b).ok_or_else(|| GraphError::UnknownNode(b.clone()))?;
            if a == b {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            if ka == NodeKind::Entity && kb == NodeKind::Entity {
                return Err(GraphError::EntityEntityEdge(a.clone(), b.clone()));
            }
        }
        Ok(())
    }

    fn check_insert<'a>(
        id: &'a str,
        kind: NodeKind,
        existing: Option<NodeKind>,
        pending: &mut BTreeMap<&'a str, NodeKind>,
    ) -> Result<(), GraphError> {
        if id.is_empty() {
            return Err(GraphError::EmptyId);
        }
        let prior = pending.get(id).copied().or(existing);
        if prior.is_some_and(|k| k != kind) {
            return Err(GraphError::KindConflict(id.to_string()));
        }
        pending.insert(id, kind);
        Ok(())
    }

    /// Validates then applies `cs`; on error nothing changes. Returns the
    /// concepts that gained entity edges.
    pub fn apply(
        &mut self,
        cs: &ChangeSet,
        embedder: &dyn Embedder,
    ) -> Result<BTreeSet<String>, GraphError> {
        if embedder.dim() != self.dim() {
            return Err(GraphError::Dimension {
                expected: self.dim(),
                got: embedder.dim(),
            });
        }
        self.validate(cs)?;
        let mut reembed: BTreeSet<String> = BTreeSet::new();
        for c in &cs.concept_insertions {
            let node = self.concepts.entry(c.id.clone()).or_insert_with(|| ConceptNode {
                id: c.id.clone(),
                name: String::new(),
                embedding: Embedding::zeros(0),
                entity_count: 0,
            });
            node.name = c.name.clone();
            self.adjacency.entry(c.id.clone()).or_default();
            reembed.insert(c.id.clone());
        }
        for e in &cs.entity_insertions {
            let node = self.entities.entry(e.id.clone()).or_insert_with(|| EntityNode {
                id: e.id.clone(),
                name: String::new(),
                attributes: BTreeMap::new(),
                embedding: Embedding::zeros(0),
            });
            node.name = e.name.clone();
            node.attributes
                .extend(e.attributes.iter().map(|(k, v)| (k.clone(), v.clone())));
            self.adjacency.entry(e.id.clone()).or_default();
            reembed.insert(e.id.clone());
        }
        for (id, patch) in &cs.entity_updates {
            let node = self.entities.get_mut(id).expect("validated");
            for (k, v) in patch {
                match v {
                    Some(v) => {
                        node.attributes.insert(k.clone(), v.clone());
                    }
                    None => {
                        node.attributes.remove(k);
                    }
                }
            }
            reembed.insert(id.clone());
        }
        let mut touched = BTreeSet::new();
        for (a, b) in &cs.new_edges {
            let ka = self.kind_of(a).expect("validated");
            let kb = self.kind_of(b).expect("validated");
            let edge = self.canonical_edge(a, b, (ka, kb));
            if ka != kb {
                touched.insert(edge.1.clone());
            }
            self.insert_edge(edge);
        }
        for id in &reembed {
            self.reembed(id, embedder);
        }
        for c in &touched {
            self.recount(c);
        }
        Ok(touched)
    }

    fn insert_edge(&mut self, (a, b): (String, String)) {
        self.adjacency.entry(a.clone()).or_default().insert(b.clone());
        self.adjacency.entry(b.clone()).or_default().insert(a.clone());
        self.edges.insert((a, b));
    }

    fn remove_edge(&mut self, a: &str, b: &str) {
        self.edges.remove(&(a.to_string(), b.to_string()));
        self.edges.remove(&(b.to_string(), a.to_string()));
        if let Some(n) = self.adjacency.get_mut(a) {
            n.remove(b);
        }
        if let Some(n) = self.adjacency.get_mut(b) {
            n.remove(a);
        }
    }

    fn reembed(&mut self, id: &str, embedder: &dyn Embedder) {
        let v = if let Some(c) = self.concepts.get_mut(id) {
            c.embedding = embedder.embed(&c.name);
            c.embedding.clone()
        } else if let Some(e) = self.entities.get_mut(id) {
            e.embedding = embedder.embed(&EntityNode::embedding_text(&e.name, &e.attributes));
            e.embedding.clone()
        } else {
            return;
        };
        self.index.insert(id, v).expect("embedder dimension checked");
    }

    fn recount(&mut self, concept: &str) {
        let n = self.entity_neighbors(concept).len();
        if let Some(c) = self.concepts.get_mut(concept) {
            c.entity_count = n;
        }
    }

    /// Full structural check of the stored graph.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        for (a, b) in &self.edges {
            let ka = self.kind_of(a).ok_or_else(|| GraphError::UnknownNode(a.clone()))?;
            let kb = self.kind_of(b).ok_or_else(|| GraphError::UnknownNode(b.clone()))?;
            if a == b {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            if ka == NodeKind::Entity && kb == NodeKind::Entity {
                return Err(GraphError::EntityEntityEdge(a.clone(), b.clone()));
            }
        }
        for c in self.concepts.values() {
            if c.entity_count != self.entity_neighbors(&c.id).len() {
                return Err(GraphError::UnknownNode(format!("{} (stale entity_count)", c.id)));
            }
        }
        Ok(())
    }

    /// Nodes in `ids` plus every edge incident to them, for oracle context.
    fn neighborhood(&self, ids: &[String]) -> (Vec<NodeView>, Vec<(String, String)>) {
        let nodes = ids.iter().filter_map(|id| self.view(id)).collect();
        let mut edges = BTreeSet::new();
        for id in ids {
            for n in self.neighbors(id) {
                let kinds = (self.kind_of(id).unwrap(), self.kind_of(n).unwrap());
                edges.insert(self.canonical_edge(id, n, kinds));
            }
        }
        (nodes, edges.into_iter().collect())
    }
}

fn cs_has(cs: &ChangeSet, id: &str) -> bool {
    cs.concept_insertions.iter().any(|c| c.id == id) || cs.entity_insertions.iter().any(|e| e.id == id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub update_k: usize,
    pub retrieval_k: usize,
    pub token_budget: usize,
    pub split_threshold: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            update_k: 5,
            retrieval_k: 3,
            token_budget: 2000,
            split_threshold: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub concept: String,
    pub subconcepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub changes: ChangeSet,
    pub splits: Vec<SplitOutcome>,
    /// Concepts whose split proposal was rejected.
    pub failed_splits: Vec<String>,
}

/// Retrieves context, makes one updater call, applies its change set and
/// splits any concept the change pushed over the threshold.
pub fn update_profile(
    observations: &[String],
    graph: &mut DisGraph,
    config: &ProfileConfig,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<UpdateOutcome, ProfileError> {
    if observations.is_empty() {
        return Err(ProfileError::EmptyObservations);
    }
    let query = embedder.embed(&observations.join(" "));
    let ids: Vec<String> = graph
        .index
        .top_k(&query, config.update_k)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let (nodes, edges) = graph.neighborhood(&ids);
    let changes = oracles.propose(&UpdateRequest {
        observations: observations.to_vec(),
        nodes,
        edges,
    });
    let touched = graph
        .apply(&changes, embedder)
        .map_err(ProfileError::OracleChangeSetInvalid)?;
    let mut splits = Vec::new();
    let mut failed_splits = Vec::new();
    for concept in touched {
        match maybe_split(&concept, graph, config.split_threshold, oracles, embedder) {
            Ok(Some(s)) => splits.push(s),
            Ok(None) => {}
            Err(_) => failed_splits.push(concept),
        }
    }
    Ok(UpdateOutcome {
        changes,
        splits,
        failed_splits,
    })
}

/// Splits `concept_id` into oracle-proposed subconcepts when it has more
/// than `threshold` direct entities.
pub fn maybe_split(
    concept_id: &str,
    graph: &mut DisGraph,
    threshold: usize,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<Option<SplitOutcome>, ProfileError> {
    let concept = graph
        .concept(concept_id)
        .ok_or_else(|| ProfileError::UnknownConcept(concept_id.to_string()))?;
    if concept.entity_count <= threshold {
        return Ok(None);
    }
    let members = graph.entity_neighbors(concept_id);
    let proposal = oracles.split(&SplitRequest {
        concept: graph.view(concept_id).expect("exists"),
        entities: members.iter().filter_map(|id| graph.view(id)).collect(),
        threshold,
    });
    let invalid = |reason: String| ProfileError::OracleSplitInvalid {
        concept: concept_id.to_string(),
        reason,
    };
    let subs: BTreeSet<&str> = proposal.subconcepts.iter().map(|s| s.id.as_str()).collect();
    if subs.is_empty() || subs.len() != proposal.subconcepts.len() {
        return Err(invalid("subconcept ids empty or repeated".into()));
    }
    for s in &subs {
        if graph.kind_of(s).is_some() || s.is_empty() {
            return Err(invalid(format!("subconcept id {s:?} is not fresh")));
        }
    }
    let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
    for (entity, sub) in &proposal.assignment {
        if !members.contains(entity) {
            return Err(invalid(format!("{entity:?} is not a member")));
        }
        if !subs.contains(sub.as_str()) {
            return Err(invalid(format!("unknown subconcept {sub:?}")));
        }
        if assigned.insert(entity, sub).is_some() {
            return Err(invalid(format!("{entity:?} assigned twice")));
        }
    }
    if let Some(missing) = members.iter().find(|m| !assigned.contains_key(m.as_str())) {
        return Err(invalid(format!("{missing:?} unassigned")));
    }

    let mut cs = ChangeSet {
        concept_insertions: proposal.subconcepts.clone(),
        ..ChangeSet::default()
    };
    for s in &subs {
        cs.new_edges.push((s.to_string(), concept_id.to_string()));
    }
    for (entity, sub) in &assigned {
        cs.new_edges.push((entity.to_string(), sub.to_string()));
    }
    graph.apply(&cs, embedder).map_err(|e| invalid(e.to_string()))?;
    for m in &members {
        graph.remove_edge(m, concept_id);
    }
    graph.recount(concept_id);
    Ok(Some(SplitOutcome {
        concept: concept_id.to_string(),
        subconcepts: proposal.subconcepts.iter().map(|s| s.id.clone()).collect(),
    }))
}

/// A graph with its queue of observation batches not yet absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMemory {
    pub graph: DisGraph,
    pub config: ProfileConfig,
    pending: VecDeque<Vec<String>>,
    split_retry: BTreeSet<String>,
}

impl ProfileMemory {
    pub fn new(graph: DisGraph, config: ProfileConfig) -> Self {
        Self {
            graph,
            config,
            pending: VecDeque::new(),
            split_retry: BTreeSet::new(),
        }
    }

    pub fn observe(&mut self, batch: Vec<String>) {
        self.pending.push_back(batch);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn split_retry(&self) -> &BTreeSet<String> {
        &self.split_retry
    }

    /// Absorbs the oldest pending batch. A rejected batch stays queued.
    pub fn process_next(
        &mut self,
        oracles: &Oracles,
        embedder: &dyn Embedder,
    ) -> Option<Result<UpdateOutcome, ProfileError>> {
        let batch = self.pending.front()?.clone();
        let result = update_profile(&batch, &mut self.graph, &self.config, oracles, embedder);
        if let Ok(outcome) = &result {
            self.pending.pop_front();
            self.split_retry.extend(outcome.failed_splits.iter().cloned());
            for s in &outcome.splits {
                self.split_retry.remove(&s.concept);
            }
        }
        Some(result)
    }

    /// Re-attempts splits that were previously rejected.
    pub fn retry_splits(&mut self, oracles: &Oracles, embedder: &dyn Embedder) -> Vec<SplitOutcome> {
        let mut done = Vec::new();
        for c in core::mem::take(&mut self.split_retry) {
            match maybe_split(&c, &mut self.graph, self.config.split_threshold, oracles, embedder) {
                Ok(Some(s)) => done.push(s),
                Ok(None) | Err(ProfileError::UnknownConcept(_)) => {}
                Err(_) => {
                    self.split_retry.insert(c);
                }
            }
        }
        done
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub node_id: String,
    pub text: String,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub start: String,
    pub share: usize,
    pub items: Vec<ContextItem>,
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileContext {
    pub buckets: Vec<Bucket>,
    pub total_tokens: usize,
    /// Nodes dequeued from any breadth-first frontier, duplicates included.
    pub visited: usize,
}

impl ProfileContext {
    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(|b| b.items.is_empty())
    }

    pub fn items(&self) -> impl Iterator<Item = &ContextItem> {
        self.buckets.iter().flat_map(|b| b.items.iter())
    }

    pub fn start_nodes(&self) -> Vec<&str> {
        self.buckets.iter().map(|b| b.start.as_str()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items().any(|i| i.node_id == id)
    }

    /// One rendered node per line, bucket by bucket.
    pub fn text(&self) -> String {
        let lines: Vec<&str> = self.items().map(|i| i.text.as_str()).collect();
        lines.join("\n")
    }
}

/// Level-by-level expansion, lexicographic within each level, produced lazily.
struct LevelBfs<'g> {
    graph: &'g DisGraph,
    seen: BTreeSet<&'g str>,
    level: VecDeque<&'g str>,
    done_level: Vec<&'g str>,
    hops: usize,
}

impl<'g> LevelBfs<'g> {
    fn new(graph: &'g DisGraph, start: &'g str) -> Self {
        let mut seen = BTreeSet::new();
        seen.insert(start);
        Self {
            graph,
            seen,
            level: VecDeque::from([start]),
            done_level: Vec::new(),
            hops: 0,
        }
    }

    fn next(&mut self) -> Option<(&'g str, usize)> {
        if self.level.is_empty() {
            let mut next: BTreeSet<&'g str> = BTreeSet::new();
            for id in self.done_level.drain(..) {
                for n in self.graph.neighbors(id) {
                    if !self.seen.contains(n.as_str()) {
                        next.insert(n.as_str());
                    }
                }
            }
            if next.is_empty() {
                return None;
            }
            self.seen.extend(next.iter().copied());
            self.level = next.into_iter().collect();
            self.hops += 1;
        }
        let id = self.level.pop_front()?;
        self.done_level.push(id);
        Some((id, self.hops))
    }
}

/// Budget share of bucket `i` when `budget` is split over `k` buckets.
pub fn share(budget: usize, k: usize, i: usize) -> usize {
    budget / k + usize::from(i < budget % k)
}

/// Builds a bounded profile context for `task_text` without any oracle call.
pub fn retrieve_profile(
    task_text: &str,
    graph: &DisGraph,
    k: usize,
    token_budget: usize,
    embedder: &dyn Embedder,
) -> ProfileContext {
    let mut ctx = ProfileContext::default();
    if k == 0 || token_budget == 0 || graph.is_empty() {
        return ctx;
    }
    let starts = graph.index.top_k(&embedder.embed(task_text), k);
    let mut walkers: Vec<LevelBfs<'_>> = Vec::new();
    for (i, (id, _)) in starts.iter().enumerate() {
        let (start, _) = graph.adjacency.get_key_value(id.as_str()).expect("indexed node");
        walkers.push(LevelBfs::new(graph, start));
        ctx.buckets.push(Bucket {
            start: id.clone(),
            share: share(token_budget, k, i),
            items: Vec::new(),
            tokens: 0,
        });
    }
    let mut open: Vec<bool> = alloc::vec![true; walkers.len()];
    let mut emitted: BTreeSet<&str> = BTreeSet::new();
    while open.iter().any(|o| *o) {
        for (i, walker) in walkers.iter_mut().enumerate() {
            if !open[i] {
                continue;
            }
            loop {
                let Some((id, hops)) = walker.next() else {
                    open[i] = false;
                    break;
                };
                ctx.visited += 1;
                if emitted.contains(id) {
                    continue;
                }
                let text = graph.render(id).expect("known node");
                let cost = text::whitespace_tokens(&text);
                let bucket = &mut ctx.buckets[i];
                if bucket.tokens + cost > bucket.share {
                    open[i] = false;
                    break;
                }
                bucket.tokens += cost;
                bucket.items.push(ContextItem {
                    node_id: id.to_string(),
                    text,
                    hops,
                });
                emitted.insert(id);
                break;
            }
        }
    }
    ctx.total_tokens = ctx.buckets.iter().map(|b| b.tokens).sum();
    ctx
}
