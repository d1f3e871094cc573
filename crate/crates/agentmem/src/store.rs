//! On-disk layout of one user's memories:
//!
//! ```text
//! <root>/graph.json            profile graph (nodes + edges)
//! <root>/templates/<id>.json   one experience template per file
//! <root>/acttree/<app>.json    one ActTree per app
//! <root>/actchain/<id>.json    one ActChain per template
//! <root>/sessions/<id>.json    recorded sessions
//! ```
//!
//! Every file is `{"schema_version": N, "body": ...}`. Embeddings are not
//! stored for the graph and templates; they are recomputed on load.

use std::fs;
use std::path::{Path, PathBuf};

use agentmem_core::action_memory::{ActChain, ActTree, ActionMemory};
use agentmem_core::agent_rr::SessionRecord;
use agentmem_core::embedding::Embedder;
use agentmem_core::experience_memory::{ExperienceTemplate, TemplateError, TemplateStore};
use agentmem_core::profile_memory::{DisGraph, GraphError, NodeView, ProfileConfig, ProfileMemory};
use agentmem_core::scheduler::Memories;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch { path: PathBuf, found: u64, expected: u32 },
    #[error("{path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: u32,
    body: &'a T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<NodeView>,
    pub edges: Vec<(String, String)>,
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| StoreError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut text = serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        body,
    })
    .expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let found = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let body = v.get_mut("body").map(Value::take).ok_or_else(|| corrupt("missing body".into()))?;
    serde_json::from_value(body).map_err(|e| corrupt(e.to_string()))
}

/// File name for an id: anything outside `[A-Za-z0-9._@~+-]` becomes `_`.
pub fn file_name(id: &str) -> String {
    let mut s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._@~+-".contains(c) { c } else { '_' })
        .collect();
    s.push_str(".json");
    s
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let rd = fs::read_dir(dir).map_err(|source| StoreError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for e in rd {
        let p = e
            .map_err(|source| StoreError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if p.extension().is_some_and(|x| x == "json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MemoryDir {
    pub root: PathBuf,
}

impl MemoryDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.root.join("graph.json")
    }

    pub fn save_graph(&self, g: &DisGraph) -> Result<(), StoreError> {
        write_json(
            &self.graph_path(),
            &GraphFile {
                nodes: g.views(),
                edges: g.edges().cloned().collect(),
            },
        )
    }

    pub fn load_graph(&self, embedder: &dyn Embedder) -> Result<DisGraph, StoreError> {
        let p = self.graph_path();
        if !p.exists() {
            return Ok(DisGraph::new(embedder.dim()));
        }
        let f: GraphFile = read_json(&p)?;
        Ok(DisGraph::from_parts(&f.nodes, &f.edges, embedder)?)
    }

    pub fn save_templates(&self, store: &TemplateStore) -> Result<(), StoreError> {
        for t in store.iter() {
            write_json(&self.root.join("templates").join(file_name(&t.id)), t)?;
        }
        Ok(())
    }

    pub fn load_templates(&self, embedder: &dyn Embedder) -> Result<TemplateStore, StoreError> {
        let mut store = TemplateStore::new(embedder.dim());
        for p in json_files(&self.root.join("templates"))? {
            let t: ExperienceTemplate = read_json(&p)?;
            store.store(t, embedder)?;
        }
        Ok(store)
    }

    pub fn save_actions(&self, m: &ActionMemory) -> Result<(), StoreError> {
        write_json(&self.root.join("actions.json"), &m.config)?;
        for (app, t) in &m.trees {
            write_json(&self.root.join("acttree").join(file_name(app)), t)?;
        }
        for (id, c) in &m.chains {
            write_json(&self.root.join("actchain").join(file_name(id)), c)?;
        }
        Ok(())
    }

    pub fn load_actions(&self) -> Result<ActionMemory, StoreError> {
        let mut m = ActionMemory::default();
        let cfg = self.root.join("actions.json");
        if cfg.exists() {
            m.config = read_json(&cfg)?;
        }
        for p in json_files(&self.root.join("acttree"))? {
            let t: ActTree = read_json(&p)?;
            m.trees.insert(t.app_id.clone(), t);
        }
        for p in json_files(&self.root.join("actchain"))? {
            let c: ActChain = read_json(&p)?;
            m.chains.insert(c.template_id.clone(), c);
        }
        Ok(m)
    }

    pub fn save_session(&self, r: &SessionRecord) -> Result<PathBuf, StoreError> {
        let p = self.root.join("sessions").join(file_name(&r.id));
        write_json(&p, r)?;
        Ok(p)
    }

    pub fn sessions(&self) -> Result<Vec<PathBuf>, StoreError> {
        json_files(&self.root.join("sessions"))
    }

    pub fn save(&self, m: &Memories) -> Result<(), StoreError> {
        self.save_graph(&m.profile.graph)?;
        self.save_templates(&m.templates)?;
        self.save_actions(&m.actions)
    }

    pub fn load(&self, embedder: &dyn Embedder) -> Result<Memories, StoreError> {
        Ok(Memories {
            profile: ProfileMemory::new(self.load_graph(embedder)?, ProfileConfig::default()),
            templates: self.load_templates(embedder)?,
            actions: self.load_actions()?,
        })
    }
}

pub fn load_session(path: &Path) -> Result<SessionRecord, StoreError> {
    read_json(path)
}
