//! The five model roles behind plain request/response interfaces, plus a
//! call log so callers can assert exactly how many model calls happened.

pub mod mock;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::experience_memory::ExperienceTemplate;
use crate::profile_memory::{ChangeSet, NodeView, SplitProposal};
use crate::ui_model::{Action, TraceRecord, UIState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ProfileUpdater,
    ExperienceGenerator,
    TaskRewriter,
    Operator,
    Judge,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::ProfileUpdater,
        Role::ExperienceGenerator,
        Role::TaskRewriter,
        Role::Operator,
        Role::Judge,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::ProfileUpdater => "profile_updater",
            Role::ExperienceGenerator => "experience_generator",
            Role::TaskRewriter => "task_rewriter",
            Role::Operator => "operator",
            Role::Judge => "judge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub role: Role,
    pub request: String,
    pub response: String,
}

/// Per-role monotone counters and an optional append-only transcript.
#[derive(Default)]
pub struct OracleCallLog {
    counts: [AtomicUsize; 5],
    record: AtomicBool,
    transcripts: spin::Mutex<Vec<Transcript>>,
}

impl fmt::Debug for OracleCallLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for r in Role::ALL {
            m.entry(&r, &self.count(r));
        }
        m.finish()
    }
}

impl OracleCallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_recording(&self, on: bool) {
        self.record.store(on, Ordering::SeqCst);
    }

    pub fn count(&self, role: Role) -> usize {
        self.counts[role.slot()].load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        Role::ALL.iter().map(|r| self.count(*r)).sum()
    }

    pub fn snapshot(&self) -> BTreeMap<Role, usize> {
        Role::ALL.iter().map(|r| (*r, self.count(*r))).collect()
    }

    pub fn transcripts(&self) -> Vec<Transcript> {
        self.transcripts.lock().clone()
    }

    fn note<Q: fmt::Debug, A: fmt::Debug>(&self, role: Role, request: &Q, response: &A) {
        self.counts[role.slot()].fetch_add(1, Ordering::SeqCst);
        if self.record.load(Ordering::SeqCst) {
            self.transcripts.lock().push(Transcript {
                role,
                request: format!("{request:?}"),
                response: format!("{response:?}"),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub observations: Vec<String>,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRequest {
    pub concept: NodeView,
    pub entities: Vec<NodeView>,
    pub threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub trace: TraceRecord,
    pub similar: Vec<ExperienceTemplate>,
    /// Earlier successful traces of the same task family.
    pub references: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub original: ExperienceTemplate,
    pub trace: TraceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub task: String,
    pub template: Option<ExperienceTemplate>,
    pub profile_context: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResponse {
    pub rewritten_task: String,
    pub slot_values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRequest {
    pub task: String,
    pub state: UIState,
    pub history: Vec<Action>,
    /// Concrete action suggested by a low-level template step, if any.
    pub hint: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("operator failed: {reason}")]
pub struct OperatorFailed {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredElement {
    pub profile_element: String,
    pub expected_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileCheck {
    pub profile_element: String,
    pub expected_value: String,
    pub matched: bool,
    pub evidence: String,
}

pub trait ProfileUpdater: Send + Sync {
    fn propose(&self, req: &UpdateRequest) -> ChangeSet;
    fn split(&self, req: &SplitRequest) -> SplitProposal;
}

pub trait ExperienceGenerator: Send + Sync {
    fn synthesize(&self, req: &SynthesisRequest) -> ExperienceTemplate;
    fn refine(&self, req: &RefineRequest) -> ExperienceTemplate;
}

pub trait TaskRewriter: Send + Sync {
    fn rewrite(&self, req: &RewriteRequest) -> RewriteResponse;
}

pub trait Operator: Send + Sync {
    fn next_action(&self, req: &OperatorRequest) -> Result<Action, OperatorFailed>;
}

pub trait Judge: Send + Sync {
    fn check(&self, required: &[RequiredElement], rewritten_task: &str) -> Vec<ProfileCheck>;
}

/// One handle per role plus the shared call log. Every call made through
/// these methods is counted.
#[derive(Clone)]
pub struct Oracles {
    pub updater: Arc<dyn ProfileUpdater>,
    pub generator: Arc<dyn ExperienceGenerator>,
    pub rewriter: Arc<dyn TaskRewriter>,
    pub operator: Arc<dyn Operator>,
    pub judge: Arc<dyn Judge>,
    pub log: Arc<OracleCallLog>,
}

impl fmt::Debug for Oracles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Oracles").field("log", &self.log).finish_non_exhaustive()
    }
}

impl Default for Oracles {
    fn default() -> Self {
        Self {
            updater: Arc::new(mock::NullUpdater),
            generator: Arc::new(mock::DiffGenerator),
            rewriter: Arc::new(mock::PatternRewriter::default()),
            operator: Arc::new(mock::NullOperator),
            judge: Arc::new(mock::TokenJudge),
            log: Arc::new(OracleCallLog::new()),
        }
    }
}

impl Oracles {
    pub fn with_updater(mut self, u: Arc<dyn ProfileUpdater>) -> Self {
        self.updater = u;
        self
    }

    pub fn with_generator(mut self, g: Arc<dyn ExperienceGenerator>) -> Self {
        self.generator = g;
        self
    }

    pub fn with_rewriter(mut self, r: Arc<dyn TaskRewriter>) -> Self {
        self.rewriter = r;
        self
    }

    pub fn with_operator(mut self, o: Arc<dyn Operator>) -> Self {
        self.operator = o;
        self
    }

    pub fn with_judge(mut self, j: Arc<dyn Judge>) -> Self {
        self.judge = j;
        self
    }

    /// Same oracles, fresh counters.
    pub fn with_fresh_log(mut self) -> Self {
        self.log = Arc::new(OracleCallLog::new());
        self
    }

    pub fn propose(&self, req: &UpdateRequest) -> ChangeSet {
        let out = self.updater.propose(req);
        self.log.note(Role::ProfileUpdater, req, &out);
        out
    }

    pub fn split(&self, req: &SplitRequest) -> SplitProposal {
        let out = self.updater.split(req);
        self.log.note(Role::ProfileUpdater, req, &out);
        out
    }

    pub fn synthesize(&self, req: &SynthesisRequest) -> ExperienceTemplate {
        let out = self.generator.synthesize(req);
        self.log.note(Role::ExperienceGenerator, req, &out);
        out
    }

    pub fn refine(&self, req: &RefineRequest) -> ExperienceTemplate {
        let out = self.generator.refine(req);
        self.log.note(Role::ExperienceGenerator, req, &out);
        out
    }

    pub fn rewrite(&self, req: &RewriteRequest) -> RewriteResponse {
        let out = self.rewriter.rewrite(req);
        self.log.note(Role::TaskRewriter, req, &out);
        out
    }

    pub fn next_action(&self, req: &OperatorRequest) -> Result<Action, OperatorFailed> {
        let out = self.operator.next_action(req);
        self.log.note(Role::Operator, req, &out);
        out
    }

    pub fn check(&self, required: &[RequiredElement], rewritten_task: &str) -> Vec<ProfileCheck> {
        let out = self.judge.check(required, rewritten_task);
        self.log.note(Role::Judge, &(required, rewritten_task), &out);
        out
    }
}
