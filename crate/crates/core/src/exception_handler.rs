//! User interventions during execution: interrupt detection at step
//! boundaries, suspension with full context, corrections, resumption and
//! template refinement.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent_rr::{replay, step_applies, HookDecision, RecordedStep, ReplayReport, ResumeState, Runtime, StepHook};
use crate::embedding::Embedder;
use crate::experience_memory::{ExperienceTemplate, PlannedSubtask, TemplateError, TemplateStep, TemplateStore};
use crate::oracles::{OperatorRequest, Oracles, RefineRequest};
use crate::sim_env::GuiEnvironment;
use crate::ui_model::{Action, Selector, StepOrigin, TraceRecord, UIState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptKind {
    PauseCommand,
    ConflictingManualAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptEvent {
    pub kind: InterruptKind,
    pub payload: Option<Action>,
    pub at_ms: u64,
}

/// Something the user does while the agent runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum UserSignal {
    Pause,
    Manual { action: Action },
}

/// When a scripted signal fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "on")]
pub enum Trigger {
    /// Before step `k` (0-based).
    Step { k: usize },
    /// Before the first step starting at or after this virtual time.
    Time { ms: u64 },
    /// When the agent is about to act on this element.
    Target { resource_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedSignal {
    pub trigger: Trigger,
    pub signal: UserSignal,
}

fn same_target(a: &Action, b: &Action) -> bool {
    match (&a.target, &b.target) {
        (Some(x), Some(y)) => x.resource_id == y.resource_id,
        (None, None) => true,
        _ => false,
    }
}

/// Pause always interrupts; a manual action interrupts unless it has the
/// planned action's kind and target.
pub fn check_interrupt(planned: &Action, signal: Option<&UserSignal>, at_ms: u64) -> Option<InterruptEvent> {
    match signal? {
        UserSignal::Pause => Some(InterruptEvent {
            kind: InterruptKind::PauseCommand,
            payload: None,
            at_ms,
        }),
        UserSignal::Manual { action } => (action.kind != planned.kind || !same_target(action, planned)).then(|| InterruptEvent {
            kind: InterruptKind::ConflictingManualAction,
            payload: Some(action.clone()),
            at_ms,
        }),
    }
}

/// Plays a signal script. Each signal fires at most once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedUser {
    pub script: Vec<ScriptedSignal>,
    #[serde(skip)]
    pub events: Vec<InterruptEvent>,
    #[serde(skip)]
    pub pre_empted: usize,
}

impl ScriptedUser {
    pub fn new(script: Vec<ScriptedSignal>) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    /// The latest interrupt, whose manual action (if any) is the correction.
    pub fn last_event(&self) -> Option<&InterruptEvent> {
        self.events.last()
    }
}

impl StepHook for ScriptedUser {
    fn before_step(&mut self, _: &UIState, planned: &Action, history: &[RecordedStep]) -> HookDecision {
        let now: u64 = history.iter().map(|s| s.duration_ms).sum();
        let pos = self.script.iter().position(|s| match &s.trigger {
            Trigger::Step { k } => *k == history.len(),
            Trigger::Time { ms } => now >= *ms,
            Trigger::Target { resource_id } => planned.target.as_ref().is_some_and(|t| t.resource_id == *resource_id),
        });
        let Some(pos) = pos else {
            return HookDecision::Proceed;
        };
        let signal = self.script.remove(pos).signal;
        match check_interrupt(planned, Some(&signal), now) {
            Some(e) => {
                self.events.push(e);
                HookDecision::Interrupt
            }
            None => {
                self.pre_empted += 1;
                HookDecision::PreEmpted
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExceptionError {
    #[error("a session is already suspended")]
    AlreadySuspended,
    #[error("nothing is suspended")]
    NotSuspended,
    #[error("the run was not interrupted")]
    NotInterrupted,
    #[error("a correction set must not be empty")]
    EmptyCorrections,
    #[error("operator failed: {0}")]
    OperatorFailed(String),
    #[error("correction {action} could not be applied: {reason}")]
    Correction { action: String, reason: String },
    #[error("refined template rejected: {0}")]
    OracleTemplateInvalid(TemplateError),
}

/// Everything needed to pick a suspended run back up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionContext {
    pub state: UIState,
    pub subtask: PlannedSubtask,
    pub history: Vec<RecordedStep>,
    /// Template cursor at suspension.
    pub cursor: usize,
    pub pending: Action,
    pub reason: InterruptKind,
}

impl ExecutionContext {
    pub fn remaining(&self) -> &[TemplateStep] {
        self.subtask.steps.get(self.cursor..).unwrap_or(&[])
    }

    pub fn filled_slots(&self) -> &BTreeMap<String, String> {
        &self.subtask.slot_values
    }

    /// Template steps already covered by the history plus the remaining
    /// ones give back every step of the plan.
    pub fn is_lossless(&self) -> bool {
        let mut seen: Vec<usize> = self.history.iter().filter_map(|s| s.template_step).collect();
        seen.extend(self.cursor..self.subtask.steps.len());
        seen.sort_unstable();
        seen.dedup();
        seen == (0..self.subtask.steps.len()).collect::<Vec<_>>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Correction {
    Action { action: Action },
    Amend { text: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResumeInfo {
    /// Operator calls made to repair the plan after corrections.
    pub regenerations: usize,
    pub cursor: usize,
}

/// Holds at most one suspended run.
#[derive(Debug, Default)]
pub struct ExceptionHandler {
    suspended: Option<ExecutionContext>,
}

impl ExceptionHandler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn context(&self) -> Option<&ExecutionContext> {
        self.suspended.as_ref()
    }

    pub fn suspend(
        &mut self,
        subtask: &PlannedSubtask,
        report: &ReplayReport,
        event: &InterruptEvent,
        state: UIState,
    ) -> Result<&ExecutionContext, ExceptionError> {
        if self.suspended.is_some() {
            return Err(ExceptionError::AlreadySuspended);
        }
        let i = report.interruption.as_ref().ok_or(ExceptionError::NotInterrupted)?;
        Ok(self.suspended.insert(ExecutionContext {
            state,
            subtask: subtask.clone(),
            history: report.record.steps.clone(),
            cursor: report.template_step,
            pending: i.planned.clone(),
            reason: event.kind,
        }))
    }

    /// Applies corrections, re-validates the plan against the new screen and
    /// continues the run to completion.
    pub fn resume(
        &mut self,
        corrections: &[Correction],
        rt: Runtime<'_>,
        env: &mut dyn GuiEnvironment,
        hook: &mut dyn StepHook,
    ) -> Result<(ReplayReport, ResumeInfo), ExceptionError> {
        if corrections.is_empty() {
            return Err(ExceptionError::EmptyCorrections);
        }
        let ctx = self.suspended.take().ok_or(ExceptionError::NotSuspended)?;
        let mut subtask = ctx.subtask;
        let mut history = ctx.history;
        let mut cursor = ctx.cursor;
        let mut covered = false;
        for c in corrections {
            match c {
                Correction::Amend { text } => {
                    subtask.task_text = format!("{} {}", subtask.task_text, text);
                }
                Correction::Action { action } => {
                    let state = env.observe();
                    let action = resolve(action, &state);
                    let matches_pending = action.kind == ctx.pending.kind && same_target(&action, &ctx.pending);
                    let out = env.step(&action).map_err(|e| ExceptionError::Correction {
                        action: action.describe(),
                        reason: e.to_string(),
                    })?;
                    let template_step = (cursor < subtask.steps.len() && !covered).then_some(cursor);
                    covered |= matches_pending;
                    history.push(RecordedStep {
                        state,
                        action,
                        origin: StepOrigin::UserCorrection,
                        template_step,
                        params: BTreeMap::new(),
                        duration_ms: out.duration_ms,
                    });
                }
            }
        }
        let cfg = rt.memory.config.matching;
        let mut info = ResumeInfo::default();
        let state = env.observe();
        let applies = |i: usize, s: &UIState| subtask.steps.get(i).is_some_and(|st| step_applies(st, s, &cfg));
        let corrected = history.last().is_some_and(|s| s.origin == StepOrigin::UserCorrection);
        if covered || (corrected && !applies(cursor, &state) && applies(cursor + 1, &state)) {
            cursor += 1;
        } else if cursor < subtask.steps.len() && !applies(cursor, &state) {
            // The screen moved away from the plan: ask the operator for one
            // step that gets back on track.
            let hint = subtask.steps[cursor].action_hint.as_ref().map(|h| h.to_action());
            info.regenerations += 1;
            let action = rt
                .oracles
                .next_action(&OperatorRequest {
                    task: subtask.task_text.clone(),
                    state: state.clone(),
                    history: history.iter().map(|s| s.action.clone()).collect(),
                    hint,
                })
                .map_err(|e| ExceptionError::OperatorFailed(e.reason))?;
            let out = env.step(&action).map_err(|e| ExceptionError::Correction {
                action: action.describe(),
                reason: e.to_string(),
            })?;
            history.push(RecordedStep {
                state,
                action,
                origin: StepOrigin::Oracle,
                template_step: None,
                params: BTreeMap::new(),
                duration_ms: out.duration_ms + rt.config.operator_latency_ms,
            });
        }
        info.cursor = cursor;
        let report = replay(
            &subtask,
            rt,
            env,
            hook,
            Some(ResumeState {
                history,
                template_step: cursor,
            }),
        );
        Ok((report, info))
    }
}

/// Points a scripted action's selector at the live element.
fn resolve(action: &Action, state: &UIState) -> Action {
    let mut a = action.clone();
    if let Some(t) = &action.target {
        if let Some((path, el)) = state.find_resource(&t.resource_id) {
            a.target = Some(Selector::of(el, path));
        }
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractiveRun {
    pub report: ReplayReport,
    pub events: Vec<InterruptEvent>,
    pub regenerations: usize,
    /// Contexts as captured at each suspension.
    pub suspensions: Vec<ExecutionContext>,
}

/// Runs a subtask under a scripted user, suspending on each interrupt and
/// resuming with the user's manual action as the correction.
pub fn run_interactive(
    subtask: &PlannedSubtask,
    rt: Runtime<'_>,
    env: &mut dyn GuiEnvironment,
    user: &mut ScriptedUser,
) -> Result<InteractiveRun, ExceptionError> {
    let mut handler = ExceptionHandler::new();
    let mut report = replay(subtask, rt, env, user, None);
    let mut regenerations = 0;
    let mut suspensions = Vec::new();
    let mut seen = 0;
    while report.interruption.is_some() && seen < rt.config.step_limit {
        let event = user.events[seen].clone();
        seen += 1;
        let ctx = handler.suspend(subtask, &report, &event, env.observe())?;
        suspensions.push(ctx.clone());
        let corrections = match &event.payload {
            Some(a) => alloc::vec![Correction::Action { action: a.clone() }],
            None => alloc::vec![Correction::Amend { text: String::new() }],
        };
        let (r, info) = handler.resume(&corrections, rt, env, user)?;
        regenerations += info.regenerations;
        report = r;
    }
    Ok(InteractiveRun {
        report,
        events: user.events.clone(),
        regenerations,
        suspensions,
    })
}

/// One generator call on a corrected, template-bound trace. The revision is
/// stored as a new version; a rejected revision leaves the store untouched.
/// Traces without corrections are a no-op.
pub fn refine_template(
    trace: &TraceRecord,
    original: &ExperienceTemplate,
    store: &mut TemplateStore,
    oracles: &Oracles,
    embedder: &dyn Embedder,
) -> Result<Option<ExperienceTemplate>, ExceptionError> {
    if !trace.annotations.contains(&StepOrigin::UserCorrection) {
        return Ok(None);
    }
    let revised = oracles.refine(&RefineRequest {
        original: original.clone(),
        trace: trace.clone(),
    });
    store.store(revised.clone(), embedder).map_err(ExceptionError::OracleTemplateInvalid)?;
    Ok(Some(revised))
}
