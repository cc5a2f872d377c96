//! The evaluation loop.
//!
//! Opportunistic evaluation steps every label that is steppable at the start
//! of a macro-step, in ascending label order (confluence makes the order
//! immaterial); tasks whose completions have not arrived are skipped and the
//! loop sleeps on the clock when nothing else can move. Call-by-value mode
//! instead always steps the lowest steppable label and blocks on each task
//! before moving past it.

use std::collections::BTreeSet;

use crate::rewrite::{
    freshen_call_by_label, freshen_result_by_label, StepError, StepKind, StepRecord, Trace,
    TraceEntry, TraceEnv,
};
use crate::runtime::{
    ExternalEnv, ExternalRuntime, OutputChannel, RuntimeError, StreamingMode, TaskPoll,
};
use crate::store::{TermStore, WorkCounters};
use crate::syntax::{
    check_well_formed, erase_labels, init_labels, label_independent, pretty_inline, Expr, Label,
    LabeledExpr, Operation, PrimValue, Statement, WfViolation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Opportunistic,
    Cbv,
}

impl Strategy {
    pub fn streaming_mode(self) -> StreamingMode {
        match self {
            Strategy::Opportunistic => StreamingMode::Streamed,
            Strategy::Cbv => StreamingMode::Blocking,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Opportunistic => write!(f, "opportunistic"),
            Strategy::Cbv => write!(f, "cbv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub strategy: Strategy,
    /// Budget in macro-steps (opportunistic) or single steps (cbv).
    pub budget: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            strategy: Strategy::Opportunistic,
            budget: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Terminated,
    BudgetExhausted,
    StuckReport,
}

#[derive(Debug, Clone)]
pub struct StuckDiagnostic {
    pub label: Label,
    pub statement: String,
    pub reason: String,
}

/// A dispatch or resolution from the run, with its virtual timestamp.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub at_ms: u64,
    pub step_index: u64,
    pub record: StepRecord,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Metrics {
    /// Virtual time of the first output byte.
    pub latency_first_output_ms: Option<u64>,
    /// Virtual time at which output was complete (termination time if the
    /// program produced no output).
    pub running_time_ms: u64,
    pub macro_steps: u64,
}

pub struct RunOutcome {
    pub final_term: LabeledExpr,
    pub call_log: Vec<CallRecord>,
    /// The resolve choices of this run, keyed by task label.
    pub resolutions: Trace,
    pub metrics: Metrics,
    pub status: RunStatus,
    pub stuck: Vec<StuckDiagnostic>,
    pub output: OutputChannel,
    pub counters: WorkCounters,
}

impl RunOutcome {
    pub fn final_expr(&self) -> Expr {
        erase_labels(&self.final_term)
    }

    /// Multiset of dispatched (fn, canonical arg) pairs, sorted.
    pub fn dispatch_multiset(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .call_log
            .iter()
            .filter(|c| c.record.kind == StepKind::Dispatch)
            .filter_map(|c| match &c.record.new.first()?.op {
                Operation::Task(t) => Some((t.fn_name().to_string(), t.arg.canonical())),
                _ => None,
            })
            .collect();
        out.sort();
        out
    }

    pub fn output_bytes(&self) -> Vec<u8> {
        self.output.bytes()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("program is not well-formed: {0}")]
    IllFormed(#[from] WfViolation),
    #[error("program uses reserved name `{0}` ('@' names are generated by the engine)")]
    ReservedName(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// The two ways a run can interact with the outside: a live runtime with a
/// clock, or deterministic playback of a trace.
pub enum RunEnv<'a> {
    Live(&'a mut ExternalRuntime),
    Trace(TraceEnv<'a>),
}

impl ExternalEnv for RunEnv<'_> {
    fn dispatch(
        &mut self,
        at: &Label,
        fn_name: &str,
        arg: &crate::syntax::PrimExpr,
    ) -> Result<crate::syntax::TaskId, RuntimeError> {
        match self {
            RunEnv::Live(rt) => rt.dispatch(at, fn_name, arg),
            RunEnv::Trace(t) => t.dispatch(at, fn_name, arg),
        }
    }

    fn resolution(
        &mut self,
        label: &Label,
        task: &crate::syntax::TaskOp,
    ) -> Result<TaskPoll, RuntimeError> {
        match self {
            RunEnv::Live(rt) => rt.resolution(label, task),
            RunEnv::Trace(t) => t.resolution(label, task),
        }
    }

    fn now_ms(&self) -> u64 {
        match self {
            RunEnv::Live(rt) => rt.now_ms(),
            RunEnv::Trace(t) => t.now_ms(),
        }
    }
}

impl RunEnv<'_> {
    fn advance_to_next_completion(&mut self) -> bool {
        match self {
            RunEnv::Live(rt) => rt.advance_to_next_completion(),
            RunEnv::Trace(_) => false,
        }
    }

    fn advance_until_task(&mut self, id: crate::syntax::TaskId) -> bool {
        match self {
            RunEnv::Live(rt) => rt.advance_until_task(id),
            RunEnv::Trace(_) => false,
        }
    }

    fn output(&self) -> &OutputChannel {
        match self {
            RunEnv::Live(rt) => &rt.output,
            RunEnv::Trace(t) => &t.output,
        }
    }
}

// ---------------------------------------------------------------------------
// Single steps against the store
// ---------------------------------------------------------------------------

enum StoreStep {
    Stepped(StepRecord),
    Pending,
    NoRule,
}

/// Apply the unique applicable rule at `l`, mutating the store in place.
/// Mirrors the pure step relation; the two are cross-checked in tests.
fn store_step_at(
    store: &mut TermStore,
    l: &Label,
    env: &mut dyn ExternalEnv,
) -> Result<StoreStep, RunError> {
    let Some(stmt) = store.statement(l).cloned() else {
        return Ok(StoreStep::NoRule);
    };
    let record = |kind: StepKind, new: Vec<Statement>| StepRecord {
        label: l.clone(),
        kind,
        old: stmt.clone(),
        new,
        resolution: None,
    };
    match &stmt.op {
        Operation::Alias(x) => {
            store.remove_stmt(l);
            store.substitute_var(x, &stmt.bound);
            Ok(StoreStep::Stepped(record(StepKind::Alias, vec![])))
        }
        Operation::Call { f, arg } => match store.def_op(f).cloned() {
            Some(Operation::Fun { param, body }) => {
                let (param2, body2) = freshen_call_by_label(l, &param, &body);
                let mut new = Vec::with_capacity(body2.stmts.len() + 2);
                new.push(Statement::new(param2, Operation::Alias(arg.clone())));
                let ret2 = body2.ret.clone();
                new.extend(body2.stmts);
                new.push(Statement::new(stmt.bound.clone(), Operation::Alias(ret2)));
                store.replace_at(l, new.clone());
                Ok(StoreStep::Stepped(record(StepKind::Call, new)))
            }
            Some(Operation::Prim(PrimValue::ExternFn(name))) => {
                let Some(cbar) = store.pexp(arg) else {
                    return Ok(StoreStep::NoRule);
                };
                let task = env.dispatch(l, &name, &cbar)?;
                let new = vec![Statement::new(
                    stmt.bound.clone(),
                    Operation::Task(crate::syntax::TaskOp {
                        f: PrimValue::ExternFn(name.clone()),
                        arg: cbar,
                        task,
                    }),
                )];
                store.replace_at(l, new.clone());
                Ok(StoreStep::Stepped(record(StepKind::Dispatch, new)))
            }
            _ => Ok(StoreStep::NoRule),
        },
        Operation::Proj { index, tuple } => match store.def_op(tuple).cloned() {
            Some(Operation::Tuple(xs)) => {
                let i = *index as usize;
                if i == 0 || i > xs.len() {
                    return Ok(StoreStep::NoRule);
                }
                let new = vec![Statement::new(
                    stmt.bound.clone(),
                    Operation::Alias(xs[i - 1].clone()),
                )];
                store.replace_at(l, new.clone());
                Ok(StoreStep::Stepped(record(StepKind::Proj, new)))
            }
            _ => Ok(StoreStep::NoRule),
        },
        Operation::Fun { .. } | Operation::Tuple(_) | Operation::Prim(_) => {
            if store.use_count(&stmt.bound) == 0 && &stmt.bound != store.ret() {
                store.remove_stmt(l);
                Ok(StoreStep::Stepped(record(StepKind::Gc, vec![])))
            } else {
                Ok(StoreStep::NoRule)
            }
        }
        Operation::Task(task) => match env.resolution(l, task)? {
            TaskPoll::Pending => Ok(StoreStep::Pending),
            TaskPoll::Ready(e) => {
                let e2 = freshen_result_by_label(l, &e);
                let mut new = Vec::with_capacity(e2.stmts.len() + 1);
                let ret2 = e2.ret.clone();
                new.extend(e2.stmts);
                new.push(Statement::new(stmt.bound.clone(), Operation::Alias(ret2)));
                store.replace_at(l, new.clone());
                let mut rec = record(StepKind::Resolve, new);
                rec.resolution = Some(e);
                Ok(StoreStep::Stepped(rec))
            }
        },
    }
}

/// Result of one opportunistic macro-step.
pub struct MacroStepReport {
    pub stepped: Vec<StepRecord>,
    /// Task labels skipped because their results have not arrived.
    pub pending: Vec<Label>,
}

/// One opportunistic macro-step: step every label steppable at entry exactly
/// once, ascending; pending tasks are skipped and reported.
pub fn opportunistic_step(
    store: &mut TermStore,
    env: &mut dyn ExternalEnv,
) -> Result<MacroStepReport, RunError> {
    let entry: BTreeSet<Label> = store.steppable_labels();
    let mut stepped = Vec::new();
    let mut pending = Vec::new();
    for l in entry {
        match store_step_at(store, &l, env)? {
            StoreStep::Stepped(rec) => stepped.push(rec),
            StoreStep::Pending => pending.push(l),
            StoreStep::NoRule => {
                // Steppability is stable under other steps, so an entry label
                // can only stop stepping through an index bug.
                debug_assert!(false, "entry label {l} lost steppability mid-macro-step");
            }
        }
    }
    Ok(MacroStepReport { stepped, pending })
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

fn validate(program: &Expr) -> Result<(), RunError> {
    for v in crate::syntax::all_names(program) {
        if v.as_str().contains('@') {
            return Err(RunError::ReservedName(v.as_str().to_string()));
        }
    }
    check_well_formed(&BTreeSet::new(), program)?;
    Ok(())
}

/// Evaluate a closed program to quiescence under the chosen strategy.
pub fn run(program: &Expr, env: &mut RunEnv, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    validate(program)?;
    let labeled = init_labels(program);
    debug_assert!(label_independent(&labeled));
    let mut store = TermStore::build(&labeled);
    let mut call_log: Vec<CallRecord> = Vec::new();
    let mut resolutions = Trace::new();
    let mut steps: u64 = 0;

    let log = |records: Vec<StepRecord>,
                   env: &RunEnv,
                   steps: u64,
                   resolutions: &mut Trace,
                   call_log: &mut Vec<CallRecord>|
     -> Result<(), RunError> {
        for rec in records {
            match rec.kind {
                StepKind::Dispatch | StepKind::Resolve => {
                    if rec.kind == StepKind::Resolve {
                        if let (Operation::Task(t), Some(result)) =
                            (&rec.old.op, rec.resolution.clone())
                        {
                            resolutions.bind(
                                rec.label.clone(),
                                TraceEntry {
                                    fn_name: t.fn_name().to_string(),
                                    arg: t.arg.clone(),
                                    result,
                                },
                            )?;
                        }
                    }
                    call_log.push(CallRecord {
                        at_ms: env.now_ms(),
                        step_index: steps,
                        record: rec,
                    });
                }
                _ => {}
            }
        }
        Ok(())
    };

    let status = match opts.strategy {
        Strategy::Opportunistic => loop {
            if steps >= opts.budget {
                break RunStatus::BudgetExhausted;
            }
            let report = opportunistic_step(&mut store, env)?;
            if !report.stepped.is_empty() {
                steps += 1;
                log(report.stepped, env, steps, &mut resolutions, &mut call_log)?;
                continue;
            }
            if !report.pending.is_empty() && env.advance_to_next_completion() {
                continue;
            }
            break RunStatus::Terminated;
        },
        Strategy::Cbv => loop {
            if steps >= opts.budget {
                break RunStatus::BudgetExhausted;
            }
            let Some(l) = store.lowest_steppable() else {
                if env.advance_to_next_completion() {
                    continue;
                }
                break RunStatus::Terminated;
            };
            // Block on a pending task before moving past it.
            if let Some(Statement {
                op: Operation::Task(t),
                ..
            }) = store.statement(&l)
            {
                let id = t.task;
                if matches!(env.resolution(&l, t)?, TaskPoll::Pending) {
                    if !env.advance_until_task(id) {
                        // No completion can ever arrive; sequential
                        // evaluation is stuck here.
                        break RunStatus::Terminated;
                    }
                }
            }
            match store_step_at(&mut store, &l, env)? {
                StoreStep::Stepped(rec) => {
                    steps += 1;
                    log(vec![rec], env, steps, &mut resolutions, &mut call_log)?;
                }
                StoreStep::Pending => break RunStatus::Terminated,
                StoreStep::NoRule => {
                    debug_assert!(false, "steppable label {l} did not step");
                    break RunStatus::Terminated;
                }
            }
        },
    };

    let final_term = store.to_labeled();
    let stuck = stuck_diagnostics(&final_term, &mut store, env);
    let status = if status == RunStatus::Terminated && !stuck.is_empty() {
        RunStatus::StuckReport
    } else {
        status
    };
    let output = env.output().clone();
    let running_time_ms = output.last_ms().unwrap_or_else(|| env.now_ms());
    Ok(RunOutcome {
        metrics: Metrics {
            latency_first_output_ms: output.first_ms(),
            running_time_ms,
            macro_steps: steps,
        },
        final_term,
        call_log,
        resolutions,
        status,
        stuck,
        output,
        counters: store.counters.clone(),
    })
}

fn stuck_diagnostics(
    term: &LabeledExpr,
    store: &mut TermStore,
    env: &mut RunEnv,
) -> Vec<StuckDiagnostic> {
    let steppable = store.steppable_labels();
    let mut out = Vec::new();
    for (l, s) in &term.stmts {
        match &s.op {
            Operation::Call { f, .. } => {
                if !steppable.contains(l) {
                    let reason = match store.def_op(f) {
                        None => format!("`{f}` has no definition in the term"),
                        Some(Operation::Prim(PrimValue::ExternFn(_))) => {
                            "argument never becomes a primitive expression".to_string()
                        }
                        Some(Operation::Prim(_)) => {
                            format!("`{f}` is bound to a non-function primitive")
                        }
                        Some(Operation::Tuple(_)) => format!("`{f}` is bound to a tuple"),
                        Some(other) => format!("`{f}` is bound to {other:?}"),
                    };
                    out.push(StuckDiagnostic {
                        label: l.clone(),
                        statement: pretty_inline(&Expr {
                            stmts: vec![s.clone()],
                            ret: s.bound.clone(),
                        }),
                        reason,
                    });
                }
            }
            Operation::Proj { tuple, .. } => {
                if !steppable.contains(l) {
                    let reason = match store.def_op(tuple) {
                        Some(Operation::Tuple(xs)) => {
                            format!("projection index out of range for a {}-tuple", xs.len())
                        }
                        _ => format!("`{tuple}` is not bound to a tuple"),
                    };
                    out.push(StuckDiagnostic {
                        label: l.clone(),
                        statement: pretty_inline(&Expr {
                            stmts: vec![s.clone()],
                            ret: s.bound.clone(),
                        }),
                        reason,
                    });
                }
            }
            Operation::Task(t) => {
                if matches!(env.resolution(l, t), Ok(TaskPoll::Pending)) {
                    out.push(StuckDiagnostic {
                        label: l.clone(),
                        statement: pretty_inline(&Expr {
                            stmts: vec![s.clone()],
                            ret: s.bound.clone(),
                        }),
                        reason: "unresolved task (no completion or trace entry)".to_string(),
                    });
                }
            }
            _ => {}
        }
    }
    out
}
