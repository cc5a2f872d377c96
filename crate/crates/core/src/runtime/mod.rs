//! External-call runtime: provider registry, task lifecycle, completion
//! queue, virtual clock, output channel, and record/replay.
//!
//! Dispatching a call either executes it synchronously (sync providers) or
//! creates a pending task whose completion is scheduled on the clock's timer
//! queue. Streaming providers complete in stages: each completion delivers a
//! partial list whose tail is a fresh continuation task.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use crate::church::{encode_list, make_streaming_result, StreamSegment};
use crate::syntax::{render_prim_expr, Expr, Handle, Label, PrimExpr, PrimValue, TaskId, TaskOp};

mod builtins;
mod clock;
mod replay;

pub use builtins::{ambient_bindings, standard_registry, SimTimings};
pub use clock::{Clock, ClockMode};
pub use replay::{store_from_str, store_to_string, ReplayChunk, ReplayRecord, ReplayStore, Recorder};

#[derive(Debug, Clone, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{fn_name}` rejected argument {arg}: {reason}")]
    BadArg {
        fn_name: String,
        arg: String,
        reason: String,
    },
    #[error("provider `{fn_name}` failed: {reason}")]
    Provider { fn_name: String, reason: String },
    #[error("replay miss: no record for ({fn_name}, {arg}, occurrence {occ})")]
    ReplayMiss {
        fn_name: String,
        arg: String,
        occ: u64,
    },
    #[error("replayed result for `{fn_name}` violates its declared semantics on {arg}")]
    ReplayCorrupt { fn_name: String, arg: String },
    #[error("trace entry at {label} does not match task `{fn_name}` (trace has `{expected}`)")]
    TraceMismatch {
        label: String,
        fn_name: String,
        expected: String,
    },
    #[error("trace entry at {label} is outside the declared semantics of `{fn_name}`")]
    TraceCorruption { label: String, fn_name: String },
    #[error("replay store i/o: {0}")]
    StoreIo(String),
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Sync,
    Async,
    Streaming,
}

/// What a provider does when called. Behaviors are pure given the call
/// context: side effects (output bytes, handle minting) go through the
/// context so runs stay deterministic.
#[derive(Debug)]
pub enum ProviderResponse {
    /// Synchronous result, placed into the term immediately.
    Value(Expr),
    /// Result delivered `delay_ms` after dispatch.
    Delayed { delay_ms: u64, result: Expr },
    /// Chunks stream in at the given offsets after dispatch; the stream
    /// closes at `done_ms`.
    Stream {
        chunks: Vec<(u64, PrimValue)>,
        done_ms: u64,
    },
}

/// Call context handed to provider behaviors.
pub struct CallCx<'a> {
    pub arg: &'a PrimExpr,
    pub seed: u64,
    /// Occurrence index of this (fn, arg) pair within the run.
    pub occ: u64,
    next_handle_serial: &'a mut u64,
}

impl CallCx<'_> {
    /// Mint a fresh opaque handle, unique within the run.
    pub fn mint_handle(&mut self) -> Handle {
        let h = Handle::anonymous(*self.next_handle_serial);
        *self.next_handle_serial += 1;
        h
    }

    /// Deterministic per-call randomness derived from seed, argument, and
    /// occurrence index; independent of evaluation order.
    pub fn det_hash(&self, fn_name: &str) -> u64 {
        det_hash(self.seed, fn_name, &self.arg.canonical(), self.occ)
    }
}

pub fn det_hash(seed: u64, fn_name: &str, arg: &str, occ: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(fn_name.as_bytes());
    eat(arg.as_bytes());
    eat(&occ.to_le_bytes());
    h
}

type Behavior = dyn Fn(&mut CallCx) -> Result<ProviderResponse, String> + Send + Sync;
type Semantics = dyn Fn(&PrimExpr, &Expr) -> bool + Send + Sync;
type OutputRender = dyn Fn(&PrimExpr) -> String + Send + Sync;

pub struct ProviderSpec {
    pub kind: ProviderKind,
    /// Local providers (print, filesystem simulators) execute live even under
    /// record/replay.
    pub local: bool,
    /// For output-producing providers: renders the dispatched argument into
    /// the bytes appended to the output channel.
    pub output: Option<Box<OutputRender>>,
    pub behavior: Box<Behavior>,
    /// Declared external semantics, checked against results in trace and
    /// replay modes.
    pub semantics: Option<Box<Semantics>>,
}

#[derive(Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, ProviderSpec>,
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, spec: ProviderSpec) {
        let name = name.into();
        assert!(
            !self.providers.contains_key(&name),
            "provider `{name}` registered twice"
        );
        self.providers.insert(name, spec);
    }

    pub fn get(&self, name: &str) -> Option<&ProviderSpec> {
        self.providers.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.providers.contains_key(name)
    }
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum TaskState {
    Pending,
    Completed(Expr),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct TaskHandle {
    pub id: TaskId,
    pub fn_name: String,
    pub arg: PrimExpr,
    pub dispatched_at: u64,
    pub state: TaskState,
}

/// FIFO of completed task ids. Multiple producers, single consumer.
#[derive(Clone, Default)]
pub struct CompletionQueue {
    inner: Arc<Mutex<VecDeque<TaskId>>>,
}

impl CompletionQueue {
    pub fn push(&self, id: TaskId) {
        self.inner.lock().unwrap().push_back(id);
    }

    pub fn drain(&self) -> Vec<TaskId> {
        self.inner.lock().unwrap().drain(..).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.lock().unwrap().is_empty()
    }
}

// ---------------------------------------------------------------------------
// Output channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OutputEvent {
    pub at_ms: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputChannel {
    pub events: Vec<OutputEvent>,
}

impl OutputChannel {
    pub fn append(&mut self, at_ms: u64, text: &str) {
        self.events.push(OutputEvent {
            at_ms,
            bytes: text.as_bytes().to_vec(),
        });
    }

    pub fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn first_ms(&self) -> Option<u64> {
        self.events.first().map(|e| e.at_ms)
    }

    pub fn last_ms(&self) -> Option<u64> {
        self.events.last().map(|e| e.at_ms)
    }
}

// ---------------------------------------------------------------------------
// The environment seen by the rewrite engine
// ---------------------------------------------------------------------------

/// Result of looking up a task's resolution.
pub enum TaskPoll {
    Ready(Expr),
    Pending,
}

/// External interactions the step rules need: starting a call and asking for
/// a task's result. Implemented by the live runtime and by trace playback.
pub trait ExternalEnv {
    /// Begin executing `fn_name(arg)` for the call statement at `at`;
    /// returns the task id carried by the task statement that replaces it.
    /// Trace playback derives the id from the label so that ids are
    /// identical across evaluation orders.
    fn dispatch(&mut self, at: &Label, fn_name: &str, arg: &PrimExpr)
        -> Result<TaskId, RuntimeError>;

    /// The resolution for the task at `label`, if available now.
    fn resolution(&mut self, label: &Label, task: &TaskOp) -> Result<TaskPoll, RuntimeError>;

    fn now_ms(&self) -> u64;
}

/// How streaming completions are delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamingMode {
    /// Partial lists as chunks arrive.
    Streamed,
    /// One completion with the full list at stream end (the call-by-value
    /// ablation consumes external calls this way).
    Blocking,
}

// ---------------------------------------------------------------------------
// Live runtime
// ---------------------------------------------------------------------------

pub struct ExternalRuntime {
    pub registry: ProviderRegistry,
    pub clock: Clock,
    pub output: OutputChannel,
    pub streaming_mode: StreamingMode,
    seed: u64,
    tasks: HashMap<TaskId, TaskHandle>,
    /// Result to install when a timer fires.
    scheduled: HashMap<TaskId, Expr>,
    timers: BinaryHeap<Reverse<(u64, u64, TaskId)>>,
    timer_seq: u64,
    queue: CompletionQueue,
    next_task: u64,
    next_handle_serial: u64,
    occ: HashMap<(String, String), u64>,
    recorder: Option<Recorder>,
    replay: Option<ReplayStore>,
}

/// Outcome of `dispatch_call`: sync providers complete inline, everything
/// else yields a pending task.
#[derive(Debug)]
pub enum DispatchResult {
    Immediate(Expr),
    Task(TaskId),
}

impl ExternalRuntime {
    pub fn new(registry: ProviderRegistry, mode: ClockMode, seed: u64) -> Self {
        ExternalRuntime {
            registry,
            clock: Clock::new(mode),
            output: OutputChannel::default(),
            streaming_mode: StreamingMode::Streamed,
            seed,
            tasks: HashMap::new(),
            scheduled: HashMap::new(),
            timers: BinaryHeap::new(),
            timer_seq: 0,
            queue: CompletionQueue::default(),
            next_task: 0,
            next_handle_serial: 0,
            occ: HashMap::new(),
            recorder: None,
            replay: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Record all non-local provider interactions for later replay.
    pub fn enable_recording(&mut self) {
        self.recorder = Some(Recorder::default());
    }

    pub fn take_recording(&mut self) -> Option<Vec<ReplayRecord>> {
        self.recorder.take().map(Recorder::into_records)
    }

    /// Serve all non-local providers from a replay store.
    pub fn enable_replay(&mut self, store: ReplayStore) {
        self.replay = Some(store);
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskHandle> {
        self.tasks.get(&id)
    }

    pub fn outstanding(&self) -> usize {
        self.tasks
            .values()
            .filter(|t| t.state == TaskState::Pending)
            .count()
    }

    pub fn completion_queue(&self) -> CompletionQueue {
        self.queue.clone()
    }

    fn fresh_task(&mut self, fn_name: &str, arg: &PrimExpr, state: TaskState) -> TaskId {
        let id = TaskId(self.next_task);
        self.next_task += 1;
        self.tasks.insert(
            id,
            TaskHandle {
                id,
                fn_name: fn_name.to_string(),
                arg: arg.clone(),
                dispatched_at: self.clock.now_ms(),
                state,
            },
        );
        id
    }

    fn schedule(&mut self, id: TaskId, at_ms: u64, result: Expr) {
        self.scheduled.insert(id, result);
        self.timers.push(Reverse((at_ms, self.timer_seq, id)));
        self.timer_seq += 1;
    }

    /// Dispatch an external call. Sync providers run now and return their
    /// result inline; async and streaming providers return a pending task.
    pub fn dispatch_call(
        &mut self,
        fn_name: &str,
        arg: &PrimExpr,
    ) -> Result<DispatchResult, RuntimeError> {
        let spec = self
            .registry
            .get(fn_name)
            .ok_or_else(|| RuntimeError::UnknownProvider(fn_name.to_string()))?;

        let canonical = arg.canonical();
        let occ_key = (fn_name.to_string(), canonical.clone());
        let occ = {
            let c = self.occ.entry(occ_key).or_insert(0);
            let v = *c;
            *c += 1;
            v
        };

        // Output effect happens at dispatch, from the argument.
        if let Some(render) = &spec.output {
            let text = render(arg);
            self.output.append(self.clock.now_ms(), &text);
        }

        let response = if self.replay.is_some() && !spec.local {
            let store = self.replay.as_mut().unwrap();
            store.response_for(fn_name, &canonical, occ)?
        } else {
            let mut cx = CallCx {
                arg,
                seed: self.seed,
                occ,
                next_handle_serial: &mut self.next_handle_serial,
            };
            (spec.behavior)(&mut cx).map_err(|reason| RuntimeError::BadArg {
                fn_name: fn_name.to_string(),
                arg: canonical.clone(),
                reason,
            })?
        };
        if let Some(rec) = &mut self.recorder {
            if !spec.local {
                rec.record(fn_name, &canonical, occ, &response);
            }
        }

        match response {
            ProviderResponse::Value(result) => Ok(DispatchResult::Immediate(result)),
            ProviderResponse::Delayed { delay_ms, result } => {
                let id = self.fresh_task(fn_name, arg, TaskState::Pending);
                let at = self.clock.now_ms() + delay_ms;
                self.schedule(id, at, result);
                Ok(DispatchResult::Task(id))
            }
            ProviderResponse::Stream { chunks, done_ms } => {
                let id = self.start_stream(fn_name, arg, chunks, done_ms);
                Ok(DispatchResult::Task(id))
            }
        }
    }

    /// Turn a chunk schedule into a chain of task completions. Under
    /// `Streamed`, each chunk arrives as a partial list whose tail is the
    /// next continuation task; under `Blocking`, the single completion at
    /// `done_ms` carries the whole list.
    fn start_stream(
        &mut self,
        fn_name: &str,
        arg: &PrimExpr,
        chunks: Vec<(u64, PrimValue)>,
        done_ms: u64,
    ) -> TaskId {
        let t0 = self.clock.now_ms();
        match self.streaming_mode {
            StreamingMode::Blocking => {
                let id = self.fresh_task(fn_name, arg, TaskState::Pending);
                let values: Vec<PrimValue> = chunks.into_iter().map(|(_, v)| v).collect();
                let result = encode_list(&values);
                self.schedule(id, t0 + done_ms, result);
                id
            }
            StreamingMode::Streamed => {
                // Allocate the whole chain up front: ids ascend with time.
                let main = self.fresh_task(fn_name, arg, TaskState::Pending);
                let cont_name = format!("{fn_name}#cont");
                let mut conts = Vec::new();
                for _ in 1..chunks.len() {
                    conts.push(self.fresh_task(&cont_name, &PrimExpr::unit(), TaskState::Pending));
                }
                let tail = self.fresh_task(&cont_name, &PrimExpr::unit(), TaskState::Pending);

                if chunks.is_empty() {
                    // No chunks: a single hole that closes with nil at the
                    // completion offset.
                    let hole = TaskOp {
                        f: PrimValue::extern_fn(&cont_name),
                        arg: PrimExpr::unit(),
                        task: tail,
                    };
                    self.schedule(
                        main,
                        t0,
                        make_streaming_result(vec![StreamSegment::Hole(hole)]),
                    );
                    self.schedule(tail, t0 + done_ms, encode_list(&[]));
                    return main;
                }

                // chunk i arrives at offset chunks[i].0 carrying one element
                // and the next hole; the tail closes with nil at done_ms.
                let mut receivers = vec![main];
                receivers.extend(conts.iter().copied());
                for (i, (offset, value)) in chunks.iter().enumerate() {
                    let next = if i + 1 < chunks.len() {
                        receivers[i + 1]
                    } else {
                        tail
                    };
                    let hole = TaskOp {
                        f: PrimValue::extern_fn(&cont_name),
                        arg: PrimExpr::unit(),
                        task: next,
                    };
                    let partial = make_streaming_result(vec![
                        StreamSegment::Chunk(value.clone()),
                        StreamSegment::Hole(hole),
                    ]);
                    self.schedule(receivers[i], t0 + offset, partial);
                }
                self.schedule(tail, t0 + done_ms, encode_list(&[]));
                main
            }
        }
    }

    /// Drain tasks whose completions have been delivered.
    pub fn poll_completions(&mut self) -> Vec<(TaskId, Expr)> {
        let mut out = Vec::new();
        for id in self.queue.drain() {
            if let Some(handle) = self.tasks.get(&id) {
                if let TaskState::Completed(e) = &handle.state {
                    out.push((id, e.clone()));
                }
            }
        }
        out
    }

    fn fire_timers_at(&mut self, deadline: u64) {
        while let Some(Reverse((t, _, _))) = self.timers.peek() {
            if *t > deadline {
                break;
            }
            let Reverse((_, _, id)) = self.timers.pop().unwrap();
            let result = self.scheduled.remove(&id).expect("scheduled result");
            let handle = self.tasks.get_mut(&id).expect("task exists");
            debug_assert!(handle.state == TaskState::Pending);
            handle.state = TaskState::Completed(result);
            self.queue.push(id);
        }
    }

    /// Sleep until the next completion. Returns false if nothing is pending.
    pub fn advance_to_next_completion(&mut self) -> bool {
        let Some(Reverse((deadline, _, _))) = self.timers.peek().cloned() else {
            return false;
        };
        self.clock.advance_to(deadline);
        self.fire_timers_at(deadline);
        true
    }

    /// Block until the given task completes, firing earlier timers on the way.
    pub fn advance_until_task(&mut self, id: TaskId) -> bool {
        loop {
            match self.tasks.get(&id).map(|t| &t.state) {
                Some(TaskState::Completed(_)) | Some(TaskState::Failed(_)) => return true,
                None => return false,
                Some(TaskState::Pending) => {
                    if !self.advance_to_next_completion() {
                        return false;
                    }
                }
            }
        }
    }

    /// Fire everything already due at the current time.
    pub fn catch_up(&mut self) {
        let now = self.clock.now_ms();
        self.fire_timers_at(now);
    }
}

impl ExternalEnv for ExternalRuntime {
    fn dispatch(&mut self, _at: &Label, fn_name: &str, arg: &PrimExpr) -> Result<TaskId, RuntimeError> {
        match self.dispatch_call(fn_name, arg)? {
            DispatchResult::Task(id) => Ok(id),
            DispatchResult::Immediate(result) => {
                // Keep the uniform dispatch -> task -> resolve step structure:
                // sync results are carried by an already-completed task.
                Ok(self.fresh_task(fn_name, arg, TaskState::Completed(result)))
            }
        }
    }

    fn resolution(&mut self, _label: &Label, task: &TaskOp) -> Result<TaskPoll, RuntimeError> {
        let handle = self
            .tasks
            .get(&task.task)
            .unwrap_or_else(|| panic!("unknown task {}", task.task));
        match &handle.state {
            TaskState::Pending => Ok(TaskPoll::Pending),
            TaskState::Completed(e) => {
                let e = e.clone();
                if self.replay.is_some() {
                    if let Some(spec) = self.registry.get(task.fn_name()) {
                        if let Some(sem) = &spec.semantics {
                            if !sem(&task.arg, &e) {
                                return Err(RuntimeError::ReplayCorrupt {
                                    fn_name: task.fn_name().to_string(),
                                    arg: task.arg.canonical(),
                                });
                            }
                        }
                    }
                }
                Ok(TaskPoll::Ready(e))
            }
            TaskState::Failed(reason) => {
                // Failures resolve to a distinguished error value rather than
                // halting the run.
                let text = format!("provider-error: {reason}");
                Ok(TaskPoll::Ready(Expr::new(
                    vec![crate::syntax::Statement::new(
                        crate::syntax::Var::new("err"),
                        crate::syntax::Operation::Prim(PrimValue::Str(text)),
                    )],
                    crate::syntax::Var::new("err"),
                )))
            }
        }
    }

    fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }
}

/// Render a value for the output channel: strings print raw, everything else
/// in canonical form; each print is one line.
pub fn render_output_value(v: &PrimExpr) -> String {
    match v {
        PrimExpr::Value(PrimValue::Str(s)) => format!("{s}\n"),
        other => format!("{}\n", render_prim_expr(other)),
    }
}

/// The standard renderer for `print (handle, value)`: renders the second
/// component.
pub fn print_renderer(arg: &PrimExpr) -> String {
    match arg {
        PrimExpr::Tuple(parts) if parts.len() == 2 => render_output_value(&parts[1]),
        other => render_output_value(other),
    }
}

pub(crate) fn expect_str(v: &PrimExpr) -> Result<&str, String> {
    match v {
        PrimExpr::Value(PrimValue::Str(s)) => Ok(s),
        other => Err(format!("expected a string, got {}", render_prim_expr(other))),
    }
}

pub(crate) fn expect_int(v: &PrimExpr) -> Result<i64, String> {
    match v {
        PrimExpr::Value(PrimValue::Int(n)) => Ok(*n),
        other => Err(format!(
            "expected an integer, got {}",
            render_prim_expr(other)
        )),
    }
}

pub(crate) fn expect_tuple(v: &PrimExpr, n: usize) -> Result<&[PrimExpr], String> {
    match v {
        PrimExpr::Tuple(parts) if parts.len() == n => Ok(parts),
        other => Err(format!(
            "expected a {n}-tuple, got {}",
            render_prim_expr(other)
        )),
    }
}

pub(crate) fn value_expr(v: PrimValue) -> Expr {
    Expr::new(
        vec![crate::syntax::Statement::new(
            crate::syntax::Var::new("v"),
            crate::syntax::Operation::Prim(v),
        )],
        crate::syntax::Var::new("v"),
    )
}

/// Build an expression whose value is the given primitive expression,
/// reconstructing tuples with explicit tuple statements.
pub fn prim_expr_to_expr(v: &PrimExpr) -> Expr {
    fn go(v: &PrimExpr, n: &mut u32, stmts: &mut Vec<crate::syntax::Statement>) -> crate::syntax::Var {
        let name = crate::syntax::Var::new(format!("v{}", *n));
        *n += 1;
        match v {
            PrimExpr::Value(c) => {
                stmts.push(crate::syntax::Statement::new(
                    name.clone(),
                    crate::syntax::Operation::Prim(c.clone()),
                ));
            }
            PrimExpr::Tuple(parts) => {
                let vars: Vec<crate::syntax::Var> =
                    parts.iter().map(|p| go(p, n, stmts)).collect();
                stmts.push(crate::syntax::Statement::new(
                    name.clone(),
                    crate::syntax::Operation::Tuple(vars),
                ));
            }
        }
        name
    }
    let mut stmts = Vec::new();
    let mut n = 0;
    let ret = go(v, &mut n, &mut stmts);
    Expr::new(stmts, ret)
}

pub(crate) fn tuple_expr(vs: Vec<PrimValue>) -> Expr {
    let mut stmts = Vec::new();
    let mut names = Vec::new();
    for (i, v) in vs.into_iter().enumerate() {
        let name = crate::syntax::Var::new(format!("v{i}"));
        names.push(name.clone());
        stmts.push(crate::syntax::Statement::new(
            name,
            crate::syntax::Operation::Prim(v),
        ));
    }
    let t = crate::syntax::Var::new("tup");
    stmts.push(crate::syntax::Statement::new(
        t.clone(),
        crate::syntax::Operation::Tuple(names),
    ));
    Expr::new(stmts, t)
}

/// Extract the primitive value of an expression of the `value_expr` shape.
pub fn ret_prim(e: &Expr) -> Option<&PrimValue> {
    let def = e.stmts.iter().find(|s| s.bound == e.ret)?;
    match &def.op {
        crate::syntax::Operation::Prim(c) => Some(c),
        _ => None,
    }
}

/// Custom task creation for tests and composite providers: a pending task
/// whose result arrives `delay_ms` after now.
impl ExternalRuntime {
    pub fn spawn_task(
        &mut self,
        fn_name: &str,
        arg: &PrimExpr,
        delay_ms: u64,
        result: Expr,
    ) -> TaskId {
        let id = self.fresh_task(fn_name, arg, TaskState::Pending);
        let at = self.clock.now_ms() + delay_ms;
        self.schedule(id, at, result);
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sync_provider(f: impl Fn(&mut CallCx) -> Result<ProviderResponse, String> + Send + Sync + 'static) -> ProviderSpec {
        ProviderSpec {
            kind: ProviderKind::Sync,
            local: false,
            output: None,
            behavior: Box::new(f),
            semantics: None,
        }
    }

    #[test]
    fn sync_add_is_immediate() {
        let mut reg = ProviderRegistry::new();
        reg.register(
            "add",
            sync_provider(|cx| {
                let parts = expect_tuple(cx.arg, 2)?;
                let a = expect_int(&parts[0])?;
                let b = expect_int(&parts[1])?;
                Ok(ProviderResponse::Value(value_expr(PrimValue::Int(a + b))))
            }),
        );
        let mut rt = ExternalRuntime::new(reg, ClockMode::Virtual, 0);
        let arg = PrimExpr::Tuple(vec![
            PrimExpr::Value(PrimValue::Int(3)),
            PrimExpr::Value(PrimValue::Int(4)),
        ]);
        match rt.dispatch_call("add", &arg).unwrap() {
            DispatchResult::Immediate(e) => {
                assert_eq!(ret_prim(&e), Some(&PrimValue::Int(7)));
            }
            _ => panic!("expected immediate"),
        }
    }

    #[test]
    fn timers_fire_in_order_fifo_on_ties() {
        let mut reg = ProviderRegistry::new();
        reg.register(
            "slow",
            ProviderSpec {
                kind: ProviderKind::Async,
                local: false,
                output: None,
                behavior: Box::new(|_cx| {
                    Ok(ProviderResponse::Delayed {
                        delay_ms: 100,
                        result: value_expr(PrimValue::Int(1)),
                    })
                }),
                semantics: None,
            },
        );
        let mut rt = ExternalRuntime::new(reg, ClockMode::Virtual, 0);
        assert!(rt.poll_completions().is_empty());
        let a = match rt.dispatch_call("slow", &PrimExpr::unit()).unwrap() {
            DispatchResult::Task(id) => id,
            _ => panic!(),
        };
        let b = match rt.dispatch_call("slow", &PrimExpr::unit()).unwrap() {
            DispatchResult::Task(id) => id,
            _ => panic!(),
        };
        assert!(rt.advance_to_next_completion());
        assert_eq!(rt.clock.now_ms(), 100);
        let done: Vec<TaskId> = rt.poll_completions().into_iter().map(|(id, _)| id).collect();
        assert_eq!(done, vec![a, b], "same deadline resolves FIFO by dispatch");
    }

    #[test]
    fn unknown_provider_errors() {
        let rt = &mut ExternalRuntime::new(ProviderRegistry::new(), ClockMode::Virtual, 0);
        let err = rt.dispatch_call("nope", &PrimExpr::unit()).unwrap_err();
        assert!(matches!(err, RuntimeError::UnknownProvider(_)));
    }
}
