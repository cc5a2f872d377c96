//! The semantic rules: evaluation contexts, statement replacement, the
//! reduction/dispatch/resolution relations, steppability, and deterministic
//! resolution against an external-interaction trace.
//!
//! Every rule matches a single top-level statement at a label and replaces
//! it with zero or more new statements, the i-th of which gets label `ℓ·i`.
//! This keeps labels prefix-free and means no label is ever stepped twice.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::runtime::{
    ExternalEnv, OutputChannel, ProviderRegistry, RuntimeError, TaskPoll,
};
use crate::syntax::{
    self, contains_tasks, parse, pretty_inline, rename_fun_body, rename_top_binders, Expr, Label,
    LabeledExpr, Operation, PrimExpr, PrimValue, Statement, TaskId, TaskOp, Var,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum StepError {
    #[error("no statement at label {0}")]
    MissingLabel(Label),
    #[error("trace already binds label {0}")]
    TraceRebind(Label),
    #[error("trace cannot serialize a result containing tasks (label {0})")]
    TraceUnserializable(Label),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("trace file: {0}")]
    TraceIo(String),
}

// ---------------------------------------------------------------------------
// Evaluation contexts
// ---------------------------------------------------------------------------

/// A labeled expression with one top-level statement replaced by a hole.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub prefix: Vec<(Label, Statement)>,
    pub hole: Label,
    pub suffix: Vec<(Label, Statement)>,
    pub ret: Var,
}

impl EvalContext {
    /// Statements of the context (everything but the hole).
    pub fn stmts(&self) -> impl Iterator<Item = &(Label, Statement)> {
        self.prefix.iter().chain(self.suffix.iter())
    }

    /// Top-level definition of `x` in the context.
    pub fn def_of(&self, x: &Var) -> Option<&Statement> {
        self.stmts().map(|(_, s)| s).find(|s| &s.bound == x)
    }

    /// Fill the hole with a single statement.
    pub fn fill(&self, s: Statement) -> LabeledExpr {
        let mut stmts = self.prefix.clone();
        stmts.push((self.hole.clone(), s));
        stmts.extend(self.suffix.iter().cloned());
        LabeledExpr {
            stmts,
            ret: self.ret.clone(),
        }
    }

    /// Replace the hole with a list of statements; the i-th gets label `ℓ·i`.
    pub fn expand(&self, new: Vec<Statement>) -> LabeledExpr {
        let mut stmts = self.prefix.clone();
        for (i, s) in new.into_iter().enumerate() {
            stmts.push((self.hole.child(i as u32 + 1), s));
        }
        stmts.extend(self.suffix.iter().cloned());
        LabeledExpr {
            stmts,
            ret: self.ret.clone(),
        }
    }

    /// Every variable name occurring in the context, free or bound.
    pub fn names(&self) -> BTreeSet<Var> {
        let e = Expr {
            stmts: self.stmts().map(|(_, s)| s.clone()).collect(),
            ret: self.ret.clone(),
        };
        syntax::all_names(&e)
    }
}

/// Split `p` into the context around `ℓ` and the statement there.
pub fn decompose(p: &LabeledExpr, label: &Label) -> Option<(EvalContext, Statement)> {
    let pos = p.position(label)?;
    let (_, stmt) = p.stmts[pos].clone();
    Some((
        EvalContext {
            prefix: p.stmts[..pos].to_vec(),
            hole: label.clone(),
            suffix: p.stmts[pos + 1..].to_vec(),
            ret: p.ret.clone(),
        },
        stmt,
    ))
}

/// Remove the statement at `ℓ` and insert `new` in its place with labels
/// `ℓ·1 .. ℓ·n`.
pub fn replace(
    p: &LabeledExpr,
    label: &Label,
    new: Vec<Statement>,
) -> Result<LabeledExpr, StepError> {
    let (ctx, _) = decompose(p, label).ok_or_else(|| StepError::MissingLabel(label.clone()))?;
    Ok(ctx.expand(new))
}

// ---------------------------------------------------------------------------
// pexp: converting variables to primitive expressions
// ---------------------------------------------------------------------------

/// Whether `x` corresponds to a primitive expression given a definition
/// lookup, recursing through tuples. The lookup abstracts over the term
/// representation so the indexed store shares this logic.
pub fn pexp_with<'a>(
    lookup: &dyn Fn(&Var) -> Option<&'a Operation>,
    x: &Var,
) -> Option<PrimExpr> {
    let mut visiting = HashSet::new();
    pexp_rec(lookup, x, &mut visiting)
}

fn pexp_rec<'a>(
    lookup: &dyn Fn(&Var) -> Option<&'a Operation>,
    x: &Var,
    visiting: &mut HashSet<Var>,
) -> Option<PrimExpr> {
    if !visiting.insert(x.clone()) {
        return None;
    }
    let result = match lookup(x)? {
        Operation::Prim(c) => Some(PrimExpr::Value(c.clone())),
        // The empty tuple and the unit value are the same primitive
        // expression; canonicalize to unit.
        Operation::Tuple(xs) if xs.is_empty() => Some(PrimExpr::Value(PrimValue::Unit)),
        Operation::Tuple(xs) => {
            let mut parts = Vec::with_capacity(xs.len());
            for part in xs {
                parts.push(pexp_rec(lookup, part, visiting)?);
            }
            Some(PrimExpr::Tuple(parts))
        }
        _ => None,
    };
    visiting.remove(x);
    result
}

/// `pexp` over a labeled expression, excluding the statement at `exclude`.
pub fn pexp(p: &LabeledExpr, x: &Var, exclude: Option<&Label>) -> Option<PrimExpr> {
    let lookup = |v: &Var| -> Option<&Operation> {
        p.stmts
            .iter()
            .find(|(l, s)| Some(l) != exclude && &s.bound == v)
            .map(|(_, s)| &s.op)
    };
    pexp_with(&lookup, x)
}

// ---------------------------------------------------------------------------
// Step records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Alias,
    Call,
    Proj,
    Gc,
    Dispatch,
    Resolve,
}

/// Audit record of one semantic step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub label: Label,
    pub kind: StepKind,
    pub old: Statement,
    pub new: Vec<Statement>,
    /// For resolve steps: the result as delivered, before label-freshening.
    /// Collecting these into a trace replays the run exactly.
    pub resolution: Option<Expr>,
}

#[derive(Debug)]
pub enum StepOutcome {
    Stepped {
        result: LabeledExpr,
        record: StepRecord,
    },
    /// A task whose result is not yet available.
    Blocked,
    /// No rule applies at this label (or the label is absent).
    Absent,
}

// ---------------------------------------------------------------------------
// Freshening derived from the stepped label
// ---------------------------------------------------------------------------

/// Fresh names are `orig@ℓ` (with `ℓ` rendered `3_1` for label (3,1)). A
/// label is stepped at most once per run and `@` is rejected by the parser,
/// so these never collide with anything already in the term.
fn label_rename_map<'a>(
    label: &Label,
    binders: impl Iterator<Item = &'a Var>,
) -> HashMap<Var, Var> {
    let suffix = label.name_suffix();
    binders
        .map(|b| (b.clone(), Var::new(format!("{}@{}", b.as_str(), suffix))))
        .collect()
}

/// Freshen a function body for reduce-call: rename the parameter and the
/// body's top-level binders after the stepped label.
pub fn freshen_call_by_label(label: &Label, param: &Var, body: &Expr) -> (Var, Expr) {
    let map = label_rename_map(label, body.stmts.iter().map(|s| &s.bound));
    let fresh_param = Var::new(format!("{}@{}", param.as_str(), label.name_suffix()));
    let body = rename_fun_body(param, &fresh_param, body, &map);
    (fresh_param, body)
}

/// Freshen a resolution result: rename its top-level binders after the label.
pub fn freshen_result_by_label(label: &Label, e: &Expr) -> Expr {
    let map = label_rename_map(label, e.stmts.iter().map(|s| &s.bound));
    rename_top_binders(e, &map)
}

/// Substitute `x` for free `y` across a whole labeled expression.
pub fn substitute_labeled(p: &LabeledExpr, x: &Var, y: &Var) -> LabeledExpr {
    // Top-level statements cannot rebind (well-formedness), so per-statement
    // substitution plus the return variable is exact.
    LabeledExpr {
        stmts: p
            .stmts
            .iter()
            .map(|(l, s)| (l.clone(), syntax::substitute_statement(s, x, y)))
            .collect(),
        ret: if &p.ret == y { x.clone() } else { p.ret.clone() },
    }
}

// ---------------------------------------------------------------------------
// The step relation
// ---------------------------------------------------------------------------

/// Apply the unique applicable rule at `ℓ`, consulting `env` for dispatch and
/// resolution.
pub fn step_at(
    p: &LabeledExpr,
    label: &Label,
    env: &mut dyn ExternalEnv,
) -> Result<StepOutcome, StepError> {
    let Some((ctx, stmt)) = decompose(p, label) else {
        return Ok(StepOutcome::Absent);
    };
    let record = |kind: StepKind, new: Vec<Statement>| StepRecord {
        label: label.clone(),
        kind,
        old: stmt.clone(),
        new,
        resolution: None,
    };
    match &stmt.op {
        // reduce-alias: delete and substitute.
        Operation::Alias(x) => {
            let erased = ctx.expand(vec![]);
            let result = substitute_labeled(&erased, x, &stmt.bound);
            Ok(StepOutcome::Stepped {
                record: record(StepKind::Alias, vec![]),
                result,
            })
        }
        Operation::Call { f, arg } => match ctx.def_of(f).map(|d| d.op.clone()) {
            // reduce-call: splice in a fresh copy of the body.
            Some(Operation::Fun { param, body }) => {
                let (param2, body2) = freshen_call_by_label(label, &param, &body);
                let mut new = Vec::with_capacity(body2.stmts.len() + 2);
                new.push(Statement::new(param2, Operation::Alias(arg.clone())));
                let ret2 = body2.ret.clone();
                new.extend(body2.stmts);
                new.push(Statement::new(stmt.bound.clone(), Operation::Alias(ret2)));
                Ok(StepOutcome::Stepped {
                    result: ctx.expand(new.clone()),
                    record: record(StepKind::Call, new),
                })
            }
            // dispatch: replace the call with a task statement.
            Some(Operation::Prim(PrimValue::ExternFn(name))) => {
                let Some(cbar) = pexp(p, arg, Some(label)) else {
                    return Ok(StepOutcome::Absent);
                };
                let task = env.dispatch(label, &name, &cbar)?;
                let new = vec![Statement::new(
                    stmt.bound.clone(),
                    Operation::Task(TaskOp {
                        f: PrimValue::ExternFn(name.clone()),
                        arg: cbar,
                        task,
                    }),
                )];
                Ok(StepOutcome::Stepped {
                    result: ctx.expand(new.clone()),
                    record: record(StepKind::Dispatch, new),
                })
            }
            // Call of a non-function primitive or a non-value: stuck.
            _ => Ok(StepOutcome::Absent),
        },
        // reduce-proj.
        Operation::Proj { index, tuple } => match ctx.def_of(tuple).map(|d| d.op.clone()) {
            Some(Operation::Tuple(xs)) => {
                let i = *index as usize;
                if i == 0 || i > xs.len() {
                    return Ok(StepOutcome::Absent); // out of range: stuck
                }
                let new = vec![Statement::new(
                    stmt.bound.clone(),
                    Operation::Alias(xs[i - 1].clone()),
                )];
                Ok(StepOutcome::Stepped {
                    result: ctx.expand(new.clone()),
                    record: record(StepKind::Proj, new),
                })
            }
            _ => Ok(StepOutcome::Absent),
        },
        // reduce-gc: delete an unreferenced value binding.
        Operation::Fun { .. } | Operation::Tuple(_) | Operation::Prim(_) => {
            if ctx_references(&ctx, &stmt.bound) {
                Ok(StepOutcome::Absent)
            } else {
                Ok(StepOutcome::Stepped {
                    result: ctx.expand(vec![]),
                    record: record(StepKind::Gc, vec![]),
                })
            }
        }
        // resolve.
        Operation::Task(task) => match env.resolution(label, task)? {
            TaskPoll::Pending => Ok(StepOutcome::Blocked),
            TaskPoll::Ready(e) => {
                let e2 = freshen_result_by_label(label, &e);
                let mut new = Vec::with_capacity(e2.stmts.len() + 1);
                let ret2 = e2.ret.clone();
                new.extend(e2.stmts);
                new.push(Statement::new(stmt.bound.clone(), Operation::Alias(ret2)));
                let mut record = record(StepKind::Resolve, new.clone());
                record.resolution = Some(e);
                Ok(StepOutcome::Stepped {
                    result: ctx.expand(new),
                    record,
                })
            }
        },
    }
}

fn ctx_references(ctx: &EvalContext, x: &Var) -> bool {
    if &ctx.ret == x {
        return true;
    }
    ctx.stmts()
        .any(|(_, s)| syntax::statement_free_vars(s).contains(x))
}

// ---------------------------------------------------------------------------
// Steppability
// ---------------------------------------------------------------------------

/// Whether some rule applies at `ℓ`, ignoring task-completion availability
/// (an unresolved task counts as steppable; the evaluator separately tracks
/// whether its result has arrived).
pub fn steppable(p: &LabeledExpr, label: &Label) -> bool {
    let Some(pos) = p.position(label) else {
        return false;
    };
    steppable_stmt(p, pos, &use_counts(p))
}

/// All steppable labels of `p`.
pub fn steppable_set(p: &LabeledExpr) -> BTreeSet<Label> {
    let uses = use_counts(p);
    p.stmts
        .iter()
        .enumerate()
        .filter(|(i, _)| steppable_stmt(p, *i, &uses))
        .map(|(_, (l, _))| l.clone())
        .collect()
}

fn use_counts(p: &LabeledExpr) -> HashMap<Var, usize> {
    let mut counts: HashMap<Var, usize> = HashMap::new();
    for (_, s) in &p.stmts {
        for v in syntax::statement_free_vars(s) {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    *counts.entry(p.ret.clone()).or_insert(0) += 1;
    counts
}

fn steppable_stmt(p: &LabeledExpr, pos: usize, uses: &HashMap<Var, usize>) -> bool {
    let (label, stmt) = &p.stmts[pos];
    match &stmt.op {
        Operation::Alias(_) => true,
        Operation::Task(_) => true,
        Operation::Call { f, arg } => {
            let def = p
                .stmts
                .iter()
                .find(|(l, s)| l != label && &s.bound == f)
                .map(|(_, s)| &s.op);
            match def {
                Some(Operation::Fun { .. }) => true,
                Some(Operation::Prim(PrimValue::ExternFn(_))) => {
                    pexp(p, arg, Some(label)).is_some()
                }
                _ => false,
            }
        }
        Operation::Proj { index, tuple } => {
            let def = p
                .stmts
                .iter()
                .find(|(l, s)| l != label && &s.bound == tuple)
                .map(|(_, s)| &s.op);
            match def {
                Some(Operation::Tuple(xs)) => *index >= 1 && (*index as usize) <= xs.len(),
                _ => false,
            }
        }
        Operation::Fun { .. } | Operation::Tuple(_) | Operation::Prim(_) => {
            // gc: the bound variable is referenced nowhere else. Its own
            // statement cannot reference it in a well-formed term.
            uses.get(&stmt.bound).copied().unwrap_or(0) == 0
        }
    }
}

// ---------------------------------------------------------------------------
// External-interaction traces
// ---------------------------------------------------------------------------

/// One recorded resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub fn_name: String,
    pub arg: PrimExpr,
    pub result: Expr,
}

/// Partial map from task labels to their resolutions; binds each label at
/// most once.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    entries: BTreeMap<Label, TraceEntry>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, label: Label, entry: TraceEntry) -> Result<(), StepError> {
        if self.entries.contains_key(&label) {
            return Err(StepError::TraceRebind(label));
        }
        self.entries.insert(label, entry);
        Ok(())
    }

    pub fn get(&self, label: &Label) -> Option<&TraceEntry> {
        self.entries.get(label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Label, &TraceEntry)> {
        self.entries.iter()
    }

    pub fn to_jsonl(&self) -> Result<String, StepError> {
        let mut out = String::new();
        for (label, e) in &self.entries {
            if contains_tasks(&e.result) {
                return Err(StepError::TraceUnserializable(label.clone()));
            }
            let rec = TraceFileRecord {
                label: label.path().to_vec(),
                fn_name: e.fn_name.clone(),
                arg: e.arg.canonical(),
                result: pretty_inline(&e.result),
            };
            out.push_str(&serde_json::to_string(&rec).expect("trace record serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StepError> {
        let mut trace = Trace::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: TraceFileRecord =
                serde_json::from_str(line).map_err(|e| StepError::TraceIo(e.to_string()))?;
            let result = parse(&rec.result).map_err(|e| StepError::TraceIo(e.to_string()))?;
            let arg = parse_arg(&rec.arg)?;
            trace.bind(
                Label::new(rec.label),
                TraceEntry {
                    fn_name: rec.fn_name,
                    arg,
                    result,
                },
            )?;
        }
        Ok(trace)
    }
}

#[derive(Serialize, Deserialize)]
struct TraceFileRecord {
    label: Vec<u32>,
    #[serde(rename = "fn")]
    fn_name: String,
    arg: String,
    result: String,
}

fn parse_arg(text: &str) -> Result<PrimExpr, StepError> {
    fn build(e: &Expr, v: &Var) -> Option<PrimExpr> {
        let lookup = |x: &Var| -> Option<&Operation> {
            e.stmts.iter().find(|s| &s.bound == x).map(|s| &s.op)
        };
        let _ = lookup;
        let def = e.stmts.iter().find(|s| &s.bound == v)?;
        match &def.op {
            Operation::Prim(c) => Some(PrimExpr::Value(c.clone())),
            Operation::Tuple(xs) => {
                let parts: Option<Vec<PrimExpr>> = xs.iter().map(|x| build(e, x)).collect();
                Some(PrimExpr::Tuple(parts?))
            }
            _ => None,
        }
    }
    // Arguments are serialized in canonical prim-expr form; re-read them by
    // wrapping in a program that constructs the same shape.
    let text = text.trim();
    if text == "()" {
        return Ok(PrimExpr::Value(PrimValue::Unit));
    }
    let wrapped = if text.starts_with('(') {
        format!("v := {text}\nret v")
    } else {
        format!("v := <{text}>\nret v")
    };
    let e = parse(&wrapped).map_err(|e| StepError::TraceIo(format!("bad trace arg: {e}")))?;
    build(&e, &e.ret).ok_or_else(|| StepError::TraceIo(format!("bad trace arg `{text}`")))
}

// ---------------------------------------------------------------------------
// Trace playback environment
// ---------------------------------------------------------------------------

/// Deterministic resolution against a trace: dispatch allocates task ids and
/// output effects locally; resolution looks results up by the task's label
/// and checks them against the provider's declared semantics.
pub struct TraceEnv<'a> {
    pub trace: &'a Trace,
    pub registry: &'a ProviderRegistry,
    pub output: OutputChannel,
}

impl<'a> TraceEnv<'a> {
    pub fn new(trace: &'a Trace, registry: &'a ProviderRegistry) -> Self {
        TraceEnv {
            trace,
            registry,
            output: OutputChannel::default(),
        }
    }
}

impl ExternalEnv for TraceEnv<'_> {
    fn dispatch(&mut self, at: &Label, fn_name: &str, arg: &PrimExpr) -> Result<TaskId, RuntimeError> {
        if let Some(spec) = self.registry.get(fn_name) {
            if let Some(render) = &spec.output {
                let text = render(arg);
                self.output.append(0, &text);
            }
        }
        // Label-derived id: identical across evaluation orders, so terms
        // reached by different orders compare equal mid-run.
        let mut h: u64 = 0xcbf29ce484222325;
        for part in at.path() {
            for b in part.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        Ok(TaskId(h))
    }

    fn resolution(&mut self, label: &Label, task: &TaskOp) -> Result<TaskPoll, RuntimeError> {
        let Some(entry) = self.trace.get(label) else {
            return Ok(TaskPoll::Pending);
        };
        if entry.fn_name != task.fn_name() || entry.arg != task.arg {
            return Err(RuntimeError::TraceMismatch {
                label: label.to_string(),
                fn_name: task.fn_name().to_string(),
                expected: entry.fn_name.clone(),
            });
        }
        if let Some(spec) = self.registry.get(task.fn_name()) {
            if let Some(sem) = &spec.semantics {
                if !sem(&task.arg, &entry.result) {
                    return Err(RuntimeError::TraceCorruption {
                        label: label.to_string(),
                        fn_name: task.fn_name().to_string(),
                    });
                }
            }
        }
        Ok(TaskPoll::Ready(entry.result.clone()))
    }

    fn now_ms(&self) -> u64 {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{check_well_formed, init_labels, label_independent};

    fn lab(p: &[u32]) -> Label {
        Label::new(p.to_vec())
    }

    /// Fig-style example: g := fun x: (y := f x; ret y); z1 := g z0; z2 := g z1.
    fn call_example() -> LabeledExpr {
        let e = parse(
            "g := fun x:\n    y := f x\n    ret y\nz1 := g z0\nz2 := g z1\nret z2",
        )
        .unwrap();
        init_labels(&e)
    }

    #[test]
    fn decompose_isolates_statement() {
        let p = call_example();
        let (ctx, stmt) = decompose(&p, &lab(&[3])).unwrap();
        assert_eq!(stmt.bound, Var::new("z2"));
        assert_eq!(ctx.hole, lab(&[3]));
        assert!(decompose(&p, &lab(&[9])).is_none());
        assert_eq!(ctx.fill(stmt), p);
    }

    #[test]
    fn replace_labels_children() {
        let p = call_example();
        let s = |n: &str| Statement::new(Var::new(n), Operation::Tuple(vec![]));
        let out = replace(&p, &lab(&[3]), vec![s("a"), s("b"), s("c")]).unwrap();
        let labels: Vec<Label> = out.stmts.iter().map(|(l, _)| l.clone()).collect();
        assert_eq!(
            labels,
            vec![lab(&[1]), lab(&[2]), lab(&[3, 1]), lab(&[3, 2]), lab(&[3, 3])]
        );
        assert!(label_independent(&out));
        // Empty replacement deletes.
        let gone = replace(&p, &lab(&[3]), vec![]).unwrap();
        assert_eq!(gone.stmts.len(), 2);
        assert!(replace(&p, &lab(&[9]), vec![]).is_err());
    }

    #[test]
    fn replacement_commutes_on_independent_labels() {
        let p = call_example();
        let s = |n: &str| Statement::new(Var::new(n), Operation::Tuple(vec![]));
        let ab = vec![s("a"), s("b")];
        let cd = vec![s("c")];
        let one = replace(&replace(&p, &lab(&[2]), ab.clone()).unwrap(), &lab(&[3]), cd.clone())
            .unwrap();
        let two = replace(&replace(&p, &lab(&[3]), cd).unwrap(), &lab(&[2]), ab).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn pexp_examples() {
        let e = parse("w := <1>\nx := <2>\ny := (w, x)\nret y").unwrap();
        let p = init_labels(&e);
        assert_eq!(
            pexp(&p, &Var::new("y"), None),
            Some(PrimExpr::Tuple(vec![
                PrimExpr::Value(PrimValue::Int(1)),
                PrimExpr::Value(PrimValue::Int(2)),
            ]))
        );
        // Fun-bound variables do not convert.
        let e = parse("g := fun x:\n    ret x\nret g").unwrap();
        let p = init_labels(&e);
        assert_eq!(pexp(&p, &Var::new("g"), None), None);
        // Nested tuples convert at depth.
        let e = parse("a := <1>\nb := <2>\nc := (a, b)\nd := (c, a)\nret d").unwrap();
        let p = init_labels(&e);
        let got = pexp(&p, &Var::new("d"), None).unwrap();
        assert_eq!(got.canonical(), "((1, 2), 1)");
    }

    #[test]
    fn fig_call_step() {
        // Stepping the second call (label 3) splices a fresh copy of the body.
        let p = call_example();
        let trace = Trace::new();
        let reg = ProviderRegistry::new();
        let mut env = TraceEnv::new(&trace, &reg);
        let StepOutcome::Stepped { result, record } =
            step_at(&p, &lab(&[3]), &mut env).unwrap()
        else {
            panic!("expected step");
        };
        assert_eq!(record.kind, StepKind::Call);
        let labels: Vec<Label> = result.stmts.iter().map(|(l, _)| l.clone()).collect();
        assert_eq!(
            labels,
            vec![lab(&[1]), lab(&[2]), lab(&[3, 1]), lab(&[3, 2]), lab(&[3, 3])]
        );
        // Expected shape: x' := z1; y' := f x'; z2 := y'
        let expected = parse(
            "g := fun x:\n    y := f x\n    ret y\nz1 := g z0\nx0 := z1\ny0 := f x0\nz2 := y0\nret z2",
        )
        .unwrap();
        assert!(syntax::alpha_equal(&crate::syntax::erase_labels(&result), &expected));
        // Still well-formed and label-independent (preservation).
        assert!(label_independent(&result));
        let ctx: BTreeSet<Var> = ["f", "z0"].iter().map(Var::new).collect();
        check_well_formed(&ctx, &crate::syntax::erase_labels(&result)).unwrap();
    }

    #[test]
    fn steppable_fig7() {
        let p = call_example();
        let set = steppable_set(&p);
        let expected: BTreeSet<Label> = [lab(&[2]), lab(&[3])].into_iter().collect();
        assert_eq!(set, expected, "g is referenced elsewhere so (1) is excluded");
        let empty = init_labels(&parse("ret x").unwrap());
        assert!(steppable_set(&empty).is_empty());
    }

    #[test]
    fn determinacy_double_execution() {
        let p = call_example();
        let trace = Trace::new();
        let reg = ProviderRegistry::new();
        for l in [lab(&[2]), lab(&[3])] {
            let mut env1 = TraceEnv::new(&trace, &reg);
            let mut env2 = TraceEnv::new(&trace, &reg);
            let a = step_at(&p, &l, &mut env1).unwrap();
            let b = step_at(&p, &l, &mut env2).unwrap();
            match (a, b) {
                (
                    StepOutcome::Stepped { result: r1, .. },
                    StepOutcome::Stepped { result: r2, .. },
                ) => assert_eq!(r1, r2),
                _ => panic!("expected steps"),
            }
        }
    }

    #[test]
    fn trace_roundtrip_through_jsonl() {
        let mut trace = Trace::new();
        trace
            .bind(
                lab(&[3, 2]),
                TraceEntry {
                    fn_name: "coin".into(),
                    arg: PrimExpr::unit(),
                    result: parse("v := <f>\nret v").unwrap(),
                },
            )
            .unwrap();
        let text = trace.to_jsonl().unwrap();
        assert!(text.contains("\"label\":[3,2]"));
        assert!(text.contains("\"fn\":\"coin\""));
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(back.get(&lab(&[3, 2])), trace.get(&lab(&[3, 2])));
        // Rebinding a label is rejected.
        let mut t2 = back.clone();
        let err = t2.bind(
            lab(&[3, 2]),
            TraceEntry {
                fn_name: "coin".into(),
                arg: PrimExpr::unit(),
                result: parse("v := <t>\nret v").unwrap(),
            },
        );
        assert!(matches!(err, Err(StepError::TraceRebind(_))));
    }
}
