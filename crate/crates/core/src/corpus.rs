//! Seeded random program generation for the property suites.
//!
//! Generated programs are well-formed by construction and terminating by
//! design: functions are only ever applied to data (never to functions), so
//! no self-application or recursion can arise. External calls draw from the
//! standard simulated providers; prints are threaded through a single handle
//! chain so output order is forced by data dependencies.

use crate::syntax::{Expr, Operation, PrimValue, Statement, Var};

/// Deterministic 64-bit generator (splitmix64).
#[derive(Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// True with probability pct/100.
    pub fn chance(&mut self, pct: u32) -> bool {
        self.next_u64() % 100 < pct as u64
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    /// Known integer (safe for arithmetic providers).
    Int,
    /// Any non-function value.
    Data,
    Fun,
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub max_stmts: usize,
    pub max_depth: usize,
    /// Emit prints threaded through the stdout handle.
    pub prints: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_stmts: 30,
            max_depth: 3,
            prints: true,
        }
    }
}

struct Gen {
    rng: SplitMix64,
    cfg: GenConfig,
    counter: u32,
}

impl Gen {
    fn fresh(&mut self) -> Var {
        let v = Var::new(format!("v{}", self.counter));
        self.counter += 1;
        v
    }

    fn data_vars(scope: &[(Var, Kind)]) -> Vec<Var> {
        scope
            .iter()
            .filter(|(_, k)| matches!(k, Kind::Data | Kind::Int))
            .map(|(v, _)| v.clone())
            .collect()
    }

    fn int_vars(scope: &[(Var, Kind)]) -> Vec<Var> {
        scope
            .iter()
            .filter(|(_, k)| *k == Kind::Int)
            .map(|(v, _)| v.clone())
            .collect()
    }

    fn fun_vars(scope: &[(Var, Kind)]) -> Vec<Var> {
        scope
            .iter()
            .filter(|(_, k)| *k == Kind::Fun)
            .map(|(v, _)| v.clone())
            .collect()
    }

    fn gen_block(
        &mut self,
        scope: &mut Vec<(Var, Kind)>,
        depth: usize,
        n_stmts: usize,
        handle: Option<Var>,
    ) -> Expr {
        let base_len = scope.len();
        let mut stmts: Vec<Statement> = Vec::new();
        let mut handle = handle;
        for _ in 0..n_stmts {
            let data = Self::data_vars(scope);
            let ints = Self::int_vars(scope);
            let funs = Self::fun_vars(scope);
            let v = self.fresh();
            let roll = self.rng.below(100);
            let op = if roll < 25 {
                Operation::Prim(PrimValue::Int(self.rng.below(100) as i64))
            } else if roll < 38 && !data.is_empty() {
                let n = 2 + self.rng.below(2);
                Operation::Tuple((0..n).map(|_| self.rng.pick(&data).clone()).collect())
            } else if roll < 46 && !data.is_empty() {
                Operation::Alias(self.rng.pick(&data).clone())
            } else if roll < 56 && !data.is_empty() {
                // Projection, usually in range for tuples of width 2-3.
                let index = if self.rng.chance(6) {
                    9
                } else {
                    1 + self.rng.below(2) as u32
                };
                Operation::Proj {
                    index,
                    tuple: self.rng.pick(&data).clone(),
                }
            } else if roll < 68 && depth < self.cfg.max_depth {
                let param = self.fresh();
                let mut inner = scope.clone();
                inner.push((param.clone(), Kind::Data));
                let body_len = 1 + self.rng.below(3);
                let body = self.gen_block(&mut inner, depth + 1, body_len, None);
                Operation::Fun { param, body }
            } else if roll < 78 && !funs.is_empty() && !data.is_empty() {
                Operation::Call {
                    f: self.rng.pick(&funs).clone(),
                    arg: self.rng.pick(&data).clone(),
                }
            } else if !data.is_empty() {
                // External call. Argument statements come first; arithmetic
                // providers only ever see known integers.
                let ext = *self.rng.pick(&["inc", "add", "coin", "delay"]);
                match ext {
                    "inc" if !ints.is_empty() => Operation::Call {
                        f: Var::new("inc"),
                        arg: self.rng.pick(&ints).clone(),
                    },
                    "add" if !ints.is_empty() => {
                        let t = self.fresh();
                        stmts.push(Statement::new(
                            t.clone(),
                            Operation::Tuple(vec![
                                self.rng.pick(&ints).clone(),
                                self.rng.pick(&ints).clone(),
                            ]),
                        ));
                        scope.push((t.clone(), Kind::Data));
                        Operation::Call {
                            f: Var::new("add"),
                            arg: t,
                        }
                    }
                    "delay" => {
                        let ms = self.fresh();
                        stmts.push(Statement::new(
                            ms.clone(),
                            Operation::Prim(PrimValue::Int(1 + self.rng.below(40) as i64)),
                        ));
                        let t = self.fresh();
                        stmts.push(Statement::new(
                            t.clone(),
                            Operation::Tuple(vec![ms, self.rng.pick(&data).clone()]),
                        ));
                        scope.push((t.clone(), Kind::Data));
                        Operation::Call {
                            f: Var::new("delay"),
                            arg: t,
                        }
                    }
                    _ => {
                        let u = self.fresh();
                        stmts.push(Statement::new(u.clone(), Operation::Tuple(vec![])));
                        scope.push((u.clone(), Kind::Data));
                        Operation::Call {
                            f: Var::new("coin"),
                            arg: u,
                        }
                    }
                }
            } else {
                Operation::Prim(PrimValue::Int(self.rng.below(100) as i64))
            };
            let kind = match &op {
                Operation::Fun { .. } => Kind::Fun,
                Operation::Prim(PrimValue::Int(_)) => Kind::Int,
                Operation::Call { f, .. } if f == &Var::new("inc") || f == &Var::new("add") => {
                    Kind::Int
                }
                Operation::Alias(x) => scope
                    .iter()
                    .find(|(v2, _)| v2 == x)
                    .map(|(_, k)| *k)
                    .unwrap_or(Kind::Data),
                _ => Kind::Data,
            };
            stmts.push(Statement::new(v.clone(), op));
            scope.push((v.clone(), kind));

            // Occasionally print a data var through the handle chain.
            if let Some(h) = handle.clone() {
                let data = Self::data_vars(scope);
                if self.cfg.prints && !data.is_empty() && self.rng.chance(18) {
                    let t = self.fresh();
                    stmts.push(Statement::new(
                        t.clone(),
                        Operation::Tuple(vec![h, self.rng.pick(&data).clone()]),
                    ));
                    let h2 = self.fresh();
                    stmts.push(Statement::new(
                        h2.clone(),
                        Operation::Call {
                            f: Var::new("print"),
                            arg: t.clone(),
                        },
                    ));
                    scope.push((t, Kind::Data));
                    scope.push((h2.clone(), Kind::Data));
                    handle = Some(h2);
                }
            }
        }
        let data = Self::data_vars(scope);
        let ret = if data.is_empty() {
            let v = self.fresh();
            stmts.push(Statement::new(
                v.clone(),
                Operation::Prim(PrimValue::Unit),
            ));
            v
        } else {
            self.rng.pick(&data).clone()
        };
        scope.truncate(base_len);
        Expr { stmts, ret }
    }
}

/// Generate a seeded random program. Free variables are limited to the
/// standard ambient names (`inc`, `add`, `coin`, `delay`, `print`, `stdout`).
pub fn gen_program(seed: u64, cfg: &GenConfig) -> Expr {
    let mut g = Gen {
        rng: SplitMix64::new(seed),
        cfg: cfg.clone(),
        counter: 0,
    };
    let mut scope: Vec<(Var, Kind)> = Vec::new();
    let handle = if g.cfg.prints {
        Some(Var::new("stdout"))
    } else {
        None
    };
    let n = 3 + g.rng.below(g.cfg.max_stmts.saturating_sub(2));
    g.gen_block(&mut scope, 0, n, handle)
}

// ---------------------------------------------------------------------------
// Reference runs on the pure engine
// ---------------------------------------------------------------------------

use std::collections::BTreeSet;

use crate::bench::{execute, ExecConfig};
use crate::eval::{RunStatus, Strategy};
use crate::rewrite::{
    step_at, steppable_set, StepKind, StepOutcome, StepRecord, Trace, TraceEnv, TraceEntry,
};
use crate::runtime::{OutputChannel, ProviderRegistry};
use crate::syntax::{erase_labels, label_independent, Label, LabeledExpr};

#[derive(Clone, Copy)]
pub enum OrderPolicy {
    /// Uniformly random among the currently actionable labels.
    Random(u64),
    Ascending,
    Descending,
}

pub struct PureRun {
    pub final_term: LabeledExpr,
    pub stepped: Vec<Label>,
    pub records: Vec<StepRecord>,
    pub resolutions: Trace,
    pub dispatches: Vec<(String, String)>,
    pub output: OutputChannel,
    pub terminated: bool,
}

/// Drive the pure step relation to quiescence under a trace, choosing the
/// next label by `policy`. With `check_invariants`, label-independence,
/// well-formedness of the erased term, steppable-stability, and the
/// no-label-stepped-twice discipline are asserted after every step.
pub fn pure_run(
    p0: &LabeledExpr,
    trace: &Trace,
    registry: &ProviderRegistry,
    policy: OrderPolicy,
    max_steps: usize,
    check_invariants: bool,
) -> Result<PureRun, String> {
    let mut env = TraceEnv::new(trace, registry);
    let mut p = p0.clone();
    let mut rng = match policy {
        OrderPolicy::Random(seed) => Some(SplitMix64::new(seed)),
        _ => None,
    };
    let mut stepped: Vec<Label> = Vec::new();
    let mut seen: BTreeSet<Label> = BTreeSet::new();
    let mut records = Vec::new();
    let mut resolutions = Trace::new();
    let mut dispatches = Vec::new();
    let mut terminated = false;
    for _ in 0..max_steps {
        let steppable = steppable_set(&p);
        let actionable: Vec<Label> = steppable
            .iter()
            .filter(|l| match p.statement(l).map(|s| &s.op) {
                Some(crate::syntax::Operation::Task(_)) => trace.get(l).is_some(),
                _ => true,
            })
            .cloned()
            .collect();
        if actionable.is_empty() {
            terminated = true;
            break;
        }
        let l = match (&policy, &mut rng) {
            (OrderPolicy::Ascending, _) => actionable.first().unwrap().clone(),
            (OrderPolicy::Descending, _) => actionable.last().unwrap().clone(),
            (OrderPolicy::Random(_), Some(rng)) => {
                actionable[rng.below(actionable.len())].clone()
            }
            _ => unreachable!(),
        };
        let outcome = step_at(&p, &l, &mut env).map_err(|e| e.to_string())?;
        let StepOutcome::Stepped { result, record } = outcome else {
            return Err(format!("actionable label {l} did not step"));
        };
        if check_invariants {
            if !seen.insert(l.clone()) {
                return Err(format!("label {l} stepped twice"));
            }
            if !label_independent(&result) {
                return Err(format!("label independence broken after stepping {l}"));
            }
            if let Err(e) =
                crate::syntax::check_well_formed(&BTreeSet::new(), &erase_labels(&result))
            {
                return Err(format!("well-formedness broken after stepping {l}: {e}"));
            }
            // Steppable-stability: everything steppable before, except the
            // stepped label itself, is still steppable.
            let after = steppable_set(&result);
            for other in steppable.iter().filter(|o| *o != &l) {
                if !after.contains(other) {
                    return Err(format!("{other} lost steppability after stepping {l}"));
                }
            }
        }
        match record.kind {
            StepKind::Resolve => {
                if let (crate::syntax::Operation::Task(t), Some(res)) =
                    (&record.old.op, record.resolution.clone())
                {
                    resolutions
                        .bind(
                            record.label.clone(),
                            TraceEntry {
                                fn_name: t.fn_name().to_string(),
                                arg: t.arg.clone(),
                                result: res,
                            },
                        )
                        .map_err(|e| e.to_string())?;
                }
            }
            StepKind::Dispatch => {
                if let Some(crate::syntax::Operation::Task(t)) =
                    record.new.first().map(|s| &s.op)
                {
                    dispatches.push((t.fn_name().to_string(), t.arg.canonical()));
                }
            }
            _ => {}
        }
        stepped.push(l);
        records.push(record);
        p = result;
    }
    dispatches.sort();
    Ok(PureRun {
        final_term: p,
        stepped,
        records,
        resolutions,
        dispatches,
        output: env.output,
        terminated,
    })
}

/// A generated program together with a trace collected from a live run, and
/// that run's outcome. Returns None if the live run did not terminate within
/// the budget.
pub struct TracedProgram {
    pub program: crate::syntax::Expr,
    /// The composed closed term the trace's labels refer to.
    pub composed: crate::syntax::Expr,
    pub trace: Trace,
    pub live_outcome: crate::eval::RunOutcome,
}

pub fn gen_traced_program(seed: u64, cfg: &GenConfig) -> Option<TracedProgram> {
    let program = gen_program(seed, cfg);
    let exec = execute(
        &program,
        ExecConfig {
            strategy: Strategy::Opportunistic,
            seed,
            prelude: false,
            ..ExecConfig::default()
        },
    )
    .ok()?;
    if exec.outcome.status == RunStatus::BudgetExhausted {
        return None;
    }
    let registry = crate::runtime::standard_registry(&crate::runtime::SimTimings::default());
    let composed = crate::church::compose_program(&program, &registry, false);
    let trace = exec.outcome.resolutions.clone();
    Some(TracedProgram {
        program,
        composed,
        trace,
        live_outcome: exec.outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{check_well_formed, Var};

    #[test]
    fn generated_programs_are_well_formed() {
        let ambient: BTreeSet<Var> = ["inc", "add", "coin", "delay", "print", "stdout"]
            .iter()
            .map(Var::new)
            .collect();
        for seed in 0..200 {
            let e = gen_program(seed, &GenConfig::default());
            check_well_formed(&ambient, &e).unwrap_or_else(|err| {
                panic!("seed {seed}: {err}\n{}", crate::syntax::pretty(&e))
            });
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_program(42, &GenConfig::default());
        let b = gen_program(42, &GenConfig::default());
        assert_eq!(a, b);
    }
}
