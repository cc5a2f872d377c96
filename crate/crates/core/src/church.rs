//! Church encodings and the standard prelude.
//!
//! Booleans and lists are functions, so they run under ordinary rewriting:
//! folding a list unrolls the loop, and a *partial* list — one whose body
//! contains holes bound to unresolved tasks — streams: iterations over the
//! known elements run while the holes are still in flight.

use std::collections::BTreeSet;

use crate::runtime::ProviderRegistry;
use crate::syntax::{
    all_names, parse, Expr, Operation, PrimValue, Statement, TaskOp, Var,
};

/// One piece of a partial list: a known element or a hole bound to an
/// unresolved task.
#[derive(Clone, Debug)]
pub enum StreamSegment {
    Chunk(PrimValue),
    Hole(TaskOp),
}

/// Build a Church-encoded (partial) list: known chunk elements interleaved
/// with holes bound to unresolved tasks. With no holes this is a complete
/// list. The result has the canonical accumulator shape
/// `fun p: st := prj 1 p; ap := prj 2 p; ...; ret st_n`.
pub fn make_streaming_result(segments: Vec<StreamSegment>) -> Expr {
    let p = Var::new("p");
    let mut stmts = Vec::new();
    let mut state = Var::new("st0");
    stmts.push(Statement::new(
        state.clone(),
        Operation::Proj {
            index: 1,
            tuple: p.clone(),
        },
    ));
    let ap = Var::new("ap");
    stmts.push(Statement::new(
        ap.clone(),
        Operation::Proj {
            index: 2,
            tuple: p.clone(),
        },
    ));
    for (i, seg) in segments.into_iter().enumerate() {
        let n = i + 1;
        let next_state = Var::new(format!("st{n}"));
        match seg {
            StreamSegment::Chunk(v) => {
                let c = Var::new(format!("c{n}"));
                let t = Var::new(format!("t{n}"));
                stmts.push(Statement::new(c.clone(), Operation::Prim(v)));
                stmts.push(Statement::new(
                    t.clone(),
                    Operation::Tuple(vec![state.clone(), c]),
                ));
                stmts.push(Statement::new(
                    next_state.clone(),
                    Operation::Call {
                        f: ap.clone(),
                        arg: t,
                    },
                ));
            }
            StreamSegment::Hole(task) => {
                let h = Var::new(format!("h{n}"));
                let t = Var::new(format!("t{n}"));
                stmts.push(Statement::new(h.clone(), Operation::Task(task)));
                stmts.push(Statement::new(
                    t.clone(),
                    Operation::Tuple(vec![state.clone(), ap.clone()]),
                ));
                stmts.push(Statement::new(
                    next_state.clone(),
                    Operation::Call { f: h, arg: t },
                ));
            }
        }
        state = next_state;
    }
    let body = Expr::new(stmts, state);
    let l = Var::new("l");
    Expr::new(
        vec![Statement::new(l.clone(), Operation::Fun { param: p, body })],
        l,
    )
}

/// A complete Church list of the given primitive values.
pub fn encode_list(values: &[PrimValue]) -> Expr {
    make_streaming_result(values.iter().cloned().map(StreamSegment::Chunk).collect())
}

/// A string as a Church list of single-character strings.
pub fn encode_string(s: &str) -> Expr {
    let values: Vec<PrimValue> = s.chars().map(|c| PrimValue::Str(c.to_string())).collect();
    encode_list(&values)
}

/// A Church boolean: `fun (t, f): t ()` or `fun (t, f): f ()`.
pub fn encode_bool(value: bool) -> Expr {
    let p = Var::new("p");
    let sel = Var::new("sel");
    let u = Var::new("u");
    let r = Var::new("r");
    let body = Expr::new(
        vec![
            Statement::new(
                sel.clone(),
                Operation::Proj {
                    index: if value { 1 } else { 2 },
                    tuple: p.clone(),
                },
            ),
            Statement::new(u.clone(), Operation::Tuple(vec![])),
            Statement::new(r.clone(), Operation::Call { f: sel, arg: u }),
        ],
        r,
    );
    let b = Var::new("b");
    Expr::new(
        vec![Statement::new(b.clone(), Operation::Fun { param: p, body })],
        b,
    )
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Host view of an encoded value. Partial decodes return the maximal
/// resolved prefix plus the number of residual holes.
#[derive(Debug, Clone, PartialEq)]
pub enum ChurchValue {
    Bool(bool),
    List {
        prefix: Vec<PrimValue>,
        holes: usize,
    },
    Str {
        prefix: String,
        holes: usize,
    },
}

/// Decode a Church list. Returns the resolved prefix (elements before the
/// first hole) and the total number of holes in the body.
pub fn decode_list(e: &Expr) -> Option<(Vec<PrimValue>, usize)> {
    let def = e.stmts.iter().find(|s| s.bound == e.ret)?;
    let Operation::Fun { param, body } = &def.op else {
        return None;
    };
    decode_list_body(param, body)
}

fn decode_list_body(param: &Var, body: &Expr) -> Option<(Vec<PrimValue>, usize)> {
    use Operation::*;
    let mut stmts = body.stmts.iter();
    // Prologue: state and append projected from the tuple parameter.
    let (state0, ap) = {
        let s1 = stmts.next()?;
        let s2 = stmts.next()?;
        match (&s1.op, &s2.op) {
            (
                Proj {
                    index: 1,
                    tuple: t1,
                },
                Proj {
                    index: 2,
                    tuple: t2,
                },
            ) if t1 == param && t2 == param => (s1.bound.clone(), s2.bound.clone()),
            _ => return None,
        }
    };
    // Empty list: `ret state0` with no further statements.
    let rest: Vec<&Statement> = stmts.collect();
    if rest.is_empty() {
        return if body.ret == state0 {
            Some((vec![], 0))
        } else {
            None
        };
    }
    let def_of = |v: &Var| rest.iter().find(|s| &s.bound == v).map(|s| &s.op);
    let mut prefix = Vec::new();
    let mut holes = 0usize;
    let mut state = state0;
    let mut i = 0;
    while i < rest.len() {
        // Seek the call statement that advances the state chain.
        let call = rest[i..]
            .iter()
            .find(|s| matches!(&s.op, Call { .. }))
            .filter(|s| match &s.op {
                Call { arg, .. } => match def_of(arg) {
                    Some(Tuple(parts)) => parts.first() == Some(&state),
                    _ => false,
                },
                _ => false,
            });
        let Some(call) = call else { break };
        let Call { f, arg } = &call.op else {
            unreachable!()
        };
        let Some(Tuple(parts)) = def_of(arg) else {
            break;
        };
        if parts.len() != 2 {
            return None;
        }
        if f == &ap {
            // append (state, elem): a known element.
            match def_of(&parts[1]) {
                Some(Prim(v)) => {
                    if holes == 0 {
                        prefix.push(v.clone());
                    }
                }
                _ => return None,
            }
        } else if parts[1] == ap {
            // hole (state, append): the hole is a task-bound or free var.
            match def_of(f) {
                Some(Task(_)) | None => holes += 1,
                Some(Fun { param, body }) => {
                    // An already-resolved hole spliced in as a sub-list.
                    let (sub_prefix, sub_holes) = decode_list_body(param, body)?;
                    if holes == 0 {
                        prefix.extend(sub_prefix);
                    }
                    holes += sub_holes;
                }
                _ => return None,
            }
        } else {
            return None;
        }
        state = call.bound.clone();
        i = rest.iter().position(|s| s.bound == call.bound)? + 1;
    }
    if body.ret != state {
        return None;
    }
    Some((prefix, holes))
}

/// Decode a Church boolean of the canonical `fun (t, f): t ()` shape.
pub fn decode_bool(e: &Expr) -> Option<bool> {
    let def = e.stmts.iter().find(|s| s.bound == e.ret)?;
    let Operation::Fun { param, body } = &def.op else {
        return None;
    };
    // The returned value is `sel ()` where sel projects branch 1 or 2.
    let ret_def = body.stmts.iter().find(|s| s.bound == body.ret)?;
    let Operation::Call { f, .. } = &ret_def.op else {
        return None;
    };
    let sel_def = body.stmts.iter().find(|s| &s.bound == f)?;
    match &sel_def.op {
        Operation::Proj { index: 1, tuple } if tuple == param => Some(true),
        Operation::Proj { index: 2, tuple } if tuple == param => Some(false),
        _ => None,
    }
}

/// Decode any recognized Church value, preferring the string view when every
/// resolved element is a single-character string.
pub fn decode_church(e: &Expr) -> Option<ChurchValue> {
    if let Some(b) = decode_bool(e) {
        return Some(ChurchValue::Bool(b));
    }
    let (prefix, holes) = decode_list(e)?;
    let stringish = !prefix.is_empty()
        && prefix.iter().all(|v| matches!(v, PrimValue::Str(s) if s.chars().count() == 1));
    if stringish {
        let s: String = prefix
            .iter()
            .map(|v| match v {
                PrimValue::Str(s) => s.as_str(),
                _ => unreachable!(),
            })
            .collect();
        Some(ChurchValue::Str { prefix: s, holes })
    } else {
        Some(ChurchValue::List { prefix, holes })
    }
}

// ---------------------------------------------------------------------------
// The prelude
// ---------------------------------------------------------------------------

const PRELUDE_SOURCE: &str = include_str!("../assets/prelude.opal");

pub fn prelude_source() -> &'static str {
    PRELUDE_SOURCE
}

/// The parsed prelude: if/true/false, nil/fold/cons/concat, fix, diverge.
pub fn stdlib_prelude() -> Expr {
    parse(PRELUDE_SOURCE).expect("prelude parses")
}

/// The fixpoint combinator fragment on its own.
pub fn fixpoint() -> Expr {
    let prelude = stdlib_prelude();
    let keep: Vec<Statement> = prelude
        .stmts
        .into_iter()
        .filter(|s| s.bound == Var::new("fix"))
        .collect();
    Expr::new(keep, Var::new("fix"))
}

/// The sequencing-handle example programs: a fully threaded open/read/write
/// chain, and a fork/join pattern where the two middle calls share no data
/// dependency.
pub fn sequencing_idioms() -> (&'static str, &'static str) {
    (THREADED_CHAIN, FORK_JOIN)
}

const THREADED_CHAIN: &str = "\
(thread, fd1) := open (thread, <\"foo.txt\">)
(thread, c) := read (thread, fd1)
(thread, fd2) := open (thread, <\"bar.txt\">)
thread := write (thread, fd2, c)
ret thread
";

const FORK_JOIN: &str = "\
(thread, fd1) := open (thread, <\"foo.txt\">)
(thread, thread2) := fork (thread)
(thread2, c) := read (thread2, fd1)
(thread, fd2) := open (thread, <\"bar.txt\">)
thread := join (thread, thread2)
thread := write (thread, fd2, c)
ret thread
";

// ---------------------------------------------------------------------------
// Program composition
// ---------------------------------------------------------------------------

/// Names the runtime binds before the program's own statements.
pub fn ambient_names(reg: &ProviderRegistry, with_prelude: bool) -> BTreeSet<Var> {
    let mut names: BTreeSet<Var> = crate::runtime::ambient_bindings(reg)
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    if with_prelude {
        names.extend(stdlib_prelude().stmts.into_iter().map(|s| s.bound));
    }
    names
}

/// Build the closed initial term: runtime bindings, then the prelude, then
/// the program. Program binders that would collide with an injected name are
/// renamed first.
pub fn compose_program(program: &Expr, reg: &ProviderRegistry, with_prelude: bool) -> Expr {
    let mut stmts: Vec<Statement> = crate::runtime::ambient_bindings(reg)
        .into_iter()
        .map(|(v, c)| Statement::new(v, Operation::Prim(c)))
        .collect();
    let mut injected: BTreeSet<Var> = stmts.iter().map(|s| s.bound.clone()).collect();
    if with_prelude {
        let prelude = stdlib_prelude();
        injected.extend(prelude.stmts.iter().map(|s| s.bound.clone()));
        stmts.extend(prelude.stmts);
    }
    let program = rename_colliding_binders(program, &injected);
    stmts.extend(program.stmts);
    Expr::new(stmts, program.ret)
}

/// Rename binders (at any depth) whose names collide with `injected`,
/// substituting their occurrences consistently.
fn rename_colliding_binders(e: &Expr, injected: &BTreeSet<Var>) -> Expr {
    let mut taken: BTreeSet<Var> = injected.clone();
    taken.extend(all_names(e));
    rename_block(
        e,
        injected,
        &mut taken,
        &mut std::collections::HashMap::new(),
    )
}

fn rename_block(
    e: &Expr,
    injected: &BTreeSet<Var>,
    taken: &mut BTreeSet<Var>,
    map: &mut std::collections::HashMap<Var, Var>,
) -> Expr {
    let mut out = Vec::with_capacity(e.stmts.len());
    let mut introduced = Vec::new();
    for s in &e.stmts {
        let op = rename_op(&s.op, injected, taken, map);
        let bound = rebind(&s.bound, injected, taken, map, &mut introduced);
        out.push(Statement { bound, op });
    }
    let ret = map.get(&e.ret).cloned().unwrap_or_else(|| e.ret.clone());
    for (v, old) in introduced.into_iter().rev() {
        restore(map, v, old);
    }
    Expr { stmts: out, ret }
}

fn rename_op(
    op: &Operation,
    injected: &BTreeSet<Var>,
    taken: &mut BTreeSet<Var>,
    map: &mut std::collections::HashMap<Var, Var>,
) -> Operation {
    let sub = |v: &Var, map: &std::collections::HashMap<Var, Var>| {
        map.get(v).cloned().unwrap_or_else(|| v.clone())
    };
    match op {
        Operation::Alias(x) => Operation::Alias(sub(x, map)),
        Operation::Call { f, arg } => Operation::Call {
            f: sub(f, map),
            arg: sub(arg, map),
        },
        Operation::Tuple(xs) => Operation::Tuple(xs.iter().map(|x| sub(x, map)).collect()),
        Operation::Proj { index, tuple } => Operation::Proj {
            index: *index,
            tuple: sub(tuple, map),
        },
        Operation::Prim(c) => Operation::Prim(c.clone()),
        Operation::Task(t) => Operation::Task(t.clone()),
        Operation::Fun { param, body } => {
            let mut introduced = Vec::new();
            let param2 = rebind(param, injected, taken, map, &mut introduced);
            let body2 = rename_block(body, injected, taken, map);
            for (v, old) in introduced.into_iter().rev() {
                restore(map, v, old);
            }
            Operation::Fun {
                param: param2,
                body: body2,
            }
        }
    }
}

type Undo = Vec<(Var, Option<Var>)>;

fn rebind(
    v: &Var,
    injected: &BTreeSet<Var>,
    taken: &mut BTreeSet<Var>,
    map: &mut std::collections::HashMap<Var, Var>,
    introduced: &mut Undo,
) -> Var {
    if !injected.contains(v) {
        return v.clone();
    }
    let fresh = fresh_against(v, taken);
    taken.insert(fresh.clone());
    introduced.push((v.clone(), map.insert(v.clone(), fresh.clone())));
    fresh
}

fn restore(map: &mut std::collections::HashMap<Var, Var>, v: Var, old: Option<Var>) {
    match old {
        Some(w) => {
            map.insert(v, w);
        }
        None => {
            map.remove(&v);
        }
    }
}

fn fresh_against(base: &Var, taken: &BTreeSet<Var>) -> Var {
    let mut n = 1u32;
    loop {
        let candidate = Var::new(format!("{}_{n}", base.as_str()));
        if !taken.contains(&candidate) {
            return candidate;
        }
        n += 1;
    }
}
