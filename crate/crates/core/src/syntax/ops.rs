//! Syntactic operations: free variables, substitution, freshening, and
//! alpha-equivalence.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Expr, Operation, PrimValue, Statement, Var};

/// Free variables of an expression: those that occur but are not bound.
pub fn free_vars(e: &Expr) -> BTreeSet<Var> {
    let mut acc = BTreeSet::new();
    let mut bound = HashSet::new();
    collect_free(e, &mut bound, &mut acc);
    acc
}

fn collect_free(e: &Expr, bound: &mut HashSet<Var>, acc: &mut BTreeSet<Var>) {
    let mut introduced = Vec::new();
    for s in &e.stmts {
        collect_free_op(&s.op, bound, acc);
        if bound.insert(s.bound.clone()) {
            introduced.push(s.bound.clone());
        }
    }
    if !bound.contains(&e.ret) {
        acc.insert(e.ret.clone());
    }
    for v in introduced {
        bound.remove(&v);
    }
}

fn collect_free_op(op: &Operation, bound: &mut HashSet<Var>, acc: &mut BTreeSet<Var>) {
    let record = |v: &Var, bound: &HashSet<Var>, acc: &mut BTreeSet<Var>| {
        if !bound.contains(v) {
            acc.insert(v.clone());
        }
    };
    match op {
        Operation::Alias(x) => record(x, bound, acc),
        Operation::Call { f, arg } => {
            record(f, bound, acc);
            record(arg, bound, acc);
        }
        Operation::Tuple(xs) => {
            for x in xs {
                record(x, bound, acc);
            }
        }
        Operation::Proj { tuple, .. } => record(tuple, bound, acc),
        Operation::Prim(_) | Operation::Task(_) => {}
        Operation::Fun { param, body } => {
            let added = bound.insert(param.clone());
            collect_free(body, bound, acc);
            if added {
                bound.remove(param);
            }
        }
    }
}

/// Free variables of a single statement (the operation's free variables; the
/// bound variable itself cannot occur in a well-formed statement).
pub fn statement_free_vars(s: &Statement) -> BTreeSet<Var> {
    let mut acc = BTreeSet::new();
    let mut bound = HashSet::new();
    collect_free_op(&s.op, &mut bound, &mut acc);
    acc
}

/// All variable names occurring in an expression, free or bound.
pub fn all_names(e: &Expr) -> BTreeSet<Var> {
    let mut acc = BTreeSet::new();
    names_expr(e, &mut acc);
    acc
}

fn names_expr(e: &Expr, acc: &mut BTreeSet<Var>) {
    for s in &e.stmts {
        acc.insert(s.bound.clone());
        match &s.op {
            Operation::Alias(x) => {
                acc.insert(x.clone());
            }
            Operation::Call { f, arg } => {
                acc.insert(f.clone());
                acc.insert(arg.clone());
            }
            Operation::Tuple(xs) => acc.extend(xs.iter().cloned()),
            Operation::Proj { tuple, .. } => {
                acc.insert(tuple.clone());
            }
            Operation::Prim(_) | Operation::Task(_) => {}
            Operation::Fun { param, body } => {
                acc.insert(param.clone());
                names_expr(body, acc);
            }
        }
    }
    acc.insert(e.ret.clone());
}

/// Replace all free occurrences of `y` in `e` with `x`. Bound occurrences
/// (and occurrences under a binder for `y`) are left alone.
pub fn substitute(e: &Expr, x: &Var, y: &Var) -> Expr {
    if x == y {
        return e.clone();
    }
    let mut out = Vec::with_capacity(e.stmts.len());
    let mut shadowed = false;
    for s in &e.stmts {
        if shadowed {
            out.push(s.clone());
            continue;
        }
        out.push(substitute_statement(s, x, y));
        if &s.bound == y {
            // A (non-well-formed) rebinding of y shadows the rest.
            shadowed = true;
        }
    }
    let ret = if !shadowed && &e.ret == y {
        x.clone()
    } else {
        e.ret.clone()
    };
    Expr { stmts: out, ret }
}

/// Substitute inside one statement. The bound variable is not touched.
pub fn substitute_statement(s: &Statement, x: &Var, y: &Var) -> Statement {
    let sub = |v: &Var| if v == y { x.clone() } else { v.clone() };
    let op = match &s.op {
        Operation::Alias(v) => Operation::Alias(sub(v)),
        Operation::Call { f, arg } => Operation::Call {
            f: sub(f),
            arg: sub(arg),
        },
        Operation::Tuple(xs) => Operation::Tuple(xs.iter().map(sub).collect()),
        Operation::Proj { index, tuple } => Operation::Proj {
            index: *index,
            tuple: sub(tuple),
        },
        Operation::Prim(c) => Operation::Prim(c.clone()),
        Operation::Task(t) => Operation::Task(t.clone()),
        Operation::Fun { param, body } => {
            if param == y {
                Operation::Fun {
                    param: param.clone(),
                    body: body.clone(),
                }
            } else {
                Operation::Fun {
                    param: param.clone(),
                    body: substitute(body, x, y),
                }
            }
        }
    };
    Statement {
        bound: s.bound.clone(),
        op,
    }
}

static FRESH_COUNTER: AtomicU64 = AtomicU64::new(0);

fn next_fresh(base: &str, avoid: &BTreeSet<Var>) -> Var {
    loop {
        let n = FRESH_COUNTER.fetch_add(1, Ordering::Relaxed);
        let candidate = Var::new(format!("{base}_g{n}"));
        if !avoid.contains(&candidate) {
            return candidate;
        }
    }
}

/// Rename the top-level bound variables of `e` so they are disjoint from
/// `scope` and from every name already in `e`. Always renames, even absent
/// collisions, drawing from a global monotone counter.
pub fn freshen(scope: &BTreeSet<Var>, e: &Expr) -> Expr {
    let mut avoid: BTreeSet<Var> = all_names(e);
    avoid.extend(scope.iter().cloned());
    let mut renamed = e.clone();
    let binders: Vec<Var> = renamed.stmts.iter().map(|s| s.bound.clone()).collect();
    for old in binders {
        let fresh = next_fresh(old.as_str(), &avoid);
        avoid.insert(fresh.clone());
        renamed = rename_top_binder(&renamed, &old, &fresh);
    }
    renamed
}

/// Freshen a function operation: rename the parameter as well as the
/// top-level bound variables of the body. Returns the new parameter and body.
pub fn freshen_fun(scope: &BTreeSet<Var>, param: &Var, body: &Expr) -> (Var, Expr) {
    let mut avoid: BTreeSet<Var> = all_names(body);
    avoid.insert(param.clone());
    avoid.extend(scope.iter().cloned());
    let fresh_param = next_fresh(param.as_str(), &avoid);
    avoid.insert(fresh_param.clone());
    let body = substitute(body, &fresh_param, param);
    let mut renamed = body;
    let binders: Vec<Var> = renamed.stmts.iter().map(|s| s.bound.clone()).collect();
    for old in binders {
        let fresh = next_fresh(old.as_str(), &avoid);
        avoid.insert(fresh.clone());
        renamed = rename_top_binder(&renamed, &old, &fresh);
    }
    (fresh_param, renamed)
}

/// Rename one top-level binder of `e` and all its occurrences in the
/// statements after it (and the return variable).
pub fn rename_top_binder(e: &Expr, old: &Var, fresh: &Var) -> Expr {
    let Some(pos) = e.stmts.iter().position(|s| &s.bound == old) else {
        return e.clone();
    };
    let mut stmts: Vec<Statement> = e.stmts[..pos].to_vec();
    stmts.push(Statement {
        bound: fresh.clone(),
        op: e.stmts[pos].op.clone(),
    });
    let rest = Expr {
        stmts: e.stmts[pos + 1..].to_vec(),
        ret: e.ret.clone(),
    };
    let rest = substitute(&rest, fresh, old);
    stmts.extend(rest.stmts);
    Expr {
        stmts,
        ret: rest.ret,
    }
}

/// Simultaneously rename top-level binders of `e` according to `map`,
/// rewriting each binder and its in-scope occurrences in one pass. Targets
/// must be fresh (not occurring anywhere in `e`). Occurrences textually
/// before a renamed binder refer to an outer variable of the same name and
/// are left alone, as are occurrences under an inner binder of that name.
pub fn rename_top_binders(e: &Expr, map: &HashMap<Var, Var>) -> Expr {
    let mut active: HashMap<Var, Var> = HashMap::new();
    rename_walk(e, map, &mut active, true)
}

/// Variant for function freshening: the parameter rename is in force from
/// the start of the body.
pub fn rename_fun_body(param_old: &Var, param_new: &Var, body: &Expr, map: &HashMap<Var, Var>) -> Expr {
    let mut active = HashMap::new();
    active.insert(param_old.clone(), param_new.clone());
    rename_walk(body, map, &mut active, true)
}

fn rename_walk(
    e: &Expr,
    map: &HashMap<Var, Var>,
    active: &mut HashMap<Var, Var>,
    top: bool,
) -> Expr {
    let mut stmts = Vec::with_capacity(e.stmts.len());
    let mut undo: Vec<(Var, Option<Var>)> = Vec::new();
    for s in &e.stmts {
        let op = rename_op(&s.op, map, active);
        let bound = if top {
            if let Some(new) = map.get(&s.bound) {
                undo.push((s.bound.clone(), active.insert(s.bound.clone(), new.clone())));
                new.clone()
            } else {
                // An unrenamed top binder shadows nothing here (targets are
                // fresh), but mask any active rename of the same name.
                if active.contains_key(&s.bound) {
                    undo.push((s.bound.clone(), active.remove(&s.bound)));
                }
                s.bound.clone()
            }
        } else {
            // Inner binders are never renamed; they shadow active renames.
            if active.contains_key(&s.bound) {
                undo.push((s.bound.clone(), active.remove(&s.bound)));
            }
            s.bound.clone()
        };
        stmts.push(Statement { bound, op });
    }
    let ret = active.get(&e.ret).cloned().unwrap_or_else(|| e.ret.clone());
    for (v, old) in undo.into_iter().rev() {
        match old {
            Some(w) => {
                active.insert(v, w);
            }
            None => {
                active.remove(&v);
            }
        }
    }
    Expr { stmts, ret }
}

fn rename_op(op: &Operation, map: &HashMap<Var, Var>, active: &mut HashMap<Var, Var>) -> Operation {
    let sub = |v: &Var, active: &HashMap<Var, Var>| active.get(v).cloned().unwrap_or_else(|| v.clone());
    match op {
        Operation::Alias(x) => Operation::Alias(sub(x, active)),
        Operation::Call { f, arg } => Operation::Call {
            f: sub(f, active),
            arg: sub(arg, active),
        },
        Operation::Tuple(xs) => Operation::Tuple(xs.iter().map(|x| sub(x, active)).collect()),
        Operation::Proj { index, tuple } => Operation::Proj {
            index: *index,
            tuple: sub(tuple, active),
        },
        Operation::Prim(c) => Operation::Prim(c.clone()),
        Operation::Task(t) => Operation::Task(t.clone()),
        Operation::Fun { param, body } => {
            let masked = active.remove(param);
            let body = rename_walk(body, map, active, false);
            if let Some(w) = masked {
                active.insert(param.clone(), w);
            }
            Operation::Fun {
                param: param.clone(),
                body,
            }
        }
    }
}

/// Whether any task statement occurs anywhere in the expression.
pub fn contains_tasks(e: &Expr) -> bool {
    e.stmts.iter().any(|s| match &s.op {
        Operation::Task(_) => true,
        Operation::Fun { body, .. } => contains_tasks(body),
        _ => false,
    })
}

/// Structural equality up to consistent renaming of bound variables.
/// Primitive values compare structurally; opaque handles by id; tasks by
/// function, argument, and task id. Labels play no role here.
pub fn alpha_equal(e1: &Expr, e2: &Expr) -> bool {
    let mut m12 = HashMap::new();
    let mut m21 = HashMap::new();
    alpha_expr(e1, e2, &mut m12, &mut m21)
}

fn alpha_var(
    v1: &Var,
    v2: &Var,
    m12: &HashMap<Var, Var>,
    m21: &HashMap<Var, Var>,
) -> bool {
    match (m12.get(v1), m21.get(v2)) {
        (Some(w1), Some(w2)) => w1 == v2 && w2 == v1,
        // Free on both sides: names must match.
        (None, None) => v1 == v2,
        _ => false,
    }
}

fn alpha_expr(
    e1: &Expr,
    e2: &Expr,
    m12: &mut HashMap<Var, Var>,
    m21: &mut HashMap<Var, Var>,
) -> bool {
    if e1.stmts.len() != e2.stmts.len() {
        return false;
    }
    let mut saved: Vec<(Var, Option<Var>, Var, Option<Var>)> = Vec::new();
    let mut ok = true;
    for (s1, s2) in e1.stmts.iter().zip(&e2.stmts) {
        if !alpha_op(&s1.op, &s2.op, m12, m21) {
            ok = false;
            break;
        }
        saved.push((
            s1.bound.clone(),
            m12.insert(s1.bound.clone(), s2.bound.clone()),
            s2.bound.clone(),
            m21.insert(s2.bound.clone(), s1.bound.clone()),
        ));
    }
    let result = ok && alpha_var(&e1.ret, &e2.ret, m12, m21);
    for (v1, old1, v2, old2) in saved.into_iter().rev() {
        match old1 {
            Some(w) => {
                m12.insert(v1, w);
            }
            None => {
                m12.remove(&v1);
            }
        }
        match old2 {
            Some(w) => {
                m21.insert(v2, w);
            }
            None => {
                m21.remove(&v2);
            }
        }
    }
    result
}

fn alpha_op(
    o1: &Operation,
    o2: &Operation,
    m12: &mut HashMap<Var, Var>,
    m21: &mut HashMap<Var, Var>,
) -> bool {
    use Operation::*;
    match (o1, o2) {
        (Alias(x1), Alias(x2)) => alpha_var(x1, x2, m12, m21),
        (Call { f: f1, arg: a1 }, Call { f: f2, arg: a2 }) => {
            alpha_var(f1, f2, m12, m21) && alpha_var(a1, a2, m12, m21)
        }
        (Tuple(xs1), Tuple(xs2)) => {
            xs1.len() == xs2.len()
                && xs1
                    .iter()
                    .zip(xs2)
                    .all(|(x1, x2)| alpha_var(x1, x2, m12, m21))
        }
        (
            Proj {
                index: i1,
                tuple: t1,
            },
            Proj {
                index: i2,
                tuple: t2,
            },
        ) => i1 == i2 && alpha_var(t1, t2, m12, m21),
        (Prim(c1), Prim(c2)) => prim_equal(c1, c2),
        (Task(t1), Task(t2)) => {
            prim_equal(&t1.f, &t2.f) && t1.arg == t2.arg && t1.task == t2.task
        }
        (
            Fun {
                param: p1,
                body: b1,
            },
            Fun {
                param: p2,
                body: b2,
            },
        ) => {
            let old1 = m12.insert(p1.clone(), p2.clone());
            let old2 = m21.insert(p2.clone(), p1.clone());
            let r = alpha_expr(b1, b2, m12, m21);
            match old1 {
                Some(w) => {
                    m12.insert(p1.clone(), w);
                }
                None => {
                    m12.remove(p1);
                }
            }
            match old2 {
                Some(w) => {
                    m21.insert(p2.clone(), w);
                }
                None => {
                    m21.remove(p2);
                }
            }
            r
        }
        _ => false,
    }
}

fn prim_equal(c1: &PrimValue, c2: &PrimValue) -> bool {
    c1 == c2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    fn v(s: &str) -> Var {
        Var::new(s)
    }

    #[test]
    fn free_vars_ret_only() {
        let e = parse("ret x").unwrap();
        assert_eq!(free_vars(&e), [v("x")].into_iter().collect());
    }

    #[test]
    fn fun_param_not_free() {
        let e = parse("f := fun x:\n    y := g x\n    ret y\nret f").unwrap();
        let fv = free_vars(&e);
        assert!(fv.contains(&v("g")));
        assert!(!fv.contains(&v("x")));
        assert!(!fv.contains(&v("y")));
    }

    #[test]
    fn substitute_ret() {
        let e = parse("ret y").unwrap();
        let out = substitute(&e, &v("x"), &v("y"));
        assert_eq!(out.ret, v("x"));
        assert!(free_vars(&out).contains(&v("x")));
        assert!(!free_vars(&out).contains(&v("y")));
    }

    #[test]
    fn substitute_respects_binders() {
        // y is the fun parameter; the body must be untouched.
        let e = parse("f := fun y:\n    ret y\nret f").unwrap();
        let out = substitute(&e, &v("x"), &v("y"));
        assert_eq!(out, e);
    }

    #[test]
    fn freshen_disjoint_from_scope() {
        let e = parse("a := <1>\nb := a\nret b").unwrap();
        let scope: BTreeSet<Var> = [v("a"), v("b"), v("q")].into_iter().collect();
        let out = freshen(&scope, &e);
        for s in &out.stmts {
            assert!(!scope.contains(&s.bound));
        }
        assert!(alpha_equal(&e, &out));
    }

    #[test]
    fn freshen_renames_even_without_collisions() {
        let e = parse("a := <1>\nret a").unwrap();
        let out = freshen(&BTreeSet::new(), &e);
        assert_ne!(out.stmts[0].bound, v("a"));
        assert!(alpha_equal(&e, &out));
    }

    #[test]
    fn double_freshen_never_collides() {
        let e = parse("a := <1>\nb := a\nret b").unwrap();
        let mut seen = BTreeSet::new();
        for _ in 0..10_000 {
            let out = freshen(&BTreeSet::new(), &e);
            for s in &out.stmts {
                assert!(seen.insert(s.bound.clone()), "collision on {}", s.bound);
            }
        }
    }

    #[test]
    fn alpha_equal_basic() {
        let a = parse("x := <7>\nret x").unwrap();
        let b = parse("y := <7>\nret y").unwrap();
        let c = parse("y := <8>\nret y").unwrap();
        assert!(alpha_equal(&a, &b));
        assert!(!alpha_equal(&a, &c));
    }

    #[test]
    fn alpha_equal_free_vars_by_name() {
        let a = parse("y := f x\nret y").unwrap();
        let b = parse("z := f x\nret z").unwrap();
        let c = parse("z := g x\nret z").unwrap();
        assert!(alpha_equal(&a, &b));
        assert!(!alpha_equal(&a, &c));
    }
}
