//! Syntactic well-formedness: every used variable is in scope, and no name
//! in scope is ever re-bound.

use std::collections::BTreeSet;
use std::fmt;

use super::{Expr, Operation, Var};

/// A well-formedness violation: the first failed rule and where it happened.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct WfViolation {
    /// Name of the violated rule, e.g. `WF-e-stmt`.
    pub rule: &'static str,
    /// Path to the offending statement, e.g. `stmt 3 > fun body > stmt 1`.
    pub at: String,
    /// The variable involved.
    pub var: Var,
    /// Human-readable description.
    pub detail: String,
}

impl fmt::Display for WfViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.rule, self.at, self.detail)
    }
}

/// Check that `e` is well-formed in context `ctx`.
pub fn check_well_formed(ctx: &BTreeSet<Var>, e: &Expr) -> Result<(), WfViolation> {
    let mut gamma = ctx.clone();
    check_expr(&mut gamma, e, &mut Vec::new())
}

fn loc(path: &[String]) -> String {
    if path.is_empty() {
        "top".to_string()
    } else {
        path.join(" > ")
    }
}

fn check_expr(
    gamma: &mut BTreeSet<Var>,
    e: &Expr,
    path: &mut Vec<String>,
) -> Result<(), WfViolation> {
    let mut introduced = Vec::new();
    let result = (|| {
        for (i, s) in e.stmts.iter().enumerate() {
            path.push(format!("stmt {}", i + 1));
            if gamma.contains(&s.bound) {
                return Err(WfViolation {
                    rule: "WF-e-stmt",
                    at: loc(path),
                    var: s.bound.clone(),
                    detail: format!("re-binding of `{}`", s.bound),
                });
            }
            check_op(gamma, &s.op, path)?;
            gamma.insert(s.bound.clone());
            introduced.push(s.bound.clone());
            path.pop();
        }
        if !gamma.contains(&e.ret) {
            return Err(WfViolation {
                rule: "WF-e-var",
                at: loc(path),
                var: e.ret.clone(),
                detail: format!("unbound return variable `{}`", e.ret),
            });
        }
        Ok(())
    })();
    for v in introduced {
        gamma.remove(&v);
    }
    if result.is_err() {
        // Leave `path` as pushed by the failing frame for the error message;
        // the caller discards it anyway.
        path.clear();
    }
    result
}

fn check_op(
    gamma: &mut BTreeSet<Var>,
    op: &Operation,
    path: &mut Vec<String>,
) -> Result<(), WfViolation> {
    let used = |rule: &'static str, v: &Var, gamma: &BTreeSet<Var>, path: &Vec<String>| {
        if gamma.contains(v) {
            Ok(())
        } else {
            Err(WfViolation {
                rule,
                at: loc(path),
                var: v.clone(),
                detail: format!("unbound variable `{v}`"),
            })
        }
    };
    match op {
        Operation::Alias(x) => used("WF-o-var", x, gamma, path),
        Operation::Call { f, arg } => {
            used("WF-o-call", f, gamma, path)?;
            used("WF-o-call", arg, gamma, path)
        }
        Operation::Tuple(xs) => {
            for x in xs {
                used("WF-o-tuple", x, gamma, path)?;
            }
            Ok(())
        }
        Operation::Proj { tuple, .. } => used("WF-o-proj", tuple, gamma, path),
        Operation::Prim(_) => Ok(()),
        Operation::Task(_) => Ok(()),
        Operation::Fun { param, body } => {
            if gamma.contains(param) {
                return Err(WfViolation {
                    rule: "WF-o-fun",
                    at: loc(path),
                    var: param.clone(),
                    detail: format!("parameter `{param}` shadows a name in scope"),
                });
            }
            gamma.insert(param.clone());
            path.push("fun body".to_string());
            let r = check_expr(gamma, body, path);
            path.pop();
            gamma.remove(param);
            r
        }
    }
}
