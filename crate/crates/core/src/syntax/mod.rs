//! Term representation for the core calculus.
//!
//! Programs are in ANF style: an expression is a list of statements, each
//! binding a variable to an operation, followed by a return variable. The
//! semantics works on *labeled* expressions, where every top-level statement
//! carries a prefix-free numeric label that survives any evaluation order.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

mod ops;
mod parse;
mod print;
mod wf;

pub use ops::{
    all_names, alpha_equal, contains_tasks, free_vars, freshen, freshen_fun, rename_fun_body,
    rename_top_binders, statement_free_vars, substitute, substitute_statement,
};
pub use parse::{parse, ParseError};
pub use print::{pretty, pretty_inline, pretty_labeled, render_prim_expr, render_prim_value};
pub use wf::{check_well_formed, WfViolation};

/// A variable identifier. Cheap to clone; compared by name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: impl AsRef<str>) -> Self {
        Var(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.0)
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var::new(s)
    }
}

/// An opaque handle value. Named handles (e.g. `&stdout`) derive their id
/// from the name; anonymous handles are minted by the runtime with the high
/// bit set so the two ranges never collide. Equality and hashing use the id
/// only.
#[derive(Clone)]
pub struct Handle {
    pub id: u64,
    pub name: Option<Arc<str>>,
}

/// Ids reserved for runtime-minted handles.
pub const ANON_HANDLE_BASE: u64 = 1 << 63;

impl Handle {
    /// A named handle such as `&stdout`. The id is a stable hash of the name.
    pub fn named(name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        // FNV-1a, masked to stay out of the anonymous range.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Handle {
            id: h & !ANON_HANDLE_BASE,
            name: Some(Arc::from(name)),
        }
    }

    pub fn anonymous(serial: u64) -> Self {
        Handle {
            id: ANON_HANDLE_BASE | serial,
            name: None,
        }
    }
}

impl PartialEq for Handle {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Handle {}

impl std::hash::Hash for Handle {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.name {
            Some(n) => write!(f, "&{n}"),
            None => write!(f, "&#{}", self.id & !ANON_HANDLE_BASE),
        }
    }
}

/// External primitive values.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum PrimValue {
    Int(i64),
    Str(String),
    Bool(bool),
    Unit,
    Handle(Handle),
    /// Reference to an external function resolved in the provider registry.
    ExternFn(Arc<str>),
}

impl PrimValue {
    pub fn extern_fn(name: impl AsRef<str>) -> Self {
        PrimValue::ExternFn(Arc::from(name.as_ref()))
    }

    pub fn str(s: impl Into<String>) -> Self {
        PrimValue::Str(s.into())
    }
}

/// A primitive expression: a primitive or a tuple of primitive expressions.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum PrimExpr {
    Value(PrimValue),
    Tuple(Vec<PrimExpr>),
}

impl PrimExpr {
    pub fn unit() -> Self {
        PrimExpr::Value(PrimValue::Unit)
    }

    /// Canonical text form, used for replay keys and trace files.
    pub fn canonical(&self) -> String {
        render_prim_expr(self)
    }
}

/// Identifier of an in-flight external call. The runtime owns the full
/// handle state; terms only carry the id.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// The task form: an external call in flight. Created only by dispatch,
/// never by the parser.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TaskOp {
    /// The primitive that was called (an external function reference).
    pub f: PrimValue,
    /// The primitive argument the call was dispatched with.
    pub arg: PrimExpr,
    /// Live handle id assigned at dispatch.
    pub task: TaskId,
}

impl TaskOp {
    pub fn fn_name(&self) -> &str {
        match &self.f {
            PrimValue::ExternFn(n) => n,
            _ => "<non-function>",
        }
    }
}

/// Operations a statement can bind.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Operation {
    /// `y := x`
    Alias(Var),
    /// `f := fun x: e`
    Fun { param: Var, body: Expr },
    /// `z := f x`
    Call { f: Var, arg: Var },
    /// `t := (x1, ..., xn)`
    Tuple(Vec<Var>),
    /// `y := prj i x`, 1-based
    Proj { index: u32, tuple: Var },
    /// `x := <c>`
    Prim(PrimValue),
    /// `y := <<cf c̄>>`, runtime-created placeholder for an external call
    Task(TaskOp),
}

/// A single binding statement.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Statement {
    pub bound: Var,
    pub op: Operation,
}

impl Statement {
    pub fn new(bound: impl Into<Var>, op: Operation) -> Self {
        Statement {
            bound: bound.into(),
            op,
        }
    }
}

/// An expression: statements followed by a return variable.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Expr {
    pub stmts: Vec<Statement>,
    pub ret: Var,
}

impl Expr {
    pub fn new(stmts: Vec<Statement>, ret: Var) -> Self {
        Expr { stmts, ret }
    }
}

/// A statement label: a nonempty path of positive integers, ordered
/// lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn new(path: Vec<u32>) -> Self {
        debug_assert!(!path.is_empty(), "labels are nonempty");
        Label(path)
    }

    pub fn root(i: u32) -> Self {
        Label(vec![i])
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    /// The label of the i-th statement produced by replacing this one (1-based).
    pub fn child(&self, i: u32) -> Label {
        let mut p = self.0.clone();
        p.push(i);
        Label(p)
    }

    /// True if `self` is a proper prefix of `other`.
    pub fn is_prefix_of(&self, other: &Label) -> bool {
        self.0.len() < other.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Encoding used to derive fresh variable names from the stepped label.
    pub fn name_suffix(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        parts.join("_")
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({self})")
    }
}

impl From<&[u32]> for Label {
    fn from(p: &[u32]) -> Self {
        Label::new(p.to_vec())
    }
}

/// An expression whose top-level statements carry labels.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabeledExpr {
    pub stmts: Vec<(Label, Statement)>,
    pub ret: Var,
}

impl LabeledExpr {
    pub fn position(&self, label: &Label) -> Option<usize> {
        self.stmts.iter().position(|(l, _)| l == label)
    }

    pub fn statement(&self, label: &Label) -> Option<&Statement> {
        self.stmts
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, s)| s)
    }

    /// Top-level statement defining `x`, if any.
    pub fn def_of(&self, x: &Var) -> Option<&Statement> {
        self.stmts.iter().map(|(_, s)| s).find(|s| &s.bound == x)
    }
}

/// Initialize an expression with sequential singleton labels `(1) .. (n)`.
pub fn init_labels(e: &Expr) -> LabeledExpr {
    LabeledExpr {
        stmts: e
            .stmts
            .iter()
            .enumerate()
            .map(|(i, s)| (Label::root(i as u32 + 1), s.clone()))
            .collect(),
        ret: e.ret.clone(),
    }
}

/// Drop the labels.
pub fn erase_labels(p: &LabeledExpr) -> Expr {
    Expr {
        stmts: p.stmts.iter().map(|(_, s)| s.clone()).collect(),
        ret: p.ret.clone(),
    }
}

/// Label independence: labels pairwise distinct and none a prefix of another.
pub fn label_independent(p: &LabeledExpr) -> bool {
    let mut labels: Vec<&Label> = p.stmts.iter().map(|(l, _)| l).collect();
    labels.sort();
    labels.windows(2).all(|w| w[0] != w[1] && !w[0].is_prefix_of(w[1]))
}

/// Names of the variables bound by top-level statements.
pub fn top_level_binders(e: &Expr) -> BTreeSet<Var> {
    e.stmts.iter().map(|s| s.bound.clone()).collect()
}
