//! A rewrite-based interpreter for an ANF lambda calculus with first-class
//! external calls.
//!
//! Programs are sequences of variable bindings evaluated by term rewriting.
//! External calls are dispatched into *task* placeholders so that independent
//! calls run in parallel and stream partial results, while the opportunistic
//! evaluation strategy keeps runs observably equivalent to sequential
//! evaluation on terminating programs.

pub mod bench;
pub mod church;
pub mod corpus;
pub mod eval;
pub mod rewrite;
pub mod runtime;
pub mod store;
pub mod syntax;

pub use eval::{run, RunEnv, RunOptions, RunOutcome, RunStatus, Strategy};
pub use rewrite::{step_at, steppable, steppable_set, StepOutcome, StepRecord, Trace};
pub use syntax::{
    alpha_equal, check_well_formed, erase_labels, free_vars, init_labels, label_independent,
    parse, pretty, pretty_inline, Expr, Handle, Label, LabeledExpr, Operation, PrimExpr,
    PrimValue, Statement, TaskId, TaskOp, Var,
};
