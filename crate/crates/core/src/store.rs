//! Graph-indexed term storage for efficient evaluation.
//!
//! The term is held as statement vertices (label, statement) plus variable
//! vertices with bidirectional maps: which statement defines a variable and
//! which statements use it. Alias substitution then touches only the using
//! statements, and steppability is maintained incrementally instead of
//! rescanning the term — checks record the variables they read and are
//! re-run only when one of those definitions changes.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::rewrite::pexp_with;
use crate::syntax::{
    statement_free_vars, LabeledExpr, Label, Operation, PrimExpr, PrimValue, Statement, TaskId,
    Var,
};

/// Instrumentation for the efficiency claims: alias steps must do work
/// proportional to the variable's use count, never to term size.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkCounters {
    pub alias_steps: u64,
    pub alias_touched: u64,
    pub max_alias_touched: u64,
    pub steppability_checks: u64,
    pub max_term_size: usize,
}

#[derive(Debug, Clone)]
pub struct IndexDivergence {
    pub what: String,
}

pub struct TermStore {
    stmts: BTreeMap<Label, Statement>,
    ret: Var,
    def: HashMap<Var, Label>,
    uses: HashMap<Var, BTreeSet<Label>>,
    free_of: HashMap<Label, BTreeSet<Var>>,
    /// Labels of task statements by task id.
    tasks: HashMap<TaskId, Label>,
    steppable: BTreeSet<Label>,
    dirty: BTreeSet<Label>,
    watchers: HashMap<Var, HashSet<Label>>,
    watched_by: HashMap<Label, Vec<Var>>,
    pub counters: WorkCounters,
}

impl TermStore {
    pub fn build(p: &LabeledExpr) -> TermStore {
        let mut store = TermStore {
            stmts: BTreeMap::new(),
            ret: p.ret.clone(),
            def: HashMap::new(),
            uses: HashMap::new(),
            free_of: HashMap::new(),
            tasks: HashMap::new(),
            steppable: BTreeSet::new(),
            dirty: BTreeSet::new(),
            watchers: HashMap::new(),
            watched_by: HashMap::new(),
            counters: WorkCounters::default(),
        };
        for (l, s) in &p.stmts {
            store.insert_stmt(l.clone(), s.clone());
        }
        store.flush_dirty();
        store
    }

    pub fn ret(&self) -> &Var {
        &self.ret
    }

    pub fn len(&self) -> usize {
        self.stmts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stmts.is_empty()
    }

    pub fn statement(&self, l: &Label) -> Option<&Statement> {
        self.stmts.get(l)
    }

    pub fn def_label(&self, v: &Var) -> Option<&Label> {
        self.def.get(v)
    }

    pub fn def_op(&self, v: &Var) -> Option<&Operation> {
        self.def.get(v).and_then(|l| self.stmts.get(l)).map(|s| &s.op)
    }

    pub fn use_count(&self, v: &Var) -> usize {
        self.uses.get(v).map(|s| s.len()).unwrap_or(0)
    }

    pub fn task_label(&self, id: TaskId) -> Option<&Label> {
        self.tasks.get(&id)
    }

    pub fn to_labeled(&self) -> LabeledExpr {
        LabeledExpr {
            stmts: self
                .stmts
                .iter()
                .map(|(l, s)| (l.clone(), s.clone()))
                .collect(),
            ret: self.ret.clone(),
        }
    }

    /// The steppable labels, ascending. Task statements count as steppable
    /// whether or not their results have arrived.
    pub fn steppable_labels(&mut self) -> BTreeSet<Label> {
        self.flush_dirty();
        self.steppable.clone()
    }

    pub fn lowest_steppable(&mut self) -> Option<Label> {
        self.flush_dirty();
        self.steppable.iter().next().cloned()
    }

    // -- mutation ----------------------------------------------------------

    fn mark_dirty(&mut self, l: Label) {
        self.dirty.insert(l);
    }

    fn dirty_watchers_of(&mut self, v: &Var) {
        if let Some(ws) = self.watchers.get(v) {
            let ws: Vec<Label> = ws.iter().cloned().collect();
            for l in ws {
                self.dirty.insert(l);
            }
        }
    }

    fn add_use(&mut self, v: &Var, l: &Label) {
        let set = self.uses.entry(v.clone()).or_default();
        let was_empty = set.is_empty();
        set.insert(l.clone());
        if was_empty {
            // The defining statement may lose gc-steppability.
            if let Some(dl) = self.def.get(v).cloned() {
                self.dirty.insert(dl);
            }
        }
    }

    fn remove_use(&mut self, v: &Var, l: &Label) {
        if let Some(set) = self.uses.get_mut(v) {
            set.remove(l);
            if set.is_empty() {
                self.uses.remove(v);
                if let Some(dl) = self.def.get(v).cloned() {
                    self.dirty.insert(dl);
                }
            }
        }
    }

    pub fn insert_stmt(&mut self, l: Label, s: Statement) {
        debug_assert!(!self.stmts.contains_key(&l), "label {l} reused");
        debug_assert!(
            !self.def.contains_key(&s.bound),
            "binder {} rebound",
            s.bound
        );
        let fv = statement_free_vars(&s);
        for v in &fv {
            self.add_use(v, &l);
        }
        self.free_of.insert(l.clone(), fv);
        self.def.insert(s.bound.clone(), l.clone());
        if let Operation::Task(t) = &s.op {
            self.tasks.insert(t.task, l.clone());
        }
        self.dirty_watchers_of(&s.bound.clone());
        self.stmts.insert(l.clone(), s);
        self.mark_dirty(l);
        self.counters.max_term_size = self.counters.max_term_size.max(self.stmts.len());
    }

    pub fn remove_stmt(&mut self, l: &Label) -> Statement {
        let s = self.stmts.remove(l).expect("statement present");
        let fv = self.free_of.remove(l).unwrap_or_default();
        for v in &fv {
            self.remove_use(v, l);
        }
        self.def.remove(&s.bound);
        if let Operation::Task(t) = &s.op {
            self.tasks.remove(&t.task);
        }
        self.dirty_watchers_of(&s.bound);
        self.steppable.remove(l);
        self.dirty.remove(l);
        self.clear_watches(l);
        s
    }

    /// Replace the statement at `l` with children `l·1 .. l·n`.
    pub fn replace_at(&mut self, l: &Label, new: Vec<Statement>) -> Statement {
        let old = self.remove_stmt(l);
        for (i, s) in new.into_iter().enumerate() {
            self.insert_stmt(l.child(i as u32 + 1), s);
        }
        old
    }

    /// Replace free occurrences of `y` with `x` across the term, touching
    /// only statements in `y`'s use set.
    pub fn substitute_var(&mut self, x: &Var, y: &Var) {
        let users: Vec<Label> = self
            .uses
            .get(y)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        let mut touched = 0u64;
        for l in users {
            let s = self.stmts.get(&l).expect("user exists");
            let new_stmt = crate::syntax::substitute_statement(s, x, y);
            touched += 1;
            // Content changed: diff the free-variable set.
            let old_fv = self.free_of.get(&l).cloned().unwrap_or_default();
            let new_fv = statement_free_vars(&new_stmt);
            for v in old_fv.difference(&new_fv) {
                self.remove_use(v, &l);
            }
            for v in new_fv.difference(&old_fv) {
                self.add_use(v, &l);
            }
            self.free_of.insert(l.clone(), new_fv);
            self.dirty_watchers_of(&new_stmt.bound.clone());
            self.stmts.insert(l.clone(), new_stmt);
            self.mark_dirty(l);
        }
        if &self.ret == y {
            self.ret = x.clone();
            self.add_use_ret_transition(x, y);
        }
        self.counters.alias_steps += 1;
        self.counters.alias_touched += touched;
        self.counters.max_alias_touched = self.counters.max_alias_touched.max(touched);
    }

    fn add_use_ret_transition(&mut self, x: &Var, y: &Var) {
        // Return-variable uses are tracked implicitly; gc of x's definition
        // may have become invalid, y's definition (if any remains) possible.
        if let Some(dl) = self.def.get(x).cloned() {
            self.dirty.insert(dl);
        }
        if let Some(dl) = self.def.get(y).cloned() {
            self.dirty.insert(dl);
        }
    }

    // -- steppability ------------------------------------------------------

    fn clear_watches(&mut self, l: &Label) {
        if let Some(vars) = self.watched_by.remove(l) {
            for v in vars {
                if let Some(set) = self.watchers.get_mut(&v) {
                    set.remove(l);
                    if set.is_empty() {
                        self.watchers.remove(&v);
                    }
                }
            }
        }
    }

    fn flush_dirty(&mut self) {
        while let Some(l) = self.dirty.pop_first() {
            self.clear_watches(&l);
            let Some(s) = self.stmts.get(&l) else {
                self.steppable.remove(&l);
                continue;
            };
            self.counters.steppability_checks += 1;
            let (ok, watches) = self.check_steppable(s);
            if ok {
                self.steppable.insert(l.clone());
            } else {
                self.steppable.remove(&l);
            }
            if !watches.is_empty() {
                for v in &watches {
                    self.watchers.entry(v.clone()).or_default().insert(l.clone());
                }
                self.watched_by.insert(l, watches);
            }
        }
    }

    fn check_steppable(&self, s: &Statement) -> (bool, Vec<Var>) {
        match &s.op {
            Operation::Alias(_) => (true, vec![]),
            Operation::Task(_) => (true, vec![]),
            Operation::Call { f, arg } => {
                let mut watches = vec![f.clone()];
                match self.def_op(f) {
                    Some(Operation::Fun { .. }) => (true, watches),
                    Some(Operation::Prim(PrimValue::ExternFn(_))) => {
                        let traversed = RefCell::new(Vec::new());
                        let lookup = |v: &Var| -> Option<&Operation> {
                            traversed.borrow_mut().push(v.clone());
                            self.def_op(v)
                        };
                        let ok = pexp_with(&lookup, arg).is_some();
                        watches.extend(traversed.into_inner());
                        (ok, watches)
                    }
                    _ => (false, watches),
                }
            }
            Operation::Proj { index, tuple } => {
                let watches = vec![tuple.clone()];
                match self.def_op(tuple) {
                    Some(Operation::Tuple(xs)) => {
                        (*index >= 1 && (*index as usize) <= xs.len(), watches)
                    }
                    _ => (false, watches),
                }
            }
            Operation::Fun { .. } | Operation::Tuple(_) | Operation::Prim(_) => {
                (self.use_count(&s.bound) == 0 && s.bound != self.ret, vec![])
            }
        }
    }

    /// `pexp` against the store's definition index.
    pub fn pexp(&self, x: &Var) -> Option<PrimExpr> {
        let lookup = |v: &Var| -> Option<&Operation> { self.def_op(v) };
        pexp_with(&lookup, x)
    }

    // -- verification ------------------------------------------------------

    /// Rebuild every index from the statement list alone.
    pub fn rebuild_indices(p: &LabeledExpr) -> TermStore {
        TermStore::build(p)
    }

    /// Compare the incremental indices against a from-scratch rebuild and the
    /// pure steppability definition.
    pub fn verify_indices(&mut self) -> Result<(), IndexDivergence> {
        self.flush_dirty();
        let labeled = self.to_labeled();
        let fresh = TermStore::build(&labeled);
        if self.def != fresh.def {
            return Err(IndexDivergence {
                what: format!(
                    "def index diverged: {} incremental vs {} rebuilt",
                    self.def.len(),
                    fresh.def.len()
                ),
            });
        }
        if self.uses != fresh.uses {
            return Err(IndexDivergence {
                what: "use index diverged from rebuild".to_string(),
            });
        }
        if self.tasks != fresh.tasks {
            return Err(IndexDivergence {
                what: "task index diverged from rebuild".to_string(),
            });
        }
        let pure = crate::rewrite::steppable_set(&labeled);
        if self.steppable != pure {
            let extra: Vec<String> = self
                .steppable
                .difference(&pure)
                .map(|l| l.to_string())
                .collect();
            let missing: Vec<String> = pure
                .difference(&self.steppable)
                .map(|l| l.to_string())
                .collect();
            return Err(IndexDivergence {
                what: format!(
                    "steppable set diverged: extra [{}], missing [{}]",
                    extra.join(" "),
                    missing.join(" ")
                ),
            });
        }
        Ok(())
    }
}
