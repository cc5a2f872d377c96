//! Evaluation-loop tests: macro-steps against the sequential oracle, the
//! divergence example that separates opportunistic from call-by-value and
//! lazy evaluation, and the incremental index structure.

use std::collections::{BTreeSet, HashMap, HashSet};

use opal_core::bench::{execute, ExecConfig};
use opal_core::corpus::{gen_traced_program, GenConfig, SplitMix64};
use opal_core::eval::{opportunistic_step, RunStatus, Strategy};
use opal_core::rewrite::{step_at, StepKind, StepOutcome, Trace, TraceEnv};
use opal_core::runtime::{standard_registry, SimTimings};
use opal_core::store::TermStore;
use opal_core::syntax::{
    alpha_equal, erase_labels, init_labels, parse, statement_free_vars, Expr, Label, Operation,
    Var,
};

const DIVERGE_PRINT: &str = "() := diverge ()\n() := print (stdout, <\"foo\">)\n<\"bar\">";

#[test]
fn fig_macro_step_unrolls_both_calls() {
    let e = parse("g := fun x:\n    y := f x\n    ret y\nz1 := g z0\nz2 := g z1\nret z2").unwrap();
    let p = init_labels(&e);
    let mut store = TermStore::build(&p);
    let reg = standard_registry(&SimTimings::default());
    let trace = Trace::new();
    let mut env = TraceEnv::new(&trace, &reg);
    let report = opportunistic_step(&mut store, &mut env).unwrap();
    let stepped: Vec<String> = report.stepped.iter().map(|r| r.label.to_string()).collect();
    assert_eq!(stepped, ["2", "3"], "exactly the steppable set at entry");
    let expected = parse(
        "g := fun x:\n    y := f x\n    ret y\n\
         x0 := z0\ny0 := f x0\nz1 := y0\nx1 := z1\ny1 := f x1\nz2 := y1\nret z2",
    )
    .unwrap();
    assert!(alpha_equal(&erase_labels(&store.to_labeled()), &expected));
}

#[test]
fn macro_step_on_quiescent_term_is_empty() {
    let e = parse("x := <7>\nret x").unwrap();
    let mut store = TermStore::build(&init_labels(&e));
    let reg = standard_registry(&SimTimings::default());
    let trace = Trace::new();
    let mut env = TraceEnv::new(&trace, &reg);
    let report = opportunistic_step(&mut store, &mut env).unwrap();
    assert!(report.stepped.is_empty());
    assert!(report.pending.is_empty());
}

/// A macro-step equals the composition of single steps over the entry set in
/// a random order.
#[test]
fn macro_step_matches_sequential_oracle() {
    let reg = standard_registry(&SimTimings::default());
    let mut rng = SplitMix64::new(0x0AC1E);
    let mut done = 0;
    let mut seed = 5000;
    while done < 12 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        done += 1;
        let mut store = TermStore::build(&init_labels(&tp.composed));
        let mut pure = init_labels(&tp.composed);
        for _ in 0..50 {
            let entry: Vec<Label> = store.steppable_labels().into_iter().collect();
            let mut env = TraceEnv::new(&tp.trace, &reg);
            let report = opportunistic_step(&mut store, &mut env).unwrap();
            if report.stepped.is_empty() {
                break;
            }
            // Oracle: the same entry set, stepped one at a time in a random
            // permutation on the pure engine (skipping unavailable tasks).
            let mut order = entry.clone();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.below(i + 1));
            }
            let mut env2 = TraceEnv::new(&tp.trace, &reg);
            for l in order {
                match step_at(&pure, &l, &mut env2).unwrap() {
                    StepOutcome::Stepped { result, .. } => pure = result,
                    StepOutcome::Blocked => {}
                    StepOutcome::Absent => panic!("entry label {l} not steppable"),
                }
            }
            assert_eq!(
                erase_labels(&store.to_labeled()),
                erase_labels(&pure),
                "seed {seed}: macro-step diverged from sequential oracle"
            );
            store.verify_indices().unwrap_or_else(|d| panic!("seed {seed}: {}", d.what));
        }
    }
}

/// Statements reachable from the return variable through definition edges —
/// what a lazy, demand-driven evaluator would be willing to run.
fn reachable_from_ret(e: &Expr) -> HashSet<Var> {
    let defs: HashMap<&Var, &opal_core::Statement> =
        e.stmts.iter().map(|s| (&s.bound, s)).collect();
    let mut seen: HashSet<Var> = HashSet::new();
    let mut frontier = vec![e.ret.clone()];
    while let Some(v) = frontier.pop() {
        if !seen.insert(v.clone()) {
            continue;
        }
        if let Some(s) = defs.get(&v) {
            frontier.extend(statement_free_vars(s));
        }
    }
    seen
}

#[test]
fn divergence_example_separates_the_strategies() {
    let program = parse(DIVERGE_PRINT).unwrap();

    // Opportunistic dispatches the print within two macro-steps.
    let exec = execute(
        &program,
        ExecConfig {
            strategy: Strategy::Opportunistic,
            budget: 2,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    assert_eq!(exec.outcome.status, RunStatus::BudgetExhausted);
    assert_eq!(exec.outcome.output_bytes(), b"foo\n");
    let print_step = exec
        .outcome
        .call_log
        .iter()
        .find(|c| c.record.kind == StepKind::Dispatch && dispatched_fn(c) == Some("print"))
        .expect("print dispatched");
    assert!(print_step.step_index <= 2);

    // Call-by-value with budget 100 loops on diverge and never prints.
    let exec = execute(
        &program,
        ExecConfig {
            strategy: Strategy::Cbv,
            budget: 100,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    assert_eq!(exec.outcome.status, RunStatus::BudgetExhausted);
    assert!(exec.outcome.output_bytes().is_empty());
    assert!(exec
        .outcome
        .call_log
        .iter()
        .all(|c| dispatched_fn(c) != Some("print")));

    // A demand-driven analysis never reaches the print either: it is not in
    // the dependency closure of the return variable.
    let reg = standard_registry(&SimTimings::default());
    let composed = opal_core::church::compose_program(&program, &reg, true);
    let needed = reachable_from_ret(&composed);
    let print_stmt = composed
        .stmts
        .iter()
        .find(|s| matches!(&s.op, Operation::Call { f, .. } if f.as_str() == "print"))
        .expect("print call present");
    assert!(
        !needed.contains(&print_stmt.bound),
        "lazy evaluation would drop the print"
    );
}

fn dispatched_fn(c: &opal_core::eval::CallRecord) -> Option<&str> {
    match &c.record.new.first()?.op {
        Operation::Task(t) => Some(t.fn_name()),
        _ => None,
    }
}

/// cbv and opportunistic agree on terminating programs, and the desk-scale
/// streaming schedule gives opportunistic a large running-time advantage.
#[test]
fn strategies_agree_and_opportunistic_wins_on_streams() {
    let program = parse(opal_core::bench::CITY_EXCURSIONS).unwrap();
    let run = |strategy| {
        execute(
            &program,
            ExecConfig {
                strategy,
                ..ExecConfig::default()
            },
        )
        .unwrap()
        .outcome
    };
    let opp = run(Strategy::Opportunistic);
    let cbv = run(Strategy::Cbv);
    assert_eq!(opp.status, RunStatus::Terminated);
    assert_eq!(cbv.status, RunStatus::Terminated);
    assert_eq!(opp.output_bytes(), cbv.output_bytes());
    assert!(alpha_equal(&opp.final_expr(), &cbv.final_expr()));
    assert!(
        (opp.metrics.running_time_ms as f64) < (cbv.metrics.running_time_ms as f64) / 4.0,
        "opportunistic {} vs cbv {}",
        opp.metrics.running_time_ms,
        cbv.metrics.running_time_ms
    );
}

#[test]
fn indices_verify_after_ten_thousand_random_steps() {
    let reg = standard_registry(&SimTimings::default());
    let mut total_steps = 0usize;
    let mut seed = 9000;
    while total_steps < 10_000 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        let mut store = TermStore::build(&init_labels(&tp.composed));
        loop {
            let mut env = TraceEnv::new(&tp.trace, &reg);
            let report = opportunistic_step(&mut store, &mut env).unwrap();
            if report.stepped.is_empty() {
                break;
            }
            total_steps += report.stepped.len();
            store
                .verify_indices()
                .unwrap_or_else(|d| panic!("seed {seed}: {}", d.what));
        }
    }
    assert!(total_steps >= 10_000);
}

/// Alias steps touch only the statements that use the variable.
#[test]
fn alias_substitution_cost_tracks_use_count() {
    // One alias with many users, in a large term of unrelated statements.
    let mut src = String::new();
    src.push_str("x := <1>\ny := x\n");
    for i in 0..6 {
        src.push_str(&format!("u{i} := (y, y)\n"));
    }
    for i in 0..400 {
        src.push_str(&format!("pad{i} := <0>\n"));
    }
    src.push_str("keep := (u0, u1, u2, u3, u4, u5)\nret keep");
    let e = parse(&src).unwrap();
    let mut store = TermStore::build(&init_labels(&e));
    let l = store.to_labeled().stmts[1].0.clone();
    store.remove_stmt(&l);
    store.substitute_var(&Var::new("x"), &Var::new("y"));
    assert_eq!(store.counters.alias_steps, 1);
    assert_eq!(store.counters.max_alias_touched, 6);
    assert!(store.counters.max_term_size > 400);
    store.verify_indices().unwrap();
}

/// Every label steppable at entry is stepped by the macro-step (fairness in
/// its one-step form), and a steppable sequence of length n completes within
/// n macro-steps.
#[test]
fn fairness_on_generated_programs() {
    let reg = standard_registry(&SimTimings::default());
    let mut done = 0;
    let mut seed = 13_000;
    while done < 10 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        done += 1;
        let mut store = TermStore::build(&init_labels(&tp.composed));
        loop {
            let entry: BTreeSet<Label> = store.steppable_labels();
            let mut env = TraceEnv::new(&tp.trace, &reg);
            let report = opportunistic_step(&mut store, &mut env).unwrap();
            if report.stepped.is_empty() {
                break;
            }
            let stepped: BTreeSet<Label> =
                report.stepped.iter().map(|r| r.label.clone()).collect();
            let pending: BTreeSet<Label> = report.pending.iter().cloned().collect();
            for l in &entry {
                assert!(
                    stepped.contains(l) || pending.contains(l),
                    "seed {seed}: steppable {l} neither stepped nor pending"
                );
            }
        }
    }
}
