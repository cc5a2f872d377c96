//! Step-relation tests: the reference call example, dispatch and resolution
//! against providers, the confluence diamond, and preservation under fuzzed
//! steps.

use std::collections::BTreeSet;

use opal_core::corpus::{gen_traced_program, pure_run, GenConfig, OrderPolicy, SplitMix64};
use opal_core::rewrite::{
    decompose, pexp, step_at, steppable_set, StepKind, StepOutcome, Trace, TraceEntry, TraceEnv,
};
use opal_core::runtime::{standard_registry, RuntimeError, SimTimings};
use opal_core::syntax::{
    alpha_equal, erase_labels, init_labels, label_independent, parse, Label, LabeledExpr,
    Operation, PrimExpr, PrimValue, Var,
};

fn lab(p: &[u32]) -> Label {
    Label::new(p.to_vec())
}

fn dispatch_resolve_example() -> LabeledExpr {
    // f := <add>; w := <3>; x := <4>; y := (w, x); z := f y; ret z
    let src = "w := <3>\nx := <4>\ny := (w, x)\nz := add y\nret z";
    let mut e = parse(src).unwrap();
    // Bind add as an external function reference.
    e.stmts.insert(
        0,
        opal_core::Statement::new(
            Var::new("add"),
            Operation::Prim(PrimValue::extern_fn("add")),
        ),
    );
    init_labels(&e)
}

#[test]
fn dispatch_replaces_call_with_task_and_resolves() {
    let p = dispatch_resolve_example();
    let reg = standard_registry(&SimTimings::default());
    let trace = Trace::new();
    let mut env = TraceEnv::new(&trace, &reg);
    // The call sits at label 5 once `add` is prepended.
    let call_label = lab(&[5]);
    let StepOutcome::Stepped { result, record } = step_at(&p, &call_label, &mut env).unwrap()
    else {
        panic!("dispatch applies");
    };
    assert_eq!(record.kind, StepKind::Dispatch);
    let task_label = lab(&[5, 1]);
    let task = match &result.statement(&task_label).unwrap().op {
        Operation::Task(t) => t.clone(),
        other => panic!("expected task, got {other:?}"),
    };
    assert_eq!(task.fn_name(), "add");
    assert_eq!(task.arg.canonical(), "(3, 4)");

    // Resolution via a trace entry <7>.
    let mut trace = Trace::new();
    trace
        .bind(
            task_label.clone(),
            TraceEntry {
                fn_name: "add".into(),
                arg: task.arg.clone(),
                result: parse("v := <7>\nret v").unwrap(),
            },
        )
        .unwrap();
    let mut env = TraceEnv::new(&trace, &reg);
    let StepOutcome::Stepped { result, record } =
        step_at(&result, &task_label, &mut env).unwrap()
    else {
        panic!("resolve applies");
    };
    assert_eq!(record.kind, StepKind::Resolve);
    // z ends up bound (through an alias) to <7>.
    let v_stmt = result.statement(&lab(&[5, 1, 1])).unwrap();
    assert_eq!(v_stmt.op, Operation::Prim(PrimValue::Int(7)));
}

#[test]
fn trace_corruption_is_detected() {
    let p = dispatch_resolve_example();
    let reg = standard_registry(&SimTimings::default());
    let empty = Trace::new();
    let mut env = TraceEnv::new(&empty, &reg);
    let StepOutcome::Stepped { result, .. } = step_at(&p, &lab(&[5]), &mut env).unwrap() else {
        panic!();
    };
    // A trace claiming add(3,4) = 8 violates add's declared semantics.
    let mut bad = Trace::new();
    bad.bind(
        lab(&[5, 1]),
        TraceEntry {
            fn_name: "add".into(),
            arg: PrimExpr::Tuple(vec![
                PrimExpr::Value(PrimValue::Int(3)),
                PrimExpr::Value(PrimValue::Int(4)),
            ]),
            result: parse("v := <8>\nret v").unwrap(),
        },
    )
    .unwrap();
    let mut env = TraceEnv::new(&bad, &reg);
    let err = step_at(&result, &lab(&[5, 1]), &mut env).unwrap_err();
    assert!(matches!(
        err,
        opal_core::rewrite::StepError::Runtime(RuntimeError::TraceCorruption { .. })
    ));
}

#[test]
fn coin_resolves_to_either_boolean_per_trace() {
    let mut e = parse("u := ()\nz := coin u\nret z").unwrap();
    e.stmts.insert(
        0,
        opal_core::Statement::new(
            Var::new("coin"),
            Operation::Prim(PrimValue::extern_fn("coin")),
        ),
    );
    let p = init_labels(&e);
    let reg = standard_registry(&SimTimings::default());
    for value in [true, false] {
        let empty = Trace::new();
        let mut env = TraceEnv::new(&empty, &reg);
        let StepOutcome::Stepped { result, .. } = step_at(&p, &lab(&[3]), &mut env).unwrap()
        else {
            panic!();
        };
        let mut trace = Trace::new();
        trace
            .bind(
                lab(&[3, 1]),
                TraceEntry {
                    fn_name: "coin".into(),
                    arg: PrimExpr::unit(),
                    result: parse(if value { "v := <t>\nret v" } else { "v := <f>\nret v" })
                        .unwrap(),
                },
            )
            .unwrap();
        let mut env = TraceEnv::new(&trace, &reg);
        let StepOutcome::Stepped { result, .. } =
            step_at(&result, &lab(&[3, 1]), &mut env).unwrap()
        else {
            panic!();
        };
        let got = result.statement(&lab(&[3, 1, 1])).unwrap();
        assert_eq!(got.op, Operation::Prim(PrimValue::Bool(value)));
    }
}

#[test]
fn unresolved_task_blocks() {
    let p = dispatch_resolve_example();
    let reg = standard_registry(&SimTimings::default());
    let empty = Trace::new();
    let mut env = TraceEnv::new(&empty, &reg);
    let StepOutcome::Stepped { result, .. } = step_at(&p, &lab(&[5]), &mut env).unwrap() else {
        panic!();
    };
    // No trace entry for the task: blocked, but still formally steppable.
    match step_at(&result, &lab(&[5, 1]), &mut env).unwrap() {
        StepOutcome::Blocked => {}
        _ => panic!("expected blocked"),
    }
    assert!(steppable_set(&result).contains(&lab(&[5, 1])));
}

#[test]
fn projection_out_of_range_is_stuck() {
    let e = parse("a := <1>\nt := (a, a)\nq := prj 9 t\nret q").unwrap();
    let p = init_labels(&e);
    let reg = standard_registry(&SimTimings::default());
    let empty = Trace::new();
    let mut env = TraceEnv::new(&empty, &reg);
    match step_at(&p, &lab(&[3]), &mut env).unwrap() {
        StepOutcome::Absent => {}
        _ => panic!("expected stuck projection"),
    }
    assert!(!steppable_set(&p).contains(&lab(&[3])));
}

#[test]
fn stepping_an_absent_label_is_absent() {
    let p = dispatch_resolve_example();
    let reg = standard_registry(&SimTimings::default());
    let empty = Trace::new();
    let mut env = TraceEnv::new(&empty, &reg);
    match step_at(&p, &lab(&[9]), &mut env).unwrap() {
        StepOutcome::Absent => {}
        _ => panic!(),
    }
    assert!(decompose(&p, &lab(&[9])).is_none());
}

#[test]
fn pexp_depth_two() {
    let e = parse("a := <1>\nb := <2>\nc := <3>\ninner := (b, c)\nouter := (a, inner)\nret outer")
        .unwrap();
    let p = init_labels(&e);
    assert_eq!(
        pexp(&p, &Var::new("outer"), None).unwrap().canonical(),
        "(1, (2, 3))"
    );
}

/// Strong confluence: for two distinct steppable labels under a fixed trace,
/// stepping in either order reaches the same term — structurally equal,
/// thanks to label-derived freshening.
#[test]
fn strong_confluence_diamond_on_fuzzed_terms() {
    let reg = standard_registry(&SimTimings::default());
    let mut rng = SplitMix64::new(0xD1A30);
    let mut checked = 0;
    let mut seed = 0;
    while checked < 40 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        let p0 = init_labels(&tp.composed);
        // Walk a few random steps in, then check the diamond at each state.
        let mut p = p0;
        for _ in 0..6 {
            let steppable: Vec<Label> = steppable_set(&p)
                .into_iter()
                .filter(|l| match p.statement(l).map(|s| &s.op) {
                    Some(Operation::Task(_)) => tp.trace.get(l).is_some(),
                    _ => true,
                })
                .collect();
            if steppable.len() < 2 {
                break;
            }
            let i = rng.below(steppable.len());
            let mut j = rng.below(steppable.len());
            if i == j {
                j = (j + 1) % steppable.len();
            }
            let (l1, l2) = (steppable[i].clone(), steppable[j].clone());
            let step = |p: &LabeledExpr, l: &Label| {
                let mut env = TraceEnv::new(&tp.trace, &reg);
                match step_at(p, l, &mut env).unwrap() {
                    StepOutcome::Stepped { result, .. } => result,
                    _ => panic!("steppable label {l} did not step"),
                }
            };
            let p1 = step(&p, &l1);
            let p12 = step(&p1, &l2);
            let p2 = step(&p, &l2);
            let p21 = step(&p2, &l1);
            assert_eq!(p12, p21, "diamond failed at seed {seed} ({l1}, {l2})");
            checked += 1;
            p = p1;
        }
    }
}

/// Preservation: well-formedness and label-independence survive every step,
/// and erased terms stay well-formed after long random walks.
#[test]
fn preservation_under_random_walks() {
    let reg = standard_registry(&SimTimings::default());
    let mut done = 0;
    let mut seed = 1000;
    while done < 15 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        let p0 = init_labels(&tp.composed);
        // pure_run with invariant checking asserts preservation per step.
        let run = pure_run(&p0, &tp.trace, &reg, OrderPolicy::Random(seed), 100_000, true)
            .unwrap();
        assert!(run.terminated);
        assert!(label_independent(&run.final_term));
        assert!(
            opal_core::check_well_formed(&BTreeSet::new(), &erase_labels(&run.final_term))
                .is_ok()
        );
        // The collected resolutions replay to the identical run.
        let replay = pure_run(
            &p0,
            &run.resolutions,
            &reg,
            OrderPolicy::Random(seed),
            100_000,
            false,
        )
        .unwrap();
        assert_eq!(
            erase_labels(&replay.final_term),
            erase_labels(&run.final_term)
        );
        assert!(alpha_equal(
            &erase_labels(&replay.final_term),
            &erase_labels(&run.final_term)
        ));
        done += 1;
    }
}
