//! Runtime tests: task lifecycle, record/replay, streaming shapes, and the
//! output-channel guarantees.

use std::collections::HashMap;

use opal_core::bench::{execute, ExecConfig};
use opal_core::church::{decode_list, make_streaming_result, StreamSegment};
use opal_core::corpus::{gen_program, GenConfig};
use opal_core::eval::{RunStatus, Strategy};
use opal_core::rewrite::StepKind;
use opal_core::runtime::{
    store_from_str, store_to_string, ClockMode, ExternalRuntime, ReplayStore, RuntimeError,
    SimTimings, StreamingMode,
};
use opal_core::syntax::{parse, Operation, PrimExpr, PrimValue, TaskId, TaskOp};

fn timings() -> SimTimings {
    SimTimings::default()
}

#[test]
fn coin_is_seeded_and_deterministic() {
    let program = parse("u := ()\nc := coin u\nret c").unwrap();
    let flip = |seed| {
        let exec = execute(
            &program,
            ExecConfig {
                seed,
                prelude: false,
                ..ExecConfig::default()
            },
        )
        .unwrap();
        match opal_core::runtime::ret_prim(&exec.outcome.final_expr()) {
            Some(PrimValue::Bool(b)) => *b,
            other => panic!("expected a boolean, got {other:?}"),
        }
    };
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..16 {
        assert_eq!(flip(seed), flip(seed), "same seed, same flip");
        seen.insert(flip(seed));
    }
    assert_eq!(seen.len(), 2, "both outcomes occur across seeds");
}

#[test]
fn every_dispatched_task_resolves_exactly_once() {
    for seed in [7, 21, 90] {
        let program = gen_program(seed, &GenConfig::default());
        let exec = execute(
            &program,
            ExecConfig {
                seed,
                prelude: false,
                ..ExecConfig::default()
            },
        )
        .unwrap();
        let mut dispatched: Vec<TaskId> = Vec::new();
        let mut resolved: Vec<TaskId> = Vec::new();
        for c in &exec.outcome.call_log {
            match c.record.kind {
                StepKind::Dispatch => {
                    if let Some(Operation::Task(t)) = c.record.new.first().map(|s| &s.op) {
                        dispatched.push(t.task);
                    }
                }
                StepKind::Resolve => {
                    if let Operation::Task(t) = &c.record.old.op {
                        resolved.push(t.task);
                    }
                }
                _ => {}
            }
        }
        if exec.outcome.status == RunStatus::Terminated {
            dispatched.sort();
            resolved.sort();
            let unique: std::collections::BTreeSet<_> = resolved.iter().collect();
            assert_eq!(unique.len(), resolved.len(), "no task resolved twice");
            assert_eq!(dispatched, resolved, "no task dropped");
        }
    }
}

#[test]
fn streaming_shape_matches_the_partial_list_figure() {
    // Chunks a, m, z with two gaps: append a; hole; append m; hole; append z.
    let hole = |id| {
        StreamSegment::Hole(TaskOp {
            f: PrimValue::extern_fn("cont"),
            arg: PrimExpr::unit(),
            task: TaskId(id),
        })
    };
    let e = make_streaming_result(vec![
        StreamSegment::Chunk(PrimValue::str("a")),
        hole(1),
        StreamSegment::Chunk(PrimValue::str("m")),
        hole(2),
        StreamSegment::Chunk(PrimValue::str("z")),
    ]);
    let def = e.stmts.iter().find(|s| s.bound == e.ret).unwrap();
    let Operation::Fun { body, .. } = &def.op else {
        panic!("partial list is a function");
    };
    let calls: Vec<bool> = body
        .stmts
        .iter()
        .filter_map(|s| match &s.op {
            Operation::Call { f, .. } => {
                Some(body.stmts.iter().any(|d| &d.bound == f && matches!(d.op, Operation::Task(_))))
            }
            _ => None,
        })
        .collect();
    // append, hole, append, hole, append
    assert_eq!(calls, [false, true, false, true, false]);
    let (prefix, holes) = decode_list(&e).unwrap();
    assert_eq!(prefix, vec![PrimValue::str("a")]);
    assert_eq!(holes, 2);

    // Zero chunks: a single task hole.
    let empty = make_streaming_result(vec![hole(3)]);
    let (prefix, holes) = decode_list(&empty).unwrap();
    assert!(prefix.is_empty());
    assert_eq!(holes, 1);
}

#[test]
fn blocking_mode_delivers_one_full_completion() {
    let mut rt = ExternalRuntime::new(
        opal_core::runtime::standard_registry(&timings()),
        ClockMode::Virtual,
        0,
    );
    rt.streaming_mode = StreamingMode::Blocking;
    let arg = PrimExpr::Value(PrimValue::str("Oceania"));
    let id = match rt.dispatch_call("cities_sim", &arg).unwrap() {
        opal_core::runtime::DispatchResult::Task(id) => id,
        _ => panic!(),
    };
    assert!(rt.advance_until_task(id));
    assert_eq!(rt.clock.now_ms(), 4000, "single completion at stream end");
    let (done, expr) = rt.poll_completions().pop().unwrap();
    assert_eq!(done, id);
    let (prefix, holes) = decode_list(&expr).unwrap();
    assert_eq!(prefix.len(), 10);
    assert_eq!(holes, 0);
}

#[test]
fn streamed_mode_chains_partials_at_chunk_offsets() {
    let mut rt = ExternalRuntime::new(
        opal_core::runtime::standard_registry(&timings()),
        ClockMode::Virtual,
        0,
    );
    let arg = PrimExpr::Value(PrimValue::str("Oceania"));
    let mut id = match rt.dispatch_call("cities_sim", &arg).unwrap() {
        opal_core::runtime::DispatchResult::Task(id) => id,
        _ => panic!(),
    };
    let mut cities = Vec::new();
    let mut completed: HashMap<TaskId, _> = HashMap::new();
    loop {
        assert!(rt.advance_until_task(id));
        completed.extend(rt.poll_completions());
        let expr = completed.get(&id).expect("chain completes in order").clone();
        let (prefix, holes) = decode_list(&expr).unwrap();
        // No completion is delivered before its offset.
        assert_eq!(rt.clock.now_ms(), 400 * (cities.len() as u64 + 1).min(10));
        cities.extend(prefix);
        if holes == 0 {
            break;
        }
        // Find the continuation task inside the partial body.
        let def = expr.stmts.iter().find(|s| s.bound == expr.ret).unwrap();
        let Operation::Fun { body, .. } = &def.op else {
            panic!()
        };
        id = body
            .stmts
            .iter()
            .find_map(|s| match &s.op {
                Operation::Task(t) => Some(t.task),
                _ => None,
            })
            .expect("continuation task");
    }
    assert_eq!(cities.len(), 10);
    assert_eq!(cities[0], PrimValue::str("Honolulu"));
    assert_eq!(rt.clock.now_ms(), 4000);
}

#[test]
fn output_channel_identical_across_strategies_with_threaded_handles() {
    // Prints threaded through one handle chain; independent handles may
    // reorder, threaded ones never do.
    let program = parse(
        "a := <1>\nb := <2>\ns1 := print (stdout, a)\ns2 := print (s1, b)\ns3 := print (s2, a)\nret s3",
    )
    .unwrap();
    let run = |strategy| {
        execute(
            &program,
            ExecConfig {
                strategy,
                prelude: false,
                ..ExecConfig::default()
            },
        )
        .unwrap()
        .outcome
    };
    let opp = run(Strategy::Opportunistic);
    let cbv = run(Strategy::Cbv);
    assert_eq!(opp.output_bytes(), b"1\n2\n1\n");
    assert_eq!(opp.output_bytes(), cbv.output_bytes());
}

#[test]
fn record_then_replay_reproduces_run_and_store() {
    // Three recorded providers: cities_sim, excursions_sim, llm_sim.
    let src = "\
cities := cities_sim <\"Oceania\">
body := fun (stdout, city):
    exc := excursions_sim city
    stdout := fold (exc, stdout, print)
    stdout
stdout := fold (cities, stdout, body)
extra := llm_sim <\"prompt\">
out := print (stdout, extra)
ret out";
    let program = parse(src).unwrap();
    let recorded = execute(
        &program,
        ExecConfig {
            record: true,
            seed: 3,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    let records = recorded.recording.unwrap();
    assert!(records.iter().any(|r| r.fn_name == "cities_sim"));
    assert!(records.iter().any(|r| r.fn_name == "excursions_sim"));
    assert!(records.iter().any(|r| r.fn_name == "llm_sim"));
    let text = store_to_string(&records);

    // Replay: identical output bytes, metrics, and call log.
    let replayed = execute(
        &program,
        ExecConfig {
            replay: Some(ReplayStore::from_str(&text).unwrap()),
            seed: 3,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    assert_eq!(replayed.outcome.output_bytes(), recorded.outcome.output_bytes());
    assert_eq!(
        replayed.outcome.metrics.latency_first_output_ms,
        recorded.outcome.metrics.latency_first_output_ms
    );
    assert_eq!(
        replayed.outcome.metrics.running_time_ms,
        recorded.outcome.metrics.running_time_ms
    );
    assert_eq!(
        replayed.outcome.call_log.len(),
        recorded.outcome.call_log.len()
    );
    for (a, b) in replayed.outcome.call_log.iter().zip(&recorded.outcome.call_log) {
        assert_eq!(a.at_ms, b.at_ms);
        assert_eq!(a.record.kind, b.record.kind);
        assert_eq!(a.record.label, b.record.label);
    }

    // Re-recording the replay reproduces the store byte-identically.
    let rerecorded = execute(
        &program,
        ExecConfig {
            record: true,
            replay: Some(ReplayStore::from_str(&text).unwrap()),
            seed: 3,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    let text2 = store_to_string(&rerecorded.recording.unwrap());
    assert_eq!(text, text2);
}

#[test]
fn replay_with_mutated_arg_misses() {
    let program = parse("r := llm_sim <\"alpha\">\nout := print (stdout, r)\nret out").unwrap();
    let recorded = execute(
        &program,
        ExecConfig {
            record: true,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    let text = store_to_string(&recorded.recording.unwrap());
    let mutated = parse("r := llm_sim <\"beta\">\nout := print (stdout, r)\nret out").unwrap();
    let err = match execute(
        &mutated,
        ExecConfig {
            replay: Some(ReplayStore::from_str(&text).unwrap()),
            ..ExecConfig::default()
        },
    ) {
        Err(e) => e,
        Ok(_) => panic!("expected a replay miss"),
    };
    let msg = err.to_string();
    assert!(msg.contains("replay miss"), "{msg}");
}

#[test]
fn store_text_roundtrip_preserves_offsets() {
    let program = parse(opal_core::bench::CITY_EXCURSIONS).unwrap();
    let recorded = execute(
        &program,
        ExecConfig {
            record: true,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    let records = recorded.recording.unwrap();
    let text = store_to_string(&records);
    let back = store_from_str(&text).unwrap();
    assert_eq!(back, records);
    let cities = back.iter().find(|r| r.fn_name == "cities_sim").unwrap();
    let offsets: Vec<u64> = cities.chunks.iter().map(|c| c.at_ms).collect();
    assert_eq!(offsets, (1..=10).map(|i| i * 400).collect::<Vec<_>>());
    assert_eq!(cities.done_ms, 4000);
}

#[test]
fn replay_corruption_against_declared_semantics() {
    // Record an add call, then tamper with its recorded result.
    let program = parse("t := (<3>, <4>)\nr := add t\nout := print (stdout, r)\nret out").unwrap();
    let recorded = execute(
        &program,
        ExecConfig {
            record: true,
            ..ExecConfig::default()
        },
    )
    .unwrap();
    let mut records = recorded.recording.unwrap();
    for r in &mut records {
        if r.fn_name == "add" {
            for c in &mut r.chunks {
                c.payload = c.payload.replace('7', "8");
            }
        }
    }
    let err = match execute(
        &program,
        ExecConfig {
            replay: Some(ReplayStore::new(records)),
            ..ExecConfig::default()
        },
    ) {
        Err(e) => e,
        Ok(_) => panic!("expected replay corruption"),
    };
    assert!(matches!(
        err,
        opal_core::eval::RunError::Step(opal_core::rewrite::StepError::Runtime(
            RuntimeError::ReplayCorrupt { .. }
        )) | opal_core::eval::RunError::Runtime(RuntimeError::ReplayCorrupt { .. })
    ));
}
