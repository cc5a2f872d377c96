use opal_core::bench::{execute, ExecConfig, CITY_EXCURSIONS};
use opal_core::eval::Strategy;
use opal_core::syntax::parse;

#[test]
fn city_excursions_schedule() {
    let program = parse(CITY_EXCURSIONS).unwrap();
    for (strategy, name) in [(Strategy::Opportunistic, "opp"), (Strategy::Cbv, "cbv")] {
        let exec = execute(
            &program,
            ExecConfig {
                strategy,
                ..ExecConfig::default()
            },
        )
        .unwrap();
        let m = &exec.outcome.metrics;
        println!(
            "{name}: status={:?} latency={:?} running={} steps={} dispatches={} stuck={}",
            exec.outcome.status,
            m.latency_first_output_ms,
            m.running_time_ms,
            m.macro_steps,
            exec.outcome.dispatch_multiset().len(),
            exec.outcome.stuck.len(),
        );
        for d in exec.outcome.stuck.iter().take(5) {
            println!("  stuck {}: {} ({})", d.label, d.statement, d.reason);
        }
        let out = String::from_utf8_lossy(&exec.outcome.output_bytes()).to_string();
        println!("  first output lines: {:?}", out.lines().take(3).collect::<Vec<_>>());
        println!("  total output lines: {}", out.lines().count());
    }
}

#[test]
fn confluence_machinery_works() {
    use opal_core::corpus::{gen_traced_program, pure_run, GenConfig, OrderPolicy};
    use opal_core::runtime::{standard_registry, SimTimings};
    use opal_core::syntax::{alpha_equal, erase_labels, init_labels};

    let reg = standard_registry(&SimTimings::default());
    let mut generated = 0;
    let mut seed = 0u64;
    while generated < 20 {
        seed += 1;
        let Some(tp) = gen_traced_program(seed, &GenConfig::default()) else {
            continue;
        };
        generated += 1;
        let p0 = init_labels(&tp.composed);
        let mut finals = Vec::new();
        for policy in [
            OrderPolicy::Ascending,
            OrderPolicy::Descending,
            OrderPolicy::Random(seed * 7 + 1),
            OrderPolicy::Random(seed * 7 + 2),
        ] {
            let run = pure_run(&p0, &tp.trace, &reg, policy, 100_000, true).unwrap();
            assert!(run.terminated, "seed {seed} did not terminate");
            finals.push(run);
        }
        let first = &finals[0];
        for other in &finals[1..] {
            assert_eq!(
                erase_labels(&first.final_term),
                erase_labels(&other.final_term),
                "seed {seed}: different step orders reached different normal forms"
            );
            assert_eq!(first.dispatches, other.dispatches, "seed {seed}");
            assert_eq!(first.output.bytes(), other.output.bytes(), "seed {seed}");
        }
        // The store-based live run agrees with the pure engine.
        assert!(
            alpha_equal(
                &erase_labels(&first.final_term),
                &tp.live_outcome.final_expr()
            ),
            "seed {seed}: store and pure engine disagree"
        );
        assert_eq!(
            first.dispatches,
            tp.live_outcome.dispatch_multiset(),
            "seed {seed}: dispatch multisets disagree"
        );
    }
    println!("validated {generated} generated programs");
}
