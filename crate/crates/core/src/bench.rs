//! Run driver and benchmark harness.
//!
//! `execute` wires a parsed program to the runtime (registry, clock, seed,
//! record/replay, trace playback) and runs it under a strategy. `run_bench`
//! runs each configured program under each strategy on the virtual clock and
//! aggregates latency/running-time metrics; identical configs produce
//! byte-identical reports.

use serde::{Deserialize, Serialize};

use crate::church::compose_program;
use crate::eval::{run, RunEnv, RunError, RunOptions, RunOutcome, Strategy};
use crate::rewrite::{Trace, TraceEnv};
use crate::runtime::{
    standard_registry, ClockMode, ExternalRuntime, ReplayRecord, ReplayStore, SimTimings,
};
use crate::syntax::{parse, Expr, ParseError};

// ---------------------------------------------------------------------------
// Single-run driver
// ---------------------------------------------------------------------------

pub struct ExecConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub clock: ClockMode,
    pub timings: SimTimings,
    pub budget: u64,
    pub prelude: bool,
    pub record: bool,
    pub replay: Option<ReplayStore>,
    /// Deterministic playback of an external-interaction trace instead of a
    /// live runtime (no clock; resolution by task label).
    pub trace_in: Option<Trace>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            strategy: Strategy::Opportunistic,
            seed: 0,
            clock: ClockMode::Virtual,
            timings: SimTimings::default(),
            budget: RunOptions::default().budget,
            prelude: true,
            record: false,
            replay: None,
            trace_in: None,
        }
    }
}

pub struct Execution {
    pub outcome: RunOutcome,
    pub recording: Option<Vec<ReplayRecord>>,
}

/// Compose the program with the runtime bindings (and prelude) and run it.
pub fn execute(program: &Expr, cfg: ExecConfig) -> Result<Execution, RunError> {
    let registry = standard_registry(&cfg.timings);
    let opts = RunOptions {
        strategy: cfg.strategy,
        budget: cfg.budget,
    };
    if let Some(trace) = &cfg.trace_in {
        let composed = compose_program(program, &registry, cfg.prelude);
        let mut env = RunEnv::Trace(TraceEnv::new(trace, &registry));
        let outcome = run(&composed, &mut env, &opts)?;
        return Ok(Execution {
            outcome,
            recording: None,
        });
    }
    let mut rt = ExternalRuntime::new(registry, cfg.clock, cfg.seed);
    rt.streaming_mode = cfg.strategy.streaming_mode();
    if cfg.record {
        rt.enable_recording();
    }
    if let Some(store) = cfg.replay {
        rt.enable_replay(store);
    }
    let composed = compose_program(program, &rt.registry, cfg.prelude);
    let outcome = {
        let mut env = RunEnv::Live(&mut rt);
        run(&composed, &mut env, &opts)?
    };
    Ok(Execution {
        outcome,
        recording: rt.take_recording(),
    })
}

// ---------------------------------------------------------------------------
// Benchmark configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchProgram {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub programs: Vec<BenchProgram>,
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub clock: ClockMode,
    pub repetitions: u32,
    pub timings: SimTimings,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            programs: builtin_programs(),
            strategies: vec![Strategy::Cbv, Strategy::Opportunistic],
            seed: 0,
            clock: ClockMode::Virtual,
            repetitions: 3,
            timings: SimTimings::default(),
        }
    }
}

pub const CITY_EXCURSIONS: &str = include_str!("../assets/bench/city_excursions.opal");
pub const CITY_EXCURSIONS_DEMO: &str = include_str!("../assets/bench/city_excursions_demo.opal");
pub const FACT_CHECK: &str = include_str!("../assets/bench/fact_check.opal");
pub const TREE_SEARCH: &str = include_str!("../assets/bench/tree_search.opal");
pub const TTS: &str = include_str!("../assets/bench/tts.opal");

/// The built-in desk-scale suite.
pub fn builtin_programs() -> Vec<BenchProgram> {
    [
        ("city_excursions", CITY_EXCURSIONS),
        ("fact_check", FACT_CHECK),
        ("tree_search", TREE_SEARCH),
        ("tts", TTS),
    ]
    .iter()
    .map(|(name, source)| BenchProgram {
        name: name.to_string(),
        source: source.to_string(),
    })
    .collect()
}

pub fn builtin_program(name: &str) -> Option<BenchProgram> {
    builtin_programs().into_iter().find(|p| p.name == name)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BenchEntry {
    pub program: String,
    pub strategy: Strategy,
    pub latency_ms: Option<f64>,
    pub running_time_ms: f64,
    pub dispatches: f64,
    pub macro_steps: f64,
    pub repetitions: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("program `{name}` failed to parse: {err}")]
    Parse { name: String, err: ParseError },
    #[error("program `{name}`: {err}")]
    Run { name: String, err: RunError },
}

/// Run every (program, strategy) pair `repetitions` times and aggregate.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let mut entries = Vec::new();
    for prog in &cfg.programs {
        let parsed = parse(&prog.source).map_err(|err| BenchError::Parse {
            name: prog.name.clone(),
            err,
        })?;
        for &strategy in &cfg.strategies {
            let mut latency_sum: Option<f64> = None;
            let mut running_sum = 0f64;
            let mut dispatch_sum = 0f64;
            let mut steps_sum = 0f64;
            for _ in 0..cfg.repetitions {
                let exec = execute(
                    &parsed,
                    ExecConfig {
                        strategy,
                        seed: cfg.seed,
                        clock: cfg.clock,
                        timings: cfg.timings.clone(),
                        ..ExecConfig::default()
                    },
                )
                .map_err(|err| BenchError::Run {
                    name: prog.name.clone(),
                    err,
                })?;
                let m = &exec.outcome.metrics;
                if let Some(l) = m.latency_first_output_ms {
                    *latency_sum.get_or_insert(0.0) += l as f64;
                }
                running_sum += m.running_time_ms as f64;
                dispatch_sum += exec.outcome.dispatch_multiset().len() as f64;
                steps_sum += m.macro_steps as f64;
            }
            let reps = cfg.repetitions as f64;
            entries.push(BenchEntry {
                program: prog.name.clone(),
                strategy,
                latency_ms: latency_sum.map(|s| s / reps),
                running_time_ms: running_sum / reps,
                dispatches: dispatch_sum / reps,
                macro_steps: steps_sum / reps,
                repetitions: cfg.repetitions,
            });
        }
    }
    Ok(BenchReport { entries })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: one block per metric, programs as rows and
    /// strategies as columns.
    pub fn table(&self) -> String {
        let mut programs: Vec<&str> = Vec::new();
        let mut strategies: Vec<Strategy> = Vec::new();
        for e in &self.entries {
            if !programs.contains(&e.program.as_str()) {
                programs.push(&e.program);
            }
            if !strategies.contains(&e.strategy) {
                strategies.push(e.strategy);
            }
        }
        let lookup = |p: &str, s: Strategy| {
            self.entries
                .iter()
                .find(|e| e.program == p && e.strategy == s)
        };
        let mut out = String::new();
        for (title, field) in [
            ("Latency (ms)", 0usize),
            ("Running time (ms)", 1usize),
        ] {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("{:<22}", "program"));
            for s in &strategies {
                out.push_str(&format!("{:>16}", s.to_string()));
            }
            out.push('\n');
            for p in &programs {
                out.push_str(&format!("{p:<22}"));
                for s in &strategies {
                    let cell = match lookup(p, *s) {
                        Some(e) => {
                            let v = if field == 0 {
                                e.latency_ms
                            } else {
                                Some(e.running_time_ms)
                            };
                            match v {
                                Some(x) => format!("{x:.1}"),
                                None => "-".to_string(),
                            }
                        }
                        None => "-".to_string(),
                    };
                    out.push_str(&format!("{cell:>16}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
