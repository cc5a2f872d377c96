//! Builtin providers and the helpers that build streamed results.
//!
//! Effectful and remote calls are simulated against the clock with
//! configurable timings so that schedules are analytically predictable.

use crate::church::encode_bool as church_bool_expr;
use crate::syntax::{PrimExpr, PrimValue, Var};

use super::{
    expect_int, expect_str, expect_tuple, print_renderer, ret_prim, tuple_expr, value_expr,
    CallCx, ProviderKind, ProviderRegistry, ProviderResponse, ProviderSpec,
};

// ---------------------------------------------------------------------------
// Timing configuration
// ---------------------------------------------------------------------------

/// Timing table for the simulated providers. Defaults give the desk-scale
/// benchmark schedule: ten cities streamed at 400ms spacing completing at
/// 4000ms, excursions streaming their first chunk after 25ms and finishing
/// at 4000ms.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimTimings {
    pub cities: Vec<String>,
    pub cities_spacing_ms: u64,
    pub cities_done_ms: u64,
    pub excursions_chunk_offsets: Vec<u64>,
    pub excursions_done_ms: u64,
    pub llm_latency_ms: u64,
    pub wiki_latency_ms: u64,
    pub verify_latency_ms: u64,
    pub expand_latency_ms: u64,
    pub expand_width: usize,
    pub score_latency_ms: u64,
    pub tts_chunk_spacing_ms: u64,
    pub tts_chunks: usize,
    pub delay_default_ms: u64,
    pub io_base_ms: u64,
    pub io_jitter_ms: u64,
}

impl Default for SimTimings {
    fn default() -> Self {
        SimTimings {
            cities: [
                "Honolulu",
                "Jakarta",
                "Auckland",
                "Sydney",
                "Melbourne",
                "Suva",
                "Apia",
                "Wellington",
                "Brisbane",
                "Nadi",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            cities_spacing_ms: 400,
            cities_done_ms: 4000,
            excursions_chunk_offsets: vec![25, 1000, 2000, 3000, 4000],
            excursions_done_ms: 4000,
            llm_latency_ms: 4000,
            wiki_latency_ms: 800,
            verify_latency_ms: 500,
            expand_latency_ms: 1500,
            expand_width: 4,
            score_latency_ms: 1000,
            tts_chunk_spacing_ms: 200,
            tts_chunks: 5,
            delay_default_ms: 100,
            io_base_ms: 20,
            io_jitter_ms: 80,
        }
    }
}

fn spec(
    kind: ProviderKind,
    behavior: impl Fn(&mut CallCx) -> Result<ProviderResponse, String> + Send + Sync + 'static,
) -> ProviderSpec {
    ProviderSpec {
        kind,
        local: false,
        output: None,
        behavior: Box::new(behavior),
        semantics: None,
    }
}

fn excursion_words(city: &str) -> Vec<String> {
    vec![
        "Top".to_string(),
        "excursions".to_string(),
        "around".to_string(),
        format!("{city}:"),
        format!("the {city} harbour walk"),
    ]
}

/// The standard provider registry used by the CLI and benchmarks.
pub fn standard_registry(t: &SimTimings) -> ProviderRegistry {
    let mut reg = ProviderRegistry::new();

    // print(handle, value) -> fresh handle; appends the value to the output
    // channel at dispatch time.
    reg.register(
        "print",
        ProviderSpec {
            kind: ProviderKind::Sync,
            local: true,
            output: Some(Box::new(print_renderer)),
            behavior: Box::new(|cx| {
                expect_tuple(cx.arg, 2)?;
                let h = cx.mint_handle();
                Ok(ProviderResponse::Value(value_expr(PrimValue::Handle(h))))
            }),
            semantics: None,
        },
    );

    // Arithmetic; registered under both spellings.
    for name in ["add", "plus"] {
        reg.register(
            name,
            ProviderSpec {
                kind: ProviderKind::Sync,
                local: false,
                output: None,
                behavior: Box::new(|cx| {
                    let parts = expect_tuple(cx.arg, 2)?;
                    let a = expect_int(&parts[0])?;
                    let b = expect_int(&parts[1])?;
                    Ok(ProviderResponse::Value(value_expr(PrimValue::Int(a + b))))
                }),
                semantics: Some(Box::new(|arg, result| {
                    let PrimExpr::Tuple(parts) = arg else { return false };
                    let (Some(a), Some(b)) = (as_int(&parts[0]), as_int(&parts[1])) else {
                        return false;
                    };
                    ret_prim(result) == Some(&PrimValue::Int(a + b))
                })),
            },
        );
    }

    reg.register(
        "inc",
        ProviderSpec {
            kind: ProviderKind::Sync,
            local: false,
            output: None,
            behavior: Box::new(|cx| {
                let n = expect_int(cx.arg)?;
                Ok(ProviderResponse::Value(value_expr(PrimValue::Int(n + 1))))
            }),
            semantics: Some(Box::new(|arg, result| {
                let Some(n) = as_int(arg) else { return false };
                ret_prim(result) == Some(&PrimValue::Int(n + 1))
            })),
        },
    );

    // coin() -> <t> | <f>, seeded.
    reg.register(
        "coin",
        ProviderSpec {
            kind: ProviderKind::Sync,
            local: false,
            output: None,
            behavior: Box::new(|cx| {
                let b = cx.det_hash("coin") & 1 == 1;
                Ok(ProviderResponse::Value(value_expr(PrimValue::Bool(b))))
            }),
            semantics: Some(Box::new(|_arg, result| {
                matches!(ret_prim(result), Some(PrimValue::Bool(_)))
            })),
        },
    );

    // delay(ms, v) -> v after ms.
    reg.register(
        "delay",
        spec(ProviderKind::Async, |cx| {
            let parts = expect_tuple(cx.arg, 2)?;
            let ms = expect_int(&parts[0])?;
            if ms < 0 {
                return Err("negative delay".to_string());
            }
            Ok(ProviderResponse::Delayed {
                delay_ms: ms as u64,
                result: super::prim_expr_to_expr(&parts[1]),
            })
        }),
    );

    // llm_sim(prompt) -> full generated text after the configured latency.
    let latency = t.llm_latency_ms;
    reg.register(
        "llm_sim",
        spec(ProviderKind::Async, move |cx| {
            let prompt = expect_str(cx.arg)?;
            Ok(ProviderResponse::Delayed {
                delay_ms: latency,
                result: value_expr(PrimValue::Str(format!("generated({prompt})"))),
            })
        }),
    );

    let latency = t.wiki_latency_ms;
    reg.register(
        "wiki_sim",
        spec(ProviderKind::Async, move |cx| {
            let q = expect_str(cx.arg)?;
            Ok(ProviderResponse::Delayed {
                delay_ms: latency,
                result: value_expr(PrimValue::Str(format!("evidence({q})"))),
            })
        }),
    );

    // verify_sim(evidence) -> Church boolean; seeded, varies by occurrence.
    let latency = t.verify_latency_ms;
    reg.register(
        "verify_sim",
        spec(ProviderKind::Async, move |cx| {
            let verdict = cx.det_hash("verify_sim") & 1 == 1;
            Ok(ProviderResponse::Delayed {
                delay_ms: latency,
                result: church_bool_expr(verdict),
            })
        }),
    );

    // cities_sim(region): streams city names.
    let cities: Vec<String> = t.cities.clone();
    let spacing = t.cities_spacing_ms;
    let done = t.cities_done_ms;
    reg.register(
        "cities_sim",
        spec(ProviderKind::Streaming, move |cx| {
            expect_str(cx.arg)?;
            let chunks = cities
                .iter()
                .enumerate()
                .map(|(i, c)| (spacing * (i as u64 + 1), PrimValue::Str(c.clone())))
                .collect();
            Ok(ProviderResponse::Stream {
                chunks,
                done_ms: done,
            })
        }),
    );

    // excursions_sim(city): streams description chunks.
    let offsets = t.excursions_chunk_offsets.clone();
    let done = t.excursions_done_ms;
    reg.register(
        "excursions_sim",
        spec(ProviderKind::Streaming, move |cx| {
            let city = expect_str(cx.arg)?;
            let words = excursion_words(city);
            let chunks = offsets
                .iter()
                .zip(words)
                .map(|(off, w)| (*off, PrimValue::Str(w)))
                .collect();
            Ok(ProviderResponse::Stream {
                chunks,
                done_ms: done,
            })
        }),
    );

    // expand_sim(question) -> tuple of candidate answers.
    let latency = t.expand_latency_ms;
    let width = t.expand_width;
    reg.register(
        "expand_sim",
        spec(ProviderKind::Async, move |cx| {
            let q = expect_str(cx.arg)?;
            let cands: Vec<PrimValue> = (1..=width)
                .map(|i| PrimValue::Str(format!("cand{i}({q})")))
                .collect();
            Ok(ProviderResponse::Delayed {
                delay_ms: latency,
                result: tuple_expr(cands),
            })
        }),
    );

    // score_sim(candidate) -> integer score.
    let latency = t.score_latency_ms;
    reg.register(
        "score_sim",
        spec(ProviderKind::Async, move |cx| {
            expect_str(cx.arg)?;
            let score = (cx.det_hash("score_sim") % 100) as i64;
            Ok(ProviderResponse::Delayed {
                delay_ms: latency,
                result: value_expr(PrimValue::Int(score)),
            })
        }),
    );

    // sort_sim(((cand, score), ...)) -> ranked text, best first.
    reg.register(
        "sort_sim",
        spec(ProviderKind::Sync, |cx| {
            let PrimExpr::Tuple(pairs) = cx.arg else {
                return Err("expected a tuple of (candidate, score) pairs".to_string());
            };
            let mut scored = Vec::new();
            for p in pairs {
                let parts = expect_tuple(p, 2)?;
                let cand = expect_str(&parts[0])?.to_string();
                let score = expect_int(&parts[1])?;
                scored.push((cand, score));
            }
            scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let ranked: Vec<String> = scored
                .iter()
                .enumerate()
                .map(|(i, (c, s))| format!("{}. {c} [{s}]", i + 1))
                .collect();
            Ok(ProviderResponse::Value(value_expr(PrimValue::Str(
                ranked.join(" "),
            ))))
        }),
    );

    // tts_llm_sim(prompt): streams clause chunks.
    let spacing = t.tts_chunk_spacing_ms;
    let n = t.tts_chunks;
    reg.register(
        "tts_llm_sim",
        spec(ProviderKind::Streaming, move |cx| {
            let prompt = expect_str(cx.arg)?;
            let chunks = (1..=n)
                .map(|i| {
                    (
                        spacing * i as u64,
                        PrimValue::Str(format!("{prompt}-{i}")),
                    )
                })
                .collect();
            Ok(ProviderResponse::Stream {
                chunks,
                done_ms: spacing * n as u64,
            })
        }),
    );

    // Sequencing-handle simulators: open/read/write/fork/join. Latencies are
    // seeded with per-call jitter so independent calls race differently
    // across seeds.
    let io = (t.io_base_ms, t.io_jitter_ms);
    let jittered = move |cx: &CallCx, name: &str| -> u64 {
        io.0 + if io.1 == 0 { 0 } else { cx.det_hash(name) % io.1 }
    };

    reg.register(
        "open",
        ProviderSpec {
            kind: ProviderKind::Async,
            local: true,
            output: None,
            behavior: Box::new(move |cx| {
                let parts = expect_tuple(cx.arg, 2)?;
                expect_str(&parts[1])?;
                let delay = jittered(cx, "open");
                let thread = cx.mint_handle();
                let fd = cx.mint_handle();
                Ok(ProviderResponse::Delayed {
                    delay_ms: delay,
                    result: tuple_expr(vec![PrimValue::Handle(thread), PrimValue::Handle(fd)]),
                })
            }),
            semantics: None,
        },
    );

    reg.register(
        "read",
        ProviderSpec {
            kind: ProviderKind::Async,
            local: true,
            output: None,
            behavior: Box::new(move |cx| {
                expect_tuple(cx.arg, 2)?;
                let delay = jittered(cx, "read");
                let thread = cx.mint_handle();
                Ok(ProviderResponse::Delayed {
                    delay_ms: delay,
                    result: tuple_expr(vec![
                        PrimValue::Handle(thread),
                        PrimValue::Str("file-data".to_string()),
                    ]),
                })
            }),
            semantics: None,
        },
    );

    reg.register(
        "write",
        ProviderSpec {
            kind: ProviderKind::Async,
            local: true,
            output: None,
            behavior: Box::new(move |cx| {
                expect_tuple(cx.arg, 3)?;
                let delay = jittered(cx, "write");
                let thread = cx.mint_handle();
                Ok(ProviderResponse::Delayed {
                    delay_ms: delay,
                    result: value_expr(PrimValue::Handle(thread)),
                })
            }),
            semantics: None,
        },
    );

    reg.register(
        "fork",
        ProviderSpec {
            kind: ProviderKind::Async,
            local: true,
            output: None,
            behavior: Box::new(move |cx| {
                let delay = jittered(cx, "fork");
                let a = cx.mint_handle();
                let b = cx.mint_handle();
                Ok(ProviderResponse::Delayed {
                    delay_ms: delay,
                    result: tuple_expr(vec![PrimValue::Handle(a), PrimValue::Handle(b)]),
                })
            }),
            semantics: None,
        },
    );

    reg.register(
        "join",
        ProviderSpec {
            kind: ProviderKind::Async,
            local: true,
            output: None,
            behavior: Box::new(move |cx| {
                expect_tuple(cx.arg, 2)?;
                let delay = jittered(cx, "join");
                let thread = cx.mint_handle();
                Ok(ProviderResponse::Delayed {
                    delay_ms: delay,
                    result: value_expr(PrimValue::Handle(thread)),
                })
            }),
            semantics: None,
        },
    );

    // collect(acc, v): string-accumulator probe used by list oracles.
    reg.register(
        "collect",
        ProviderSpec {
            kind: ProviderKind::Sync,
            local: true,
            output: None,
            behavior: Box::new(|cx| {
                let parts = expect_tuple(cx.arg, 2)?;
                let acc = expect_str(&parts[0])?;
                let item = crate::syntax::render_prim_expr(&parts[1]);
                let joined = if acc.is_empty() {
                    item
                } else {
                    format!("{acc},{item}")
                };
                Ok(ProviderResponse::Value(value_expr(PrimValue::Str(joined))))
            }),
            semantics: None,
        },
    );

    reg
}

fn as_int(e: &PrimExpr) -> Option<i64> {
    match e {
        PrimExpr::Value(PrimValue::Int(n)) => Some(*n),
        _ => None,
    }
}

/// Variables free in a program that the runtime provides: each registered
/// provider name plus the standard handles.
pub fn ambient_bindings(reg: &ProviderRegistry) -> Vec<(Var, PrimValue)> {
    let mut out: Vec<(Var, PrimValue)> = reg
        .names()
        .map(|n| (Var::new(n), PrimValue::extern_fn(n)))
        .collect();
    out.push((
        Var::new("stdout"),
        PrimValue::Handle(crate::syntax::Handle::named("stdout")),
    ));
    out.push((
        Var::new("thread"),
        PrimValue::Handle(crate::syntax::Handle::named("thread")),
    ));
    out
}
