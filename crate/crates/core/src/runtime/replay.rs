//! Record/replay of provider interactions.
//!
//! Recording logs each non-local call's argument, result chunks, and chunk
//! offsets relative to dispatch. Replay rebuilds providers that re-emit the
//! recorded chunks at the recorded offsets on the clock, keyed by
//! (function, canonical argument, occurrence index).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::syntax::{parse, pretty_inline, render_prim_value, PrimValue};

use super::{ProviderResponse, RuntimeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayChunk {
    pub at_ms: u64,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    #[serde(rename = "fn")]
    pub fn_name: String,
    pub arg: String,
    pub occ: u64,
    pub chunks: Vec<ReplayChunk>,
    pub done_ms: u64,
    pub kind: String,
}

impl ReplayRecord {
    pub fn key(&self) -> (String, String, u64) {
        (self.fn_name.clone(), self.arg.clone(), self.occ)
    }
}

/// Serialize records as line-delimited JSON.
pub fn store_to_string(records: &[ReplayRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn store_from_str(text: &str) -> Result<Vec<ReplayRecord>, RuntimeError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| RuntimeError::StoreIo(e.to_string())))
        .collect()
}

#[derive(Default)]
pub struct Recorder {
    records: Vec<ReplayRecord>,
}

impl Recorder {
    pub fn record(&mut self, fn_name: &str, arg: &str, occ: u64, response: &ProviderResponse) {
        let rec = match response {
            ProviderResponse::Value(e) => ReplayRecord {
                fn_name: fn_name.to_string(),
                arg: arg.to_string(),
                occ,
                chunks: vec![ReplayChunk {
                    at_ms: 0,
                    payload: pretty_inline(e),
                }],
                done_ms: 0,
                kind: "sync".to_string(),
            },
            ProviderResponse::Delayed { delay_ms, result } => ReplayRecord {
                fn_name: fn_name.to_string(),
                arg: arg.to_string(),
                occ,
                chunks: vec![ReplayChunk {
                    at_ms: *delay_ms,
                    payload: pretty_inline(result),
                }],
                done_ms: *delay_ms,
                kind: "async".to_string(),
            },
            ProviderResponse::Stream { chunks, done_ms } => ReplayRecord {
                fn_name: fn_name.to_string(),
                arg: arg.to_string(),
                occ,
                chunks: chunks
                    .iter()
                    .map(|(at, v)| ReplayChunk {
                        at_ms: *at,
                        payload: render_prim_value(v),
                    })
                    .collect(),
                done_ms: *done_ms,
                kind: "stream".to_string(),
            },
        };
        self.records.push(rec);
    }

    pub fn into_records(self) -> Vec<ReplayRecord> {
        self.records
    }
}

/// Recorded calls keyed by (fn, canonical arg, occurrence index). Each
/// record is consumed at most once.
pub struct ReplayStore {
    map: HashMap<(String, String, u64), ReplayRecord>,
}

impl ReplayStore {
    pub fn new(records: Vec<ReplayRecord>) -> Self {
        let mut map = HashMap::new();
        for r in records {
            map.insert(r.key(), r);
        }
        ReplayStore { map }
    }

    pub fn from_str(text: &str) -> Result<Self, RuntimeError> {
        Ok(Self::new(store_from_str(text)?))
    }

    /// Consume the record for this call and rebuild the provider response.
    pub fn response_for(
        &mut self,
        fn_name: &str,
        arg: &str,
        occ: u64,
    ) -> Result<ProviderResponse, RuntimeError> {
        let key = (fn_name.to_string(), arg.to_string(), occ);
        let rec = self.map.remove(&key).ok_or_else(|| RuntimeError::ReplayMiss {
            fn_name: fn_name.to_string(),
            arg: arg.to_string(),
            occ,
        })?;
        match rec.kind.as_str() {
            "sync" => {
                let e = parse_expr_payload(&rec.chunks[0].payload)?;
                Ok(ProviderResponse::Value(e))
            }
            "async" => {
                let e = parse_expr_payload(&rec.chunks[0].payload)?;
                Ok(ProviderResponse::Delayed {
                    delay_ms: rec.done_ms,
                    result: e,
                })
            }
            "stream" => {
                let chunks = rec
                    .chunks
                    .iter()
                    .map(|c| Ok((c.at_ms, parse_prim_payload(&c.payload)?)))
                    .collect::<Result<Vec<_>, RuntimeError>>()?;
                Ok(ProviderResponse::Stream {
                    chunks,
                    done_ms: rec.done_ms,
                })
            }
            other => Err(RuntimeError::StoreIo(format!(
                "unknown record kind `{other}`"
            ))),
        }
    }
}

fn parse_expr_payload(text: &str) -> Result<crate::syntax::Expr, RuntimeError> {
    parse(text).map_err(|e| RuntimeError::StoreIo(format!("bad recorded expression: {e}")))
}

fn parse_prim_payload(text: &str) -> Result<PrimValue, RuntimeError> {
    let wrapped = format!("v := <{text}>\nret v");
    let e = parse(&wrapped)
        .map_err(|e| RuntimeError::StoreIo(format!("bad recorded payload `{text}`: {e}")))?;
    match &e.stmts[0].op {
        crate::syntax::Operation::Prim(c) => Ok(c.clone()),
        _ => Err(RuntimeError::StoreIo(format!(
            "recorded payload `{text}` is not a primitive"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_roundtrips_through_text() {
        let records = vec![ReplayRecord {
            fn_name: "cities_sim".into(),
            arg: "\"Oceania\"".into(),
            occ: 0,
            chunks: vec![
                ReplayChunk {
                    at_ms: 400,
                    payload: "\"Honolulu\"".into(),
                },
                ReplayChunk {
                    at_ms: 800,
                    payload: "\"Jakarta\"".into(),
                },
            ],
            done_ms: 4000,
            kind: "stream".into(),
        }];
        let text = store_to_string(&records);
        assert!(text.starts_with("{\"fn\":\"cities_sim\""));
        let back = store_from_str(&text).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn replay_miss_reports_key() {
        let mut store = ReplayStore::new(vec![]);
        let err = store.response_for("llm_sim", "\"x\"", 0).unwrap_err();
        assert!(matches!(err, RuntimeError::ReplayMiss { .. }));
    }

    #[test]
    fn records_consumed_once_per_occurrence() {
        let rec = ReplayRecord {
            fn_name: "coin".into(),
            arg: "()".into(),
            occ: 0,
            chunks: vec![ReplayChunk {
                at_ms: 0,
                payload: "v := <t>; ret v".into(),
            }],
            done_ms: 0,
            kind: "sync".into(),
        };
        let mut store = ReplayStore::new(vec![rec]);
        assert!(store.response_for("coin", "()", 0).is_ok());
        assert!(store.response_for("coin", "()", 0).is_err());
    }
}
