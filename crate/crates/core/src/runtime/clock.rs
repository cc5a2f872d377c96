//! Virtual and real clocks.
//!
//! Benchmarks and tests run on the virtual clock, where time advances only
//! when the evaluator sleeps for a completion; runs are then bit-reproducible.
//! The real clock maps the same timer queue onto wall-clock sleeps.

use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Virtual,
    Real,
}

#[derive(Debug)]
pub enum Clock {
    Virtual { now_ms: u64 },
    Real { start: Instant },
}

impl Clock {
    pub fn new(mode: ClockMode) -> Self {
        match mode {
            ClockMode::Virtual => Clock::Virtual { now_ms: 0 },
            ClockMode::Real => Clock::Real {
                start: Instant::now(),
            },
        }
    }

    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::Virtual { now_ms } => *now_ms,
            Clock::Real { start } => start.elapsed().as_millis() as u64,
        }
    }

    /// Advance to `t_ms` (monotone: never moves backwards). On the real
    /// clock this sleeps until the corresponding instant.
    pub fn advance_to(&mut self, t_ms: u64) {
        match self {
            Clock::Virtual { now_ms } => {
                if t_ms > *now_ms {
                    *now_ms = t_ms;
                }
            }
            Clock::Real { start } => {
                let elapsed = start.elapsed().as_millis() as u64;
                if t_ms > elapsed {
                    std::thread::sleep(std::time::Duration::from_millis(t_ms - elapsed));
                }
            }
        }
    }
}
