//! Training progress counters, checkpoint cadence and a pausable clock.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub wall_clock_s: f64,
    pub docs_seen: u64,
    pub tokens_seen: u64,
    pub minibatches: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heldout_ll_per_token: Option<f64>,
    pub rho_phi: f64,
    pub rho_theta: f64,
}

/// When to hand a snapshot to the checkpoint callback. Both cadences may be
/// active at once; a checkpoint is always taken at the start and the end.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub every_secs: Option<f64>,
    pub every_minibatches: Option<u64>,
}

/// A snapshot handed to a checkpoint callback.
#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub progress: Progress,
    pub state: S,
}

/// Training clock that can be paused while checkpoints are taken, so
/// snapshot copies and callbacks do not count as training time.
#[derive(Debug)]
pub struct Stopwatch {
    elapsed: Duration,
    running_since: Option<Instant>,
}

impl Stopwatch {
    pub fn started() -> Self {
        Self { elapsed: Duration::ZERO, running_since: Some(Instant::now()) }
    }

    pub fn pause(&mut self) {
        if let Some(t) = self.running_since.take() {
            self.elapsed += t.elapsed();
        }
    }

    pub fn resume(&mut self) {
        if self.running_since.is_none() {
            self.running_since = Some(Instant::now());
        }
    }

    pub fn seconds(&self) -> f64 {
        let live = self.running_since.map_or(Duration::ZERO, |t| t.elapsed());
        (self.elapsed + live).as_secs_f64()
    }
}

/// Tracks which checkpoints are due.
#[derive(Debug)]
pub(crate) struct Cadence {
    policy: CheckpointPolicy,
    next_secs: f64,
    last_minibatch: u64,
}

impl Cadence {
    pub(crate) fn new(policy: CheckpointPolicy) -> Self {
        Self { policy, next_secs: policy.every_secs.unwrap_or(f64::INFINITY), last_minibatch: 0 }
    }

    /// Whether a checkpoint is due; consumes the due slot.
    pub(crate) fn due(&mut self, seconds: f64, minibatches: u64) -> bool {
        let mut due = false;
        if let Some(every) = self.policy.every_secs.filter(|e| *e > 0.0) {
            if seconds >= self.next_secs {
                due = true;
                while self.next_secs <= seconds {
                    self.next_secs += every;
                }
            }
        }
        if let Some(every) = self.policy.every_minibatches.filter(|e| *e > 0) {
            if minibatches >= self.last_minibatch + every {
                due = true;
                self.last_minibatch = minibatches - minibatches % every;
            }
        }
        due
    }
}
