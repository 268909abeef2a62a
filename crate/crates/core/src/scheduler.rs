//! Trace-activation policies.
//!
//! All four schedulers steer trace activation from a virtual queue that
//! accumulates the mismatch between user arrivals and trace service. The
//! sign of `gamma - Q*P` decides whether to add or shed service:
//!
//! * [`SyncBangBang`] — acts once per group of `n` slots; runs either
//!   `y_max` traces or none.
//! * [`SyncIncremental`] — acts once per group; moves the trace count by
//!   at most one per group.
//! * [`UnsyncScheduler`] — acts every slot on a smoothed queue estimate;
//!   traces may start in any slot and partially overlap.
//! * [`EnhancedScheduler`] — the unsynchronized scheduler plus wake
//!   heuristics (DNS triggering, running-average threshold) and a
//!   hysteresis gate that reacts only to sustained queue movement.
//!
//! Ties (`gamma - Q*P == 0`) always resolve to the idle choice, which
//! minimizes dummy emission.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::trace::Trace;
use crate::{Error, Result};

/// Which policy a simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    SyncBangbang,
    SyncIncremental,
    Unsync,
    Enhanced,
}

impl SchedulerKind {
    pub fn is_synchronized(self) -> bool {
        matches!(self, SchedulerKind::SyncBangbang | SchedulerKind::SyncIncremental)
    }
}

/// Knobs shared by all schedulers. `zeta`, `a_star` and `m` only matter for
/// the enhanced variant.
#[derive(Debug, Clone)]
pub struct SchedulerParams {
    /// Backlog target scale: the queue is steered toward `gamma / P`.
    pub gamma: f64,
    /// Gain of the per-slot queue estimator.
    pub alpha: f64,
    /// Maximum simultaneously active traces.
    pub y_max: u32,
    /// The emission pattern every activation follows.
    pub trace: Arc<Trace>,
    /// Running-average gain for the wake heuristic.
    pub zeta: f64,
    /// Wake threshold on the running average, packets per slot.
    pub a_star: f64,
    /// Hysteresis window in slots; `m <= 1` disables the gate (a one-slot
    /// window carries no trend information).
    pub m: u32,
    /// Link capacity in packets per slot.
    pub c: u32,
}

impl SchedulerParams {
    /// Defaults used throughout: `gamma` 1024, `alpha` 1, `zeta` 0.001,
    /// `a_star` 0.005, `m` 100, and `y_max` as large as the link allows.
    pub fn defaults(trace: Arc<Trace>, c: u32) -> Self {
        let y_max = (c / trace.max_slot_emission().max(1)).max(1);
        SchedulerParams {
            gamma: 1024.0,
            alpha: 1.0,
            y_max,
            trace,
            zeta: 0.001,
            a_star: 0.005,
            m: 100,
            c,
        }
    }

    /// Checks cross-field constraints. The capacity rule is per-slot: even
    /// with `y_max` traces peaking in the same slot the link is never
    /// oversubscribed, so the engine loop cannot violate `E_k <= c`.
    pub fn validate(&self) -> Result<()> {
        if self.y_max == 0 {
            return Err(Error::InvalidConfig("scheduler.y_max must be >= 1".into()));
        }
        let peak = u64::from(self.y_max) * u64::from(self.trace.max_slot_emission());
        if peak > u64::from(self.c) {
            return Err(Error::InvalidConfig(format!(
                "capacity constraint violated: y_max * max-slot-emission = {} exceeds link.c = {}",
                peak, self.c
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidConfig(
                "scheduler.gamma must be finite and >= 0".into(),
            ));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidConfig("scheduler.alpha must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::InvalidConfig(
                "scheduler.zeta must lie in [0, 1)".into(),
            ));
        }
        if self.a_star < 0.0 || self.a_star.is_nan() {
            return Err(Error::InvalidConfig(
                "scheduler.a_star must be >= 0".into(),
            ));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("scheduler.m must be >= 1".into()));
        }
        Ok(())
    }

    fn total_packets(&self) -> f64 {
        f64::from(self.trace.total_packets())
    }
}

/// Sign decision on the linear objective `coeff * x` over `[-1, 1]`:
/// the minimizer is `+1` for negative coefficients, `-1` for positive,
/// and the idle choice `0` on a tie.
fn sign_step(coeff: f64) -> i32 {
    if coeff < 0.0 {
        1
    } else if coeff > 0.0 {
        -1
    } else {
        0
    }
}

/// What an unsynchronized step asks the engine to do.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceActions {
    /// Traces to start this slot.
    pub start_new: u32,
    /// The continuous activation target after the step.
    pub target_z: f64,
}

/// Synchronized bang-bang policy: per group, run `y_max` traces when
/// `gamma - Q*P < 0`, none otherwise, then fold the group's arrivals into
/// the queue.
#[derive(Debug, Clone)]
pub struct SyncBangBang {
    params: SchedulerParams,
    q: f64,
    group: u64,
}

impl SyncBangBang {
    pub fn new(params: SchedulerParams) -> Self {
        SyncBangBang {
            params,
            q: 0.0,
            group: 0,
        }
    }

    /// One group step: picks the trace count for the group from the current
    /// queue, then folds `group_arrivals` and the chosen service into it.
    pub fn step(&mut self, group_arrivals: f64) -> u32 {
        let p = self.params.total_packets();
        let y = if self.params.gamma - self.q * p < 0.0 {
            self.params.y_max
        } else {
            0
        };
        self.q = (self.q + group_arrivals - f64::from(y) * p).max(0.0);
        self.group += 1;
        y
    }

    pub fn virtual_queue(&self) -> f64 {
        self.q
    }

    pub fn groups_stepped(&self) -> u64 {
        self.group
    }
}

/// Synchronized incremental policy: the trace count moves by at most one
/// per group, toward the side the queue mismatch indicates.
#[derive(Debug, Clone)]
pub struct SyncIncremental {
    params: SchedulerParams,
    q: f64,
    y: u32,
}

impl SyncIncremental {
    pub fn new(params: SchedulerParams) -> Self {
        SyncIncremental { params, q: 0.0, y: 0 }
    }

    /// One group step: nudges the trace count, then folds the group's
    /// arrivals against the updated count.
    pub fn step(&mut self, group_arrivals: f64) -> u32 {
        let p = self.params.total_packets();
        let x = sign_step(self.params.gamma - self.q * p);
        self.y = apply_step(self.y, x, self.params.y_max);
        self.q = (self.q + group_arrivals - f64::from(self.y) * p).max(0.0);
        self.y
    }

    pub fn virtual_queue(&self) -> f64 {
        self.q
    }

    pub fn trace_count(&self) -> u32 {
        self.y
    }
}

fn apply_step(y: u32, x: i32, y_max: u32) -> u32 {
    match x {
        1 => (y + 1).min(y_max),
        -1 => y.saturating_sub(1),
        _ => y,
    }
}

/// Baseline unsynchronized policy: stepped every slot on the estimator
/// `Q_hat <- [Q_hat + alpha*(arrivals - emitted)]+`. A trace starts when
/// the integer part of the target `z` rises above the active count or when
/// an expiry drops the active count below it.
#[derive(Debug, Clone)]
pub struct UnsyncScheduler {
    params: SchedulerParams,
    q_hat: f64,
    z: f64,
}

impl UnsyncScheduler {
    pub fn new(params: SchedulerParams) -> Self {
        UnsyncScheduler {
            params,
            q_hat: 0.0,
            z: 0.0,
        }
    }

    /// One slot step.
    ///
    /// `emitted` is the demand of the traces active *before* this step's
    /// starts (after expiries); the queue update internally counts the
    /// first-slot emission of the traces it starts, so the estimator sees
    /// the full slot emission.
    pub fn step(&mut self, arrivals: f64, emitted: u32, active_count: u32) -> TraceActions {
        let p = self.params.total_packets();
        let x = sign_step(self.params.gamma - self.q_hat * p);
        self.z = (self.z + f64::from(x)).clamp(0.0, f64::from(self.params.y_max));
        let start_new = (self.z.floor() as u32).saturating_sub(active_count);
        let slot_emission =
            f64::from(emitted) + f64::from(start_new * self.params.trace.first_slot_emission());
        self.q_hat = (self.q_hat + self.params.alpha * (arrivals - slot_emission)).max(0.0);
        TraceActions {
            start_new,
            target_z: self.z,
        }
    }

    pub fn queue_estimate(&self) -> f64 {
        self.q_hat
    }

    pub fn target(&self) -> f64 {
        self.z
    }
}

/// Unsynchronized policy with the wake and hysteresis enhancements:
///
/// * a running average of arrivals, `a_bar <- (1-zeta)*a_bar + zeta*a_k`;
/// * a trace starts immediately on a DNS packet when the link is idle;
/// * a trace starts when `a_bar` exceeds `a_star` and the link is idle;
/// * the target `z` moves up only on `gamma - Q_hat*P < 0` *and* a rise of
///   `Q_hat` over the last `m` slots, down only on the mirror condition
///   (strict comparisons; too little history suppresses both). An estimate
///   pinned at zero for the entire window also counts as a sustained
///   decrease: the strict comparison alone would freeze the target forever
///   once the estimate flatlines at the clamp;
/// * the queue update feeds on `max(a_bar, arrivals)` so brief lulls do
///   not drain it.
///
/// With `zeta = 0`, `a_star = inf`, `m = 1` and no DNS packets this
/// reproduces [`UnsyncScheduler`] decisions exactly.
#[derive(Debug, Clone)]
pub struct EnhancedScheduler {
    params: SchedulerParams,
    q_hat: f64,
    z: f64,
    a_bar: f64,
    // Q_hat values at the start of the last m+1 slots; front is the value
    // from m slots ago.
    q_window: VecDeque<f64>,
    // consecutive slots (ending now) the estimate spent at exactly zero
    empty_run: u64,
}

impl EnhancedScheduler {
    pub fn new(params: SchedulerParams) -> Self {
        let cap = params.m as usize + 1;
        EnhancedScheduler {
            params,
            q_hat: 0.0,
            z: 0.0,
            a_bar: 0.0,
            q_window: VecDeque::with_capacity(cap.min(4096)),
            empty_run: 0,
        }
    }

    /// One slot step; see [`UnsyncScheduler::step`] for the `emitted`
    /// contract.
    pub fn step(
        &mut self,
        arrivals: f64,
        emitted: u32,
        active_count: u32,
        saw_dns: bool,
    ) -> TraceActions {
        let p = self.params.total_packets();
        let m = self.params.m as usize;

        self.a_bar = (1.0 - self.params.zeta) * self.a_bar + self.params.zeta * arrivals;

        // Trend of the queue estimate over the last m slots. The window
        // holds the estimate as of the start of each slot; until it spans m
        // slots both triggers stay suppressed.
        self.q_window.push_back(self.q_hat);
        if self.q_window.len() > m + 1 {
            self.q_window.pop_front();
        }
        if self.q_hat == 0.0 {
            self.empty_run += 1;
        } else {
            self.empty_run = 0;
        }
        let trend = if m <= 1 {
            None // gate inert: one slot of history carries no trend
        } else if self.q_window.len() == m + 1 {
            Some(self.q_hat - self.q_window.front().copied().unwrap_or(0.0))
        } else {
            Some(f64::NAN) // suppress both directions during start-up
        };

        let coeff = self.params.gamma - self.q_hat * p;
        let x = match trend {
            None => sign_step(coeff),
            Some(t) => {
                let window_empty = self.empty_run > u64::from(self.params.m);
                if coeff < 0.0 && t > 0.0 {
                    1
                } else if coeff > 0.0 && (t < 0.0 || window_empty) {
                    -1
                } else {
                    0
                }
            }
        };
        self.z = (self.z + f64::from(x)).clamp(0.0, f64::from(self.params.y_max));

        // Wake heuristics only fire on an idle link.
        let mut wake = 0u32;
        if active_count == 0 && (saw_dns || self.a_bar > self.params.a_star) {
            wake = 1;
            self.z = self.z.max(1.0);
        }
        let refill = (self.z.floor() as u32).saturating_sub(active_count + wake);
        let start_new = wake + refill;

        let slot_emission =
            f64::from(emitted) + f64::from(start_new * self.params.trace.first_slot_emission());
        let drive = self.a_bar.max(arrivals);
        self.q_hat = (self.q_hat + self.params.alpha * (drive - slot_emission)).max(0.0);

        TraceActions {
            start_new,
            target_z: self.z,
        }
    }

    pub fn queue_estimate(&self) -> f64 {
        self.q_hat
    }

    pub fn target(&self) -> f64 {
        self.z
    }

    pub fn running_average(&self) -> f64 {
        self.a_bar
    }
}
