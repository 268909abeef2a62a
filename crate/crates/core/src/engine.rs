//! The slot-based simulation loop for one tunnel direction, plus parameter
//! sweeps and step-response probes.
//!
//! Per slot: enqueue arrivals, step the configured scheduler, start and
//! expire trace instances, emit the demanded packets (user packets in
//! global FIFO order, dummies for the remainder), and record metrics.
//! Everything is deterministic given the seed.

use std::collections::VecDeque;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scheduler::{
    EnhancedScheduler, SchedulerKind, SchedulerParams, SyncBangBang, SyncIncremental,
    UnsyncScheduler,
};
use crate::trace::{ActiveTraceSet, Trace};
use crate::workload::{ArrivalGenerator, PacketRecord, WorkloadSpec};
use crate::{Error, Result};

/// Full description of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub workload: WorkloadSpec,
    pub scheduler_kind: SchedulerKind,
    pub params: SchedulerParams,
    pub duration_slots: u64,
    /// Wall-clock length of one slot; only affects reported delays.
    pub slot_duration_ms: f64,
    pub seed: u64,
    /// Record the per-slot series (arrivals, emissions, dummies, actives,
    /// queue value) in the returned metrics.
    pub record_series: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.params.validate()?;
        if self.duration_slots < u64::from(self.params.trace.n()) {
            return Err(Error::InvalidConfig(
                "sim.duration_slots must cover at least one trace duration".into(),
            ));
        }
        if !self.slot_duration_ms.is_finite() || self.slot_duration_ms <= 0.0 {
            return Err(Error::InvalidConfig(
                "sim.slot_duration_ms must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One per-slot sample of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub arrivals: u32,
    pub emitted: u32,
    pub dummies: u32,
    pub active_traces: u32,
    /// Scheduler queue value at the end of the slot (Q for synchronized
    /// schedulers, the estimate for unsynchronized ones).
    pub q: f64,
}

/// Aggregated results of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub duration_slots: u64,
    pub slot_duration_ms: f64,
    pub arrivals_total: u64,
    pub served_total: u64,
    pub dummy_total: u64,
    pub emitted_total: u64,
    /// User packets still queued at the horizon.
    pub final_backlog: u64,
    /// Dummies over total emissions; 0 when nothing was emitted.
    pub dummy_fraction: f64,
    pub delay_mean_ms: f64,
    pub delay_p50_ms: f64,
    pub delay_p95_ms: f64,
    pub traces_started_total: u64,
    /// Traces started per group of `n` slots — the observable signature.
    pub trace_sequence: Vec<u32>,
    pub groups: u64,
    /// Scheduler queue value at the horizon.
    pub final_virtual_queue: f64,
    /// Departure slot of the last packet served per user.
    pub completion_slot_per_user: Vec<Option<u64>>,
    pub series: Option<Vec<SlotRecord>>,
}

enum Driver {
    SyncBangBang { inner: SyncBangBang, group_acc: u64 },
    SyncIncremental { inner: SyncIncremental, group_acc: u64 },
    Unsync(UnsyncScheduler),
    Enhanced(EnhancedScheduler),
}

impl Driver {
    fn new(kind: SchedulerKind, params: SchedulerParams) -> Self {
        match kind {
            SchedulerKind::SyncBangbang => Driver::SyncBangBang {
                inner: SyncBangBang::new(params),
                group_acc: 0,
            },
            SchedulerKind::SyncIncremental => Driver::SyncIncremental {
                inner: SyncIncremental::new(params),
                group_acc: 0,
            },
            SchedulerKind::Unsync => Driver::Unsync(UnsyncScheduler::new(params)),
            SchedulerKind::Enhanced => Driver::Enhanced(EnhancedScheduler::new(params)),
        }
    }

    fn queue_value(&self) -> f64 {
        match self {
            Driver::SyncBangBang { inner, .. } => inner.virtual_queue(),
            Driver::SyncIncremental { inner, .. } => inner.virtual_queue(),
            Driver::Unsync(s) => s.queue_estimate(),
            Driver::Enhanced(s) => s.queue_estimate(),
        }
    }
}

/// Runs one simulation described by `config`.
pub fn run_simulation(config: &SimConfig) -> Result<Metrics> {
    config.validate()?;
    let generator = ArrivalGenerator::new(&config.workload, config.seed, config.duration_slots)?;
    run_with_generator(config, generator)
}

/// The core loop, shared by [`run_simulation`] and [`step_response`].
pub(crate) fn run_with_generator(
    config: &SimConfig,
    mut generator: ArrivalGenerator,
) -> Result<Metrics> {
    let trace = config.params.trace.clone();
    let n = u64::from(trace.n());
    let duration = config.duration_slots;
    let groups = duration.div_ceil(n);

    let mut driver = Driver::new(config.scheduler_kind, config.params.clone());
    let mut actives = ActiveTraceSet::new();
    let mut queue: VecDeque<PacketRecord> = VecDeque::new();

    let mut arrivals_total = 0u64;
    let mut served_total = 0u64;
    let mut dummy_total = 0u64;
    let mut emitted_total = 0u64;
    let mut delays_slots: Vec<u64> = Vec::new();
    let mut trace_sequence = vec![0u32; groups as usize];
    let mut completion: Vec<Option<u64>> = Vec::new();
    let mut series = if config.record_series {
        Some(Vec::with_capacity(duration as usize))
    } else {
        None
    };

    for k in 0..duration {
        let records = generator.arrivals_at(k);
        let slot_arrivals = records.len() as u32;
        let saw_dns = records.iter().any(|r| r.is_dns);
        arrivals_total += u64::from(slot_arrivals);
        queue.extend(records);

        actives.expire(k);

        let starts = match &mut driver {
            Driver::SyncBangBang { inner, group_acc } => {
                if k % n == 0 {
                    let b = std::mem::take(group_acc);
                    inner.step(b as f64)
                } else {
                    0
                }
            }
            Driver::SyncIncremental { inner, group_acc } => {
                if k % n == 0 {
                    let b = std::mem::take(group_acc);
                    inner.step(b as f64)
                } else {
                    0
                }
            }
            Driver::Unsync(s) => {
                let emitted_pre = actives.required_emission(k);
                s.step(f64::from(slot_arrivals), emitted_pre, actives.len() as u32)
                    .start_new
            }
            Driver::Enhanced(s) => {
                let emitted_pre = actives.required_emission(k);
                s.step(
                    f64::from(slot_arrivals),
                    emitted_pre,
                    actives.len() as u32,
                    saw_dns,
                )
                .start_new
            }
        };
        if let Driver::SyncBangBang { group_acc, .. } | Driver::SyncIncremental { group_acc, .. } =
            &mut driver
        {
            *group_acc += u64::from(slot_arrivals);
        }

        for _ in 0..starts {
            actives.start(&trace, k);
        }
        trace_sequence[(k / n) as usize] += starts;

        let emitted = actives.required_emission(k);
        debug_assert!(
            emitted <= config.params.c,
            "capacity violated at slot {k}: {emitted} > {}",
            config.params.c
        );
        let served = u64::from(emitted).min(queue.len() as u64) as u32;
        for _ in 0..served {
            let mut pkt = queue.pop_front().expect("backlog underflow");
            pkt.departure_slot = Some(k);
            delays_slots.push(k - pkt.arrival_slot);
            let user = pkt.user as usize;
            if completion.len() <= user {
                completion.resize(user + 1, None);
            }
            completion[user] = Some(k);
        }
        let dummies = emitted - served;

        served_total += u64::from(served);
        dummy_total += u64::from(dummies);
        emitted_total += u64::from(emitted);

        if let Some(series) = series.as_mut() {
            series.push(SlotRecord {
                slot: k,
                arrivals: slot_arrivals,
                emitted,
                dummies,
                active_traces: actives.len() as u32,
                q: driver.queue_value(),
            });
        }
    }

    debug_assert_eq!(arrivals_total, served_total + queue.len() as u64);
    debug_assert_eq!(emitted_total, served_total + dummy_total);

    let dummy_fraction = if emitted_total == 0 {
        0.0
    } else {
        dummy_total as f64 / emitted_total as f64
    };
    delays_slots.sort_unstable();
    let to_ms = |slots: f64| slots * config.slot_duration_ms;
    let delay_mean_ms = if delays_slots.is_empty() {
        0.0
    } else {
        to_ms(delays_slots.iter().sum::<u64>() as f64 / delays_slots.len() as f64)
    };
    let delay_p50_ms = to_ms(percentile_nearest_rank(&delays_slots, 0.50));
    let delay_p95_ms = to_ms(percentile_nearest_rank(&delays_slots, 0.95));

    Ok(Metrics {
        duration_slots: duration,
        slot_duration_ms: config.slot_duration_ms,
        arrivals_total,
        served_total,
        dummy_total,
        emitted_total,
        final_backlog: queue.len() as u64,
        dummy_fraction,
        delay_mean_ms,
        delay_p50_ms,
        delay_p95_ms,
        traces_started_total: actives.started_total(),
        trace_sequence,
        groups,
        final_virtual_queue: driver.queue_value(),
        completion_slot_per_user: completion,
        series,
    })
}

fn percentile_nearest_rank(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1] as f64
}

/// The parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "rate")]
    Rate,
    #[serde(rename = "flows")]
    Flows,
    #[serde(rename = "trace_n")]
    TraceN,
    #[serde(rename = "trace_P")]
    TraceP,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::Rate => "rate",
            SweepAxis::Flows => "flows",
            SweepAxis::TraceN => "trace_n",
            SweepAxis::TraceP => "trace_P",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "rate" => Ok(SweepAxis::Rate),
            "flows" => Ok(SweepAxis::Flows),
            "trace_n" => Ok(SweepAxis::TraceN),
            "trace_P" => Ok(SweepAxis::TraceP),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis '{other}' (expected gamma, rate, flows, trace_n or trace_P)"
            ))),
        }
    }
}

/// One aggregated sweep point: median and quartiles over the per-seed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub runs: u32,
    pub dummy_q1: f64,
    pub dummy_median: f64,
    pub dummy_q3: f64,
    pub delay_q1_ms: f64,
    pub delay_median_ms: f64,
    pub delay_q3_ms: f64,
    /// Set when the point's configuration was rejected; the sweep continues
    /// past such points.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

fn integral_value(axis: SweepAxis, v: f64) -> Result<u32> {
    if v.fract() != 0.0 || v < 1.0 || v > f64::from(u32::MAX) {
        return Err(Error::InvalidConfig(format!(
            "axis {axis} requires a positive integer value, got {v}"
        )));
    }
    Ok(v as u32)
}

/// Derives the config for one sweep point.
pub fn apply_axis(base: &SimConfig, axis: SweepAxis, value: f64) -> Result<SimConfig> {
    let mut config = base.clone();
    match axis {
        SweepAxis::Gamma => config.params.gamma = value,
        SweepAxis::Rate => match &mut config.workload {
            WorkloadSpec::Cbr { rate, .. } | WorkloadSpec::Poisson { rate, .. } => *rate = value,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "rate axis applies to cbr/poisson workloads, not {other:?}"
                )))
            }
        },
        SweepAxis::Flows => match &mut config.workload {
            WorkloadSpec::OnoffFetch { flows, .. } => *flows = integral_value(axis, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "flows axis applies to onoff-fetch workloads, not {other:?}"
                )))
            }
        },
        SweepAxis::TraceN => {
            let n = integral_value(axis, value)?;
            let p = config.params.trace.total_packets();
            config.params.trace = std::sync::Arc::new(Trace::uniform(n, p)?);
        }
        SweepAxis::TraceP => {
            let p = integral_value(axis, value)?;
            let n = config.params.trace.n();
            config.params.trace = std::sync::Arc::new(Trace::uniform(n, p)?);
        }
    }
    config.validate()?;
    Ok(config)
}

/// Runs `base` once per (value, seed) pair and aggregates medians and
/// quartiles per value. Validation failures are recorded per point and the
/// sweep continues. Runs execute in parallel when the `parallel` feature is
/// enabled.
pub fn sweep(base: &SimConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    sweep_inner(base, axis, values, seeds, true)
}

/// Sequential variant of [`sweep`], available regardless of features; the
/// reference point for the parallel implementation and its benchmark.
pub fn sweep_seq(
    base: &SimConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
) -> Result<SweepTable> {
    sweep_inner(base, axis, values, seeds, false)
}

fn sweep_inner(
    base: &SimConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    parallel: bool,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep values must not be empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one seed".into()));
    }

    let mut point_error: Vec<Option<String>> = vec![None; values.len()];
    let mut jobs: Vec<(usize, SimConfig)> = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        match apply_axis(base, axis, value) {
            Ok(config) => {
                for &seed in seeds {
                    let mut c = config.clone();
                    c.seed = seed;
                    c.record_series = false;
                    jobs.push((i, c));
                }
            }
            Err(e) => point_error[i] = Some(e.to_string()),
        }
    }

    let results = run_jobs(jobs, parallel);

    let mut per_point: Vec<Vec<Metrics>> = vec![Vec::new(); values.len()];
    for (i, outcome) in results {
        match outcome {
            Ok(metrics) => per_point[i].push(metrics),
            Err(e) => {
                if point_error[i].is_none() {
                    point_error[i] = Some(e.to_string());
                }
            }
        }
    }

    let rows = values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let metrics = &per_point[i];
            if let Some(err) = &point_error[i] {
                return SweepRow {
                    value,
                    runs: metrics.len() as u32,
                    dummy_q1: 0.0,
                    dummy_median: 0.0,
                    dummy_q3: 0.0,
                    delay_q1_ms: 0.0,
                    delay_median_ms: 0.0,
                    delay_q3_ms: 0.0,
                    error: Some(err.clone()),
                };
            }
            let dummies: Vec<f64> = metrics.iter().map(|m| m.dummy_fraction).collect();
            let delays: Vec<f64> = metrics.iter().map(|m| m.delay_mean_ms).collect();
            let dq = quartiles(&dummies);
            let tq = quartiles(&delays);
            SweepRow {
                value,
                runs: metrics.len() as u32,
                dummy_q1: dq.0,
                dummy_median: dq.1,
                dummy_q3: dq.2,
                delay_q1_ms: tq.0,
                delay_median_ms: tq.1,
                delay_q3_ms: tq.2,
                error: None,
            }
        })
        .collect();

    Ok(SweepTable { axis, rows })
}

#[cfg(feature = "parallel")]
fn run_jobs(jobs: Vec<(usize, SimConfig)>, parallel: bool) -> Vec<(usize, Result<Metrics>)> {
    if parallel {
        jobs.into_par_iter()
            .map(|(i, config)| (i, run_simulation(&config)))
            .collect()
    } else {
        jobs.into_iter()
            .map(|(i, config)| (i, run_simulation(&config)))
            .collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(jobs: Vec<(usize, SimConfig)>, _parallel: bool) -> Vec<(usize, Result<Metrics>)> {
    jobs.into_iter()
        .map(|(i, config)| (i, run_simulation(&config)))
        .collect()
}

/// (q1, median, q3) by Tukey hinges: medians of the lower and upper halves,
/// the overall median excluded from both halves when the count is odd.
fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are never NaN"));
    let med = median_sorted(&sorted);
    let half = sorted.len() / 2;
    let lower = &sorted[..half];
    let upper = &sorted[sorted.len() - half..];
    let q1 = if lower.is_empty() { med } else { median_sorted(lower) };
    let q3 = if upper.is_empty() { med } else { median_sorted(upper) };
    (q1, med, q3)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Settling lags after an arrival-rate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResponse {
    pub up_step_slot: u64,
    pub down_step_slot: u64,
    /// Slots from the up-step until the aggregate trace service rate first
    /// settles at the high level; `None` if it never does.
    pub lag_up_slots: Option<u64>,
    /// Slots from the down-step until the service rate first settles back
    /// at the low level.
    pub lag_down_slots: Option<u64>,
}

/// Steps the arrival rate `low -> high` at `step_slot` and back down
/// midway through the remaining horizon, then measures how long the
/// aggregate trace service rate (active traces times `P/n`) takes to settle
/// within 10% of the step magnitude around the new level.
///
/// The workload kind of `config` picks the arrival process (`cbr` or
/// `poisson`); its configured rate is ignored in favour of the step levels.
pub fn step_response(
    config: &SimConfig,
    step_slot: u64,
    low_rate: f64,
    high_rate: f64,
) -> Result<StepResponse> {
    config.validate()?;
    if high_rate.is_nan() || low_rate.is_nan() || high_rate <= low_rate {
        return Err(Error::InvalidConfig(
            "step_response requires high_rate > low_rate".into(),
        ));
    }
    if step_slot == 0 || step_slot >= config.duration_slots {
        return Err(Error::InvalidConfig(
            "step_slot must lie strictly inside the run".into(),
        ));
    }
    let poisson = match &config.workload {
        WorkloadSpec::Poisson { .. } => true,
        WorkloadSpec::Cbr { .. } => false,
        other => {
            return Err(Error::InvalidConfig(format!(
                "step_response requires a cbr or poisson workload, not {other:?}"
            )))
        }
    };
    let down_slot = step_slot + (config.duration_slots - step_slot) / 2;
    let generator = ArrivalGenerator::rate_step(
        poisson,
        low_rate,
        high_rate,
        step_slot,
        down_slot,
        config.seed,
        config.duration_slots,
    )?;
    let mut cfg = config.clone();
    cfg.record_series = true;
    let metrics = run_with_generator(&cfg, generator)?;
    let series = metrics.series.expect("series recording was enabled");

    let trace_rate = config.params.trace.rate();
    let band = 0.1 * (high_rate - low_rate);
    let service = |r: &SlotRecord| f64::from(r.active_traces) * trace_rate;

    let lag_up = series[step_slot as usize..down_slot as usize]
        .iter()
        .position(|r| service(r) >= high_rate - band)
        .map(|i| i as u64);
    let lag_down = series[down_slot as usize..]
        .iter()
        .position(|r| service(r) <= low_rate + band)
        .map(|i| i as u64);

    Ok(StepResponse {
        up_step_slot: step_slot,
        down_step_slot: down_slot,
        lag_up_slots: lag_up,
        lag_down_slots: lag_down,
    })
}
