//! Trend behaviour of the closed loop under swept loads, checked with the
//! simulator as its own oracle across seeds.

use std::sync::Arc;

use traceshape::engine::{sweep, SimConfig, SweepAxis};
use traceshape::scheduler::{SchedulerKind, SchedulerParams};
use traceshape::trace::Trace;
use traceshape::workload::WorkloadSpec;

fn default_enhanced(duration: u64) -> SimConfig {
    let trace = Arc::new(Trace::uniform(9615, 1682).unwrap());
    let params = SchedulerParams::defaults(trace, 20);
    SimConfig {
        workload: WorkloadSpec::Cbr {
            rate: 0.175,
            n_users: 1,
        },
        scheduler_kind: SchedulerKind::Enhanced,
        params,
        duration_slots: duration,
        slot_duration_ms: 1.0,
        seed: 1,
        record_series: false,
    }
}

/// Sweeping the cbr load over multiples of one trace's rate, the median
/// dummy fraction falls strictly: busier links waste fewer emissions.
#[test]
fn dummy_fraction_strictly_falls_with_load_multiples() {
    let base = default_enhanced(150_000);
    let one_trace = 1682.0 / 9615.0;
    let values: Vec<f64> = (1..=6).map(|k| f64::from(k) * 0.35 * one_trace).collect();
    let table = sweep(&base, SweepAxis::Rate, &values, &[1, 2, 3, 4, 5]).unwrap();

    let medians: Vec<f64> = table.rows.iter().map(|r| r.dummy_median).collect();
    for (i, pair) in medians.windows(2).enumerate() {
        assert!(
            pair[1] < pair[0],
            "dummy median did not fall from {}x to {}x one-trace load: {} -> {}",
            0.35 * (i + 1) as f64,
            0.35 * (i + 2) as f64,
            pair[0],
            pair[1]
        );
    }
}

/// Sweeping the arrival rate at fixed gamma trades delay for dummies:
/// the median delay never falls and the median dummy fraction never rises.
#[test]
fn rate_sweep_trades_delay_for_dummies() {
    let base = default_enhanced(150_000);
    let values = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    let table = sweep(&base, SweepAxis::Rate, &values, &[1, 2, 3, 4, 5]).unwrap();
    for pair in table.rows.windows(2) {
        assert!(
            pair[1].delay_median_ms >= pair[0].delay_median_ms,
            "delay median fell from rate {} to {}",
            pair[0].value,
            pair[1].value
        );
        assert!(
            pair[1].dummy_median <= pair[0].dummy_median,
            "dummy median rose from rate {} to {}",
            pair[0].value,
            pair[1].value
        );
    }
}
