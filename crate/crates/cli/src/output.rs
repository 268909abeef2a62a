//! CSV emission. Every file starts with the resolved config echoed as
//! `# `-prefixed TOML lines, then an RFC-4180 header row and data rows.
//! Output is byte-deterministic for a given config and seed.

use std::io::Write;
use std::path::Path;

use traceshape::engine::{Metrics, SweepTable};
use traceshape::indist::PageReport;
use traceshape::workload::WorkloadSpec;
use traceshape::Error;

use crate::config::ResolvedConfig;

fn write_comment_block(out: &mut impl Write, text: &str) -> Result<(), Error> {
    for line in text.lines() {
        if line.is_empty() {
            writeln!(out, "#")?;
        } else {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

// Shortest round-trip float text; deterministic across runs.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn workload_kind(w: &WorkloadSpec) -> &'static str {
    match w {
        WorkloadSpec::Cbr { .. } => "cbr",
        WorkloadSpec::Poisson { .. } => "poisson",
        WorkloadSpec::OnoffFetch { .. } => "onoff-fetch",
        WorkloadSpec::Replay { .. } => "replay",
    }
}

fn scheduler_kind_name(k: traceshape::scheduler::SchedulerKind) -> &'static str {
    use traceshape::scheduler::SchedulerKind::*;
    match k {
        SyncBangbang => "sync_bangbang",
        SyncIncremental => "sync_incremental",
        Unsync => "unsync",
        Enhanced => "enhanced",
    }
}

/// One-row summary of a run, prefixed with the config echo.
pub fn write_summary(
    path: &Path,
    name: &str,
    resolved: &ResolvedConfig,
    metrics: &Metrics,
) -> Result<(), Error> {
    let mut out = Vec::new();
    write_comment_block(&mut out, &resolved.echo_toml())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "scheduler",
        "workload",
        "gamma",
        "alpha",
        "y_max",
        "zeta",
        "a_star",
        "m",
        "trace_n",
        "trace_P",
        "link_c",
        "duration_slots",
        "slot_duration_ms",
        "seed",
        "arrivals",
        "served",
        "emitted",
        "dummies",
        "dummy_fraction",
        "delay_mean_ms",
        "delay_p50_ms",
        "delay_p95_ms",
        "final_backlog",
        "traces_started",
        "groups",
        "final_q",
    ])?;
    w.write_record([
        name.to_string(),
        scheduler_kind_name(resolved.scheduler.kind).to_string(),
        workload_kind(&resolved.workload).to_string(),
        fmt_f64(resolved.scheduler.gamma),
        fmt_f64(resolved.scheduler.alpha),
        resolved.scheduler.y_max.unwrap_or(0).to_string(),
        fmt_f64(resolved.scheduler.zeta),
        fmt_f64(resolved.scheduler.a_star),
        resolved.scheduler.m.to_string(),
        resolved.trace.n.to_string(),
        resolved.trace.p.to_string(),
        resolved.link.c.to_string(),
        resolved.sim.duration_slots.to_string(),
        fmt_f64(resolved.sim.slot_duration_ms),
        resolved.sim.seed.to_string(),
        metrics.arrivals_total.to_string(),
        metrics.served_total.to_string(),
        metrics.emitted_total.to_string(),
        metrics.dummy_total.to_string(),
        fmt_f64(metrics.dummy_fraction),
        fmt_f64(metrics.delay_mean_ms),
        fmt_f64(metrics.delay_p50_ms),
        fmt_f64(metrics.delay_p95_ms),
        metrics.final_backlog.to_string(),
        metrics.traces_started_total.to_string(),
        metrics.groups.to_string(),
        fmt_f64(metrics.final_virtual_queue),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Per-slot series: slot, arrivals, emitted, dummies, active_traces, Q.
pub fn write_series(
    path: &Path,
    resolved: &ResolvedConfig,
    metrics: &Metrics,
) -> Result<(), Error> {
    let series = metrics
        .series
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("series were not recorded".into()))?;
    let mut out = Vec::new();
    write_comment_block(&mut out, &resolved.echo_toml())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "arrivals", "emitted", "dummies", "active_traces", "Q"])?;
    for r in series {
        w.write_record([
            r.slot.to_string(),
            r.arrivals.to_string(),
            r.emitted.to_string(),
            r.dummies.to_string(),
            r.active_traces.to_string(),
            fmt_f64(r.q),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Trace-sequence export: one row per group, consumed by `analyze`.
pub fn write_sequence(
    path: &Path,
    resolved: &ResolvedConfig,
    metrics: &Metrics,
) -> Result<(), Error> {
    let mut out = Vec::new();
    write_comment_block(&mut out, &resolved.echo_toml())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group_index", "traces_started"])?;
    for (g, started) in metrics.trace_sequence.iter().enumerate() {
        w.write_record([g.to_string(), started.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Sweep table: one row per axis value with medians and quartiles.
pub fn write_sweep(
    path: &Path,
    resolved: &ResolvedConfig,
    table: &SweepTable,
    seeds: &[u64],
) -> Result<(), Error> {
    let mut out = Vec::new();
    write_comment_block(&mut out, &resolved.echo_toml())?;
    write_comment_block(
        &mut out,
        &format!(
            "sweep axis = {}, seeds = {:?}",
            table.axis, seeds
        ),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis",
        "value",
        "runs",
        "dummy_q1",
        "dummy_median",
        "dummy_q3",
        "delay_q1_ms",
        "delay_median_ms",
        "delay_q3_ms",
        "error",
    ])?;
    for row in &table.rows {
        w.write_record([
            table.axis.to_string(),
            fmt_f64(row.value),
            row.runs.to_string(),
            fmt_f64(row.dummy_q1),
            fmt_f64(row.dummy_median),
            fmt_f64(row.dummy_q3),
            fmt_f64(row.delay_q1_ms),
            fmt_f64(row.delay_median_ms),
            fmt_f64(row.delay_q3_ms),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Full deniability report, sorted ascending by mean probability.
pub fn write_report(
    path: &Path,
    header_comment: &str,
    rows: &[PageReport],
) -> Result<(), Error> {
    let mut out = Vec::new();
    write_comment_block(&mut out, header_comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "page",
        "mean_prob",
        "worst_prob",
        "worst_seq",
        "min_prob",
        "min_seq",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            r.page.clone(),
            fmt_f64(r.mean_prob),
            fmt_f64(r.worst_prob),
            r.worst_seq.clone(),
            fmt_f64(r.min_prob),
            r.min_seq.clone(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Per-page probabilities for one observed sequence, sorted ascending.
pub fn write_observed_report(
    path: &Path,
    header_comment: &str,
    rows: &[(String, f64)],
) -> Result<(), Error> {
    let mut out = Vec::new();
    write_comment_block(&mut out, header_comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["page", "prob"])?;
    for (page, prob) in rows {
        w.write_record([page.clone(), fmt_f64(*prob)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}
