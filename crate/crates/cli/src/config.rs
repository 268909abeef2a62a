//! Experiment file schema and resolution.
//!
//! A config file is TOML with the sections `workload`, `scheduler`,
//! `trace`, `link` and `sim` describing one simulation, plus optional
//! `sweep` and `analyze` sections and optional named `[experiments.<name>]`
//! tables. An experiment entry carries the same sections and falls back to
//! the file-level ones it omits. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use traceshape::engine::{SimConfig, SweepAxis};
use traceshape::indist::{EnumLimits, SelfExplanation};
use traceshape::scheduler::{SchedulerKind, SchedulerParams};
use traceshape::trace::Trace;
use traceshape::workload::WorkloadSpec;
use traceshape::Error;

/// Schema version this binary understands; must match the tool's major
/// version.
pub const SCHEMA_VERSION: u32 = 1;

fn d_gamma() -> f64 {
    1024.0
}
fn d_alpha() -> f64 {
    1.0
}
fn d_zeta() -> f64 {
    0.001
}
fn d_a_star() -> f64 {
    0.005
}
fn d_m() -> u32 {
    100
}
fn d_slot_ms() -> f64 {
    1.0
}
fn d_seeds() -> u32 {
    5
}
fn d_mult() -> u32 {
    4
}
fn d_items() -> u32 {
    6
}
fn d_budget() -> u64 {
    10_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    pub kind: SchedulerKind,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Defaults to the largest count the link capacity admits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<u32>,
    #[serde(default = "d_zeta")]
    pub zeta: f64,
    #[serde(default = "d_a_star")]
    pub a_star: f64,
    #[serde(default = "d_m")]
    pub m: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub n: u32,
    #[serde(rename = "P")]
    pub p: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub c: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration_slots: u64,
    pub seed: u64,
    #[serde(default = "d_slot_ms")]
    pub slot_duration_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Seeds per point: `sim.seed`, `sim.seed + 1`, ...
    #[serde(default = "d_seeds")]
    pub n_seeds: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    pub catalog: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<PathBuf>,
    #[serde(default)]
    pub all_pages: bool,
    #[serde(default = "d_mult")]
    pub max_multiplicity: u32,
    #[serde(default = "d_items")]
    pub max_items: u32,
    #[serde(default = "d_budget")]
    pub node_budget: u64,
    /// Drop the observed sequence's own single-fetch explanation from the
    /// probability numerator (it always stays in the normalization).
    #[serde(default)]
    pub omit_self_explanation: bool,
}

impl AnalyzeSection {
    pub fn limits(&self) -> EnumLimits {
        EnumLimits {
            max_multiplicity: self.max_multiplicity,
            max_items: self.max_items,
            node_budget: self.node_budget,
        }
    }

    pub fn self_explanation(&self) -> SelfExplanation {
        if self.omit_self_explanation {
            SelfExplanation::OmittedFromSum
        } else {
            SelfExplanation::Included
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    #[default]
    Simulate,
    Sweep,
    Analyze,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentEntry {
    #[serde(default)]
    pub kind: JobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<SchedulerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<SchedulerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub experiments: BTreeMap<String, ExperimentEntry>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let config: FileConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} does not match tool major version {}",
                config.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn experiment(&self, name: &str) -> Result<&ExperimentEntry, Error> {
        self.experiments.get(name).ok_or_else(|| {
            Error::InvalidConfig(format!("no experiment named '{name}' in config"))
        })
    }
}

/// A fully resolved single-run description: every section present, with the
/// scheduler's `y_max` made explicit. Serializing this (plus the schema
/// version) is the config echo written into output CSV headers; parsing the
/// echo back reproduces the identical run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub workload: WorkloadSpec,
    pub scheduler: SchedulerSection,
    pub trace: TraceSection,
    pub link: LinkSection,
    pub sim: SimSection,
}

impl ResolvedConfig {
    /// Picks each section from the experiment entry, falling back to the
    /// file-level section.
    pub fn resolve(
        file: &FileConfig,
        entry: Option<&ExperimentEntry>,
        seed_override: Option<u64>,
    ) -> Result<Self, Error> {
        let missing = |what: &str| {
            Error::InvalidConfig(format!(
                "missing required section [{what}] (neither the experiment nor the file defines it)"
            ))
        };
        let pick_workload = entry
            .and_then(|e| e.workload.clone())
            .or_else(|| file.workload.clone())
            .ok_or_else(|| missing("workload"))?;
        let mut scheduler = entry
            .and_then(|e| e.scheduler.clone())
            .or_else(|| file.scheduler.clone())
            .ok_or_else(|| missing("scheduler"))?;
        let trace = entry
            .and_then(|e| e.trace)
            .or(file.trace)
            .ok_or_else(|| missing("trace"))?;
        let link = entry
            .and_then(|e| e.link)
            .or(file.link)
            .ok_or_else(|| missing("link"))?;
        let mut sim = entry
            .and_then(|e| e.sim)
            .or(file.sim)
            .ok_or_else(|| missing("sim"))?;
        if let Some(seed) = seed_override {
            sim.seed = seed;
        }
        // Make the capacity-derived default explicit so the echo replays
        // identically.
        if scheduler.y_max.is_none() {
            let pattern = Trace::uniform(trace.n, trace.p)?;
            scheduler.y_max = Some((link.c / pattern.max_slot_emission().max(1)).max(1));
        }
        Ok(ResolvedConfig {
            schema_version: SCHEMA_VERSION,
            workload: pick_workload,
            scheduler,
            trace,
            link,
            sim,
        })
    }

    /// Builds the engine configuration, validating every constraint.
    pub fn to_sim_config(&self, record_series: bool) -> Result<SimConfig, Error> {
        let trace = Arc::new(Trace::uniform(self.trace.n, self.trace.p)?);
        let params = SchedulerParams {
            gamma: self.scheduler.gamma,
            alpha: self.scheduler.alpha,
            y_max: self
                .scheduler
                .y_max
                .expect("resolve() always fills y_max"),
            trace,
            zeta: self.scheduler.zeta,
            a_star: self.scheduler.a_star,
            m: self.scheduler.m,
            c: self.link.c,
        };
        let config = SimConfig {
            workload: self.workload.clone(),
            scheduler_kind: self.scheduler.kind,
            params,
            duration_slots: self.sim.duration_slots,
            slot_duration_ms: self.sim.slot_duration_ms,
            seed: self.sim.seed,
            record_series,
        };
        config.validate()?;
        Ok(config)
    }

    /// TOML text of the resolved run, used as the config echo.
    pub fn echo_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[workload]
kind = "cbr"
rate = 0.5

[scheduler]
kind = "enhanced"

[trace]
n = 100
P = 20

[link]
c = 4

[sim]
duration_slots = 1000
seed = 7
"#;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let file = FileConfig::parse(MINIMAL).unwrap();
        let resolved = ResolvedConfig::resolve(&file, None, None).unwrap();
        assert_eq!(resolved.scheduler.gamma, 1024.0);
        assert_eq!(resolved.scheduler.m, 100);
        assert_eq!(resolved.scheduler.y_max, Some(4));
        let sim = resolved.to_sim_config(false).unwrap();
        assert_eq!(sim.duration_slots, 1000);
        assert_eq!(sim.seed, 7);
    }

    #[test]
    fn echo_round_trips() {
        let file = FileConfig::parse(MINIMAL).unwrap();
        let resolved = ResolvedConfig::resolve(&file, None, Some(99)).unwrap();
        let echoed = resolved.echo_toml();
        let back: ResolvedConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(back.sim.seed, 99);
        assert_eq!(back.echo_toml(), echoed);
    }

    #[test]
    fn schema_version_must_match() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        let err = FileConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[scheduler2]\nkind = \"x\"\n");
        assert!(FileConfig::parse(&text).is_err());
        let text = MINIMAL.replace("seed = 7", "seed = 7\nbogus_key = 3");
        assert!(FileConfig::parse(&text).is_err());
    }

    #[test]
    fn experiment_sections_override_base() {
        let text = format!(
            "{MINIMAL}\n[experiments.fast]\n[experiments.fast.sim]\nduration_slots = 200\nseed = 1\n"
        );
        let file = FileConfig::parse(&text).unwrap();
        let entry = file.experiment("fast").unwrap();
        let resolved = ResolvedConfig::resolve(&file, Some(entry), None).unwrap();
        assert_eq!(resolved.sim.duration_slots, 200);
        // workload falls back to the file-level section
        assert!(matches!(resolved.workload, WorkloadSpec::Cbr { .. }));
        assert!(file.experiment("absent").is_err());
    }

    #[test]
    fn capacity_violation_is_a_config_error() {
        let text = MINIMAL.replace("P = 20", "P = 900");
        // P = 900 over n = 100 gives max slot emission 9; y_max defaults to
        // c/9 = 0 -> clamped to 1, 9 <= 4 fails.
        let file = FileConfig::parse(&text).unwrap();
        let resolved = ResolvedConfig::resolve(&file, None, None).unwrap();
        let err = resolved.to_sim_config(false).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("capacity"));
    }
}
