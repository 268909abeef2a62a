//! Command-line front end: experiment configs in, CSV out.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on budget or
//! other runtime errors.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use traceshape::engine::{self, SweepAxis};
use traceshape::indist::{self, PageCatalog, TraceSequence};
use traceshape::Error;

use config::{AnalyzeSection, FileConfig, ResolvedConfig};

#[derive(Parser)]
#[command(
    name = "traceshape",
    version,
    about = "Discrete-time simulator and analysis toolkit for trace-shaped traffic tunnels"
)]
struct Cli {
    /// Override sim.seed for every run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output files (default: config's out_dir, else '.').
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation (or every simulate experiment in the config) and
    /// write summary and trace-sequence CSVs.
    Simulate(SimulateArgs),
    /// Run a parameter sweep and write the aggregated table.
    Sweep(SweepArgs),
    /// Analyze a page catalog for fetch deniability.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Run a single named experiment from the config.
    #[arg(long)]
    experiment: Option<String>,

    /// Also write the per-slot series CSV.
    #[arg(long)]
    series: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Run a single named experiment from the config.
    #[arg(long)]
    experiment: Option<String>,

    /// Sweep axis: gamma, rate, flows, trace_n or trace_P. Overrides the
    /// config's [sweep] section.
    #[arg(long)]
    axis: Option<String>,

    /// Comma-separated axis values. Overrides the config's [sweep] section.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Experiment config file with an [analyze] section.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Catalog CSV (page_id,group_0,group_1,...). Overrides the config.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Observed sequence CSV (catalog row layout or the engine's
    /// trace-sequence export).
    #[arg(long, conflicts_with = "all_pages")]
    observed: Option<PathBuf>,

    /// Report mean and worst-case probabilities over all catalog sequences.
    #[arg(long)]
    all_pages: bool,

    /// Cap on how often one sequence may repeat within a combination.
    #[arg(long)]
    max_multiplicity: Option<u32>,

    /// Cap on the total instance count of a combination.
    #[arg(long)]
    max_items: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Analyze(args) => cmd_analyze(&cli, args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn out_dir(cli: &Cli, file: &FileConfig) -> Result<PathBuf, Error> {
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<ExitCode, Error> {
    let file = FileConfig::load(&args.config)?;
    let dir = out_dir(cli, &file)?;

    let jobs: Vec<(String, Option<&config::ExperimentEntry>)> = match &args.experiment {
        Some(name) => vec![(name.clone(), Some(file.experiment(name)?))],
        None => {
            let sims: Vec<_> = file
                .experiments
                .iter()
                .filter(|(_, e)| e.kind == config::JobKind::Simulate)
                .map(|(name, e)| (name.clone(), Some(e)))
                .collect();
            if sims.is_empty() {
                vec![("base".to_string(), None)]
            } else {
                sims
            }
        }
    };

    for (name, entry) in jobs {
        let resolved = ResolvedConfig::resolve(&file, entry, cli.seed)?;
        let sim = resolved.to_sim_config(args.series)?;
        let metrics = engine::run_simulation(&sim)?;

        let summary_path = dir.join(format!("{name}_summary.csv"));
        output::write_summary(&summary_path, &name, &resolved, &metrics)?;
        let sequence_path = dir.join(format!("{name}_sequence.csv"));
        output::write_sequence(&sequence_path, &resolved, &metrics)?;
        if args.series {
            let series_path = dir.join(format!("{name}_series.csv"));
            output::write_series(&series_path, &resolved, &metrics)?;
        }

        println!(
            "{name}: dummy_fraction={:.6} delay_mean_ms={:.3} delay_p50_ms={:.3} \
             delay_p95_ms={:.3} served={} dummies={} backlog={} -> {}",
            metrics.dummy_fraction,
            metrics.delay_mean_ms,
            metrics.delay_p50_ms,
            metrics.delay_p95_ms,
            metrics.served_total,
            metrics.dummy_total,
            metrics.final_backlog,
            summary_path.display(),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<ExitCode, Error> {
    let file = FileConfig::load(&args.config)?;
    let dir = out_dir(cli, &file)?;
    let (name, entry) = match &args.experiment {
        Some(name) => (name.clone(), Some(file.experiment(name)?)),
        None => ("base".to_string(), None),
    };
    let resolved = ResolvedConfig::resolve(&file, entry, cli.seed)?;

    let section = entry.and_then(|e| e.sweep.clone()).or_else(|| file.sweep.clone());
    let axis: SweepAxis = match (&args.axis, &section) {
        (Some(axis), _) => axis.parse()?,
        (None, Some(s)) => s.axis,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "no sweep axis: pass --axis or add a [sweep] section".into(),
            ))
        }
    };
    let values: Vec<f64> = match (&args.values, &section) {
        (Some(v), _) => v.clone(),
        (None, Some(s)) => s.values.clone(),
        (None, None) => Vec::new(),
    };
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep values must not be empty".into()));
    }
    let n_seeds = section.as_ref().map(|s| s.n_seeds).unwrap_or(5).max(1);
    let seeds: Vec<u64> = (0..u64::from(n_seeds))
        .map(|i| resolved.sim.seed.wrapping_add(i))
        .collect();

    let base = resolved.to_sim_config(false)?;
    let table = engine::sweep(&base, axis, &values, &seeds)?;

    let path = dir.join(format!("{name}_sweep.csv"));
    output::write_sweep(&path, &resolved, &table, &seeds)?;
    for row in &table.rows {
        match &row.error {
            None => println!(
                "{axis}={}: dummy_median={:.6} delay_median_ms={:.3} ({} runs)",
                row.value, row.dummy_median, row.delay_median_ms, row.runs
            ),
            Some(e) => println!("{axis}={}: error: {e}", row.value),
        }
    }
    println!("-> {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn analyze_section(args: &AnalyzeArgs, file: Option<&FileConfig>) -> Result<AnalyzeSection, Error> {
    let mut section = file
        .and_then(|f| f.analyze.clone())
        .unwrap_or(AnalyzeSection {
            catalog: PathBuf::new(),
            observed: None,
            all_pages: false,
            max_multiplicity: 4,
            max_items: 6,
            node_budget: 10_000_000,
            omit_self_explanation: false,
        });
    if let Some(catalog) = &args.catalog {
        section.catalog = catalog.clone();
    }
    if let Some(observed) = &args.observed {
        section.observed = Some(observed.clone());
    }
    if args.all_pages {
        section.all_pages = true;
        section.observed = None;
    }
    if let Some(m) = args.max_multiplicity {
        section.max_multiplicity = m;
    }
    if let Some(items) = args.max_items {
        section.max_items = items;
    }
    if section.catalog.as_os_str().is_empty() {
        return Err(Error::InvalidConfig(
            "no catalog: pass --catalog or add an [analyze] section".into(),
        ));
    }
    Ok(section)
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<ExitCode, Error> {
    let file = match &args.config {
        Some(path) => Some(FileConfig::load(path)?),
        None => None,
    };
    let dir = match &file {
        Some(f) => out_dir(cli, f)?,
        None => {
            let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            dir
        }
    };
    let section = analyze_section(args, file.as_ref())?;
    let catalog = PageCatalog::from_csv_path(&section.catalog)?;
    let limits = section.limits();

    let header = format!(
        "analyze catalog = {}\nmax_multiplicity = {}\nmax_items = {}\nnode_budget = {}",
        section.catalog.display(),
        limits.max_multiplicity,
        limits.max_items,
        limits.node_budget
    );

    if let Some(observed_path) = &section.observed {
        let observed = observed_csv(observed_path)?;
        let combos = indist::enumerate_combinations(&observed, &catalog, &limits)?;
        let mut rows: Vec<(String, f64)> = catalog
            .pages()
            .iter()
            .enumerate()
            .map(|(idx, page)| {
                let p = indist::prob_over_combinations(
                    idx,
                    &observed,
                    &combos,
                    &catalog,
                    section.self_explanation(),
                );
                (page.clone(), p)
            })
            .collect();
        rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let path = dir.join("observed_report.csv");
        let header = format!("{header}\nobserved = {}", observed);
        output::write_observed_report(&path, &header, &rows)?;
        println!(
            "observed {}: {} combinations, {} pages -> {}",
            observed,
            combos.len(),
            rows.len(),
            path.display()
        );
        return Ok(ExitCode::SUCCESS);
    }

    // Full per-page report over every catalog sequence.
    let rows = indist::deniability_report(
        &catalog,
        &limits,
        indist::ReportOptions {
            self_explanation: section.self_explanation(),
        },
    );
    let path = dir.join("deniability_report.csv");
    output::write_report(&path, &header, &rows)?;
    let budget_hit = rows.iter().any(|r| r.error.is_some());
    println!(
        "{} pages, {} sequences -> {}{}",
        catalog.pages().len(),
        catalog.sequences().len(),
        path.display(),
        if budget_hit {
            " (budget exceeded on some sequences; report is partial)"
        } else {
            ""
        }
    );
    if budget_hit {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn observed_csv(path: &Path) -> Result<TraceSequence, Error> {
    indist::read_observed_csv(path)
}
