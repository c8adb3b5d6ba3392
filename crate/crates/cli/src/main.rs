mod settings;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use delayfeed::harness::{
    compare_runs, grid_configs, load_dataset, read_report, run_grid, stream_run, write_comparison_csv, write_run,
    ComparisonRow, DataSource, ExperimentConfig, StreamReport,
};
use delayfeed::ingest::{records_from_clicks, write_log, LogSchema};
use delayfeed::synthgen::generate;
use delayfeed::{GenConfig, LossKind, Mechanism, ZSource};

use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "delayfeed", version, about = "Streaming CVR experiments under delayed feedback")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic click log
    Generate(ArmArgs),
    /// Run one arm and write report.json, report.csv and checkpoints/
    Run(ArmArgs),
    /// Run every compatible pipeline/loss pair and write a comparison table
    Grid(GridArgs),
    /// Relative-improvement table over existing reports
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct ArmArgs {
    /// TOML file with the same keys as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

impl ArmArgs {
    fn resolve(self) -> Result<Settings> {
        Settings::resolve(self.settings, self.config.as_deref())
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    arm: ArmArgs,
    /// Pipelines to include (default: all)
    #[arg(long, value_delimiter = ',')]
    pipelines: Vec<Mechanism>,
    /// Losses to include (default: all)
    #[arg(long, value_delimiter = ',')]
    losses: Vec<LossKind>,
    /// Fake-negative estimates for losses that use one (default: --z)
    #[arg(long, value_delimiter = ',')]
    zs: Vec<ZSource>,
    /// Worker threads
    #[arg(long, default_value_t = std::thread::available_parallelism().map_or(1, |n| n.get()))]
    threads: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Oracle report (report.json or its run directory)
    #[arg(long)]
    oracle: PathBuf,
    /// Reports to compare
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Also write the table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Generate(args) => generate_cmd(args.resolve()?),
        Command::Run(args) => run_cmd(args.resolve()?),
        Command::Grid(args) => grid_cmd(args),
        Command::Compare(args) => compare_cmd(args),
    }
}

fn require_out(settings: &Settings) -> Result<PathBuf> {
    settings.out.clone().context("no output location; pass --out or set `out` in the config file")
}

fn generate_cmd(settings: Settings) -> Result<()> {
    let out = require_out(&settings)?;
    if settings.log.is_some() {
        bail!("generate writes a synthetic log; --log does not apply");
    }
    let config = settings.experiment()?;
    let DataSource::Synthetic { model } = &config.source else { unreachable!("no log source was given") };
    let clicks = generate(&GenConfig {
        n_clicks: config.synthetic_clicks(),
        seed: config.seed,
        clicks_per_hour: config.clicks_per_hour,
        model: model.clone(),
        windows: config.windows,
    })?;
    let schema = LogSchema::for_context(&model.context, settings.hash_dim.unwrap_or(1 << 10));
    write_log(&out, &records_from_clicks(&clicks, &model.context), &schema)?;
    println!("wrote {} clicks to {}", clicks.len(), out.display());
    println!(
        "read it back with: --log {} --n-numeric {} --n-categorical {} --hash-dim {}",
        out.display(),
        schema.n_numeric,
        schema.n_categorical,
        schema.hash_dim
    );
    Ok(())
}

fn run_cmd(settings: Settings) -> Result<()> {
    let out = require_out(&settings)?;
    let config = settings.experiment()?;
    log::info!("running {}", config.arm_name());
    let run = stream_run(&config)?;
    write_run(&out, &run).with_context(|| format!("writing {}", out.display()))?;
    let r = &run.report;
    println!("{} over {} test hours ({:.1}s)", r.arm, r.hours.len(), r.wall_clock);
    print_table(&[
        ComparisonRow { arm: "pretrained".into(), metrics: r.pretrained.clone() },
        ComparisonRow { arm: r.arm.clone(), metrics: r.aggregate.clone() },
    ]);
    println!("wrote {}", out.display());
    Ok(())
}

fn arm_dir(arm: &str) -> String {
    arm.replace('/', "__")
}

fn grid_cmd(args: GridArgs) -> Result<()> {
    let threads = args.threads;
    let settings = args.arm.resolve()?;
    let out = require_out(&settings)?;
    let base = settings.experiment()?;
    let pipelines = if args.pipelines.is_empty() { Mechanism::ALL.to_vec() } else { args.pipelines };
    let losses = if args.losses.is_empty() { LossKind::ALL.to_vec() } else { args.losses };
    let zs = if args.zs.is_empty() { vec![base.z] } else { args.zs };
    let mut configs = grid_configs(&base, &pipelines, &losses, &zs);
    let is_oracle = |c: &ExperimentConfig| c.pipeline == Mechanism::Oracle && c.loss == LossKind::Ideal;
    if !configs.iter().any(is_oracle) {
        configs.insert(0, ExperimentConfig { pipeline: Mechanism::Oracle, loss: LossKind::Ideal, ..base.clone() });
    }
    let dataset = load_dataset(&base)?;
    log::info!("{} arms on {} clicks with {threads} threads", configs.len(), dataset.clicks.len());

    let mut reports = Vec::with_capacity(configs.len());
    for (config, run) in configs.iter().zip(run_grid(&dataset, &configs, threads)) {
        let run = run.with_context(|| format!("arm {}", config.arm_name()))?;
        let dir = out.join(arm_dir(&run.report.arm));
        write_run(&dir, &run).with_context(|| format!("writing {}", dir.display()))?;
        reports.push(run.report);
    }
    let oracle = reports.iter().find(|r| is_oracle(&r.config)).expect("oracle arm is part of the grid");
    let arms: Vec<StreamReport> = reports.iter().filter(|r| !is_oracle(&r.config)).cloned().collect();
    let rows = compare_runs(&arms, &oracle.pretrained, oracle)?;
    write_comparison_csv(&out.join("comparison.csv"), &rows)?;
    print_table(&rows);
    println!("wrote {} arms and comparison.csv to {}", reports.len(), out.display());
    Ok(())
}

fn load_report(path: &Path) -> Result<StreamReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    read_report(&file).with_context(|| format!("reading {}", file.display()))
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    let oracle = load_report(&args.oracle)?;
    let reports = args.reports.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let rows = compare_runs(&reports, &oracle.pretrained, &oracle)?;
    print_table(&rows);
    if let Some(out) = args.out {
        write_comparison_csv(&out, &rows)?;
    }
    Ok(())
}

fn cell(v: Option<f64>, digits: usize) -> String {
    let Some(v) = v else { return "-".into() };
    let s = format!("{v:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn print_table(rows: &[ComparisonRow]) {
    let width = rows.iter().map(|r| r.arm.len()).max().unwrap_or(0).max(3);
    println!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}",
        "arm", "auc", "ri-auc", "pr-auc", "ri-pr", "nll", "ri-nll", "samples"
    );
    for r in rows {
        let m = &r.metrics;
        println!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}",
            r.arm,
            cell(m.auc, 4),
            cell(m.ri_auc, 2),
            cell(m.pr_auc, 4),
            cell(m.ri_pr_auc, 2),
            cell(m.nll, 4),
            cell(m.ri_nll, 2),
            m.n_samples
        );
    }
}
