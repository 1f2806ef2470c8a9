use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cellfree_otfs::channel::{DdPath, OtfsGrid, PathSet};
use cellfree_otfs::experiments::{
    noise_power_dbm, run_cdf, run_vs_aps, trend_report, ExperimentConfig, Preset, RunManifest, ShadowingSelection,
};
use cellfree_otfs::montecarlo::{validate_rate, ValidationConfig};
use cellfree_otfs::otfs::verify_operator_identities;
use cellfree_otfs::rng::{Domain, SeedTree};
use rand::Rng;

#[derive(Parser)]
#[command(name = "cfotfs", version, about = "Cell-free massive MIMO downlink with OTFS modulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user throughput distribution (CSV, one row per user sample).
    RunCdf(RunArgs),
    /// Mean per-user throughput against the number of APs.
    RunVsAps(RunArgs),
    /// Compare the closed-form SINR terms with Monte Carlo estimates.
    Validate(ValidateArgs),
    /// Check the delay-Doppler operator identities on random paths.
    CheckIdentities(IdentityArgs),
    /// Print the receiver noise power.
    Noise(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShadowingArg {
    Corr,
    Uncorr,
    Both,
}

impl From<ShadowingArg> for ShadowingSelection {
    fn from(s: ShadowingArg) -> Self {
        match s {
            ShadowingArg::Corr => ShadowingSelection::Corr,
            ShadowingArg::Uncorr => ShadowingSelection::Uncorr,
            ShadowingArg::Both => ShadowingSelection::Both,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    shadowing: Option<ShadowingArg>,
    /// Output CSV; a `.manifest.json` is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// TOML validation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentityArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of random paths.
    #[arg(long, default_value_t = 100)]
    paths: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

fn experiment_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::preset(args.preset.into()),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn write_outputs<C: Serialize, S: Serialize>(
    command: &str,
    seed: u64,
    config: &C,
    out: &Path,
    content: &[u8],
    start: Instant,
    summary: &S,
) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, content).with_context(|| format!("writing {}", out.display()))?;
    let manifest = RunManifest::new(command, seed, config, out, content, start.elapsed(), summary)?;
    fs::write(manifest_path(out), manifest.to_json()?)?;
    Ok(())
}

fn run_cdf_cmd(args: RunArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut cfg = experiment_config(&args.common)?;
    if let Some(s) = args.shadowing {
        cfg.shadowing = s.into();
    }
    let table = run_cdf(&cfg)?;
    let summaries: Vec<_> = table.curves.iter().map(|c| (c.shadowing, c.summary_mbps)).collect();
    for (mode, s) in &summaries {
        println!(
            "{mode:?}: {} samples, median {:.3} Mbit/s, 95%-likely {:.3} Mbit/s",
            s.count, s.median, s.p5
        );
    }
    write_outputs("run-cdf", cfg.seed, &cfg, &args.out, &table.to_csv()?, start, &summaries)?;
    Ok(ExitCode::SUCCESS)
}

fn run_vs_aps_cmd(args: RunArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut cfg = experiment_config(&args.common)?;
    if let Some(s) = args.shadowing {
        cfg.shadowing = s.into();
    }
    let table = run_vs_aps(&cfg)?;
    for p in &table.points {
        println!(
            "{:?} K_u={:3} M_a={:3}: {:.3} Mbit/s [{:.3}, {:.3}]",
            p.shadowing, p.num_users, p.num_aps, p.mean_throughput_mbps, p.ci_low_mbps, p.ci_high_mbps
        );
    }
    let trends = trend_report(&table, cfg.bootstrap_resamples, cfg.seed)?;
    for c in trends.checks.iter().filter(|c| !c.pass) {
        println!("trend not supported: {}", c.claim);
    }
    write_outputs("run-vs-aps", cfg.seed, &cfg, &args.out, &table.to_csv()?, start, &trends)?;
    Ok(ExitCode::SUCCESS)
}

fn validate_cmd(args: ValidateArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut cfg = match &args.config {
        Some(p) => toml::from_str::<ValidationConfig>(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ValidationConfig::default(),
    };
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(i) = args.instances {
        cfg.instances = i;
    }
    let report = validate_rate(&cfg, args.seed)?;
    for inst in &report.instances {
        let worst = inst.bins.iter().map(|b| b.relative_error).fold(0.0, f64::max);
        let z = inst.terms.iter().map(|t| t.z.abs()).fold(0.0, f64::max);
        println!(
            "instance {:2}: {} (max |z| {:.2}, max SINR error {:.2}%)",
            inst.instance,
            if inst.pass { "pass" } else { "FAIL" },
            z,
            100.0 * worst
        );
    }
    if let Some(out) = &args.out {
        let json = report.to_json()?;
        write_outputs("validate", args.seed, &cfg, out, json.as_bytes(), start, &report.pass)?;
    }
    println!("validation {}", if report.pass { "passed" } else { "FAILED" });
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn check_identities_cmd(args: IdentityArgs) -> Result<ExitCode> {
    let cfg = experiment_config(&args.common)?;
    let grid = cfg.grid;
    let k = grid.max_doppler_tap() as i64;
    let mut rng = SeedTree::new(cfg.seed).rng(Domain::Fixture, 0);
    let mut ok = true;
    let mut done = 0;
    while done < args.paths {
        let count = cfg.channel.num_paths.min(args.paths - done);
        let paths = (0..count)
            .map(|_| DdPath::new(rng.gen_range(0..grid.m), rng.gen_range(-k..=k), rng.gen_range(-0.5..0.5)))
            .collect();
        let set = PathSet { ap: 0, user: 0, paths };
        match verify_operator_identities(&set, &grid, args.tolerance) {
            Ok(_) => {}
            Err(e) => {
                println!("path set {}: {e}", done / cfg.channel.num_paths.max(1));
                ok = false;
            }
        }
        done += count;
    }
    println!(
        "{} paths on M={} N={}: identities {}",
        args.paths,
        grid.m,
        grid.n,
        if ok { "hold" } else { "VIOLATED" }
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn noise_cmd(args: CommonArgs) -> Result<ExitCode> {
    let cfg = experiment_config(&args)?;
    let g: OtfsGrid = cfg.grid;
    println!("{:.2} dBm", noise_power_dbm(&g, cfg.noise_figure_db));
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::RunCdf(a) => run_cdf_cmd(a),
        Command::RunVsAps(a) => run_vs_aps_cmd(a),
        Command::Validate(a) => validate_cmd(a),
        Command::CheckIdentities(a) => check_identities_cmd(a),
        Command::Noise(a) => noise_cmd(a),
    }
}
