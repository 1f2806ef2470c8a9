//! Network-level experiments: per-user throughput distributions and the
//! mean throughput as a function of the AP count.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::channel::{sample_paths, ChannelParams, OtfsGrid, PathSet, PowerProfile};
use crate::error::{Error, Result};
use crate::estimation::{link_stats, plan_pilots, GuardSpec, LinkStats, NormalizedPowers, PilotMode};
use crate::geometry::{apply_shadowing, place_network, NetworkConfig, ShadowingMode};
use crate::rate::{achievable_rate, equal_power_control, IsiCoefficient, PowerControl, RateInputs};
use crate::rng::{Domain, SeedTree};
use crate::stats::{bootstrap_mean, bootstrap_mean_diff, ecdf, summary_stats, Summary};

pub const BOLTZMANN: f64 = 1.381e-23;
pub const REFERENCE_TEMPERATURE_K: f64 = 290.0;

/// Tolerance on the per-AP power budget under equal power control.
pub const POWER_BUDGET_TOL: f64 = 1e-12;

/// Noise power `k_B T_0 M delta_f F` in W.
pub fn noise_power_w(grid: &OtfsGrid, noise_figure_db: f64) -> f64 {
    BOLTZMANN * REFERENCE_TEMPERATURE_K * grid.bandwidth_hz() * 10f64.powf(noise_figure_db / 10.0)
}

pub fn noise_power_dbm(grid: &OtfsGrid, noise_figure_db: f64) -> f64 {
    10.0 * (noise_power_w(grid, noise_figure_db) * 1000.0).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowingSelection {
    Corr,
    #[default]
    Uncorr,
    Both,
}

impl ShadowingSelection {
    pub fn modes(self) -> Vec<ShadowingMode> {
        match self {
            ShadowingSelection::Corr => vec![ShadowingMode::Correlated],
            ShadowingSelection::Uncorr => vec![ShadowingMode::Uncorrelated],
            ShadowingSelection::Both => vec![ShadowingMode::Uncorrelated, ShadowingMode::Correlated],
        }
    }
}

/// Transmit powers in W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowersW {
    pub downlink: f64,
    pub uplink: f64,
    pub pilot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub realizations: usize,
    pub seed: u64,
    pub shadowing: ShadowingSelection,
    pub noise_figure_db: f64,
    /// Extra Doppler guard bins around each pilot.
    pub k_hat: usize,
    #[serde(default)]
    pub pilot_mode: PilotMode,
    #[serde(default)]
    pub isi: IsiCoefficient,
    /// AP counts swept by `run_vs_aps`.
    pub ap_counts: Vec<usize>,
    /// User counts swept by `run_vs_aps`.
    pub user_counts: Vec<usize>,
    pub bootstrap_resamples: usize,
    pub network: NetworkConfig,
    pub grid: OtfsGrid,
    pub channel: ChannelParams,
    pub powers_w: PowersW,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self {
                realizations: 200,
                seed: 1,
                shadowing: ShadowingSelection::Both,
                noise_figure_db: 9.0,
                k_hat: 1,
                pilot_mode: PilotMode::SharedGrid,
                isi: IsiCoefficient::RowSum,
                ap_counts: vec![10, 20, 30, 40, 50],
                user_counts: vec![20, 40],
                bootstrap_resamples: 2000,
                network: NetworkConfig::default(),
                grid: OtfsGrid { n: 20, m: 30, delta_f: 15e3, carrier_hz: 4e9 },
                channel: ChannelParams {
                    num_paths: 5,
                    l_max: 2,
                    k_max: 3,
                    fractional: true,
                    profile: PowerProfile::Uniform,
                    distinct_delays: false,
                },
                powers_w: PowersW { downlink: 1.0, uplink: 0.2, pilot: 1.0 },
            },
            Preset::Desk => Self {
                realizations: 50,
                k_hat: 0,
                ap_counts: vec![4, 8, 16],
                user_counts: vec![4, 8],
                bootstrap_resamples: 1000,
                network: NetworkConfig { num_aps: 8, num_users: 4, ..NetworkConfig::default() },
                grid: OtfsGrid { n: 4, m: 8, delta_f: 15e3, carrier_hz: 4e9 },
                channel: ChannelParams {
                    num_paths: 3,
                    l_max: 2,
                    k_max: 0,
                    fractional: true,
                    profile: PowerProfile::Uniform,
                    distinct_delays: false,
                },
                ..Self::preset(Preset::Paper)
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn guard(&self) -> GuardSpec {
        GuardSpec {
            l_max: self.channel.l_max,
            k_max: self.channel.k_max,
            k_hat: self.k_hat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("need at least one realization".into()));
        }
        let p = &self.powers_w;
        if !(p.downlink > 0.0 && p.uplink > 0.0 && p.pilot > 0.0) {
            return Err(Error::InvalidConfig("transmit powers must be positive".into()));
        }
        if !(self.noise_figure_db >= 0.0) {
            return Err(Error::InvalidConfig("noise figure must be non-negative".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::InvalidConfig("need at least one bootstrap resample".into()));
        }
        self.network.validate()?;
        self.grid.validate()?;
        self.channel.validate(&self.grid)?;
        plan_pilots(self.network.num_users, &self.grid, self.guard(), self.pilot_mode)?;
        let span = self.guard().doppler_span();
        if self.grid.n <= span {
            return Err(Error::GuardExceedsFrame { guard: span, n: self.grid.n });
        }
        Ok(())
    }

    /// Transmit powers divided by the noise power.
    pub fn normalized_powers(&self) -> NormalizedPowers {
        let noise = noise_power_w(&self.grid, self.noise_figure_db);
        NormalizedPowers {
            downlink: self.powers_w.downlink / noise,
            uplink: self.powers_w.uplink / noise,
            pilot: self.powers_w.pilot / noise,
        }
    }

    fn with_counts(&self, aps: usize, users: usize) -> Self {
        let mut c = self.clone();
        c.network.num_aps = aps;
        c.network.num_users = users;
        c
    }
}

/// Rate of one user in one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSample {
    pub realization: usize,
    pub user: usize,
    pub shadowing: ShadowingMode,
    pub rate_bps_hz: f64,
    pub throughput_mbps: f64,
}

/// A network drop with its estimation statistics and power control.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: usize,
    pub shadowing: ShadowingMode,
    /// Path sets indexed `[ap][user]`.
    pub paths: Vec<Vec<PathSet>>,
    pub stats: LinkStats,
    pub power: PowerControl,
    pub powers: NormalizedPowers,
}

impl Realization {
    /// Largest deviation of the per-AP power budget from one.
    pub fn power_budget_deviation(&self) -> f64 {
        (0..self.stats.num_aps())
            .map(|p| (self.power.load(&self.stats, p) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn user_samples(&self, cfg: &ExperimentConfig) -> Vec<UserSample> {
        let inp = RateInputs {
            stats: &self.stats,
            power: &self.power,
            paths: &self.paths,
            rho_d: self.powers.downlink,
            grid: &cfg.grid,
            isi: cfg.isi,
        };
        (0..self.stats.num_users())
            .map(|q| {
                let rep = achievable_rate(q, &inp);
                UserSample {
                    realization: self.index,
                    user: q,
                    shadowing: self.shadowing,
                    rate_bps_hz: rep.rate,
                    throughput_mbps: rep.throughput_bps / 1e6,
                }
            })
            .collect()
    }
}

/// Placement, shadowing, paths, estimation statistics and equal power
/// control for drop `index`.
pub fn build_realization(cfg: &ExperimentConfig, mode: ShadowingMode, index: usize) -> Result<Realization> {
    let node = SeedTree::new(cfg.seed).child(index as u64);
    let net = NetworkConfig { shadowing: mode, ..cfg.network.clone() };
    let layout = apply_shadowing(&place_network(&net, node.master())?, &net, node.master());
    let paths_seed = node.child(1);
    let users = layout.num_users();
    let paths: Vec<Vec<PathSet>> = (0..layout.num_aps())
        .map(|p| {
            (0..users)
                .map(|q| {
                    let seed = paths_seed.child((p * users + q) as u64).master();
                    let mut set = sample_paths(layout.beta_pair[p][q], &cfg.channel, &cfg.grid, seed)?;
                    set.ap = p;
                    set.user = q;
                    Ok(set)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let powers = cfg.normalized_powers();
    let stats = link_stats(&paths, &powers, cfg.grid.n, &cfg.guard())?;
    let power = equal_power_control(&stats)?;
    Ok(Realization { index, shadowing: mode, paths, stats, power, powers })
}

/// One drop's per-user rates; fails if the power budget is not met.
pub fn run_realization(cfg: &ExperimentConfig, mode: ShadowingMode, index: usize) -> Result<Vec<UserSample>> {
    let r = build_realization(cfg, mode, index)?;
    let dev = r.power_budget_deviation();
    if dev > POWER_BUDGET_TOL {
        return Err(Error::IdentityViolation {
            lemma: "per-AP power budget",
            deviation: dev,
            tolerance: POWER_BUDGET_TOL,
        });
    }
    Ok(r.user_samples(cfg))
}

/// Runs every realization for one shadowing mode, ordered by index.
fn run_all(cfg: &ExperimentConfig, mode: ShadowingMode) -> Result<Vec<Vec<UserSample>>> {
    (0..cfg.realizations)
        .into_par_iter()
        .map(|i| run_realization(cfg, mode, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub shadowing: ShadowingMode,
    /// Samples sorted by throughput.
    pub samples: Vec<UserSample>,
    pub summary_mbps: Summary,
}

impl CdfCurve {
    /// `(throughput_mbps, F)` points of the empirical CDF.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let x: Vec<f64> = self.samples.iter().map(|s| s.throughput_mbps).collect();
        ecdf(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub curves: Vec<CdfCurve>,
}

#[derive(Serialize)]
struct CdfRow {
    shadowing: ShadowingMode,
    realization: usize,
    user: usize,
    rate_bps_hz: f64,
    throughput_mbps: f64,
    cdf: f64,
}

impl CdfTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for curve in &self.curves {
            for (s, (_, f)) in curve.samples.iter().zip(curve.points()) {
                w.serialize(CdfRow {
                    shadowing: s.shadowing,
                    realization: s.realization,
                    user: s.user,
                    rate_bps_hz: s.rate_bps_hz,
                    throughput_mbps: s.throughput_mbps,
                    cdf: f,
                })?;
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Per-user throughput distribution for each requested shadowing mode.
pub fn run_cdf(cfg: &ExperimentConfig) -> Result<CdfTable> {
    cfg.validate()?;
    let curves = cfg
        .shadowing
        .modes()
        .into_iter()
        .map(|mode| {
            let mut samples: Vec<UserSample> = run_all(cfg, mode)?.into_iter().flatten().collect();
            samples.sort_by(|a, b| {
                a.throughput_mbps
                    .total_cmp(&b.throughput_mbps)
                    .then(a.realization.cmp(&b.realization))
                    .then(a.user.cmp(&b.user))
            });
            let x: Vec<f64> = samples.iter().map(|s| s.throughput_mbps).collect();
            Ok(CdfCurve { shadowing: mode, summary_mbps: summary_stats(&x)?, samples })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CdfTable { curves })
}

/// Mean per-user throughput at one `(users, APs, shadowing)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub num_users: usize,
    pub num_aps: usize,
    pub shadowing: ShadowingMode,
    pub realizations: usize,
    pub mean_rate_bps_hz: f64,
    pub mean_throughput_mbps: f64,
    pub ci_low_mbps: f64,
    pub ci_high_mbps: f64,
    /// Mean per-user throughput of each realization.
    #[serde(skip)]
    pub per_realization_mbps: Vec<f64>,
}

#[derive(Serialize)]
struct SweepRow {
    num_users: usize,
    num_aps: usize,
    shadowing: ShadowingMode,
    realizations: usize,
    mean_rate_bps_hz: f64,
    mean_throughput_mbps: f64,
    ci_low_mbps: f64,
    ci_high_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(SweepRow {
                num_users: p.num_users,
                num_aps: p.num_aps,
                shadowing: p.shadowing,
                realizations: p.realizations,
                mean_rate_bps_hz: p.mean_rate_bps_hz,
                mean_throughput_mbps: p.mean_throughput_mbps,
                ci_low_mbps: p.ci_low_mbps,
                ci_high_mbps: p.ci_high_mbps,
            })?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn point(&self, users: usize, aps: usize, mode: ShadowingMode) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.num_users == users && p.num_aps == aps && p.shadowing == mode)
    }
}

/// Mean per-user throughput for every AP count and user count in the
/// config, with bootstrap intervals over realizations.
pub fn run_vs_aps(cfg: &ExperimentConfig) -> Result<SweepTable> {
    if cfg.ap_counts.is_empty() || cfg.user_counts.is_empty() {
        return Err(Error::InvalidConfig("AP and user count lists must be non-empty".into()));
    }
    let mut points = Vec::new();
    for mode in cfg.shadowing.modes() {
        for &users in &cfg.user_counts {
            for &aps in &cfg.ap_counts {
                let sub = cfg.with_counts(aps, users);
                sub.validate()?;
                let runs = run_all(&sub, mode)?;
                let per_real: Vec<f64> = runs
                    .iter()
                    .map(|r| r.iter().map(|s| s.throughput_mbps).sum::<f64>() / r.len() as f64)
                    .collect();
                let mean_rate = runs.iter().flatten().map(|s| s.rate_bps_hz).sum::<f64>()
                    / (runs.len() * users) as f64;
                let idx = (points.len()) as u64;
                let mut rng = SeedTree::new(cfg.seed).rng(Domain::Bootstrap, idx);
                let (lo, hi) = bootstrap_mean(&per_real, cfg.bootstrap_resamples, 0.95, &mut rng)?;
                points.push(SweepPoint {
                    num_users: users,
                    num_aps: aps,
                    shadowing: mode,
                    realizations: runs.len(),
                    mean_rate_bps_hz: mean_rate,
                    mean_throughput_mbps: per_real.iter().sum::<f64>() / per_real.len() as f64,
                    ci_low_mbps: lo,
                    ci_high_mbps: hi,
                    per_realization_mbps: per_real,
                });
            }
        }
    }
    Ok(SweepTable { points })
}

/// A bootstrap comparison between two sweep points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub claim: String,
    /// Difference of means, larger-expected minus smaller-expected.
    pub difference_mbps: f64,
    pub ci_low_mbps: f64,
    pub ci_high_mbps: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub checks: Vec<TrendCheck>,
    pub pass: bool,
}

/// Checks, at 95% bootstrap confidence, that throughput does not
/// significantly drop as APs are added and is strictly lower with more
/// users at every AP count.
pub fn trend_report(table: &SweepTable, resamples: usize, seed: u64) -> Result<TrendReport> {
    let mut checks = Vec::new();
    let mut rng = SeedTree::new(seed).rng(Domain::Bootstrap, u64::MAX);
    let mut modes: Vec<ShadowingMode> = table.points.iter().map(|p| p.shadowing).collect();
    modes.dedup();
    let mut users: Vec<usize> = table.points.iter().map(|p| p.num_users).collect();
    users.sort_unstable();
    users.dedup();
    let mut aps: Vec<usize> = table.points.iter().map(|p| p.num_aps).collect();
    aps.sort_unstable();
    aps.dedup();
    let get = |u, a, m| table.point(u, a, m).ok_or_else(|| Error::InvalidConfig("incomplete sweep".into()));
    for &mode in &modes {
        for &u in &users {
            for w in aps.windows(2) {
                let (small, large) = (get(u, w[0], mode)?, get(u, w[1], mode)?);
                let (d, lo, hi) =
                    bootstrap_mean_diff(&large.per_realization_mbps, &small.per_realization_mbps, resamples, 0.95, &mut rng)?;
                checks.push(TrendCheck {
                    claim: format!("{mode:?}, {u} users: {} APs >= {} APs", w[1], w[0]),
                    difference_mbps: d,
                    ci_low_mbps: lo,
                    ci_high_mbps: hi,
                    pass: hi >= 0.0,
                });
            }
        }
        for w in users.windows(2) {
            for &a in &aps {
                let (few, many) = (get(w[0], a, mode)?, get(w[1], a, mode)?);
                let (d, lo, hi) =
                    bootstrap_mean_diff(&few.per_realization_mbps, &many.per_realization_mbps, resamples, 0.95, &mut rng)?;
                checks.push(TrendCheck {
                    claim: format!("{mode:?}, {a} APs: {} users > {} users", w[0], w[1]),
                    difference_mbps: d,
                    ci_low_mbps: lo,
                    ci_high_mbps: hi,
                    pass: lo > 0.0,
                });
            }
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(TrendReport { checks, pass })
}

/// Git blob id of `content`: SHA-1 over `"blob <len>\0" ++ content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub output: String,
    pub output_hash: String,
    pub wall_time_s: f64,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new<C: Serialize, S: Serialize>(
        command: &str,
        seed: u64,
        config: &C,
        output: &Path,
        content: &[u8],
        wall: Duration,
        summary: &S,
    ) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            output: output.display().to_string(),
            output_hash: git_blob_hash(content),
            wall_time_s: wall.as_secs_f64(),
            summary: serde_json::to_value(summary)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
