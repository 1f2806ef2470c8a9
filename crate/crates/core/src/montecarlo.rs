//! Brute-force estimation of the SINR terms by explicit simulation of the
//! dense effective channels.
//!
//! Taps are frozen per fixture; each trial redraws every path gain through
//! the MMSE decomposition `h = h_hat + e` and forms
//! `A = sum_p sqrt(eta_pq) H_pq H_hat_pq^H`. Row `r` of `A` gives the desired
//! signal (diagonal entry) and the inter-symbol leakage (off-diagonal
//! entries); the cross products with other users' estimates give the
//! inter-user leakage.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_paths, ChannelParams, OtfsGrid, PathSet, PowerProfile};
use crate::error::{Error, Result};
use crate::estimation::{link_stats, sample_estimate, GuardSpec, LinkStats, NormalizedPowers};
use crate::otfs::{CMatrix, LinkOperators};
use crate::rate::{equal_power_control, sinr_terms, IsiCoefficient, PowerControl, RateInputs, SinrTerms};
use crate::rng::{Domain, SeedTree};

/// Trials below this count are flagged in the estimates.
pub const MIN_TRIALS: usize = 100;

/// Trials per RNG substream.
const CHUNK: usize = 250;

/// Largest `MN` accepted for dense simulation.
pub const MAX_DENSE_BINS: usize = 256;

/// A frozen network instance: taps, statistics and power control.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub grid: OtfsGrid,
    /// Path sets indexed `[ap][user]`.
    pub paths: Vec<Vec<PathSet>>,
    pub stats: LinkStats,
    pub power: PowerControl,
    pub rho_d: f64,
}

impl Fixture {
    /// Builds statistics and equal power control for fixed path sets.
    pub fn new(grid: OtfsGrid, paths: Vec<Vec<PathSet>>, powers: NormalizedPowers, guard: GuardSpec) -> Result<Self> {
        let stats = link_stats(&paths, &powers, grid.n, &guard)?;
        let power = equal_power_control(&stats)?;
        Ok(Self {
            grid,
            paths,
            stats,
            power,
            rho_d: powers.downlink,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.paths.len()
    }

    pub fn num_users(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    pub fn rate_inputs(&self, isi: IsiCoefficient) -> RateInputs<'_> {
        RateInputs {
            stats: &self.stats,
            power: &self.power,
            paths: &self.paths,
            rho_d: self.rho_d,
            grid: &self.grid,
            isi,
        }
    }
}

/// Shape of a randomly drawn validation fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub m: usize,
    pub n: usize,
    pub num_aps: usize,
    pub num_users: usize,
    pub num_paths: usize,
    pub l_max: usize,
    pub k_max: usize,
    pub fractional: bool,
    pub distinct_delays: bool,
    pub powers: NormalizedPowers,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            m: 4,
            n: 2,
            num_aps: 2,
            num_users: 2,
            num_paths: 2,
            l_max: 1,
            k_max: 0,
            fractional: true,
            distinct_delays: false,
            powers: NormalizedPowers {
                downlink: 10.0,
                uplink: 1.0,
                pilot: 10.0,
            },
        }
    }
}

/// Draws link coefficients log-uniformly over a decade and taps from the
/// channel sampler.
pub fn random_fixture(spec: &FixtureSpec, seed: u64) -> Result<Fixture> {
    let grid = OtfsGrid::new(spec.n, spec.m, 15e3, 4e9)?;
    let params = ChannelParams {
        num_paths: spec.num_paths,
        l_max: spec.l_max,
        k_max: spec.k_max,
        fractional: spec.fractional,
        profile: PowerProfile::Uniform,
        distinct_delays: spec.distinct_delays,
    };
    let tree = SeedTree::new(seed);
    let mut rng = tree.rng(Domain::Fixture, 0);
    let mut paths = Vec::with_capacity(spec.num_aps);
    for p in 0..spec.num_aps {
        let mut row = Vec::with_capacity(spec.num_users);
        for q in 0..spec.num_users {
            let beta = 10f64.powf(rng.gen_range(-1.0..0.0));
            let idx = (p * spec.num_users + q) as u64;
            let mut set = sample_paths(beta, &params, &grid, tree.child(idx).master())?;
            set.ap = p;
            set.user = q;
            row.push(set);
        }
        paths.push(row);
    }
    let guard = GuardSpec {
        l_max: spec.l_max,
        k_max: spec.k_max,
        k_hat: 0,
    };
    Fixture::new(grid, paths, spec.powers, guard)
}

/// Sample moments of the four SINR terms at one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermEstimates {
    pub desired: Complex64,
    pub desired_se: f64,
    pub gain_uncertainty: f64,
    pub gain_uncertainty_se: f64,
    pub inter_symbol: f64,
    pub inter_symbol_se: f64,
    pub inter_user: f64,
    pub inter_user_se: f64,
    pub trials: usize,
    pub insufficient_trials: bool,
}

impl TermEstimates {
    /// `|DS|^2 / (BU + I1 + I2 + 1/rho_d)` from the sample moments.
    pub fn sinr(&self, rho_d: f64) -> f64 {
        let den = self.gain_uncertainty + self.inter_symbol + self.inter_user + 1.0 / rho_d;
        let ds = self.desired.re;
        if ds == 0.0 {
            return 0.0;
        }
        ds * ds / den
    }
}

/// Per-trial observations at one bin.
#[derive(Debug, Clone, Copy, Default)]
struct Sample {
    diag: Complex64,
    isi: f64,
    iui: f64,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn summarise(samples: &[Sample]) -> TermEstimates {
    let n = samples.len();
    let nf = n as f64;
    let desired = samples.iter().map(|s| s.diag).sum::<Complex64>() / nf;
    let (_, desired_se) = mean_se(samples.iter().map(|s| s.diag.re), n);
    // unbiased variance as the mean of n/(n-1) |a - mean|^2
    let scale = if n > 1 { nf / (nf - 1.0) } else { 1.0 };
    let (gain_uncertainty, gain_uncertainty_se) =
        mean_se(samples.iter().map(|s| scale * (s.diag - desired).norm_sqr()), n);
    let (inter_symbol, inter_symbol_se) = mean_se(samples.iter().map(|s| s.isi), n);
    let (inter_user, inter_user_se) = mean_se(samples.iter().map(|s| s.iui), n);
    TermEstimates {
        desired,
        desired_se,
        gain_uncertainty,
        gain_uncertainty_se,
        inter_symbol,
        inter_symbol_se,
        inter_user,
        inter_user_se,
        trials: n,
        insufficient_trials: n < MIN_TRIALS,
    }
}

/// Draws one trial and returns observations for each requested bin.
fn trial<R: Rng>(
    q: usize,
    bins: &[usize],
    fx: &Fixture,
    ops: &[Vec<LinkOperators>],
    rng: &mut R,
) -> Result<Vec<Sample>> {
    let (aps, users) = (fx.num_aps(), fx.num_users());
    let size = fx.grid.bins();
    let mut own = CMatrix::zeros(size, size);
    let mut cross = vec![CMatrix::zeros(size, size); users];
    for p in 0..aps {
        let mut h_q = None;
        let mut est = Vec::with_capacity(users);
        for u in 0..users {
            let st = &fx.stats.pair(p, u).paths;
            let mut gains = Vec::with_capacity(st.len());
            let mut hats = Vec::with_capacity(st.len());
            for s in st {
                let d = sample_estimate(s.beta, s.gamma, rng)?;
                gains.push(d.true_gain());
                hats.push(d.estimate);
            }
            if u == q {
                h_q = Some(ops[p][u].combine(&gains));
            }
            est.push(ops[p][u].combine(&hats));
        }
        let h_q = h_q.expect("target user present");
        for (u, hat) in est.iter().enumerate() {
            let w = Complex64::from(fx.power.eta[p][u].sqrt());
            let prod = &h_q * hat.adjoint();
            if u == q {
                own += prod * w;
            } else {
                cross[u] += prod * w;
            }
        }
    }
    Ok(bins
        .iter()
        .map(|&r| {
            let row = own.row(r);
            let diag = row[r];
            let isi = row.iter().map(|v| v.norm_sqr()).sum::<f64>() - diag.norm_sqr();
            let iui = (0..users)
                .filter(|&u| u != q)
                .map(|u| cross[u].row(r).iter().map(|v| v.norm_sqr()).sum::<f64>())
                .sum();
            Sample { diag, isi: isi.max(0.0), iui }
        })
        .collect())
}

/// Estimates the terms for user `q` at each bin in `bins`, sharing trials
/// across bins.
pub fn estimate_bins(q: usize, bins: &[usize], fx: &Fixture, trials: usize, seed: u64) -> Result<Vec<TermEstimates>> {
    let size = fx.grid.bins();
    if size > MAX_DENSE_BINS {
        return Err(Error::Precondition(format!(
            "dense simulation needs MN <= {MAX_DENSE_BINS}, got {size}"
        )));
    }
    if q >= fx.num_users() || bins.iter().any(|&r| r >= size) {
        return Err(Error::Precondition("user or bin index out of range".into()));
    }
    if trials == 0 {
        return Err(Error::EmptySamples);
    }
    let ops: Vec<Vec<LinkOperators>> = fx
        .paths
        .iter()
        .map(|row| row.iter().map(|s| LinkOperators::new(s, &fx.grid)).collect())
        .collect();
    let tree = SeedTree::new(seed);
    let chunks = trials.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<Vec<Sample>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = tree.rng(Domain::Trials, c as u64);
            let count = CHUNK.min(trials - c * CHUNK);
            (0..count).map(|_| trial(q, bins, fx, &ops, &mut rng)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..bins.len())
        .map(|b| {
            let samples: Vec<Sample> = per_chunk.iter().flatten().map(|t| t[b]).collect();
            summarise(&samples)
        })
        .collect())
}

/// Term estimates for user `q` at bin `r`.
pub fn estimate_terms(q: usize, r: usize, fx: &Fixture, trials: usize, seed: u64) -> Result<TermEstimates> {
    Ok(estimate_bins(q, &[r], fx, trials, seed)?.remove(0))
}

/// One closed-form term against its empirical estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub closed_form: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// `(empirical - closed_form) / std_error`.
    pub z: f64,
    pub pass: bool,
}

impl TermCheck {
    fn new(term: &str, closed_form: f64, empirical: f64, std_error: f64, sigmas: f64) -> Self {
        let diff = empirical - closed_form;
        // rounding floor for terms that vanish identically
        let floor = 1e-12 * closed_form.abs().max(empirical.abs()).max(1e-300);
        let z = if std_error > 0.0 { diff / std_error } else if diff.abs() <= floor { 0.0 } else { f64::INFINITY };
        Self {
            term: term.to_string(),
            closed_form,
            empirical,
            std_error,
            z,
            pass: diff.abs() <= sigmas * std_error + floor,
        }
    }
}

pub fn compare_terms(closed: &SinrTerms, emp: &TermEstimates, sigmas: f64) -> Vec<TermCheck> {
    vec![
        TermCheck::new("desired", closed.desired, emp.desired.re, emp.desired_se, sigmas),
        TermCheck::new("gain_uncertainty", closed.gain_uncertainty, emp.gain_uncertainty, emp.gain_uncertainty_se, sigmas),
        TermCheck::new("inter_symbol", closed.inter_symbol, emp.inter_symbol, emp.inter_symbol_se, sigmas),
        TermCheck::new("inter_user", closed.inter_user, emp.inter_user, emp.inter_user_se, sigmas),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub fixture: FixtureSpec,
    pub instances: usize,
    pub trials: usize,
    /// Relative SINR tolerance.
    pub sinr_gate: f64,
    /// Term tolerance in standard errors.
    pub term_sigmas: f64,
    pub isi: IsiCoefficient,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            fixture: FixtureSpec::default(),
            instances: 10,
            trials: 10_000,
            sinr_gate: 0.05,
            term_sigmas: 3.0,
            isi: IsiCoefficient::RowSum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCheck {
    pub user: usize,
    pub bin: usize,
    pub sinr_closed_form: f64,
    pub sinr_empirical: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: usize,
    /// User and bin whose individual terms are gated.
    pub user: usize,
    pub bin: usize,
    pub terms: Vec<TermCheck>,
    pub bins: Vec<BinCheck>,
    /// Largest relative spread of the closed-form SINR over bins, per user.
    pub closed_form_bin_spread: f64,
    /// Links whose paths all have distinct delays.
    pub distinct_delays: bool,
    pub insufficient_trials: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub seed: u64,
    pub instances: Vec<InstanceReport>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn relative_error(closed: f64, emp: f64) -> f64 {
    if closed == 0.0 && emp == 0.0 {
        0.0
    } else {
        (emp - closed).abs() / closed.abs().max(emp.abs())
    }
}

/// Validates one fixture: all users and bins for the assembled SINR, one
/// designated `(user, bin)` for the individual terms.
pub fn validate_fixture(
    instance: usize,
    fx: &Fixture,
    target: (usize, usize),
    cfg: &ValidationConfig,
    seed: u64,
) -> Result<InstanceReport> {
    let inp = fx.rate_inputs(cfg.isi);
    let all_bins: Vec<usize> = (0..fx.grid.bins()).collect();
    let tree = SeedTree::new(seed);
    let mut bins = Vec::new();
    let mut terms = Vec::new();
    let mut spread: f64 = 0.0;
    let mut insufficient = false;
    for q in 0..fx.num_users() {
        let est = estimate_bins(q, &all_bins, fx, cfg.trials, tree.child(q as u64).master())?;
        let closed: Vec<SinrTerms> = all_bins.iter().map(|&r| sinr_terms(q, r, &inp)).collect();
        let sinrs: Vec<f64> = closed.iter().map(SinrTerms::sinr).collect();
        let (lo, hi) = sinrs.iter().fold((f64::INFINITY, 0f64), |(a, b), &s| (a.min(s), b.max(s)));
        if hi > 0.0 {
            spread = spread.max((hi - lo) / hi);
        }
        for &r in &all_bins {
            let e = &est[r];
            insufficient |= e.insufficient_trials;
            let emp = e.sinr(fx.rho_d);
            let rel = relative_error(sinrs[r], emp);
            bins.push(BinCheck {
                user: q,
                bin: r,
                sinr_closed_form: sinrs[r],
                sinr_empirical: emp,
                relative_error: rel,
                pass: rel <= cfg.sinr_gate,
            });
            if (q, r) == target {
                terms = compare_terms(&closed[r], e, cfg.term_sigmas);
            }
        }
    }
    let distinct_delays = fx.paths.iter().flatten().all(PathSet::has_distinct_delays);
    let pass = terms.iter().all(|t| t.pass) && bins.iter().all(|b| b.pass);
    Ok(InstanceReport {
        instance,
        user: target.0,
        bin: target.1,
        terms,
        bins,
        closed_form_bin_spread: spread,
        distinct_delays,
        insufficient_trials: insufficient,
        pass,
    })
}

/// Draws `cfg.instances` random fixtures and checks the closed form against
/// simulation on each.
pub fn validate_rate(cfg: &ValidationConfig, seed: u64) -> Result<ValidationReport> {
    if cfg.instances == 0 {
        return Err(Error::InvalidConfig("need at least one validation instance".into()));
    }
    let tree = SeedTree::new(seed);
    let instances = (0..cfg.instances)
        .map(|i| {
            let node = tree.child(i as u64);
            let fx = random_fixture(&cfg.fixture, node.master())?;
            let mut pick = node.rng(Domain::Fixture, 1);
            let target = (pick.gen_range(0..fx.num_users()), pick.gen_range(0..fx.grid.bins()));
            validate_fixture(i, &fx, target, cfg, node.child(1).master())
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = instances.iter().all(|r| r.pass);
    Ok(ValidationReport {
        config: *cfg,
        seed,
        instances,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DdPath;

    fn single_link(beta: f64, rho_p: f64) -> Fixture {
        let grid = OtfsGrid::new(2, 4, 15e3, 4e9).unwrap();
        let set = PathSet {
            ap: 0,
            user: 0,
            paths: vec![DdPath { variance: beta, ..DdPath::new(1, 0, 0.3) }],
        };
        let powers = NormalizedPowers { downlink: 10.0, uplink: 1.0, pilot: rho_p };
        Fixture::new(grid, vec![vec![set]], powers, GuardSpec { l_max: 1, k_max: 0, k_hat: 0 }).unwrap()
    }

    #[test]
    fn near_perfect_csi_variance() {
        let fx = single_link(0.8, 1e12);
        let est = estimate_terms(0, 3, &fx, 10_000, 7).unwrap();
        let eta = fx.power.eta[0][0];
        let expect = eta * 0.8 * 0.8;
        assert!((est.gain_uncertainty - expect).abs() < 0.05 * expect);
        assert_eq!(est.inter_user, 0.0);
        assert!(est.inter_symbol < 1e-20);
        assert!(!est.insufficient_trials);
    }

    #[test]
    fn few_trials_flagged() {
        let fx = single_link(0.8, 1.0);
        let est = estimate_terms(0, 0, &fx, 50, 1).unwrap();
        assert!(est.insufficient_trials);
        assert!(estimate_terms(0, 0, &fx, 0, 1).is_err());
        assert!(estimate_terms(0, 8, &fx, 10, 1).is_err());
    }

    #[test]
    fn estimates_are_deterministic() {
        let fx = random_fixture(&FixtureSpec::default(), 11).unwrap();
        let a = estimate_bins(1, &[0, 5], &fx, 600, 3).unwrap();
        let b = estimate_bins(1, &[0, 5], &fx, 600, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.gain_uncertainty >= 0.0 && e.inter_symbol >= 0.0 && e.inter_user >= 0.0));
    }

    #[test]
    fn term_check_zero_terms() {
        let t = TermCheck::new("x", 0.0, 0.0, 0.0, 3.0);
        assert!(t.pass && t.z == 0.0);
        assert!(!TermCheck::new("x", 1.0, 1.5, 0.1, 3.0).pass);
        assert!(TermCheck::new("x", 1.0, 1.2, 0.1, 3.0).pass);
    }
}
