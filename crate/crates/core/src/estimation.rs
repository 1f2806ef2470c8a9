//! Embedded-pilot channel estimation statistics.
//!
//! Each user places one pilot in the DD grid surrounded by a zero guard of
//! `(2 l_max + 1)` delay bins by `(4 k_max + 4 k_hat + 1)` Doppler bins.
//! With delay and Doppler indices known, each path gain is estimated by a
//! scalar MMSE filter whose effective noise collects the residual
//! fractional-Doppler leakage of the user's own data (`EI1`), the data of
//! the other users (`EI2`) and thermal noise.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_normal, OtfsGrid, PathSet};
use crate::error::{Error, Result};

/// Transmit powers normalised by the noise power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPowers {
    pub downlink: f64,
    pub uplink: f64,
    pub pilot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotMode {
    /// Users reuse each other's pilot and guard bins for data.
    #[default]
    SharedGrid,
    /// Guard regions of different users may not overlap.
    Strict,
}

/// Guard widths around each embedded pilot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardSpec {
    pub l_max: usize,
    pub k_max: usize,
    /// Extra Doppler guard against fractional-Doppler spread.
    pub k_hat: usize,
}

impl GuardSpec {
    pub fn delay_span(&self) -> usize {
        2 * self.l_max + 1
    }

    /// Doppler extent `4 k_max + 4 k_hat + 1` of the zero region.
    pub fn doppler_span(&self) -> usize {
        4 * self.k_max + 4 * self.k_hat + 1
    }

    /// Bins reserved per user.
    pub fn overhead(&self) -> usize {
        self.delay_span() * self.doppler_span()
    }
}

/// Per-user pilot placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPlan {
    pub guard: GuardSpec,
    pub mode: PilotMode,
    /// `(doppler, delay)` pilot bin of each user.
    pub locations: Vec<(usize, usize)>,
    /// `N_guard`, bins per user.
    pub guard_bins: usize,
}

/// Places one pilot per user at the centre of a guard tile. Tiles are laid
/// out delay-first on a regular lattice; in shared-grid mode the lattice
/// wraps and tiles may coincide.
pub fn plan_pilots(num_users: usize, grid: &OtfsGrid, guard: GuardSpec, mode: PilotMode) -> Result<PilotPlan> {
    if num_users == 0 {
        return Err(Error::InvalidConfig("need at least one user".into()));
    }
    let (dl, dk) = (guard.delay_span(), guard.doppler_span());
    if dl > grid.m || dk > grid.n {
        return Err(Error::GuardExceedsFrame {
            guard: dk.max(dl),
            n: if dk > grid.n { grid.n } else { grid.m },
        });
    }
    let guard_bins = guard.overhead();
    let (tiles_l, tiles_k) = (grid.m / dl, grid.n / dk);
    let capacity = tiles_l * tiles_k;
    if mode == PilotMode::Strict && (num_users * guard_bins > grid.bins() || num_users > capacity) {
        return Err(Error::OverheadInfeasible {
            users: num_users,
            guard: guard_bins,
            bins: grid.bins(),
        });
    }
    let locations = (0..num_users)
        .map(|q| {
            let t = q % capacity;
            let (tl, tk) = (t % tiles_l, t / tiles_l);
            (tk * dk + dk / 2, tl * dl + guard.l_max)
        })
        .collect();
    Ok(PilotPlan {
        guard,
        mode,
        locations,
        guard_bins,
    })
}

fn check_guard_fits(n: usize, guard: &GuardSpec) -> Result<()> {
    if n <= guard.doppler_span() {
        return Err(Error::GuardExceedsFrame {
            guard: guard.doppler_span(),
            n,
        });
    }
    Ok(())
}

/// `(E|I1|^2, E|I2|^2)` at one AP for user `q`.
///
/// `path_variances[q']` lists `beta_{pq',i}` of every user at this AP.
pub fn interference_powers(
    path_variances: &[Vec<f64>],
    q: usize,
    rho_u: f64,
    n: usize,
    guard: &GuardSpec,
) -> Result<(f64, f64)> {
    check_guard_fits(n, guard)?;
    let nf = n as f64;
    let own: f64 = path_variances[q].iter().sum();
    let others: f64 = path_variances
        .iter()
        .enumerate()
        .filter(|&(u, _)| u != q)
        .map(|(_, v)| v.iter().sum::<f64>())
        .sum();
    let leak = (n - guard.doppler_span()) as f64 / (nf * nf);
    Ok((rho_u * leak * own, rho_u / nf * others))
}

/// Interference constant `Xi` before clamping; `rho_u * Xi = EI1 + EI2`.
pub fn interference_constant(path_variances: &[Vec<f64>], q: usize, n: usize, guard: &GuardSpec) -> f64 {
    let nf = n as f64;
    let all: f64 = path_variances.iter().flatten().sum();
    let own: f64 = path_variances[q].iter().sum();
    all / nf - guard.doppler_span() as f64 / (nf * nf) * own
}

/// MMSE coefficient `c = sqrt(rho_p) beta / (rho_p beta + rho_u Xi + 1)`.
pub fn mmse_coeff(beta: f64, rho_p: f64, rho_u: f64, xi: f64) -> f64 {
    rho_p.sqrt() * beta / (rho_p * beta + rho_u * xi.max(0.0) + 1.0)
}

/// Estimate variance `gamma = sqrt(rho_p) beta c`.
pub fn estimate_variance(beta: f64, rho_p: f64, c: f64) -> f64 {
    rho_p.sqrt() * beta * c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub beta: f64,
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    /// Clamped interference constant.
    pub xi: f64,
    pub paths: Vec<PathStats>,
}

impl PairStats {
    pub fn beta_sum(&self) -> f64 {
        self.paths.iter().map(|p| p.beta).sum()
    }

    pub fn gamma_sum(&self) -> f64 {
        self.paths.iter().map(|p| p.gamma).sum()
    }
}

/// MMSE statistics of every AP-user link, indexed `[ap][user]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub pairs: Vec<Vec<PairStats>>,
    /// Links whose raw `Xi` was negative and got clamped to zero.
    pub xi_clamped: usize,
}

impl LinkStats {
    pub fn num_aps(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_users(&self) -> usize {
        self.pairs.first().map_or(0, Vec::len)
    }

    pub fn pair(&self, ap: usize, user: usize) -> &PairStats {
        &self.pairs[ap][user]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// MMSE statistics for path sets indexed `[ap][user]`.
pub fn link_stats(paths: &[Vec<PathSet>], powers: &NormalizedPowers, n: usize, guard: &GuardSpec) -> Result<LinkStats> {
    check_guard_fits(n, guard)?;
    let mut xi_clamped = 0;
    let mut pairs = Vec::with_capacity(paths.len());
    for ap_sets in paths {
        let variances: Vec<Vec<f64>> = ap_sets
            .iter()
            .map(|s| s.paths.iter().map(|p| p.variance).collect())
            .collect();
        let mut row = Vec::with_capacity(ap_sets.len());
        for (q, set) in ap_sets.iter().enumerate() {
            let raw = interference_constant(&variances, q, n, guard);
            if raw < 0.0 {
                xi_clamped += 1;
            }
            let xi = raw.max(0.0);
            let paths = set
                .paths
                .iter()
                .map(|p| {
                    let c = mmse_coeff(p.variance, powers.pilot, powers.uplink, xi);
                    PathStats {
                        beta: p.variance,
                        c,
                        gamma: estimate_variance(p.variance, powers.pilot, c),
                    }
                })
                .collect();
            row.push(PairStats { xi, paths });
        }
        pairs.push(row);
    }
    Ok(LinkStats { pairs, xi_clamped })
}

/// An MMSE estimate and its error, `h = estimate + error`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateDraw {
    pub estimate: Complex64,
    pub error: Complex64,
}

impl EstimateDraw {
    pub fn true_gain(&self) -> Complex64 {
        self.estimate + self.error
    }
}

/// Draws `h_hat ~ CN(0, gamma)` and an independent error `~ CN(0, beta - gamma)`.
pub fn sample_estimate<R: Rng>(beta: f64, gamma: f64, rng: &mut R) -> Result<EstimateDraw> {
    if !(gamma >= 0.0 && gamma <= beta) {
        return Err(Error::InvalidStatistics(format!(
            "estimate variance {gamma} outside [0, {beta}]"
        )));
    }
    Ok(EstimateDraw {
        estimate: complex_normal(rng, gamma),
        error: complex_normal(rng, beta - gamma),
    })
}
