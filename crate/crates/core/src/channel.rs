//! Delay-Doppler grid and sparse multipath channels.

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, SeedTree};

/// Speed of light used for Doppler computations, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Critically sampled OTFS lattice: `n` Doppler bins by `m` delay bins, with
/// symbol duration `T = 1 / delta_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtfsGrid {
    /// Doppler bins (OTFS symbols per frame).
    pub n: usize,
    /// Delay bins (sub-carriers).
    pub m: usize,
    /// Sub-carrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
}

impl OtfsGrid {
    pub fn new(n: usize, m: usize, delta_f: f64, carrier_hz: f64) -> Result<Self> {
        let g = Self { n, m, delta_f, carrier_hz };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("grid needs N >= 1 and M >= 1".into()));
        }
        if !(self.delta_f > 0.0 && self.carrier_hz > 0.0) {
            return Err(Error::InvalidConfig("sub-carrier spacing and carrier must be positive".into()));
        }
        Ok(())
    }

    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    /// Number of DD bins `MN`.
    pub fn bins(&self) -> usize {
        self.m * self.n
    }

    /// Vectorised bin index `r = k M + l`.
    pub fn bin(&self, doppler: usize, delay: usize) -> usize {
        doppler * self.m + delay
    }

    /// Largest Doppler tap for which `{-k..k}` still fits in the frame.
    pub fn max_doppler_tap(&self) -> usize {
        (self.n / 2).saturating_sub(1)
    }
}

/// Doppler tap `ceil(nu_max N T)` for a user moving at `speed_kmh`.
pub fn max_doppler_index(speed_kmh: f64, grid: &OtfsGrid) -> usize {
    let nu_max = grid.carrier_hz * (speed_kmh / 3.6) / SPEED_OF_LIGHT;
    let taps = nu_max * grid.n as f64 * grid.symbol_duration();
    // guard against 2.0000000001 style rounding lifting an exact multiple
    (taps - 1e-9).ceil().max(0.0) as usize
}

/// One propagation path in the delay-Doppler domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdPath {
    pub delay_tap: usize,
    pub doppler_tap: i64,
    /// Fractional Doppler in `(-0.5, 0.5)`.
    pub frac_doppler: f64,
    /// Gain variance (linear).
    pub variance: f64,
    pub gain: Complex64,
}

impl DdPath {
    pub fn new(delay_tap: usize, doppler_tap: i64, frac_doppler: f64) -> Self {
        Self {
            delay_tap,
            doppler_tap,
            frac_doppler,
            variance: 1.0,
            gain: Complex64::new(1.0, 0.0),
        }
    }

    /// Doppler shift in units of the Doppler resolution `1 / NT`.
    pub fn doppler(&self) -> f64 {
        self.doppler_tap as f64 + self.frac_doppler
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub ap: usize,
    pub user: usize,
    pub paths: Vec<DdPath>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_variance(&self) -> f64 {
        self.paths.iter().map(|p| p.variance).sum()
    }

    pub fn gains(&self) -> Vec<Complex64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    pub fn has_distinct_delays(&self) -> bool {
        let mut taps: Vec<usize> = self.paths.iter().map(|p| p.delay_tap).collect();
        taps.sort_unstable();
        taps.windows(2).all(|w| w[0] != w[1])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// How the pair-level coefficient is split across paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerProfile {
    /// `beta_i = beta / L`: the pair coefficient is the total channel power.
    #[default]
    Uniform,
    /// `beta_i = beta` for every path.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub num_paths: usize,
    pub l_max: usize,
    pub k_max: usize,
    pub fractional: bool,
    #[serde(default)]
    pub profile: PowerProfile,
    #[serde(default)]
    pub distinct_delays: bool,
}

impl ChannelParams {
    pub fn validate(&self, grid: &OtfsGrid) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::InvalidConfig("need at least one path".into()));
        }
        if self.l_max >= grid.m {
            return Err(Error::InvalidConfig(format!(
                "l_max = {} must be below M = {}",
                self.l_max, grid.m
            )));
        }
        if self.k_max > grid.max_doppler_tap() {
            return Err(Error::InvalidConfig(format!(
                "k_max = {} exceeds floor(N/2) - 1 = {}",
                self.k_max,
                grid.max_doppler_tap()
            )));
        }
        if self.distinct_delays && self.num_paths > self.l_max + 1 {
            return Err(Error::Infeasible(format!(
                "{} distinct delay taps requested but only {} available",
                self.num_paths,
                self.l_max + 1
            )));
        }
        Ok(())
    }

    fn path_variance(&self, pair_beta: f64) -> f64 {
        match self.profile {
            PowerProfile::Uniform => pair_beta / self.num_paths as f64,
            PowerProfile::Replicate => pair_beta,
        }
    }
}

/// Circularly-symmetric complex normal with variance `var`.
pub fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn open_half_interval<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.gen_range(-0.5..0.5);
        if v > -0.5 {
            return v;
        }
    }
}

/// Draws taps and gains for one AP-user pair.
pub fn sample_paths(
    pair_beta: f64,
    params: &ChannelParams,
    grid: &OtfsGrid,
    seed: u64,
) -> Result<PathSet> {
    params.validate(grid)?;
    if !(pair_beta > 0.0) {
        return Err(Error::InvalidStatistics(format!("pair coefficient {pair_beta} must be positive")));
    }
    let mut rng = SeedTree::new(seed).rng(Domain::Paths, 0);
    let delays: Vec<usize> = if params.distinct_delays {
        sample_indices(&mut rng, params.l_max + 1, params.num_paths).into_vec()
    } else {
        (0..params.num_paths).map(|_| rng.gen_range(0..=params.l_max)).collect()
    };
    let k = params.k_max as i64;
    let variance = params.path_variance(pair_beta);
    let paths = delays
        .into_iter()
        .map(|delay_tap| {
            let doppler_tap = rng.gen_range(-k..=k);
            let frac_doppler = if params.fractional { open_half_interval(&mut rng) } else { 0.0 };
            DdPath {
                delay_tap,
                doppler_tap,
                frac_doppler,
                variance,
                gain: Complex64::new(0.0, 0.0),
            }
        })
        .collect();
    resample_gains(&PathSet { ap: 0, user: 0, paths }, seed)
}

/// Redraws `h_i ~ CN(0, beta_i)` keeping the taps.
pub fn resample_gains(set: &PathSet, seed: u64) -> Result<PathSet> {
    if let Some(p) = set.paths.iter().find(|p| !(p.variance > 0.0)) {
        return Err(Error::InvalidStatistics(format!("path variance {} must be positive", p.variance)));
    }
    let mut rng = SeedTree::new(seed).rng(Domain::Gains, 0);
    let mut out = set.clone();
    for p in &mut out.paths {
        p.gain = complex_normal(&mut rng, p.variance);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_grid() -> OtfsGrid {
        OtfsGrid::new(20, 30, 15e3, 4e9).unwrap()
    }

    fn params() -> ChannelParams {
        ChannelParams {
            num_paths: 5,
            l_max: 2,
            k_max: 3,
            fractional: true,
            profile: PowerProfile::Uniform,
            distinct_delays: false,
        }
    }

    #[test]
    fn doppler_index_examples() {
        let g = full_grid();
        assert_eq!(max_doppler_index(500.0, &g), 3);
        assert_eq!(max_doppler_index(0.0, &g), 0);
        // 370.6 Hz against a 750 Hz Doppler resolution
        assert_eq!(max_doppler_index(100.0, &g), 1);
    }

    #[test]
    fn taps_respect_ranges() {
        let g = full_grid();
        for seed in 0..200 {
            let s = sample_paths(2.0, &params(), &g, seed).unwrap();
            assert_eq!(s.len(), 5);
            for p in &s.paths {
                assert!(p.delay_tap <= 2);
                assert!((-3..=3).contains(&p.doppler_tap));
                assert!(p.frac_doppler > -0.5 && p.frac_doppler < 0.5);
                assert!((p.variance - 0.4).abs() < 1e-15);
            }
            assert!((s.total_variance() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_single_path() {
        let g = OtfsGrid::new(2, 1, 15e3, 4e9).unwrap();
        let p = ChannelParams { num_paths: 1, l_max: 0, k_max: 0, fractional: false, ..params() };
        let s = sample_paths(1.0, &p, &g, 1).unwrap();
        assert_eq!((s.paths[0].delay_tap, s.paths[0].doppler_tap, s.paths[0].frac_doppler), (0, 0, 0.0));
    }

    #[test]
    fn distinct_delays_mode() {
        let g = full_grid();
        let p = ChannelParams { num_paths: 3, distinct_delays: true, ..params() };
        for seed in 0..100 {
            assert!(sample_paths(1.0, &p, &g, seed).unwrap().has_distinct_delays());
        }
        let too_many = ChannelParams { num_paths: 4, distinct_delays: true, ..params() };
        assert!(matches!(sample_paths(1.0, &too_many, &g, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn replicate_profile() {
        let p = ChannelParams { profile: PowerProfile::Replicate, ..params() };
        let s = sample_paths(2.0, &p, &full_grid(), 0).unwrap();
        assert!(s.paths.iter().all(|x| x.variance == 2.0));
    }

    #[test]
    fn total_gain_power_matches_pair_beta() {
        let g = full_grid();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|s| sample_paths(2.0, &params(), &g, s).unwrap().gains().iter().map(|h| h.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() < 0.03 * 2.0, "mean = {mean}");
    }

    #[test]
    fn gains_deterministic_and_uncorrelated() {
        let s = sample_paths(1.0, &params(), &full_grid(), 4).unwrap();
        assert_eq!(resample_gains(&s, 11).unwrap(), resample_gains(&s, 11).unwrap());
        let n = 10_000;
        let mut cross = Complex64::new(0.0, 0.0);
        let (mut re2, mut im2, mut reim) = (0.0, 0.0, 0.0);
        for seed in 0..n {
            let g = resample_gains(&s, seed).unwrap().gains();
            cross += g[0] * g[1].conj();
            re2 += g[0].re * g[0].re;
            im2 += g[0].im * g[0].im;
            reim += g[0].re * g[0].im;
        }
        let nf = n as f64;
        // each path has variance 0.2; std of h0 h1* is 0.2
        let se = 0.2 / nf.sqrt();
        assert!(cross.re.abs() / nf < 3.0 * se && cross.im.abs() / nf < 3.0 * se);
        assert!((re2 / nf - 0.1).abs() < 0.05 * 0.1);
        assert!((im2 / nf - 0.1).abs() < 0.05 * 0.1);
        assert!((reim / nf).abs() < 3.0 * 0.1 / nf.sqrt());
    }

    #[test]
    fn zero_variance_rejected() {
        let mut s = sample_paths(1.0, &params(), &full_grid(), 0).unwrap();
        s.paths[1].variance = 0.0;
        assert!(resample_gains(&s, 0).is_err());
        assert!(sample_paths(0.0, &params(), &full_grid(), 0).is_err());
    }

    #[test]
    fn bad_tap_limits_rejected() {
        let g = full_grid();
        assert!(ChannelParams { l_max: 30, ..params() }.validate(&g).is_err());
        assert!(ChannelParams { k_max: 10, ..params() }.validate(&g).is_err());
        assert!(ChannelParams { k_max: 9, ..params() }.validate(&g).is_ok());
    }
}
