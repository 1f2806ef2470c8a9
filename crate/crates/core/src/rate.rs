//! Conjugate-beamforming power control and closed-form downlink rates.
//!
//! For user `q` and DD bin `r` the effective SINR is
//!
//! ```text
//! SINR_r = DS^2 / (E|BU|^2 + E|I1|^2 + E|I2|^2 + 1/rho_d)
//!
//! DS     = sum_p sqrt(eta_pq) sum_i gamma_pq,i
//! E|BU|^2 = sum_p eta_pq sum_i beta_pq,i (gamma_pq,i + sum_{j!=i} chi_ij(r) gamma_pq,j)
//! E|I1|^2 = sum_p eta_pq sum_i sum_{j!=i} isi_ij(r) beta_pq,i gamma_pq,j
//! E|I2|^2 = sum_p sum_{q'!=q} eta_pq' sum_i beta_pq,i sum_j gamma_pq',j
//! ```
//!
//! and the rate is the mean of `log2(1 + SINR_r)` over the `MN` bins.

use serde::{Deserialize, Serialize};

use crate::channel::{OtfsGrid, PathSet};
use crate::error::{Error, Result};
use crate::estimation::LinkStats;
use crate::otfs::{chi_kappa, pair_coupling_by_delay, PairCoefficients};

/// Power-control coefficients `eta[ap][user]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerControl {
    pub eta: Vec<Vec<f64>>,
}

impl PowerControl {
    /// `sum_q sum_i eta_pq gamma_pq,i` at `ap`; must not exceed one.
    pub fn load(&self, stats: &LinkStats, ap: usize) -> f64 {
        self.eta[ap]
            .iter()
            .zip(&stats.pairs[ap])
            .map(|(eta, pair)| eta * pair.gamma_sum())
            .sum()
    }
}

/// Every AP spends its full power, split evenly: `eta_pq = 1 / sum_q' sum_i gamma_pq',i`.
pub fn equal_power_control(stats: &LinkStats) -> Result<PowerControl> {
    let eta = stats
        .pairs
        .iter()
        .enumerate()
        .map(|(ap, row)| {
            let total: f64 = row.iter().map(|p| p.gamma_sum()).sum();
            if !(total > 0.0) {
                return Err(Error::DegeneratePowerControl { ap });
            }
            Ok(vec![1.0 / total; row.len()])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerControl { eta })
}

/// Which off-diagonal row statistic of `T_i T_j^H` weights the
/// inter-symbol interference term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsiCoefficient {
    /// `|sum_{r'!=r} [T_i T_j^H]_(r,r')|^2`.
    #[default]
    RowSum,
    /// `sum_{r'!=r} |[T_i T_j^H]_(r,r')|^2`, the interference power seen by
    /// a receiver with independent symbols on every bin.
    RowEnergy,
}

impl IsiCoefficient {
    fn pick(self, c: &PairCoefficients) -> f64 {
        match self {
            IsiCoefficient::RowSum => c.kappa,
            IsiCoefficient::RowEnergy => c.off_energy,
        }
    }
}

/// Everything the closed form needs for one network realisation.
#[derive(Debug, Clone, Copy)]
pub struct RateInputs<'a> {
    pub stats: &'a LinkStats,
    pub power: &'a PowerControl,
    /// Path sets indexed `[ap][user]`.
    pub paths: &'a [Vec<PathSet>],
    pub rho_d: f64,
    pub grid: &'a OtfsGrid,
    pub isi: IsiCoefficient,
}

/// The four closed-form SINR ingredients at one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrTerms {
    /// Desired-signal amplitude `DS`.
    pub desired: f64,
    /// `E|BU|^2`, beamforming gain uncertainty.
    pub gain_uncertainty: f64,
    /// `E|I1|^2`, inter-symbol interference.
    pub inter_symbol: f64,
    /// `E|I2|^2`, inter-user interference.
    pub inter_user: f64,
    /// `1 / rho_d`.
    pub noise: f64,
}

impl SinrTerms {
    pub fn sinr(&self) -> f64 {
        let den = self.gain_uncertainty + self.inter_symbol + self.inter_user + self.noise;
        if self.desired == 0.0 {
            return 0.0;
        }
        self.desired * self.desired / den
    }
}

/// Per-AP parts of the SINR that do not depend on the bin.
struct ApParts {
    desired: f64,
    inter_user: f64,
    /// `eta_pq sum_i beta_i gamma_i`.
    own_diag: f64,
}

fn ap_parts(q: usize, inp: &RateInputs<'_>) -> Vec<ApParts> {
    (0..inp.stats.num_aps())
        .map(|p| {
            let eta = &inp.power.eta[p];
            let own = inp.stats.pair(p, q);
            let beta_sum = own.beta_sum();
            let others: f64 = (0..inp.stats.num_users())
                .filter(|&u| u != q)
                .map(|u| eta[u] * inp.stats.pair(p, u).gamma_sum())
                .sum();
            ApParts {
                desired: eta[q].sqrt() * own.gamma_sum(),
                inter_user: beta_sum * others,
                own_diag: eta[q] * own.paths.iter().map(|s| s.beta * s.gamma).sum::<f64>(),
            }
        })
        .collect()
}

/// Adds `eta sum_{i != j} c_ij beta_i gamma_j` for BU and ISI given a
/// coupling lookup.
fn cross_terms<F>(q: usize, inp: &RateInputs<'_>, mut coupling: F) -> (f64, f64)
where
    F: FnMut(usize, usize, usize) -> PairCoefficients,
{
    let (mut bu, mut isi) = (0.0, 0.0);
    for p in 0..inp.stats.num_aps() {
        let eta = inp.power.eta[p][q];
        let st = &inp.stats.pair(p, q).paths;
        for i in 0..st.len() {
            for j in 0..st.len() {
                if i == j {
                    continue;
                }
                let c = coupling(p, i, j);
                let w = eta * st[i].beta * st[j].gamma;
                bu += c.chi * w;
                isi += inp.isi.pick(&c) * w;
            }
        }
    }
    (bu, isi)
}

fn assemble(parts: &[ApParts], bu_cross: f64, isi: f64, rho_d: f64) -> SinrTerms {
    SinrTerms {
        desired: parts.iter().map(|a| a.desired).sum(),
        gain_uncertainty: parts.iter().map(|a| a.own_diag).sum::<f64>() + bu_cross,
        inter_symbol: isi,
        inter_user: parts.iter().map(|a| a.inter_user).sum(),
        noise: 1.0 / rho_d,
    }
}

/// Closed-form terms for user `q` at bin `r`, coupling coefficients taken
/// from row `r` of each `T_i T_j^H`.
pub fn sinr_terms(q: usize, r: usize, inp: &RateInputs<'_>) -> SinrTerms {
    let parts = ap_parts(q, inp);
    let (bu, isi) = cross_terms(q, inp, |p, i, j| {
        let s = &inp.paths[p][q].paths;
        chi_kappa(&s[i], &s[j], r, inp.grid)
    });
    assemble(&parts, bu, isi, inp.rho_d)
}

pub fn sinr_bin(q: usize, r: usize, inp: &RateInputs<'_>) -> f64 {
    sinr_terms(q, r, inp).sinr()
}

/// Closed-form terms for every delay index `l = 0..M`; bin `r` uses entry
/// `r mod M`.
pub fn sinr_terms_by_delay(q: usize, inp: &RateInputs<'_>) -> Vec<SinrTerms> {
    let m = inp.grid.m;
    let parts = ap_parts(q, inp);
    let mut bu = vec![0.0; m];
    let mut isi = vec![0.0; m];
    for p in 0..inp.stats.num_aps() {
        let eta = inp.power.eta[p][q];
        let st = &inp.stats.pair(p, q).paths;
        let paths = &inp.paths[p][q].paths;
        for i in 0..st.len() {
            for j in 0..st.len() {
                if i == j {
                    continue;
                }
                let w = eta * st[i].beta * st[j].gamma;
                for (l, c) in pair_coupling_by_delay(&paths[i], &paths[j], inp.grid).iter().enumerate() {
                    bu[l] += c.chi * w;
                    isi[l] += inp.isi.pick(c) * w;
                }
            }
        }
    }
    (0..m).map(|l| assemble(&parts, bu[l], isi[l], inp.rho_d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub user: usize,
    /// Per-bin SINR; a single entry when the SINR is bin-independent.
    pub sinr: Vec<f64>,
    /// Spectral efficiency in bit/s/Hz.
    pub rate: f64,
    /// `M delta_f rate` in bit/s.
    pub throughput_bps: f64,
}

impl RateReport {
    fn from_sinr(user: usize, sinr: Vec<f64>, grid: &OtfsGrid) -> Self {
        let rate = sinr.iter().map(|s| (1.0 + s).log2()).sum::<f64>() / sinr.len() as f64;
        Self {
            user,
            sinr,
            rate,
            throughput_bps: rate * grid.bandwidth_hz(),
        }
    }
}

/// Rate of user `q` averaged over all `MN` bins.
pub fn achievable_rate(q: usize, inp: &RateInputs<'_>) -> RateReport {
    let by_delay: Vec<f64> = sinr_terms_by_delay(q, inp).iter().map(SinrTerms::sinr).collect();
    let sinr = (0..inp.grid.bins()).map(|r| by_delay[r % inp.grid.m]).collect();
    RateReport::from_sinr(q, sinr, inp.grid)
}

/// Bin-independent rate for links whose paths all have distinct delays.
pub fn rate_distinct_delays(q: usize, inp: &RateInputs<'_>) -> Result<RateReport> {
    for (p, row) in inp.paths.iter().enumerate() {
        if !row[q].has_distinct_delays() {
            return Err(Error::Precondition(format!(
                "repeated delay taps on the link between AP {p} and user {q}"
            )));
        }
    }
    let mut desired = 0.0;
    let mut den = 0.0;
    for p in 0..inp.stats.num_aps() {
        let eta = &inp.power.eta[p];
        let own = inp.stats.pair(p, q);
        desired += eta[q].sqrt() * own.gamma_sum();
        let load: f64 = (0..inp.stats.num_users())
            .map(|u| eta[u] * inp.stats.pair(p, u).gamma_sum())
            .sum();
        den += own.beta_sum() * load;
    }
    let sinr = inp.rho_d * desired * desired / (inp.rho_d * den + 1.0);
    Ok(RateReport::from_sinr(q, vec![sinr], inp.grid))
}

/// Throughput in bit/s: bandwidth times spectral efficiency.
pub fn throughput(report: &RateReport, grid: &OtfsGrid) -> f64 {
    grid.bandwidth_hz() * report.rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DdPath;
    use crate::estimation::{PairStats, PathStats};

    fn grid(m: usize, n: usize) -> OtfsGrid {
        OtfsGrid::new(n, m, 15e3, 4e9).unwrap()
    }

    fn stats_from(betas: &[Vec<Vec<(f64, f64)>>]) -> LinkStats {
        LinkStats {
            pairs: betas
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|paths| PairStats {
                            xi: 0.0,
                            paths: paths.iter().map(|&(beta, gamma)| PathStats { beta, c: 0.0, gamma }).collect(),
                        })
                        .collect()
                })
                .collect(),
            xi_clamped: 0,
        }
    }

    #[test]
    fn equal_power_examples() {
        let one = stats_from(&[vec![vec![(1.0, 0.3), (1.0, 0.2)]]]);
        let pc = equal_power_control(&one).unwrap();
        assert!((pc.eta[0][0] - 2.0).abs() < 1e-15);
        assert!((pc.load(&one, 0) - 1.0).abs() < 1e-15);
        let two = stats_from(&[vec![vec![(1.0, 0.5)], vec![(2.0, 0.5)]]]);
        let pc2 = equal_power_control(&two).unwrap();
        assert!((pc2.eta[0][0] - 1.0).abs() < 1e-15 && pc2.eta[0][0] == pc2.eta[0][1]);
        let zero = stats_from(&[vec![vec![(1.0, 0.0)]], vec![vec![(1.0, 0.1)]]]);
        assert!(matches!(equal_power_control(&zero), Err(Error::DegeneratePowerControl { ap: 0 })));
    }

    fn single_link(beta: f64, gamma: f64, rho_d: f64) -> (LinkStats, Vec<Vec<PathSet>>, f64) {
        let stats = stats_from(&[vec![vec![(beta, gamma)]]]);
        let paths = vec![vec![PathSet { ap: 0, user: 0, paths: vec![DdPath::new(1, 0, 0.2)] }]];
        (stats, paths, rho_d)
    }

    #[test]
    fn single_path_single_ap_reduction() {
        let g = grid(4, 2);
        let (stats, paths, rho_d) = single_link(2.0, 0.5, 3.0);
        let pc = PowerControl { eta: vec![vec![1.7]] };
        let inp = RateInputs { stats: &stats, power: &pc, paths: &paths, rho_d, grid: &g, isi: IsiCoefficient::RowSum };
        let expect = rho_d * 1.7 * 0.25 / (rho_d * 1.7 * 2.0 * 0.5 + 1.0);
        for r in 0..8 {
            assert!((sinr_bin(0, r, &inp) - expect).abs() < 1e-14);
        }
        let rep = achievable_rate(0, &inp);
        assert!((rep.rate - (1.0 + expect).log2()).abs() < 1e-14);
        let dd = rate_distinct_delays(0, &inp).unwrap();
        assert!((dd.sinr[0] - expect).abs() < 1e-14);
        let silent = RateInputs { rho_d: 1e-300, ..inp };
        assert!(sinr_bin(0, 0, &silent) < 1e-299);
    }

    #[test]
    fn rate_of_unit_sinr_is_one_bit() {
        let g = grid(30, 20);
        let r = RateReport::from_sinr(0, vec![1.0; 600], &g);
        assert!((r.rate - 1.0).abs() < 1e-15);
        assert!((throughput(&r, &g) - 0.45e6).abs() < 1e-6);
        let g2 = OtfsGrid { delta_f: 30e3, ..g };
        assert!((throughput(&r, &g2) - 0.9e6).abs() < 1e-6);
        assert_eq!(throughput(&RateReport::from_sinr(0, vec![0.0], &g), &g), 0.0);
    }

    #[test]
    fn repeated_delays_rejected_by_fast_path() {
        let g = grid(4, 2);
        let stats = stats_from(&[vec![vec![(1.0, 0.5), (1.0, 0.5)]]]);
        let paths = vec![vec![PathSet { ap: 0, user: 0, paths: vec![DdPath::new(1, 0, 0.2), DdPath::new(1, 0, -0.1)] }]];
        let pc = equal_power_control(&stats).unwrap();
        let inp = RateInputs { stats: &stats, power: &pc, paths: &paths, rho_d: 10.0, grid: &g, isi: IsiCoefficient::RowSum };
        assert!(matches!(rate_distinct_delays(0, &inp), Err(Error::Precondition(_))));
    }

    #[test]
    fn single_user_has_no_inter_user_term() {
        let g = grid(4, 2);
        let stats = stats_from(&[vec![vec![(1.0, 0.5), (0.4, 0.1)]], vec![vec![(0.2, 0.1), (0.3, 0.2)]]]);
        let paths = vec![
            vec![PathSet { ap: 0, user: 0, paths: vec![DdPath::new(0, 0, 0.2), DdPath::new(2, 0, -0.1)] }],
            vec![PathSet { ap: 1, user: 0, paths: vec![DdPath::new(1, 0, 0.4), DdPath::new(3, 0, 0.0)] }],
        ];
        let pc = equal_power_control(&stats).unwrap();
        let inp = RateInputs { stats: &stats, power: &pc, paths: &paths, rho_d: 10.0, grid: &g, isi: IsiCoefficient::RowSum };
        assert_eq!(sinr_terms(0, 3, &inp).inter_user, 0.0);
    }

    #[test]
    fn delay_replication_matches_per_bin_rows() {
        let g = grid(4, 4);
        let mk = |ap, user, taps: &[(usize, i64, f64)]| PathSet {
            ap,
            user,
            paths: taps.iter().map(|&(l, k, f)| DdPath::new(l, k, f)).collect(),
        };
        let paths = vec![
            vec![mk(0, 0, &[(1, 0, 0.3), (1, 1, -0.2), (2, 0, 0.1)]), mk(0, 1, &[(0, 0, 0.0), (0, -1, 0.4)])],
            vec![mk(1, 0, &[(3, 1, 0.25), (3, 1, -0.45)]), mk(1, 1, &[(2, 0, 0.1), (1, 0, 0.2)])],
        ];
        let stats = stats_from(&[
            vec![vec![(0.5, 0.3), (0.2, 0.1), (0.3, 0.05)], vec![(1.0, 0.6), (0.4, 0.2)]],
            vec![vec![(0.7, 0.4), (0.1, 0.02)], vec![(0.3, 0.2), (0.6, 0.5)]],
        ]);
        let pc = equal_power_control(&stats).unwrap();
        for isi in [IsiCoefficient::RowSum, IsiCoefficient::RowEnergy] {
            let inp = RateInputs { stats: &stats, power: &pc, paths: &paths, rho_d: 5.0, grid: &g, isi };
            for q in 0..2 {
                let fast = sinr_terms_by_delay(q, &inp);
                let rep = achievable_rate(q, &inp);
                for r in 0..g.bins() {
                    let slow = sinr_terms(q, r, &inp);
                    let f = fast[r % g.m];
                    for (a, b) in [
                        (slow.gain_uncertainty, f.gain_uncertainty),
                        (slow.inter_symbol, f.inter_symbol),
                        (slow.sinr(), rep.sinr[r]),
                    ] {
                        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
                    }
                }
            }
        }
    }
}
