//! Delay-Doppler operators.
//!
//! A path with delay tap `l` and Doppler `nu = k + kappa` acts on the
//! vectorised DD frame (bin `r = k M + l`) through
//!
//! ```text
//! T = (F_N ⊗ I_M) Π^l Δ^nu (F_N^H ⊗ I_M)
//! ```
//!
//! where `Π` is the forward cyclic shift of length `MN` and
//! `Δ = diag(z^0, .., z^(MN-1))`, `z = exp(j 2π / MN)`, raised element-wise
//! to the real power `nu`.
//!
//! Two independent routes are provided. The dense route materialises the
//! `MN x MN` matrices and is used for identity checks and the Monte Carlo
//! oracle. The sparse route exploits that `Π^a Δ^b Π^c` is a monomial
//! matrix: row `r` of `T_i T_j^H` has only `N` non-zeros, all in the delay
//! column `(l_r - l_i + l_j) mod M`, so one row costs `O(N^2)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{DdPath, OtfsGrid, PathSet};
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

fn cis(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

/// Unitary DFT matrix, `F[k][l] = exp(-j 2π k l / n) / sqrt(n)`.
pub fn dft_matrix(n: usize) -> CMatrix {
    let s = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |k, l| cis(-2.0 * PI * ((k * l) % n) as f64 / n as f64) * s)
}

/// `F_N ⊗ I_M`.
pub fn dft_kron_identity(grid: &OtfsGrid) -> CMatrix {
    dft_matrix(grid.n).kronecker(&CMatrix::identity(grid.m, grid.m))
}

/// Forward cyclic shift raised to `power`: `[Π^l]_(i, j) = 1` iff `i = (j + l) mod MN`.
pub fn cyclic_shift(size: usize, power: usize) -> CMatrix {
    let mut p = CMatrix::zeros(size, size);
    for j in 0..size {
        p[((j + power) % size, j)] = Complex64::new(1.0, 0.0);
    }
    p
}

/// `Δ^nu` with a real exponent.
pub fn doppler_diagonal(size: usize, nu: f64) -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_fn(size, |n, _| {
        cis(2.0 * PI * nu * n as f64 / size as f64)
    }))
}

/// Dense DD operator of a single path.
#[derive(Debug, Clone, PartialEq)]
pub struct DdOperator(CMatrix);

impl DdOperator {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// `max |T T^H - I|` over entries.
    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.0.nrows();
        let prod = &self.0 * self.0.adjoint();
        max_abs(&(prod - CMatrix::identity(n, n)))
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Builds `T` for `path` as an explicit matrix product.
pub fn dd_operator(path: &DdPath, grid: &OtfsGrid) -> DdOperator {
    let mn = grid.bins();
    let g = dft_kron_identity(grid);
    let inner = cyclic_shift(mn, path.delay_tap % mn) * doppler_diagonal(mn, path.doppler());
    DdOperator(&g * inner * g.adjoint())
}

/// Effective DD channel `H = sum_i h_i T_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel(CMatrix);

impl EffectiveChannel {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.0 * v).iter().copied().collect()
    }
}

/// Dense operators for every path of a link, built once and reused across
/// gain realisations.
#[derive(Debug, Clone)]
pub struct LinkOperators {
    ops: Vec<CMatrix>,
}

impl LinkOperators {
    pub fn new(set: &PathSet, grid: &OtfsGrid) -> Self {
        Self {
            ops: set.paths.iter().map(|p| dd_operator(p, grid).into_matrix()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn operator(&self, i: usize) -> &CMatrix {
        &self.ops[i]
    }

    /// `sum_i gains[i] T_i`.
    pub fn combine(&self, gains: &[Complex64]) -> CMatrix {
        assert_eq!(gains.len(), self.ops.len(), "one gain per path");
        let n = self.ops.first().map_or(0, |t| t.nrows());
        let mut h = CMatrix::zeros(n, n);
        for (t, &g) in self.ops.iter().zip(gains) {
            h.zip_apply(t, |acc, v| *acc += g * v);
        }
        h
    }
}

pub fn effective_channel(set: &PathSet, grid: &OtfsGrid) -> EffectiveChannel {
    EffectiveChannel(LinkOperators::new(set, grid).combine(&set.gains()))
}

/// Row `r` of `T_i T_j^H`. All non-zeros sit at bins `n' M + delay`,
/// `n' = 0..N`, stored in `values[n']`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub row: usize,
    pub delay: usize,
    pub values: Vec<Complex64>,
}

impl SparseRow {
    pub fn diagonal(&self, grid: &OtfsGrid) -> Complex64 {
        let m_r = self.row % grid.m;
        if self.delay != m_r {
            return Complex64::new(0.0, 0.0);
        }
        self.values[self.row / grid.m]
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Row `r` of `T_i T_j^H` from the monomial structure, without forming any
/// `MN x MN` matrix.
pub fn operator_pair_row(path_i: &DdPath, path_j: &DdPath, r: usize, grid: &OtfsGrid) -> SparseRow {
    let (m, n) = (grid.m, grid.n);
    let mn = grid.bins();
    let (n_r, m_r) = (r / m, r % m);
    let (li, lj) = (path_i.delay_tap % mn, path_j.delay_tap % mn);
    let delta = path_i.doppler() - path_j.doppler();
    let inv_n = 1.0 / n as f64;
    let delay = (m_r + m * n - li % m + lj % m) % m;
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    // T_i T_j^H = G P G^H with P(a, c(a)) = z^(delta u), u = a - l_i, c = u + l_j.
    for n_a in 0..n {
        let a = n_a * m + m_r;
        let u = (a + mn - li) % mn;
        let c = (u + lj) % mn;
        let n_c = c / m;
        debug_assert_eq!(c % m, delay);
        let weight = cis(-2.0 * PI * ((n_r * n_a) % n) as f64 * inv_n)
            * cis(2.0 * PI * delta * u as f64 / mn as f64)
            * inv_n;
        for (n_out, v) in values.iter_mut().enumerate() {
            // conj(F(n_out, n_c)) * sqrt(N) absorbed into inv_n above
            *v += weight * cis(2.0 * PI * ((n_out * n_c) % n) as f64 * inv_n);
        }
    }
    SparseRow { row: r, delay, values }
}

/// Per-bin coupling coefficients of a path pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCoefficients {
    /// `|[T_i T_j^H]_(r,r)|^2`.
    pub chi: f64,
    /// `|sum_{r' != r} [T_i T_j^H]_(r,r')|^2`, the coherent off-diagonal row sum.
    pub kappa: f64,
    /// `sum_{r' != r} |[T_i T_j^H]_(r,r')|^2`, the off-diagonal row energy.
    pub off_energy: f64,
}

impl PairCoefficients {
    pub const SAME_PATH: PairCoefficients = PairCoefficients {
        chi: 1.0,
        kappa: 0.0,
        off_energy: 0.0,
    };
}

/// Coupling coefficients of paths `i`, `j` at bin `r`.
pub fn chi_kappa(path_i: &DdPath, path_j: &DdPath, r: usize, grid: &OtfsGrid) -> PairCoefficients {
    let row = operator_pair_row(path_i, path_j, r, grid);
    let diag = row.diagonal(grid);
    PairCoefficients {
        chi: diag.norm_sqr(),
        kappa: (row.sum() - diag).norm_sqr(),
        off_energy: (row.energy() - diag.norm_sqr()).max(0.0),
    }
}

/// Coefficients for the bins `r = l` (Doppler row 0), `l = 0..M`.
///
/// Every coefficient depends on `r` only through its delay index `r mod M`:
/// for equal delay taps the row is circulant along Doppler, and for
/// different delay taps the diagonal vanishes while the row sum keeps unit
/// modulus. Callers may therefore evaluate `M` bins and replicate.
pub fn chi_kappa_by_delay(path_i: &DdPath, path_j: &DdPath, grid: &OtfsGrid) -> Vec<PairCoefficients> {
    (0..grid.m).map(|l| chi_kappa(path_i, path_j, l, grid)).collect()
}

/// Same values as [`chi_kappa_by_delay`] in `O(MN)` per pair.
///
/// Different delay taps give `chi = 0` with a unit-modulus row sum and unit
/// row energy. Equal taps leave `T_i T_j^H` circulant along Doppler, so the
/// diagonal is the mean of the Doppler phase ramp over one delay column and
/// the row sum is its first sample.
pub fn pair_coupling_by_delay(path_i: &DdPath, path_j: &DdPath, grid: &OtfsGrid) -> Vec<PairCoefficients> {
    let (m, n) = (grid.m, grid.n);
    if path_i.delay_tap % m != path_j.delay_tap % m {
        return vec![
            PairCoefficients {
                chi: 0.0,
                kappa: 1.0,
                off_energy: 1.0,
            };
            m
        ];
    }
    let mn = grid.bins();
    let l = path_i.delay_tap % m;
    let theta = 2.0 * PI * (path_i.doppler() - path_j.doppler()) / mn as f64;
    // sum_{n < N} e^{j theta n M}
    let step = cis(theta * m as f64);
    let series = if (step - 1.0).norm() < 1e-12 {
        Complex64::new(n as f64, 0.0)
    } else {
        (cis(theta * mn as f64) - 1.0) / (step - 1.0)
    };
    (0..m)
        .map(|m_r| {
            let base = cis(theta * (m_r as f64 - l as f64));
            // bins left of the delay tap wrap once around the frame
            let (first, diag) = if m_r >= l {
                (base, base * series / n as f64)
            } else {
                let wrapped = base * cis(theta * mn as f64);
                (wrapped, (base * series + wrapped - base) / n as f64)
            };
            let chi = diag.norm_sqr();
            PairCoefficients {
                chi,
                kappa: (first - diag).norm_sqr(),
                off_energy: (1.0 - chi).max(0.0),
            }
        })
        .collect()
}

/// Fractional-Doppler spreading coefficient `alpha[k, l, c]` for a path
/// `(k', l', kappa')` with the rectangular pulse.
pub fn alpha_coeff(k: usize, l: usize, c: i64, path: (i64, usize, f64), grid: &OtfsGrid) -> Complex64 {
    let (kp, lp, kappa) = path;
    let (m, n) = (grid.m as f64, grid.n as f64);
    let x = -(c as f64) - kappa;
    let num = cis(-2.0 * PI * x) - 1.0;
    let den = cis(-2.0 * PI * x / n) - 1.0;
    let beta_c = if den.norm() < 1e-12 {
        // 0/0: geometric sum of N unit terms
        Complex64::new(n, 0.0)
    } else {
        num / den
    };
    let phase = cis(-2.0 * PI * (l as f64 - lp as f64) * (kp as f64 + kappa) / (m * n));
    if l >= lp {
        beta_c * phase / n
    } else {
        let shift = (k as i64 - kp + c).rem_euclid(grid.n as i64) as f64;
        (beta_c - 1.0) * phase * cis(-2.0 * PI * shift / n) / n
    }
}

/// Largest frame checked with dense products.
pub const DENSE_IDENTITY_BINS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `max |T_i T_i^H - I|` over paths.
    pub unitarity: f64,
    /// `max |diag(T_i T_j^H)|` over pairs with different delay taps mod M.
    pub diagonal_zero: f64,
    /// `max | |row sum of T_i T_j^H|^2 - 1 |` over all pairs and rows.
    pub row_sum: f64,
    pub paths: usize,
    pub pairs_with_distinct_delay: usize,
}

/// Dense check of the three operator identities. Fails with the first
/// identity whose deviation exceeds `tol`.
/// Frames above [`DENSE_IDENTITY_BINS`] bins are checked from sparse rows.
pub fn verify_operator_identities(set: &PathSet, grid: &OtfsGrid, tol: f64) -> Result<IdentityReport> {
    let report = if grid.bins() > DENSE_IDENTITY_BINS {
        measure_operator_identities_sparse(set, grid)
    } else {
        measure_operator_identities(set, grid)
    };
    for (lemma, deviation) in [
        ("unitarity identity", report.unitarity),
        ("diagonal-zero identity", report.diagonal_zero),
        ("unit row-sum identity", report.row_sum),
    ] {
        if !(deviation <= tol) {
            return Err(Error::IdentityViolation {
                lemma,
                deviation,
                tolerance: tol,
            });
        }
    }
    Ok(report)
}

/// Same measurements as [`measure_operator_identities`] from sparse rows of
/// each `T_i T_j^H`; usable on frames too large for dense products.
pub fn measure_operator_identities_sparse(set: &PathSet, grid: &OtfsGrid) -> IdentityReport {
    let mut unitarity: f64 = 0.0;
    let mut diagonal_zero: f64 = 0.0;
    let mut row_sum: f64 = 0.0;
    let mut distinct = 0;
    for (i, pi) in set.paths.iter().enumerate() {
        for (j, pj) in set.paths.iter().enumerate() {
            let differ = pi.delay_tap % grid.m != pj.delay_tap % grid.m;
            distinct += differ as usize;
            for r in 0..grid.bins() {
                let row = operator_pair_row(pi, pj, r, grid);
                let diag = row.diagonal(grid);
                if i == j {
                    let off = (row.energy() - diag.norm_sqr()).max(0.0).sqrt();
                    unitarity = unitarity.max((diag - 1.0).norm()).max(off);
                }
                if differ {
                    diagonal_zero = diagonal_zero.max(diag.norm());
                }
                row_sum = row_sum.max((row.sum().norm_sqr() - 1.0).abs());
            }
        }
    }
    IdentityReport {
        unitarity,
        diagonal_zero,
        row_sum,
        paths: set.paths.len(),
        pairs_with_distinct_delay: distinct,
    }
}

pub fn measure_operator_identities(set: &PathSet, grid: &OtfsGrid) -> IdentityReport {
    let ops = LinkOperators::new(set, grid);
    let mn = grid.bins();
    let eye = CMatrix::identity(mn, mn);
    let adj: Vec<CMatrix> = ops.ops.iter().map(|t| t.adjoint()).collect();
    let mut unitarity: f64 = 0.0;
    let mut diagonal_zero: f64 = 0.0;
    let mut row_sum: f64 = 0.0;
    let mut distinct = 0;
    for (i, ti) in ops.ops.iter().enumerate() {
        for (j, tj_h) in adj.iter().enumerate() {
            let prod = ti * tj_h;
            if i == j {
                unitarity = unitarity.max(max_abs(&(&prod - &eye)));
            }
            let (li, lj) = (set.paths[i].delay_tap, set.paths[j].delay_tap);
            if li % grid.m != lj % grid.m {
                distinct += 1;
                let d = prod.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max);
                diagonal_zero = diagonal_zero.max(d);
            }
            for row in prod.row_iter() {
                let s: Complex64 = row.iter().sum();
                row_sum = row_sum.max((s.norm_sqr() - 1.0).abs());
            }
        }
    }
    IdentityReport {
        unitarity,
        diagonal_zero,
        row_sum,
        paths: set.len(),
        pairs_with_distinct_delay: distinct,
    }
}
