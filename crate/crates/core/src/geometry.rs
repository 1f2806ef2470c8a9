//! Network layout on a wrapped square and large-scale fading.
//!
//! APs and users are dropped uniformly on a `D x D` square whose edges wrap
//! around, so every node sees the same statistical neighbourhood. The
//! large-scale coefficient of each AP-user pair combines a three-slope path
//! loss with log-normal shadowing, which may be independent per pair or
//! built from spatially correlated AP and user components.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowingMode {
    Uncorrelated,
    Correlated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub num_users: usize,
    /// Side of the square area in km.
    pub area_side_km: f64,
    /// End of the flat region of the path-loss model, in m.
    pub d0_m: f64,
    /// Start of the 35 dB/decade region, in m.
    pub d1_m: f64,
    /// Path-loss constant `L` in dB.
    pub path_loss_db: f64,
    /// Shadowing standard deviation in dB.
    pub shadow_std_db: f64,
    pub shadowing: ShadowingMode,
    /// Decorrelation distance of the correlated shadowing fields, in m.
    pub decorrelation_m: f64,
    /// Weight of the AP component in correlated shadowing, in `[0, 1]`.
    pub ap_user_mix: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_aps: 40,
            num_users: 20,
            area_side_km: 1.0,
            d0_m: 10.0,
            d1_m: 50.0,
            path_loss_db: 140.7,
            shadow_std_db: 8.0,
            shadowing: ShadowingMode::Uncorrelated,
            decorrelation_m: 100.0,
            ap_user_mix: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn side_m(&self) -> f64 {
        self.area_side_km * 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_aps == 0 || self.num_users == 0 {
            return bad("need at least one AP and one user");
        }
        if !(self.area_side_km > 0.0) {
            return bad("area side must be positive");
        }
        if !(self.d0_m > 0.0 && self.d0_m < self.d1_m && self.d1_m < self.side_m()) {
            return bad("require 0 < d0 < d1 < area side");
        }
        if !(self.shadow_std_db >= 0.0) {
            return bad("shadowing std must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.ap_user_mix) {
            return bad("AP/user mixing weight must lie in [0, 1]");
        }
        if !(self.decorrelation_m >= 0.0) {
            return bad("decorrelation distance must be non-negative");
        }
        Ok(())
    }
}

/// Position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub side_m: f64,
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// Linear large-scale coefficient, indexed `[ap][user]`.
    pub beta_pair: Vec<Vec<f64>>,
}

impl Layout {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn distance(&self, ap: usize, user: usize) -> f64 {
        wrapped_distance(self.ap_positions[ap], self.user_positions[user], self.side_m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn uniform_points<R: Rng>(rng: &mut R, count: usize, side: f64) -> Vec<Point> {
    (0..count)
        .map(|_| Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side)))
        .collect()
}

/// Drops APs and users uniformly on the square. `beta_pair` is left zeroed.
pub fn place_network(config: &NetworkConfig, seed: u64) -> Result<Layout> {
    config.validate()?;
    let side = config.side_m();
    let mut rng = SeedTree::new(seed).rng(Domain::Placement, 0);
    let ap_positions = uniform_points(&mut rng, config.num_aps, side);
    let user_positions = uniform_points(&mut rng, config.num_users, side);
    Ok(Layout {
        side_m: side,
        ap_positions,
        user_positions,
        beta_pair: vec![vec![0.0; config.num_users]; config.num_aps],
    })
}

/// Distance on the torus obtained by wrapping the square's edges.
pub fn wrapped_distance(a: Point, b: Point, side: f64) -> f64 {
    let axis = |u: f64, v: f64| {
        let d = (u - v).abs();
        d.min(side - d)
    };
    axis(a.x, b.x).hypot(axis(a.y, b.y))
}

/// Three-slope path loss in dB (a negative number) at distance `d` metres.
/// Distances inside the logarithms are in km.
pub fn path_loss_db(d: f64, config: &NetworkConfig) -> f64 {
    let d_km = d / 1000.0;
    let d0_km = config.d0_m / 1000.0;
    let d1_km = config.d1_m / 1000.0;
    let l = config.path_loss_db;
    if d > config.d1_m {
        -l - 35.0 * d_km.log10()
    } else if d > config.d0_m {
        -l - 15.0 * d1_km.log10() - 20.0 * d_km.log10()
    } else {
        -l - 15.0 * d1_km.log10() - 20.0 * d0_km.log10()
    }
}

/// Lower-triangular `L` with `L L^T = C` for a symmetric PSD `C`.
/// Zero pivots (coincident points) produce zero columns.
fn psd_cholesky(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut d = c[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        let pivot = if d > 1e-12 { d.sqrt() } else { 0.0 };
        l[j][j] = pivot;
        for i in (j + 1)..n {
            let mut s = c[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = if pivot > 0.0 { s / pivot } else { 0.0 };
        }
    }
    l
}

/// Standard-normal field over `points` with correlation `exp(-d / d_decorr)`.
fn correlated_field<R: Rng>(rng: &mut R, points: &[Point], side: f64, d_decorr: f64) -> Vec<f64> {
    let n = points.len();
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if d_decorr <= 0.0 {
        return white;
    }
    let corr: Vec<Vec<f64>> = points
        .iter()
        .map(|&a| {
            points
                .iter()
                .map(|&b| (-wrapped_distance(a, b, side) / d_decorr).exp())
                .collect()
        })
        .collect();
    let l = psd_cholesky(&corr);
    (0..n)
        .map(|i| (0..=i).map(|k| l[i][k] * white[k]).sum())
        .collect()
}

/// Draws the shadowing terms `z[ap][user]` (zero where `d <= d1`).
pub fn shadowing_terms(layout: &Layout, config: &NetworkConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedTree::new(seed).rng(Domain::Shadowing, 0);
    let (m, k) = (layout.num_aps(), layout.num_users());
    let mut z = match config.shadowing {
        ShadowingMode::Uncorrelated => (0..m)
            .map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect())
            .collect::<Vec<Vec<f64>>>(),
        ShadowingMode::Correlated => {
            let a = correlated_field(&mut rng, &layout.ap_positions, layout.side_m, config.decorrelation_m);
            let b = correlated_field(&mut rng, &layout.user_positions, layout.side_m, config.decorrelation_m);
            let (wa, wb) = (config.ap_user_mix.sqrt(), (1.0 - config.ap_user_mix).sqrt());
            (0..m)
                .map(|p| (0..k).map(|q| wa * a[p] + wb * b[q]).collect())
                .collect()
        }
    };
    for (p, row) in z.iter_mut().enumerate() {
        for (q, zq) in row.iter_mut().enumerate() {
            if layout.distance(p, q) <= config.d1_m {
                *zq = 0.0;
            }
        }
    }
    z
}

/// Fills `beta_pair` with path loss and shadowing.
pub fn apply_shadowing(layout: &Layout, config: &NetworkConfig, seed: u64) -> Layout {
    let z = shadowing_terms(layout, config, seed);
    let mut out = layout.clone();
    for (p, row) in out.beta_pair.iter_mut().enumerate() {
        for (q, b) in row.iter_mut().enumerate() {
            let pl = path_loss_db(layout.distance(p, q), config);
            *b = 10f64.powf((pl + config.shadow_std_db * z[p][q]) / 10.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        NetworkConfig::default()
    }

    #[test]
    fn placement_in_square_and_reproducible() {
        let c = cfg();
        let a = place_network(&c, 7).unwrap();
        assert_eq!(a.ap_positions.len(), 40);
        assert_eq!(a.user_positions.len(), 20);
        for p in a.ap_positions.iter().chain(&a.user_positions) {
            assert!((0.0..1000.0).contains(&p.x) && (0.0..1000.0).contains(&p.y));
        }
        let one = NetworkConfig { num_aps: 1, num_users: 1, ..cfg() };
        assert_eq!(place_network(&one, 3).unwrap(), place_network(&one, 3).unwrap());
        assert_ne!(place_network(&one, 3).unwrap(), place_network(&one, 4).unwrap());
    }

    #[test]
    fn mean_position_is_centre() {
        let one = NetworkConfig { num_aps: 1, num_users: 1, ..cfg() };
        let n = 10_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for s in 0..n {
            let l = place_network(&one, s).unwrap();
            sx += l.ap_positions[0].x;
            sy += l.ap_positions[0].y;
        }
        // std of U(0, 1000) is 1000/sqrt(12)
        let se = 1000.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((sx / n as f64 - 500.0).abs() < 3.0 * se);
        assert!((sy / n as f64 - 500.0).abs() < 3.0 * se);
    }

    #[test]
    fn wrapped_distance_cases() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(wrapped_distance(o, o, 1000.0), 0.0);
        assert!((wrapped_distance(o, Point::new(999.0, 0.0), 1000.0) - 1.0).abs() < 1e-12);
        assert!((wrapped_distance(o, Point::new(500.0, 500.0), 1000.0) - 1000.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn path_loss_regions() {
        let c = cfg();
        assert_eq!(path_loss_db(5.0, &c), path_loss_db(10.0, &c));
        assert!((path_loss_db(1000.0, &c) + 140.7).abs() < 1e-12);
        let lo = path_loss_db(50.0 - 1e-9, &c);
        let hi = path_loss_db(50.0 + 1e-9, &c);
        assert!((lo - hi).abs() < 0.01);
        let below = path_loss_db(10.0 + 1e-9, &c);
        assert!((below - path_loss_db(10.0, &c)).abs() < 0.01);
    }

    #[test]
    fn zero_shadowing_is_pure_path_loss() {
        let c = NetworkConfig { shadow_std_db: 0.0, num_aps: 5, num_users: 4, ..cfg() };
        let l = apply_shadowing(&place_network(&c, 1).unwrap(), &c, 2);
        for p in 0..5 {
            for q in 0..4 {
                let pl = 10f64.powf(path_loss_db(l.distance(p, q), &c) / 10.0);
                assert!((l.beta_pair[p][q] - pl).abs() <= 1e-15 * pl);
            }
        }
    }

    #[test]
    fn colocated_users_share_shadowing() {
        let c = NetworkConfig {
            num_aps: 1,
            num_users: 2,
            shadowing: ShadowingMode::Correlated,
            ..cfg()
        };
        let mut layout = Layout {
            side_m: 1000.0,
            ap_positions: vec![Point::new(100.0, 100.0)],
            user_positions: vec![Point::new(600.0, 700.0), Point::new(600.0, 700.0)],
            beta_pair: vec![vec![0.0; 2]],
        };
        let n = 10_000;
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for s in 0..n {
            let z = shadowing_terms(&layout, &c, s);
            s00 += z[0][0] * z[0][0];
            s11 += z[0][1] * z[0][1];
            s01 += z[0][0] * z[0][1];
        }
        let corr = s01 / (s00 * s11).sqrt();
        assert!(corr >= 1.0 - 1e-6, "corr = {corr}");
        layout.user_positions[1] = Point::new(100.0, 900.0);
        let z = shadowing_terms(&layout, &c, 0);
        assert_ne!(z[0][0], z[0][1]);
    }

    #[test]
    fn shadowing_suppressed_near_ap() {
        let c = cfg();
        let layout = Layout {
            side_m: 1000.0,
            ap_positions: vec![Point::new(0.0, 0.0)],
            user_positions: vec![Point::new(30.0, 0.0)],
            beta_pair: vec![vec![0.0]],
        };
        let z = shadowing_terms(&layout, &c, 9);
        assert_eq!(z[0][0], 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NetworkConfig { num_aps: 0, ..cfg() }.validate().is_err());
        assert!(NetworkConfig { d0_m: 60.0, ..cfg() }.validate().is_err());
        assert!(NetworkConfig { ap_user_mix: 1.5, ..cfg() }.validate().is_err());
    }

    #[test]
    fn layout_json_roundtrip() {
        let c = NetworkConfig { num_aps: 3, num_users: 2, ..cfg() };
        let l = apply_shadowing(&place_network(&c, 5).unwrap(), &c, 6);
        assert_eq!(Layout::from_json(&l.to_json().unwrap()).unwrap(), l);
    }
}
