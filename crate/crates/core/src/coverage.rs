//! Escape-probability bounds from interceptor coverage.
//!
//! The target can reach any point of a horizontal disk of radius
//! `v_target_max · Δt` around its position. The share of that disk lying
//! within `r_intercept` of some interceptor is estimated by Monte Carlo with a
//! fixed sample set, so repeated evaluations are deterministic.

use std::f64::consts::{PI, SQRT_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::Vec3;
use crate::pack::formation_slots;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageParams {
    pub r_intercept: f64,
    pub v_target_max: f64,
    pub horizon_dt: f64,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for CoverageParams {
    fn default() -> Self {
        Self { r_intercept: 25.0, v_target_max: 35.0, horizon_dt: 0.1, mc_samples: 10_000, mc_seed: 0 }
    }
}

impl CoverageParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("r_intercept", self.r_intercept), ("v_target_max", self.v_target_max), ("horizon_dt", self.horizon_dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParameter(format!("coverage.{name} must be positive, got {v}")));
            }
        }
        if self.mc_samples < 1000 {
            return Err(SimError::InvalidParameter(format!("coverage.mc_samples must be at least 1000, got {}", self.mc_samples)));
        }
        Ok(())
    }

    pub fn reach_radius(&self) -> f64 {
        self.v_target_max * self.horizon_dt
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(format!("{name} must be non-negative, got {v}")))
    }
}

fn check_probability(v: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SimError::InvalidParameter(format!("probability must lie in [0, 1], got {v}")))
    }
}

/// Area of the disk the target can reach in `horizon_dt`.
pub fn reachable_area(v_target_max: f64, horizon_dt: f64) -> Result<f64, SimError> {
    check_non_negative("v_target_max", v_target_max)?;
    check_non_negative("horizon_dt", horizon_dt)?;
    let r = v_target_max * horizon_dt;
    Ok(PI * r * r)
}

/// Fixed Monte Carlo sample set over the unit disk.
#[derive(Debug, Clone)]
pub struct CoverageSampler {
    params: CoverageParams,
    unit_samples: Vec<(f64, f64)>,
}

impl CoverageSampler {
    pub fn new(params: CoverageParams) -> Self {
        let mut rng = substream(params.mc_seed, "coverage");
        let unit_samples = (0..params.mc_samples.max(1))
            .map(|_| {
                let r = rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..TAU);
                (r * theta.cos(), r * theta.sin())
            })
            .collect();
        Self { params, unit_samples }
    }

    pub fn params(&self) -> &CoverageParams {
        &self.params
    }

    /// Fraction of the reachable disk around `target_pos` within
    /// `r_intercept` (horizontally) of at least one interceptor.
    pub fn covered_fraction(&self, interceptors: &[Vec3], target_pos: Vec3) -> f64 {
        let reach = self.params.reach_radius();
        let r2 = self.params.r_intercept * self.params.r_intercept;
        let offsets: Vec<(f64, f64)> = interceptors
            .iter()
            .map(|p| (p.x - target_pos.x, p.y - target_pos.y))
            .filter(|(dx, dy)| (dx * dx + dy * dy).sqrt() <= self.params.r_intercept + reach)
            .collect();
        if offsets.is_empty() {
            return 0.0;
        }
        let covered = self
            .unit_samples
            .iter()
            .filter(|(ux, uy)| {
                let (sx, sy) = (ux * reach, uy * reach);
                offsets.iter().any(|(dx, dy)| {
                    let (ex, ey) = (sx - dx, sy - dy);
                    ex * ex + ey * ey <= r2
                })
            })
            .count();
        covered as f64 / self.unit_samples.len() as f64
    }
}

/// One-shot form of [`CoverageSampler::covered_fraction`].
pub fn covered_fraction(interceptors: &[Vec3], target_pos: Vec3, params: &CoverageParams) -> f64 {
    CoverageSampler::new(*params).covered_fraction(interceptors, target_pos)
}

/// Upper bound on the per-tick escape probability given the covered fraction.
pub fn escape_probability(fraction: f64) -> Result<f64, SimError> {
    check_probability(fraction)?;
    Ok((1.0 - fraction).max(0.0))
}

/// Sufficient condition for the ring to contain the reachable disk:
/// `r_formation + r_intercept ≥ √2 · v_target_max · Δt`.
pub fn containment_condition(r_formation: f64, r_intercept: f64, v_target_max: f64, horizon_dt: f64) -> bool {
    r_formation + r_intercept >= SQRT_2 * v_target_max * horizon_dt
}

/// `1 - Π p_escape` over a series of per-tick bounds; 0 for an empty series.
pub fn cumulative_success(escape_probs: &[f64]) -> Result<f64, SimError> {
    if escape_probs.is_empty() {
        return Ok(0.0);
    }
    let mut product = 1.0;
    for &p in escape_probs {
        check_probability(p)?;
        product *= p;
    }
    Ok(1.0 - product)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRow {
    pub dt: f64,
    pub r_formation: f64,
    pub r_intercept: f64,
    pub condition_holds: bool,
    /// Escape bound with all four interceptors exactly on their ring slots.
    pub escape_prob_bound: f64,
}

/// Evaluates the containment condition and the on-slot escape bound for each horizon.
pub fn containment_sweep(r_formation: f64, params: &CoverageParams, horizons: &[f64]) -> Result<Vec<ContainmentRow>, SimError> {
    let (slots, _) = formation_slots(Vec3::ZERO, Vec3::X, 0.0, r_formation);
    horizons
        .iter()
        .map(|&dt| {
            let p = CoverageParams { horizon_dt: dt, ..*params };
            p.validate()?;
            let fraction = CoverageSampler::new(p).covered_fraction(&slots, Vec3::ZERO);
            Ok(ContainmentRow {
                dt,
                r_formation,
                r_intercept: p.r_intercept,
                condition_holds: containment_condition(r_formation, p.r_intercept, p.v_target_max, dt),
                escape_prob_bound: escape_probability(fraction)?,
            })
        })
        .collect()
}

/// Horizons 0.1, 0.2, …, 2.0 s.
pub fn default_horizons() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form area of intersection of two circles.
    fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
        if d >= r1 + r2 {
            return 0.0;
        }
        if d <= (r1 - r2).abs() {
            let r = r1.min(r2);
            return PI * r * r;
        }
        let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).acos();
        let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).acos();
        let k = 0.5 * ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)).sqrt();
        r1 * r1 * a1 + r2 * r2 * a2 - k
    }

    #[test]
    fn reachable_area_examples() {
        assert!((reachable_area(35.0, 1.0).unwrap() - 3848.451).abs() < 1e-3);
        assert!((reachable_area(35.0, 0.1).unwrap() - 38.485).abs() < 1e-3);
        assert_eq!(reachable_area(35.0, 0.0).unwrap(), 0.0);
        assert!(reachable_area(-1.0, 1.0).is_err());
    }

    #[test]
    fn fraction_examples() {
        let p = CoverageParams::default();
        let t = Vec3::new(100.0, 100.0, 50.0);
        assert_eq!(covered_fraction(&[t], t, &p), 1.0);
        assert_eq!(covered_fraction(&[], t, &p), 0.0);
        let far = t + Vec3::new(28.6, 0.0, 0.0);
        assert_eq!(covered_fraction(&[far], t, &p), 0.0);
    }

    #[test]
    fn disjoint_disks_cover_nothing_exhaustively() {
        // Bypass the distance shortcut: every sample really is outside.
        let p = CoverageParams::default();
        let s = CoverageSampler::new(p);
        let reach = p.reach_radius();
        let far = (28.6, 0.0);
        assert!(s.unit_samples.iter().all(|(x, y)| {
            let (ex, ey) = (x * reach - far.0, y * reach - far.1);
            ex * ex + ey * ey > p.r_intercept * p.r_intercept
        }));
    }

    #[test]
    fn fully_contained_is_exact_for_every_seed() {
        for seed in 0..20 {
            let p = CoverageParams { mc_seed: seed, ..Default::default() };
            let t = Vec3::new(5.0, -3.0, 0.0);
            assert_eq!(covered_fraction(&[t + Vec3::new(10.0, 0.0, 0.0)], t, &p), 1.0);
        }
    }

    #[test]
    fn matches_lens_area() {
        let p = CoverageParams { horizon_dt: 1.0, ..Default::default() };
        let s = CoverageSampler::new(p);
        for d in [20.0, 35.0, 45.0, 55.0] {
            let got = s.covered_fraction(&[Vec3::new(d, 0.0, 0.0)], Vec3::ZERO);
            let want = lens_area(35.0, 25.0, d) / (PI * 35.0 * 35.0);
            assert!((got - want).abs() < 0.01, "d={d}: {got} vs {want}");
        }
    }

    #[test]
    fn escape_examples() {
        assert_eq!(escape_probability(1.0).unwrap(), 0.0);
        assert_eq!(escape_probability(0.0).unwrap(), 1.0);
        assert_eq!(escape_probability(0.75).unwrap(), 0.25);
        assert!(escape_probability(1.5).is_err());
        assert!(escape_probability(-0.1).is_err());
    }

    #[test]
    fn containment_examples() {
        assert!(containment_condition(40.0, 25.0, 35.0, 0.1));
        let boundary = 65.0 / (SQRT_2 * 35.0);
        assert!((boundary - 1.313_20).abs() < 1e-5);
        assert!(containment_condition(40.0, 25.0, 35.0, boundary - 1e-9));
        assert!(!containment_condition(40.0, 25.0, 35.0, 1.4));
        assert!(containment_condition(40.0, 25.0, 35.0, 0.0));
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_success(&[0.9, 0.0, 0.8]).unwrap(), 1.0);
        assert_eq!(cumulative_success(&[0.5, 0.5]).unwrap(), 0.75);
        assert_eq!(cumulative_success(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cumulative_success(&[]).unwrap(), 0.0);
        assert!(cumulative_success(&[0.5, 2.0]).is_err());
    }

    #[test]
    fn sweep_rows() {
        let rows = containment_sweep(40.0, &CoverageParams::default(), &default_horizons()).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows[0].condition_holds);
        assert!(!rows.last().unwrap().condition_holds);
        // Slots are 40 m out with 25 m disks: for short horizons nothing of the reach disk is covered.
        assert_eq!(rows[0].escape_prob_bound, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn adding_an_interceptor_never_lowers_coverage(
                pts in prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 0..5),
                extra in (-60.0f64..60.0, -60.0f64..60.0),
            ) {
                let p = CoverageParams { horizon_dt: 1.0, mc_samples: 2000, ..Default::default() };
                let s = CoverageSampler::new(p);
                let mut v: Vec<Vec3> = pts.iter().map(|(x, y)| Vec3::new(*x, *y, 0.0)).collect();
                let before = s.covered_fraction(&v, Vec3::ZERO);
                v.push(Vec3::new(extra.0, extra.1, 0.0));
                prop_assert!(s.covered_fraction(&v, Vec3::ZERO) >= before);
            }

            #[test]
            fn cumulative_is_monotone(series in prop::collection::vec(0.0f64..=1.0, 1..40)) {
                let mut last = 0.0;
                for k in 1..=series.len() {
                    let c = cumulative_success(&series[..k]).unwrap();
                    prop_assert!(c >= last - 1e-15);
                    last = c;
                }
            }
        }
    }
}
