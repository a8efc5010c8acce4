//! Evasive target controller: a three-mode threat-response state machine.
//!
//! * `Nominal`: cruise on a heading that is redrawn every 2–5 s.
//! * `Evasive`: some interceptor is within [`EVASIVE_RANGE`]; run for the
//!   widest angular gap between interceptors, with a slow vertical weave.
//! * `Emergency`: some interceptor is within [`EMERGENCY_RANGE`]; burn at full
//!   acceleration directly away from the threat point (see [`EmergencyEscape`])
//!   for [`EMERGENCY_BURST`] seconds.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{AgentState, MotionLimits, Vec3};

pub const EVASIVE_RANGE: f64 = 150.0;
pub const EMERGENCY_RANGE: f64 = 60.0;
pub const EMERGENCY_BURST: f64 = 1.5;
pub const HEADING_INTERVAL: (f64, f64) = (2.0, 5.0);
pub const NOMINAL_ACCEL_FRACTION: f64 = 0.5;
pub const WEAVE_AMPLITUDE: f64 = 2.0;
pub const WEAVE_PERIOD: f64 = 8.0;

/// Interceptors closer than this (horizontally) give no usable bearing.
const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvasionMode {
    Nominal,
    Evasive,
    Emergency,
}

/// Point the target flees from during an Emergency burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmergencyEscape {
    /// The closest interceptor.
    #[default]
    Nearest,
    /// The centroid of all interceptor positions.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMode {
    pub mode: EvasionMode,
    pub mode_entry_time: f64,
    pub next_heading_change_time: f64,
    pub current_heading: f64,
    pub burst_deadline: f64,
}

impl TargetMode {
    /// Nominal cruise on `heading`, first heading change `first_interval` seconds after `t`.
    pub fn nominal(t: f64, heading: f64, first_interval: f64) -> Self {
        Self {
            mode: EvasionMode::Nominal,
            mode_entry_time: t,
            next_heading_change_time: t + first_interval,
            current_heading: heading,
            burst_deadline: t,
        }
    }
}

fn nearest_distance(pos: Vec3, interceptors: &[Vec3]) -> Option<f64> {
    interceptors.iter().map(|p| p.distance(pos)).min_by(f64::total_cmp)
}

/// Closest interceptor; the lowest index wins ties.
fn nearest(pos: Vec3, interceptors: &[Vec3]) -> Option<Vec3> {
    interceptors.iter().copied().min_by(|a, b| a.distance(pos).total_cmp(&b.distance(pos)))
}

/// Re-evaluates the threat mode from the nearest interceptor distance.
pub fn update_mode(tm: &TargetMode, target: &AgentState, interceptors: &[Vec3], t: f64) -> TargetMode {
    let mut next = *tm;
    let Some(d_min) = nearest_distance(target.pos, interceptors) else {
        if tm.mode != EvasionMode::Nominal {
            enter_nominal(&mut next, target, t);
        }
        return next;
    };

    if tm.mode == EvasionMode::Emergency && t < tm.burst_deadline {
        return next;
    }

    let wanted = if d_min < EMERGENCY_RANGE {
        EvasionMode::Emergency
    } else if d_min < EVASIVE_RANGE {
        EvasionMode::Evasive
    } else {
        EvasionMode::Nominal
    };

    match wanted {
        // An expired burst with a threat still inside range starts a fresh burst.
        EvasionMode::Emergency => {
            if tm.mode != EvasionMode::Emergency {
                next.mode_entry_time = t;
            }
            next.mode = EvasionMode::Emergency;
            next.burst_deadline = t + EMERGENCY_BURST;
        }
        EvasionMode::Evasive if tm.mode != EvasionMode::Evasive => {
            next.mode = EvasionMode::Evasive;
            next.mode_entry_time = t;
        }
        EvasionMode::Nominal if tm.mode != EvasionMode::Nominal => enter_nominal(&mut next, target, t),
        _ => {}
    }
    next
}

fn enter_nominal(tm: &mut TargetMode, target: &AgentState, t: f64) {
    tm.mode = EvasionMode::Nominal;
    tm.mode_entry_time = t;
    if target.vel.horizontal().norm() > 1e-6 {
        tm.current_heading = target.vel.bearing();
    }
    // Hold the current course for the shortest legal interval before redrawing.
    tm.next_heading_change_time = t + HEADING_INTERVAL.0;
}

/// Midpoint bearing of the widest angular gap between interceptors as seen
/// from the target, in `[0, 2π)`. Ties go to the gap with the smallest start
/// bearing. Returns `fallback` when no interceptor gives a bearing.
pub fn largest_gap_bearing(target_pos: Vec3, interceptors: &[Vec3], fallback: f64) -> f64 {
    let mut bearings: Vec<f64> = interceptors
        .iter()
        .filter(|p| p.horizontal_distance(target_pos) >= COINCIDENT_EPS)
        .map(|p| (*p - target_pos).bearing().rem_euclid(TAU))
        .collect();
    if bearings.is_empty() {
        return fallback;
    }
    bearings.sort_by(f64::total_cmp);

    let n = bearings.len();
    let mut best_start = bearings[0];
    let mut best_width = f64::NEG_INFINITY;
    for i in 0..n {
        let start = bearings[i];
        let end = if i + 1 < n { bearings[i + 1] } else { bearings[0] + TAU };
        let width = end - start;
        // Strict comparison keeps the earliest (smallest start) gap on ties,
        // with a tolerance so rounding does not break symmetric layouts.
        if width > best_width + 1e-12 {
            best_width = width;
            best_start = start;
        }
    }
    (best_start + best_width / 2.0).rem_euclid(TAU)
}

/// Evasion acceleration command for the current mode. Updates the nominal
/// heading schedule in `tm` when a heading change falls due.
pub fn evasion_accel<R: Rng + ?Sized>(
    tm: &mut TargetMode,
    target: &AgentState,
    interceptors: &[Vec3],
    t: f64,
    rng: &mut R,
    limits: &MotionLimits,
    escape: EmergencyEscape,
) -> Vec3 {
    match tm.mode {
        EvasionMode::Nominal => {
            if t >= tm.next_heading_change_time {
                tm.current_heading = rng.random_range(0.0..TAU);
                tm.next_heading_change_time = t + rng.random_range(HEADING_INTERVAL.0..=HEADING_INTERVAL.1);
            }
            Vec3::from_bearing(tm.current_heading) * (NOMINAL_ACCEL_FRACTION * limits.a_max)
        }
        EvasionMode::Evasive => {
            let bearing = largest_gap_bearing(target.pos, interceptors, tm.current_heading);
            tm.current_heading = bearing;
            let vertical = WEAVE_AMPLITUDE.min(limits.a_max) * (TAU * t / WEAVE_PERIOD).sin();
            let horizontal = (limits.a_max * limits.a_max - vertical * vertical).max(0.0).sqrt();
            Vec3::from_bearing(bearing) * horizontal + Vec3::new(0.0, 0.0, vertical)
        }
        EvasionMode::Emergency => {
            let threat = match escape {
                EmergencyEscape::Nearest => nearest(target.pos, interceptors),
                EmergencyEscape::Centroid => Vec3::centroid(interceptors.iter()),
            };
            let away = threat
                .and_then(|c| (target.pos - c).try_unit(1e-6))
                .or_else(|| nearest(target.pos, interceptors).and_then(|p| (target.pos - p).try_unit(1e-6)))
                .or_else(|| target.vel.try_unit(1e-6))
                .unwrap_or_else(|| Vec3::from_bearing(tm.current_heading));
            away * limits.a_max
        }
    }
}

/// Reflects the commanded acceleration inward when the target is within
/// `margin` of an arena face and the command points outward.
pub fn reflect_at_bounds(pos: Vec3, accel: Vec3, extents: Vec3, margin: f64) -> Vec3 {
    let reflect = |p: f64, a: f64, hi: f64| {
        if (p < margin && a < 0.0) || (p > hi - margin && a > 0.0) {
            -a
        } else {
            a
        }
    };
    Vec3::new(
        reflect(pos.x, accel.x, extents.x),
        reflect(pos.y, accel.y, extents.y),
        reflect(pos.z, accel.z, extents.z),
    )
}
