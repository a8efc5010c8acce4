//! Vehicle state and fixed-step integration.
//!
//! Every agent is a point mass driven by an acceleration command. The command
//! is saturated to the airframe's acceleration limit first, the resulting
//! velocity is saturated to the speed limit, and position advances with the
//! new velocity (semi-implicit Euler).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Integration step used by every trial, in seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Unit vector in the horizontal plane at `bearing` radians from +x.
    pub fn from_bearing(bearing: f64) -> Self {
        Self::new(bearing.cos(), bearing.sin(), 0.0)
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn horizontal(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    pub fn horizontal_distance(self, other: Vec3) -> f64 {
        (self - other).horizontal().norm()
    }

    /// `atan2(y, x)` of the horizontal projection.
    pub fn bearing(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector, or `None` when the norm is below `eps`.
    pub fn try_unit(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        (n >= eps).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation about the vertical axis through the origin.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn centroid<'a, I: IntoIterator<Item = &'a Vec3>>(points: I) -> Option<Vec3> {
        let mut sum = Vec3::ZERO;
        let mut n = 0usize;
        for p in points {
            sum += *p;
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, k: f64) -> Vec3 {
        Vec3::new(self.x / k, self.y / k, self.z / k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// Speed limit, m/s.
    pub v_max: f64,
    /// Acceleration limit, m/s².
    pub a_max: f64,
}

impl MotionLimits {
    pub const INTERCEPTOR: MotionLimits = MotionLimits { v_max: 50.0, a_max: 15.0 };
    pub const TARGET: MotionLimits = MotionLimits { v_max: 35.0, a_max: 10.0 };

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(SimError::InvalidParameter(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(SimError::InvalidParameter(format!("a_max must be positive, got {}", self.a_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub last_accel: Vec3,
}

impl AgentState {
    pub fn at(pos: Vec3, vel: Vec3) -> Self {
        Self { pos, vel, last_accel: Vec3::ZERO }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite() && self.last_accel.is_finite()
    }
}

/// Returns `v` unchanged when `|v| <= max`, otherwise `v` rescaled to length `max`.
pub fn clamp_magnitude(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n <= max || n == 0.0 {
        return v;
    }
    let mut scaled = v * (max / n);
    // Rounding can leave the result a few ulp above `max`.
    while scaled.norm() > max {
        scaled = scaled * (1.0 - f64::EPSILON);
    }
    scaled
}

/// Advances one agent by `dt` seconds under `accel_cmd`.
pub fn step(state: &AgentState, accel_cmd: Vec3, dt: f64, limits: &MotionLimits) -> Result<AgentState, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() || !accel_cmd.is_finite() {
        return Err(SimError::InvalidState(format!(
            "non-finite input: state={state:?} accel={accel_cmd:?}"
        )));
    }
    let accel = clamp_magnitude(accel_cmd, limits.a_max);
    let vel = clamp_magnitude(state.vel + accel * dt, limits.v_max);
    let mut pos = state.pos + vel * dt;
    let mut vel = vel;
    if pos.z < 0.0 {
        pos.z = 0.0;
        if vel.z < 0.0 {
            vel.z = 0.0;
        }
    }
    Ok(AgentState { pos, vel, last_accel: accel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_magnitude(Vec3::new(3.0, 4.0, 0.0), 10.0), Vec3::new(3.0, 4.0, 0.0));
        assert!(close(clamp_magnitude(Vec3::new(30.0, 40.0, 0.0), 10.0), Vec3::new(6.0, 8.0, 0.0), 1e-12));
        assert_eq!(clamp_magnitude(Vec3::ZERO, 5.0), Vec3::ZERO);
    }

    #[test]
    fn inertial_motion() {
        let s = AgentState::at(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0));
        let n = step(&s, Vec3::ZERO, 0.1, &MotionLimits::INTERCEPTOR).unwrap();
        assert!(close(n.pos, Vec3::new(1.0, 0.0, 0.0), 1e-12));
        assert_eq!(n.vel, Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn accel_saturates() {
        let s = AgentState::default();
        let n = step(&s, Vec3::new(30.0, 0.0, 0.0), 0.1, &MotionLimits::INTERCEPTOR).unwrap();
        assert!(close(n.vel, Vec3::new(1.5, 0.0, 0.0), 1e-12));
        assert!(close(n.last_accel, Vec3::new(15.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn speed_saturates_after_accel() {
        let s = AgentState::at(Vec3::new(0.0, 0.0, 100.0), Vec3::new(49.5, 0.0, 0.0));
        let n = step(&s, Vec3::new(15.0, 0.0, 0.0), 0.1, &MotionLimits::INTERCEPTOR).unwrap();
        assert!(close(n.vel, Vec3::new(50.0, 0.0, 0.0), 1e-9));
        assert!((n.pos.x - 5.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite() {
        let s = AgentState::at(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::ZERO);
        assert!(matches!(
            step(&s, Vec3::ZERO, 0.1, &MotionLimits::TARGET),
            Err(SimError::InvalidState(_))
        ));
        let s = AgentState::default();
        assert!(step(&s, Vec3::new(f64::INFINITY, 0.0, 0.0), 0.1, &MotionLimits::TARGET).is_err());
        assert!(step(&s, Vec3::ZERO, 0.0, &MotionLimits::TARGET).is_err());
    }

    #[test]
    fn altitude_floor() {
        let s = AgentState::at(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.0, -10.0));
        let n = step(&s, Vec3::ZERO, 0.1, &MotionLimits::TARGET).unwrap();
        assert_eq!(n.pos.z, 0.0);
        assert_eq!(n.vel.z, 0.0);
    }

    #[test]
    fn rest_is_fixed_point() {
        let s = AgentState::at(Vec3::new(3.0, -2.0, 50.0), Vec3::ZERO);
        let n = step(&s, Vec3::ZERO, 0.1, &MotionLimits::INTERCEPTOR).unwrap();
        assert_eq!(n.pos, s.pos);
    }

    fn arb_vec(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn limits_hold_over_command_sequences(
            v0 in arb_vec(80.0),
            cmds in prop::collection::vec(arb_vec(200.0), 1..60),
        ) {
            let limits = MotionLimits::INTERCEPTOR;
            let mut s = AgentState::at(Vec3::new(0.0, 0.0, 200.0), clamp_magnitude(v0, limits.v_max));
            for c in cmds {
                let n = step(&s, c, 0.1, &limits).unwrap();
                prop_assert!(n.vel.norm() <= limits.v_max);
                prop_assert!(n.last_accel.norm() <= limits.a_max);
                let again = step(&s, c, 0.1, &limits).unwrap();
                prop_assert_eq!(n, again);
                s = n;
            }
        }

        #[test]
        fn clamp_preserves_direction(v in arb_vec(1000.0), max in 0.1f64..100.0) {
            let c = clamp_magnitude(v, max);
            prop_assert!(c.norm() <= max.max(v.norm()));
            prop_assert!(c.norm() <= max || c == v);
            if v.norm() > 1e-9 {
                let cross = Vec3::new(v.y * c.z - v.z * c.y, v.z * c.x - v.x * c.z, v.x * c.y - v.y * c.x);
                prop_assert!(cross.norm() <= 1e-9 * v.norm() * v.norm().max(1.0));
                prop_assert!(v.dot(c) >= 0.0);
            }
        }
    }
}
