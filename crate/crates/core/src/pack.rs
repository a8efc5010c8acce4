//! Shepherd Grid pack coordination.
//!
//! A pack is four interceptors that share one phase machine:
//!
//! ```text
//! Chase ──(τ_chase elapsed, avg dist ≤ d_follow)──▶ Follow
//! Follow ──(avg dist ≤ d_form held t_form_hold)──▶ Form
//! Form ──(≥3 of 4 members within ε_ready of slots)──▶ Engage
//! Engage ──(formation not ready for > regression window)──▶ Form
//! ```
//!
//! In `Form` every member flies the ring-orbit law toward its formation slot.
//! In `Engage` the member nearest the target becomes the striker and the
//! other three keep holding the ring.
//!
//! All functions here are pure: the engine owns every piece of state.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::{AgentState, MotionLimits, Vec3};

pub const PACK_SIZE: usize = 4;

/// Slack for hold timers measured as differences of tick times.
const TIME_EPS: f64 = 1e-9;

/// Below this horizontal speed the target heading is carried over from the last tick.
pub const HEADING_SPEED_FLOOR: f64 = 0.5;

const DEGENERATE_AIM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackPhase {
    Chase,
    Follow,
    Form,
    Engage,
}

impl PackPhase {
    pub const ALL: [PackPhase; 4] = [PackPhase::Chase, PackPhase::Follow, PackPhase::Form, PackPhase::Engage];

    pub fn name(self) -> &'static str {
        match self {
            PackPhase::Chase => "chase",
            PackPhase::Follow => "follow",
            PackPhase::Form => "form",
            PackPhase::Engage => "engage",
        }
    }

    /// Whether `self → to` is an edge of the phase machine.
    pub fn can_transition_to(self, to: PackPhase) -> bool {
        matches!(
            (self, to),
            (PackPhase::Chase, PackPhase::Follow)
                | (PackPhase::Follow, PackPhase::Form)
                | (PackPhase::Form, PackPhase::Engage)
                | (PackPhase::Engage, PackPhase::Form)
        )
    }
}

impl std::str::FromStr for PackPhase {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PackPhase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::InvalidParameter(format!("unknown phase `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    pub tau_chase: f64,
    pub eps_ready: f64,
    pub r_formation: f64,
    pub v_orbit: f64,
    pub k_strike: f64,
    pub tau_horizon: f64,
    pub r_intercept: f64,
    pub d_predictive: f64,
    pub v_margin: f64,
    pub d_follow: f64,
    pub d_form: f64,
    pub t_form_hold: f64,
    pub k_radial: f64,
    pub k_vel: f64,
    pub standoff: f64,
    /// Gain pulling a shepherd back onto its slot.
    pub k_slot: f64,
    /// Seconds of broken formation before `Engage` falls back to `Form`.
    pub regression_window: f64,
    /// Give the striker `a_max · k_strike` of real authority instead of
    /// saturating it at the platform limit.
    pub striker_accel_authority: bool,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            tau_chase: 5.0,
            eps_ready: 15.0,
            r_formation: 40.0,
            v_orbit: 30.0,
            k_strike: 4.5,
            tau_horizon: 3.0,
            r_intercept: 25.0,
            d_predictive: 100.0,
            v_margin: 5.0,
            d_follow: 150.0,
            d_form: 80.0,
            t_form_hold: 2.0,
            k_radial: 1.0,
            k_vel: 2.0,
            standoff: 60.0,
            k_slot: 3.0,
            regression_window: 3.0,
            striker_accel_authority: false,
        }
    }
}

impl StrategyParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("tau_chase", self.tau_chase),
            ("eps_ready", self.eps_ready),
            ("r_formation", self.r_formation),
            ("v_orbit", self.v_orbit),
            ("k_strike", self.k_strike),
            ("tau_horizon", self.tau_horizon),
            ("r_intercept", self.r_intercept),
            ("d_predictive", self.d_predictive),
            ("v_margin", self.v_margin),
            ("d_follow", self.d_follow),
            ("d_form", self.d_form),
            ("t_form_hold", self.t_form_hold),
            ("k_radial", self.k_radial),
            ("k_vel", self.k_vel),
            ("standoff", self.standoff),
            ("k_slot", self.k_slot),
            ("regression_window", self.regression_window),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParameter(format!("strategy.{name} must be positive, got {v}")));
            }
        }
        if self.eps_ready >= self.r_formation {
            return Err(SimError::InvalidParameter(format!(
                "strategy.eps_ready ({}) must be below r_formation ({})",
                self.eps_ready, self.r_formation
            )));
        }
        Ok(())
    }

    /// Acceleration limit the striker actually flies with.
    pub fn striker_limits(&self, limits: &MotionLimits) -> MotionLimits {
        if self.striker_accel_authority {
            MotionLimits { a_max: limits.a_max * self.k_strike, ..*limits }
        } else {
            *limits
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackState {
    pub phase: PackPhase,
    pub phase_entry_time: f64,
    /// Global interceptor ids, indexed by member index.
    pub members: [usize; PACK_SIZE],
    /// Slot index held by each member; always a permutation of `0..4`.
    pub slot_of_member: [usize; PACK_SIZE],
    /// Member index of the striker. `Some` exactly while engaged.
    pub active_interceptor: Option<usize>,
    pub last_target_heading: f64,
    /// Start of the current run of ticks with average distance ≤ d_form.
    pub close_since: Option<f64>,
    /// Start of the current run of engaged ticks without readiness.
    pub unready_since: Option<f64>,
}

impl PackState {
    pub fn new(members: [usize; PACK_SIZE], t: f64) -> Self {
        Self {
            phase: PackPhase::Chase,
            phase_entry_time: t,
            members,
            slot_of_member: [0, 1, 2, 3],
            active_interceptor: None,
            last_target_heading: 0.0,
            close_since: None,
            unready_since: None,
        }
    }
}

/// Everything the phase machine looks at on one tick.
#[derive(Debug, Clone, Copy)]
pub struct PackObservation {
    pub t: f64,
    pub member_positions: [Vec3; PACK_SIZE],
    pub target_pos: Vec3,
    /// Slot positions indexed by slot index.
    pub slots: [Vec3; PACK_SIZE],
}

impl PackObservation {
    pub fn avg_dist(&self) -> f64 {
        self.member_positions.iter().map(|p| p.distance(self.target_pos)).sum::<f64>() / PACK_SIZE as f64
    }

    /// Slot positions reordered so index `i` is the slot assigned to member `i`.
    pub fn member_slots(&self, slot_of_member: &[usize; PACK_SIZE]) -> [Vec3; PACK_SIZE] {
        std::array::from_fn(|i| self.slots[slot_of_member[i]])
    }
}

/// Four ring slots around the target, rotating with its horizontal heading.
/// Returns the slots and the heading used (carried over for a hovering target).
pub fn formation_slots(target_pos: Vec3, target_vel: Vec3, last_heading: f64, r: f64) -> ([Vec3; PACK_SIZE], f64) {
    let heading = if target_vel.horizontal().norm() > HEADING_SPEED_FLOOR {
        target_vel.bearing()
    } else {
        last_heading
    };
    let slots = std::array::from_fn(|i| target_pos + Vec3::from_bearing(heading + slot_angle(i)) * r);
    (slots, heading)
}

/// Angular offset of slot `i` from the target heading.
pub fn slot_angle(i: usize) -> f64 {
    i as f64 * FRAC_PI_2
}

/// True when at least three of four members sit within `eps_ready` of their slots.
pub fn formation_ready(member_positions: &[Vec3; PACK_SIZE], member_slots: &[Vec3; PACK_SIZE], eps_ready: f64) -> bool {
    ready_count(member_positions, member_slots, eps_ready) >= 3
}

pub fn ready_count(member_positions: &[Vec3; PACK_SIZE], member_slots: &[Vec3; PACK_SIZE], eps_ready: f64) -> usize {
    member_positions
        .iter()
        .zip(member_slots)
        .filter(|(p, f)| p.distance(**f) <= eps_ready)
        .count()
}

/// Member nearest the target; ties go to the lowest member index.
pub fn select_active(member_positions: &[Vec3; PACK_SIZE], target_pos: Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in member_positions.iter().enumerate() {
        let d = p.distance(target_pos);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Slot permutation minimizing total member-to-slot distance (all 24 checked).
/// Ties keep the lexicographically first permutation.
pub fn assign_slots(member_positions: &[Vec3; PACK_SIZE], slots: &[Vec3; PACK_SIZE]) -> [usize; PACK_SIZE] {
    let mut best = [0, 1, 2, 3];
    let mut best_cost = f64::INFINITY;
    for perm in permutations4() {
        let cost: f64 = (0..PACK_SIZE).map(|i| member_positions[i].distance(slots[perm[i]])).sum();
        if cost < best_cost - 1e-12 {
            best_cost = cost;
            best = perm;
        }
    }
    best
}

fn permutations4() -> impl Iterator<Item = [usize; PACK_SIZE]> {
    (0..PACK_SIZE).flat_map(|a| {
        (0..PACK_SIZE).filter(move |&b| b != a).flat_map(move |b| {
            (0..PACK_SIZE)
                .filter(move |&c| c != a && c != b)
                .map(move |c| [a, b, c, 6 - a - b - c])
        })
    })
}

/// Advances the phase machine by one tick.
pub fn transition(ps: &PackState, obs: &PackObservation, params: &StrategyParams) -> PackState {
    let mut next = ps.clone();
    let t = obs.t;
    let avg_dist = obs.avg_dist();

    match ps.phase {
        PackPhase::Chase => {
            if t - ps.phase_entry_time >= params.tau_chase && avg_dist <= params.d_follow {
                enter(&mut next, PackPhase::Follow, t);
            }
        }
        PackPhase::Follow => {
            if avg_dist <= params.d_form {
                let since = *next.close_since.get_or_insert(t);
                if t - since >= params.t_form_hold - TIME_EPS {
                    enter(&mut next, PackPhase::Form, t);
                    next.slot_of_member = assign_slots(&obs.member_positions, &obs.slots);
                }
            } else {
                next.close_since = None;
            }
        }
        PackPhase::Form => {
            let ready = formation_ready(&obs.member_positions, &obs.member_slots(&ps.slot_of_member), params.eps_ready);
            if ready {
                enter(&mut next, PackPhase::Engage, t);
                next.active_interceptor = Some(select_active(&obs.member_positions, obs.target_pos));
            }
        }
        PackPhase::Engage => {
            let ready = formation_ready(&obs.member_positions, &obs.member_slots(&ps.slot_of_member), params.eps_ready);
            if ready {
                next.unready_since = None;
            } else {
                let since = *next.unready_since.get_or_insert(t);
                if t - since > params.regression_window {
                    enter(&mut next, PackPhase::Form, t);
                    return next;
                }
            }
            next.active_interceptor = Some(select_active(&obs.member_positions, obs.target_pos));
        }
    }
    next
}

fn enter(ps: &mut PackState, phase: PackPhase, t: f64) {
    ps.phase = phase;
    ps.phase_entry_time = t;
    ps.close_since = None;
    ps.unready_since = None;
    ps.active_interceptor = None;
}

fn pursuit_direction(pursuer: &AgentState, target: &AgentState, d_predictive: f64, tau_horizon: f64, v_max: f64) -> Option<Vec3> {
    let d = pursuer.pos.distance(target.pos);
    let aim = if d > d_predictive {
        let t_pred = tau_horizon.min(d / v_max);
        target.pos + target.vel * t_pred
    } else {
        target.pos
    };
    (aim - pursuer.pos).try_unit(DEGENERATE_AIM)
}

/// Striker command: predictive intercept beyond `d_predictive`, direct
/// pursuit inside it, with gain `a_max · k_strike`. The returned command is
/// raw; integration saturates it.
pub fn striker_accel(striker: &AgentState, target: &AgentState, params: &StrategyParams, limits: &MotionLimits) -> Vec3 {
    pursuit_direction(striker, target, params.d_predictive, params.tau_horizon, limits.v_max)
        .map_or(Vec3::ZERO, |u| u * (limits.a_max * params.k_strike))
}

/// Desired shepherd velocity: ride along with the target, orbit tangentially
/// around its slot direction, and correct toward the slot. Never slower than
/// `|v_target| + v_margin`.
pub fn shepherd_desired_velocity(member: &AgentState, slot: Vec3, slot_index: usize, heading: f64, target: &AgentState, params: &StrategyParams) -> Vec3 {
    let tangent = Vec3::from_bearing(heading + slot_angle(slot_index) + FRAC_PI_2);
    let v_des = target.vel + tangent * params.v_orbit + (slot - member.pos) * params.k_slot;
    let floor = target.vel.norm() + params.v_margin;
    let n = v_des.norm();
    if n < floor {
        match v_des.try_unit(1e-9) {
            Some(u) => u * floor,
            None => tangent * floor,
        }
    } else {
        v_des
    }
}

pub fn shepherd_accel(
    member: &AgentState,
    slot: Vec3,
    slot_index: usize,
    heading: f64,
    target: &AgentState,
    params: &StrategyParams,
) -> Vec3 {
    let v_des = shepherd_desired_velocity(member, slot, slot_index, heading, target, params);
    (v_des - member.vel) * params.k_vel
}

/// Predictive pursuit at the platform acceleration limit.
pub fn chase_accel(member: &AgentState, target: &AgentState, params: &StrategyParams, limits: &MotionLimits) -> Vec3 {
    pursuit_direction(member, target, params.d_predictive, params.tau_horizon, limits.v_max)
        .map_or(Vec3::ZERO, |u| u * limits.a_max)
}

/// Trail the target at `standoff` metres while matching its velocity.
pub fn follow_accel(member: &AgentState, target: &AgentState, params: &StrategyParams) -> Vec3 {
    let to_target = (target.pos - member.pos)
        .try_unit(1e-9)
        .or_else(|| member.vel.try_unit(1e-9))
        .unwrap_or(Vec3::X);
    let desired = target.pos - to_target * params.standoff;
    let v_des = target.vel + (desired - member.pos) * params.k_radial;
    (v_des - member.vel) * params.k_vel
}

/// Uncoordinated baseline: every interceptor flies the same predictive pursuit.
pub fn traditional_accel(member: &AgentState, target: &AgentState, params: &StrategyParams, limits: &MotionLimits) -> Vec3 {
    chase_accel(member, target, params, limits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Chaser,
    Follower,
    Shepherd,
    Striker,
    /// Lost contact with the pack; flying baseline pursuit on its own estimate.
    Autonomous,
    Traditional,
    /// No target left to pursue.
    Idle,
}

/// What one member believes about its pack and target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberView {
    pub phase: PackPhase,
    pub slot_index: usize,
    pub is_striker: bool,
    pub heading: f64,
    pub target: AgentState,
}

impl MemberView {
    pub fn role(&self) -> Role {
        match self.phase {
            PackPhase::Chase => Role::Chaser,
            PackPhase::Follow => Role::Follower,
            PackPhase::Engage if self.is_striker => Role::Striker,
            PackPhase::Form | PackPhase::Engage => Role::Shepherd,
        }
    }
}

/// Acceleration command for a member flying its coordinated role.
/// Returns the command and the heading used for slot geometry.
pub fn coordinated_accel(member: &AgentState, view: &MemberView, params: &StrategyParams, limits: &MotionLimits) -> (Vec3, f64) {
    match view.role() {
        Role::Chaser => (chase_accel(member, &view.target, params, limits), view.heading),
        Role::Follower => (follow_accel(member, &view.target, params), view.heading),
        Role::Striker => (striker_accel(member, &view.target, params, limits), view.heading),
        _ => {
            let (slots, heading) = formation_slots(view.target.pos, view.target.vel, view.heading, params.r_formation);
            let a = shepherd_accel(member, slots[view.slot_index], view.slot_index, heading, &view.target, params);
            (a, heading)
        }
    }
}
