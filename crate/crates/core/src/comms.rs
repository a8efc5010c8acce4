//! Lossy intra-pack messaging.
//!
//! Once per tick each pack leader (member 0, the sensor owner) broadcasts the
//! true target state and the pack's coordination state. Every other member
//! receives it independently with probability `1 - loss_prob`. Members keep
//! the last message they heard in a [`TrackMemory`], dead-reckon the target
//! from it, and drop to autonomous baseline pursuit when it goes stale.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::kinematics::{AgentState, Vec3};
use crate::pack::PackPhase;

pub const STALENESS_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub loss_prob: f64,
    /// Mixed into every link's substream name, so two channels with the same
    /// trial seed can still draw independent loss patterns.
    pub seed_stream: u64,
    /// Reserved: delivery latency in ticks. Only 0 is supported.
    pub latency_ticks: u32,
    /// When false the leader's own sensor is lossy too and it dead-reckons like everyone else.
    pub leader_observes_target: bool,
    pub staleness_limit: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { loss_prob: 0.0, seed_stream: 0, latency_ticks: 0, leader_observes_target: true, staleness_limit: STALENESS_LIMIT }
    }
}

impl ChannelParams {
    pub fn lossy(loss_prob: f64) -> Self {
        Self { loss_prob, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(SimError::InvalidParameter(format!("channel.loss_prob must lie in [0, 1], got {}", self.loss_prob)));
        }
        if self.latency_ticks != 0 {
            return Err(SimError::InvalidParameter("channel.latency_ticks other than 0 is not supported".into()));
        }
        if !(self.staleness_limit > 0.0 && self.staleness_limit.is_finite()) {
            return Err(SimError::InvalidParameter(format!(
                "channel.staleness_limit must be positive, got {}",
                self.staleness_limit
            )));
        }
        Ok(())
    }
}

/// One leader broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderMessage {
    pub t: f64,
    pub target_id: usize,
    pub target: AgentState,
    pub phase: PackPhase,
    pub heading: f64,
    pub slot_of_member: [usize; 4],
    pub striker: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackMemory {
    pub target_id: usize,
    pub last_target_pos: Vec3,
    pub last_target_vel: Vec3,
    pub last_update_time: f64,
    pub last_phase: PackPhase,
    pub last_heading: f64,
    pub last_slot: usize,
    pub last_active_flag: bool,
}

impl TrackMemory {
    /// Memory of `member` after hearing `msg`.
    pub fn from_message(msg: &LeaderMessage, member: usize) -> Self {
        Self {
            target_id: msg.target_id,
            last_target_pos: msg.target.pos,
            last_target_vel: msg.target.vel,
            last_update_time: msg.t,
            last_phase: msg.phase,
            last_heading: msg.heading,
            last_slot: msg.slot_of_member[member],
            last_active_flag: msg.striker == Some(member),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackMode {
    Coordinated,
    Autonomous,
}

/// Draws one delivery flag per link. `links[i]` is the rng of member `i`'s
/// link; a `None` link (the leader) always delivers.
pub fn broadcast_tick<R: Rng>(links: &mut [Option<R>], channel: &ChannelParams) -> Vec<bool> {
    links
        .iter_mut()
        .map(|link| match link {
            None => true,
            Some(rng) => delivered(rng, channel.loss_prob),
        })
        .collect()
}

/// One Bernoulli delivery draw. Always consumes exactly one number so the
/// stream position depends only on the tick index.
pub fn delivered<R: Rng + ?Sized>(rng: &mut R, loss_prob: f64) -> bool {
    let u: f64 = rng.random();
    u >= loss_prob
}

/// Constant-velocity extrapolation of the last heard target state. A fresh
/// memory is returned bit-for-bit.
pub fn dead_reckon(mem: &TrackMemory, t: f64) -> AgentState {
    let age = t - mem.last_update_time;
    if age <= 0.0 {
        return AgentState::at(mem.last_target_pos, mem.last_target_vel);
    }
    AgentState::at(mem.last_target_pos + mem.last_target_vel * age, mem.last_target_vel)
}

pub fn fallback_mode(mem: &TrackMemory, t: f64, staleness_limit: f64) -> FallbackMode {
    if t - mem.last_update_time > staleness_limit {
        FallbackMode::Autonomous
    } else {
        FallbackMode::Coordinated
    }
}
