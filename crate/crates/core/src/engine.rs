//! Deterministic fixed-step trial executor.
//!
//! One tick runs, in this order:
//!
//! 1. target threat assessment and evasion command,
//! 2. leader broadcasts through the lossy channel,
//! 3. per-member commands from each member's own view,
//! 4. integration of every agent,
//! 5. capture check,
//! 6. pack phase transitions,
//! 7. instrumentation.
//!
//! A trial is a pure function of its [`Scenario`]: every random draw comes
//! from a named substream of the scenario seed (`place`, `target:<id>`,
//! `chan:<pack>:<member>`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comms::{self, ChannelParams, FallbackMode, LeaderMessage, TrackMemory};
use crate::coverage::{escape_probability, CoverageParams, CoverageSampler};
use crate::error::SimError;
use crate::kinematics::{self, AgentState, MotionLimits, Vec3, DEFAULT_DT};
use crate::pack::{self, MemberView, PackObservation, PackPhase, PackState, Role, StrategyParams, PACK_SIZE};
use crate::rng::{substream, SimRng};
use crate::target::{self, EmergencyEscape, EvasionMode, TargetMode};

/// Targets start flying at this fraction of their speed limit.
pub const INITIAL_SPEED_FRACTION: f64 = 0.8;
/// Members of a pack start within this distance of the pack anchor.
pub const PACK_SPREAD: f64 = 100.0;
pub const LAUNCH_ALTITUDE: (f64, f64) = (100.0, 400.0);
/// Target commands are reflected inward within this distance of an arena face.
pub const BOUNDARY_MARGIN: f64 = 100.0;

pub const ENERGY_HOVER: f64 = 1.0;
pub const ENERGY_MANEUVER: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(alias = "shepherd")]
    ShepherdGrid,
    Traditional,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::ShepherdGrid => "shepherd",
            Strategy::Traditional => "traditional",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shepherd" | "shepherd_grid" => Ok(Strategy::ShepherdGrid),
            "traditional" => Ok(Strategy::Traditional),
            _ => Err(SimError::InvalidParameter(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// Targets in the central half of the arena, interceptors on the lateral faces.
    CentralTargets,
    /// Targets also start on a lateral face, heading inward.
    BoundaryTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub n_targets: usize,
    pub n_packs: usize,
    pub strategy: Strategy,
    pub channel: ChannelParams,
    pub arena: Vec3,
    pub max_duration: f64,
    pub capture_radius: f64,
    pub dt: f64,
    pub seed: u64,
    pub placement: PlacementPolicy,
    pub interceptor_limits: MotionLimits,
    pub target_limits: MotionLimits,
    pub emergency_escape: EmergencyEscape,
    pub params: StrategyParams,
    pub coverage: CoverageParams,
    /// Skip the channel entirely: every member acts on ground truth.
    pub bypass_comms: bool,
    pub record_trace: bool,
    /// Evaluate the escape-probability bound on every engaged tick.
    pub record_escape: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_targets: 1,
            n_packs: 1,
            strategy: Strategy::ShepherdGrid,
            channel: ChannelParams::default(),
            arena: Vec3::new(2000.0, 2000.0, 500.0),
            max_duration: 300.0,
            capture_radius: 5.0,
            dt: DEFAULT_DT,
            seed: 1,
            placement: PlacementPolicy::CentralTargets,
            interceptor_limits: MotionLimits::INTERCEPTOR,
            target_limits: MotionLimits::TARGET,
            emergency_escape: EmergencyEscape::default(),
            params: StrategyParams::default(),
            coverage: CoverageParams::default(),
            bypass_comms: false,
            record_trace: false,
            record_escape: false,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParameter(m));
        if self.n_targets < 1 {
            return bad("scenario.n_targets must be at least 1".into());
        }
        if self.n_packs < 1 {
            return bad("scenario.n_packs must be at least 1".into());
        }
        for (name, v) in [("capture_radius", self.capture_radius), ("max_duration", self.max_duration), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("scenario.{name} must be positive, got {v}"));
            }
        }
        let a = self.arena;
        if !(a.x > 2.0 * BOUNDARY_MARGIN && a.y > 2.0 * BOUNDARY_MARGIN && a.z > LAUNCH_ALTITUDE.1) {
            return bad(format!("scenario.arena too small: {a:?}"));
        }
        self.interceptor_limits.validate()?;
        self.target_limits.validate()?;
        self.channel.validate()?;
        self.params.validate()?;
        self.coverage.validate()?;
        Ok(())
    }

    pub fn n_interceptors(&self) -> usize {
        self.n_packs * PACK_SIZE
    }

    fn ticks(&self) -> u64 {
        (self.max_duration / self.dt - 1e-9).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPlacement {
    pub targets: Vec<AgentState>,
    pub interceptors: Vec<AgentState>,
}

/// Initial positions for every agent, drawn from the `place` substream.
pub fn place_initial<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> InitialPlacement {
    let a = scenario.arena;
    let speed = INITIAL_SPEED_FRACTION * scenario.target_limits.v_max;
    let targets = (0..scenario.n_targets)
        .map(|_| match scenario.placement {
            PlacementPolicy::CentralTargets => {
                let pos = Vec3::new(
                    rng.random_range(0.25 * a.x..=0.75 * a.x),
                    rng.random_range(0.25 * a.y..=0.75 * a.y),
                    rng.random_range(LAUNCH_ALTITUDE.0..=LAUNCH_ALTITUDE.1),
                );
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                AgentState::at(pos, Vec3::from_bearing(heading) * speed)
            }
            PlacementPolicy::BoundaryTargets => {
                let pos = boundary_point(a, rng);
                let inward = (Vec3::new(a.x / 2.0, a.y / 2.0, pos.z) - pos).try_unit(1e-9).unwrap_or(Vec3::X);
                AgentState::at(pos, inward * speed)
            }
        })
        .collect();

    let mut interceptors = Vec::with_capacity(scenario.n_interceptors());
    for _ in 0..scenario.n_packs {
        let face = rng.random_range(0..4u8);
        let along_len = if face < 2 { a.y } else { a.x };
        let along = rng.random_range(0.0..=along_len);
        let z = rng.random_range(LAUNCH_ALTITUDE.0..=LAUNCH_ALTITUDE.1);
        for _ in 0..PACK_SIZE {
            let s = (along + rng.random_range(-PACK_SPREAD / 2.0..=PACK_SPREAD / 2.0)).clamp(0.0, along_len);
            let mz = (z + rng.random_range(-PACK_SPREAD / 4.0..=PACK_SPREAD / 4.0)).clamp(LAUNCH_ALTITUDE.0, LAUNCH_ALTITUDE.1);
            interceptors.push(AgentState::at(face_point(a, face, s, mz), Vec3::ZERO));
        }
    }
    InitialPlacement { targets, interceptors }
}

fn face_point(a: Vec3, face: u8, along: f64, z: f64) -> Vec3 {
    match face {
        0 => Vec3::new(0.0, along, z),
        1 => Vec3::new(a.x, along, z),
        2 => Vec3::new(along, 0.0, z),
        _ => Vec3::new(along, a.y, z),
    }
}

fn boundary_point<R: Rng + ?Sized>(a: Vec3, rng: &mut R) -> Vec3 {
    let face = rng.random_range(0..4u8);
    let along = rng.random_range(0.0..=if face < 2 { a.y } else { a.x });
    let z = rng.random_range(LAUNCH_ALTITUDE.0..=LAUNCH_ALTITUDE.1);
    face_point(a, face, along, z)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackAssignment {
    /// Target assigned to each pack.
    pub pack_target: Vec<Option<usize>>,
    /// Unassigned targets, nearest-to-a-pack first.
    pub queue: Vec<usize>,
}

/// Greedy allocation: repeatedly match the globally closest (pack, target)
/// pair. Ties go to the lowest pack index, then the lowest target index.
pub fn assign_packs(pack_positions: &[Vec3], target_positions: &[Vec3]) -> PackAssignment {
    let mut pairs: Vec<(f64, usize, usize)> = pack_positions
        .iter()
        .enumerate()
        .flat_map(|(p, pp)| target_positions.iter().enumerate().map(move |(t, tp)| (pp.distance(*tp), p, t)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pack_target = vec![None; pack_positions.len()];
    let mut taken = vec![false; target_positions.len()];
    for (_, p, t) in pairs {
        if pack_target[p].is_none() && !taken[t] {
            pack_target[p] = Some(t);
            taken[t] = true;
        }
    }
    let mut queue: Vec<(f64, usize)> = (0..target_positions.len())
        .filter(|&t| !taken[t])
        .map(|t| {
            let d = pack_positions.iter().map(|p| p.distance(target_positions[t])).fold(f64::INFINITY, f64::min);
            (d, t)
        })
        .collect();
    queue.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    PackAssignment { pack_target, queue: queue.into_iter().map(|(_, t)| t).collect() }
}

/// Energy of one tick: hover cost plus a quadratic maneuvering cost.
pub fn tick_energy(accel: Vec3, dt: f64) -> f64 {
    dt * (ENERGY_HOVER + ENERGY_MANEUVER * accel.norm_squared())
}

/// Energy proxy of a trace of applied accelerations.
pub fn energy_of(accels: &[Vec3], dt: f64) -> f64 {
    accels.iter().map(|a| tick_energy(*a, dt)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub t: f64,
    pub pack: usize,
    pub from: PackPhase,
    pub to: PackPhase,
}

/// A pack taking a new target after its previous one was resolved. Resets it to `Chase`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetargetEvent {
    pub t: f64,
    pub pack: usize,
    pub target: usize,
    pub from: PackPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeSample {
    pub t: f64,
    pub pack: usize,
    /// All four members within ε_ready of their slots.
    pub all_on_slots: bool,
    pub ready: bool,
    pub escape_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: usize,
    pub captured: bool,
    pub capture_time: Option<f64>,
    pub capturer: Option<usize>,
    /// Phase of the capturer's pack at the capture tick.
    pub capture_phase: Option<PackPhase>,
    pub capture_role: Option<Role>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub agent: AgentId,
    pub role: Option<Role>,
    pub phase: Option<PackPhase>,
    pub mode: Option<EvasionMode>,
    pub pos: Vec3,
    pub vel: Vec3,
    pub accel: f64,
    pub v_max: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Target(usize),
    Interceptor(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub strategy: Strategy,
    pub loss_prob: f64,
    pub outcomes: Vec<TargetOutcome>,
    pub end_time: f64,
    /// Energy proxy per interceptor.
    pub energy: Vec<f64>,
    pub events: Vec<PhaseEvent>,
    pub retargets: Vec<RetargetEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub escape_trace: Vec<EscapeSample>,
    /// Ticks on which some agent exceeded its speed or acceleration limit.
    pub limit_violations: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}

impl TrialResult {
    pub fn n_captured(&self) -> usize {
        self.outcomes.iter().filter(|o| o.captured).count()
    }

    pub fn capture_fraction(&self) -> f64 {
        self.n_captured() as f64 / self.outcomes.len() as f64
    }

    /// Time at which every target was captured, if all were.
    pub fn completion_time(&self) -> Option<f64> {
        self.outcomes
            .iter()
            .map(|o| o.capture_time)
            .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
    }

    /// Energy summed over each pack's four members.
    pub fn pack_energy(&self) -> Vec<f64> {
        self.energy.chunks(PACK_SIZE).map(|c| c.iter().sum()).collect()
    }
}

struct TargetSlot {
    state: AgentState,
    mode: TargetMode,
    rng: SimRng,
    capture: Option<(f64, usize)>,
}

struct PackRuntime {
    state: PackState,
    target: Option<usize>,
}

/// Per-interceptor knowledge of the world.
struct MemberMind {
    /// Shepherd strategy: the last leader message heard.
    coord: Option<TrackMemory>,
    /// Baseline strategy: last heard state of every target.
    tracks: Vec<Option<TrackMemory>>,
    link: Option<SimRng>,
}

struct World<'a> {
    sc: &'a Scenario,
    targets: Vec<TargetSlot>,
    interceptors: Vec<AgentState>,
    roles: Vec<Role>,
    packs: Vec<PackRuntime>,
    minds: Vec<MemberMind>,
    queue: Vec<usize>,
    sampler: Option<CoverageSampler>,
    result: TrialResult,
}

/// Runs one trial to completion.
pub fn run_trial(scenario: &Scenario) -> Result<TrialResult, SimError> {
    scenario.validate()?;
    let mut world = World::new(scenario);
    let ticks = scenario.ticks();
    let mut end_time = 0.0;
    for tick in 0..ticks {
        if world.all_resolved() {
            break;
        }
        let t = tick as f64 * scenario.dt;
        let t_next = (tick + 1) as f64 * scenario.dt;
        world.tick(t, t_next)?;
        end_time = t_next;
    }
    let mut result = world.result;
    result.end_time = end_time;
    Ok(result)
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let placement = place_initial(sc, &mut substream(sc.seed, "place"));
        let targets: Vec<TargetSlot> = placement
            .targets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = substream(sc.seed, &format!("target:{i}"));
                let first = rng.random_range(target::HEADING_INTERVAL.0..=target::HEADING_INTERVAL.1);
                TargetSlot { state: *s, mode: TargetMode::nominal(0.0, s.vel.bearing(), first), rng, capture: None }
            })
            .collect();

        let pack_centroids: Vec<Vec3> = placement
            .interceptors
            .chunks(PACK_SIZE)
            .map(|c| Vec3::centroid(c.iter().map(|s| &s.pos)).unwrap_or_default())
            .collect();
        let target_pos: Vec<Vec3> = targets.iter().map(|t| t.state.pos).collect();
        let assignment = assign_packs(&pack_centroids, &target_pos);

        let packs: Vec<PackRuntime> = (0..sc.n_packs)
            .map(|p| {
                let members = std::array::from_fn(|m| p * PACK_SIZE + m);
                let mut state = PackState::new(members, 0.0);
                if let Some(tid) = assignment.pack_target[p] {
                    state.last_target_heading = targets[tid].state.vel.bearing();
                }
                PackRuntime { state, target: assignment.pack_target[p] }
            })
            .collect();

        let n = sc.n_interceptors();
        let minds = (0..n)
            .map(|i| {
                let (p, m) = (i / PACK_SIZE, i % PACK_SIZE);
                let lossy = !sc.bypass_comms && (m != 0 || !sc.channel.leader_observes_target);
                let link = lossy.then(|| substream(sc.seed, &format!("chan:{}:{p}:{m}", sc.channel.seed_stream)));
                MemberMind { coord: None, tracks: vec![None; sc.n_targets], link }
            })
            .collect();

        let outcomes = (0..sc.n_targets)
            .map(|i| TargetOutcome { target: i, captured: false, capture_time: None, capturer: None, capture_phase: None, capture_role: None })
            .collect();

        let mut world = Self {
            sc,
            targets,
            interceptors: placement.interceptors,
            roles: vec![Role::Chaser; n],
            packs,
            minds,
            queue: assignment.queue,
            sampler: sc.record_escape.then(|| CoverageSampler::new(CoverageParams { horizon_dt: sc.dt, ..sc.coverage })),
            result: TrialResult {
                seed: sc.seed,
                strategy: sc.strategy,
                loss_prob: sc.channel.loss_prob,
                outcomes,
                end_time: 0.0,
                energy: vec![0.0; n],
                events: Vec::new(),
                retargets: Vec::new(),
                escape_trace: Vec::new(),
                limit_violations: 0,
                trace: Vec::new(),
            },
        };
        // Pre-launch briefing: every member starts with the true picture.
        for p in 0..world.packs.len() {
            if let Some(msg) = world.leader_message(p, 0.0) {
                for m in 0..PACK_SIZE {
                    world.minds[p * PACK_SIZE + m].coord = Some(TrackMemory::from_message(&msg, m));
                }
            }
        }
        for i in 0..n {
            world.minds[i].tracks = world.target_tracks(0.0);
        }
        world
    }

    fn all_resolved(&self) -> bool {
        self.targets.iter().all(|t| t.capture.is_some())
    }

    fn leader_message(&self, p: usize, t: f64) -> Option<LeaderMessage> {
        let pack = &self.packs[p];
        let tid = pack.target?;
        Some(LeaderMessage {
            t,
            target_id: tid,
            target: self.targets[tid].state,
            phase: pack.state.phase,
            heading: pack.state.last_target_heading,
            slot_of_member: pack.state.slot_of_member,
            striker: pack.state.active_interceptor,
        })
    }

    fn target_tracks(&self, t: f64) -> Vec<Option<TrackMemory>> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, tg)| {
                tg.capture.is_none().then_some(TrackMemory {
                    target_id: i,
                    last_target_pos: tg.state.pos,
                    last_target_vel: tg.state.vel,
                    last_update_time: t,
                    last_phase: PackPhase::Chase,
                    last_heading: 0.0,
                    last_slot: 0,
                    last_active_flag: false,
                })
            })
            .collect()
    }

    fn tick(&mut self, t: f64, t_next: f64) -> Result<(), SimError> {
        let sc = self.sc;
        let dt = sc.dt;

        // 1. Targets.
        let positions: Vec<Vec3> = self.interceptors.iter().map(|s| s.pos).collect();
        let mut target_cmds = vec![Vec3::ZERO; self.targets.len()];
        for (tg, cmd) in self.targets.iter_mut().zip(target_cmds.iter_mut()) {
            if tg.capture.is_some() {
                continue;
            }
            tg.mode = target::update_mode(&tg.mode, &tg.state, &positions, t);
            let a = target::evasion_accel(&mut tg.mode, &tg.state, &positions, t, &mut tg.rng, &sc.target_limits, sc.emergency_escape);
            *cmd = target::reflect_at_bounds(tg.state.pos, a, sc.arena, BOUNDARY_MARGIN);
        }

        // 2 + 3. Broadcast, then each member decides on its own view.
        let interceptor_cmds = match sc.strategy {
            Strategy::ShepherdGrid => self.shepherd_commands(t),
            Strategy::Traditional => self.traditional_commands(t),
        };

        // 4. Integrate.
        for (i, tg) in self.targets.iter_mut().enumerate() {
            if tg.capture.is_some() {
                continue;
            }
            tg.state = kinematics::step(&tg.state, target_cmds[i], dt, &sc.target_limits).map_err(|e| abort(sc, t, e))?;
            self.result.limit_violations += u64::from(violates(&tg.state, &sc.target_limits));
        }
        for i in 0..self.interceptors.len() {
            let limits = self.limits_for(i);
            let next = kinematics::step(&self.interceptors[i], interceptor_cmds[i], dt, &limits).map_err(|e| abort(sc, t, e))?;
            self.result.limit_violations += u64::from(violates(&next, &limits));
            self.result.energy[i] += tick_energy(next.last_accel, dt);
            self.interceptors[i] = next;
        }

        // 5. Captures.
        self.check_captures(t_next);

        // 6. Phase machines.
        if sc.strategy == Strategy::ShepherdGrid {
            self.advance_packs(t_next);
        }

        // 7. Instrumentation.
        if self.sampler.is_some() {
            self.record_escape(t_next);
        }
        if sc.record_trace {
            self.record_trace(t_next);
        }
        Ok(())
    }

    fn limits_for(&self, i: usize) -> MotionLimits {
        if self.roles[i] == Role::Striker {
            self.sc.params.striker_limits(&self.sc.interceptor_limits)
        } else {
            self.sc.interceptor_limits
        }
    }

    fn shepherd_commands(&mut self, t: f64) -> Vec<Vec3> {
        let sc = self.sc;
        let mut cmds = vec![Vec3::ZERO; self.interceptors.len()];
        for p in 0..self.packs.len() {
            let msg = self.leader_message(p, t);
            for m in 0..PACK_SIZE {
                let i = p * PACK_SIZE + m;
                let me = self.interceptors[i];
                let Some(msg) = msg else {
                    // Nothing left to chase: brake and loiter.
                    self.roles[i] = Role::Idle;
                    cmds[i] = -me.vel * sc.params.k_vel;
                    continue;
                };

                if sc.bypass_comms {
                    let view = MemberView {
                        phase: msg.phase,
                        slot_index: msg.slot_of_member[m],
                        is_striker: msg.striker == Some(m),
                        heading: msg.heading,
                        target: msg.target,
                    };
                    self.roles[i] = view.role();
                    let striker_limits = sc.params.striker_limits(&sc.interceptor_limits);
                    let limits = if view.role() == Role::Striker { striker_limits } else { sc.interceptor_limits };
                    cmds[i] = pack::coordinated_accel(&me, &view, &sc.params, &limits).0;
                    continue;
                }

                let mind = &mut self.minds[i];
                let heard = match &mut mind.link {
                    None => true,
                    Some(rng) => comms::delivered(rng, sc.channel.loss_prob),
                };
                if heard {
                    mind.coord = Some(TrackMemory::from_message(&msg, m));
                }
                let Some(mem) = mind.coord else {
                    self.roles[i] = Role::Idle;
                    continue;
                };
                let estimate = comms::dead_reckon(&mem, t);
                match comms::fallback_mode(&mem, t, sc.channel.staleness_limit) {
                    FallbackMode::Autonomous => {
                        self.roles[i] = Role::Autonomous;
                        cmds[i] = pack::traditional_accel(&me, &estimate, &sc.params, &sc.interceptor_limits);
                    }
                    FallbackMode::Coordinated => {
                        let view = MemberView {
                            phase: mem.last_phase,
                            slot_index: mem.last_slot,
                            is_striker: mem.last_active_flag,
                            heading: mem.last_heading,
                            target: estimate,
                        };
                        self.roles[i] = view.role();
                        let limits = if view.role() == Role::Striker {
                            sc.params.striker_limits(&sc.interceptor_limits)
                        } else {
                            sc.interceptor_limits
                        };
                        cmds[i] = pack::coordinated_accel(&me, &view, &sc.params, &limits).0;
                    }
                }
            }
        }
        cmds
    }

    fn traditional_commands(&mut self, t: f64) -> Vec<Vec3> {
        let sc = self.sc;
        let truth = self.target_tracks(t);
        let mut cmds = vec![Vec3::ZERO; self.interceptors.len()];
        for i in 0..self.interceptors.len() {
            let me = self.interceptors[i];
            self.roles[i] = Role::Traditional;
            let mind = &mut self.minds[i];
            let heard = sc.bypass_comms
                || match &mut mind.link {
                    None => true,
                    Some(rng) => comms::delivered(rng, sc.channel.loss_prob),
                };
            if heard {
                mind.tracks.clone_from(&truth);
            }
            // Resolution is observable: captured targets drop out of every track list.
            let best = mind
                .tracks
                .iter()
                .enumerate()
                .filter(|(k, _)| self.targets[*k].capture.is_none())
                .filter_map(|(_, m)| m.as_ref().map(|m| comms::dead_reckon(m, t)))
                .min_by(|a, b| a.pos.distance(me.pos).total_cmp(&b.pos.distance(me.pos)));
            cmds[i] = match best {
                Some(est) => pack::traditional_accel(&me, &est, &sc.params, &sc.interceptor_limits),
                None => -me.vel * sc.params.k_vel,
            };
        }
        cmds
    }

    fn check_captures(&mut self, t: f64) {
        let r = self.sc.capture_radius;
        for k in 0..self.targets.len() {
            if self.targets[k].capture.is_some() {
                continue;
            }
            let tp = self.targets[k].state.pos;
            let positions: Vec<Vec3> = self.interceptors.iter().map(|s| s.pos).collect();
            if let Some(i) = capturing_interceptor(&positions, tp, r) {
                self.targets[k].capture = Some((t, i));
                let o = &mut self.result.outcomes[k];
                o.captured = true;
                o.capture_time = Some(t);
                o.capturer = Some(i);
                o.capture_role = Some(self.roles[i]);
                if self.sc.strategy == Strategy::ShepherdGrid {
                    o.capture_phase = Some(self.packs[i / PACK_SIZE].state.phase);
                }
            }
        }
        if self.sc.strategy == Strategy::ShepherdGrid {
            self.retarget_free_packs(t);
        }
    }

    fn retarget_free_packs(&mut self, t: f64) {
        for p in 0..self.packs.len() {
            let Some(tid) = self.packs[p].target else { continue };
            if self.targets[tid].capture.is_none() {
                continue;
            }
            self.queue.retain(|q| self.targets[*q].capture.is_none());
            let centroid = Vec3::centroid(self.packs[p].state.members.iter().map(|&i| &self.interceptors[i].pos)).unwrap_or_default();
            let next = self
                .queue
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = self.targets[*a.1].state.pos.distance(centroid);
                    let db = self.targets[*b.1].state.pos.distance(centroid);
                    da.total_cmp(&db).then(a.1.cmp(b.1))
                })
                .map(|(qi, &tid)| (qi, tid));
            let from = self.packs[p].state.phase;
            let members = self.packs[p].state.members;
            match next {
                Some((qi, new_target)) => {
                    self.queue.remove(qi);
                    let mut state = PackState::new(members, t);
                    state.last_target_heading = self.targets[new_target].state.vel.bearing();
                    self.packs[p] = PackRuntime { state, target: Some(new_target) };
                    self.result.retargets.push(RetargetEvent { t, pack: p, target: new_target, from });
                }
                None => {
                    self.packs[p].target = None;
                }
            }
        }
    }

    fn observation(&self, p: usize, t: f64) -> Option<PackObservation> {
        let pack = &self.packs[p];
        let tid = pack.target?;
        let tg = &self.targets[tid].state;
        let (slots, _) = pack::formation_slots(tg.pos, tg.vel, pack.state.last_target_heading, self.sc.params.r_formation);
        Some(PackObservation {
            t,
            member_positions: pack.state.members.map(|i| self.interceptors[i].pos),
            target_pos: tg.pos,
            slots,
        })
    }

    fn advance_packs(&mut self, t: f64) {
        for p in 0..self.packs.len() {
            let Some(obs) = self.observation(p, t) else { continue };
            let tid = self.packs[p].target.unwrap_or_default();
            let tg = self.targets[tid].state;
            let pack = &mut self.packs[p];
            let mut next = pack::transition(&pack.state, &obs, &self.sc.params);
            next.last_target_heading =
                pack::formation_slots(tg.pos, tg.vel, pack.state.last_target_heading, self.sc.params.r_formation).1;
            if next.phase != pack.state.phase {
                self.result.events.push(PhaseEvent { t, pack: p, from: pack.state.phase, to: next.phase });
            }
            pack.state = next;
        }
    }

    fn record_escape(&mut self, t: f64) {
        let Some(sampler) = &self.sampler else { return };
        for p in 0..self.packs.len() {
            if self.packs[p].state.phase != PackPhase::Engage {
                continue;
            }
            let Some(obs) = self.observation(p, t) else { continue };
            let member_slots = obs.member_slots(&self.packs[p].state.slot_of_member);
            let on_slots = pack::ready_count(&obs.member_positions, &member_slots, self.sc.params.eps_ready);
            let fraction = sampler.covered_fraction(&obs.member_positions, obs.target_pos);
            self.result.escape_trace.push(EscapeSample {
                t,
                pack: p,
                all_on_slots: on_slots == PACK_SIZE,
                ready: on_slots >= 3,
                escape_prob: escape_probability(fraction).unwrap_or(1.0),
            });
        }
    }

    fn record_trace(&mut self, t: f64) {
        for (k, tg) in self.targets.iter().enumerate() {
            if tg.capture.is_some_and(|c| c.0 < t) {
                continue;
            }
            self.result.trace.push(TraceRecord {
                t,
                agent: AgentId::Target(k),
                role: None,
                phase: None,
                mode: Some(tg.mode.mode),
                pos: tg.state.pos,
                vel: tg.state.vel,
                accel: tg.state.last_accel.norm(),
                v_max: self.sc.target_limits.v_max,
                a_max: self.sc.target_limits.a_max,
            });
        }
        for (i, s) in self.interceptors.iter().enumerate() {
            let limits = self.limits_for(i);
            let phase = (self.sc.strategy == Strategy::ShepherdGrid).then(|| self.packs[i / PACK_SIZE].state.phase);
            self.result.trace.push(TraceRecord {
                t,
                agent: AgentId::Interceptor(i),
                role: Some(self.roles[i]),
                phase,
                mode: None,
                pos: s.pos,
                vel: s.vel,
                accel: s.last_accel.norm(),
                v_max: limits.v_max,
                a_max: limits.a_max,
            });
        }
    }
}

fn violates(s: &AgentState, limits: &MotionLimits) -> bool {
    s.vel.norm() > limits.v_max * (1.0 + 1e-12) || s.last_accel.norm() > limits.a_max * (1.0 + 1e-12)
}

fn abort(sc: &Scenario, t: f64, e: SimError) -> SimError {
    SimError::TrialAborted { seed: sc.seed, time: t, reason: e.to_string() }
}

/// Capture check used by the engine, exposed for tests: the nearest
/// interceptor within `radius` of `target`, lowest index on ties.
pub fn capturing_interceptor(interceptors: &[Vec3], target: Vec3, radius: f64) -> Option<usize> {
    interceptors
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.distance(target)))
        .filter(|(_, d)| *d <= radius)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}
