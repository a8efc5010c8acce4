//! Monte Carlo batches, sweeps and their on-disk artifacts.
//!
//! A batch runs `n_trials` seeded trials (`seed_base + i`) in parallel and
//! aggregates them in seed order, so results never depend on scheduling.
//!
//! Files written by [`write_batch`]:
//!
//! | file            | content                                            |
//! |-----------------|----------------------------------------------------|
//! | `summary.json`  | [`BatchStats`]                                     |
//! | `curve.csv`     | `t,fraction` on a 1 s grid                         |
//! | `tti.csv`       | `trial,capture_time`, one row per captured target  |
//! | `timeline.csv`  | `trial,pack,phase,start,end`                       |
//! | `trials.jsonl`  | one [`TrialResult`] per line, traces stripped      |
//!
//! A sweep writes `sweep.csv` (`level,strategy,success,ci_lo,ci_hi`), its own
//! `summary.json`, and one batch directory per entry. Every float in every
//! file is rounded to 9 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{run_trial, Scenario, Strategy, TrialResult};
use crate::error::SimError;
use crate::pack::PackPhase;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

pub const CURVE_STEP: f64 = 1.0;
pub const DEFAULT_LOSS_LEVELS: [f64; 9] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
pub const DEFAULT_TARGET_LEVELS: [usize; 7] = [1, 2, 4, 8, 12, 16, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "levels")]
pub enum SweepAxis {
    None,
    PacketLoss(Vec<f64>),
    TargetCount(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::PacketLoss(_) => "packet_loss",
            SweepAxis::TargetCount(_) => "target_count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub scenario: Scenario,
    pub n_trials: usize,
    pub seed_base: u64,
    pub sweep: SweepAxis,
    /// Strategies compared by a sweep. A plain batch runs `scenario.strategy`.
    pub strategies: Vec<Strategy>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            n_trials: 100,
            seed_base: 1,
            sweep: SweepAxis::None,
            strategies: vec![Strategy::ShepherdGrid, Strategy::Traditional],
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_trials < 1 {
            return Err(SimError::InvalidParameter("batch.n_trials must be at least 1".into()));
        }
        self.scenario.validate()?;
        let empty = match &self.sweep {
            SweepAxis::None => false,
            SweepAxis::PacketLoss(l) => l.is_empty(),
            SweepAxis::TargetCount(l) => l.is_empty(),
        };
        if empty {
            return Err(SimError::InvalidParameter("batch.sweep levels must not be empty".into()));
        }
        if self.sweep != SweepAxis::None && self.strategies.is_empty() {
            return Err(SimError::InvalidParameter("batch.strategies must not be empty for a sweep".into()));
        }
        if let SweepAxis::PacketLoss(levels) = &self.sweep {
            for &l in levels {
                if !(0.0..=1.0).contains(&l) {
                    return Err(SimError::InvalidParameter(format!("loss level must lie in [0, 1], got {l}")));
                }
            }
        }
        if let SweepAxis::TargetCount(levels) = &self.sweep {
            if levels.contains(&0) {
                return Err(SimError::InvalidParameter("target level must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Wilson score interval at 95% for a rate `p` observed over `n` trials.
pub fn wilson_interval(p: f64, n: usize) -> Interval {
    let n = n as f64;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).max(0.0).sqrt();
    // The bounds at p = 0 and p = 1 are exactly 0 and 1; rounding would miss them.
    let lo = if p <= 0.0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if p >= 1.0 { 1.0 } else { (center + half).min(1.0) };
    Interval { lo, hi }
}

/// Quantile by linear interpolation between order statistics of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TtiStats {
    /// No trial captured anything.
    Empty,
    Quartiles { n: usize, q25: f64, median: f64, q75: f64 },
}

impl TtiStats {
    pub fn median(&self) -> Option<f64> {
        match self {
            TtiStats::Empty => None,
            TtiStats::Quartiles { median, .. } => Some(*median),
        }
    }
}

pub fn capture_times(results: &[TrialResult]) -> Vec<f64> {
    let mut times: Vec<f64> = results.iter().flat_map(|r| r.outcomes.iter().filter_map(|o| o.capture_time)).collect();
    times.sort_by(f64::total_cmp);
    times
}

pub fn tti_stats(results: &[TrialResult]) -> TtiStats {
    let times = capture_times(results);
    match (quantile_sorted(&times, 0.25), quantile_sorted(&times, 0.5), quantile_sorted(&times, 0.75)) {
        (Some(q25), Some(median), Some(q75)) => TtiStats::Quartiles { n: times.len(), q25, median, q75 },
        _ => TtiStats::Empty,
    }
}

/// Fraction of all targets captured by time `k · step`, for `k = 0..=horizon/step`.
pub fn cumulative_curve(results: &[TrialResult], step: f64, horizon: f64) -> Vec<(f64, f64)> {
    let total: usize = results.iter().map(|r| r.outcomes.len()).sum();
    let times = capture_times(results);
    let n_points = (horizon / step + 1e-9).floor() as usize + 1;
    let mut seen = 0;
    (0..n_points)
        .map(|k| {
            let t = k as f64 * step;
            while seen < times.len() && times[seen] <= t + 1e-9 {
                seen += 1;
            }
            let frac = if total == 0 { 0.0 } else { seen as f64 / total as f64 };
            (t, frac)
        })
        .collect()
}

/// Mean per-trial capture fraction.
pub fn success_rate(results: &[TrialResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(TrialResult::capture_fraction).sum::<f64>() / results.len() as f64
}

pub fn mean_pack_energy(results: &[TrialResult]) -> f64 {
    let all: Vec<f64> = results.iter().flat_map(TrialResult::pack_energy).collect();
    if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub trial: u64,
    pub pack: usize,
    pub phase: PackPhase,
    pub start: f64,
    pub end: f64,
}

/// Phase intervals of every pack. A retarget closes the current interval and
/// opens a new `Chase`.
pub fn phase_timeline_export(results: &[TrialResult]) -> Vec<TimelineRow> {
    let mut rows = Vec::new();
    for r in results {
        if r.strategy != Strategy::ShepherdGrid {
            continue;
        }
        let n_packs = r.energy.len() / crate::pack::PACK_SIZE;
        for pack in 0..n_packs {
            // (time, order, new phase): retargets sort before phase changes at the same tick.
            let mut marks: Vec<(f64, u8, PackPhase)> = r
                .retargets
                .iter()
                .filter(|e| e.pack == pack)
                .map(|e| (e.t, 0, PackPhase::Chase))
                .chain(r.events.iter().filter(|e| e.pack == pack).map(|e| (e.t, 1, e.to)))
                .collect();
            marks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut phase = PackPhase::Chase;
            let mut start = 0.0;
            for (t, _, to) in marks {
                rows.push(TimelineRow { trial: r.seed, pack, phase, start, end: t });
                phase = to;
                start = t;
            }
            rows.push(TimelineRow { trial: r.seed, pack, phase, start, end: r.end_time.max(start) });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDuration {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

pub fn phase_durations(rows: &[TimelineRow]) -> BTreeMap<String, PhaseDuration> {
    let mut by_phase: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_phase.entry(r.phase.name().to_string()).or_default().push(r.end - r.start);
    }
    by_phase
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let median = quantile_sorted(&v, 0.5).unwrap_or(0.0);
            (k, PhaseDuration { count: v.len(), mean, median })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub strategy: Strategy,
    pub n_trials: usize,
    pub seed_base: u64,
    pub n_targets: usize,
    pub loss_prob: f64,
    pub success_rate: f64,
    pub success_ci: Interval,
    pub tti: TtiStats,
    pub mean_pack_energy: f64,
    pub limit_violations: u64,
    pub phase_durations: BTreeMap<String, PhaseDuration>,
    pub curve: Vec<f64>,
}

impl BatchStats {
    pub fn from_results(results: &[TrialResult], scenario: &Scenario, seed_base: u64) -> Self {
        let rate = success_rate(results);
        let curve = cumulative_curve(results, CURVE_STEP, scenario.max_duration).into_iter().map(|(_, f)| f).collect();
        Self {
            strategy: scenario.strategy,
            n_trials: results.len(),
            seed_base,
            n_targets: scenario.n_targets,
            loss_prob: scenario.channel.loss_prob,
            success_rate: rate,
            success_ci: wilson_interval(rate, results.len()),
            tti: tti_stats(results),
            mean_pack_energy: mean_pack_energy(results),
            limit_violations: results.iter().map(|r| r.limit_violations).sum(),
            phase_durations: phase_durations(&phase_timeline_export(results)),
            curve,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub scenario: Scenario,
    pub stats: BatchStats,
    pub trials: Vec<TrialResult>,
}

/// Runs `n` trials of `scenario` with seeds `seed_base..seed_base + n`, in seed order.
pub fn run_trials(scenario: &Scenario, n: usize, seed_base: u64) -> Result<Vec<TrialResult>, SimError> {
    scenario.validate()?;
    let outcomes: Vec<Result<TrialResult, SimError>> = (0..n as u64)
        .into_par_iter()
        .map(|i| run_trial(&Scenario { seed: seed_base.wrapping_add(i), ..scenario.clone() }))
        .collect();
    outcomes.into_iter().collect()
}

/// One batch of `cfg.scenario`; the sweep axis is ignored.
pub fn run_batch(cfg: &BatchConfig) -> Result<Batch, SimError> {
    cfg.validate()?;
    batch_of(cfg.scenario.clone(), cfg.n_trials, cfg.seed_base)
}

fn batch_of(scenario: Scenario, n: usize, seed_base: u64) -> Result<Batch, SimError> {
    let trials = run_trials(&scenario, n, seed_base)?;
    let stats = BatchStats::from_results(&trials, &scenario, seed_base);
    Ok(Batch { scenario, stats, trials })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub level: f64,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub entries: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub strategy: Strategy,
    pub success: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Sweep {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.entries
            .iter()
            .map(|e| SweepRow {
                level: e.level,
                strategy: e.batch.stats.strategy,
                success: e.batch.stats.success_rate,
                ci_lo: e.batch.stats.success_ci.lo,
                ci_hi: e.batch.stats.success_ci.hi,
            })
            .collect()
    }

    pub fn get(&self, strategy: Strategy, level: f64) -> Option<&BatchStats> {
        self.entries.iter().find(|e| e.batch.stats.strategy == strategy && e.level == level).map(|e| &e.batch.stats)
    }
}

/// Every strategy in `cfg.strategies` at every loss level.
pub fn sweep_packet_loss(cfg: &BatchConfig, levels: &[f64]) -> Result<Sweep, SimError> {
    let cfg = BatchConfig { sweep: SweepAxis::PacketLoss(levels.to_vec()), ..cfg.clone() };
    cfg.validate()?;
    let mut entries = Vec::new();
    for &level in levels {
        for &strategy in &cfg.strategies {
            let mut sc = cfg.scenario.clone();
            sc.strategy = strategy;
            sc.channel.loss_prob = level;
            entries.push(SweepEntry { level, batch: batch_of(sc, cfg.n_trials, cfg.seed_base)? });
        }
    }
    Ok(Sweep { axis: cfg.sweep, entries })
}

/// Every strategy in `cfg.strategies` at every target count, one pack per target.
pub fn sweep_target_count(cfg: &BatchConfig, levels: &[usize]) -> Result<Sweep, SimError> {
    let cfg = BatchConfig { sweep: SweepAxis::TargetCount(levels.to_vec()), ..cfg.clone() };
    cfg.validate()?;
    let mut entries = Vec::new();
    for &level in levels {
        for &strategy in &cfg.strategies {
            let mut sc = cfg.scenario.clone();
            sc.strategy = strategy;
            sc.n_targets = level;
            sc.n_packs = level;
            entries.push(SweepEntry { level: level as f64, batch: batch_of(sc, cfg.n_trials, cfg.seed_base)? });
        }
    }
    Ok(Sweep { axis: cfg.sweep, entries })
}

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(sig9(x))) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON with every float rounded to 9 significant digits.
pub fn to_rounded_json<T: Serialize>(value: &T, pretty: bool) -> Result<String, SimError> {
    let mut v = serde_json::to_value(value).map_err(|e| SimError::Format { path: String::new(), reason: e.to_string() })?;
    round_value(&mut v);
    let s = if pretty { serde_json::to_string_pretty(&v) } else { serde_json::to_string(&v) };
    s.map_err(|e| SimError::Format { path: String::new(), reason: e.to_string() })
}

fn write_file(path: &Path, content: &str) -> Result<(), SimError> {
    fs::write(path, content).map_err(|e| SimError::io(path, e))
}

fn csv_f(x: f64) -> String {
    format!("{}", sig9(x))
}

pub fn write_batch(dir: &Path, batch: &Batch) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    write_file(&dir.join("summary.json"), &(to_rounded_json(&batch.stats, true)? + "\n"))?;

    let mut curve = String::from("t,fraction\n");
    for (k, f) in batch.stats.curve.iter().enumerate() {
        let _ = writeln!(curve, "{},{}", csv_f(k as f64 * CURVE_STEP), csv_f(*f));
    }
    write_file(&dir.join("curve.csv"), &curve)?;

    let mut tti = String::from("trial,capture_time\n");
    for r in &batch.trials {
        for t in r.outcomes.iter().filter_map(|o| o.capture_time) {
            let _ = writeln!(tti, "{},{}", r.seed, csv_f(t));
        }
    }
    write_file(&dir.join("tti.csv"), &tti)?;

    write_file(&dir.join("timeline.csv"), &timeline_csv(&phase_timeline_export(&batch.trials)))?;

    let mut jsonl = String::new();
    for r in &batch.trials {
        let stripped = TrialResult { trace: Vec::new(), ..r.clone() };
        jsonl.push_str(&to_rounded_json(&stripped, false)?);
        jsonl.push('\n');
    }
    write_file(&dir.join("trials.jsonl"), &jsonl)
}

pub fn timeline_csv(rows: &[TimelineRow]) -> String {
    let mut s = String::from("trial,pack,phase,start,end\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.trial, r.pack, r.phase.name(), csv_f(r.start), csv_f(r.end));
    }
    s
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    axis: &'a str,
    rows: Vec<SweepRow>,
    entries: Vec<&'a BatchStats>,
}

/// Directory name of one sweep entry.
pub fn entry_dir_name(axis: &SweepAxis, strategy: Strategy, level: f64) -> String {
    format!("{}_{}_{}", strategy.name(), axis.name(), sig9(level))
}

pub fn write_sweep(dir: &Path, sweep: &Sweep) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let rows = sweep.rows();
    let mut csv = String::from("level,strategy,success,ci_lo,ci_hi\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", csv_f(r.level), r.strategy.name(), csv_f(r.success), csv_f(r.ci_lo), csv_f(r.ci_hi));
    }
    write_file(&dir.join("sweep.csv"), &csv)?;
    let summary = SweepSummary { axis: sweep.axis.name(), rows, entries: sweep.entries.iter().map(|e| &e.batch.stats).collect() };
    write_file(&dir.join("summary.json"), &(to_rounded_json(&summary, true)? + "\n"))?;
    for e in &sweep.entries {
        write_batch(&dir.join(entry_dir_name(&sweep.axis, e.batch.stats.strategy, e.level)), &e.batch)?;
    }
    Ok(())
}

/// Reads back the `trials.jsonl` of a batch directory.
pub fn read_trials(dir: &Path) -> Result<Vec<TrialResult>, SimError> {
    let path = dir.join("trials.jsonl");
    let file = fs::File::open(&path).map_err(|e| SimError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| SimError::Format { path: path.display().to_string(), reason: format!("line {}: {e}", i + 1) })?;
        out.push(r);
    }
    Ok(out)
}
