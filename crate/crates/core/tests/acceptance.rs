//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Band criteria run 100 trials per condition with seeds 1..=100.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;

use rand::Rng;
use shepherd_grid::comms::ChannelParams;
use shepherd_grid::coverage::{containment_condition, CoverageParams, CoverageSampler};
use shepherd_grid::harness::{self, Batch, BatchConfig, BatchStats, Sweep};
use shepherd_grid::pack::{formation_ready, formation_slots};
use shepherd_grid::rng::substream;
use shepherd_grid::{PackPhase, Scenario, Strategy, TrialResult, Vec3};

const TRIALS: usize = 100;
const SEED_BASE: u64 = 1;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn check(&mut self, id: u32, pass: bool, detail: String) {
        let line = format!("[{}] criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn config(strategy: Strategy) -> BatchConfig {
    BatchConfig {
        scenario: Scenario { strategy, ..Scenario::default() },
        n_trials: TRIALS,
        seed_base: SEED_BASE,
        ..BatchConfig::default()
    }
}

fn median(s: &BatchStats) -> f64 {
    s.tti.median().unwrap_or(f64::INFINITY)
}

/// Every phase change is legal and every Chase lasts at least τ_chase.
fn fsm_violations(trials: &[TrialResult], tau_chase: f64) -> (usize, usize) {
    let mut illegal = 0;
    let mut short_chase = 0;
    for r in trials {
        let n_packs = r.energy.len() / 4;
        for pack in 0..n_packs {
            let mut marks: Vec<(f64, u8, Option<PackPhase>, PackPhase)> = r
                .retargets
                .iter()
                .filter(|e| e.pack == pack)
                .map(|e| (e.t, 0, None, PackPhase::Chase))
                .chain(r.events.iter().filter(|e| e.pack == pack).map(|e| (e.t, 1, Some(e.from), e.to)))
                .collect();
            marks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut phase = PackPhase::Chase;
            let mut entered = 0.0;
            for (t, _, from, to) in marks {
                if let Some(from) = from {
                    if from != phase || !from.can_transition_to(to) {
                        illegal += 1;
                    }
                    if from == PackPhase::Chase && to == PackPhase::Follow && t - entered < tau_chase {
                        short_chase += 1;
                    }
                }
                phase = to;
                entered = t;
            }
        }
    }
    (illegal, short_chase)
}

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

fn rotate(v: Vec3, phi: f64) -> Vec3 {
    Vec3::new(v.x * phi.cos() - v.y * phi.sin(), v.x * phi.sin() + v.y * phi.cos(), v.z)
}

fn main() {
    let mut rep = Report { lines: Vec::new() };
    let mut all_trials: Vec<TrialResult> = Vec::new();

    // 1–3: single target, loss 0. The shepherd batch also records the escape bound for 9.
    let mut shepherd_cfg = config(Strategy::ShepherdGrid);
    shepherd_cfg.scenario.record_escape = true;
    let shepherd = harness::run_batch(&shepherd_cfg).expect("shepherd batch");
    let traditional = harness::run_batch(&config(Strategy::Traditional)).expect("traditional batch");
    let (s, t) = (&shepherd.stats, &traditional.stats);

    rep.check(1, s.success_rate >= 0.90, format!("shepherd single-target success {:.3} (>= 0.90)", s.success_rate));
    let gap = s.success_rate - t.success_rate;
    rep.check(
        2,
        (0.40..=0.85).contains(&t.success_rate) && gap >= 0.15,
        format!("traditional success {:.3} in [0.40, 0.85], {:.1} points below shepherd (>= 15)", t.success_rate, 100.0 * gap),
    );
    rep.check(
        3,
        median(s) < median(t) && median(s) <= 90.0,
        format!("median TTI shepherd {:.1} s < traditional {:.1} s, shepherd <= 90 s", median(s), median(t)),
    );

    // 4: packet-loss sweep.
    let loss_levels = [0.0, 0.2, 0.4, 0.6, 0.8];
    let loss = harness::sweep_packet_loss(&config(Strategy::ShepherdGrid), &loss_levels).expect("loss sweep");
    let sh: Vec<f64> = loss_levels.iter().map(|&l| loss.get(Strategy::ShepherdGrid, l).unwrap().success_rate).collect();
    let tr: Vec<f64> = loss_levels.iter().map(|&l| loss.get(Strategy::Traditional, l).unwrap().success_rate).collect();
    let at_04 = sh[2];
    let dominates = sh.iter().zip(&tr).all(|(a, b)| a >= b);
    let graceful = sh.windows(2).all(|w| w[1] <= w[0] + 0.05);
    rep.check(
        4,
        at_04 >= 0.70 && dominates && graceful,
        format!("loss sweep shepherd {sh:.2?} vs traditional {tr:.2?}; at 0.4 {at_04:.2} (>= 0.70), dominates {dominates}, non-increasing within 5 pts {graceful}"),
    );

    // 5: target-count sweep.
    let target_levels = [1usize, 4, 8, 16];
    let count = harness::sweep_target_count(&config(Strategy::ShepherdGrid), &target_levels).expect("target sweep");
    let s8 = count.get(Strategy::ShepherdGrid, 8.0).unwrap().success_rate;
    let t8 = count.get(Strategy::Traditional, 8.0).unwrap().success_rate;
    let by_level: Vec<String> = target_levels
        .iter()
        .map(|&n| {
            let l = n as f64;
            format!(
                "{n}: {:.2}/{:.2}",
                count.get(Strategy::ShepherdGrid, l).unwrap().success_rate,
                count.get(Strategy::Traditional, l).unwrap().success_rate
            )
        })
        .collect();
    rep.check(
        5,
        s8 - t8 >= 0.20,
        format!("8 targets: shepherd {s8:.3} vs traditional {t8:.3}, gap {:.1} points (>= 20); [{}]", 100.0 * (s8 - t8), by_level.join(", ")),
    );

    for b in [&shepherd, &traditional] {
        all_trials.extend(b.trials.iter().cloned());
    }
    for sweep in [&loss, &count] {
        for e in &sweep.entries {
            all_trials.extend(e.batch.trials.iter().cloned());
        }
    }

    // 6: slot geometry.
    let mut rng = substream(6, "acceptance:geometry");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = Vec3::new(rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0), rng.random_range(0.0..500.0));
        let heading = rng.random_range(0.0..2.0 * PI);
        let speed = rng.random_range(1.0..35.0);
        let vel = Vec3::from_bearing(heading) * speed + Vec3::new(0.0, 0.0, rng.random_range(-5.0..5.0));
        let (slots, _) = formation_slots(p, vel, 0.0, 40.0);
        let phi = rng.random_range(-PI..PI);
        let (rotated, _) = formation_slots(p, rotate(vel, phi), 0.0, 40.0);
        for i in 0..4 {
            let a = slots[i] - p;
            let b = slots[(i + 1) % 4] - p;
            worst = worst.max((a.norm() - 40.0).abs());
            worst = worst.max(a.dot(b).abs() / 1600.0);
            worst = worst.max((rotate(a, phi) - (rotated[i] - p)).norm());
            worst = worst.max((rotate(a, FRAC_PI_2) - b).norm());
        }
    }
    rep.check(6, worst <= 1e-9, format!("1000 random states: radius, orthogonality and rotation error <= {worst:.2e} (<= 1e-9)"));

    // 7: readiness truth table.
    let slots = [Vec3::new(40.0, 0.0, 0.0), Vec3::new(0.0, 40.0, 0.0), Vec3::new(-40.0, 0.0, 0.0), Vec3::new(0.0, -40.0, 0.0)];
    let table: Vec<bool> = (0..=4)
        .map(|k| {
            let members = std::array::from_fn(|i| if i < k { slots[i] + Vec3::new(0.0, 0.0, 14.9) } else { slots[i] + Vec3::new(0.0, 0.0, 15.1) });
            formation_ready(&members, &slots, 15.0)
        })
        .collect();
    rep.check(7, table == [false, false, false, true, true], format!("members in tolerance 0..=4 -> {table:?}"));

    // 8: phase machine legality over every trial of 1–5.
    let (illegal, short) = fsm_violations(&all_trials, 5.0);
    let shepherd_trials = all_trials.iter().filter(|r| r.strategy == Strategy::ShepherdGrid).count();
    rep.check(
        8,
        illegal == 0 && short == 0,
        format!("{shepherd_trials} shepherd trials: {illegal} illegal transitions, {short} chases shorter than 5.0 s"),
    );

    // 9: containment condition and the per-tick escape bound on fully formed Engage ticks.
    let holds = containment_condition(40.0, 25.0, 35.0, 0.1);
    let formed: Vec<f64> =
        shepherd.trials.iter().flat_map(|r| r.escape_trace.iter().filter(|e| e.all_on_slots).map(|e| e.escape_prob)).collect();
    let engaged: usize = shepherd.trials.iter().map(|r| r.escape_trace.len()).sum();
    let nonzero = formed.iter().filter(|p| **p != 0.0).count();
    let mean = if formed.is_empty() { f64::NAN } else { formed.iter().sum::<f64>() / formed.len() as f64 };
    rep.check(
        9,
        holds && !formed.is_empty() && nonzero == 0,
        format!(
            "condition(40, 25, 35, 0.1) = {holds}; {} of {engaged} engaged ticks fully on slots, {nonzero} with escape bound > 0 (mean {mean:.3})",
            formed.len()
        ),
    );

    // 10: Monte Carlo coverage against the two-circle lens.
    let params = CoverageParams::default();
    let reach = params.reach_radius();
    let mut rng = substream(10, "acceptance:lens");
    let mut worst = 0.0f64;
    for k in 0..20 {
        let sampler = CoverageSampler::new(CoverageParams { mc_seed: k, ..params });
        let d = rng.random_range((params.r_intercept - reach)..(params.r_intercept + reach));
        let bearing = rng.random_range(0.0..2.0 * PI);
        let target = Vec3::new(rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0), 200.0);
        let got = sampler.covered_fraction(&[target + Vec3::from_bearing(bearing) * d], target);
        let want = lens_area(params.r_intercept, reach, d) / (PI * reach * reach);
        worst = worst.max((got - want).abs());
    }
    rep.check(10, worst <= 0.01, format!("20 two-circle geometries at 10000 samples: max error {worst:.4} (<= 0.01)"));

    // 11: byte-identical artifacts on re-run.
    let identical = determinism(&shepherd_cfg, &shepherd);
    rep.check(11, identical.is_ok(), identical.unwrap_or_else(|e| e));

    // 12: motion limits.
    let violations: u64 = all_trials.iter().map(|r| r.limit_violations).sum();
    rep.check(12, violations == 0, format!("{} trials: {violations} speed or acceleration limit violations", all_trials.len()));

    // 13: a lossless channel is indistinguishable from no channel.
    let mut differing = Vec::new();
    for seed in SEED_BASE..SEED_BASE + 10 {
        let base = Scenario { seed, record_trace: true, channel: ChannelParams::lossy(0.0), ..Scenario::default() };
        let a = shepherd_grid::run_trial(&base).expect("trial");
        let b = shepherd_grid::run_trial(&Scenario { bypass_comms: true, ..base }).expect("trial");
        if a != b {
            differing.push(seed);
        }
    }
    rep.check(13, differing.is_empty(), format!("10 seeds, full traces compared: differing seeds {differing:?}"));

    let failed = rep.lines.iter().filter(|l| !l.0).count();
    println!("{} of {} criteria passed", rep.lines.len() - failed, rep.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn determinism(cfg: &BatchConfig, first: &Batch) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let again = harness::run_batch(cfg).map_err(|e| e.to_string())?;
    harness::write_batch(&a, first).map_err(|e| e.to_string())?;
    harness::write_batch(&b, &again).map_err(|e| e.to_string())?;

    let small = BatchConfig { n_trials: 20, ..cfg.clone() };
    let sweep = |d: &std::path::Path| -> Result<Sweep, String> {
        let s = harness::sweep_packet_loss(&small, &[0.0, 0.4]).map_err(|e| e.to_string())?;
        harness::write_sweep(d, &s).map_err(|e| e.to_string())?;
        Ok(s)
    };
    sweep(&a.join("sweep"))?;
    sweep(&b.join("sweep"))?;

    for f in ["summary.json", "curve.csv", "tti.csv", "timeline.csv", "trials.jsonl", "sweep/sweep.csv", "sweep/summary.json"] {
        let x = fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if x != y {
            return Err(format!("{f} differs between identical runs"));
        }
    }
    Ok("re-run batch and sweep: summary.json, curve.csv, sweep.csv (and the other artifacts) byte-identical".into())
}
