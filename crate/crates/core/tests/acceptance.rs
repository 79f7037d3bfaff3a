//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines;
//! `ACCEPTANCE_ONLY=3,4` restricts the run to the listed criteria.

use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intersim::config::ScenarioConfig;
use intersim::crossing::{build_constrained_trajectory, minimal_arrival_time};
use intersim::hdv::{idm_acceleration, IdmParams, LeaderGap};
use intersim::motion::{Bounds, ConstAccelSegment, Landmarks, Motion, Segment, Trajectory, VehicleState};
use intersim::output::{emit, read_run, CONFIG_FILE, METRICS_FILE, SCHEDULE_FILE, TRACE_FILE, VEHICLES_FILE};
use intersim::planner::{algorithm1_search, GreenWindow, PlanningContext, Predecessor};
use intersim::signal::{next_cycle_split, phase_of_light, Policy, PathId, Turn, PHASES};
use intersim::standby::{latest_stop_time, stop_cubic, StandbyError};
use intersim::sim::{run, run_untraced, Arrival, Engine, VehicleClass};
use intersim::check::check_run;
use intersim::sweep::{cell_config, SignalCell, PENETRATIONS, SIGNAL_CELLS};

/// Junction-wide arrival rate shared by every cell of the study.
const STUDY_LOAD: f64 = 0.7;
const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const MIN_SEED_WINS: usize = 8;
const ORDERING_BUDGET: Duration = Duration::from_secs(120);

const STOP_RESIDUAL: f64 = 1e-8;
const STOP_PROBE: f64 = 1e-3;
const STOP_BUDGET: Duration = Duration::from_secs(10);

const ARRIVAL_TOL: f64 = 1e-6;
const PROFILE_TOL: f64 = 1e-9;

const BRUTE_GRID: f64 = 1e-3;
const SEARCH_STEP: f64 = 0.1;
const REAR_GRID: f64 = 0.01;
const REAR_TOL: f64 = 1e-6;
const ORACLE_BOUNDS_TOL: f64 = 1e-9;

const SPLIT_TOL: f64 = 1e-9;
const IDM_EQ_TOL: f64 = 1e-9;
const IDM_WORKED_TOL: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("1 adaptive 20 s beats 40 s at 70% CAV", c1_cycle_ordering_mixed),
        ("2 cycle and policy ordering at 0% CAV", c2_cycle_ordering_hdv),
        ("3 latest stop time", c3_latest_stop_time),
        ("4 minimal arrival time", c4_minimal_arrival_time),
        ("5 exit time search optimality gap", c5_search_gap),
        ("6 safety over the sweep", c6_safety_sweep),
        ("7 split algebra", c7_split_algebra),
        ("8 car-following checks", c8_idm),
        ("9 standby beats human stop on energy", c9_standby_energy),
        ("10 determinism", c10_determinism),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {tag} ({}; {:.1} s)", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn study(seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, arrival_rate: STUDY_LOAD, ..ScenarioConfig::default() }
}

fn mean_travel_time(cell: SignalCell, penetration: f64, seed: u64) -> f64 {
    let cfg = cell_config(&study(seed), cell, penetration);
    let out = run_untraced(&cfg).expect("run succeeds");
    assert!(out.metrics.complete, "seed {seed} {cell:?} p={penetration} did not finish");
    out.metrics.all.travel_time
}

fn ac(t_cycle: f64) -> SignalCell {
    SignalCell { policy: Policy::Adaptive, t_cycle }
}

fn c1_cycle_ordering_mixed() -> Verdict {
    let start = Instant::now();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in SEEDS {
        let short = mean_travel_time(ac(20.0), 0.7, seed);
        let long = mean_travel_time(ac(40.0), 0.7, seed);
        wins += usize::from(short < long);
        pairs.push(format!("{short:.1}/{long:.1}"));
    }
    let elapsed = start.elapsed();
    verdict(
        wins >= MIN_SEED_WINS && elapsed < ORDERING_BUDGET,
        format!("{wins}/10 seeds, {:.0} s, ac20/ac40 = {}", elapsed.as_secs_f64(), pairs.join(" ")),
    )
}

fn c2_cycle_ordering_hdv() -> Verdict {
    let fc40 = SignalCell { policy: Policy::Fixed, t_cycle: 40.0 };
    let (mut mid_short, mut mid_long, mut fixed) = (0, 0, 0);
    for seed in SEEDS {
        let a20 = mean_travel_time(ac(20.0), 0.0, seed);
        let a30 = mean_travel_time(ac(30.0), 0.0, seed);
        let a40 = mean_travel_time(ac(40.0), 0.0, seed);
        let f40 = mean_travel_time(fc40, 0.0, seed);
        mid_short += usize::from(a30 < a20);
        mid_long += usize::from(a30 < a40);
        fixed += usize::from(f40 < a40);
    }
    verdict(
        mid_short >= MIN_SEED_WINS && mid_long >= MIN_SEED_WINS && fixed >= MIN_SEED_WINS,
        format!("ac30<ac20 {mid_short}/10, ac30<ac40 {mid_long}/10, fc40<ac40 {fixed}/10"),
    )
}

/// Coefficients (in local time) of the cubic through the four stop
/// conditions, from a direct linear solve.
fn stop_coefficients(v0: f64, d: f64, t: f64) -> Vector4<f64> {
    let m = Matrix4::new(
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, 1.0, 0.0, //
        t * t * t, t * t, t, 1.0, //
        3.0 * t * t, 2.0 * t, 1.0, 0.0,
    );
    m.lu().solve(&Vector4::new(0.0, v0, d, 0.0)).expect("nonsingular")
}

/// Whether the stop cubic `k` on `[0, t]` keeps `v >= 0` and `u >= u_min`.
fn stop_feasible(k: &Vector4<f64>, t: f64, u_min: f64) -> bool {
    let (a, b, c) = (k[0], k[1], k[2]);
    let v = |s: f64| 3.0 * a * s * s + 2.0 * b * s + c;
    let u = |s: f64| 6.0 * a * s + 2.0 * b;
    let mut v_lo = v(0.0).min(v(t));
    if a != 0.0 {
        let vertex = -b / (3.0 * a);
        if vertex > 0.0 && vertex < t {
            v_lo = v_lo.min(v(vertex));
        }
    }
    // coming to rest from above also needs a non-positive terminal slope;
    // this catches dips too shallow to resolve at the vertex
    v_lo >= 0.0 && u(t) <= 0.0 && u(0.0).min(u(t)) >= u_min
}

fn c3_latest_stop_time() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ok, mut infeasible, mut bad) = (0, 0, Vec::new());
    for k in 0..1000 {
        let v0 = 25.0 * (1.0 - rng.gen::<f64>());
        let d = rng.gen_range(20.0..=300.0);
        let u_min = rng.gen_range(-6.0..=-1.0);
        match latest_stop_time(v0, d, u_min) {
            Ok(timing) => {
                let t = timing.duration;
                let seg = stop_cubic(VehicleState::new(0.0, 0.0, v0, 0.0), d, t).expect("cubic");
                let residual = [seg.position(0.0), seg.velocity(0.0) - v0, seg.position(t) - d, seg.velocity(t)]
                    .iter()
                    .fold(0.0_f64, |m, r| m.max(r.abs()));
                let n = 10_000;
                let u_ok = (0..=n).all(|j| seg.acceleration(t * j as f64 / n as f64) >= u_min - STOP_RESIDUAL);
                let later = stop_coefficients(v0, d, t + STOP_PROBE);
                if residual < STOP_RESIDUAL && u_ok && !stop_feasible(&later, t + STOP_PROBE, u_min) {
                    ok += 1;
                } else {
                    bad.push(format!("#{k} v0={v0:.3} d={d:.1} u_min={u_min:.2} residual={residual:e}"));
                }
            }
            Err(StandbyError::CannotStop { .. }) => {
                // no duration up to the zero-terminal-speed limit stops in time
                let t_max = 3.0 * d / v0;
                let n = 20_000;
                let any = (1..=n).any(|j| {
                    let t = t_max * j as f64 / n as f64;
                    stop_feasible(&stop_coefficients(v0, d, t), t, u_min)
                });
                if any {
                    bad.push(format!("#{k} v0={v0:.3} d={d:.1} u_min={u_min:.2} reported infeasible"));
                } else {
                    infeasible += 1;
                }
            }
            Err(e) => bad.push(format!("#{k}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        bad.is_empty() && elapsed < STOP_BUDGET,
        format!("{ok} stops verified, {infeasible} infeasible confirmed by scan, {} bad {:?}", bad.len(), bad.first()),
    )
}

/// Exact integration of a piecewise-constant control with the speed held in
/// `[0, v_max]`; returns the time `distance` is reached.
fn arrival_time(v0: f64, distance: f64, profile: &[(f64, f64)], v_max: f64) -> Option<f64> {
    let (mut t, mut p, mut v) = (0.0, 0.0, v0);
    for &(u, dur) in profile {
        let mut left = dur;
        while left > 1e-15 {
            let a = if (v >= v_max && u > 0.0) || (v <= 0.0 && u < 0.0) { 0.0 } else { u };
            let to_limit = if a > 0.0 {
                (v_max - v) / a
            } else if a < 0.0 {
                v / -a
            } else {
                f64::INFINITY
            };
            let saturates = to_limit <= left;
            let h = left.min(to_limit);
            let p_end = p + v * h + 0.5 * a * h * h;
            if p_end >= distance {
                let rem = distance - p;
                let s = if a.abs() < 1e-15 { rem / v } else { (-v + (v * v + 2.0 * a * rem).max(0.0).sqrt()) / a };
                return Some(t + s);
            }
            p = p_end;
            v = match (saturates, a > 0.0) {
                (true, true) => v_max,
                (true, false) => 0.0,
                _ => (v + a * h).clamp(0.0, v_max),
            };
            t += h;
            left -= h;
        }
    }
    None
}

fn c4_minimal_arrival_time() -> Verdict {
    let bounds = Bounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap = f64::INFINITY;
    let mut worst_max_effort = 0.0_f64;
    let mut worst_plan = 0.0_f64;
    for _ in 0..200 {
        let v0 = rng.gen_range(0.0..=bounds.v_max);
        let d = rng.gen_range(10.0..=300.0);
        let t_min = minimal_arrival_time(v0, d, &bounds);

        let max_effort = arrival_time(v0, d, &[(bounds.u_max, 1e6)], bounds.v_max).expect("arrives");
        worst_max_effort = worst_max_effort.max((max_effort - t_min).abs());

        let plan = build_constrained_trajectory(VehicleState::new(0.0, 0.0, v0, 0.0), t_min, d, &bounds)
            .expect("max-effort plan");
        worst_plan = worst_plan.max((plan.state_at(t_min).position - d).abs());

        for _ in 0..1000 {
            let mut profile = Vec::new();
            let mut total = 0.0;
            while total < 2.0 * t_min + 1.0 {
                let u = if rng.gen_bool(0.5) { bounds.u_max } else { rng.gen_range(bounds.u_min..=bounds.u_max) };
                let dur = rng.gen_range(0.01..2.0);
                profile.push((u, dur));
                total += dur;
            }
            if let Some(t) = arrival_time(v0, d, &profile, bounds.v_max) {
                worst_gap = worst_gap.min(t - t_min);
            }
        }
    }
    verdict(
        worst_gap >= -PROFILE_TOL && worst_max_effort <= ARRIVAL_TOL && worst_plan <= ARRIVAL_TOL,
        format!(
            "earliest sampled arrival - minimum = {worst_gap:.3e} s, max-effort error {worst_max_effort:.1e} s, plan miss {worst_plan:.1e} m"
        ),
    )
}

/// Brute-force earliest feasible exit on a fine grid, with an independent
/// coefficient solve and pointwise checks.
fn brute_force_exit(
    state: VehicleState,
    p_light: f64,
    p_exit: f64,
    bounds: &Bounds,
    green: &[GreenWindow],
    leader: Option<(&dyn Motion, f64)>,
    t_cap: f64,
) -> Option<f64> {
    let steps = (t_cap / BRUTE_GRID).round() as usize;
    for j in 1..=steps {
        let h = j as f64 * BRUTE_GRID;
        let m = Matrix4::new(
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 1.0, 0.0, //
            h * h * h, h * h, h, 1.0, //
            6.0 * h, 2.0, 0.0, 0.0,
        );
        let Some(k) = m.lu().solve(&Vector4::new(state.position, state.velocity, p_exit, 0.0)) else { continue };
        let (a, b, c, d) = (k[0], k[1], k[2], k[3]);
        let pos = |s: f64| ((a * s + b) * s + c) * s + d;
        let vel = |s: f64| (3.0 * a * s + 2.0 * b) * s + c;
        let (u0, u1) = (2.0 * b, 6.0 * a * h + 2.0 * b);
        if u0.min(u1) < bounds.u_min - ORACLE_BOUNDS_TOL || u0.max(u1) > bounds.u_max + ORACLE_BOUNDS_TOL {
            continue;
        }
        let mut vs = vec![vel(0.0), vel(h)];
        if a != 0.0 {
            let s = -b / (3.0 * a);
            if s > 0.0 && s < h {
                vs.push(vel(s));
            }
        }
        let (vlo, vhi) = vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if vlo < bounds.v_min - ORACLE_BOUNDS_TOL || vhi > bounds.v_max + ORACLE_BOUNDS_TOL {
            continue;
        }
        if state.position < p_light {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if pos(mid) >= p_light {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t_light = state.time + hi;
            if !green.iter().any(|w| t_light >= w.start && t_light <= w.end) {
                continue;
            }
        }
        if let Some((motion, gamma)) = leader {
            let end = (state.time + h).min(motion.exit_time());
            let n = ((end - state.time) / REAR_GRID).ceil().max(0.0) as usize;
            let safe = (0..=n).all(|i| {
                let t = (state.time + i as f64 * REAR_GRID).min(end);
                let s = t - state.time;
                let gap = motion.state_at(t).position - pos(s);
                gap >= bounds.reaction_time * vel(s).max(0.0) + gamma - REAR_TOL
            });
            if !safe {
                continue;
            }
        }
        return Some(state.time + h);
    }
    None
}

fn cruise(p0: f64, v: f64, p_exit: f64) -> Trajectory {
    let t_exit = (p_exit - p0) / v;
    let seg = ConstAccelSegment::new(0.0, p0, v, 0.0, t_exit).expect("positive");
    let landmarks = Landmarks { p_start: p0, p_light: f64::NAN, p_exit, t_light: None, t_exit: Some(t_exit) };
    Trajectory::new(vec![Segment::ConstAccel(seg)], landmarks).expect("trajectory")
}

fn c5_search_gap() -> Verdict {
    let bounds = Bounds::default();
    let (p_light, p_exit, t_cap) = (270.0, 300.0, 120.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut scenarios, mut worst, mut bad) = (0, f64::NEG_INFINITY, Vec::new());
    while scenarios < 100 {
        let state = VehicleState::new(0.0, rng.gen_range(0.0..200.0), rng.gen_range(2.0..=bounds.v_max), 0.0);
        let g1 = rng.gen_range(0.0..30.0);
        let g2 = g1 + rng.gen_range(3.0..20.0);
        let g3 = g2 + rng.gen_range(10.0..40.0);
        let green = vec![GreenWindow::new(g1, g2), GreenWindow::new(g3, g3 + rng.gen_range(3.0..20.0))];
        let leader = rng.gen_bool(0.5).then(|| {
            let v = rng.gen_range(3.0..15.0);
            let gap = bounds.reaction_time * state.velocity + 3.0 + rng.gen_range(0.0..40.0);
            cruise((state.position + gap).min(p_exit - 1.0), v, p_exit)
        });
        let leader_ref = leader.as_ref().map(|l| (l as &dyn Motion, 3.0));
        let Some(oracle) = brute_force_exit(state, p_light, p_exit, &bounds, &green, leader_ref, t_cap) else { continue };
        scenarios += 1;
        let ctx = PlanningContext {
            bounds,
            green: green.clone(),
            predecessor: leader.as_ref().map(|l| Predecessor { motion: l, gamma: 3.0 }),
            p_light,
            p_exit,
            search_step: SEARCH_STEP,
            check_grid: REAR_GRID,
            t_cap,
        };
        match algorithm1_search(&ctx, state) {
            Some(plan) => {
                let gap = plan.exit_time() - oracle;
                worst = worst.max(gap);
                if gap > SEARCH_STEP + 1e-9 {
                    bad.push(format!("{state:?} exit {} vs {oracle}", plan.exit_time()));
                }
            }
            None => bad.push(format!("{state:?} no plan, oracle {oracle}")),
        }
    }
    verdict(bad.is_empty(), format!("{scenarios} scenarios, worst excess {worst:.4} s, {} bad {:?}", bad.len(), bad.first()))
}

fn c6_safety_sweep() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut failures = Vec::new();
    let mut cells = 0;
    for cell in SIGNAL_CELLS {
        for pen in PENETRATIONS {
            let cfg = cell_config(&study(1), cell, pen);
            let path = dir.path().join(format!("{}_{pen}", cell.label()));
            match run(&cfg) {
                Ok(out) => {
                    emit(&out, &path).expect("emit");
                    let report = check_run(&read_run(&path).expect("read back"));
                    if !report.is_clean() || !out.metrics.complete {
                        failures.push(format!("{} p={pen}: {report:?}", cell.label()));
                    }
                }
                Err(e) => failures.push(format!("{} p={pen}: {e}", cell.label())),
            }
            cells += 1;
        }
    }
    verdict(failures.is_empty(), format!("{cells} cells checked, {} unsafe {:?}", failures.len(), failures.first()))
}

fn c7_split_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for _ in 0..10_000 {
        let t_cycle = rng.gen_range(13.0..120.0);
        let t_min = rng.gen_range(0.5..t_cycle / 4.0 - 0.1);
        let mut q = [0.0; PHASES];
        for x in &mut q {
            *x = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => f64::from(rng.gen_range(0..5u32)),
                _ => rng.gen_range(0.0..100.0),
            };
        }
        let (order, d) = next_cycle_split(&q, t_cycle, t_min).expect("valid cycle");
        let sum: f64 = d.iter().sum();
        let mut ok = (sum - t_cycle).abs() <= SPLIT_TOL && d.iter().all(|&x| x >= t_min - SPLIT_TOL);
        let mut seen = [false; PHASES];
        for &p in &order {
            ok &= !seen[p];
            seen[p] = true;
        }
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            ok &= q[a] > q[b] || (q[a] == q[b] && a < b);
            ok &= d[a] >= d[b] - SPLIT_TOL;
        }
        for a in 0..PHASES {
            for b in 0..PHASES {
                if q[a] == q[b] {
                    ok &= (d[a] - d[b]).abs() <= SPLIT_TOL;
                }
            }
        }
        bad += usize::from(!ok);
    }
    verdict(bad == 0, format!("10000 vectors, {bad} violations"))
}

fn c8_idm() -> Verdict {
    let bounds = Bounds::default();
    let params = IdmParams::default();
    let free = idm_acceleration(params.desired_speed, None, None, &params, &bounds).expect("free road");

    let worked = IdmParams { standstill: 2.0, ..IdmParams::default() };
    let u = idm_acceleration(10.0, Some(LeaderGap { gap: 30.0, speed: 10.0 }), None, &worked, &bounds).expect("worked");
    // 5 (1 - (10/15)^4 - (17/30)^2) with s* = 2 + 10 * 1.5
    let hand = 5.0 * (1.0 - 16.0 / 81.0 - 289.0 / 900.0);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut min_rule = 0.0_f64;
    for _ in 0..1000 {
        let v = rng.gen_range(0.0..20.0);
        let leader = LeaderGap { gap: rng.gen_range(0.5..100.0), speed: rng.gen_range(0.0..20.0) };
        let red = rng.gen_range(0.5..100.0);
        let both = idm_acceleration(v, Some(leader), Some(red), &params, &bounds).unwrap();
        let a = idm_acceleration(v, Some(leader), None, &params, &bounds).unwrap();
        let b = idm_acceleration(v, None, Some(red), &params, &bounds).unwrap();
        min_rule = min_rule.max((both - a.min(b)).abs());
    }
    verdict(
        free.abs() < IDM_EQ_TOL && (u - 2.407).abs() < IDM_WORKED_TOL && (u - hand).abs() < 1e-12 && min_rule == 0.0,
        format!("free-road u = {free:e}, worked u = {u:.4}, min-rule deviation {min_rule:e}"),
    )
}

fn c9_standby_energy() -> Verdict {
    let path = PathId::new(0, Turn::Through);
    let phase = phase_of_light(path.light());
    let mut order: Vec<usize> = (0..PHASES).filter(|&p| p != phase).collect();
    order.push(phase);
    // the own green opens only after the longest planning horizon from entry
    let cfg = ScenarioConfig {
        t_cycle: 200.0,
        first_cycle_order: order.try_into().expect("four phases"),
        first_cycle_durations: Some([100.0, 60.0, 37.0, 3.0]),
        vehicle_count: 1,
        ..ScenarioConfig::default()
    };
    let mut lines = Vec::new();
    let mut wins = 0;
    for k in 0..10 {
        let speed = 10.0 + 0.5 * k as f64;
        let energy = |class| {
            let a = vec![Arrival { id: 0, time: 0.0, path, class, speed }];
            let out = Engine::new(&cfg).expect("config").with_arrivals(a).with_trace(false).run().expect("run");
            let r = out.vehicles[0].clone();
            assert!(r.exit_time.is_some(), "vehicle did not exit");
            r
        };
        let cav = energy(VehicleClass::Cav);
        let hdv = energy(VehicleClass::Hdv);
        let matched = cav.standby_entries > 0 && hdv.stops > 0;
        wins += usize::from(matched && cav.energy < hdv.energy);
        lines.push(format!("{speed}: {:.2}/{:.2}", cav.energy, hdv.energy));
    }
    verdict(wins == 10, format!("{wins}/10 lower, cav/hdv energy {}", lines.join(" ")))
}

fn c10_determinism() -> Verdict {
    let cfg = ScenarioConfig { seed: 10, ..ScenarioConfig::default() };
    let dir = tempfile::tempdir().expect("tempdir");
    for name in ["a", "b"] {
        emit(&run(&cfg).expect("run"), &dir.path().join(name)).expect("emit");
    }
    let files = [TRACE_FILE, VEHICLES_FILE, SCHEDULE_FILE, METRICS_FILE, CONFIG_FILE];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let a = std::fs::read(dir.path().join("a").join(f)).expect("read");
            let b = std::fs::read(dir.path().join("b").join(f)).expect("read");
            a != b
        })
        .collect();
    verdict(differing.is_empty(), format!("{} files compared, differing {differing:?}", files.len()))
}
