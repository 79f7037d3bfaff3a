use proptest::prelude::*;

use intersim::check::check_run;
use intersim::config::ScenarioConfig;
use intersim::output::{emit, read_run};
use intersim::planner::GreenWindow;
use intersim::signal::{light_paths, phase_lights, Policy, LIGHTS};
use intersim::sim::{run, Arrival, Engine, VehicleClass};

fn small(seed: u64, penetration: f64, policy: Policy, t_cycle: f64) -> ScenarioConfig {
    ScenarioConfig { seed, penetration, policy, t_cycle, vehicle_count: 40, arrival_rate: 0.7, ..ScenarioConfig::default() }
}

fn windows(engine: &Engine) -> Vec<Vec<GreenWindow>> {
    (0..LIGHTS).map(|l| engine.signal().light_windows(l).to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn runs_pass_the_invariant_checker(
        seed in 1..1000u64,
        penetration in prop::sample::select(vec![0.0, 0.5, 0.7, 1.0]),
        fixed in any::<bool>(),
        t_cycle in prop::sample::select(vec![20.0, 30.0, 40.0]),
    ) {
        let policy = if fixed { Policy::Fixed } else { Policy::Adaptive };
        let out = run(&small(seed, penetration, policy, t_cycle)).unwrap();
        prop_assert!(out.metrics.complete);
        prop_assert!(out.breaches.is_empty());
        let dir = tempfile::tempdir().unwrap();
        emit(&out, dir.path()).unwrap();
        let report = check_run(&read_run(dir.path()).unwrap());
        prop_assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn identical_seeds_give_identical_runs(seed in 1..1000u64) {
        let cfg = small(seed, 0.5, Policy::Adaptive, 20.0);
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.vehicles, b.vehicles);
        prop_assert_eq!(a.schedule, b.schedule);
    }

    #[test]
    fn delivered_green_windows_are_never_changed(seed in 1..1000u64, t_cycle in prop::sample::select(vec![20.0, 40.0])) {
        let mut engine = Engine::new(&small(seed, 0.7, Policy::Adaptive, t_cycle)).unwrap();
        let mut before = windows(&engine);
        for _ in 0..20_000 {
            engine.step().unwrap();
            let now = windows(&engine);
            for (old, new) in before.iter().zip(&now) {
                prop_assert!(new.len() >= old.len());
                for (k, w) in old.iter().enumerate() {
                    prop_assert_eq!(new[k].start, w.start);
                    // merging with an abutting window may only extend the last one
                    prop_assert!(new[k].end == w.end || (k + 1 == old.len() && new[k].end > w.end));
                }
            }
            before = now;
        }
    }
}

#[test]
fn spaced_cavs_on_green_spend_exactly_their_cubic_energy() {
    let cfg = ScenarioConfig {
        penetration: 1.0,
        t_cycle: 400.0,
        first_cycle_durations: Some([391.0, 3.0, 3.0, 3.0]),
        vehicle_count: 6,
        ..ScenarioConfig::default()
    };
    let paths: Vec<_> = phase_lights(0).into_iter().flat_map(light_paths).collect();
    let arrivals: Vec<Arrival> = (0..6)
        .map(|i| Arrival {
            id: i,
            time: 8.0 * f64::from(i),
            path: paths[i as usize % paths.len()],
            class: VehicleClass::Cav,
            speed: 10.0 + f64::from(i),
        })
        .collect();
    let out = Engine::new(&cfg).unwrap().with_arrivals(arrivals).run().unwrap();
    assert!(out.metrics.complete);
    let distance = cfg.zone_length;
    for r in &out.vehicles {
        assert_eq!(r.replans, 0, "vehicle {} replanned", r.vehicle_id);
        // a single cubic with zero terminal control has linear control
        let (v0, t) = (r.entry_speed, r.travel_time.unwrap());
        let u0 = 3.0 * (distance - v0 * t) / (t * t);
        let n = 100_000;
        let quad: f64 = (0..n)
            .map(|k| {
                let u = u0 * (1.0 - (k as f64 + 0.5) / n as f64);
                0.5 * u * u * t / n as f64
            })
            .sum();
        assert!((r.energy - quad).abs() < 1e-6 * quad.max(1.0), "vehicle {}: {} vs {quad}", r.vehicle_id, r.energy);
    }
}
