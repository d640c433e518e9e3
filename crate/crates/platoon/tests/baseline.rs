use platoon::baseline::*;
use platoon::data::{LeadProfile, DT};
use proptest::prelude::*;

fn observed(truth: IdmParams, steps: usize) -> Observation {
    let lead = LeadProfile::Sinusoidal {
        mean: 16.0,
        amplitude: 3.0,
        period: 9.0,
        phase: 0.0,
    }
    .speeds(steps, DT);
    let gap = truth.equilibrium_gap(16.0);
    let init = [
        VehicleInit {
            position: 4.5 + gap,
            speed: 16.0,
        },
        VehicleInit {
            position: 0.0,
            speed: 16.0,
        },
    ];
    let sim = simulate_idm_platoon("O", &lead, &init, &[4.5, 4.5], &[truth], DT).unwrap();
    assert!(sim.collision.is_none());
    observation(&sim.record, 1, 0, steps).unwrap()
}

fn quick() -> GaConfig {
    GaConfig {
        population: 20,
        generations: 15,
        ..GaConfig::default()
    }
}

#[test]
fn calibration_is_deterministic_under_seed() {
    let obs = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 200);
    let a = calibrate_ga(&obs, &Bounds::default(), &quick(), 5).unwrap();
    let b = calibrate_ga(&obs, &Bounds::default(), &quick(), 5).unwrap();
    assert_eq!(a, b);
    let c = calibrate_ga(&obs, &Bounds::default(), &quick(), 6).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn calibration_is_thread_count_independent() {
    let obs = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 150);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| calibrate_ga(&obs, &Bounds::default(), &quick(), 3).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn zero_budget_returns_the_best_initial_individual() {
    let obs = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 100);
    let cfg = GaConfig {
        generations: 0,
        ..GaConfig::default()
    };
    let c = calibrate_ga(&obs, &Bounds::default(), &cfg, 1).unwrap();
    assert_eq!(c.generations_used, 0);
    assert_eq!(c.best_history, vec![c.fitness]);
    let longer = calibrate_ga(&obs, &Bounds::default(), &quick(), 1).unwrap();
    assert!(longer.best_history[0] >= longer.fitness);
}

#[test]
fn best_fitness_never_increases_and_matches_reevaluation() {
    let obs = observed(IdmParams::new(27.0, 1.8, 1.6, 1.3, 2.0), 200);
    let c = calibrate_ga(&obs, &Bounds::default(), &quick(), 11).unwrap();
    assert_eq!(c.best_history.len(), 16);
    assert!(c.best_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(fitness(&obs, &c.params), c.fitness);
    let b = Bounds::default();
    let x = c.params.to_array();
    assert!((0..5).all(|j| x[j] >= b.lo[j] && x[j] <= b.hi[j]));
}

#[test]
fn true_parameters_have_zero_fitness() {
    let truth = IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7);
    let obs = observed(truth, 200);
    assert!(fitness(&obs, &truth) < 1e-9);
    assert!(fitness(&obs, &IdmParams::new(20.0, 2.5, 4.0, 0.6, 0.6)) > 0.1);
}

#[test]
fn calibration_result_serialises_with_the_declared_keys() {
    let obs = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 100);
    let c = calibrate_ga(&obs, &Bounds::default(), &quick(), 1).unwrap();
    let v: serde_json::Value = serde_json::to_value(&c).unwrap();
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["fitness", "generations_used", "params", "vehicle_index"]);
    assert!(v["params"].get("T").is_some());
}

#[test]
fn degenerate_observations_are_rejected() {
    let mut obs = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 50);
    obs.position[10] = obs.leader_position[10];
    assert!(calibrate_ga(&obs, &Bounds::default(), &quick(), 1).is_err());
    let short = observed(IdmParams::new(30.0, 1.4, 2.2, 1.1, 1.7), 50);
    let one = Observation {
        leader_position: short.leader_position[..1].to_vec(),
        leader_speed: short.leader_speed[..1].to_vec(),
        position: short.position[..1].to_vec(),
        speed: short.speed[..1].to_vec(),
        ..short
    };
    assert!(calibrate_ga(&one, &Bounds::default(), &quick(), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn idm_acceleration_is_continuous(v in 0.0f64..35.0, s in 0.5f64..80.0, dv in -5.0f64..5.0) {
        let p = IdmParams::new(30.0, 1.5, 2.0, 1.2, 1.8);
        let h = 1e-7;
        let a = idm_acceleration(v, s, dv, &p).unwrap();
        for (dv_, ds_, ddv_) in [(h, 0.0, 0.0), (0.0, h, 0.0), (0.0, 0.0, h)] {
            let b = idm_acceleration(v + dv_, s + ds_, dv + ddv_, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-3, "jump {} at ({v}, {s}, {dv})", (a - b).abs());
        }
    }

    #[test]
    fn desired_gap_never_drops_below_jam_distance(v in 0.0f64..35.0, dv in -20.0f64..20.0) {
        let p = IdmParams::new(30.0, 1.5, 2.0, 1.2, 1.8);
        prop_assert!(p.desired_gap(v, dv) >= p.s0);
    }
}
