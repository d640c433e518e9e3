mod common;

use common::{random_instance, scalar_rollout};
use numgrad::{finite_diff_check, Array, Graph};
use platoon::apecg::*;
use platoon::data::DT;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plain(x: &common::Instance) -> RolloutResult {
    let theta = Theta::new(x.n, x.f / x.m, x.theta.clone()).unwrap();
    let xstar = ExpectedState {
        v_star: x.v_star.clone(),
        s_star: x.s_star.clone(),
    };
    rollout(&x.initial, &x.lead, &theta, &xstar, x.m, DT).unwrap()
}

#[test]
fn rollout_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let x = random_instance(&mut rng, 8, 40);
        let r = plain(&x);
        let (v, s) = scalar_rollout(&x, DT);
        for i in 0..v.len() {
            assert!((r.v[i] - v[i]).abs() <= 1e-12);
            assert!((r.s[i] - s[i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn rollout_is_kinematically_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_instance(&mut rng, 6, 40);
    let r = plain(&x);
    for i in 0..x.n {
        for k in 1..x.f {
            let o = i * x.f + k;
            assert!((r.v[o] - (r.v[o - 1] + DT * r.a[o])).abs() < 1e-12);
            assert!((r.s[o] - (r.s[o - 1] + DT * r.dv[o - 1])).abs() < 1e-12);
            let ahead = if i == 0 { x.lead[k] } else { r.v[o - x.f] };
            assert_eq!(r.dv[o], ahead - r.v[o]);
        }
    }
}

fn graph_rollout(x: &common::Instance, b: usize) -> (Vec<f64>, Vec<f64>) {
    let steps = x.f / x.m;
    let rep = |v: &[f64]| -> Vec<f64> { (0..b).flat_map(|_| v.iter().copied()).collect() };
    let col = |c: usize| rep(&x.initial.iter().map(|r| r[c]).collect::<Vec<_>>());
    let mut g = Graph::new();
    let mut c = |shape: Vec<usize>, data: Vec<f64>| g.constant(Array::new(shape, data).unwrap()).unwrap();
    let (n, f) = (x.n, x.f);
    let v0 = c(vec![b, n], col(0));
    let s0 = c(vec![b, n], col(1));
    let dv0 = c(vec![b, n], col(2));
    let lead = c(vec![b, f], rep(&x.lead));
    let theta = c(vec![b, n, steps, 3], rep(&x.theta));
    let vs = c(vec![b, n], rep(&x.v_star));
    let ss = c(vec![b, n], rep(&x.s_star));
    let r = rollout_graph(&mut g, v0, s0, dv0, lead, theta, vs, ss, x.m, DT).unwrap();
    (g.value(r.v).data().to_vec(), g.value(r.s).data().to_vec())
}

#[test]
fn graph_rollout_equals_plain_rollout() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let x = random_instance(&mut rng, 5, 20);
        let r = plain(&x);
        let (v, s) = graph_rollout(&x, 2);
        for bi in 0..2 {
            let len = x.n * x.f;
            assert_eq!(v[bi * len..(bi + 1) * len], r.v[..]);
            assert_eq!(s[bi * len..(bi + 1) * len], r.s[..]);
        }
    }
}

#[test]
fn rollout_gradient_wrt_raw_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_instance(&mut rng, 3, 10);
    let steps = x.f / x.m;
    let raw = Array::from_fn([1, x.n, steps, 3], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
    let report = finite_diff_check(&[raw], 1e-6, |g, vars| {
        let err = |e: platoon::Error| numgrad::Error::Invalid(e.to_string());
        let c = |g: &mut Graph, shape: Vec<usize>, d: Vec<f64>| g.constant(Array::new(shape, d).unwrap());
        let v0 = c(g, vec![1, x.n], x.initial.iter().map(|r| r[0]).collect())?;
        let s0 = c(g, vec![1, x.n], x.initial.iter().map(|r| r[1]).collect())?;
        let dv0 = c(g, vec![1, x.n], x.initial.iter().map(|r| r[2]).collect())?;
        let lead = c(g, vec![1, x.f], x.lead.clone())?;
        let vs = c(g, vec![1, x.n], x.v_star.clone())?;
        let ss = c(g, vec![1, x.n], x.s_star.clone())?;
        let theta = encode_graph(g, vars[0]).map_err(err)?;
        let r = rollout_graph(g, v0, s0, dv0, lead, theta, vs, ss, x.m, DT).map_err(err)?;
        let v2 = g.square(r.v)?;
        let s2 = g.square(r.s)?;
        let total = g.add(v2, s2)?;
        g.mean(total)
    })
    .unwrap();
    assert_eq!(report.skipped, 0);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn perturbations_decay_when_the_step_map_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    use rand::Rng;
    for _ in 0..50 {
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta = encode_parameters(&raw, 1, 1).unwrap();
        let f = 600;
        let xstar = ExpectedState {
            v_star: vec![15.0],
            s_star: vec![25.0],
        };
        let r = rollout(&[[15.3, 24.5, 0.0]], &vec![15.0; f], &theta, &xstar, f, DT).unwrap();
        // One-step map of the deviation, probed with unit perturbations.
        let step = |dv: f64, ds: f64| {
            let o = rollout(&[[15.0 + dv, 25.0 + ds, 0.0]], &[15.0], &theta, &xstar, 1, DT).unwrap();
            (o.v[0] - 15.0, o.s[0] - 25.0)
        };
        let ((a, c), (b, d)) = (step(1.0, 0.0), step(0.0, 1.0));
        let (tr, det) = (a + d, a * d - b * c);
        let disc = tr * tr / 4.0 - det;
        let radius = if disc >= 0.0 {
            (tr / 2.0).abs() + disc.sqrt()
        } else {
            det.sqrt()
        };
        let dev = |k: usize| (r.v[k] - 15.0).abs() + (r.s[k] - 25.0).abs();
        if radius.powi(f as i32) < 0.1 {
            assert!(dev(f - 1) < dev(0), "theta {:?}", theta.values);
        }
        if radius.powi(f as i32) < 1e-4 {
            assert!(dev(f - 1) < 1e-2 * dev(0), "theta {:?} radius {radius}", theta.values);
        }
        assert!(r.v.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn equilibrium_stays_fixed_for_every_vehicle() {
    let theta = Theta::constant(4, 4, [-0.3, 0.2, 0.6]);
    let xstar = ExpectedState {
        v_star: vec![12.0; 4],
        s_star: vec![18.0; 4],
    };
    let r = rollout(&[[12.0, 18.0, 0.0]; 4], &[12.0; 20], &theta, &xstar, 5, DT).unwrap();
    assert!(r.a.iter().all(|a| *a == 0.0));
    assert!(r.v.iter().all(|v| *v == 12.0) && r.s.iter().all(|s| *s == 18.0));
}

#[test]
fn horizon_must_be_a_multiple_of_the_stride() {
    assert!(check_horizon(20, 5).is_ok());
    assert!(matches!(check_horizon(20, 3), Err(platoon::Error::Config(_))));
    let theta = Theta::constant(1, 7, [-0.3, 0.2, 0.6]);
    let xstar = ExpectedState {
        v_star: vec![0.0],
        s_star: vec![0.0],
    };
    assert!(rollout(&[[0.0, 1.0, 0.0]], &[0.0; 20], &theta, &xstar, 3, DT).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn encoded_signs_hold(raw in proptest::collection::vec(-1e4f64..1e4, 3..=60)) {
        let len = raw.len() / 3 * 3;
        let t = encode_parameters(&raw[..len], 1, len / 3).unwrap();
        prop_assert!(t.signs_hold());
    }

    #[test]
    fn expected_state_is_the_history_mean(rows in proptest::collection::vec((0.0f64..40.0, 0.5f64..80.0, -5.0f64..5.0), 1..30)) {
        let p = rows.len();
        let hist: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
        let x = expected_state(&hist, 1, p);
        let mv = rows.iter().map(|r| r.0).sum::<f64>() / p as f64;
        let ms = rows.iter().map(|r| r.1).sum::<f64>() / p as f64;
        prop_assert!((x.v_star[0] - mv).abs() < 1e-12 && (x.s_star[0] - ms).abs() < 1e-12);
        prop_assert_eq!(x.dv_star(0), 0.0);
    }
}
