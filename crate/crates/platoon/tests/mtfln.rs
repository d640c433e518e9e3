use std::collections::BTreeMap;

use numgrad::{Array, Graph};
use platoon::data::{generate_synthetic_platoons, NormStats, PlatoonRecord, StateWindow, SynthConfig};
use platoon::mtfln::*;

fn records() -> Vec<PlatoonRecord> {
    let cfg = SynthConfig {
        count: 2,
        followers: 6,
        ..SynthConfig::default()
    };
    generate_synthetic_platoons(&cfg, 21).unwrap().records
}

fn window(cfg: &ModelConfig, t: usize) -> StateWindow {
    StateWindow::at(&records()[0], t, cfg.p, cfg.f)
}

fn params(cfg: &ModelConfig) -> ModelParams {
    let w = window(cfg, 40);
    ModelParams::init(cfg, NormStats::from_windows(&[w]), 5).unwrap()
}

fn run(params: &ModelParams, windows: &[&StateWindow]) -> (Graph, Forward) {
    let mut g = Graph::new();
    let bound = params.bind_constants(&mut g).unwrap();
    let batch = Batch::from_windows(windows, &params.norm).unwrap();
    let fwd = forward(&mut g, &bound, &params.config, &batch, None).unwrap();
    (g, fwd)
}

/// Keeps only the first `n` followers of a window.
fn prefix(w: &StateWindow, n: usize) -> StateWindow {
    StateWindow {
        n,
        history: w.history[..n * w.p * 3].to_vec(),
        targets: w.targets[..n * w.f * 2].to_vec(),
        ..w.clone()
    }
}

#[test]
fn default_config_shapes() {
    let cfg = ModelConfig::default();
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g, fwd) = run(&p, &[&w]);
    assert_eq!(g.shape(fwd.h_tfl), &[6, 21, 64]);
    assert_eq!(g.shape(fwd.mu), &[6, 64]);
    assert_eq!(g.shape(fwd.h_pfl), &[1, 6, 64]);
    assert_eq!(g.shape(fwd.theta), &[1, 6, 4, 3]);
    assert_eq!(g.shape(fwd.v), &[1, 6, 20]);
}

#[test]
fn embedding_fixtures() {
    let mut g = Graph::new();
    let x = g.constant(Array::from_fn([2, 4, 3], |i| i as f64 * 0.5 - 3.0)).unwrap();
    let zero = Bound {
        vars: BTreeMap::from([
            ("embed.w".to_string(), g.constant(Array::zeros([3, 5])).unwrap()),
            ("embed.b".to_string(), g.constant(Array::zeros([5])).unwrap()),
        ]),
    };
    let e = embed_inputs(&mut g, &zero, x).unwrap();
    assert!(g.value(e).data().iter().all(|v| *v == 0.0));
    let eye = Bound {
        vars: BTreeMap::from([
            (
                "embed.w".to_string(),
                g.constant(Array::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 })).unwrap(),
            ),
            ("embed.b".to_string(), g.constant(Array::zeros([3])).unwrap()),
        ]),
    };
    let e = embed_inputs(&mut g, &eye, x).unwrap();
    assert_eq!(g.value(e), g.value(x));
}

#[test]
fn sequence_block_is_causal_in_time() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g0, f0) = run(&p, &[&w]);
    let base = g0.value(f0.h_tfl).clone();
    for t_star in [5, 13, 20] {
        let mut w2 = w.clone();
        for i in 0..w.n {
            w2.history[(i * w.p + t_star) * 3] += 0.7;
        }
        let (g1, f1) = run(&p, &[&w2]);
        let h = g1.value(f1.h_tfl);
        for i in 0..w.n {
            for t in 0..w.p {
                let same = (0..cfg.d_m).all(|c| h.get(&[i, t, c]) == base.get(&[i, t, c]));
                assert_eq!(same, t < t_star, "vehicle {i} step {t} after perturbing {t_star}");
            }
        }
    }
}

#[test]
fn identical_histories_give_identical_rows() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let mut w = window(&cfg, 60);
    let row = w.p * 3;
    let first = w.history[..row].to_vec();
    w.history[2 * row..3 * row].copy_from_slice(&first);
    let (g, f) = run(&p, &[&w]);
    let h = g.value(f.h_tfl);
    for t in 0..w.p {
        for c in 0..cfg.d_m {
            assert_eq!(h.get(&[0, t, c]), h.get(&[2, t, c]));
        }
    }
    assert_eq!(g.value(f.mu).get(&[0, 3]), g.value(f.mu).get(&[2, 3]));
}

#[test]
fn variational_encoder_reparameterisation() {
    let cfg = ModelConfig::desk();
    let mut p = params(&cfg);
    for name in ["ful.logvar.w", "ful.logvar.b"] {
        let shape = p.tensors[name].shape().to_vec();
        p.tensors.insert(name.to_string(), Array::zeros(shape));
    }
    let mut g = Graph::new();
    let bound = p.bind_constants(&mut g).unwrap();
    let h = g.constant(Array::from_fn([3, cfg.d_m], |i| (i as f64 * 0.37).sin())).unwrap();
    let zeros = Array::zeros([3, cfg.d_m]);
    let (mu, _, out) = ful_forward(&mut g, &bound, &cfg, h, Some(&zeros)).unwrap();
    assert_eq!(g.value(mu), g.value(out));
    let z = sample_noise([3, cfg.d_m], 9);
    assert_eq!(z, sample_noise([3, cfg.d_m], 9));
    let (mu, lv, out) = ful_forward(&mut g, &bound, &cfg, h, Some(&z)).unwrap();
    assert!(g.value(lv).data().iter().all(|x| *x == 0.0));
    for i in 0..z.len() {
        assert_eq!(g.value(out).data()[i], g.value(mu).data()[i] + z.data()[i]);
    }
}

#[test]
fn single_vehicle_attends_to_itself() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = prefix(&window(&cfg, 40), 1);
    let (g, f) = run(&p, &[&w]);
    for a in &f.attention[..cfg.attn_layers] {
        assert!(g.value(*a).data().iter().all(|x| *x == 1.0));
    }
}

#[test]
fn attention_rows_sum_to_one_over_earlier_vehicles() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g, f) = run(&p, &[&w]);
    for a in &f.attention[..cfg.attn_layers] {
        let v = g.value(*a);
        let (groups, lq, lk) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        for h in 0..groups {
            for q in 0..lq {
                let row: Vec<f64> = (0..lk).map(|k| v.get(&[h, q, k])).collect();
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row[q + 1..].iter().all(|x| *x == 0.0));
            }
        }
    }
}

#[test]
fn later_vehicles_do_not_influence_earlier_ones() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g0, f0) = run(&p, &[&w]);
    let base = g0.value(f0.theta).clone();
    for n in [2, 4] {
        let mut w2 = w.clone();
        for k in 0..w.p {
            w2.history[(n * w.p + k) * 3 + 1] += 1.5;
        }
        let (g1, f1) = run(&p, &[&w2]);
        let th = g1.value(f1.theta);
        for i in 0..w.n {
            let same = (0..4).all(|j| (0..3).all(|c| th.get(&[0, i, j, c]) == base.get(&[0, i, j, c])));
            assert_eq!(same, i < n, "vehicle {i} after perturbing {n}");
        }
    }
}

#[test]
fn prefix_platoons_share_outputs() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 50);
    let (g6, f6) = run(&p, &[&w]);
    for n in 1..=6 {
        let (gn, fnn) = run(&p, &[&prefix(&w, n)]);
        let (a, b) = (gn.value(fnn.theta), g6.value(f6.theta));
        for i in 0..n {
            for j in 0..4 {
                for c in 0..3 {
                    assert!((a.get(&[0, i, j, c]) - b.get(&[0, i, j, c])).abs() < 1e-12);
                }
            }
        }
    }
    let longer = StateWindow::at(&records()[1], 50, cfg.p, cfg.f);
    assert_eq!(longer.n, 6);
    let mut eight = longer.clone();
    eight.n = 8;
    eight.history.extend_from_slice(&w.history[..2 * w.p * 3]);
    eight.targets.extend_from_slice(&w.targets[..2 * w.f * 2]);
    let (g8, f8) = run(&p, &[&eight]);
    assert_eq!(g8.shape(f8.theta), &[1, 8, 4, 3]);
}

#[test]
fn single_history_step_gives_unit_cross_attention() {
    let cfg = ModelConfig {
        p: 1,
        ..ModelConfig::desk()
    };
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g, f) = run(&p, &[&w]);
    assert_eq!(f.attention.len(), 2 * cfg.attn_layers);
    for a in &f.attention[cfg.attn_layers..] {
        assert_eq!(g.value(*a).shape()[2], 1);
        assert!(g.value(*a).data().iter().all(|x| *x == 1.0));
    }
}

#[test]
fn parameter_steps_are_distinguished_by_time_encoding() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 40);
    let (g, f) = run(&p, &[&w]);
    let raw = g.value(f.raw);
    for i in 0..w.n {
        for a in 0..4 {
            for b in a + 1..4 {
                let diff = (0..3).map(|c| (raw.get(&[0, i, a, c]) - raw.get(&[0, i, b, c])).abs()).fold(0.0, f64::max);
                assert!(diff > 1e-9, "vehicle {i} steps {a} and {b}");
            }
        }
    }
    let te = sinusoidal(0..4, cfg.d_m);
    assert_eq!(te.get(&[0, 0]), 0.0);
    assert_eq!(te.get(&[0, 1]), 1.0);
}

#[test]
fn eval_mode_is_deterministic_and_signed() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let w = window(&cfg, 70);
    let (r1, l1, t1) = model_forward(&w, &p, Mode::Eval).unwrap();
    let (r2, l2, t2) = model_forward(&w, &p, Mode::Eval).unwrap();
    assert_eq!((r1, l1, &t1), (r2, l2, &t2));
    assert!(t1.signs_hold());
    let (s1, _, _) = model_forward(&w, &p, Mode::Train { seed: 3 }).unwrap();
    let (s2, _, _) = model_forward(&w, &p, Mode::Train { seed: 3 }).unwrap();
    let (s3, _, _) = model_forward(&w, &p, Mode::Train { seed: 4 }).unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1, s3);
}

#[test]
fn batched_prediction_matches_single_windows() {
    let cfg = ModelConfig::desk();
    let p = params(&cfg);
    let recs = records();
    let ws: Vec<StateWindow> = (20..30).map(|t| StateWindow::at(&recs[t % 2], t * 3, cfg.p, cfg.f)).collect();
    let all = predict_all(&ws, &p, 3).unwrap();
    for (w, (r, th)) in ws.iter().zip(&all) {
        let (r1, _, t1) = model_forward(w, &p, Mode::Eval).unwrap();
        for (a, b) in r.v.iter().zip(&r1.v) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in th.values.iter().zip(&t1.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
