//! Gradient checks for every primitive against central finite differences.

use numgrad::{finite_diff_check, forward_backward, Array, Graph, Mask, Result, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Contracts an arbitrary output with fixed random weights so every output
/// entry contributes a distinct cotangent.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(out), -1.0, 1.0);
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn check<F>(inputs: &[Array], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let report = finite_diff_check(inputs, STEP, |g, v| {
        let out = f(g, v)?;
        weighted_sum(g, out, seed)
    })
    .unwrap();
    assert_eq!(report.skipped, 0);
    report.max_rel_error
}

#[test]
fn square_at_three() {
    let (out, grads) = forward_backward(&[Array::scalar(3.0)], None, |g, v| g.mul(v[0], v[0])).unwrap();
    assert_eq!(out.item(), 9.0);
    assert_eq!(grads[0].item(), 6.0);
    let r = finite_diff_check(&[Array::scalar(3.0)], STEP, |g, v| g.mul(v[0], v[0])).unwrap();
    assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
}

#[test]
fn softplus_at_zero() {
    let (out, grads) = forward_backward(&[Array::scalar(0.0)], None, |g, v| g.softplus(v[0])).unwrap();
    assert!((out.item() - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(grads[0].item(), 0.5);
}

#[test]
fn matmul_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[2, 2], -1.0, 1.0);
    let b = random(&mut rng, &[2, 2], -1.0, 1.0);
    let r = finite_diff_check(&[a, b], STEP, |g, v| {
        let p = g.matmul(v[0], v[1])?;
        g.sum(p)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-5);
}

#[test]
fn single_element_softmax_is_constant() {
    let r = finite_diff_check(&[Array::new([1, 1], vec![0.3]).unwrap()], STEP, |g, v| {
        let s = g.softmax(v[0])?;
        g.sum(s)
    })
    .unwrap();
    assert_eq!(r.max_rel_error, 0.0);
    let (out, grads) = forward_backward(&[Array::new([1, 1], vec![0.3]).unwrap()], None, |g, v| {
        let s = g.softmax(v[0])?;
        g.sum(s)
    })
    .unwrap();
    assert_eq!(out.item(), 1.0);
    assert_eq!(grads[0].item(), 0.0);
}

#[test]
fn masked_softmax_rows() {
    let mut g = Graph::new();
    let x = g.constant(Array::from_fn([2, 3, 3], |i| (i as f64).sin())).unwrap();
    let mask = Mask::new(3, 3, vec![true, false, false, true, true, false, false, false, false]).unwrap();
    let y = g.masked_softmax(x, &mask).unwrap();
    let y = g.value(y);
    for b in 0..2 {
        assert!((y.get(&[b, 0, 0]) - 1.0).abs() < 1e-15);
        assert_eq!(y.get(&[b, 0, 1]), 0.0);
        let row1 = y.get(&[b, 1, 0]) + y.get(&[b, 1, 1]);
        assert!((row1 - 1.0).abs() < 1e-15);
        assert_eq!(y.get(&[b, 1, 2]), 0.0);
        // Fully masked row.
        for j in 0..3 {
            assert_eq!(y.get(&[b, 2, j]), 0.0);
        }
    }
}

#[test]
fn shape_mismatch_names_both_operands() {
    let mut g = Graph::new();
    let a = g.constant(Array::zeros([2, 3])).unwrap();
    let b = g.constant(Array::zeros([4])).unwrap();
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
}

#[test]
fn non_finite_names_the_primitive() {
    let mut g = Graph::new();
    let a = g.constant(Array::scalar(-1.0)).unwrap();
    let err = g.log(a).unwrap_err();
    assert_eq!(err, numgrad::Error::NonFinite { op: "log" });
    assert!(g.constant(Array::scalar(f64::NAN)).is_err());
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[4, 2], -1.0, 1.0)];
    let build = |g: &mut Graph, v: &[Var]| {
        let m = g.matmul(v[0], v[1])?;
        let t = g.tanh(m)?;
        let s = g.softmax(t)?;
        weighted_sum(g, s, 11)
    };
    let first = forward_backward(&inputs, None, build).unwrap();
    let second = forward_backward(&inputs, None, build).unwrap();
    assert_eq!(first, second);
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..4, 1usize..5, 1usize..5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_primitives((a, b, c, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [a, b, c];
        let x = random(&mut rng, &shape, -2.0, 2.0);
        let y = random(&mut rng, &[c], 0.5, 2.0);
        let ops: Vec<(&str, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>)> = vec![
            ("exp", Box::new(|g, v| g.exp(v[0]))),
            ("softplus", Box::new(|g, v| g.softplus(v[0]))),
            ("sigmoid", Box::new(|g, v| g.sigmoid(v[0]))),
            ("silu", Box::new(|g, v| g.silu(v[0]))),
            ("tanh", Box::new(|g, v| g.tanh(v[0]))),
            ("square", Box::new(|g, v| g.square(v[0]))),
            ("neg", Box::new(|g, v| g.neg(v[0]))),
            ("scale", Box::new(|g, v| g.scale(v[0], -1.7))),
            ("add_scalar", Box::new(|g, v| g.add_scalar(v[0], 0.3))),
            ("log", Box::new(|g, v| g.log(v[1]))),
            ("add", Box::new(|g, v| g.add(v[0], v[1]))),
            ("sub", Box::new(|g, v| g.sub(v[1], v[0]))),
            ("mul", Box::new(|g, v| g.mul(v[0], v[1]))),
            ("div", Box::new(|g, v| g.div(v[0], v[1]))),
        ];
        for (name, op) in &ops {
            let err = check(&[x.clone(), y.clone()], seed ^ 1, op);
            prop_assert!(err < TOL, "{name}: {err}");
        }
    }

    #[test]
    fn linear_algebra_primitives((a, b, c, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c], -1.0, 1.0);
        let w = random(&mut rng, &[c, b + 1], -1.0, 1.0);
        let err = check(&[x.clone(), w], seed, |g, v| g.matmul(v[0], v[1]));
        prop_assert!(err < TOL, "matmul: {err}");

        let y = random(&mut rng, &[a, c, b + 2], -1.0, 1.0);
        let err = check(&[x.clone(), y], seed, |g, v| g.bmm(v[0], v[1], false));
        prop_assert!(err < TOL, "bmm: {err}");

        let z = random(&mut rng, &[a, b + 2, c], -1.0, 1.0);
        let err = check(&[x, z], seed, |g, v| g.bmm(v[0], v[1], true));
        prop_assert!(err < TOL, "bmm^T: {err}");
    }

    #[test]
    fn normalisation_and_softmax((a, b, c, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c + 1], -2.0, 2.0);
        for (name, f) in [
            ("softmax", Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0])) as Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>),
            ("rms_norm", Box::new(|g: &mut Graph, v: &[Var]| g.rms_norm(v[0], 1e-5))),
            ("layer_norm", Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], 1e-5))),
        ] {
            let err = check(std::slice::from_ref(&x), seed, f);
            prop_assert!(err < TOL, "{name}: {err}");
        }
        let sq = random(&mut rng, &[a, b, b], -2.0, 2.0);
        let mask = Mask::causal(b);
        let err = check(&[sq], seed, |g, v| g.masked_softmax(v[0], &mask));
        prop_assert!(err < TOL, "masked_softmax: {err}");
    }

    #[test]
    fn structural_primitives((a, b, c, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c], -1.0, 1.0);
        let y = random(&mut rng, &[a, 2, c], -1.0, 1.0);
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>)> = vec![
            ("reshape", Box::new(move |g, v| g.reshape(v[0], &[a * b, c]))),
            ("permute", Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
            ("slice", Box::new(move |g, v| g.slice(v[0], 1, b - 1, 1))),
            ("concat", Box::new(|g, v| g.concat(&[v[0], v[1], v[0]], 1))),
            ("broadcast_to", Box::new(move |g, v| {
                let s = g.slice(v[0], 0, 0, 1)?;
                g.broadcast_to(s, &[a + 1, b, c])
            })),
            ("sum", Box::new(|g, v| g.sum(v[0]))),
            ("mean", Box::new(|g, v| g.mean(v[0]))),
            ("sum_axis", Box::new(|g, v| g.sum_axis(v[0], 1))),
            ("mean_axis", Box::new(|g, v| g.mean_axis(v[0], 2))),
        ];
        for (name, f) in &cases {
            let err = check(&[x.clone(), y.clone()], seed, f);
            prop_assert!(err < TOL, "{name}: {err}");
        }
    }

    #[test]
    fn sequence_primitives((s, p, e, seed) in shape_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 3) as usize;
        let k = 1 + (seed % 4) as usize;
        let x = random(&mut rng, &[s, p, e], -1.0, 1.0);
        let w = random(&mut rng, &[e, k], -1.0, 1.0);
        let bias = random(&mut rng, &[e], -1.0, 1.0);
        let err = check(&[x.clone(), w, bias], seed, |g, v| g.causal_conv1d(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "causal_conv1d: {err}");

        let delta = random(&mut rng, &[s, p, e], 0.05, 1.0);
        let bm = random(&mut rng, &[s, p, n], -1.0, 1.0);
        let cm = random(&mut rng, &[s, p, n], -1.0, 1.0);
        let am = random(&mut rng, &[e, n], -2.0, -0.1);
        let dm = random(&mut rng, &[e], -1.0, 1.0);
        let err = check(&[x, delta, bm, cm, am, dm], seed, |g, v| {
            g.ssm_scan(v[0], v[1], v[2], v[3], v[4], v[5])
        });
        prop_assert!(err < TOL, "ssm_scan: {err}");
    }
}
