//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

/// Random rollout inputs.
pub struct Instance {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub initial: Vec<[f64; 3]>,
    pub lead: Vec<f64>,
    /// `(N, F/m, 3)` row-major.
    pub theta: Vec<f64>,
    pub v_star: Vec<f64>,
    pub s_star: Vec<f64>,
}

pub fn random_instance(rng: &mut impl Rng, max_n: usize, max_f: usize) -> Instance {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=5);
    let f = m * rng.gen_range(1..=max_f / m);
    let steps = f / m;
    Instance {
        n,
        f,
        m,
        initial: (0..n)
            .map(|_| [rng.gen_range(0.0..30.0), rng.gen_range(1.0..60.0), rng.gen_range(-3.0..3.0)])
            .collect(),
        lead: (0..f).map(|_| rng.gen_range(0.0..30.0)).collect(),
        theta: (0..n * steps)
            .flat_map(|_| [-rng.gen_range(0.01..2.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..2.0)])
            .collect(),
        v_star: (0..n).map(|_| rng.gen_range(0.0..30.0)).collect(),
        s_star: (0..n).map(|_| rng.gen_range(1.0..60.0)).collect(),
    }
}

/// Scalar step-by-step rollout, one vehicle at a time. Returns `(v, s)`,
/// each `(N, F)`.
pub fn scalar_rollout(x: &Instance, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let steps = x.f / x.m;
    let mut v_out = vec![0.0; x.n * x.f];
    let mut s_out = vec![0.0; x.n * x.f];
    for i in 0..x.n {
        let (mut v, mut s, mut dv) = (x.initial[i][0], x.initial[i][1], x.initial[i][2]);
        for k in 0..x.f {
            let o = (i * steps + k / x.m) * 3;
            let (fv, fs, fdv) = (x.theta[o], x.theta[o + 1], x.theta[o + 2]);
            let a = fv * (v - x.v_star[i]) + fs * (s - x.s_star[i]) + fdv * (dv - 0.0);
            let v_next = v + dt * a;
            let s_next = s + dt * dv;
            let ahead = if i == 0 { x.lead[k] } else { v_out[(i - 1) * x.f + k] };
            v = v_next;
            s = s_next;
            dv = ahead - v_next;
            v_out[i * x.f + k] = v;
            s_out[i * x.f + k] = s;
        }
    }
    (v_out, s_out)
}

/// Steady-state amplitude ratio of a follower driven by a sinusoidal
/// leader, from a least-squares sinusoid fit over the last two periods.
pub fn time_domain_gain(theta: [f64; 3], omega: f64, dt: f64) -> f64 {
    use platoon::apecg::{rollout, ExpectedState, Theta};
    let (vbar, amp, gap) = (15.0, 0.1, 20.0);
    let period = 2.0 * std::f64::consts::PI / omega;
    let steps = ((150.0 + 2.0 * period) / dt).ceil() as usize;
    let time = |k: usize| (k + 1) as f64 * dt;
    let lead: Vec<f64> = (0..steps).map(|k| vbar + amp * (omega * time(k)).sin()).collect();
    let xstar = ExpectedState {
        v_star: vec![vbar],
        s_star: vec![gap],
    };
    let r = rollout(&[[vbar, gap, 0.0]], &lead, &Theta::constant(1, 1, theta), &xstar, steps, dt).unwrap();
    let start = steps - (2.0 * period / dt) as usize;
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for k in start..steps {
        let row = [(omega * time(k)).sin(), (omega * time(k)).cos(), 1.0];
        for i in 0..3 {
            atb[i] += row[i] * r.v[k];
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let c = solve3(ata, atb);
    c[0].hypot(c[1]) / amp
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut s = b[r];
        for k in r + 1..3 {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    x
}
