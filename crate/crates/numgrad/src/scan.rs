//! Selective state-space scan.
//!
//! For every sequence, channel `c` and state `j`:
//!
//! ```text
//! h[t] = exp(delta[t,c] * A[c,j]) * h[t-1] + delta[t,c] * B[t,j] * u[t,c],  h[-1] = 0
//! y[t,c] = sum_j C[t,j] * h[t,j] + D[c] * u[t,c]
//! ```
//!
//! The state transition is the zero-order-hold discretisation of `A`; the
//! input path uses the Euler discretisation of `B`.

use crate::array::Array;
use crate::error::{Error, Result};

/// Operands of a scan. `u` and `delta` are `(S, P, E)` or `(P, E)`;
/// `b` and `c` are `(S, P, n)` or `(P, n)`; `a` is `(E, n)`; `d` is `(E)`.
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a> {
    pub u: &'a Array,
    pub delta: &'a Array,
    pub b: &'a Array,
    pub c: &'a Array,
    pub a: &'a Array,
    pub d: &'a Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ScanDims {
    pub seqs: usize,
    pub steps: usize,
    pub channels: usize,
    pub states: usize,
}

fn mismatch(lhs: &Array, rhs: &Array) -> Error {
    Error::ShapeMismatch {
        op: "ssm_scan",
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

pub(crate) fn scan_dims(x: &ScanInputs<'_>) -> Result<ScanDims> {
    let (seqs, steps, channels) = match x.u.shape() {
        [p, e] => (1, *p, *e),
        [s, p, e] => (*s, *p, *e),
        _ => {
            return Err(Error::Invalid(format!(
                "ssm_scan: input must be rank 2 or 3, got {:?}",
                x.u.shape()
            )))
        }
    };
    if x.delta.shape() != x.u.shape() {
        return Err(mismatch(x.u, x.delta));
    }
    let states = match x.a.shape() {
        [e, n] if *e == channels => *n,
        _ => return Err(mismatch(x.u, x.a)),
    };
    let mut seq_shape = x.u.shape().to_vec();
    *seq_shape.last_mut().unwrap() = states;
    if x.b.shape() != seq_shape.as_slice() {
        return Err(mismatch(x.u, x.b));
    }
    if x.c.shape() != seq_shape.as_slice() {
        return Err(mismatch(x.u, x.c));
    }
    if x.d.shape() != [channels] {
        return Err(mismatch(x.u, x.d));
    }
    Ok(ScanDims {
        seqs,
        steps,
        channels,
        states,
    })
}

/// Runs the scan and returns `y` (same shape as `u`).
pub fn ssm_scan(inputs: &ScanInputs<'_>) -> Result<Array> {
    let dims = scan_dims(inputs)?;
    let (y, _) = scan_forward(inputs, dims);
    Ok(Array::from_parts(inputs.u.shape().to_vec(), y))
}

/// Forward pass; also returns every hidden state `(S, P, E, n)` for backward.
pub(crate) fn scan_forward(x: &ScanInputs<'_>, dims: ScanDims) -> (Vec<f64>, Vec<f64>) {
    let ScanDims {
        seqs,
        steps,
        channels,
        states,
    } = dims;
    let (u, dt, b, c, a, d) = (
        x.u.data(),
        x.delta.data(),
        x.b.data(),
        x.c.data(),
        x.a.data(),
        x.d.data(),
    );
    let mut y = vec![0.0; seqs * steps * channels];
    let mut hs = vec![0.0; seqs * steps * channels * states];
    for s in 0..seqs {
        for t in 0..steps {
            let row = s * steps + t;
            let bt = &b[row * states..(row + 1) * states];
            let ct = &c[row * states..(row + 1) * states];
            for ch in 0..channels {
                let ut = u[row * channels + ch];
                let dlt = dt[row * channels + ch];
                let cur = (row * channels + ch) * states;
                let mut acc = d[ch] * ut;
                for j in 0..states {
                    let prev = if t == 0 { 0.0 } else { hs[cur - channels * states + j] };
                    let h = (dlt * a[ch * states + j]).exp() * prev + dlt * bt[j] * ut;
                    hs[cur + j] = h;
                    acc += ct[j] * h;
                }
                y[row * channels + ch] = acc;
            }
        }
    }
    (y, hs)
}

/// Gradients of the scan inputs, in the order (u, delta, b, c, a, d).
pub(crate) struct ScanGrads {
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub d: Vec<f64>,
}

pub(crate) fn scan_backward(
    x: &ScanInputs<'_>,
    dims: ScanDims,
    hs: &[f64],
    gy: &[f64],
) -> ScanGrads {
    let ScanDims {
        seqs,
        steps,
        channels,
        states,
    } = dims;
    let (u, dt, b, c, a, d) = (
        x.u.data(),
        x.delta.data(),
        x.b.data(),
        x.c.data(),
        x.a.data(),
        x.d.data(),
    );
    let mut g = ScanGrads {
        u: vec![0.0; u.len()],
        delta: vec![0.0; dt.len()],
        b: vec![0.0; b.len()],
        c: vec![0.0; c.len()],
        a: vec![0.0; a.len()],
        d: vec![0.0; d.len()],
    };
    // carry[ch, j] holds dL/dh[t] contributions flowing back from t+1.
    let mut carry = vec![0.0; channels * states];
    for s in 0..seqs {
        carry.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..steps).rev() {
            let row = s * steps + t;
            for ch in 0..channels {
                let i = row * channels + ch;
                let (ut, dlt, gyt) = (u[i], dt[i], gy[i]);
                g.d[ch] += gyt * ut;
                g.u[i] += gyt * d[ch];
                let cur = i * states;
                for j in 0..states {
                    let h = hs[cur + j];
                    g.c[row * states + j] += gyt * h;
                    let gh = gyt * c[row * states + j] + carry[ch * states + j];
                    let aj = a[ch * states + j];
                    let decay = (dlt * aj).exp();
                    let prev = if t == 0 { 0.0 } else { hs[cur - channels * states + j] };
                    let bj = b[row * states + j];
                    // h = decay * prev + dlt * bj * ut
                    let g_decay = gh * prev;
                    g.delta[i] += g_decay * decay * aj + gh * bj * ut;
                    g.a[ch * states + j] += g_decay * decay * dlt;
                    g.b[row * states + j] += gh * dlt * ut;
                    g.u[i] += gh * dlt * bj;
                    carry[ch * states + j] = gh * decay;
                }
            }
        }
    }
    g
}
