//! Minimal dense-array engine with define-by-run reverse-mode automatic
//! differentiation.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Calling
//! [`Graph::backward`] replays that record in reverse and returns the
//! gradient of a scalar output with respect to every recorded node.
//!
//! ```
//! use numgrad::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.param(Array::scalar(3.0)).unwrap();
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(g.value(y).item(), 9.0);
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod array;
mod backward;
mod check;
mod error;
mod graph;
mod scan;
mod shape;

pub use array::Array;
pub use backward::Gradients;
pub use check::{finite_diff_check, forward_backward, FiniteDiffReport};
pub use error::{Error, Result};
pub use graph::{Graph, Mask, Var};
pub use scan::{ssm_scan, ScanInputs};

/// Numerically stable `ln(1 + e^x)`, floored at the smallest positive normal
/// so that the result is strictly positive for every finite input.
pub fn softplus(x: f64) -> f64 {
    let y = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(f64::MIN_POSITIVE)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}
