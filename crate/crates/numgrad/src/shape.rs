//! Shape arithmetic shared by the forward and backward passes.

use crate::error::{Error, Result};

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast
/// source with shape `in_shape`. Returns `None` when the shapes are equal
/// (identity mapping).
pub(crate) fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Option<Vec<usize>> {
    if out_shape == in_shape {
        return None;
    }
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let in_strides = strides(in_shape);
    // Effective stride of each output axis in the source; zero where broadcast.
    let mut eff = vec![0usize; rank];
    for i in 0..in_shape.len() {
        if in_shape[i] != 1 {
            eff[i + offset] = in_strides[i];
        }
    }
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

/// Sums a gradient laid out as `out_shape` back onto a broadcast source.
pub(crate) fn reduce_to(grad: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    match broadcast_map(out_shape, in_shape) {
        None => grad.to_vec(),
        Some(map) => {
            let mut acc = vec![0.0; numel(in_shape)];
            for (g, &j) in grad.iter().zip(&map) {
                acc[j] += g;
            }
            acc
        }
    }
}

/// Destination flat index for every source flat index under an axis
/// permutation (`out.shape[i] == in.shape[axes[i]]`).
pub(crate) fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let out_strides = strides(&out_shape);
    // Stride in the output for each input axis.
    let mut eff = vec![0usize; in_shape.len()];
    for (o, &a) in axes.iter().enumerate() {
        eff[a] = out_strides[o];
    }
    let n = numel(in_shape);
    let rank = in_shape.len();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut dst = 0usize;
    for _ in 0..n {
        map.push(dst);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            dst += eff[ax];
            if idx[ax] < in_shape[ax] {
                break;
            }
            dst -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1], &[1, 5]).unwrap(), vec![4, 5]);
        assert_eq!(broadcast_shape("t", &[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shape("t", &[4, 3], &[4]).is_err());
    }

    #[test]
    fn broadcast_map_bias() {
        let m = broadcast_map(&[2, 3], &[3]).unwrap();
        assert_eq!(m, vec![0, 1, 2, 0, 1, 2]);
        let m = broadcast_map(&[2, 3], &[2, 1]).unwrap();
        assert_eq!(m, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn transpose_map() {
        // (2,3) -> (3,2)
        let m = permute_map(&[2, 3], &[1, 0]);
        assert_eq!(m, vec![0, 2, 4, 1, 3, 5]);
    }
}
