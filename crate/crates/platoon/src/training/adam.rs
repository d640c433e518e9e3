use std::collections::BTreeMap;

use numgrad::Array;

use crate::mtfln::to_f32_grid;

/// Adaptive-moment optimiser. Updated parameters are rounded to the 32-bit
/// grid so that a saved checkpoint reproduces them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut BTreeMap<String, Array>, grads: &BTreeMap<String, Array>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let data: Vec<f64> = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (&x, &gi))| {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    to_f32_grid(x - self.lr * mh / (vh.sqrt() + self.eps))
                })
                .collect();
            *p = Array::new(p.shape().to_vec(), data).expect("same shape");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = BTreeMap::from([("w".to_string(), Array::new([2], vec![1.0, -1.0]).unwrap())]);
        let grads = BTreeMap::from([("w".to_string(), Array::new([2], vec![0.5, -3.0]).unwrap())]);
        let mut opt = Adam::new(0.125);
        opt.update(&mut params, &grads);
        let w = params["w"].data();
        assert!((w[0] - 0.875).abs() < 1e-7);
        assert!((w[1] + 0.875).abs() < 1e-7);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut params = BTreeMap::from([("x".to_string(), Array::scalar(5.0))]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let x = params["x"].item();
            let grads = BTreeMap::from([("x".to_string(), Array::scalar(2.0 * (x - 1.0)))]);
            opt.update(&mut params, &grads);
        }
        assert!((params["x"].item() - 1.0).abs() < 1e-3);
    }
}
