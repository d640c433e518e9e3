use serde::{Deserialize, Serialize};

use crate::apecg::RolloutResult;
use crate::data::StateWindow;
use crate::error::{Error, Result};

/// Truth magnitudes below this are excluded from MAPE.
pub const MAPE_THRESHOLD: f64 = 0.5;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "rmse: {} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("rmse: empty selection".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error over entries with `|truth| >= threshold`.
pub fn mape(pred: &[f64], truth: &[f64], threshold: f64) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "mape: {} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() >= threshold {
            sum += ((t - p) / t).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid("mape: every entry is excluded".into()));
    }
    Ok(100.0 * sum / count as f64)
}

/// Predicted and true values per horizon step, pooled over windows and
/// vehicles.
#[derive(Debug, Clone, Default)]
pub struct HorizonAccumulator {
    pub v_pred: Vec<Vec<f64>>,
    pub v_true: Vec<Vec<f64>>,
    pub s_pred: Vec<Vec<f64>>,
    pub s_true: Vec<Vec<f64>>,
}

impl HorizonAccumulator {
    pub fn new(f: usize) -> Self {
        Self {
            v_pred: vec![Vec::new(); f],
            v_true: vec![Vec::new(); f],
            s_pred: vec![Vec::new(); f],
            s_true: vec![Vec::new(); f],
        }
    }

    pub fn horizon(&self) -> usize {
        self.v_pred.len()
    }

    /// Adds a window with predictions `pred_v(i, k)`, `pred_s(i, k)`.
    pub fn add(&mut self, w: &StateWindow, pred_v: impl Fn(usize, usize) -> f64, pred_s: impl Fn(usize, usize) -> f64) {
        for k in 0..self.horizon().min(w.f) {
            for i in 0..w.n {
                self.v_pred[k].push(pred_v(i, k));
                self.v_true[k].push(w.target_v(i, k));
                self.s_pred[k].push(pred_s(i, k));
                self.s_true[k].push(w.target_s(i, k));
            }
        }
    }

    pub fn add_rollout(&mut self, w: &StateWindow, r: &RolloutResult) {
        self.add(w, |i, k| r.at(&r.v, i, k), |i, k| r.at(&r.s, i, k));
    }

    /// Constant-speed and constant-gap prediction from the anchor state.
    pub fn add_persistence(&mut self, w: &StateWindow) {
        self.add(w, |i, _| w.current(i)[0], |i, _| w.current(i)[1]);
    }

    fn row(&self, label: String, steps: &[usize]) -> Result<HorizonRow> {
        let pool = |x: &[Vec<f64>]| -> Vec<f64> { steps.iter().flat_map(|&k| x[k].iter().copied()).collect() };
        let (vp, vt, sp, st) = (pool(&self.v_pred), pool(&self.v_true), pool(&self.s_pred), pool(&self.s_true));
        Ok(HorizonRow {
            horizon: label,
            rmse_v: rmse(&vp, &vt)?,
            mape_v: mape(&vp, &vt, MAPE_THRESHOLD)?,
            rmse_s: rmse(&sp, &st)?,
            mape_s: mape(&sp, &st, MAPE_THRESHOLD)?,
        })
    }

    /// Rows at 0.5, 1.0, 1.5 and 2.0 s (steps 5, 10, 15, 20 at dt = 0.1)
    /// plus `Avg` pooled over every horizon step.
    pub fn report(&self, dt: f64) -> Result<Vec<HorizonRow>> {
        let mut rows = Vec::new();
        for secs in [0.5, 1.0, 1.5, 2.0] {
            let step = (secs / dt).round() as usize;
            if step >= 1 && step <= self.horizon() {
                rows.push(self.row(format!("{secs:.1}s"), &[step - 1])?);
            }
        }
        let all: Vec<usize> = (0..self.horizon()).collect();
        rows.push(self.row("Avg".into(), &all)?);
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: String,
    pub rmse_v: f64,
    pub mape_v: f64,
    pub rmse_s: f64,
    pub mape_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 3.535534).abs() < 1e-6);
        assert_eq!(rmse(&[-3.0, 4.0], &[0.0, 0.0]).unwrap(), rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[1.0], &[2.0], 0.5).unwrap(), 50.0);
        assert_eq!(mape(&[2.0], &[2.0], 0.5).unwrap(), 0.0);
        assert!((mape(&[11.0, 18.0], &[10.0, 20.0], 0.5).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[5.0, 1.0], &[0.1, 2.0], 0.5).unwrap(), 50.0);
        assert!(mape(&[5.0], &[0.1], 0.5).is_err());
    }
}
