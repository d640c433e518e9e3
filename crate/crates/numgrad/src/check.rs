use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Evaluates `build` on fresh differentiable leaves holding `inputs` and
/// returns the output value together with the gradient of each input.
/// `seed` defaults to 1 and then the output must be a scalar.
pub fn forward_backward<F>(inputs: &[Array], seed: Option<&Array>, build: F) -> Result<(Array, Vec<Array>)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|a| g.param(a.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    let grads = match seed {
        Some(s) => g.backward_with_seed(out, s)?,
        None => g.backward(out)?,
    };
    let input_grads = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();
    Ok((g.value(out).clone(), input_grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all entries.
    pub max_rel_error: f64,
    /// Entries whose perturbed evaluation was undefined (non-finite).
    pub skipped: usize,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar-valued `build` with central
/// differences of step `step` for every entry of every input.
pub fn finite_diff_check<F>(inputs: &[Array], step: f64, build: F) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&step) {
        return Err(Error::Invalid(format!(
            "finite_diff_check: step {step} outside [1e-8, 1e-4]"
        )));
    }
    let (_, analytic) = forward_backward(inputs, None, &build)?;
    let eval = |perturbed: &[Array]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = perturbed
            .iter()
            .map(|a| g.constant(a.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut work: Vec<Array> = inputs.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        skipped: 0,
        checked: 0,
    };
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let probe = |delta: f64, work: &mut Vec<Array>| -> Result<f64> {
                let mut data = input.data().to_vec();
                data[j] += delta;
                work[i] = Array::from_parts(input.shape().to_vec(), data);
                eval(work)
            };
            let plus = probe(step, &mut work);
            let minus = probe(-step, &mut work);
            work[i] = input.clone();
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(Error::NonFinite { .. }), _) | (_, Err(Error::NonFinite { .. })) => {
                    report.skipped += 1;
                    continue;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[i].data()[j] - numeric).abs() / numeric.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
