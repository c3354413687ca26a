//! Central-difference verification of tape gradients.
//!
//! The graph under test is supplied as a builder closure so that it can be
//! replayed from scratch for every perturbed evaluation; a tape is append-only
//! and has no way to re-run a recorded graph with new leaf values.

use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor, TensorError};

/// Outcome of a finite-difference sweep over every element of every input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen across all elements.
    pub max_rel_err: f64,
    /// `(input index, element index)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
}

/// Compares tape gradients of a scalar-valued graph against central
/// differences, element by element.
///
/// `build` receives a fresh tape and one tracked leaf per entry of `inputs`,
/// in order, and must return the scalar output. The relative error of an
/// element is `|a - n| / max(1e-8, |a| + |n|)` for analytic `a` and numeric
/// `n`. Any non-finite loss, gradient, or difference aborts with
/// [`TensorError::NonFinite`] naming the offending input.
pub fn grad_check<F, B>(
    inputs: &[Tensor<F>],
    epsilon: f64,
    build: B,
) -> Result<GradCheckReport, TensorError>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |tensors: &[Tensor<F>]| -> Result<(Tape<F>, Vec<Var>, Var), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.tracked(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if !tape.value(loss).is_scalar() {
            return Err(TensorError::NotScalar {
                op: "grad_check",
                shape: tape.value(loss).shape().to_vec(),
            });
        }
        Ok((tape, vars, loss))
    };

    let (mut tape, vars, loss) = eval(inputs)?;
    if !tape.value(loss).item().as_f64().is_finite() {
        return Err(TensorError::NonFinite { param: 0, index: 0 });
    }
    tape.backward(loss)?;
    let analytic: Vec<Tensor<F>> =
        vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    for (p, g) in analytic.iter().enumerate() {
        if let Some(index) = g.data().iter().position(|v| !v.as_f64().is_finite()) {
            return Err(TensorError::NonFinite { param: p, index });
        }
    }

    let eps = F::from_f64(epsilon);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None };
    let mut work: Vec<Tensor<F>> = inputs.to_vec();
    for p in 0..inputs.len() {
        for e in 0..inputs[p].numel() {
            let base = inputs[p].data()[e];
            let mut probe = |delta: F| -> Result<f64, TensorError> {
                work[p].data_mut()[e] = base + delta;
                let (t, _, l) = eval(&work)?;
                Ok(t.value(l).item().as_f64())
            };
            let plus = probe(eps)?;
            let minus = probe(-eps)?;
            work[p].data_mut()[e] = base;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p].data()[e].as_f64();
            if !numeric.is_finite() {
                return Err(TensorError::NonFinite { param: p, index: e });
            }
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((p, e));
            }
        }
    }
    Ok(report)
}
