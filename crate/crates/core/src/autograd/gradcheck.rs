//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::init::stream;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`,
/// so coordinates whose true gradient is (near) zero are judged on absolute
/// error instead of amplifying rounding noise.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar coordinates compared.
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h`, for every coordinate of every input
/// that has `requires_grad` set. Other inputs are held constant.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ts.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &ids)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("grad_check", "function must return a scalar"));
        }
        if !v[0].is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok(v[0])
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &ids)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let zeros = vec![0.0; input.numel()];
        let analytic = grads.get(ids[k]).unwrap_or(&zeros).to_vec();
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = input.data()[j];
            work[k].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Fixed random weights for reducing a tensor output to a scalar.
pub fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "gradcheck-projection");
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
