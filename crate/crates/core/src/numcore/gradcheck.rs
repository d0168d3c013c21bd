use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;
use crate::numcore::tape::{NodeId, Tape};

/// Rounding in `f(θ±h)` limits a central difference to about
/// `ε·max(1, |f|)/h`; entries are compared relative to at least this many
/// multiples of it.
const RESOLUTION_MULTIPLE: f64 = 1e4;

/// Compares reverse-mode gradients with central differences.
///
/// `build` receives a fresh tape and one leaf per entry of `params` and must
/// return a scalar node. Every parameter entry is perturbed by `±h`; the
/// result is the largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// with `floor = 1e4·ε·max(1, |f|)/h`, the gradient size below which
/// rounding alone would exceed a 1e-4 relative error.
pub fn grad_check<F>(build: F, params: &[Matrix], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if tape.shape(loss) != (1, 1) {
            return Err(Error::Usage("gradient check needs a scalar loss".into()));
        }
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.shape(loss) != (1, 1) {
        return Err(Error::Usage("gradient check needs a scalar loss".into()));
    }
    let floor = RESOLUTION_MULTIPLE * f64::EPSILON * tape.scalar(loss).abs().max(1.0) / h;
    tape.backward(loss)?;
    let analytic: Vec<Matrix> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[p].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[e];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
