//! Dense matrices, the differentiation tape, seeded randomness and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::{argmax, pairwise_sq_dists, Matrix};
pub use rng::Rng;
pub use tape::{NodeId, Tape, TapeNode, NORM_EPS};

use crate::error::{Error, Result};

/// Inverted-dropout mask: entries are `1/keep_prob` with probability
/// `keep_prob`, else 0.
pub fn dropout_mask(rows: usize, cols: usize, keep_prob: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Config(format!(
            "dropout keep probability must lie in (0, 1], got {keep_prob}"
        )));
    }
    if keep_prob == 1.0 {
        return Ok(Matrix::ones(rows, cols));
    }
    let scale = 1.0 / keep_prob;
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        if rng.uniform() < keep_prob {
            scale
        } else {
            0.0
        }
    }))
}
