use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_and_grad};
use super::problem::TrainingProblem;
use crate::autodiff::central_difference;
use crate::error::{Error, Result};
use crate::neural::{Block, OperatorSet};

/// AD-vs-difference agreement for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: Block,
    pub params: usize,
    pub max_abs_error: f64,
    pub max_abs_gradient: f64,
    /// `max |ad − fd| / max |fd|` over the block.
    pub relative_error: f64,
}

/// Compares the reverse-mode loss gradient with fourth-order central
/// differences of step `h`, block by block. Jacobi sweep counts should be
/// pinned (tolerance below reach) so the difference quotients see one
/// smooth function.
pub fn block_gradcheck(
    set: &OperatorSet,
    problem: &TrainingProblem,
    h: f64,
) -> Result<Vec<BlockCheck>> {
    let eval = loss_and_grad(set, problem)?;
    let ad = eval.gradient;
    let x = set.flat_params();
    let mut probe = set.clone();
    let mut f = |p: &[f64]| -> Result<f64> {
        probe.set_flat_params(p)?;
        Ok(loss(&probe, problem)?.loss.total)
    };
    let mut out = Vec::new();
    for (block, range) in set.block_ranges() {
        let mut max_err: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for k in range.clone() {
            let fd = central_difference(&mut f, &x, k, h)?;
            max_err = max_err.max((ad[k] - fd).abs());
            max_fd = max_fd.max(fd.abs());
        }
        if !(max_err.is_finite() && max_fd.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-finite gradient in {}",
                block.name()
            )));
        }
        let relative_error = if max_fd > 0.0 {
            max_err / max_fd
        } else {
            max_err
        };
        out.push(BlockCheck {
            block,
            params: range.len(),
            max_abs_error: max_err,
            max_abs_gradient: max_fd,
            relative_error,
        });
    }
    Ok(out)
}
