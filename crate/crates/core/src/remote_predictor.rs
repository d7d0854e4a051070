//! Model-based prediction of a peer's state between broadcasts.

use crate::error::{dim_err, Result};
use crate::numerics::{Matrix, Vector};

/// `x̌` held by some agent about agent `agent`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEstimate {
    pub agent: usize,
    pub mean: Vector,
    pub step: usize,
}

impl RemoteEstimate {
    pub fn new(agent: usize, mean: Vector, step: usize) -> Self {
        Self { agent, mean, step }
    }
}

/// Advances `x̌` by one step.
///
/// With a received estimate the copy is reset to it; otherwise it is
/// predicted as `Ā x̌ + B ξ` where `Ā = A + BF` is the predicted agent's
/// closed loop and `ξ` its (known) peer-input aggregate.
pub fn remote_step(
    est: &RemoteEstimate,
    closed_loop: &Matrix,
    b: &Matrix,
    xi: &Vector,
    received: Option<&Vector>,
) -> Result<RemoteEstimate> {
    let n = est.mean.len();
    if closed_loop.shape() != (n, n) || b.nrows() != n || xi.len() != b.ncols() {
        return Err(dim_err("remote prediction dimensions do not agree"));
    }
    let mean = match received {
        Some(x_hat) => {
            if x_hat.len() != n {
                return Err(dim_err("received estimate has the wrong dimension"));
            }
            x_hat.clone()
        }
        None => closed_loop * &est.mean + b * xi,
    };
    Ok(RemoteEstimate::new(est.agent, mean, est.step + 1))
}
