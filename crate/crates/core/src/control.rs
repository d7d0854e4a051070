//! Coordinated linear feedback: per-agent gain blocks, the peer-input
//! aggregate `ξ`, and the stacked closed loop.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{block_diag, Matrix, Vector};
use crate::plant::SystemMatrices;

/// Gain blocks `F_ij` (input of agent `i` from the state of agent `j`) plus
/// a per-agent constant offset shared by everyone.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    gains: Vec<Vec<Matrix>>,
    offsets: Vec<Vector>,
}

impl ControlLaw {
    /// `gains[i][j]` must be `p_i × n_j`.
    pub fn new(gains: Vec<Vec<Matrix>>, offsets: Option<Vec<Vector>>) -> Result<Self> {
        let n = gains.len();
        if n == 0 {
            return Err(Error::Config("control law needs at least one agent".into()));
        }
        for (i, row) in gains.iter().enumerate() {
            if row.len() != n {
                return Err(dim_err(format!(
                    "gain row {i} has {} blocks, expected {n}",
                    row.len()
                )));
            }
            for (j, f) in row.iter().enumerate() {
                if f.nrows() != gains[i][0].nrows() || f.ncols() != gains[j][j].ncols() {
                    return Err(dim_err(format!(
                        "gain block ({i}, {j}) has inconsistent shape"
                    )));
                }
            }
        }
        let offsets = match offsets {
            Some(o) => {
                if o.len() != n
                    || o.iter()
                        .zip(&gains)
                        .any(|(c, row)| c.len() != row[0].nrows())
                {
                    return Err(dim_err("offsets must match each agent's input dimension"));
                }
                o
            }
            None => gains
                .iter()
                .map(|row| Vector::zeros(row[0].nrows()))
                .collect(),
        };
        Ok(Self { gains, offsets })
    }

    /// Decoupled zero-gain law.
    pub fn zero(systems: &[&SystemMatrices]) -> Self {
        let gains = systems
            .iter()
            .map(|si| {
                systems
                    .iter()
                    .map(|sj| Matrix::zeros(si.input_dim(), sj.state_dim()))
                    .collect()
            })
            .collect();
        let offsets = systems
            .iter()
            .map(|s| Vector::zeros(s.input_dim()))
            .collect();
        Self { gains, offsets }
    }

    /// Splits a stacked gain `F̃` (`Σp × Σn`) into blocks.
    pub fn from_ensemble(
        f: &Matrix,
        input_dims: &[usize],
        state_dims: &[usize],
        offsets: Option<Vec<Vector>>,
    ) -> Result<Self> {
        let rows: usize = input_dims.iter().sum();
        let cols: usize = state_dims.iter().sum();
        if input_dims.len() != state_dims.len() || f.shape() != (rows, cols) {
            return Err(dim_err(format!("ensemble gain must be {rows}x{cols}")));
        }
        let mut gains = Vec::with_capacity(input_dims.len());
        let mut r = 0;
        for &p in input_dims {
            let mut row = Vec::with_capacity(state_dims.len());
            let mut c = 0;
            for &n in state_dims {
                row.push(f.view((r, c), (p, n)).into_owned());
                c += n;
            }
            gains.push(row);
            r += p;
        }
        Self::new(gains, offsets)
    }

    pub fn agents(&self) -> usize {
        self.gains.len()
    }

    /// `F_ij`.
    pub fn gain(&self, i: usize, j: usize) -> &Matrix {
        &self.gains[i][j]
    }

    /// `F_ii`, the gain on the agent's own estimate.
    pub fn own_gain(&self, i: usize) -> &Matrix {
        &self.gains[i][i]
    }

    pub fn offset(&self, i: usize) -> &Vector {
        &self.offsets[i]
    }

    pub fn input_dim(&self, i: usize) -> usize {
        self.gains[i][0].nrows()
    }

    pub fn state_dim(&self, j: usize) -> usize {
        self.gains[j][j].ncols()
    }

    /// Stacked `F̃`.
    pub fn ensemble_gain(&self) -> Matrix {
        let rows: usize = (0..self.agents()).map(|i| self.input_dim(i)).sum();
        let cols: usize = (0..self.agents()).map(|j| self.state_dim(j)).sum();
        let mut f = Matrix::zeros(rows, cols);
        let mut r = 0;
        for (i, row) in self.gains.iter().enumerate() {
            let mut c = 0;
            for blk in row {
                f.view_mut((r, c), blk.shape()).copy_from(blk);
                c += blk.ncols();
            }
            r += self.input_dim(i);
        }
        f
    }

    /// Sets offsets so that the law acts on `x − x_des`: `c = −F̃ x_des`.
    pub fn with_reference(mut self, x_des: &Vector) -> Result<Self> {
        let f = self.ensemble_gain();
        if x_des.len() != f.ncols() {
            return Err(dim_err("reference must match the stacked state"));
        }
        let c = -(f * x_des);
        let mut r = 0;
        for (i, off) in self.offsets.iter_mut().enumerate() {
            let p = self.gains[i][0].nrows();
            *off = c.rows(r, p).into_owned();
            r += p;
        }
        Ok(self)
    }

    pub fn check_against(&self, systems: &[&SystemMatrices]) -> Result<()> {
        if systems.len() != self.agents() {
            return Err(dim_err(format!(
                "control law covers {} agents, scenario has {}",
                self.agents(),
                systems.len()
            )));
        }
        for (i, s) in systems.iter().enumerate() {
            if self.input_dim(i) != s.input_dim() || self.state_dim(i) != s.state_dim() {
                return Err(dim_err(format!(
                    "gain blocks of agent {i} do not match its model"
                )));
            }
        }
        Ok(())
    }
}

/// `ξ_i = Σ_{j≠i} F_ij x̌_j + c_i` from one agent's copies of its peers.
///
/// `estimates[j]` may be `None` only where `F_ij = 0`.
pub fn aggregate_xi(
    agent: usize,
    estimates: &[Option<&Vector>],
    law: &ControlLaw,
) -> Result<Vector> {
    if agent >= law.agents() || estimates.len() != law.agents() {
        return Err(Error::Contract(format!(
            "ξ for agent {agent} needs {} estimates, got {}",
            law.agents(),
            estimates.len()
        )));
    }
    let mut xi = law.offset(agent).clone();
    for (j, est) in estimates.iter().enumerate() {
        if j == agent {
            continue;
        }
        let f = law.gain(agent, j);
        match est {
            Some(x) => {
                if x.len() != f.ncols() {
                    return Err(dim_err(format!(
                        "estimate of agent {j} has the wrong dimension"
                    )));
                }
                xi += f * *x;
            }
            None if f.iter().all(|&v| v == 0.0) => {}
            None => {
                return Err(Error::Contract(format!(
                    "agent {agent} needs an estimate of agent {j}"
                )))
            }
        }
    }
    Ok(xi)
}

/// `u = F (x̂ − x_des) + ξ`.
pub fn control_input(
    x_hat: &Vector,
    xi: &Vector,
    own_gain: &Matrix,
    x_des: Option<&Vector>,
) -> Result<Vector> {
    if own_gain.shape() != (xi.len(), x_hat.len()) {
        return Err(dim_err("gain, estimate and ξ dimensions disagree"));
    }
    Ok(match x_des {
        Some(r) => {
            if r.len() != x_hat.len() {
                return Err(dim_err("reference must match the state"));
            }
            own_gain * (x_hat - r) + xi
        }
        None => own_gain * x_hat + xi,
    })
}

/// Stacked closed loop of a coordinated ensemble.
///
/// With `ẽ̂` the stacked filter errors and `ẽ` the stacked remote errors,
/// `x̃_k = (Ã + B̃F̃) x̃_{k−1} − D̃ ẽ̂_{k−1} − (B̃F̃ − D̃) ẽ_{k−1} + B̃ c̃ + ṽ_{k−1}`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub a: Matrix,
    pub b: Matrix,
    pub f: Matrix,
    /// `Ã + B̃F̃`.
    pub closed: Matrix,
    /// `D̃ = diag(B_i F_ii)`.
    pub d: Matrix,
    /// `B̃F̃ − D̃`.
    pub coupling: Matrix,
}

pub fn assemble_closed_loop(systems: &[&SystemMatrices], law: &ControlLaw) -> Result<ClosedLoop> {
    law.check_against(systems)?;
    let a_blocks: Vec<&Matrix> = systems.iter().map(|s| &s.a).collect();
    let b_blocks: Vec<&Matrix> = systems.iter().map(|s| &s.b).collect();
    let a = block_diag(&a_blocks);
    let b = block_diag(&b_blocks);
    let f = law.ensemble_gain();
    let bf_own: Vec<Matrix> = systems
        .iter()
        .enumerate()
        .map(|(i, s)| &s.b * law.own_gain(i))
        .collect();
    let d = block_diag(&bf_own.iter().collect::<Vec<_>>());
    let bf = &b * &f;
    Ok(ClosedLoop {
        closed: &a + &bf,
        coupling: bf - &d,
        a,
        b,
        f,
        d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn two_scalar_law(f: [[f64; 2]; 2]) -> ControlLaw {
        ControlLaw::new(
            vec![vec![s(f[0][0]), s(f[0][1])], vec![s(f[1][0]), s(f[1][1])]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn xi_aggregation() {
        let law = two_scalar_law([[-0.5, 0.3], [0.1, -0.4]]);
        let x2 = v(2.0);
        let xi = aggregate_xi(0, &[None, Some(&x2)], &law).unwrap();
        assert!((xi[0] - 0.6).abs() < 1e-15);
        // Own entry is ignored.
        let x1 = v(100.0);
        assert_eq!(aggregate_xi(0, &[Some(&x1), Some(&x2)], &law).unwrap(), xi);
        assert!(matches!(
            aggregate_xi(0, &[None, None], &law),
            Err(Error::Contract(_))
        ));

        let decoupled = two_scalar_law([[-0.5, 0.0], [0.0, -0.4]]);
        assert_eq!(aggregate_xi(0, &[None, None], &decoupled).unwrap()[0], 0.0);
    }

    #[test]
    fn control_input_values() {
        assert_eq!(
            control_input(&v(3.0), &v(0.0), &s(0.0), None).unwrap()[0],
            0.0
        );
        let u = control_input(&v(1.0), &v(0.1), &s(-0.5), None).unwrap();
        assert!((u[0] + 0.4).abs() < 1e-15);
        let u = control_input(&v(4.0), &v(0.0), &s(-0.5), Some(&v(4.0))).unwrap();
        assert_eq!(u[0], 0.0);
        assert!(control_input(&v(1.0), &v(0.0), &Matrix::zeros(1, 2), None).is_err());
    }

    #[test]
    fn reference_offsets_zero_input_at_setpoint() {
        let law = two_scalar_law([[-0.5, 0.3], [0.1, -0.4]]);
        let x_des = Vector::from_vec(vec![1.5, -2.0]);
        let law = law.with_reference(&x_des).unwrap();
        let x2 = v(-2.0);
        let xi = aggregate_xi(0, &[None, Some(&x2)], &law).unwrap();
        let u = control_input(&v(1.5), &xi, law.own_gain(0), None).unwrap();
        assert!(u[0].abs() < 1e-15);
    }

    #[test]
    fn closed_loop_two_scalar_agents() {
        let sys = SystemMatrices::scalar(0.9, 1.0, 1.0, 0.1, 0.1);
        let law = two_scalar_law([[-0.5, 0.2], [0.1, -0.3]]);
        let cl = assemble_closed_loop(&[&sys, &sys], &law).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.4, 0.2, 0.1, 0.6]);
        assert!(max_abs(&(&cl.closed - expected)) < 1e-15);
        assert_eq!(cl.d, Matrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, -0.3]));
        assert_eq!(
            cl.coupling,
            Matrix::from_row_slice(2, 2, &[0.0, 0.2, 0.1, 0.0])
        );
    }

    #[test]
    fn closed_loop_single_agent_no_gain() {
        let sys = SystemMatrices::scalar(0.7, 1.0, 1.0, 0.1, 0.1);
        let law = ControlLaw::zero(&[&sys]);
        let cl = assemble_closed_loop(&[&sys], &law).unwrap();
        assert_eq!(cl.closed, s(0.7));
        assert_eq!(cl.d, s(0.0));
    }

    #[test]
    fn ensemble_round_trip() {
        let f = Matrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64);
        let law = ControlLaw::from_ensemble(&f, &[1, 2], &[2, 3], None).unwrap();
        assert_eq!(law.gain(1, 0).shape(), (2, 2));
        assert_eq!(law.gain(0, 1).shape(), (1, 3));
        assert_eq!(law.ensemble_gain(), f);
        assert!(ControlLaw::from_ensemble(&f, &[1, 1], &[2, 3], None).is_err());
    }
}
