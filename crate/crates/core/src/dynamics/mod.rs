//! Planar geometry, contact kinematics and the quasi-dynamic steppers.

mod contact;
mod exact;
pub mod qp;
mod smoothed;
mod state;
mod task;

pub use contact::{contact_set, finger_phi, ContactPoint};
pub use exact::step_exact;
pub use qp::{kkt_residual, solve_qp, KktResidual, QpError, QpSolution};
pub use smoothed::{step_smoothed, step_smoothed_warm, SmoothedSolve};
pub use state::{angle_diff, wrap_angle, Action, SystemState};
pub use task::{DynamicsParams, TaskDescription};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("contact QP failed: {0}")]
    Qp(#[from] QpError),
    #[error(
        "Newton solve did not converge after {iterations} iterations (decrement^2 = {decrement:e})"
    )]
    NewtonNotConverged {
        iterations: usize,
        decrement: f64,
        iterate: Vec<f64>,
    },
    #[error("non-finite value in state or action")]
    NonFinite,
}

/// The step energy `1/2 x' H x + c' x` over `x = dq`, shared by both steppers.
pub(crate) struct StepProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    /// One row `J_n + e mu J_t` per contact and tangent sign.
    pub g: DMatrix<f64>,
    /// Signed distance of the contact behind each row of `g`.
    pub phi: DVector<f64>,
}

pub(crate) fn build_problem(
    state: &SystemState,
    action: &Action,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> Result<StepProblem, DynamicsError> {
    let n_rbt = task.n_rbt();
    if state.n_rbt() != n_rbt {
        return Err(DynamicsError::DimensionMismatch(format!(
            "state has {} robot joints, task has {}",
            state.n_rbt(),
            n_rbt
        )));
    }
    if action.len() != n_rbt {
        return Err(DynamicsError::DimensionMismatch(format!(
            "action has {} entries, expected {}",
            action.len(),
            n_rbt
        )));
    }
    if params.stiffness.len() != n_rbt {
        return Err(DynamicsError::DimensionMismatch(format!(
            "stiffness has {} entries, expected {}",
            params.stiffness.len(),
            n_rbt
        )));
    }
    if !state.is_finite() || !action.as_slice().iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }

    let n = 3 + n_rbt;
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for i in 0..3 {
        h[(i, i)] = params.object_mass[i] / params.h;
    }
    for j in 0..n_rbt {
        let k = params.stiffness[j];
        h[(3 + j, 3 + j)] = k;
        c[3 + j] = k * (state.q_rbt[j] - action.0[j]);
    }

    let contacts = contact_set(state, task, params.d_max);
    let n_rows = 2 * contacts.len();
    let mut g = DMatrix::zeros(n_rows, n);
    let mut phi = DVector::zeros(n_rows);
    for (ci, cp) in contacts.iter().enumerate() {
        for (s, e) in [1.0, -1.0].into_iter().enumerate() {
            let row = 2 * ci + s;
            for k in 0..n {
                g[(row, k)] = cp.jn[k] + e * params.mu * cp.jt[k];
            }
            phi[row] = cp.phi;
        }
    }
    Ok(StepProblem { h, c, g, phi })
}

/// Applies an increment, wraps the yaw and clamps the joints to their limits.
pub(crate) fn apply_increment(
    state: &SystemState,
    dq: &[f64],
    task: &TaskDescription,
) -> Result<SystemState, DynamicsError> {
    let q_obj = [
        state.q_obj[0] + dq[0],
        state.q_obj[1] + dq[1],
        state.q_obj[2] + dq[2],
    ];
    let mut q_rbt: Vec<f64> = state
        .q_rbt
        .iter()
        .zip(&dq[3..])
        .map(|(q, d)| q + d)
        .collect();
    task.clamp_robot(&mut q_rbt);
    let next = SystemState::new(q_obj, q_rbt);
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(next)
}
