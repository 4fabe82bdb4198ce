//! Inverse dynamics through the smoothed model.
//!
//! The smoothed step is linearized in the action around "hold still"
//! (`a = q_rbt`) and a small box-constrained QP picks the action change that
//! best moves the predicted object pose toward a desired one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    angle_diff, qp::solve_qp, step_smoothed, step_smoothed_warm, Action, DynamicsError,
    DynamicsParams, QpError, SystemState, TaskDescription,
};
use crate::metrics::ORIENTATION_WEIGHT;

/// Finite-difference step for the action sensitivities.
pub const FD_EPS: f64 = 1e-5;

/// Quadratic penalty on the action change; only breaks ties when the model is flat.
const TIE_BREAK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegion {
    /// Per-joint bound on the change of the command, m.
    pub delta_max: f64,
}

impl Default for TrustRegion {
    fn default() -> Self {
        Self { delta_max: 0.02 }
    }
}

/// First-order model of the object pose after one smoothed step.
#[derive(Clone, Debug)]
pub struct LinearizedModel {
    pub state: SystemState,
    pub action: Action,
    /// `d q_obj+ / d a`, 3 rows by `n_rbt` columns.
    pub b: DMatrix<f64>,
    /// Object pose predicted at the nominal action.
    pub q_obj_next: [f64; 3],
}

/// Linearizes the smoothed step in the action around `a = q_rbt`.
pub fn linearize(
    state: &SystemState,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> Result<LinearizedModel, DynamicsError> {
    let nominal = Action(state.q_rbt.clone());
    let base = step_smoothed_warm(state, &nominal, params, task, None)?;
    let n = state.n_rbt();
    let mut b = DMatrix::zeros(3, n);
    for j in 0..n {
        let mut plus = nominal.clone();
        let mut minus = nominal.clone();
        plus.0[j] += FD_EPS;
        minus.0[j] -= FD_EPS;
        let sp = step_smoothed_warm(state, &plus, params, task, Some(&base.dq))?.state;
        let sm = step_smoothed_warm(state, &minus, params, task, Some(&base.dq))?.state;
        b[(0, j)] = (sp.q_obj[0] - sm.q_obj[0]) / (2.0 * FD_EPS);
        b[(1, j)] = (sp.q_obj[1] - sm.q_obj[1]) / (2.0 * FD_EPS);
        b[(2, j)] = angle_diff(sp.q_obj[2], sm.q_obj[2]) / (2.0 * FD_EPS);
    }
    Ok(LinearizedModel {
        state: state.clone(),
        action: nominal,
        b,
        q_obj_next: base.state.q_obj,
    })
}

impl LinearizedModel {
    /// Residual of the predicted pose against `target`, yaw wrapped.
    pub fn residual(&self, target: &[f64; 3], delta: &[f64]) -> [f64; 3] {
        let mut r = [
            self.q_obj_next[0] - target[0],
            self.q_obj_next[1] - target[1],
            -angle_diff(target[2], self.q_obj_next[2]),
        ];
        for (i, ri) in r.iter_mut().enumerate() {
            for (j, d) in delta.iter().enumerate() {
                *ri += self.b[(i, j)] * d;
            }
        }
        r
    }

    /// The weighted model objective `1/2 |r|^2_W` at `delta`.
    pub fn objective(&self, target: &[f64; 3], delta: &[f64]) -> f64 {
        let r = self.residual(target, delta);
        0.5 * (r[0] * r[0] + r[1] * r[1] + ORIENTATION_WEIGHT * r[2] * r[2])
    }
}

/// Per-joint bounds on the change from `nominal`: trust box intersected with joint limits.
pub fn delta_bounds(
    nominal: &Action,
    task: &TaskDescription,
    tr: &TrustRegion,
) -> (Vec<f64>, Vec<f64>) {
    let lo = nominal
        .0
        .iter()
        .zip(&task.robot_lb)
        .map(|(q, lb)| (-tr.delta_max).max(lb - q))
        .collect();
    let hi = nominal
        .0
        .iter()
        .zip(&task.robot_ub)
        .map(|(q, ub)| tr.delta_max.min(ub - q))
        .collect();
    (lo, hi)
}

/// Rows keeping the predicted object position inside its limits (the first
/// try). When
/// `relaxed`, a limit the nominal prediction already violates is replaced by
/// the nominal prediction itself, so the zero change stays feasible.
fn object_limit_rows(
    model: &LinearizedModel,
    task: &TaskDescription,
    relaxed: bool,
) -> Vec<(Vec<f64>, f64)> {
    let n = model.action.len();
    let pred = model.q_obj_next;
    let mut out = Vec::with_capacity(4);
    for i in 0..2 {
        let row: Vec<f64> = (0..n).map(|j| model.b[(i, j)]).collect();
        let (lb, ub) = if relaxed {
            (
                task.object_lb[i].min(pred[i]),
                task.object_ub[i].max(pred[i]),
            )
        } else {
            (task.object_lb[i], task.object_ub[i])
        };
        out.push((row.iter().map(|v| -v).collect(), pred[i] - ub));
        out.push((row, lb - pred[i]));
    }
    out
}

fn stack(rows: &[Vec<f64>], extra: &[(Vec<f64>, f64)], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len() + extra.len(), n, |r, k| {
        if r < rows.len() {
            rows[r][k]
        } else {
            extra[r - rows.len()].0[k]
        }
    })
}

fn stack_rhs(rhs: &[f64], extra: &[(Vec<f64>, f64)]) -> DVector<f64> {
    DVector::from_iterator(
        rhs.len() + extra.len(),
        rhs.iter().copied().chain(extra.iter().map(|e| e.1)),
    )
}

/// Solves the trust-region QP on a given model and returns the action change.
pub fn solve_trust_region(
    model: &LinearizedModel,
    target: &[f64; 3],
    task: &TaskDescription,
    tr: &TrustRegion,
) -> Result<Vec<f64>, DynamicsError> {
    let n = model.action.len();
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, ORIENTATION_WEIGHT]));
    let r0 = model.residual(target, &vec![0.0; n]);
    let r0 = DVector::from_row_slice(&r0);
    let bt_w = model.b.transpose() * &w;
    let mut h = &bt_w * &model.b;
    for i in 0..n {
        h[(i, i)] += 2.0 * TIE_BREAK;
    }
    let c = &bt_w * &r0;

    let (lo, hi) = delta_bounds(&model.action, task, tr);
    let mut box_rows: Vec<Vec<f64>> = Vec::new();
    let mut box_rhs: Vec<f64> = Vec::new();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        box_rows.push(e.clone());
        box_rhs.push(lo[j]);
        e[j] = -1.0;
        box_rows.push(e);
        box_rhs.push(-hi[j]);
    }
    let strict = object_limit_rows(model, task, false);
    let sol = match solve_qp(
        &h,
        &c,
        &stack(&box_rows, &strict, n),
        &stack_rhs(&box_rhs, &strict),
    ) {
        Ok(sol) => sol,
        Err(QpError::Infeasible { .. }) => {
            let relaxed = object_limit_rows(model, task, true);
            solve_qp(
                &h,
                &c,
                &stack(&box_rows, &relaxed, n),
                &stack_rhs(&box_rhs, &relaxed),
            )?
        }
        Err(e) => return Err(e.into()),
    };
    // snap onto the box so the bounds hold exactly despite rounding
    Ok(sol
        .x
        .iter()
        .enumerate()
        .map(|(j, d)| d.clamp(lo[j], hi[j]))
        .collect())
}

/// Output of one inverse-dynamics step.
#[derive(Clone, Debug)]
pub struct ContactStep {
    pub state: SystemState,
    pub action: Action,
    pub delta: Vec<f64>,
    pub model: LinearizedModel,
}

/// One step toward `q_obj_des`: returns the smoothed next state and the action.
pub fn plan_contact(
    state: &SystemState,
    q_obj_des: &[f64; 3],
    params: &DynamicsParams,
    task: &TaskDescription,
    tr: &TrustRegion,
) -> Result<(SystemState, Action), DynamicsError> {
    plan_contact_step(state, q_obj_des, params, task, tr).map(|s| (s.state, s.action))
}

pub fn plan_contact_step(
    state: &SystemState,
    q_obj_des: &[f64; 3],
    params: &DynamicsParams,
    task: &TaskDescription,
    tr: &TrustRegion,
) -> Result<ContactStep, DynamicsError> {
    let model = linearize(state, params, task)?;
    let delta = solve_trust_region(&model, q_obj_des, task, tr)?;
    let action = Action(state.q_rbt.iter().zip(&delta).map(|(q, d)| q + d).collect());
    let next = step_smoothed(state, &action, params, task)?;
    Ok(ContactStep {
        state: next,
        action,
        delta,
        model,
    })
}
