use super::qp::solve_qp;
use super::{
    apply_increment, build_problem, Action, DynamicsError, DynamicsParams, SystemState,
    TaskDescription,
};

/// One quasi-dynamic step with hard (non-smoothed) contact constraints.
///
/// Solves the step QP over the increment `dq` with the linearized
/// non-penetration and friction-cone-edge constraints of every contact within
/// `d_max`. When the free-space motion (object still, joints at the command)
/// already satisfies every constraint it is returned directly, so tracking in
/// free space is exact.
pub fn step_exact(
    state: &SystemState,
    action: &Action,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> Result<SystemState, DynamicsError> {
    let prob = build_problem(state, action, params, task)?;
    let n_rbt = task.n_rbt();

    let mut free = vec![0.0; 3 + n_rbt];
    for j in 0..n_rbt {
        free[3 + j] = action.0[j] - state.q_rbt[j];
    }
    let free_ok = (0..prob.g.nrows()).all(|r| {
        let s: f64 = prob.g.row(r).iter().zip(&free).map(|(a, b)| a * b).sum();
        prob.phi[r] + s >= 0.0
    });
    if free_ok {
        let mut q_rbt = action.0.clone();
        task.clamp_robot(&mut q_rbt);
        return Ok(SystemState::new(state.q_obj, q_rbt));
    }

    let b = -&prob.phi;
    let sol = solve_qp(&prob.h, &prob.c, &prob.g, &b)?;
    apply_increment(state, sol.x.as_slice(), task)
}
