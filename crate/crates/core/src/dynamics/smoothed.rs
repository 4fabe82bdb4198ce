use nalgebra::DVector;

use super::{
    apply_increment, build_problem, Action, DynamicsError, DynamicsParams, StepProblem,
    SystemState, TaskDescription,
};

const DECREMENT_TOL: f64 = 1e-20;
const STEP_TOL: f64 = 1e-12;
// Armijo on the energy is only used above this decrement
const LOCAL_DECREMENT: f64 = 1e-12;
// below this the decrement is dominated by rounding in the energy
const ROUNDING_DECREMENT: f64 = 1e-16;
const ARMIJO: f64 = 1e-4;
const BOUNDARY_FRACTION: f64 = 0.99;

/// Result of a smoothed step together with the raw increment, which can seed
/// nearby solves.
#[derive(Debug, Clone)]
pub struct SmoothedSolve {
    pub state: SystemState,
    pub dq: Vec<f64>,
    pub iterations: usize,
}

/// One quasi-dynamic step under log-barrier contact smoothing.
///
/// The step energy is augmented with `-(1/kappa) * sum log(max(phi, phi_min) + g . dq)`
/// over both friction-cone edges of every contact within `d_max`, so contacts
/// push at a distance. Solved by damped Newton from `dq = 0`.
pub fn step_smoothed(
    state: &SystemState,
    action: &Action,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> Result<SystemState, DynamicsError> {
    step_smoothed_warm(state, action, params, task, None).map(|s| s.state)
}

/// Like [`step_smoothed`] but optionally starting Newton from `start`.
///
/// The barrier domain does not depend on the action, so the increment of a
/// solve at the same state with a nearby action is a valid start. A start
/// outside the domain is ignored.
pub fn step_smoothed_warm(
    state: &SystemState,
    action: &Action,
    params: &DynamicsParams,
    task: &TaskDescription,
    start: Option<&[f64]>,
) -> Result<SmoothedSolve, DynamicsError> {
    let prob = build_problem(state, action, params, task)?;
    let slack0 = prob.phi.map(|p| p.max(params.phi_min));
    let n = prob.h.nrows();

    let mut x = DVector::zeros(n);
    if let Some(s) = start {
        if s.len() == n {
            let cand = DVector::from_column_slice(s);
            let sl = &slack0 + &prob.g * &cand;
            if sl.iter().all(|v| *v > 0.0) {
                x = cand;
            }
        }
    }

    let inv_kappa = 1.0 / params.kappa;
    let energy = |x: &DVector<f64>, p: &StepProblem| -> f64 {
        let quad = 0.5 * x.dot(&(&p.h * x)) + p.c.dot(x);
        let sl = &slack0 + &p.g * x;
        if sl.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        quad - inv_kappa * sl.iter().map(|v| v.ln()).sum::<f64>()
    };

    let mut f = energy(&x, &prob);
    let mut dec2 = f64::INFINITY;
    for it in 0..params.newton_max_iter {
        let slack = &slack0 + &prob.g * &x;
        let mut grad = &prob.h * &x + &prob.c;
        let mut hess = prob.h.clone();
        for r in 0..prob.g.nrows() {
            let row = prob.g.row(r);
            let w = inv_kappa / slack[r];
            let w2 = w / slack[r];
            for i in 0..n {
                grad[i] -= w * row[i];
                for j in 0..n {
                    hess[(i, j)] += w2 * row[i] * row[j];
                }
            }
        }
        let chol = hess.cholesky().ok_or(DynamicsError::NewtonNotConverged {
            iterations: it,
            decrement: dec2,
            iterate: x.as_slice().to_vec(),
        })?;
        let dx = -chol.solve(&grad);
        dec2 = -grad.dot(&dx);
        if dec2 <= DECREMENT_TOL || dx.amax() < STEP_TOL {
            return finish(state, task, x, it);
        }

        // largest step that keeps every slack strictly positive
        let gdx = &prob.g * &dx;
        let mut alpha: f64 = 1.0;
        for r in 0..gdx.len() {
            if gdx[r] < 0.0 {
                alpha = alpha.min(-BOUNDARY_FRACTION * slack[r] / gdx[r]);
            }
        }
        if dec2 <= LOCAL_DECREMENT {
            // inside the quadratic region the energy is too flat to compare in
            // floating point; take the damped Newton step as is
            let cand = &x + alpha * &dx;
            if cand == x {
                return finish(state, task, x, it);
            }
            f = energy(&cand, &prob);
            x = cand;
            continue;
        }
        let mut accepted = false;
        while alpha > 1e-12 {
            let cand = &x + alpha * &dx;
            let fc = energy(&cand, &prob);
            if fc <= f - ARMIJO * alpha * dec2 {
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no representable descent left; accept only if already converged to rounding
            if dec2 <= ROUNDING_DECREMENT {
                return finish(state, task, x, it);
            }
            return Err(DynamicsError::NewtonNotConverged {
                iterations: it + 1,
                decrement: dec2,
                iterate: x.as_slice().to_vec(),
            });
        }
        if f.is_nan() {
            break;
        }
    }
    Err(DynamicsError::NewtonNotConverged {
        iterations: params.newton_max_iter,
        decrement: dec2,
        iterate: x.as_slice().to_vec(),
    })
}

fn finish(
    state: &SystemState,
    task: &TaskDescription,
    x: DVector<f64>,
    iterations: usize,
) -> Result<SmoothedSolve, DynamicsError> {
    let dq = x.as_slice().to_vec();
    Ok(SmoothedSolve {
        state: apply_increment(state, &dq, task)?,
        dq,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_without_nearby_contacts() {
        let p = DynamicsParams::default();
        let t = TaskDescription::default();
        let s = SystemState::new([0.6, 0.0, 0.3], vec![0.36, 0.34, 0.84, -0.34]);
        let out = step_smoothed(&s, &Action(s.q_rbt.clone()), &p, &t).unwrap();
        assert!(out.max_abs_diff(&s) == 0.0);
    }

    #[test]
    fn hovering_finger_pushes_at_a_distance() {
        let p = DynamicsParams::default();
        let t = TaskDescription::default();
        // finger 1 mm left of the disk, the other far away
        let s = SystemState::new([0.7, 0.0, 0.0], vec![0.399, 0.0, 0.84, 0.34]);
        let out = step_smoothed(&s, &Action(s.q_rbt.clone()), &p, &t).unwrap();
        let dx = out.q_obj[0] - 0.7;
        assert!(dx > 0.0 && dx < 0.05, "dx = {dx}");
        assert!(out.q_obj[1].abs() < 1e-9);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let p = DynamicsParams::default();
        let t = TaskDescription::default();
        let s = SystemState::new([0.7, 0.0, 0.0], vec![0.4, 0.0, 0.84, 0.34]);
        let a = Action(vec![0.41, 0.002, 0.84, 0.34]);
        let cold = step_smoothed_warm(&s, &a, &p, &t, None).unwrap();
        let a2 = Action(vec![0.41 + 1e-5, 0.002, 0.84, 0.34]);
        let warm = step_smoothed_warm(&s, &a2, &p, &t, Some(&cold.dq)).unwrap();
        let cold2 = step_smoothed(&s, &a2, &p, &t).unwrap();
        assert!(warm.state.max_abs_diff(&cold2) < 1e-10);
    }
}
