#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cdsynth::dynamics::{wrap_angle, Action, DynamicsParams, SystemState, TaskDescription};
use cdsynth::rollout::Demonstration;

/// Minimizes `1/2 x'Hx + c'x` s.t. `Ax >= b` by trying every active set.
/// Returns `None` when no active set gives a KKT point.
pub fn qp_by_enumeration(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let m = a.nrows();
    let tol = 1e-9;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for i in 0..n {
            rhs[i] = -c[i];
        }
        for (r, &row) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + r)] = -a[(row, j)];
                kkt[(n + r, j)] = a[(row, j)];
            }
            rhs[n + r] = b[row];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        if (0..k).any(|r| sol[n + r] < -tol) {
            continue;
        }
        if (0..m).any(|i| (a.row(i) * &x)[0] < b[i] - tol) {
            continue;
        }
        let f = 0.5 * (x.transpose() * h * &x)[0] + c.dot(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf - 1e-12) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

/// The step QP written out from the contact geometry: energy Hessian and
/// gradient, and one cone-edge row per contact and tangent sign.
pub fn step_qp(
    s: &SystemState,
    a: &Action,
    p: &DynamicsParams,
    t: &TaskDescription,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let nr = t.n_rbt();
    let n = 3 + nr;
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for i in 0..3 {
        h[(i, i)] = p.object_mass[i] / p.h;
    }
    for j in 0..nr {
        h[(3 + j, 3 + j)] = p.stiffness[j];
        c[3 + j] = p.stiffness[j] * (s.q_rbt[j] - a.0[j]);
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for f in 0..t.finger_count {
        let (fx, fy) = (s.q_rbt[2 * f], s.q_rbt[2 * f + 1]);
        let (dx, dy) = (fx - s.q_obj[0], fy - s.q_obj[1]);
        let d = (dx * dx + dy * dy).sqrt();
        let phi = d - t.disk_radius - t.finger_radius;
        if phi > p.d_max {
            continue;
        }
        let (nx, ny) = (dx / d, dy / d);
        let (tx, ty) = (-ny, nx);
        for e in [1.0, -1.0] {
            let mut row = vec![0.0; n];
            row[0] = -nx - e * p.mu * tx;
            row[1] = -ny - e * p.mu * ty;
            row[2] = -e * p.mu * t.disk_radius;
            row[3 + 2 * f] = nx + e * p.mu * tx;
            row[3 + 2 * f + 1] = ny + e * p.mu * ty;
            rows.push(row);
            rhs.push(-phi);
        }
    }
    let g = DMatrix::from_fn(rows.len(), n, |r, k| rows[r][k]);
    (h, c, g, DVector::from_vec(rhs))
}

/// Exact step by active-set enumeration, then joint clamp and yaw wrap.
pub fn step_oracle(
    s: &SystemState,
    a: &Action,
    p: &DynamicsParams,
    t: &TaskDescription,
) -> Option<SystemState> {
    let (h, c, g, b) = step_qp(s, a, p, t);
    let x = qp_by_enumeration(&h, &c, &g, &b)?;
    let q_obj = [
        s.q_obj[0] + x[0],
        s.q_obj[1] + x[1],
        wrap_angle(s.q_obj[2] + x[2]),
    ];
    let q_rbt = (0..t.n_rbt())
        .map(|j| (s.q_rbt[j] + x[3 + j]).clamp(t.robot_lb[j], t.robot_ub[j]))
        .collect();
    Some(SystemState { q_obj, q_rbt })
}

pub fn inf_dist(a: &SystemState, b: &SystemState) -> f64 {
    a.max_abs_diff(b)
}

/// A random state with fingers near the disk and a command pushing roughly
/// inward. About one finger in five is left far away.
pub fn random_draw(
    rng: &mut ChaCha8Rng,
    t: &TaskDescription,
    p: &DynamicsParams,
) -> (SystemState, Action) {
    let q_obj = [
        rng.random_range(t.object_lb[0]..t.object_ub[0]),
        rng.random_range(t.object_lb[1]..t.object_ub[1]),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    ];
    let mut q_rbt = Vec::new();
    let mut cmd = Vec::new();
    let mut bearings: Vec<f64> = Vec::new();
    for _ in 0..t.finger_count {
        let mut beta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        while bearings.iter().any(|b| wrap_angle(beta - b).abs() < 0.6) {
            beta = rng.random_range(0.0..std::f64::consts::TAU);
        }
        bearings.push(beta);
        let near = rng.random_bool(0.8);
        let gap = if near {
            rng.random_range(0.0..0.8 * p.d_max)
        } else {
            rng.random_range(0.1..0.25)
        };
        let r = t.disk_radius + t.finger_radius + gap;
        let (sb, cb) = beta.sin_cos();
        q_rbt.extend([q_obj[0] + r * cb, q_obj[1] + r * sb]);
        let push = rng.random_range(-0.005..0.03);
        let slide = rng.random_range(-0.02..0.02);
        cmd.extend([
            q_obj[0] + (r - push) * cb - slide * sb,
            q_obj[1] + (r - push) * sb + slide * cb,
        ]);
    }
    (SystemState::new(q_obj, q_rbt), Action(cmd))
}

/// A demonstration over the given object poses, fingers parked far away.
pub fn demo_from_poses(
    poses: &[[f64; 3]],
    regrasps: Vec<usize>,
    plan_id: u64,
    chunk_index: usize,
) -> Demonstration {
    let park = vec![0.02, 0.6, 1.15, -0.6];
    Demonstration {
        states: poses
            .iter()
            .map(|q| SystemState::new(*q, park.clone()))
            .collect(),
        actions: (1..poses.len()).map(|_| Action(park.clone())).collect(),
        dt: 0.1,
        regrasp_indices: regrasps,
        plan_id,
        chunk_index,
        goal: [0.65, 0.0, std::f64::consts::PI],
    }
}

/// A demonstration with arbitrary distinct values, for format tests.
pub fn synthetic_demo(
    rng: &mut ChaCha8Rng,
    len: usize,
    plan_id: u64,
    chunk_index: usize,
) -> Demonstration {
    let states = (0..len)
        .map(|_| {
            SystemState::new(
                [
                    rng.random_range(0.3..0.9),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-3.1..3.1),
                ],
                (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let actions = (1..len)
        .map(|_| Action((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let mut regrasp_indices: Vec<usize> = (0..len.saturating_sub(1))
        .filter(|_| rng.random_bool(0.1))
        .collect();
    regrasp_indices.dedup();
    Demonstration {
        states,
        actions,
        dt: 0.1,
        regrasp_indices,
        plan_id,
        chunk_index,
        goal: [0.65, 0.0, std::f64::consts::PI],
    }
}

/// Both fingers within a few millimetres of the disk.
pub fn contact_rich(rng: &mut ChaCha8Rng, t: &TaskDescription) -> SystemState {
    let q_obj = [
        rng.random_range(0.45..0.75),
        rng.random_range(-0.25..0.25),
        rng.random_range(-3.0..3.0),
    ];
    let b0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let b1 = b0 + rng.random_range(1.6..3.1);
    let mut q = Vec::new();
    for b in [b0, b1] {
        let r = t.disk_radius + rng.random_range(0.0005..0.003);
        q.extend([q_obj[0] + r * b.cos(), q_obj[1] + r * b.sin()]);
    }
    SystemState::new(q_obj, q)
}
