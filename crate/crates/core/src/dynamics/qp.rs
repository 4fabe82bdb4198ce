//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 x' H x + c' x
//!     subject to   A x >= b
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The solver starts
//! from the unconstrained minimizer and adds the most violated constraint at
//! each outer iteration, dropping active constraints whose multipliers would
//! turn negative. It needs no feasible starting point and reports
//! infeasibility when a violated constraint can be neither reached by a
//! primal step nor traded against an active constraint.
//!
//! Everything is computed in the Cholesky-whitened space `L^-1 A'` so the
//! projections stay well conditioned for the small problems used here.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (constraint {constraint} cannot be satisfied)")]
    Infeasible { constraint: usize },
    #[error("no convergence after {iterations} iterations")]
    MaxIterations { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Absolute primal feasibility tolerance, scaled by `1 + |b|_inf`.
    pub feas_tol: f64,
    /// Cap on inner iterations; `0` picks a size-based default.
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-12,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// Infinity-norm KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residual(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> KktResidual {
    let grad = h * x + c - a.transpose() * u;
    let s = a * x - b;
    KktResidual {
        stationarity: grad.amax(),
        primal: s.iter().fold(0.0_f64, |m, v| m.max(-v)),
        dual: u.iter().fold(0.0_f64, |m, v| m.max(-v)),
        complementarity: s
            .iter()
            .zip(u.iter())
            .fold(0.0_f64, |m, (si, ui)| m.max((si * ui).abs())),
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    solve_qp_with(h, c, a, b, &QpSettings::default())
}

pub fn solve_qp_with(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    let m = a.nrows();
    if h.ncols() != n || c.len() != n {
        return Err(QpError::DimensionMismatch(format!(
            "H is {}x{}, c has {} entries",
            h.nrows(),
            h.ncols(),
            c.len()
        )));
    }
    if m > 0 && a.ncols() != n || b.len() != m {
        return Err(QpError::DimensionMismatch(format!(
            "A is {}x{}, b has {} entries, expected {} columns",
            a.nrows(),
            a.ncols(),
            b.len(),
            n
        )));
    }
    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut x = -chol.solve(c);
    if m == 0 {
        return Ok(QpSolution {
            x,
            multipliers: DVector::zeros(0),
            active: Vec::new(),
            iterations: 0,
        });
    }

    // whitened constraint normals, one per column
    let a_white = l
        .solve_lower_triangular(&a.transpose())
        .ok_or(QpError::NotPositiveDefinite)?;
    let tol = settings.feas_tol * (1.0 + b.amax());
    let max_iter = if settings.max_iter > 0 {
        settings.max_iter
    } else {
        50 * (n + m) + 100
    };

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        // most violated inactive constraint
        let mut p = None;
        let mut worst = -tol;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let s = a.row(j).dot(&x.transpose()) - b[j];
            if s < worst {
                worst = s;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            break;
        };

        let ap = a_white.column(p).into_owned();
        let ap_norm2 = ap.norm_squared();
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::MaxIterations { iterations });
            }
            let (r, zt) = if active.is_empty() {
                (DVector::zeros(0), ap.clone())
            } else {
                let na = a_white.select_columns(active.iter());
                let qr = na.qr();
                let q = qr.q();
                let rr = qr.r();
                let qt_ap = q.transpose() * &ap;
                let r = rr
                    .solve_upper_triangular(&qt_ap)
                    .ok_or(QpError::MaxIterations { iterations })?;
                let zt = &ap - q * qt_ap;
                (r, zt)
            };
            let zz = zt.norm_squared();
            let dependent = zz <= 1e-13 * ap_norm2.max(f64::MIN_POSITIVE);

            let r_scale = 1e-13 * (1.0 + r.amax());
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > r_scale {
                    let t = u[idx] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(idx);
                    }
                }
            }
            let sp = a.row(p).dot(&x.transpose()) - b[p];
            let t2 = if dependent { f64::INFINITY } else { -sp / zz };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible { constraint: p });
            }
            if t2.is_infinite() {
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui = (*ui - t1 * ri).max(0.0);
                }
                up += t1;
                let k = drop.expect("finite partial step has a blocking index");
                active.remove(k);
                u.remove(k);
                continue;
            }

            let t = t1.min(t2);
            let z = l
                .tr_solve_lower_triangular(&zt)
                .ok_or(QpError::NotPositiveDefinite)?;
            x.axpy(t, &z, 1.0);
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui = (*ui - t * ri).max(0.0);
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let k = drop.expect("partial step has a blocking index");
            active.remove(k);
            u.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (j, uj) in active.iter().zip(&u) {
        multipliers[*j] = *uj;
    }
    Ok(QpSolution {
        x,
        multipliers,
        active,
        iterations,
    })
}
