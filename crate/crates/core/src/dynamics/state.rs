use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Shortest signed rotation taking `from` to `to`, in `(-pi, pi]`.
///
/// A difference of exactly half a turn resolves to `+pi`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

/// Planar object pose `[x, y, theta]` plus the robot joint vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub q_obj: [f64; 3],
    pub q_rbt: Vec<f64>,
}

impl SystemState {
    pub fn new(q_obj: [f64; 3], q_rbt: Vec<f64>) -> Self {
        let mut s = Self { q_obj, q_rbt };
        s.q_obj[2] = wrap_angle(s.q_obj[2]);
        s
    }

    pub fn n_rbt(&self) -> usize {
        self.q_rbt.len()
    }

    /// Length of the generalized coordinate vector.
    pub fn dim(&self) -> usize {
        3 + self.q_rbt.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.q_obj);
        v.extend_from_slice(&self.q_rbt);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.q_obj.iter().chain(&self.q_rbt).all(|v| v.is_finite())
    }

    /// Position of finger `i` in the plane.
    pub fn finger(&self, i: usize) -> [f64; 2] {
        [self.q_rbt[2 * i], self.q_rbt[2 * i + 1]]
    }

    /// Infinity-norm distance over all coordinates, with the yaw difference wrapped.
    pub fn max_abs_diff(&self, other: &SystemState) -> f64 {
        let mut m = (self.q_obj[0] - other.q_obj[0])
            .abs()
            .max((self.q_obj[1] - other.q_obj[1]).abs())
            .max(angle_diff(self.q_obj[2], other.q_obj[2]).abs());
        for (a, b) in self.q_rbt.iter().zip(&other.q_rbt) {
            m = m.max((a - b).abs());
        }
        if self.q_rbt.len() != other.q_rbt.len() {
            return f64::INFINITY;
        }
        m
    }

    /// Bitwise equality, used by the determinism checks.
    pub fn bit_eq(&self, other: &SystemState) -> bool {
        self.q_rbt.len() == other.q_rbt.len()
            && self
                .q_obj
                .iter()
                .chain(&self.q_rbt)
                .zip(other.q_obj.iter().chain(&other.q_rbt))
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Commanded robot joint positions, tracked by the stiffness controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Action {
    fn from(v: Vec<f64>) -> Self {
        Action(v)
    }
}
