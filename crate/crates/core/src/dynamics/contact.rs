use serde::{Deserialize, Serialize};

use super::{SystemState, TaskDescription};

/// One finger-disk contact candidate.
///
/// `jn` and `jt` are rows of the contact Jacobian with respect to the full
/// increment `[dx, dy, dtheta, q_rbt...]`. The normal points from the disk
/// toward the finger and the tangent is the normal rotated by +90 degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub phi: f64,
    pub finger: usize,
    pub normal: [f64; 2],
    pub jn: Vec<f64>,
    pub jt: Vec<f64>,
}

/// Signed distance from finger `i` to the disk surface.
pub fn finger_phi(state: &SystemState, task: &TaskDescription, i: usize) -> f64 {
    let [fx, fy] = state.finger(i);
    let dx = fx - state.q_obj[0];
    let dy = fy - state.q_obj[1];
    dx.hypot(dy) - task.disk_radius - task.finger_radius
}

/// Every finger-disk pair whose signed distance is at most `d_max`.
pub fn contact_set(state: &SystemState, task: &TaskDescription, d_max: f64) -> Vec<ContactPoint> {
    let n = state.dim();
    let mut out = Vec::new();
    for i in 0..task.finger_count {
        let [fx, fy] = state.finger(i);
        let dx = fx - state.q_obj[0];
        let dy = fy - state.q_obj[1];
        let dist = dx.hypot(dy);
        let phi = dist - task.disk_radius - task.finger_radius;
        if phi > d_max {
            continue;
        }
        let normal = if dist > 0.0 {
            [dx / dist, dy / dist]
        } else {
            [1.0, 0.0]
        };
        let tangent = [-normal[1], normal[0]];
        let mut jn = vec![0.0; n];
        let mut jt = vec![0.0; n];
        jn[0] = -normal[0];
        jn[1] = -normal[1];
        jn[3 + 2 * i] = normal[0];
        jn[3 + 2 * i + 1] = normal[1];
        // relative tangential motion of the finger against the disk material point
        jt[0] = -tangent[0];
        jt[1] = -tangent[1];
        jt[2] = -task.disk_radius;
        jt[3 + 2 * i] = tangent[0];
        jt[3 + 2 * i + 1] = tangent[1];
        out.push(ContactPoint {
            phi,
            finger: i,
            normal,
            jn,
            jt,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskDescription {
        TaskDescription::default()
    }

    fn state_with_fingers(c: [f64; 3], fingers: [[f64; 2]; 2]) -> SystemState {
        SystemState::new(
            c,
            vec![fingers[0][0], fingers[0][1], fingers[1][0], fingers[1][1]],
        )
    }

    #[test]
    fn point_to_circle_distance() {
        let s = state_with_fingers([0.6, 0.0, 0.0], [[0.95, 0.0], [0.6, 0.5]]);
        let cs = contact_set(&s, &task(), 0.1);
        assert_eq!(cs.len(), 1);
        assert!((cs[0].phi - 0.05).abs() < 1e-12);
        assert_eq!(cs[0].finger, 0);
    }

    #[test]
    fn boundary_contact_has_zero_phi() {
        let s = state_with_fingers([0.6, 0.0, 0.0], [[0.6, 0.3], [0.0, 0.0]]);
        let cs = contact_set(&s, &task(), 0.0);
        assert_eq!(cs.len(), 1);
        assert!(cs[0].phi.abs() < 1e-15);
    }

    #[test]
    fn empty_when_far() {
        let s = state_with_fingers([0.6, 0.0, 0.0], [[1.2, 0.0], [0.6, -0.7]]);
        assert!(contact_set(&s, &task(), 0.05).is_empty());
    }

    #[test]
    fn normals_are_unit_and_rows_sized() {
        let s = state_with_fingers([0.6, 0.1, 0.3], [[0.91, 0.13], [0.45, -0.16]]);
        for c in contact_set(&s, &task(), 0.1) {
            let n = c.normal[0].hypot(c.normal[1]);
            assert!((n - 1.0).abs() < 1e-9);
            assert_eq!(c.jn.len(), 7);
            assert_eq!(c.jt.len(), 7);
        }
    }
}
