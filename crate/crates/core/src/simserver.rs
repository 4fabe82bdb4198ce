//! Newline-delimited JSON service over the exact stepper.
//!
//! Each line in is one request object with an `op` field; each line out is
//! one response. A session holds one system state. See `docs/PROTOCOL.md`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

use crate::dynamics::{
    contact_set, finger_phi, step_exact, Action, DynamicsParams, SystemState, TaskDescription,
};
use crate::metrics::{is_success, weighted_distance};
use crate::planners::sample_initial_state;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Reset {
        #[serde(default)]
        state: Option<SystemState>,
        #[serde(default)]
        random_seed: Option<u64>,
    },
    Step {
        actions: Vec<Vec<f64>>,
    },
    TaskInfo,
    Close,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerContact {
    pub finger: usize,
    /// Signed distance to the disk surface.
    pub phi: f64,
    /// Within the contact detection distance.
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSummary {
    pub active: usize,
    pub fingers: Vec<FingerContact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task: TaskDescription,
    pub params: DynamicsParams,
    pub n_rbt: usize,
    pub dt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SystemState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contacts: Option<ContactSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    /// Weighted distance of the object to the goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    /// Success flag after each applied action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_success: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_info: Option<TaskInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn error(msg: String) -> Self {
        Self {
            ok: false,
            error: Some(msg),
            ..Self::default()
        }
    }
}

/// One client's state machine.
#[derive(Clone, Debug)]
pub struct Session {
    params: DynamicsParams,
    task: TaskDescription,
    state: Option<SystemState>,
    closed: bool,
}

impl Session {
    pub fn new(params: DynamicsParams, task: TaskDescription) -> Self {
        Self {
            params,
            task,
            state: None,
            closed: false,
        }
    }

    pub fn state(&self) -> Option<&SystemState> {
        self.state.as_ref()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn observe(&self, s: &SystemState) -> Response {
        let contacts = contact_set(s, &self.task, self.params.d_max);
        let fingers = (0..self.task.finger_count)
            .map(|i| FingerContact {
                finger: i,
                phi: finger_phi(s, &self.task, i),
                active: contacts.iter().any(|c| c.finger == i),
            })
            .collect();
        Response {
            ok: true,
            state: Some(s.clone()),
            contacts: Some(ContactSummary {
                active: contacts.len(),
                fingers,
            }),
            success: Some(is_success(s, &self.task)),
            distance: Some(weighted_distance(&s.q_obj, &self.task.goal)),
            ..Response::default()
        }
    }

    fn check_state(&self, s: &SystemState) -> Result<(), String> {
        if s.n_rbt() != self.task.n_rbt() {
            return Err(format!(
                "state has {} joints, task has {}",
                s.n_rbt(),
                self.task.n_rbt()
            ));
        }
        if !s.is_finite() {
            return Err("state is not finite".into());
        }
        Ok(())
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Reset { state, random_seed } => {
                let s = match (state, random_seed) {
                    (Some(_), Some(_)) => {
                        return Response::error(
                            "reset takes either state or random_seed, not both".into(),
                        )
                    }
                    (Some(s), None) => {
                        if let Err(e) = self.check_state(&s) {
                            return Response::error(e);
                        }
                        SystemState::new(s.q_obj, s.q_rbt)
                    }
                    (None, seed) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
                        match sample_initial_state(&self.task, self.task.init_region, &mut rng) {
                            Ok(s) => s,
                            Err(e) => return Response::error(e.to_string()),
                        }
                    }
                };
                let r = self.observe(&s);
                self.state = Some(s);
                r
            }
            Request::Step { actions } => {
                let Some(cur) = &self.state else {
                    return Response::error("protocol error: step before reset".into());
                };
                let n = self.task.n_rbt();
                if let Some(i) = actions.iter().position(|a| a.len() != n) {
                    return Response::error(format!(
                        "action {i} has {} entries, expected {n}",
                        actions[i].len()
                    ));
                }
                if actions.iter().flatten().any(|v| !v.is_finite()) {
                    return Response::error("actions must be finite".into());
                }
                let mut s = cur.clone();
                let mut flags = Vec::with_capacity(actions.len());
                for (i, a) in actions.into_iter().enumerate() {
                    match step_exact(&s, &Action(a), &self.params, &self.task) {
                        Ok(next) => s = next,
                        Err(e) => return Response::error(format!("action {i}: {e}")),
                    }
                    flags.push(is_success(&s, &self.task));
                }
                let mut r = self.observe(&s);
                r.step_success = Some(flags);
                self.state = Some(s);
                r
            }
            Request::TaskInfo => Response {
                ok: true,
                task_info: Some(TaskInfo {
                    task: self.task.clone(),
                    params: self.params.clone(),
                    n_rbt: self.task.n_rbt(),
                    dt: self.params.h,
                }),
                ..Response::default()
            },
            Request::Close => {
                self.closed = true;
                Response {
                    ok: true,
                    ..Response::default()
                }
            }
        }
    }

    /// Answers one request line. Malformed input gives `ok = false` and leaves
    /// the session unchanged.
    pub fn handle_line(&mut self, line: &str) -> String {
        let resp = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Response::error(format!("parse error: {e}")),
        };
        serde_json::to_string(&resp).expect("responses serialize")
    }
}

/// Serves one session until `close` or end of input. Blank lines are ignored.
pub fn serve_io<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> io::Result<()> {
    let mut session = Session::new(params.clone(), task.clone());
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = session.handle_line(&line);
        output.write_all(out.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

pub fn serve_stdio(params: &DynamicsParams, task: &TaskDescription) -> io::Result<()> {
    let stdin = io::stdin();
    serve_io(stdin.lock(), io::stdout().lock(), params, task)
}

fn serve_stream(
    stream: TcpStream,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_io(reader, stream, params, task)
}

/// Accepts connections, one thread and one independent session each. Stops
/// after `max_connections` if given.
pub fn serve_tcp(
    listener: TcpListener,
    params: &DynamicsParams,
    task: &TaskDescription,
    max_connections: Option<usize>,
) -> io::Result<()> {
    std::thread::scope(|scope| {
        for (n, conn) in listener.incoming().enumerate() {
            if max_connections.is_some_and(|m| n >= m) {
                break;
            }
            let stream = conn?;
            scope.spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_stream(stream, params, task) {
                    log::warn!("session {peer:?} ended with {e}");
                }
            });
            if max_connections.is_some_and(|m| n + 1 >= m) {
                break;
            }
        }
        Ok(())
    })
}
