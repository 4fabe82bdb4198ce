use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;

use cdsynth::dynamics::{step_exact, Action, DynamicsParams, SystemState, TaskDescription};
use cdsynth::simserver::{serve_io, serve_tcp, Request, Response, Session};

fn session() -> Session {
    Session::new(DynamicsParams::default(), TaskDescription::default())
}

fn call(s: &mut Session, req: Value) -> Value {
    serde_json::from_str(&s.handle_line(&req.to_string())).unwrap()
}

fn contact_state() -> SystemState {
    SystemState::new([0.6, 0.0, 0.0], vec![0.2995, 0.0, 0.6, 0.3005])
}

#[test]
fn reset_echoes_the_given_state() {
    let mut s = session();
    let st = contact_state();
    let r = call(&mut s, json!({"op": "reset", "state": st}));
    assert_eq!(r["ok"], true);
    let back: SystemState = serde_json::from_value(r["state"].clone()).unwrap();
    assert!(back.bit_eq(&st));
    assert_eq!(r["contacts"]["active"], 2);
    assert_eq!(r["success"], false);
    assert!(r.get("error").is_none());
    assert_eq!(s.state(), Some(&st));
}

#[test]
fn seeded_resets_are_reproducible() {
    let mut a = session();
    let mut b = session();
    let ra = call(&mut a, json!({"op": "reset", "random_seed": 5}));
    let rb = call(&mut b, json!({"op": "reset", "random_seed": 5}));
    assert_eq!(ra, rb);
    let r0 = call(&mut a, json!({"op": "reset"}));
    let r1 = call(&mut b, json!({"op": "reset", "random_seed": 0}));
    assert_eq!(r0, r1);
    let both = call(
        &mut a,
        json!({"op": "reset", "random_seed": 1, "state": contact_state()}),
    );
    assert_eq!(both["ok"], false);
}

#[test]
fn empty_step_leaves_state_unchanged() {
    let mut s = session();
    call(&mut s, json!({"op": "reset", "state": contact_state()}));
    let r = call(&mut s, json!({"op": "step", "actions": []}));
    assert_eq!(r["ok"], true);
    assert_eq!(r["step_success"], json!([]));
    assert!(s.state().unwrap().bit_eq(&contact_state()));
}

#[test]
fn steps_match_the_exact_stepper() {
    let (p, t) = (DynamicsParams::default(), TaskDescription::default());
    let mut s = session();
    let start = contact_state();
    call(&mut s, json!({"op": "reset", "state": start}));
    let acts: Vec<Vec<f64>> = (1..=5)
        .map(|k| vec![0.2995 + 0.002 * k as f64, 0.0, 0.6, 0.3005])
        .collect();
    let r = call(&mut s, json!({"op": "step", "actions": acts}));
    let mut want = start.clone();
    for a in &acts {
        want = step_exact(&want, &Action(a.clone()), &p, &t).unwrap();
    }
    let got: SystemState = serde_json::from_value(r["state"].clone()).unwrap();
    assert!(got.bit_eq(&want), "{got:?} vs {want:?}");
    assert_eq!(r["step_success"].as_array().unwrap().len(), 5);
    assert!(got.q_obj[0] > start.q_obj[0]);
}

#[test]
fn bad_requests_leave_the_session_alone() {
    let mut s = session();
    let r = call(
        &mut s,
        json!({"op": "step", "actions": [[0.0, 0.0, 0.0, 0.0]]}),
    );
    assert_eq!(r["ok"], false);
    assert!(r["error"].as_str().unwrap().contains("step before reset"));

    call(&mut s, json!({"op": "reset", "state": contact_state()}));
    for line in [
        "{not json",
        r#"{"op": "jump"}"#,
        r#"{"op": "step", "actions": [[1.0]]}"#,
        r#"{"op": "step", "actions": [[0.3, 0.0, 0.6, 0.3]], "extra": 1}"#,
        r#"{"op": "reset", "state": {"q_obj": [0.6, 0.0, 0.0], "q_rbt": [0.3]}}"#,
    ] {
        let r: Value = serde_json::from_str(&s.handle_line(line)).unwrap();
        assert_eq!(r["ok"], false, "{line}");
        assert!(r["error"].is_string());
        assert!(r.get("state").is_none());
    }
    let r: Value = serde_json::from_str(&s.handle_line("{bad")).unwrap();
    assert!(r["error"].as_str().unwrap().starts_with("parse error"));
    // a batch with one bad action applies none of them
    let r = call(
        &mut s,
        json!({"op": "step", "actions": [[0.3, 0.0, 0.6, 0.3], [1.0, 2.0]]}),
    );
    assert_eq!(r["ok"], false);
    assert!(s.state().unwrap().bit_eq(&contact_state()));
}

#[test]
fn task_info_and_close() {
    let mut s = session();
    let r = call(&mut s, json!({"op": "task_info"}));
    assert_eq!(r["task_info"]["n_rbt"], 4);
    assert_eq!(r["task_info"]["dt"], 0.1);
    let task: TaskDescription = serde_json::from_value(r["task_info"]["task"].clone()).unwrap();
    assert_eq!(task, TaskDescription::default());
    assert!(!s.is_closed());
    assert_eq!(call(&mut s, json!({"op": "close"}))["ok"], true);
    assert!(s.is_closed());
}

#[test]
fn requests_round_trip_through_json() {
    let reqs = [
        Request::Reset {
            state: Some(contact_state()),
            random_seed: None,
        },
        Request::Step {
            actions: vec![vec![0.1, 0.2, 0.3, 0.4]],
        },
        Request::TaskInfo,
        Request::Close,
    ];
    for r in reqs {
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<Request>(&text).unwrap(), r);
    }
    let r: Response = serde_json::from_str(r#"{"ok": false, "error": "x"}"#).unwrap();
    assert_eq!(r.error.as_deref(), Some("x"));
}

#[test]
fn io_loop_stops_at_close() {
    let input = "{\"op\":\"task_info\"}\n\n{\"op\":\"close\"}\n{\"op\":\"task_info\"}\n";
    let mut out = Vec::new();
    serve_io(
        Cursor::new(input),
        &mut out,
        &DynamicsParams::default(),
        &TaskDescription::default(),
    )
    .unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1], r#"{"ok":true}"#);
}

fn transcript_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/protocol_transcript.jsonl")
}

fn transcript_requests() -> Vec<String> {
    let s = contact_state();
    [
        json!({"op": "task_info"}).to_string(),
        json!({"op": "step", "actions": [[0.3, 0.0, 0.6, 0.3]]}).to_string(),
        json!({"op": "reset", "state": s}).to_string(),
        json!({"op": "step", "actions": [[0.3015, 0.0, 0.6, 0.3005], [0.3035, 0.001, 0.599, 0.3005]]}).to_string(),
        json!({"op": "step", "actions": [[0.31, 0.002, 0.598, 0.299]]}).to_string(),
        "{\"op\": \"step\", \"actions\": [[1.0]]}".to_string(),
        json!({"op": "reset", "random_seed": 3}).to_string(),
        "not json".to_string(),
        json!({"op": "close"}).to_string(),
    ]
    .to_vec()
}

/// Replays a recorded session byte for byte. `CDSYNTH_BLESS=1` rewrites the recording.
#[test]
fn golden_transcript() {
    let mut s = session();
    let got: Vec<(String, String)> = transcript_requests()
        .into_iter()
        .map(|l| {
            let r = s.handle_line(&l);
            (l, r)
        })
        .collect();
    let path = transcript_path();
    if std::env::var_os("CDSYNTH_BLESS").is_some() {
        let text: String = got
            .iter()
            .map(|(q, r)| format!("{}\n", json!({"request": q, "response": r})))
            .collect();
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
    }
    let want: Vec<(String, String)> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (
                v["request"].as_str().unwrap().to_string(),
                v["response"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    assert_eq!(want, got);
}

fn tcp_client(addr: std::net::SocketAddr, reqs: &[Value]) -> Vec<Value> {
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = Vec::new();
    for r in reqs {
        writeln!(stream, "{r}").unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        out.push(serde_json::from_str(&line).unwrap());
    }
    out
}

#[test]
fn tcp_sessions_are_isolated() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        serve_tcp(
            listener,
            &DynamicsParams::default(),
            &TaskDescription::default(),
            Some(2),
        )
        .unwrap();
    });
    let a = std::thread::spawn(move || {
        tcp_client(
            addr,
            &[
                json!({"op": "reset", "state": contact_state()}),
                json!({"op": "step", "actions": [[0.305, 0.0, 0.6, 0.3005]]}),
                json!({"op": "close"}),
            ],
        )
    });
    let b = std::thread::spawn(move || {
        tcp_client(
            addr,
            &[
                json!({"op": "step", "actions": [[0.3, 0.0, 0.6, 0.3]]}),
                json!({"op": "reset", "random_seed": 9}),
                json!({"op": "close"}),
            ],
        )
    });
    let ra = a.join().unwrap();
    let rb = b.join().unwrap();
    server.join().unwrap();
    assert_eq!(ra[1]["ok"], true);
    assert_eq!(rb[0]["ok"], false);
    let mut local = session();
    assert_eq!(
        rb[1],
        call(&mut local, json!({"op": "reset", "random_seed": 9}))
    );
    let mut local = session();
    call(&mut local, json!({"op": "reset", "state": contact_state()}));
    assert_eq!(
        ra[1],
        call(
            &mut local,
            json!({"op": "step", "actions": [[0.305, 0.0, 0.6, 0.3005]]})
        )
    );
}
