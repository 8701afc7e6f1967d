use std::io::BufReader;
use std::net::TcpListener;
use std::thread;

use serde_json::{json, Value};

use rmfs::protocol::{ErrorCode, ErrorPayload, Frame, FrameKind, ResultPayload, StatePayload};
use rmfs::server::{self, Client, Endpoint, Pinned, Server};
use rmfs_core::datagen::{gen_instance, ScenarioConfig};
use rmfs_core::env::EnvConfig;
use rmfs_core::{run_episode, AllocatorKind, SchedulerKind, SimConfig};

fn send(server: &mut Server, v: Value) -> Frame {
    let reply = server.handle_line(&v.to_string());
    assert!(reply.ends_with('\n') && reply.matches('\n').count() == 1);
    Frame::parse(&reply).unwrap()
}

fn error_code(f: &Frame) -> ErrorCode {
    assert_eq!(f.kind, FrameKind::Error, "{}", f.payload);
    f.payload_as::<ErrorPayload>().unwrap().code
}

fn hello(server: &mut Server, session: &str) -> Frame {
    send(server, json!({"kind": "hello", "session": session, "seq": 0, "payload": {"version": 1}}))
}

fn reset(server: &mut Server, session: &str, seq: u64) -> Frame {
    send(
        server,
        json!({"kind": "reset", "session": session, "seq": seq,
               "payload": {"dataset": {"scenario": "micro", "seed": 4}, "seed": 4}}),
    )
}

/// First valid candidate with work behind it, else the first valid one.
fn pick(state: &StatePayload) -> usize {
    let obs = state.observation.as_ref().unwrap();
    (0..obs.mask.len())
        .find(|&i| obs.mask[i] && obs.relevant[i])
        .or_else(|| obs.mask.iter().position(|&m| m))
        .unwrap()
}

#[test]
fn a_session_runs_to_its_result() {
    let mut srv = Server::new();
    let h = hello(&mut srv, "a");
    assert_eq!(h.kind, FrameKind::Hello);
    assert_eq!(h.payload["version"], 1);
    let mut f = reset(&mut srv, "a", 1);
    let mut seq = 2;
    let mut steps = 0;
    loop {
        assert_eq!(f.kind, FrameKind::State, "{}", f.payload);
        assert_eq!(f.seq, seq - 1);
        let state: StatePayload = f.payload_as().unwrap();
        if state.done {
            assert!(state.observation.is_none());
            break;
        }
        let i = pick(&state);
        f = send(&mut srv, json!({"kind": "action", "session": "a", "seq": seq, "payload": {"index": i}}));
        seq += 1;
        steps += 1;
    }
    assert!(steps > 0);
    // No more actions once the episode is over.
    let late = send(&mut srv, json!({"kind": "action", "session": "a", "seq": seq, "payload": {"index": 0}}));
    assert_eq!(error_code(&late), ErrorCode::Protocol);
    let r = send(&mut srv, json!({"kind": "result", "session": "a", "seq": seq + 1, "payload": {"include_log": true}}));
    let result: ResultPayload = r.payload_as().unwrap();
    assert_eq!(result.metrics.completed, result.metrics.orders - result.metrics.rejected);
    assert!(!result.log.unwrap().is_empty());
    assert_eq!(srv.finished().len(), 1);
}

#[test]
fn sequence_numbers_are_enforced() {
    let mut srv = Server::new();
    hello(&mut srv, "s");
    let skip = reset(&mut srv, "s", 2);
    assert_eq!(error_code(&skip), ErrorCode::Sequence);
    // A rejected sequence number does not advance the session.
    assert_eq!(reset(&mut srv, "s", 1).kind, FrameKind::State);
    let again = reset(&mut srv, "s", 1);
    assert_eq!(error_code(&again), ErrorCode::Sequence);
    // Hello starts over from zero.
    hello(&mut srv, "s");
    assert_eq!(reset(&mut srv, "s", 1).kind, FrameKind::State);
    let bad_hello = send(&mut srv, json!({"kind": "hello", "session": "s", "seq": 4, "payload": {"version": 1}}));
    assert_eq!(error_code(&bad_hello), ErrorCode::Sequence);
}

#[test]
fn invalid_actions_return_the_unchanged_state() {
    let mut srv = Server::new();
    hello(&mut srv, "x");
    let first: StatePayload = reset(&mut srv, "x", 1).payload_as().unwrap();
    let obs = first.observation.clone().unwrap();
    let masked = obs.mask.iter().position(|m| !m).unwrap();
    for (seq, index) in [(2, masked), (3, obs.mask.len()), (4, usize::MAX)] {
        let f = send(&mut srv, json!({"kind": "action", "session": "x", "seq": seq, "payload": {"index": index}}));
        let err: ErrorPayload = f.payload_as().unwrap();
        assert_eq!(err.code, ErrorCode::InvalidAction);
        assert_eq!(err.state.unwrap().observation.as_ref(), Some(&obs));
    }
    let ok = send(&mut srv, json!({"kind": "action", "session": "x", "seq": 5, "payload": {"index": pick(&first)}}));
    assert_eq!(ok.kind, FrameKind::State);
}

#[test]
fn out_of_order_requests_are_protocol_errors() {
    let mut srv = Server::new();
    let unknown = send(&mut srv, json!({"kind": "reset", "session": "nobody", "seq": 1, "payload": {}}));
    assert_eq!(error_code(&unknown), ErrorCode::Protocol);
    hello(&mut srv, "p");
    let early = send(&mut srv, json!({"kind": "action", "session": "p", "seq": 1, "payload": {"index": 0}}));
    assert_eq!(error_code(&early), ErrorCode::Protocol);
    let result = send(&mut srv, json!({"kind": "result", "session": "p", "seq": 2}));
    assert_eq!(error_code(&result), ErrorCode::Protocol);
    let state = send(&mut srv, json!({"kind": "state", "session": "p", "seq": 3}));
    assert_eq!(error_code(&state), ErrorCode::Protocol);
    reset(&mut srv, "p", 4);
    let running = send(&mut srv, json!({"kind": "result", "session": "p", "seq": 5}));
    assert_eq!(error_code(&running), ErrorCode::Protocol);
}

#[test]
fn bad_frames_and_payloads_are_reported() {
    let mut srv = Server::new();
    let f = Frame::parse(&srv.handle_line("not json")).unwrap();
    assert_eq!(error_code(&f), ErrorCode::Malformed);
    assert_eq!((f.session.as_str(), f.seq), ("", 0));
    let v = send(&mut srv, json!({"kind": "hello", "session": "v", "seq": 0, "payload": {"version": 99}}));
    assert_eq!(error_code(&v), ErrorCode::Version);
    hello(&mut srv, "v");
    let missing = send(&mut srv, json!({"kind": "reset", "session": "v", "seq": 1, "payload": {"dataset": {"path": "/does/not/exist"}}}));
    assert_eq!(error_code(&missing), ErrorCode::Simulation);
    let shaping = send(
        &mut srv,
        json!({"kind": "reset", "session": "v", "seq": 2,
               "payload": {"dataset": {"scenario": "micro"}, "shaping": {"gamma": 2.0}}}),
    );
    assert_eq!(error_code(&shaping), ErrorCode::Simulation);
    let typo = send(&mut srv, json!({"kind": "reset", "session": "v", "seq": 3, "payload": {"dataset": 5}}));
    assert_eq!(error_code(&typo), ErrorCode::Malformed);
}

#[test]
fn sessions_are_independent() {
    let mut srv = Server::new();
    hello(&mut srv, "one");
    hello(&mut srv, "two");
    assert_eq!(reset(&mut srv, "one", 1).kind, FrameKind::State);
    assert_eq!(reset(&mut srv, "two", 1).kind, FrameKind::State);
    assert_eq!(srv.num_sessions(), 2);
}

#[test]
fn streams_tolerate_blank_lines_and_invalid_utf8() {
    let mut srv = Server::new();
    let mut input = b"\n{\"kind\":\"hello\",\"session\":\"u\",\"seq\":0,\"payload\":{\"version\":1}}\n\n".to_vec();
    input.extend_from_slice(b"\xff\xfe{\n");
    input.extend_from_slice(b"{\"kind\":\"reset\",\"session\":\"u\",\"seq\":1,\"payload\":{\"dataset\":{\"scenario\":\"micro\"}}}");
    let mut out = Vec::new();
    server::serve_stream(&mut srv, BufReader::new(&input[..]), &mut out).unwrap();
    let replies: Vec<Frame> = String::from_utf8(out).unwrap().lines().map(|l| Frame::parse(l).unwrap()).collect();
    let kinds: Vec<FrameKind> = replies.iter().map(|f| f.kind).collect();
    assert_eq!(kinds, [FrameKind::Hello, FrameKind::Error, FrameKind::State]);
}

#[test]
fn endpoints_parse() {
    assert_eq!("stdio".parse::<Endpoint>().unwrap(), Endpoint::Stdio);
    assert_eq!("tcp://127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
    assert_eq!("127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
    assert!("nonsense".parse::<Endpoint>().is_err());
}

#[test]
fn pinned_server_ignores_the_requested_instance() {
    let ds = gen_instance(&ScenarioConfig::micro(9)).unwrap();
    let cfg = SimConfig::with_allocator(AllocatorKind::Wlb, 9);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let pinned = Pinned {
        dataset: ds.clone(),
        config: EnvConfig {
            sim: cfg.clone(),
            prune: None,
        },
    };
    let handle = thread::spawn(move || server::serve_pinned_once(&listener, pinned).unwrap());

    let mut client = Client::connect(addr, "pinned").unwrap();
    client.hello().unwrap();
    let mut f = client
        .request(FrameKind::Reset, json!({"dataset": {"scenario": "synth", "scale": "large"}}))
        .unwrap();
    loop {
        let state: StatePayload = f.payload_as().unwrap();
        if state.done {
            break;
        }
        f = client.request(FrameKind::Action, json!({"index": pick(&state)})).unwrap();
    }
    let r: ResultPayload = client.request(FrameKind::Result, json!({})).unwrap().payload_as().unwrap();
    assert!(r.log.is_none());
    drop(client);
    let finished = handle.join().unwrap();
    assert_eq!(finished.len(), 1);
    assert_eq!(finished[0].metrics, r.metrics);
    assert_eq!(r.metrics.orders, ds.orders.len());
    // A heuristic run on the same instance sees the same order stream.
    let local = run_episode(&ds, &cfg, SchedulerKind::Nearest).unwrap();
    assert_eq!(local.metrics.orders, r.metrics.orders);
}

#[test]
fn interleaved_sessions_match_serial_runs() {
    let serial = |session: &str, seed: u64| {
        let mut srv = Server::new();
        run_session(&mut srv, &[(session, seed)]).remove(0)
    };
    let mut srv = Server::new();
    let both = run_session(&mut srv, &[("left", 1), ("right", 2)]);
    assert_eq!(both[0], serial("left", 1));
    assert_eq!(both[1], serial("right", 2));
    assert_ne!(both[0], both[1]);
}

/// Runs the given sessions in lockstep and returns each one's log.
fn run_session(srv: &mut Server, sessions: &[(&str, u64)]) -> Vec<String> {
    let mut states = Vec::new();
    for &(name, seed) in sessions {
        hello(srv, name);
        let f = send(
            srv,
            json!({"kind": "reset", "session": name, "seq": 1,
                   "payload": {"dataset": {"scenario": "micro", "seed": seed}, "seed": seed}}),
        );
        states.push((f.payload_as::<StatePayload>().unwrap(), 2u64));
    }
    while states.iter().any(|(s, _)| !s.done) {
        for (k, &(name, _)) in sessions.iter().enumerate() {
            let (state, seq) = &mut states[k];
            if state.done {
                continue;
            }
            let f = send(srv, json!({"kind": "action", "session": name, "seq": *seq, "payload": {"index": pick(state)}}));
            *state = f.payload_as().unwrap();
            *seq += 1;
        }
    }
    sessions
        .iter()
        .zip(&states)
        .map(|(&(name, _), (_, seq))| {
            let r = send(srv, json!({"kind": "result", "session": name, "seq": *seq, "payload": {"include_log": true}}));
            serde_json::to_string(&r.payload_as::<ResultPayload>().unwrap().log).unwrap()
        })
        .collect()
}
