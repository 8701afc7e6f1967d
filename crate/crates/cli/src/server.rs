//! Session handling and transports for the environment protocol.
//!
//! A [`Server`] owns the sessions of one connection and answers every
//! request line with exactly one reply line. Connections share nothing.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;

use log::{debug, info, warn};
use rmfs_core::datagen::Dataset;
use rmfs_core::env::{Env, EnvConfig};
use rmfs_core::sim::{EpisodeMetrics, LogRecord};

use crate::protocol::{
    ActionRequest, ErrorCode, ErrorPayload, Frame, FrameKind, Hello, ResetRequest, ResultPayload,
    ResultRequest, PROTOCOL_VERSION,
};

/// A fixed instance that replaces whatever a reset asks for.
#[derive(Clone)]
pub struct Pinned {
    pub dataset: Dataset,
    pub config: EnvConfig,
}

struct Session {
    next_seq: u64,
    env: Option<Env>,
}

/// A finished episode, kept for callers that pin the instance.
#[derive(Clone, Debug)]
pub struct Finished {
    pub session: String,
    pub metrics: EpisodeMetrics,
    pub log: Vec<LogRecord>,
}

#[derive(Default)]
pub struct Server {
    sessions: HashMap<String, Session>,
    pinned: Option<Pinned>,
    finished: Vec<Finished>,
}

impl Server {
    pub fn new() -> Self {
        Self::default()
    }

    /// A server whose resets always run `pinned`.
    pub fn pinned(pinned: Pinned) -> Self {
        Self {
            pinned: Some(pinned),
            ..Self::default()
        }
    }

    /// Episodes whose result was requested.
    pub fn finished(&self) -> &[Finished] {
        &self.finished
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Answers one request line.
    pub fn handle_line(&mut self, line: &str) -> String {
        let frame = match Frame::parse(line.trim()) {
            Ok(f) => f,
            Err(e) => {
                return Frame::error("", 0, ErrorCode::Malformed, format!("unreadable frame: {e}")).to_line();
            }
        };
        let (sid, seq) = (frame.session.clone(), frame.seq);
        let err = |code, msg: String| Frame::error(&sid, seq, code, msg).to_line();

        if frame.kind == FrameKind::Hello {
            let hello: Hello = match frame.payload_as() {
                Ok(h) => h,
                Err(e) => return err(ErrorCode::Malformed, format!("hello payload: {e}")),
            };
            if hello.version != PROTOCOL_VERSION {
                return err(
                    ErrorCode::Version,
                    format!("protocol version {} not supported, expected {PROTOCOL_VERSION}", hello.version),
                );
            }
            if seq != 0 {
                return err(ErrorCode::Sequence, "hello must carry seq 0".into());
            }
            self.sessions.insert(sid.clone(), Session { next_seq: 1, env: None });
            debug!("session `{sid}` opened");
            return Frame::encode(
                FrameKind::Hello,
                &sid,
                seq,
                &Hello {
                    version: PROTOCOL_VERSION,
                    server: Some(format!("rmfs {}", env!("CARGO_PKG_VERSION"))),
                },
            );
        }

        let Some(session) = self.sessions.get_mut(&sid) else {
            return err(ErrorCode::Protocol, format!("unknown session `{sid}`, send hello first"));
        };
        if seq != session.next_seq {
            return err(
                ErrorCode::Sequence,
                format!("expected seq {}, got {seq}", session.next_seq),
            );
        }
        session.next_seq += 1;

        match frame.kind {
            FrameKind::Reset => {
                let (dataset, config) = match &self.pinned {
                    Some(p) => (p.dataset.clone(), p.config.clone()),
                    None => {
                        let req: ResetRequest = match frame.payload_as() {
                            Ok(r) => r,
                            Err(e) => return err(ErrorCode::Malformed, format!("reset payload: {e}")),
                        };
                        match req.dataset.load() {
                            Ok(ds) => (ds, req.env_config()),
                            Err(e) => return err(ErrorCode::Simulation, e),
                        }
                    }
                };
                session.env = None;
                match Env::reset(&dataset, config) {
                    Ok((env, first)) => {
                        session.env = Some(env);
                        Frame::encode(FrameKind::State, &sid, seq, &first)
                    }
                    Err(e) => err(ErrorCode::Simulation, e.to_string()),
                }
            }
            FrameKind::Action => {
                let Some(env) = session.env.as_mut() else {
                    return err(ErrorCode::Protocol, "no episode, send reset first".into());
                };
                if env.is_done() {
                    return err(ErrorCode::Protocol, "episode is over, request the result".into());
                }
                let req: ActionRequest = match frame.payload_as() {
                    Ok(r) => r,
                    Err(e) => return err(ErrorCode::Malformed, format!("action payload: {e}")),
                };
                match env.step(req.index) {
                    Ok(t) => Frame::encode(FrameKind::State, &sid, seq, &t),
                    Err(rmfs_core::SimError::InvalidAction { index, reason }) => {
                        let state = rmfs_core::env::Transition {
                            observation: env.observation().cloned(),
                            reward: 0.0,
                            dt: 0,
                            done: false,
                        };
                        Frame::encode(
                            FrameKind::Error,
                            &sid,
                            seq,
                            &ErrorPayload {
                                code: ErrorCode::InvalidAction,
                                message: format!("action {index}: {reason}"),
                                state: Some(state),
                            },
                        )
                    }
                    Err(e) => {
                        session.env = None;
                        err(ErrorCode::Simulation, e.to_string())
                    }
                }
            }
            FrameKind::Result => {
                let Some(env) = session.env.as_ref() else {
                    return err(ErrorCode::Protocol, "no episode, send reset first".into());
                };
                if !env.is_done() {
                    return err(ErrorCode::Protocol, "episode still running".into());
                }
                let req: ResultRequest = frame.payload_as().unwrap_or_default();
                let metrics = env.metrics();
                self.finished.push(Finished {
                    session: sid.clone(),
                    metrics: metrics.clone(),
                    log: env.log().to_vec(),
                });
                let log = req.include_log.then(|| env.log().to_vec());
                Frame::encode(FrameKind::Result, &sid, seq, &ResultPayload { metrics, log })
            }
            FrameKind::State | FrameKind::Error | FrameKind::Hello => {
                err(ErrorCode::Protocol, format!("{:?} frames are sent by the server", frame.kind))
            }
        }
    }
}

/// Serves one byte stream until it closes.
pub fn serve_stream(server: &mut Server, reader: impl BufRead, mut writer: impl Write) -> io::Result<()> {
    let mut reader = reader;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf);
        if line.trim().is_empty() {
            continue;
        }
        writer.write_all(server.handle_line(&line).as_bytes())?;
        writer.flush()?;
    }
}

fn serve_connection(stream: TcpStream, server: &mut Server) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(server, reader, BufWriter::new(stream))
}

/// Accepts connections forever, one thread and one [`Server`] each.
pub fn serve_listener(listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        info!("connection from {peer}");
        thread::spawn(move || {
            let mut server = Server::new();
            if let Err(e) = serve_connection(stream, &mut server) {
                warn!("connection {peer}: {e}");
            }
            debug!("connection {peer} closed, {} sessions dropped", server.num_sessions());
        });
    }
    Ok(())
}

/// Accepts one connection and serves the pinned instance until it closes.
pub fn serve_pinned_once(listener: &TcpListener, pinned: Pinned) -> io::Result<Vec<Finished>> {
    let (stream, _) = listener.accept()?;
    let mut server = Server::pinned(pinned);
    serve_connection(stream, &mut server)?;
    Ok(server.finished)
}

/// Where to listen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Stdio,
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "stdio" || s == "-" {
            return Ok(Endpoint::Stdio);
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        addr.to_socket_addrs()
            .map_err(|e| format!("bad endpoint `{s}`: {e}"))?
            .next()
            .ok_or_else(|| format!("endpoint `{s}` resolves to nothing"))?;
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

pub fn serve(endpoint: &Endpoint) -> io::Result<()> {
    match endpoint {
        Endpoint::Stdio => {
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve_stream(&mut Server::new(), stdin.lock(), stdout.lock())
        }
        Endpoint::Tcp(addr) => {
            let listener = TcpListener::bind(addr)?;
            info!("listening on {}", listener.local_addr()?);
            serve_listener(listener)
        }
    }
}

/// Minimal blocking client, used by tests and the remote harness.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pub session: String,
    seq: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, session: &str) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            session: session.to_string(),
            seq: 0,
        })
    }

    /// Sends a raw line and reads one reply line.
    pub fn raw(&mut self, line: &str) -> io::Result<String> {
        self.writer.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            self.writer.write_all(b"\n")?;
        }
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed"));
        }
        Ok(reply)
    }

    /// Sends a request with the next sequence number and parses the reply.
    pub fn request(&mut self, kind: FrameKind, payload: impl serde::Serialize) -> io::Result<Frame> {
        let line = Frame::encode(kind, &self.session, self.seq, &payload);
        self.seq += 1;
        let reply = self.raw(&line)?;
        Frame::parse(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn hello(&mut self) -> io::Result<Frame> {
        self.seq = 0;
        self.request(
            FrameKind::Hello,
            Hello {
                version: PROTOCOL_VERSION,
                server: None,
            },
        )
    }
}
