//! Line-delimited JSON client for external model servers.
//!
//! Request:  `{"id": <int>, "instances": [[<int>, ...], ...]}\n`
//! Response: `{"id": <int>, "labels": [<int>, ...]}\n`
//! Error:    `{"id": <int>, "error": "<msg>"}\n`
//!
//! One request is in flight at a time; the transport is held under a mutex.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;

use super::Classifier;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rule::{Instance, Label};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerAddress {
    /// Shell command whose stdin/stdout speak the protocol.
    Command(String),
    Tcp(String),
}

impl ServerAddress {
    /// `host:port` when the text looks like one, otherwise a shell command.
    pub fn parse(target: &str) -> Self {
        let looks_like_socket = !target.contains(char::is_whitespace)
            && target
                .rsplit_once(':')
                .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if looks_like_socket {
            ServerAddress::Tcp(target.to_string())
        } else {
            ServerAddress::Command(target.to_string())
        }
    }
}

enum Transport {
    Child {
        child: Child,
        stdin: ChildStdin,
        stdout: BufReader<ChildStdout>,
    },
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
}

impl Transport {
    fn send(&mut self, line: &str) -> std::io::Result<()> {
        let w: &mut dyn Write = match self {
            Transport::Child { stdin, .. } => stdin,
            Transport::Tcp { writer, .. } => writer,
        };
        w.write_all(line.as_bytes())?;
        w.flush()
    }

    fn recv(&mut self) -> std::io::Result<String> {
        let r: &mut dyn BufRead = match self {
            Transport::Child { stdout, .. } => stdout,
            Transport::Tcp { reader, .. } => reader,
        };
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the stream"));
        }
        Ok(line)
    }
}

struct State {
    transport: Transport,
    next_id: i64,
}

pub struct ServerClient {
    state: Mutex<State>,
    arity: Option<usize>,
}

#[derive(Deserialize)]
struct Response {
    id: i64,
    #[serde(default)]
    labels: Option<Vec<u32>>,
    #[serde(default)]
    error: Option<String>,
}

impl ServerClient {
    pub fn connect(address: &ServerAddress, arity: Option<usize>) -> Result<Self> {
        let unavailable = |e: std::io::Error| Error::OracleUnavailable(format!("{address:?}: {e}"));
        let transport = match address {
            ServerAddress::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(unavailable)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                Transport::Child { child, stdin, stdout }
            }
            ServerAddress::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                let reader = BufReader::new(stream.try_clone().map_err(unavailable)?);
                Transport::Tcp { reader, writer: stream }
            }
        };
        Ok(ServerClient { state: Mutex::new(State { transport, next_id: 0 }), arity })
    }

    fn round_trip(&self, xs: &[Instance]) -> Result<Vec<Label>> {
        let mut state = self.state.lock().map_err(|_| Error::OracleUnavailable("client poisoned".into()))?;
        let id = state.next_id;
        state.next_id += 1;
        let line = encode_request(id, xs);
        let io_err = |e: std::io::Error| Error::OracleUnavailable(e.to_string());
        state.transport.send(&line).map_err(io_err)?;
        let reply = state.transport.recv().map_err(io_err)?;
        let resp: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Oracle(format!("malformed response {reply:?}: {e}")))?;
        if let Some(msg) = resp.error {
            return Err(Error::Oracle(format!("server error for request {}: {msg}", resp.id)));
        }
        if resp.id != id {
            return Err(Error::Oracle(format!("response id {} for request {id}", resp.id)));
        }
        let labels = resp
            .labels
            .ok_or_else(|| Error::Oracle("response carries neither labels nor error".into()))?;
        Ok(labels.into_iter().map(Label).collect())
    }
}

impl Classifier for ServerClient {
    fn arity(&self) -> Option<usize> {
        self.arity
    }

    fn predict_batch(&self, xs: &[Instance], _exec: Execution) -> Result<Vec<Label>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        self.round_trip(xs)
    }
}

impl Drop for ServerClient {
    fn drop(&mut self) {
        if let Ok(state) = self.state.get_mut() {
            if let Transport::Child { child, .. } = &mut state.transport {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

pub fn encode_request(id: i64, xs: &[Instance]) -> String {
    let mut s = format!("{{\"id\": {id}, \"instances\": [");
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push('[');
        for (j, v) in x.values().iter().enumerate() {
            if j > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{v}");
        }
        s.push(']');
    }
    s.push_str("]}\n");
    s
}

pub fn encode_response(id: i64, labels: &[Label]) -> String {
    let body: Vec<String> = labels.iter().map(|l| l.0.to_string()).collect();
    format!("{{\"id\": {id}, \"labels\": [{}]}}\n", body.join(", "))
}

pub fn encode_error(id: i64, msg: &str) -> String {
    format!("{{\"id\": {id}, \"error\": {}}}\n", serde_json::Value::String(msg.to_string()))
}

#[derive(Deserialize)]
struct Request {
    id: i64,
    instances: Vec<Vec<u32>>,
}

/// Serves `model` over one protocol stream until EOF.
pub fn serve(model: &dyn Classifier, reader: impl BufRead, mut writer: impl Write) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => encode_error(-1, &format!("malformed request: {e}")),
            Ok(req) => {
                let xs: Vec<Instance> = req.instances.into_iter().map(Instance::new).collect();
                match model.predict_batch(&xs, Execution::default()) {
                    Ok(labels) => encode_response(req.id, &labels),
                    Err(e) => encode_error(req.id, &e.to_string()),
                }
            }
        };
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
