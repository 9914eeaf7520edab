//! Clients for policies served out of process, over TCP or a child's stdio.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::control::{Action, Role};

use super::wire::{decode_response, encode_request, encode_reset, is_ack};
use super::{EncodedObservation, InstructionEmbedding, Policy, PolicyError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port` of a line-oriented TCP server.
    Tcp(String),
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Command(Vec<String>),
}

/// Line-oriented duplex channel.
pub trait LineTransport: Send {
    fn send(&mut self, line: &str) -> Result<(), PolicyError>;
    fn recv(&mut self, timeout: Duration) -> Result<String, PolicyError>;
}

fn unavailable(e: impl std::fmt::Display) -> PolicyError {
    PolicyError::Unavailable(e.to_string())
}

pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, PolicyError> {
        use std::net::ToSocketAddrs;
        let sock = addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| unavailable(format!("cannot resolve {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(unavailable)?;
        stream.set_nodelay(true).map_err(unavailable)?;
        let reader = BufReader::new(stream.try_clone().map_err(unavailable)?);
        Ok(Self { writer: stream, reader })
    }
}

impl LineTransport for TcpTransport {
    fn send(&mut self, line: &str) -> Result<(), PolicyError> {
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(unavailable)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, PolicyError> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout))
            .map_err(unavailable)?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(unavailable("server closed the connection")),
            Ok(_) => Ok(line),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(unavailable(format!("no response within {timeout:?}")))
            }
            Err(e) => Err(unavailable(e)),
        }
    }
}

pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl StdioTransport {
    pub fn spawn(argv: &[String]) -> Result<Self, PolicyError> {
        let (prog, args) = argv.split_first().ok_or_else(|| unavailable("empty command"))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("cannot start `{prog}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl LineTransport for StdioTransport {
    fn send(&mut self, line: &str) -> Result<(), PolicyError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(unavailable)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, PolicyError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(unavailable(e)),
            Err(RecvTimeoutError::Timeout) => Err(unavailable(format!("no response within {timeout:?}"))),
            Err(RecvTimeoutError::Disconnected) => Err(unavailable("policy process exited")),
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalPolicy {
    transport: Box<dyn LineTransport>,
    role: Role,
    instruction: String,
    timeout: Duration,
}

impl ExternalPolicy {
    pub fn new(transport: Box<dyn LineTransport>, role: Role, instruction: &str, timeout: Duration) -> Self {
        Self {
            transport,
            role,
            instruction: instruction.to_owned(),
            timeout,
        }
    }

    pub fn connect(endpoint: &Endpoint, role: Role, instruction: &str, timeout: Duration) -> Result<Self, PolicyError> {
        let transport: Box<dyn LineTransport> = match endpoint {
            Endpoint::Tcp(addr) => Box::new(TcpTransport::connect(addr, timeout)?),
            Endpoint::Command(argv) => Box::new(StdioTransport::spawn(argv)?),
        };
        Ok(Self::new(transport, role, instruction, timeout))
    }
}

impl Policy for ExternalPolicy {
    fn reset(&mut self, seed: u64) -> Result<(), PolicyError> {
        self.transport.send(&encode_reset(seed))
    }

    fn act(&mut self, z: &EncodedObservation, _e: &InstructionEmbedding, tick: u64) -> Result<Action, PolicyError> {
        self.transport
            .send(&encode_request(self.role, &self.instruction, z, tick))?;
        loop {
            let line = self.transport.recv(self.timeout)?;
            if is_ack(&line) {
                continue;
            }
            return decode_response(line.trim_end());
        }
    }
}
