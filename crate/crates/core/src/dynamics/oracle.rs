//! Line protocol for closed-box dynamics served by another process.
//!
//! ```text
//! client: HELLO <M>                  server: HELLO <M>
//! client: FLOW <tau> <x_1> .. <x_M>  server: OK <y_1> .. <y_M>
//!                                    server: ERR <message>
//! ```
//!
//! Numbers are written in scientific notation with 17 significant digits.
//! One connection serves one request at a time.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::Dynamics;
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

pub struct OracleClient {
    name: String,
    dim: usize,
    tau: f64,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl OracleClient {
    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, dim: usize, tau: f64) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot start '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = OracleClient::connect(stdout, stdin, dim, tau, command)?;
        client.conn.get_mut().unwrap().child = Some(child);
        Ok(client)
    }

    /// Handshakes over an existing byte stream pair.
    pub fn connect<R, W>(reader: R, writer: W, dim: usize, tau: f64, name: &str) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::connect_with_timeout(reader, writer, dim, tau, name, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout<R, W>(
        reader: R,
        writer: W,
        dim: usize,
        tau: f64,
        name: &str,
        timeout: Duration,
    ) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let client = OracleClient {
            name: format!("oracle:{name}"),
            dim,
            tau,
            timeout,
            conn: Mutex::new(Connection {
                writer: Box::new(writer),
                lines: rx,
                child: None,
            }),
        };
        let reply = client.request(&format!("HELLO {dim}"))?;
        let mut parts = reply.split_whitespace();
        match (parts.next(), parts.next().map(str::parse::<usize>), parts.next()) {
            (Some("HELLO"), Some(Ok(m)), None) if m == dim => Ok(client),
            (Some("ERR"), ..) => Err(Error::Oracle(format!("handshake refused: {reply}"))),
            _ => Err(Error::Oracle(format!("bad handshake reply '{reply}'"))),
        }
    }

    fn request(&self, line: &str) -> Result<String> {
        let mut conn = self.conn.lock().map_err(|_| Error::Oracle("connection poisoned".into()))?;
        writeln!(conn.writer, "{line}")
            .and_then(|_| conn.writer.flush())
            .map_err(|e| Error::Oracle(format!("write failed: {e}")))?;
        match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(Error::Oracle(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Oracle(format!(
                "no reply within {:.1} s",
                self.timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Oracle("oracle closed the connection".into())),
        }
    }
}

impl Drop for OracleClient {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            // closing stdin lets a well-behaved server exit on EOF
            conn.writer = Box::new(std::io::sink());
            if let Some(mut child) = conn.child.take() {
                let _ = child.wait();
            }
        }
    }
}

impl Dynamics for OracleClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn flow(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut line = format!("FLOW {:.17e}", self.tau);
        for v in x {
            write!(line, " {v:.17e}").unwrap();
        }
        let reply = self.request(&line)?;
        let mut parts = reply.splitn(2, ' ');
        match parts.next() {
            Some("OK") => {
                let y = parse_numbers(parts.next().unwrap_or(""))
                    .map_err(|t| Error::Oracle(format!("bad number '{t}' in reply")))?;
                if y.len() != self.dim {
                    return Err(Error::Oracle(format!(
                        "reply has {} components, expected {}",
                        y.len(),
                        self.dim
                    )));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        system: self.name.clone(),
                        state: y,
                    });
                }
                Ok(y)
            }
            Some("ERR") => Err(Error::Oracle(parts.next().unwrap_or("unspecified error").to_string())),
            _ => Err(Error::Oracle(format!("protocol violation: '{reply}'"))),
        }
    }
}

fn parse_numbers(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| t.to_string()))
        .collect()
}

/// Serves the protocol until EOF. `flow(tau, x)` computes the requested
/// map; its errors are reported to the client as `ERR` lines.
pub fn serve<R, W, F>(reader: R, mut writer: W, dim: usize, flow: F) -> Result<()>
where
    R: BufRead,
    W: Write,
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let io = |e: std::io::Error| Error::Oracle(format!("serve: {e}"));
    let mut greeted = false;
    for line in reader.lines() {
        let line = line.map_err(io)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (cmd, rest) = line.split_once(' ').unwrap_or((line, ""));
        let reply = match (cmd, greeted) {
            ("HELLO", _) => match rest.trim().parse::<usize>() {
                Ok(m) if m == dim => {
                    greeted = true;
                    format!("HELLO {dim}")
                }
                _ => format!("ERR expected dimension {dim}"),
            },
            ("FLOW", true) => match parse_numbers(rest) {
                Ok(v) if v.len() == dim + 1 => match flow(v[0], &v[1..]) {
                    Ok(y) => {
                        let mut s = String::from("OK");
                        for c in y {
                            write!(s, " {c:.17e}").unwrap();
                        }
                        s
                    }
                    Err(e) => format!("ERR {e}"),
                },
                Ok(v) => format!("ERR expected {} numbers, got {}", dim + 1, v.len()),
                Err(t) => format!("ERR bad number '{t}'"),
            },
            ("FLOW", false) => "ERR handshake required".to_string(),
            _ => format!("ERR unknown command '{cmd}'"),
        };
        writeln!(writer, "{reply}").map_err(io)?;
        writer.flush().map_err(io)?;
    }
    Ok(())
}
