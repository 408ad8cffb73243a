//! Newline-delimited JSON messages exchanged with external classifiers,
//! and a reference server that answers them with any in-process oracle.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ClassifierOracle;

pub const PROTOCOL_VERSION: u32 = 1;

/// One protocol line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        protocol: u32,
    },
    Ready {
        classes: usize,
        input_dim: usize,
    },
    Classify {
        id: u64,
        count: usize,
        dim: usize,
        data: Vec<f64>,
    },
    Labels {
        id: u64,
        labels: Vec<usize>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        msg: String,
    },
    Bye,
}

impl Message {
    /// Serialized form including the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages always serialize");
        s.push('\n');
        s
    }
}

fn reply<W: Write>(out: &mut W, msg: &Message) -> io::Result<()> {
    out.write_all(msg.to_line().as_bytes())?;
    out.flush()
}

/// Answers protocol requests on one connection until `bye` or end of input.
///
/// Malformed requests get an error object and the connection stays open.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn ClassifierOracle, input: R, mut output: W) -> io::Result<()> {
    let mut greeted = false;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = match serde_json::from_str::<Message>(&line) {
            Ok(m) => m,
            Err(e) => {
                reply(&mut output, &Message::Error { id: None, msg: format!("unparseable request: {e}") })?;
                continue;
            }
        };
        match msg {
            Message::Hello { protocol } if protocol == PROTOCOL_VERSION => {
                greeted = true;
                reply(
                    &mut output,
                    &Message::Ready {
                        classes: oracle.num_classes(),
                        input_dim: oracle.input_dim(),
                    },
                )?;
            }
            Message::Hello { protocol } => reply(
                &mut output,
                &Message::Error {
                    id: None,
                    msg: format!("unsupported protocol version {protocol}"),
                },
            )?,
            Message::Classify { id, .. } if !greeted => reply(
                &mut output,
                &Message::Error {
                    id: Some(id),
                    msg: "classify before hello".into(),
                },
            )?,
            Message::Classify { id, count, dim, data } => {
                let answer = if dim != oracle.input_dim() {
                    Message::Error {
                        id: Some(id),
                        msg: format!("dim {dim} does not match input_dim {}", oracle.input_dim()),
                    }
                } else if data.len() != count * dim {
                    Message::Error {
                        id: Some(id),
                        msg: format!("expected {} values, got {}", count * dim, data.len()),
                    }
                } else {
                    match oracle.classify_batch(&data, count) {
                        Ok(labels) => Message::Labels { id, labels },
                        Err(e) => Message::Error {
                            id: Some(id),
                            msg: e.to_string(),
                        },
                    }
                };
                reply(&mut output, &answer)?;
            }
            Message::Bye => return Ok(()),
            other => reply(
                &mut output,
                &Message::Error {
                    id: None,
                    msg: format!("unexpected message {other:?}"),
                },
            )?,
        }
    }
    Ok(())
}

/// Serves every accepted connection on its own thread.
///
/// Returns after `max_connections` connections have been accepted, or never
/// when it is `None`.
pub fn serve_tcp(
    oracle: Arc<dyn ClassifierOracle>,
    listener: TcpListener,
    max_connections: Option<usize>,
) -> io::Result<()> {
    let mut handles = Vec::new();
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let oracle = Arc::clone(&oracle);
        handles.push(std::thread::spawn(move || -> io::Result<()> {
            let reader = BufReader::new(stream.try_clone()?);
            serve(oracle.as_ref(), reader, stream)
        }));
        if max_connections.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    for h in handles {
        h.join().map_err(|_| io::Error::other("connection handler panicked"))??;
    }
    Ok(())
}
