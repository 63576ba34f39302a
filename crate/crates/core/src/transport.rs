//! The server side of the split and the channels that reach it.
//!
//! [`TrunkServer`] owns the server-trunk parameters, an optimizer, and at
//! most one activation cache: clients train strictly in turn, so a new
//! fe-activations message simply replaces whatever cache is standing (this
//! is also how evaluation passes work — a forward that is never followed by
//! be-gradients costs the server nothing). Every client-visible interaction
//! is one request/one reply through a [`TrunkChannel`]:
//!
//! * fe-activations → server-activations (forward through the trunk)
//! * be-gradients → server-gradients (backward, then one optimizer step)
//! * global-broadcast → control ack (install params, reset optimizer state)
//! * control → weights-upload (fetch current trunk parameters)
//!
//! [`InProcessChannel`] calls the server directly without serialization;
//! [`TcpChannel`] speaks length-prefixed frames of the boundary-message wire
//! encoding over a socket, so both ends of a run can live in different
//! processes. Replies echo the request's round metadata, and requests must
//! arrive strictly ordered per (client, kind).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::JoinHandle;

use crate::error::{Result, SplitFedError};
use crate::nn::optim::Optimizer;
use crate::params::ParamVector;
use crate::split::{
    self, BoundaryMessage, MessageKind, Payload, RoundMeta, SplitPartition,
};

/// Upper bound on one wire frame; a desk-scale exchange stays well under it.
const MAX_FRAME_BYTES: u64 = 1 << 30;

/// A client's view of the server trunk: send one message, get one reply.
pub trait TrunkChannel {
    fn exchange(&mut self, msg: &BoundaryMessage) -> Result<BoundaryMessage>;
}

struct ActiveCache {
    cache: crate::nn::PartCache,
    round: RoundMeta,
}

/// The server trunk: parameters, optimizer, one standing activation cache,
/// and the per-(client, kind) round watermarks that reject replays.
pub struct TrunkServer {
    partition: SplitPartition,
    params: ParamVector,
    optimizer: Optimizer,
    active: Option<ActiveCache>,
    last_round: HashMap<(u32, u8), (u32, u32, u32)>,
}

impl TrunkServer {
    /// `params` must be exactly the trunk's parameter segments.
    pub fn new(
        partition: SplitPartition,
        params: ParamVector,
        optimizer: Optimizer,
    ) -> Result<Self> {
        let expect = partition.server_param_names();
        let got: Vec<String> = params.segments().iter().map(|s| s.name.clone()).collect();
        if expect != got {
            return Err(SplitFedError::Config(
                "server parameters do not match the trunk's segment names".into(),
            ));
        }
        Ok(TrunkServer {
            partition,
            params,
            optimizer,
            active: None,
            last_round: HashMap::new(),
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    fn check_monotone(&mut self, msg: &BoundaryMessage) -> Result<()> {
        let key = (msg.round.client_id, msg.kind.code());
        let ordinal = msg.round.ordinal();
        if let Some(last) = self.last_round.get(&key) {
            if ordinal <= *last {
                return Err(SplitFedError::Protocol(format!(
                    "round {ordinal:?} for client {} kind {:?} does not advance past {last:?}",
                    msg.round.client_id, msg.kind
                )));
            }
        }
        self.last_round.insert(key, ordinal);
        Ok(())
    }

    /// Processes one request and produces the reply.
    pub fn handle(&mut self, msg: &BoundaryMessage) -> Result<BoundaryMessage> {
        self.check_monotone(msg)?;
        match msg.kind {
            MessageKind::FeActivations => {
                let (reply, cache) = split::server_forward(&self.partition, &self.params, msg)?;
                self.active = Some(ActiveCache { cache, round: msg.round });
                Ok(reply)
            }
            MessageKind::BeGradients => {
                let active = self.active.take().ok_or_else(|| {
                    SplitFedError::Protocol(
                        "be-gradients arrived with no activation cache standing".into(),
                    )
                })?;
                if active.round != msg.round {
                    return Err(SplitFedError::Protocol(format!(
                        "be-gradients round {:?} does not match the cached forward round {:?}",
                        msg.round, active.round
                    )));
                }
                let (grads, reply) =
                    split::server_backward(&self.partition, &self.params, &active.cache, msg)?;
                self.optimizer.step(&mut self.params, &grads)?;
                Ok(reply)
            }
            MessageKind::GlobalBroadcast => {
                let Payload::Params(new_params) = &msg.payload else {
                    return Err(SplitFedError::Protocol(
                        "global-broadcast carries a non-parameter payload".into(),
                    ));
                };
                if !self.params.compatible(new_params) {
                    return Err(SplitFedError::Protocol(
                        "broadcast parameters do not match the trunk's segments".into(),
                    ));
                }
                self.params = new_params.clone();
                self.optimizer.reset();
                self.active = None;
                BoundaryMessage::new(MessageKind::Control, msg.round, Payload::Empty)
            }
            MessageKind::Control => BoundaryMessage::new(
                MessageKind::WeightsUpload,
                msg.round,
                Payload::Params(self.params.clone()),
            ),
            other => Err(SplitFedError::Protocol(format!(
                "the server does not accept {other:?} messages"
            ))),
        }
    }
}

/// Direct function-call channel; nothing is serialized.
pub struct InProcessChannel {
    server: TrunkServer,
}

impl InProcessChannel {
    pub fn new(server: TrunkServer) -> Self {
        InProcessChannel { server }
    }

    pub fn server(&self) -> &TrunkServer {
        &self.server
    }
}

impl TrunkChannel for InProcessChannel {
    fn exchange(&mut self, msg: &BoundaryMessage) -> Result<BoundaryMessage> {
        self.server.handle(msg)
    }
}

/// One frame: u64 LE byte length, u8 status (0 reply follows, 1 UTF-8 error
/// text follows), then the body.
fn write_frame(stream: &mut TcpStream, status: u8, body: &[u8]) -> Result<()> {
    let len = 1 + body.len() as u64;
    stream.write_all(&len.to_le_bytes())?;
    stream.write_all(&[status])?;
    stream.write_all(body)?;
    stream.flush()?;
    Ok(())
}

fn read_frame(stream: &mut TcpStream) -> Result<Option<(u8, Vec<u8>)>> {
    let mut len_bytes = [0u8; 8];
    match stream.read_exact(&mut len_bytes) {
        Ok(()) => {}
        // A clean shutdown between frames.
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u64::from_le_bytes(len_bytes);
    if len == 0 || len > MAX_FRAME_BYTES {
        return Err(SplitFedError::Protocol(format!(
            "frame length {len} is outside 1..={MAX_FRAME_BYTES}"
        )));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    let status = body[0];
    body.remove(0);
    Ok(Some((status, body)))
}

/// Client end of a TCP trunk connection.
pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }
}

impl TrunkChannel for TcpChannel {
    fn exchange(&mut self, msg: &BoundaryMessage) -> Result<BoundaryMessage> {
        write_frame(&mut self.stream, 0, &msg.encode()?)?;
        let (status, body) = read_frame(&mut self.stream)?.ok_or_else(|| {
            SplitFedError::Protocol("server closed the connection mid-exchange".into())
        })?;
        if status != 0 {
            return Err(SplitFedError::Protocol(format!(
                "server rejected the exchange: {}",
                String::from_utf8_lossy(&body)
            )));
        }
        BoundaryMessage::decode(&body)
    }
}

/// Binds `addr` (use port 0 for an OS-assigned port), then serves one
/// connection's request/reply stream on a background thread until the peer
/// disconnects. Handler errors are reported to the peer in an error frame
/// and end the session.
pub fn spawn_tcp_server(
    mut server: TrunkServer,
    addr: &str,
) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = std::thread::spawn(move || -> Result<()> {
        let (mut stream, _peer) = listener.accept()?;
        stream.set_nodelay(true)?;
        while let Some((_, body)) = read_frame(&mut stream)? {
            let reply = BoundaryMessage::decode(&body).and_then(|msg| server.handle(&msg));
            match reply {
                Ok(reply) => write_frame(&mut stream, 0, &reply.encode()?)?,
                Err(err) => {
                    write_frame(&mut stream, 1, err.to_string().as_bytes())?;
                    return Err(err);
                }
            }
        }
        Ok(())
    });
    Ok((local, handle))
}
