//! Client/server partition of a segmentation network and the boundary
//! messages that cross the split.
//!
//! The network is cut twice: layers `0..fe_end` form the client front-end
//! (FE), `fe_end..be_start` the server trunk, and `be_start..` the client
//! back-end (BE), which ends with the argmax output layer. Activations flow
//! client → server → client, gradients flow back along the same path, and
//! the labels never leave the client: only the BE ops take masks, and
//! [`Payload`] cannot carry one.
//!
//! Skip activations whose source lies before a cut and whose consumer lies
//! after it ride inside the boundary bundles; in particular the front-end's
//! skip tensor is carried in the fe-activations message and echoed by the
//! server forward to the back-end, so the U-shape survives the split without
//! a second channel.

use crate::error::{Result, SplitFedError};
use crate::mask::Mask;
use crate::nn::{self, loss, LayerSpec, Network, PartCache, TensorBundle};
use crate::params::{ParamVector, Segment};
use crate::tensor::Tensor;

/// Leading bytes of every encoded [`BoundaryMessage`].
pub const WIRE_MAGIC: [u8; 4] = *b"SFB1";

/// A network plus the two cut points of the U-shaped split.
#[derive(Clone, Debug)]
pub struct SplitPartition {
    network: Network,
    fe_end: usize,
    be_start: usize,
}

impl SplitPartition {
    /// Validates the cuts: the front-end is non-empty, the back-end holds at
    /// least the output layer, and the network ends with argmax output. An
    /// empty server trunk (`fe_end == be_start`) is allowed.
    pub fn new(network: Network, fe_end: usize, be_start: usize) -> Result<Self> {
        if fe_end == 0 || fe_end > be_start || be_start >= network.len() {
            return Err(SplitFedError::Config(format!(
                "cut points fe_end={fe_end}, be_start={be_start} do not partition {} layers",
                network.len()
            )));
        }
        if !matches!(network.layers()[network.len() - 1], LayerSpec::ArgmaxOutput) {
            return Err(SplitFedError::Config(
                "the back-end must end with the argmax output layer".into(),
            ));
        }
        Ok(SplitPartition { network, fe_end, be_start })
    }

    pub fn from_unet(unet: crate::unet::Unet) -> Result<Self> {
        SplitPartition::new(unet.network, unet.fe_end, unet.be_start)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn fe_end(&self) -> usize {
        self.fe_end
    }

    pub fn be_start(&self) -> usize {
        self.be_start
    }

    pub fn num_classes(&self) -> usize {
        self.network.output_channels()
    }

    pub fn fe_param_names(&self) -> Vec<String> {
        self.network.param_names(0, self.fe_end)
    }

    pub fn server_param_names(&self) -> Vec<String> {
        self.network.param_names(self.fe_end, self.be_start)
    }

    pub fn be_param_names(&self) -> Vec<String> {
        self.network.param_names(self.be_start, self.network.len())
    }

    /// Splits a full parameter vector into (fe, server, be) parts.
    pub fn split_params(
        &self,
        full: &ParamVector,
    ) -> Result<(ParamVector, ParamVector, ParamVector)> {
        Ok((
            full.subset(&self.fe_param_names())?,
            full.subset(&self.server_param_names())?,
            full.subset(&self.be_param_names())?,
        ))
    }
}

/// The seven message kinds that cross the split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    FeActivations,
    ServerActivations,
    BeGradients,
    ServerGradients,
    WeightsUpload,
    GlobalBroadcast,
    Control,
}

impl MessageKind {
    pub fn code(self) -> u8 {
        match self {
            MessageKind::FeActivations => 0,
            MessageKind::ServerActivations => 1,
            MessageKind::BeGradients => 2,
            MessageKind::ServerGradients => 3,
            MessageKind::WeightsUpload => 4,
            MessageKind::GlobalBroadcast => 5,
            MessageKind::Control => 6,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => MessageKind::FeActivations,
            1 => MessageKind::ServerActivations,
            2 => MessageKind::BeGradients,
            3 => MessageKind::ServerGradients,
            4 => MessageKind::WeightsUpload,
            5 => MessageKind::GlobalBroadcast,
            6 => MessageKind::Control,
            other => {
                return Err(SplitFedError::Protocol(format!(
                    "unknown message kind code {other}"
                )))
            }
        })
    }
}

/// Position of a message in the training schedule. Streams are ordered per
/// (client, kind) by `(global_epoch, local_epoch, batch)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundMeta {
    pub global_epoch: u32,
    pub client_id: u32,
    pub local_epoch: u32,
    pub batch: u32,
}

impl RoundMeta {
    /// Ordering key within one (client, kind) stream.
    pub fn ordinal(&self) -> (u32, u32, u32) {
        (self.global_epoch, self.local_epoch, self.batch)
    }
}

/// Message body: activations/gradients, a parameter vector, or nothing.
/// There is deliberately no mask variant — labels cannot cross the split.
#[derive(Clone, Debug)]
pub enum Payload {
    Tensors(TensorBundle),
    Params(ParamVector),
    Empty,
}

/// One immutable message crossing the client/server boundary.
#[derive(Clone, Debug)]
pub struct BoundaryMessage {
    pub kind: MessageKind,
    pub round: RoundMeta,
    pub payload: Payload,
}

fn payload_matches(kind: MessageKind, payload: &Payload) -> bool {
    match kind {
        MessageKind::FeActivations
        | MessageKind::ServerActivations
        | MessageKind::BeGradients
        | MessageKind::ServerGradients => matches!(payload, Payload::Tensors(_)),
        MessageKind::WeightsUpload | MessageKind::GlobalBroadcast => {
            matches!(payload, Payload::Params(_))
        }
        MessageKind::Control => matches!(payload, Payload::Empty),
    }
}

/// Skip tensors are named `skip.NNN` by source layer inside the payload.
fn skip_segment_name(src: usize) -> String {
    format!("skip.{src:03}")
}

fn bundle_to_params(bundle: &TensorBundle) -> Result<ParamVector> {
    let mut pv = ParamVector::new();
    pv.push(Segment::new(
        "main",
        bundle.main.shape().to_vec(),
        bundle.main.data().to_vec(),
    )?)?;
    for (src, t) in &bundle.skips {
        pv.push(Segment::new(
            skip_segment_name(*src),
            t.shape().to_vec(),
            t.data().to_vec(),
        )?)?;
    }
    Ok(pv)
}

fn params_to_bundle(pv: &ParamVector) -> Result<TensorBundle> {
    let mut main: Option<Tensor> = None;
    let mut skips: Vec<(usize, Tensor)> = Vec::new();
    for seg in pv.segments() {
        let tensor = Tensor::new(seg.shape.clone(), seg.data.clone())?;
        if seg.name == "main" {
            main = Some(tensor);
        } else if let Some(rest) = seg.name.strip_prefix("skip.") {
            let src: usize = rest.parse().map_err(|_| {
                SplitFedError::Protocol(format!(
                    "malformed skip segment name {:?} in tensor payload",
                    seg.name
                ))
            })?;
            skips.push((src, tensor));
        } else {
            return Err(SplitFedError::Protocol(format!(
                "unexpected segment {:?} in tensor payload",
                seg.name
            )));
        }
    }
    let main = main.ok_or_else(|| {
        SplitFedError::Protocol("tensor payload is missing the main tensor".into())
    })?;
    skips.sort_unstable_by_key(|&(src, _)| src);
    Ok(TensorBundle { main, skips })
}

impl BoundaryMessage {
    pub fn new(kind: MessageKind, round: RoundMeta, payload: Payload) -> Result<Self> {
        if !payload_matches(kind, &payload) {
            return Err(SplitFedError::Protocol(format!(
                "message kind {kind:?} does not accept this payload variant"
            )));
        }
        Ok(BoundaryMessage { kind, round, payload })
    }

    /// Wire layout, all integers little-endian: 4-byte magic `SFB1`, u8
    /// kind code, four u32 round fields (global epoch, client id, local
    /// epoch, batch), u64 payload byte length, payload bytes.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let body = match &self.payload {
            Payload::Tensors(bundle) => bundle_to_params(bundle)?.to_bytes(),
            Payload::Params(pv) => pv.to_bytes(),
            Payload::Empty => Vec::new(),
        };
        let mut out = Vec::with_capacity(4 + 1 + 16 + 8 + body.len());
        out.extend_from_slice(&WIRE_MAGIC);
        out.push(self.kind.code());
        out.extend_from_slice(&self.round.global_epoch.to_le_bytes());
        out.extend_from_slice(&self.round.client_id.to_le_bytes());
        out.extend_from_slice(&self.round.local_epoch.to_le_bytes());
        out.extend_from_slice(&self.round.batch.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<BoundaryMessage> {
        if bytes.len() < 29 {
            return Err(SplitFedError::Protocol(format!(
                "message header needs 29 bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[..4] != WIRE_MAGIC {
            return Err(SplitFedError::Protocol(format!(
                "bad magic {:?}; expected {WIRE_MAGIC:?}",
                &bytes[..4]
            )));
        }
        let kind = MessageKind::from_code(bytes[4])?;
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let round = RoundMeta {
            global_epoch: word(5),
            client_id: word(9),
            local_epoch: word(13),
            batch: word(17),
        };
        let declared = u64::from_le_bytes(bytes[21..29].try_into().unwrap());
        let body = &bytes[29..];
        if declared != body.len() as u64 {
            return Err(SplitFedError::Protocol(format!(
                "payload length field says {declared} bytes, found {}",
                body.len()
            )));
        }
        let payload = match kind {
            MessageKind::FeActivations
            | MessageKind::ServerActivations
            | MessageKind::BeGradients
            | MessageKind::ServerGradients => {
                Payload::Tensors(params_to_bundle(&ParamVector::from_bytes(body)?)?)
            }
            MessageKind::WeightsUpload | MessageKind::GlobalBroadcast => {
                Payload::Params(ParamVector::from_bytes(body)?)
            }
            MessageKind::Control => {
                if !body.is_empty() {
                    return Err(SplitFedError::Protocol(format!(
                        "control messages carry no payload, got {} bytes",
                        body.len()
                    )));
                }
                Payload::Empty
            }
        };
        BoundaryMessage::new(kind, round, payload)
    }

    fn expect_tensors(&self, kind: MessageKind) -> Result<&TensorBundle> {
        if self.kind != kind {
            return Err(SplitFedError::Protocol(format!(
                "expected a {kind:?} message, got {:?}",
                self.kind
            )));
        }
        match &self.payload {
            Payload::Tensors(bundle) => Ok(bundle),
            _ => Err(SplitFedError::Protocol(format!(
                "{kind:?} message carries a non-tensor payload"
            ))),
        }
    }
}

fn check_cache_range(cache: &PartCache, lo: usize, hi: usize, what: &str) -> Result<()> {
    if cache.range() != (lo, hi) {
        return Err(SplitFedError::Protocol(format!(
            "{what} expects a cache for layers {lo}..{hi}, got {:?}",
            cache.range()
        )));
    }
    Ok(())
}

/// Runs the front-end on an input batch and packages the boundary
/// activations (main path plus any skip tensors consumed past the cut).
pub fn client_forward_fe(
    partition: &SplitPartition,
    fe_params: &ParamVector,
    input: &Tensor,
    round: RoundMeta,
) -> Result<(BoundaryMessage, PartCache)> {
    let (bundle, cache) = nn::forward_range(
        &partition.network,
        fe_params,
        0,
        partition.fe_end,
        &TensorBundle::solo(input.clone()),
    )?;
    let msg = BoundaryMessage::new(MessageKind::FeActivations, round, Payload::Tensors(bundle))?;
    Ok((msg, cache))
}

/// Runs the server trunk on fe-activations; skip tensors that originate in
/// the front-end and feed the back-end are echoed through.
pub fn server_forward(
    partition: &SplitPartition,
    server_params: &ParamVector,
    msg: &BoundaryMessage,
) -> Result<(BoundaryMessage, PartCache)> {
    let bundle = msg.expect_tensors(MessageKind::FeActivations)?;
    let (out, cache) = nn::forward_range(
        &partition.network,
        server_params,
        partition.fe_end,
        partition.be_start,
        bundle,
    )?;
    let reply = BoundaryMessage::new(
        MessageKind::ServerActivations,
        msg.round,
        Payload::Tensors(out),
    )?;
    Ok((reply, cache))
}

/// Everything the back-end forward produces: the batch-mean loss, per-sample
/// mean pixel losses, hard predictions, the logits gradient of the batch
/// loss, and the cache for the matching backward pass.
#[derive(Debug)]
pub struct BeForward {
    pub loss: f64,
    pub per_sample_losses: Vec<f64>,
    pub predictions: Vec<Mask>,
    pub dlogits: Tensor,
    pub cache: PartCache,
}

/// Runs the back-end on server-activations and scores against the masks,
/// which stay on the client.
pub fn client_forward_be(
    partition: &SplitPartition,
    be_params: &ParamVector,
    msg: &BoundaryMessage,
    masks: &[Mask],
) -> Result<BeForward> {
    let bundle = msg.expect_tensors(MessageKind::ServerActivations)?;
    let classes = partition.num_classes();
    for m in masks {
        m.validate_classes(classes)
            .map_err(|e| SplitFedError::Config(e.to_string()))?;
    }
    let (out, cache) = nn::forward_range(
        &partition.network,
        be_params,
        partition.be_start,
        partition.network.len(),
        bundle,
    )?;
    let (per_sample_losses, dlogits) = loss::cross_entropy_with_grad(&out.main, masks)?;
    let loss =
        per_sample_losses.iter().sum::<f64>() / per_sample_losses.len() as f64;
    let predictions = nn::predictions(&out.main)?;
    Ok(BeForward { loss, per_sample_losses, predictions, dlogits, cache })
}

/// Back-propagates through the back-end; the returned message carries the
/// gradient bundle for the server trunk's output.
pub fn client_backward_be(
    partition: &SplitPartition,
    be_params: &ParamVector,
    cache: &PartCache,
    dlogits: &Tensor,
    round: RoundMeta,
) -> Result<(ParamVector, BoundaryMessage)> {
    check_cache_range(cache, partition.be_start, partition.network.len(), "back-end backward")?;
    let (grads, dout) = nn::backward_range(
        &partition.network,
        be_params,
        cache,
        &TensorBundle::solo(dlogits.clone()),
    )?;
    let msg = BoundaryMessage::new(MessageKind::BeGradients, round, Payload::Tensors(dout))?;
    Ok((grads, msg))
}

/// Back-propagates through the server trunk; the returned message carries
/// the gradient bundle for the front-end's output.
pub fn server_backward(
    partition: &SplitPartition,
    server_params: &ParamVector,
    cache: &PartCache,
    msg: &BoundaryMessage,
) -> Result<(ParamVector, BoundaryMessage)> {
    let bundle = msg.expect_tensors(MessageKind::BeGradients)?;
    check_cache_range(cache, partition.fe_end, partition.be_start, "server backward")?;
    let (grads, dout) =
        nn::backward_range(&partition.network, server_params, cache, bundle)?;
    let reply =
        BoundaryMessage::new(MessageKind::ServerGradients, msg.round, Payload::Tensors(dout))?;
    Ok((grads, reply))
}

/// Back-propagates through the front-end; returns its parameter gradients
/// and the gradient with respect to the input batch.
pub fn client_backward_fe(
    partition: &SplitPartition,
    fe_params: &ParamVector,
    cache: &PartCache,
    msg: &BoundaryMessage,
) -> Result<(ParamVector, Tensor)> {
    let bundle = msg.expect_tensors(MessageKind::ServerGradients)?;
    check_cache_range(cache, 0, partition.fe_end, "front-end backward")?;
    let (grads, dout) =
        nn::backward_range(&partition.network, fe_params, cache, bundle)?;
    if !dout.skips.is_empty() {
        return Err(SplitFedError::Protocol(
            "front-end backward left unconsumed skip gradients".into(),
        ));
    }
    Ok((grads, dout.main))
}

/// Joins the three parameter parts back into the monolithic network's
/// parameter vector; the ground-truth oracle for split equivalence.
pub fn assemble_monolithic(
    partition: &SplitPartition,
    fe_params: &ParamVector,
    server_params: &ParamVector,
    be_params: &ParamVector,
) -> Result<(Network, ParamVector)> {
    let merged = ParamVector::merge(&[fe_params, server_params, be_params])?;
    let expect = partition.network.param_names(0, partition.network.len());
    let got: Vec<String> = merged.segments().iter().map(|s| s.name.clone()).collect();
    if expect != got {
        return Err(SplitFedError::Data(
            "merged parameter parts do not cover the network's segments in order".into(),
        ));
    }
    Ok((partition.network.clone(), merged))
}
