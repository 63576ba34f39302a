//! The full split-federated training protocol: sequential per-client local
//! training over a trunk channel, best-epoch snapshotting, per-strategy
//! global aggregation, broadcast, and best-global-model selection.
//!
//! One global epoch proceeds client by client. Each client's turn starts by
//! broadcasting the current global trunk weights to the server (which also
//! resets the server optimizer — trunk momentum never leaks between
//! clients), re-initializes the client front/back-ends from the global
//! client model, trains `E` local epochs, and snapshots the weights from
//! the epoch with the lowest local validation loss (earliest on ties).
//!
//! Under quality-aware averaging the snapshots are averaged twice: first
//! with loss bounds from each client's per-sample training losses at its
//! best epoch, then — after scoring the interim model on each client's
//! validation set — once more with validation-derived bounds. The same
//! immutable snapshots feed both phases; a digest check enforces that.
//! Baseline strategies replace the two phases with a single average.
//!
//! Every event lands in a [`TrainingLog`] of line-delimited records so the
//! run can be audited by replay: best-epoch choices are recomputable from
//! the logged losses, and aggregation inputs from the logged digests.

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    data_scores, fedavg, fedavg_m, loss_bound, model_updates, naive_average, ClientSnapshot,
    MomentumState, ScoreSource, StdConvention, Strategy,
};
use crate::dataset::{batch_inputs, ClientDataset, PartitionedData, SegSample};
use crate::error::{Result, SplitFedError};
use crate::metrics::{evaluate_global, EvalReport};
use crate::nn::optim::Optimizer;
use crate::params::ParamVector;
use crate::rng::derive_seed;
use crate::split::{
    assemble_monolithic, client_backward_be, client_backward_fe, client_forward_be,
    client_forward_fe, BoundaryMessage, MessageKind, Payload, RoundMeta, SplitPartition,
};
use crate::tensor::Tensor;
use crate::transport::{spawn_tcp_server, InProcessChannel, TcpChannel, TrunkChannel, TrunkServer};
use crate::unet::{build, ArchConfig};

/// Everything one training run needs. `batch_size: None` trains and
/// evaluates on each full sample set at once (the desk-scale default).
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub arch: ArchConfig,
    pub strategy: Strategy,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub server_momentum: f64,
    pub std_convention: StdConvention,
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            arch: ArchConfig::default(),
            strategy: Strategy::QaSplitFed,
            global_epochs: 10,
            local_epochs: 12,
            learning_rate: 0.05,
            momentum: 0.9,
            server_momentum: 0.9,
            std_convention: StdConvention::Population,
            batch_size: None,
            seed: 42,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.global_epochs == 0 || self.local_epochs == 0 {
            return Err(SplitFedError::Config(
                "global and local epoch counts must be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(SplitFedError::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SplitFedError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == Some(0) {
            return Err(SplitFedError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// How the client side reaches the trunk server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Direct in-process calls; no serialization.
    InProcess,
    /// Loopback TCP using the binary wire format.
    TcpLoopback,
}

/// One structured log line. Records carry everything replay oracles need:
/// per-epoch losses, chosen snapshots, aggregation weights, and digests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    LocalEpoch {
        global_epoch: usize,
        client_id: usize,
        local_epoch: usize,
        train_loss: f64,
        validation_loss: f64,
    },
    BestLocalEpoch {
        global_epoch: usize,
        client_id: usize,
        best_epoch: usize,
        validation_loss: f64,
    },
    SampleLosses {
        global_epoch: usize,
        client_id: usize,
        scope: String,
        losses: Vec<f64>,
    },
    LossBound {
        global_epoch: usize,
        client_id: usize,
        scope: String,
        mean: f64,
        std: f64,
        bound: f64,
    },
    Snapshot {
        global_epoch: usize,
        client_id: usize,
        client_digest: String,
        server_digest: String,
    },
    Aggregation {
        global_epoch: usize,
        phase: String,
        r: Vec<f64>,
        client_digest: String,
        server_digest: String,
    },
    GlobalValidation {
        global_epoch: usize,
        per_client: Vec<f64>,
        mean: f64,
    },
    BestGlobal {
        global_epoch: usize,
        validation_loss: f64,
    },
}

/// The run's event log, serializable as JSON lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<TrainingLog> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(SplitFedError::from))
            .collect::<Result<Vec<LogRecord>>>()?;
        Ok(TrainingLog { records })
    }
}

/// Result of a full run: the best global model by validation loss, its
/// epoch, the clean-test-set report, and the event log.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub best_epoch: usize,
    pub best_client: ParamVector,
    pub best_server: ParamVector,
    pub report: EvalReport,
    pub log: TrainingLog,
}

/// What one client turn produces: the snapshot at its best local epoch and
/// the per-sample training losses computed with those snapshot weights.
#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub snapshot: ClientSnapshot,
    pub best_epoch: usize,
    pub train_losses: Vec<f64>,
}

/// Builds the network and the initial global models: the merged FE+BE
/// client parameters and the server trunk parameters, drawn from a seed
/// derived from the run seed.
pub fn initial_models(
    settings: &RunSettings,
) -> Result<(SplitPartition, ParamVector, ParamVector)> {
    let unet = build(&settings.arch)?;
    let partition = SplitPartition::from_unet(unet)?;
    let full = partition.network().init_params(derive_seed(settings.seed, "init", 0))?;
    let (fe, server, be) = partition.split_params(&full)?;
    let client = ParamVector::merge(&[&fe, &be])?;
    Ok((partition, client, server))
}

/// Sends a global-broadcast message (installs trunk weights and resets the
/// trunk optimizer) and checks the acknowledgement.
fn broadcast_server(
    channel: &mut dyn TrunkChannel,
    global_epoch: u32,
    seq: &mut u32,
    params: &ParamVector,
) -> Result<()> {
    let round = RoundMeta {
        global_epoch,
        client_id: u32::MAX,
        local_epoch: 0,
        batch: *seq,
    };
    *seq += 1;
    let msg = BoundaryMessage::new(MessageKind::GlobalBroadcast, round, Payload::Params(params.clone()))?;
    let reply = channel.exchange(&msg)?;
    if reply.kind != MessageKind::Control {
        return Err(SplitFedError::Protocol(format!(
            "broadcast expected a control acknowledgement, got {:?}",
            reply.kind
        )));
    }
    Ok(())
}

/// Fetches the trunk's current parameters over the channel.
fn fetch_server_params(
    channel: &mut dyn TrunkChannel,
    round: RoundMeta,
) -> Result<ParamVector> {
    let msg = BoundaryMessage::new(MessageKind::Control, round, Payload::Empty)?;
    let reply = channel.exchange(&msg)?;
    match reply.payload {
        Payload::Params(p) if reply.kind == MessageKind::WeightsUpload => Ok(p),
        _ => Err(SplitFedError::Protocol(format!(
            "weight fetch expected an upload, got {:?}",
            reply.kind
        ))),
    }
}

/// Splits samples into `(input, masks)` batches of the configured size.
fn make_batches(
    samples: &[SegSample],
    batch_size: Option<usize>,
) -> Result<Vec<(Tensor, Vec<crate::mask::Mask>)>> {
    if samples.is_empty() {
        return Err(SplitFedError::Data("a client has an empty sample set".into()));
    }
    let size = batch_size.unwrap_or(samples.len());
    samples.chunks(size).map(batch_inputs).collect()
}

/// Forward-only pass over prepared batches through the split pipeline;
/// returns per-sample losses in batch order. The trunk must already hold
/// the server weights the caller wants scored.
#[allow(clippy::too_many_arguments)]
fn eval_per_sample(
    partition: &SplitPartition,
    channel: &mut dyn TrunkChannel,
    fe: &ParamVector,
    be: &ParamVector,
    batches: &[(Tensor, Vec<crate::mask::Mask>)],
    global_epoch: u32,
    client_id: u32,
    local_epoch: u32,
    seq: &mut u32,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    for (input, masks) in batches {
        let round = RoundMeta { global_epoch, client_id, local_epoch, batch: *seq };
        *seq += 1;
        let (msg, _cache) = client_forward_fe(partition, fe, input, round)?;
        let reply = channel.exchange(&msg)?;
        let fwd = client_forward_be(partition, be, &reply, masks)?;
        losses.extend(fwd.per_sample_losses);
    }
    Ok(losses)
}

fn stable_mean_of(values: &[f64]) -> f64 {
    crate::numerics::stable_mean(&mut values.to_vec())
}

/// One client's turn: broadcast the global trunk weights, train `E` local
/// epochs through the split pipeline, snapshot the best epoch by local
/// validation loss (ties to the earliest), and score the snapshot's
/// per-sample training losses.
#[allow(clippy::too_many_arguments)]
pub fn local_training(
    partition: &SplitPartition,
    settings: &RunSettings,
    channel: &mut dyn TrunkChannel,
    client: &ClientDataset,
    global_client: &ParamVector,
    global_server: &ParamVector,
    global_epoch: u32,
    broadcast_seq: &mut u32,
    records: &mut Vec<LogRecord>,
) -> Result<LocalOutcome> {
    broadcast_server(channel, global_epoch, broadcast_seq, global_server)?;
    let mut fe = global_client.subset(&partition.fe_param_names())?;
    let mut be = global_client.subset(&partition.be_param_names())?;
    let mut opt_fe = Optimizer::momentum(settings.learning_rate, settings.momentum);
    let mut opt_be = Optimizer::momentum(settings.learning_rate, settings.momentum);

    let train_batches = make_batches(&client.train, settings.batch_size)?;
    let val_batches = make_batches(&client.validation, settings.batch_size)?;
    let client_u32 = client.client_id as u32;

    let mut best: Option<(usize, f64, ParamVector, ParamVector, ParamVector)> = None;
    for epoch in 1..=settings.local_epochs {
        let mut seq = 0u32;
        let mut epoch_losses = Vec::new();
        for (input, masks) in &train_batches {
            let round = RoundMeta {
                global_epoch,
                client_id: client_u32,
                local_epoch: epoch as u32,
                batch: seq,
            };
            seq += 1;
            let (msg, fe_cache) = client_forward_fe(partition, &fe, input, round)?;
            let reply = channel.exchange(&msg)?;
            let fwd = client_forward_be(partition, &be, &reply, masks)?;
            if !fwd.loss.is_finite() {
                return Err(SplitFedError::Numerics(format!(
                    "client {} diverged at global epoch {global_epoch}, local epoch {epoch}: loss {}",
                    client.client_id, fwd.loss
                )));
            }
            let (be_grads, beg) =
                client_backward_be(partition, &be, &fwd.cache, &fwd.dlogits, round)?;
            let sreply = channel.exchange(&beg)?;
            let (fe_grads, _dinput) = client_backward_fe(partition, &fe, &fe_cache, &sreply)?;
            opt_be.step(&mut be, &be_grads)?;
            opt_fe.step(&mut fe, &fe_grads)?;
            epoch_losses.extend(fwd.per_sample_losses);
        }
        let val_losses = eval_per_sample(
            partition,
            channel,
            &fe,
            &be,
            &val_batches,
            global_epoch,
            client_u32,
            epoch as u32,
            &mut seq,
        )?;
        let val_loss = stable_mean_of(&val_losses);
        let server_now = fetch_server_params(
            channel,
            RoundMeta {
                global_epoch,
                client_id: client_u32,
                local_epoch: epoch as u32,
                batch: seq,
            },
        )?;
        records.push(LogRecord::LocalEpoch {
            global_epoch: global_epoch as usize,
            client_id: client.client_id,
            local_epoch: epoch,
            train_loss: stable_mean_of(&epoch_losses),
            validation_loss: val_loss,
        });
        if best.as_ref().map_or(true, |(_, b, ..)| val_loss < *b) {
            best = Some((epoch, val_loss, fe.clone(), be.clone(), server_now));
        }
    }
    let (best_epoch, best_val, best_fe, best_be, best_server) =
        best.expect("at least one local epoch ran");
    records.push(LogRecord::BestLocalEpoch {
        global_epoch: global_epoch as usize,
        client_id: client.client_id,
        best_epoch,
        validation_loss: best_val,
    });

    // Per-sample training losses under the snapshot weights: restore the
    // snapshot's trunk, then one forward-only pass over the train set.
    broadcast_server(channel, global_epoch, broadcast_seq, &best_server)?;
    let mut seq = 0u32;
    let train_losses = eval_per_sample(
        partition,
        channel,
        &best_fe,
        &best_be,
        &train_batches,
        global_epoch,
        client_u32,
        settings.local_epochs as u32 + 1,
        &mut seq,
    )?;
    records.push(LogRecord::SampleLosses {
        global_epoch: global_epoch as usize,
        client_id: client.client_id,
        scope: "train-at-best".into(),
        losses: train_losses.clone(),
    });

    let snapshot = ClientSnapshot {
        client_id: client.client_id,
        client_params: ParamVector::merge(&[&best_fe, &best_be])?,
        server_params: best_server,
    };
    records.push(LogRecord::Snapshot {
        global_epoch: global_epoch as usize,
        client_id: client.client_id,
        client_digest: snapshot.client_params.digest(),
        server_digest: snapshot.server_params.digest(),
    });
    Ok(LocalOutcome { snapshot, best_epoch, train_losses })
}

/// Scores per-sample validation losses of a candidate global model on
/// every client, phase-2 style: broadcast its trunk, then forward each
/// client's validation set with its client parameters.
#[allow(clippy::too_many_arguments)]
fn validation_losses_per_client(
    partition: &SplitPartition,
    settings: &RunSettings,
    channel: &mut dyn TrunkChannel,
    data: &PartitionedData,
    client_params: &ParamVector,
    server_params: &ParamVector,
    global_epoch: u32,
    local_epoch: u32,
    broadcast_seq: &mut u32,
) -> Result<Vec<Vec<f64>>> {
    broadcast_server(channel, global_epoch, broadcast_seq, server_params)?;
    let fe = client_params.subset(&partition.fe_param_names())?;
    let be = client_params.subset(&partition.be_param_names())?;
    let mut all = Vec::with_capacity(data.clients.len());
    for client in &data.clients {
        let batches = make_batches(&client.validation, settings.batch_size)?;
        let mut seq = 0u32;
        let losses = eval_per_sample(
            partition,
            channel,
            &fe,
            &be,
            &batches,
            global_epoch,
            client.client_id as u32,
            local_epoch,
            &mut seq,
        )?;
        all.push(losses);
    }
    Ok(all)
}

/// Aggregates the epoch's snapshots according to the strategy; returns the
/// new global (client, server) pair and appends aggregation records.
#[allow(clippy::too_many_arguments)]
fn aggregate_epoch(
    partition: &SplitPartition,
    settings: &RunSettings,
    channel: &mut dyn TrunkChannel,
    data: &PartitionedData,
    outcomes: &[LocalOutcome],
    momentum_state: &mut MomentumState,
    previous_global: Option<&(ParamVector, ParamVector)>,
    global_epoch: u32,
    broadcast_seq: &mut u32,
    records: &mut Vec<LogRecord>,
) -> Result<(ParamVector, ParamVector)> {
    let snapshots: Vec<ClientSnapshot> = outcomes.iter().map(|o| o.snapshot.clone()).collect();
    let train_counts: Vec<usize> = data.clients.iter().map(|c| c.train.len()).collect();
    let g = global_epoch as usize;
    fn log_aggregation(
        records: &mut Vec<LogRecord>,
        g: usize,
        phase: &str,
        r: &[f64],
        client: &ParamVector,
        server: &ParamVector,
    ) {
        records.push(LogRecord::Aggregation {
            global_epoch: g,
            phase: phase.into(),
            r: r.to_vec(),
            client_digest: client.digest(),
            server_digest: server.digest(),
        });
    }
    match settings.strategy {
        Strategy::Naive => {
            let (client, server, w) = naive_average(&snapshots)?;
            log_aggregation(records, g, "naive", &w.r, &client, &server);
            Ok((client, server))
        }
        Strategy::FedAvg => {
            let (client, server, w) = fedavg(&snapshots, &train_counts)?;
            log_aggregation(records, g, "fedavg", &w.r, &client, &server);
            Ok((client, server))
        }
        Strategy::FedAvgM => {
            let prev = previous_global.map(|(c, s)| (c, s));
            let (client, server, w) = fedavg_m(
                &snapshots,
                &train_counts,
                settings.server_momentum,
                prev,
                momentum_state,
            )?;
            log_aggregation(records, g, "fedavg-m", &w.r, &client, &server);
            Ok((client, server))
        }
        Strategy::QaSplitFed => {
            let digests: Vec<(String, String)> = snapshots
                .iter()
                .map(|s| (s.client_params.digest(), s.server_params.digest()))
                .collect();
            let mut bounds_t = Vec::with_capacity(outcomes.len());
            for outcome in outcomes {
                let stats = loss_bound(&outcome.train_losses, settings.std_convention)?;
                records.push(LogRecord::LossBound {
                    global_epoch: g,
                    client_id: outcome.snapshot.client_id,
                    scope: "train".into(),
                    mean: stats.mean,
                    std: stats.std,
                    bound: stats.bound,
                });
                bounds_t.push(stats.bound);
            }
            let d_t = data_scores(&train_counts, ScoreSource::Training)?;
            let (interim_client, interim_server, r1) =
                model_updates(&snapshots, &bounds_t, &d_t)?;
            log_aggregation(records, g, "quality-train", &r1.r, &interim_client, &interim_server);

            let per_client = validation_losses_per_client(
                partition,
                settings,
                channel,
                data,
                &interim_client,
                &interim_server,
                global_epoch,
                settings.local_epochs as u32 + 2,
                broadcast_seq,
            )?;
            let mut bounds_v = Vec::with_capacity(per_client.len());
            for (client, losses) in data.clients.iter().zip(&per_client) {
                records.push(LogRecord::SampleLosses {
                    global_epoch: g,
                    client_id: client.client_id,
                    scope: "validation-interim".into(),
                    losses: losses.clone(),
                });
                let stats = loss_bound(losses, settings.std_convention)?;
                records.push(LogRecord::LossBound {
                    global_epoch: g,
                    client_id: client.client_id,
                    scope: "validation".into(),
                    mean: stats.mean,
                    std: stats.std,
                    bound: stats.bound,
                });
                bounds_v.push(stats.bound);
            }
            let val_counts: Vec<usize> =
                data.clients.iter().map(|c| c.validation.len()).collect();
            let d_v = data_scores(&val_counts, ScoreSource::Validation)?;
            for (snapshot, (cd, sd)) in snapshots.iter().zip(&digests) {
                if snapshot.client_params.digest() != *cd || snapshot.server_params.digest() != *sd
                {
                    return Err(SplitFedError::Protocol(format!(
                        "client {} snapshot changed between update phases",
                        snapshot.client_id
                    )));
                }
            }
            let (final_client, final_server, r2) = model_updates(&snapshots, &bounds_v, &d_v)?;
            log_aggregation(records, g, "quality-validation", &r2.r, &final_client, &final_server);
            Ok((final_client, final_server))
        }
    }
}

/// Runs the full protocol over an already-connected trunk channel. The
/// trunk's initial weights do not matter: every client turn begins with a
/// broadcast of the current global trunk weights.
pub fn run(
    settings: &RunSettings,
    data: &PartitionedData,
    partition: &SplitPartition,
    initial_client: ParamVector,
    initial_server: ParamVector,
    channel: &mut dyn TrunkChannel,
) -> Result<RunOutcome> {
    settings.validate()?;
    if data.clients.is_empty() {
        return Err(SplitFedError::Config("a run needs at least one client".into()));
    }
    let mut records = Vec::new();
    let mut global_client = initial_client;
    let mut global_server = initial_server;
    let mut previous_global: Option<(ParamVector, ParamVector)> = None;
    let mut momentum_state = MomentumState::new();
    let mut best: Option<(f64, usize, ParamVector, ParamVector)> = None;

    for g in 1..=settings.global_epochs {
        let g_u32 = g as u32;
        let mut broadcast_seq = 0u32;
        let mut outcomes = Vec::with_capacity(data.clients.len());
        for client in &data.clients {
            let outcome = local_training(
                partition,
                settings,
                channel,
                client,
                &global_client,
                &global_server,
                g_u32,
                &mut broadcast_seq,
                &mut records,
            )
            .map_err(|e| {
                SplitFedError::Protocol(format!(
                    "global epoch {g}, client {}: {e}",
                    client.client_id
                ))
            })?;
            outcomes.push(outcome);
        }
        let (new_client, new_server) = aggregate_epoch(
            partition,
            settings,
            channel,
            data,
            &outcomes,
            &mut momentum_state,
            previous_global.as_ref(),
            g_u32,
            &mut broadcast_seq,
            &mut records,
        )
        .map_err(|e| SplitFedError::Protocol(format!("global epoch {g} aggregation: {e}")))?;

        let per_client_losses = validation_losses_per_client(
            partition,
            settings,
            channel,
            data,
            &new_client,
            &new_server,
            g_u32,
            settings.local_epochs as u32 + 3,
            &mut broadcast_seq,
        )?;
        let per_client: Vec<f64> =
            per_client_losses.iter().map(|l| stable_mean_of(l)).collect();
        let global_val = stable_mean_of(&per_client);
        records.push(LogRecord::GlobalValidation {
            global_epoch: g,
            per_client: per_client.clone(),
            mean: global_val,
        });
        if best.as_ref().map_or(true, |(b, ..)| global_val < *b) {
            best = Some((global_val, g, new_client.clone(), new_server.clone()));
        }
        previous_global = Some((new_client.clone(), new_server.clone()));
        global_client = new_client;
        global_server = new_server;
    }

    let (best_loss, best_epoch, best_client, best_server) =
        best.expect("at least one global epoch ran");
    records.push(LogRecord::BestGlobal {
        global_epoch: best_epoch,
        validation_loss: best_loss,
    });

    let fe = best_client.subset(&partition.fe_param_names())?;
    let be = best_client.subset(&partition.be_param_names())?;
    let (net, merged) = assemble_monolithic(partition, &fe, &best_server, &be)?;
    let batch = settings.batch_size.unwrap_or(data.test.len().max(1));
    let report = evaluate_global(&net, &merged, &data.test, batch)?;
    Ok(RunOutcome {
        best_epoch,
        best_client,
        best_server,
        report,
        log: TrainingLog { records },
    })
}

/// Builds the models and the trunk server, connects the chosen transport,
/// and runs the protocol end to end.
pub fn execute(
    settings: &RunSettings,
    data: &PartitionedData,
    transport: Transport,
) -> Result<RunOutcome> {
    let (partition, client, server) = initial_models(settings)?;
    let optimizer = Optimizer::momentum(settings.learning_rate, settings.momentum);
    let trunk = TrunkServer::new(partition.clone(), server.clone(), optimizer)?;
    match transport {
        Transport::InProcess => {
            let mut channel = InProcessChannel::new(trunk);
            run(settings, data, &partition, client, server, &mut channel)
        }
        Transport::TcpLoopback => {
            let (addr, handle) = spawn_tcp_server(trunk, "127.0.0.1:0")?;
            let mut channel = TcpChannel::connect(addr)?;
            let outcome = run(settings, data, &partition, client, server, &mut channel);
            drop(channel);
            match handle.join() {
                Ok(Ok(())) => outcome,
                Ok(Err(e)) => Err(SplitFedError::Protocol(format!("trunk server failed: {e}"))),
                Err(_) => Err(SplitFedError::Protocol("trunk server panicked".into())),
            }
        }
    }
}
