use rayon::prelude::*;

use crate::codec::{decode_naive, decode_with_clamp, encode};
use crate::error::{Error, Result};
use crate::flcore::{
    aggregate, evaluate, forward_backward, global_update, load_idx, partition_noniid,
    synthetic_digits, ClientDataset, Dataset, Sample,
};
use crate::harness::config::{DatasetConfig, ExperimentConfig};
use crate::link::{send, StrategyKind};
use crate::modem::Constellation;
use crate::rng::{derive_seed, stream, tag};
use crate::{GradientTensor, ModelParams};

/// Outcome of one FL round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub strategy: StrategyKind,
    /// 1-based round index.
    pub round: usize,
    pub raw_bit_errors: Vec<usize>,
    pub residual_bit_errors: Vec<usize>,
    pub retransmissions: usize,
    /// Uplink symbols spent this round, summed over clients.
    pub symbols_used: usize,
    /// Uplink symbols spent up to and including this round.
    pub cumulative_airtime: u64,
    /// Test accuracy after this round's update.
    pub accuracy: f64,
    /// Weighted mean local training loss before the update.
    pub loss: f64,
    /// Fraction of transmitted gradient entries inside `(-1, 1)`.
    pub frac_in_unit: f64,
}

/// Reports of a run; `aborted` holds the error that stopped it early.
#[derive(Debug)]
pub struct ExperimentRun {
    pub reports: Vec<RoundReport>,
    pub aborted: Option<Error>,
}

impl ExperimentRun {
    pub fn into_result(self) -> Result<Vec<RoundReport>> {
        match self.aborted {
            Some(e) => Err(e),
            None => Ok(self.reports),
        }
    }
}

/// Train and test sets for a config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.fl.dataset {
        DatasetConfig::Synthetic {
            train_per_class,
            test_per_class,
        } => Ok((
            synthetic_digits(*train_per_class, derive_seed(cfg.fl.seed, &[0])),
            synthetic_digits(*test_per_class, derive_seed(cfg.fl.seed, &[1])),
        )),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        )),
    }
}

fn local_batch(
    client: &ClientDataset,
    batch_size: Option<usize>,
    seed: u64,
    round: usize,
) -> Vec<&Sample> {
    match batch_size {
        Some(b) if b < client.samples.len() => {
            let mut rng = stream(seed, &[tag::DATA, client.id as u64, round as u64]);
            rand::seq::index::sample(&mut rng, client.samples.len(), b)
                .into_iter()
                .map(|i| &client.samples[i])
                .collect()
        }
        _ => client.samples.iter().collect(),
    }
}

struct ClientUpload {
    received: GradientTensor,
    raw: usize,
    residual: usize,
    retransmissions: usize,
    symbols: usize,
    loss: f64,
    in_unit: usize,
}

/// Runs `cfg.fl.rounds` FedSGD rounds with every client uploading through
/// `cfg.link`. A link failure stops the run and keeps the finished rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    let clients = partition_noniid(
        &train,
        cfg.fl.clients,
        cfg.fl.shards_per_client,
        cfg.fl.seed,
    )?;
    let weights: Vec<f64> = clients.iter().map(|c| c.weight).collect();
    let spec = cfg.fl.model.spec();
    let mut params = ModelParams::init(&spec, &mut stream(cfg.fl.seed, &[tag::INIT]))?;
    let modem = Constellation::new(cfg.modem.order);
    let channel_seed = cfg.channel_seed();
    let kind = cfg.link.kind;

    let mut reports = Vec::with_capacity(cfg.fl.rounds);
    let mut airtime = 0u64;
    for round in 1..=cfg.fl.rounds {
        let uploads: Result<Vec<ClientUpload>> = clients
            .par_iter()
            .map(|client| {
                let batch: Vec<Sample> = local_batch(client, cfg.fl.batch_size, cfg.fl.seed, round)
                    .into_iter()
                    .cloned()
                    .collect();
                let (loss, mut grad) = forward_backward(&params, &batch)?;
                // A diverged model can produce non-finite gradients; they are
                // zeroed so the word stream stays well defined.
                for v in &mut grad.values {
                    if !v.is_finite() {
                        *v = 0.0;
                    }
                }
                let in_unit = grad.values.iter().filter(|v| v.abs() < 1.0).count();
                let frame = encode(&grad.values)?;
                let seed =
                    derive_seed(channel_seed, &[tag::UPLINK, client.id as u64, round as u64]);
                let out = send(&frame, &modem, &cfg.channel, &cfg.link, seed)?;
                let values = match kind {
                    StrategyKind::Approximate => decode_with_clamp(&out.delivered)?,
                    StrategyKind::Naive | StrategyKind::Ecrt => decode_naive(&out.delivered)?,
                };
                Ok(ClientUpload {
                    received: GradientTensor::new(values).tagged(client.id, round),
                    raw: out.raw_bit_errors,
                    residual: out.residual_bit_errors,
                    retransmissions: out.retransmissions,
                    symbols: out.symbols_used,
                    loss: loss as f64,
                    in_unit,
                })
            })
            .collect();
        let uploads = match uploads {
            Ok(u) => u,
            Err(e) => {
                return Ok(ExperimentRun {
                    reports,
                    aborted: Some(e),
                })
            }
        };
        let received: Vec<GradientTensor> = uploads.iter().map(|u| u.received.clone()).collect();
        let global = aggregate(&received, &weights)?;
        params = global_update(&params, &global, cfg.fl.lr)?;
        let symbols: usize = uploads.iter().map(|u| u.symbols).sum();
        airtime += symbols as u64;
        let entries = uploads.len() * params.values.len();
        reports.push(RoundReport {
            strategy: kind,
            round,
            raw_bit_errors: uploads.iter().map(|u| u.raw).collect(),
            residual_bit_errors: uploads.iter().map(|u| u.residual).collect(),
            retransmissions: uploads.iter().map(|u| u.retransmissions).sum(),
            symbols_used: symbols,
            cumulative_airtime: airtime,
            accuracy: evaluate(&params, &test.samples),
            loss: uploads.iter().zip(&weights).map(|(u, w)| u.loss * w).sum(),
            frac_in_unit: uploads.iter().map(|u| u.in_unit).sum::<usize>() as f64 / entries as f64,
        });
    }
    Ok(ExperimentRun {
        reports,
        aborted: None,
    })
}
