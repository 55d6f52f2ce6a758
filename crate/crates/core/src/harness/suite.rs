//! Approximate-strategy runs across modulations, at a common SNR and at
//! SNRs that equalize the raw bit error rate.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::ChannelConfig;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::{run_experiment, RoundReport};
use crate::link::StrategyKind;
use crate::modem::{ber_sweep, Constellation, ModOrder};
use crate::rng::{derive_seed, tag};

/// Modulations compared at 10 dB.
pub const SAME_SNR: [(ModOrder, f64); 3] = [
    (ModOrder::Qpsk, 10.0),
    (ModOrder::Qam16, 10.0),
    (ModOrder::Qam256, 10.0),
];
/// SNRs where each modulation sees a raw BER of about 4e-2.
pub const SAME_BER: [(ModOrder, f64); 3] = [
    (ModOrder::Qpsk, 10.0),
    (ModOrder::Qam16, 16.0),
    (ModOrder::Qam256, 26.0),
];

/// Bits used for the BER measurement attached to each curve.
pub const BER_CHECK_BITS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct SuiteCurve {
    pub order: ModOrder,
    pub snr_db: f64,
    /// Raw BER measured with per-symbol fading before training.
    pub measured_ber: f64,
    /// One report list per seed.
    pub runs: Vec<Vec<RoundReport>>,
}

impl SuiteCurve {
    pub fn label(&self) -> String {
        format!("{}@{}dB", self.order, self.snr_db)
    }

    /// Accuracy per round averaged over seeds.
    pub fn mean_accuracy(&self) -> Vec<f64> {
        let rounds = self.runs.iter().map(Vec::len).min().unwrap_or(0);
        (0..rounds)
            .map(|r| {
                self.runs.iter().map(|run| run[r].accuracy).sum::<f64>() / self.runs.len() as f64
            })
            .collect()
    }

    /// Last-round accuracy averaged over seeds.
    pub fn final_accuracy(&self) -> f64 {
        self.mean_accuracy().last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub same_snr: Vec<SuiteCurve>,
    pub same_ber: Vec<SuiteCurve>,
}

fn measure_ber(order: ModOrder, snr_db: f64, channel: &ChannelConfig, seed: u64) -> Result<f64> {
    let c = Constellation::new(order);
    // Per-symbol fading: same mean as block fading, far lower variance.
    let iid = ChannelConfig {
        block_len_bits: c.bits_per_symbol(),
        ..*channel
    };
    Ok(ber_sweep(
        &c,
        &iid,
        &[snr_db],
        BER_CHECK_BITS,
        derive_seed(seed, &[tag::SWEEP]),
    )?[0]
        .1)
}

/// Runs the approximate strategy for every (modulation, SNR) point of both
/// comparisons and every seed. Shared points are run once.
pub fn same_snr_same_ber_suite(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<SuiteResult> {
    let mut points: Vec<(ModOrder, f64)> = SAME_SNR.to_vec();
    for p in SAME_BER {
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Vec<RoundReport>> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let (order, snr_db) = points[p];
            let mut c = cfg.clone();
            c.modem.order = order;
            c.channel.snr_db = snr_db;
            c.link.kind = StrategyKind::Approximate;
            c.fl.seed = seed;
            c.experiment.channel_seed = None;
            run_experiment(&c)?.into_result()
        })
        .collect::<Result<_>>()?;
    let bers: Vec<f64> = points
        .par_iter()
        .map(|&(o, s)| measure_ber(o, s, &cfg.channel, cfg.fl.seed))
        .collect::<Result<_>>()?;
    let curve = |point: (ModOrder, f64)| {
        let p = points.iter().position(|&q| q == point).unwrap();
        SuiteCurve {
            order: point.0,
            snr_db: point.1,
            measured_ber: bers[p],
            runs: jobs
                .iter()
                .zip(&results)
                .filter(|((jp, _), _)| *jp == p)
                .map(|(_, r)| r.clone())
                .collect(),
        }
    };
    Ok(SuiteResult {
        same_snr: SAME_SNR.iter().map(|&p| curve(p)).collect(),
        same_ber: SAME_BER.iter().map(|&p| curve(p)).collect(),
    })
}

/// Columns: `modulation,snr_db,measured_ber,round,mean_accuracy,min_accuracy,max_accuracy`.
pub fn write_suite_csv<W: Write>(w: W, curves: &[SuiteCurve]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "modulation",
        "snr_db",
        "measured_ber",
        "round",
        "mean_accuracy",
        "min_accuracy",
        "max_accuracy",
    ])?;
    for c in curves {
        for (r, mean) in c.mean_accuracy().iter().enumerate() {
            let accs = c.runs.iter().map(|run| run[r].accuracy);
            let min = accs.clone().fold(f64::INFINITY, f64::min);
            let max = accs.fold(f64::NEG_INFINITY, f64::max);
            csv.write_record([
                c.order.to_string(),
                c.snr_db.to_string(),
                c.measured_ber.to_string(),
                (r + 1).to_string(),
                mean.to_string(),
                min.to_string(),
                max.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}
