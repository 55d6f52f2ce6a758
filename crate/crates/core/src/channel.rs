//! Rayleigh block-fading uplink with path loss and AWGN.
//!
//! The received sample is `r = c * s + n` where `c = sqrt(p * d^-alpha) * h`,
//! `h ~ CN(0, 1)` is held constant over a block of symbols and
//! `n ~ CN(0, sigma2)` is drawn per symbol.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::SymbolStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(rename = "alpha")]
    pub path_loss_exponent: f64,
    pub distance_m: f64,
    pub tx_power: f64,
    /// Average received symbol SNR, `E[|c s|^2] / sigma2`, in dB.
    pub snr_db: f64,
    /// Channel bits covered by one fading realization.
    pub block_len_bits: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.0,
            distance_m: 10.0,
            tx_power: 1.0,
            snr_db: 10.0,
            block_len_bits: 648,
        }
    }
}

impl ChannelConfig {
    pub fn with_snr_db(self, snr_db: f64) -> Self {
        Self { snr_db, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.path_loss_exponent.is_finite() || self.path_loss_exponent <= 0.0 {
            return Err(Error::Config("channel.alpha must be > 0".into()));
        }
        if !self.distance_m.is_finite() || self.distance_m <= 0.0 {
            return Err(Error::Config("channel.distance_m must be > 0".into()));
        }
        if !self.tx_power.is_finite() || self.tx_power <= 0.0 {
            return Err(Error::Config("channel.tx_power must be > 0".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("channel.snr_db must be finite".into()));
        }
        if self.block_len_bits < 1 {
            return Err(Error::Config("channel.block_len_bits must be >= 1".into()));
        }
        Ok(())
    }

    /// Large-scale power gain `p * d^-alpha`.
    pub fn path_gain(&self) -> f64 {
        self.tx_power * self.distance_m.powf(-self.path_loss_exponent)
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Noise variance giving the configured SNR for unit-energy symbols.
    pub fn noise_variance(&self) -> f64 {
        self.path_gain() / self.snr_linear()
    }

    /// Symbols per fading block for a modulation carrying `bits_per_symbol`.
    pub fn block_len_symbols(&self, bits_per_symbol: usize) -> usize {
        self.block_len_bits.div_ceil(bits_per_symbol).max(1)
    }
}

/// One fading state as known to the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    /// Small-scale fading, `CN(0, 1)`.
    pub h: Complex64,
    /// Composite gain `sqrt(p d^-alpha) h`.
    pub c: Complex64,
    pub sigma2: f64,
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws a fading gain. An exactly-zero `h` is rejected and redrawn since
/// the detector cannot invert it.
pub fn draw_realization<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> ChannelRealization {
    let h = loop {
        let h = complex_normal(rng, 1.0);
        if h.norm_sqr() > 0.0 {
            break h;
        }
    };
    ChannelRealization {
        h,
        c: h * cfg.path_gain().sqrt(),
        sigma2: cfg.noise_variance(),
    }
}

/// Received symbols plus the realization used for each block of
/// `block_len` symbols.
#[derive(Debug, Clone)]
pub struct Received {
    pub stream: SymbolStream,
    pub realizations: Vec<ChannelRealization>,
    pub block_len: usize,
}

impl Received {
    /// Composite gain applied to symbol `k`.
    pub fn gain_at(&self, k: usize) -> Complex64 {
        self.realizations[k / self.block_len].c
    }
}

/// Passes a symbol stream through the block-fading channel.
pub fn transmit<R: Rng + ?Sized>(
    symbols: &SymbolStream,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Received {
    let block_len = cfg.block_len_symbols(symbols.bits_per_symbol);
    let mut out = Vec::with_capacity(symbols.symbols.len());
    let mut realizations = Vec::with_capacity(symbols.symbols.len().div_ceil(block_len));
    for block in symbols.symbols.chunks(block_len) {
        let real = draw_realization(cfg, rng);
        for &s in block {
            out.push(real.c * s + complex_normal(rng, real.sigma2));
        }
        realizations.push(real);
    }
    Received {
        stream: SymbolStream {
            symbols: out,
            source_len_bits: symbols.source_len_bits,
            bits_per_symbol: symbols.bits_per_symbol,
        },
        realizations,
        block_len,
    }
}
