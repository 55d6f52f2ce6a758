//! Uplink delivery strategies and their airtime cost.
//!
//! * `ecrt`: rate-`k/n` block code modelled by its correction capability:
//!   a codeword whose raw bit errors exceed `t` is resent under fresh fading.
//! * `naive`: uncoded, bits delivered as detected.
//! * `approximate`: uncoded, block interleaved and reliability loaded; the
//!   receiver later clamps the exponent MSB of every word.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::{transmit, ChannelConfig};
use crate::codec::{
    deinterleave, interleave, BitFrame, InterleaverSpec, DEFAULT_INTERLEAVER_DEPTH,
};
use crate::error::{Error, Result};
use crate::modem::{
    demodulate, load_by_reliability, modulate, unload_by_reliability, Constellation,
};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Ecrt,
    Naive,
    Approximate,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ecrt => "ecrt",
            Self::Naive => "naive",
            Self::Approximate => "approximate",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecrt" => Ok(Self::Ecrt),
            "naive" => Ok(Self::Naive),
            "approximate" | "approx" => Ok(Self::Approximate),
            other => Err(Error::Config(format!("unknown link strategy '{other}'"))),
        }
    }
}

/// Code rate as an exact fraction, written `"num/den"` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRate {
    pub num: usize,
    pub den: usize,
}

impl CodeRate {
    pub const HALF: Self = Self { num: 1, den: 2 };

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid code rate '{s}'"));
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        let num = n.trim().parse().map_err(|_| bad())?;
        let den = d.trim().parse().map_err(|_| bad())?;
        Ok(Self { num, den })
    }
}

impl Serialize for CodeRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkStrategy {
    #[serde(rename = "strategy")]
    pub kind: StrategyKind,
    pub code_rate: CodeRate,
    pub codeword_len: usize,
    pub correct_capability: usize,
    pub max_retries: usize,
    pub interleaver_depth: usize,
    /// Bit-to-label-slot assignment of the approximate strategy.
    pub bit_loading: BitLoading,
}

/// How the approximate strategy places interleaved bits on symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitLoading {
    /// Consecutive bits fill one symbol's label.
    Sequential,
    /// Significance-ordered bits fill the most reliable label slots first.
    #[default]
    Reliability,
}

impl Default for LinkStrategy {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Approximate,
            code_rate: CodeRate::HALF,
            codeword_len: 648,
            correct_capability: 7,
            max_retries: 100,
            interleaver_depth: DEFAULT_INTERLEAVER_DEPTH,
            bit_loading: BitLoading::default(),
        }
    }
}

impl LinkStrategy {
    pub fn with_kind(self, kind: StrategyKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.code_rate;
        if r.num == 0 || r.den == 0 || r.num > r.den {
            return Err(Error::Config(format!("code rate {r} outside (0, 1]")));
        }
        if self.codeword_len == 0 || !(self.codeword_len * r.num).is_multiple_of(r.den) {
            return Err(Error::Config(format!(
                "codeword length {} times rate {r} is not an integer",
                self.codeword_len
            )));
        }
        if self.interleaver_depth < 1 {
            return Err(Error::Config("link.interleaver_depth must be >= 1".into()));
        }
        Ok(())
    }

    /// Information bits carried per codeword.
    pub fn info_bits(&self) -> usize {
        self.codeword_len * self.code_rate.num / self.code_rate.den
    }
}

/// Result of delivering one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionOutcome {
    pub delivered: BitFrame,
    /// Channel bit errors before any correction, summed over all attempts.
    pub raw_bit_errors: usize,
    /// Payload bit errors left in the delivered frame.
    pub residual_bit_errors: usize,
    pub symbols_used: usize,
    pub retransmissions: usize,
}

fn count_errors(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Uncoded transmission of `frame` over one stream of fading blocks.
fn send_uncoded<R: Rng + ?Sized>(
    frame: &BitFrame,
    modem: &Constellation,
    channel: &ChannelConfig,
    rng: &mut R,
) -> (BitFrame, usize, usize) {
    let tx = modulate(frame, modem);
    let symbols = tx.symbols.len();
    let rx = transmit(&tx, channel, rng);
    let bits = demodulate(&rx, modem);
    let errors = count_errors(&bits, frame.payload());
    (BitFrame::from_bits_unchecked(bits), errors, symbols)
}

/// Error-corrected delivery with retransmission.
///
/// Each attempt of codeword `b` uses its own stream derived from
/// `(seed, b, attempt)`, so attempts see independent fading. Parity
/// positions carry pseudo-random filler bits; only their error count matters.
pub fn send_ecrt(
    frame: &BitFrame,
    modem: &Constellation,
    channel: &ChannelConfig,
    strategy: &LinkStrategy,
    seed: u64,
) -> Result<TransmissionOutcome> {
    strategy.validate()?;
    let k = strategy.info_bits();
    let n = strategy.codeword_len;
    let payload = frame.payload();
    let mut out = TransmissionOutcome {
        delivered: frame.clone().strip_padding(),
        raw_bit_errors: 0,
        residual_bit_errors: 0,
        symbols_used: 0,
        retransmissions: 0,
    };
    for (block, info) in payload.chunks(k).enumerate() {
        let mut codeword = Vec::with_capacity(n);
        codeword.extend_from_slice(info);
        codeword.resize(k, 0);
        let mut parity_rng = stream(seed, &[tag::PARITY, block as u64]);
        codeword.extend((k..n).map(|_| parity_rng.random_range(0..2u8)));
        let cw = BitFrame::from_bits_unchecked(codeword);
        let mut attempt = 0usize;
        loop {
            if attempt > strategy.max_retries {
                return Err(Error::LinkFailure {
                    block,
                    attempts: attempt,
                });
            }
            let mut rng = stream(seed, &[block as u64, attempt as u64]);
            let (_, errors, symbols) = send_uncoded(&cw, modem, channel, &mut rng);
            out.raw_bit_errors += errors;
            out.symbols_used += symbols;
            if errors <= strategy.correct_capability {
                break;
            }
            attempt += 1;
            out.retransmissions += 1;
        }
    }
    Ok(out)
}

/// Uncoded delivery, no interleaving.
pub fn send_naive<R: Rng + ?Sized>(
    frame: &BitFrame,
    modem: &Constellation,
    channel: &ChannelConfig,
    rng: &mut R,
) -> TransmissionOutcome {
    let frame = frame.clone().strip_padding();
    let (delivered, errors, symbols) = send_uncoded(&frame, modem, channel, rng);
    TransmissionOutcome {
        delivered,
        raw_bit_errors: errors,
        residual_bit_errors: errors,
        symbols_used: symbols,
        retransmissions: 0,
    }
}

/// Interleave, send uncoded, de-interleave. With the default depth the
/// interleaved frame is sorted by bit significance, which
/// [`BitLoading::Reliability`] maps onto the most reliable label slots.
pub fn send_approximate<R: Rng + ?Sized>(
    frame: &BitFrame,
    modem: &Constellation,
    channel: &ChannelConfig,
    interleaver_depth: usize,
    loading: BitLoading,
    rng: &mut R,
) -> Result<TransmissionOutcome> {
    let frame = frame.clone().strip_padding();
    let spec = InterleaverSpec::new(interleaver_depth, frame.payload_len_bits())?;
    let mut tx = interleave(&frame, &spec)?;
    if loading == BitLoading::Reliability {
        tx = load_by_reliability(&tx, modem);
    }
    let (mut rx, errors, symbols) = send_uncoded(&tx, modem, channel, rng);
    if loading == BitLoading::Reliability {
        rx = unload_by_reliability(&rx, modem);
    }
    let delivered = deinterleave(&rx, &spec)?;
    Ok(TransmissionOutcome {
        residual_bit_errors: delivered.payload_hamming(&frame),
        delivered,
        raw_bit_errors: errors,
        symbols_used: symbols,
        retransmissions: 0,
    })
}

/// Dispatches on `strategy.kind`. Uncoded strategies draw from the stream
/// `(seed)`; ECRT derives per-attempt streams from it.
pub fn send(
    frame: &BitFrame,
    modem: &Constellation,
    channel: &ChannelConfig,
    strategy: &LinkStrategy,
    seed: u64,
) -> Result<TransmissionOutcome> {
    match strategy.kind {
        StrategyKind::Ecrt => send_ecrt(frame, modem, channel, strategy, seed),
        StrategyKind::Naive => Ok(send_naive(frame, modem, channel, &mut stream(seed, &[]))),
        StrategyKind::Approximate => send_approximate(
            frame,
            modem,
            channel,
            strategy.interleaver_depth,
            strategy.bit_loading,
            &mut stream(seed, &[]),
        ),
    }
}

/// Symbols spent by ECRT per symbol spent by the approximate scheme.
pub fn airtime_ratio(ecrt: &TransmissionOutcome, approx: &TransmissionOutcome) -> f64 {
    ecrt.symbols_used as f64 / approx.symbols_used as f64
}
