//! Gray-coded square QAM: constellation construction, bit/symbol mapping,
//! maximum-likelihood detection and the nearest-neighbour MSB/LSB error
//! analysis for 16-QAM.
//!
//! A label of `b` bits is split in two halves: the first half Gray-codes the
//! in-phase position, the second half the quadrature position. Label bit 0
//! is the MSB.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit, ChannelConfig, Received};
use crate::codec::BitFrame;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModOrder {
    Qpsk,
    Qam16,
    Qam256,
}

impl ModOrder {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            4 => Ok(Self::Qpsk),
            16 => Ok(Self::Qam16),
            256 => Ok(Self::Qam256),
            _ => Err(Error::Config(format!(
                "unsupported modulation order {order}"
            ))),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Self::Qpsk => 4,
            Self::Qam16 => 16,
            Self::Qam256 => 256,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }
}

impl fmt::Display for ModOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qpsk => "qpsk",
            Self::Qam16 => "qam16",
            Self::Qam256 => "qam256",
        })
    }
}

impl FromStr for ModOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" | "4" => Ok(Self::Qpsk),
            "qam16" | "16qam" | "16-qam" | "16" => Ok(Self::Qam16),
            "qam256" | "256qam" | "256-qam" | "256" => Ok(Self::Qam256),
            other => Err(Error::Config(format!("unknown modulation '{other}'"))),
        }
    }
}

fn gray(n: usize) -> usize {
    n ^ (n >> 1)
}

/// Immutable Gray-labelled square constellation with unit average energy.
#[derive(Debug, Clone)]
pub struct Constellation {
    order: ModOrder,
    bits_per_symbol: usize,
    /// Points per axis.
    side: usize,
    /// Bits per axis.
    half: usize,
    scale: f64,
    /// `points[label]` is the complex coordinate of that label.
    points: Vec<Complex64>,
    /// Axis position -> Gray code.
    axis_gray: Vec<usize>,
}

impl Constellation {
    pub fn new(order: ModOrder) -> Self {
        let bits_per_symbol = order.bits_per_symbol();
        let half = bits_per_symbol / 2;
        let side = 1usize << half;
        let m = order.order() as f64;
        let scale = (1.5 / (m - 1.0)).sqrt(); // 1 / sqrt(2 (M - 1) / 3)
        let axis_gray: Vec<usize> = (0..side).map(gray).collect();
        let mut points = vec![Complex64::default(); order.order()];
        for row in 0..side {
            for col in 0..side {
                let label = (axis_gray[col] << half) | axis_gray[row];
                points[label] = Complex64::new(
                    Self::level(side, col) * scale,
                    Self::level(side, row) * scale,
                );
            }
        }
        Self {
            order,
            bits_per_symbol,
            side,
            half,
            scale,
            points,
            axis_gray,
        }
    }

    /// Builds the constellation for `order` in {4, 16, 256}.
    pub fn build(order: usize) -> Result<Self> {
        ModOrder::from_order(order).map(Self::new)
    }

    /// Unscaled amplitude of axis position `pos`: `side-1, side-3, ..., -(side-1)`.
    fn level(side: usize, pos: usize) -> f64 {
        (side as f64 - 1.0) - 2.0 * pos as f64
    }

    pub fn order(&self) -> ModOrder {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Normalization factor applied to the integer grid.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Symbol set indexed by label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Label of the point at grid `(col, row)`; col is the I position.
    pub fn label_at(&self, col: usize, row: usize) -> usize {
        (self.axis_gray[col] << self.half) | self.axis_gray[row]
    }

    /// Label of the symbol with row-major grid index `s` (the `s_k` naming).
    pub fn label_of_index(&self, index: usize) -> usize {
        self.label_at(index % self.side, index / self.side)
    }

    fn bits_to_label(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    fn push_label_bits(&self, label: usize, out: &mut Vec<u8>) {
        let b = self.bits_per_symbol;
        out.extend((0..b).map(|k| ((label >> (b - 1 - k)) & 1) as u8));
    }

    /// Nearest axis position to unscaled amplitude `u`; equidistant
    /// candidates resolve to the lower Gray code.
    fn slice_axis(&self, u: f64) -> usize {
        let max = (self.side - 1) as f64;
        let x = ((max - u) / 2.0).clamp(0.0, max);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(self.side - 1);
        let d_lo = (x - lo as f64).abs();
        let d_hi = (hi as f64 - x).abs();
        if d_lo < d_hi || (d_lo == d_hi && self.axis_gray[lo] <= self.axis_gray[hi]) {
            lo
        } else {
            hi
        }
    }

    /// Fast ML detection for a known non-zero gain: equalize, then slice each
    /// axis independently. Equivalent to [`ml_detect`] for square QAM.
    pub fn detect(&self, received: Complex64, gain: Complex64) -> usize {
        let y = received / gain;
        let col = self.slice_axis(y.re / self.scale);
        let row = self.slice_axis(y.im / self.scale);
        self.label_at(col, row)
    }
}

/// Label bit positions from most to least reliable: both axis MSBs, then
/// both axes' second bits, and so on. Under Gray labelling an axis bit `k`
/// changes at twice as many decision boundaries as bit `k - 1`.
pub fn reliability_order(c: &Constellation) -> Vec<usize> {
    let h = c.bits_per_symbol() / 2;
    (0..h).flat_map(|k| [k, h + k]).collect()
}

/// Output position of every input bit under reliability loading. Over the
/// first `n * bps` bits (`n` whole symbols), bit `j` goes to symbol
/// `j mod n` in label slot `order[j / n]`; a trailing partial symbol is
/// left in place.
fn reliability_permutation(len: usize, c: &Constellation) -> Vec<usize> {
    let b = c.bits_per_symbol();
    let n = len / b;
    let order = reliability_order(c);
    (0..len)
        .map(|j| {
            if j < n * b {
                (j % n) * b + order[j / n]
            } else {
                j
            }
        })
        .collect()
}

/// Spreads the frame over symbols so that its leading bits occupy the most
/// reliable label slots. Applied to a frame sorted by bit significance, it
/// puts sign and exponent bits on the Gray-protected axis MSBs.
pub fn load_by_reliability(frame: &BitFrame, c: &Constellation) -> BitFrame {
    let src = frame.payload();
    let mut out = vec![0u8; src.len()];
    for (j, p) in reliability_permutation(src.len(), c)
        .into_iter()
        .enumerate()
    {
        out[p] = src[j];
    }
    BitFrame::from_bits_unchecked(out)
}

/// Inverse of [`load_by_reliability`].
pub fn unload_by_reliability(frame: &BitFrame, c: &Constellation) -> BitFrame {
    let src = frame.payload();
    let out = reliability_permutation(src.len(), c)
        .into_iter()
        .map(|p| src[p])
        .collect();
    BitFrame::from_bits_unchecked(out)
}

/// Modulated symbols of a bit frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<Complex64>,
    /// Payload bits carried (padding excluded).
    pub source_len_bits: usize,
    pub bits_per_symbol: usize,
}

/// Maps consecutive bit groups to constellation points, zero-padding the
/// last group if needed.
pub fn modulate(frame: &BitFrame, c: &Constellation) -> SymbolStream {
    let b = c.bits_per_symbol();
    let source_len_bits = frame.payload_len_bits();
    let padded;
    let bits = if frame.len().is_multiple_of(b) && frame.len() >= source_len_bits {
        frame.bits()
    } else {
        padded = frame.clone().padded_to(b);
        padded.bits()
    };
    let symbols = bits
        .chunks_exact(b)
        .map(|g| c.point(c.bits_to_label(g)))
        .collect();
    SymbolStream {
        symbols,
        source_len_bits,
        bits_per_symbol: b,
    }
}

/// ML-detects every received symbol with the known per-block gain and
/// returns the payload bits (padding removed).
pub fn demodulate(rx: &Received, c: &Constellation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(rx.stream.symbols.len() * c.bits_per_symbol());
    for (k, &r) in rx.stream.symbols.iter().enumerate() {
        c.push_label_bits(c.detect(r, rx.gain_at(k)), &mut bits);
    }
    bits.truncate(rx.stream.source_len_bits);
    bits
}

/// Noise-free inverse of [`modulate`] (unit gain).
pub fn demodulate_noiseless(stream: &SymbolStream, c: &Constellation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(stream.symbols.len() * c.bits_per_symbol());
    for &s in &stream.symbols {
        c.push_label_bits(c.detect(s, Complex64::new(1.0, 0.0)), &mut bits);
    }
    bits.truncate(stream.source_len_bits);
    bits
}

/// Exhaustive ML detection: `argmin_s |received - gain * s|^2` over the
/// symbol set, ties to the lowest label.
pub fn ml_detect(received: Complex64, gain: Complex64, c: &Constellation) -> Result<usize> {
    if gain.norm_sqr() == 0.0 {
        return Err(Error::Channel("zero channel gain".into()));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (label, &s) in c.points().iter().enumerate() {
        let d = (received - gain * s).norm_sqr();
        if d < best.0 {
            best = (d, label);
        }
    }
    Ok(best.1)
}

/// One row of the nearest-neighbour error analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolErrorRow {
    /// Row-major grid index (`s_k`).
    pub index: usize,
    pub label: usize,
    /// Grid indices of the potential error symbols.
    pub neighbors: Vec<usize>,
    pub msb_errors: usize,
    pub lsb_errors: usize,
}

/// For each symbol, the grid neighbours within Chebyshev distance
/// `neighbor_radius` and how many of them differ in the first and in the
/// last label bit.
pub fn msb_lsb_error_table(c: &Constellation, neighbor_radius: usize) -> Vec<SymbolErrorRow> {
    let side = c.side() as isize;
    let b = c.bits_per_symbol();
    let msb = 1usize << (b - 1);
    let lsb = 1usize;
    let r = neighbor_radius as isize;
    let mut rows = Vec::with_capacity(c.points().len());
    for index in 0..(side * side) as usize {
        let (col, row) = ((index as isize) % side, (index as isize) / side);
        let label = c.label_of_index(index);
        let mut neighbors = Vec::new();
        for nr in (row - r).max(0)..=(row + r).min(side - 1) {
            for nc in (col - r).max(0)..=(col + r).min(side - 1) {
                if (nr, nc) != (row, col) {
                    neighbors.push((nr * side + nc) as usize);
                }
            }
        }
        let count = |mask: usize| {
            neighbors
                .iter()
                .filter(|&&n| (c.label_of_index(n) ^ label) & mask != 0)
                .count()
        };
        let (msb_errors, lsb_errors) = (count(msb), count(lsb));
        rows.push(SymbolErrorRow {
            index,
            label,
            neighbors,
            msb_errors,
            lsb_errors,
        });
    }
    rows
}

/// Renders the first-quadrant rows (s0, s1, s4, s5) of the 16-QAM analysis.
pub fn format_table1(rows: &[SymbolErrorRow], bits_per_symbol: usize) -> String {
    let mut out =
        String::from("symbol | label | potential error symbols | MSB errors | LSB errors\n");
    for row in rows.iter().filter(|r| [0, 1, 4, 5].contains(&r.index)) {
        let ns: Vec<String> = row.neighbors.iter().map(|n| format!("s{n}")).collect();
        out.push_str(&format!(
            "s{} | {:0width$b} | {} | {} | {}\n",
            row.index,
            row.label,
            ns.join(", "),
            row.msb_errors,
            row.lsb_errors,
            width = bits_per_symbol
        ));
    }
    out
}

/// Monte-Carlo BER at each SNR point. Each point uses its own stream
/// derived from `(seed, point index)`.
pub fn ber_sweep(
    c: &Constellation,
    channel: &ChannelConfig,
    snr_db_list: &[f64],
    n_bits: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if snr_db_list.is_empty() {
        return Err(Error::Config("empty SNR list".into()));
    }
    if n_bits == 0 {
        return Err(Error::Config("ber sweep needs at least one bit".into()));
    }
    channel.validate()?;
    // Chunked so memory stays bounded for very long runs.
    const CHUNK: usize = 1 << 18;
    Ok(snr_db_list
        .par_iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let cfg = channel.with_snr_db(snr_db);
            let mut rng = stream(seed, &[tag::SWEEP, i as u64]);
            let mut errors = 0usize;
            let mut done = 0usize;
            while done < n_bits {
                let len = CHUNK.min(n_bits - done);
                let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..2u8)).collect();
                let frame = BitFrame::from_bits_unchecked(bits);
                let rx = transmit(&modulate(&frame, c), &cfg, &mut rng);
                errors += demodulate(&rx, c)
                    .iter()
                    .zip(frame.payload())
                    .filter(|(a, b)| a != b)
                    .count();
                done += len;
            }
            (snr_db, errors as f64 / n_bits as f64)
        })
        .collect())
}

/// Closed-form average BER of Gray QPSK over Rayleigh fading at per-bit SNR
/// `gamma_b` (linear).
pub fn qpsk_rayleigh_ber(gamma_b: f64) -> f64 {
    0.5 * (1.0 - (gamma_b / (1.0 + gamma_b)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    const ORDERS: [ModOrder; 3] = [ModOrder::Qpsk, ModOrder::Qam16, ModOrder::Qam256];

    #[test]
    fn qpsk_layout() {
        let c = Constellation::new(ModOrder::Qpsk);
        let a = 1.0 / 2f64.sqrt();
        assert!((c.point(0b00) - Complex64::new(a, a)).norm() < 1e-15);
        assert!((c.point(0b01) - Complex64::new(a, -a)).norm() < 1e-15);
        assert!((c.point(0b10) - Complex64::new(-a, a)).norm() < 1e-15);
        assert!((c.point(0b11) - Complex64::new(-a, -a)).norm() < 1e-15);
    }

    #[test]
    fn energies_by_enumeration() {
        // independent oracle: mean of (i^2 + q^2) over the odd-integer grid
        for (order, side, norm) in [
            (ModOrder::Qpsk, 2, 2.0),
            (ModOrder::Qam16, 4, 10.0),
            (ModOrder::Qam256, 16, 170.0),
        ] {
            let amps: Vec<f64> = (0..side).map(|k| (2 * k + 1 - side) as f64).collect();
            let mut e = 0.0;
            for &i in &amps {
                for &q in &amps {
                    e += i * i + q * q;
                }
            }
            let e = e / (side * side) as f64;
            assert!((e - norm).abs() < 1e-12);
            let c = Constellation::new(order);
            assert!((c.scale() - 1.0 / norm.sqrt()).abs() < 1e-15);
            assert!((c.mean_energy() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn qam16_grid_coordinates() {
        let c = Constellation::new(ModOrder::Qam16);
        let s = 10f64.sqrt();
        let mut coords: Vec<(i64, i64)> = c
            .points()
            .iter()
            .map(|p| ((p.re * s).round() as i64, (p.im * s).round() as i64))
            .collect();
        coords.sort_unstable();
        let mut grid = Vec::new();
        for i in [-3, -1, 1, 3] {
            for q in [-3, -1, 1, 3] {
                grid.push((i, q));
            }
        }
        assert_eq!(coords, grid);
        // label 0000 sits in the (+,+) corner
        assert!((c.point(0) - Complex64::new(3.0 / s, 3.0 / s)).norm() < 1e-12);
    }

    #[test]
    fn gray_property_all_orders() {
        for order in ORDERS {
            let c = Constellation::new(order);
            let side = c.side();
            for row in 0..side {
                for col in 0..side {
                    let l = c.label_at(col, row);
                    if col + 1 < side {
                        assert_eq!((l ^ c.label_at(col + 1, row)).count_ones(), 1);
                    }
                    if row + 1 < side {
                        assert_eq!((l ^ c.label_at(col, row + 1)).count_ones(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(Constellation::build(8), Err(Error::Config(_))));
        assert!(Constellation::build(16).is_ok());
        assert_eq!("qam256".parse::<ModOrder>().unwrap(), ModOrder::Qam256);
        assert!("qam64".parse::<ModOrder>().is_err());
    }

    #[test]
    fn modulate_lookup() {
        let qpsk = Constellation::new(ModOrder::Qpsk);
        let s = modulate(&BitFrame::from_bits(vec![0, 0]).unwrap(), &qpsk);
        assert_eq!(s.symbols, vec![qpsk.point(0)]);
        let q16 = Constellation::new(ModOrder::Qam16);
        let s = modulate(
            &BitFrame::from_bits(vec![0, 0, 0, 0, 1, 0, 1, 1]).unwrap(),
            &q16,
        );
        assert_eq!(s.symbols, vec![q16.point(0), q16.point(0b1011)]);
        let s = modulate(&BitFrame::from_bits(vec![1; 10]).unwrap(), &q16);
        assert_eq!(s.symbols.len(), 3);
        assert_eq!(s.source_len_bits, 10);
    }

    #[test]
    fn ml_detect_cases() {
        let c = Constellation::new(ModOrder::Qam16);
        let g = Complex64::new(0.3, -0.7);
        for label in 0..16 {
            assert_eq!(ml_detect(g * c.point(label), g, &c).unwrap(), label);
        }
        // midpoint of labels 0 and 1 (adjacent in Q) resolves to the lower label
        let mid = (c.point(0) + c.point(1)) / 2.0;
        assert_eq!(ml_detect(mid, Complex64::new(1.0, 0.0), &c).unwrap(), 0);
        assert_eq!(c.detect(mid, Complex64::new(1.0, 0.0)), 0);
        // origin is equidistant from four points
        let o = Complex64::new(0.0, 0.0);
        let lowest = (0..16)
            .filter(|&l| {
                (c.point(l).norm() - c.point(5).norm()).abs() < 1e-12 && c.point(l).re.abs() < 0.5
            })
            .min()
            .unwrap();
        assert_eq!(ml_detect(o, Complex64::new(1.0, 0.0), &c).unwrap(), lowest);
        assert_eq!(c.detect(o, Complex64::new(1.0, 0.0)), lowest);
        assert!(matches!(
            ml_detect(o, Complex64::new(0.0, 0.0), &c),
            Err(Error::Channel(_))
        ));
    }

    #[test]
    fn table1_rows() {
        let c = Constellation::new(ModOrder::Qam16);
        let rows = msb_lsb_error_table(&c, 1);
        let pick = |i: usize| {
            let r = &rows[i];
            (r.neighbors.clone(), r.msb_errors, r.lsb_errors)
        };
        assert_eq!(pick(0), (vec![1, 4, 5], 0, 2));
        assert_eq!(pick(1), (vec![0, 2, 4, 5, 6], 2, 3));
        assert_eq!(pick(4), (vec![0, 1, 5, 8, 9], 0, 2));
        assert_eq!(pick(5), (vec![0, 1, 2, 4, 6, 8, 9, 10], 3, 3));
        let text = format_table1(&rows, 4);
        assert!(text.contains("s5 |"));
    }

    #[test]
    fn high_snr_qpsk_symbol_errors_are_rare() {
        // Unit-magnitude known gain at 40 dB: the detector itself must be
        // essentially error-free.
        use rand_distr::{Distribution, StandardNormal};
        let c = Constellation::new(ModOrder::Qpsk);
        let cfg = ChannelConfig {
            snr_db: 40.0,
            ..Default::default()
        };
        let gain = Complex64::from_polar(cfg.path_gain().sqrt(), 0.7);
        let sd = (cfg.noise_variance() / 2.0).sqrt();
        let mut rng = stream(2, &[]);
        let n_sym = 1_000_000;
        let mut errors = 0;
        for _ in 0..n_sym {
            let label = rng.random_range(0..4usize);
            let (nr, ni): (f64, f64) = (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let n = Complex64::new(sd * nr, sd * ni);
            if c.detect(gain * c.point(label) + n, gain) != label {
                errors += 1;
            }
        }
        assert!(
            (errors as f64 / n_sym as f64) < 1e-5,
            "{errors} symbol errors"
        );
    }

    #[test]
    fn sweep_errors_and_determinism() {
        let c = Constellation::new(ModOrder::Qpsk);
        let ch = ChannelConfig::default();
        assert!(ber_sweep(&c, &ch, &[], 1000, 1).is_err());
        let a = ber_sweep(&c, &ch, &[5.0, 15.0], 20_000, 4).unwrap();
        let b = ber_sweep(&c, &ch, &[5.0, 15.0], 20_000, 4).unwrap();
        assert_eq!(a, b);
        assert!(a[0].1 > a[1].1);
    }

    #[test]
    fn closed_form_reference() {
        assert!((qpsk_rayleigh_ber(5.0) - 0.043_564).abs() < 1e-6);
        assert!((qpsk_rayleigh_ber(50.0) - 0.004_926).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn fast_detector_matches_exhaustive(
            order_idx in 0usize..3,
            re in -2.0f64..2.0, im in -2.0f64..2.0,
            gr in -1.5f64..1.5, gi in -1.5f64..1.5,
        ) {
            prop_assume!(gr.abs() + gi.abs() > 1e-3);
            let c = Constellation::new(ORDERS[order_idx]);
            let g = Complex64::new(gr, gi);
            let r = Complex64::new(re, im);
            let fast = c.detect(r, g);
            let slow = ml_detect(r, g, &c).unwrap();
            // equal, or numerically tied
            let df = (r - g * c.point(fast)).norm_sqr();
            let ds = (r - g * c.point(slow)).norm_sqr();
            prop_assert!(fast == slow || (df - ds).abs() < 1e-12);
        }

        #[test]
        fn noiseless_roundtrip(order_idx in 0usize..3, bits in proptest::collection::vec(0u8..2, 0..4096),
                               gr in 0.01f64..2.0, gi in -2.0f64..2.0) {
            let c = Constellation::new(ORDERS[order_idx]);
            let frame = BitFrame::from_bits(bits).unwrap();
            let s = modulate(&frame, &c);
            prop_assert_eq!(s.symbols.len(), frame.len().div_ceil(c.bits_per_symbol()));
            prop_assert_eq!(&demodulate_noiseless(&s, &c)[..], frame.payload());
            let g = Complex64::new(gr, gi);
            let mut out = Vec::new();
            for &sym in &s.symbols {
                let l = ml_detect(g * sym, g, &c).unwrap();
                c.push_label_bits(l, &mut out);
            }
            out.truncate(frame.len());
            prop_assert_eq!(&out[..], frame.payload());
        }
    }

    #[test]
    fn reliability_order_puts_axis_msbs_first() {
        assert_eq!(
            reliability_order(&Constellation::new(ModOrder::Qpsk)),
            vec![0, 1]
        );
        assert_eq!(
            reliability_order(&Constellation::new(ModOrder::Qam16)),
            vec![0, 2, 1, 3]
        );
        assert_eq!(
            reliability_order(&Constellation::new(ModOrder::Qam256)),
            vec![0, 4, 1, 5, 2, 6, 3, 7]
        );
    }

    #[test]
    fn reliability_loading_places_leading_bits_on_msb_slots() {
        let c = Constellation::new(ModOrder::Qam16);
        let mut bits = vec![0u8; 16];
        bits[..4].fill(1);
        let loaded = load_by_reliability(&BitFrame::from_bits(bits).unwrap(), &c);
        assert_eq!(
            loaded.payload(),
            &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]
        );
    }

    proptest! {
        #[test]
        fn reliability_loading_roundtrips(bits in proptest::collection::vec(0u8..2, 0..300), order in 0usize..3) {
            let c = Constellation::new([ModOrder::Qpsk, ModOrder::Qam16, ModOrder::Qam256][order]);
            let f = BitFrame::from_bits(bits).unwrap();
            let back = unload_by_reliability(&load_by_reliability(&f, &c), &c);
            prop_assert_eq!(back.payload(), f.payload());
        }
    }
}
