//! Bit-exact float32 <-> bit-frame conversion, block interleaving and the
//! receiver-side exponent clamp.
//!
//! Bits are stored one per byte (`0` or `1`), most significant bit of each
//! 32-bit word first, so bit index 0 of a word is the sign and index 1 the
//! exponent MSB.

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 32;

/// Mask of the exponent MSB (bit index 1 counting from the sign).
const EXPONENT_MSB: u32 = 1 << 30;

/// IEEE-754 single precision word viewed as sign / exponent / fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Float32Bits(pub u32);

impl Float32Bits {
    pub fn from_f32(v: f32) -> Self {
        Self(v.to_bits())
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.0)
    }

    pub fn sign(self) -> u32 {
        self.0 >> 31
    }

    pub fn exponent(self) -> u32 {
        (self.0 >> 23) & 0xff
    }

    pub fn fraction(self) -> u32 {
        self.0 & 0x7f_ffff
    }

    /// Bit at `index`, counted from the sign bit (index 0).
    pub fn bit(self, index: usize) -> u8 {
        assert!(index < WORD_BITS, "bit index {index} out of range");
        ((self.0 >> (31 - index)) & 1) as u8
    }

    pub fn flip(self, index: usize) -> Self {
        assert!(index < WORD_BITS, "bit index {index} out of range");
        Self(self.0 ^ (1 << (31 - index)))
    }

    /// Forces the exponent MSB to zero. The result has magnitude < 2 for
    /// every input pattern (NaN/Inf included).
    pub fn clamped(self) -> Self {
        Self(self.0 & !EXPONENT_MSB)
    }

    /// Binary rendering grouped as `s eeeeeeee fffff...`.
    pub fn pretty(self) -> String {
        let s = format!("{:032b}", self.0);
        format!("{} {} {}", &s[..1], &s[1..9], &s[9..])
    }
}

/// Ordered bit sequence. The first `payload_len_bits` bits carry data; the
/// remaining `pad_bits` are zero filler that completes the last symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFrame {
    bits: Vec<u8>,
    payload_len_bits: usize,
    pad_bits: usize,
}

impl BitFrame {
    /// Frame with no padding. Every element of `bits` must be 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Payload(format!("non-binary value at bit {pos}")));
        }
        Ok(Self::from_bits_unchecked(bits))
    }

    pub(crate) fn from_bits_unchecked(bits: Vec<u8>) -> Self {
        let payload_len_bits = bits.len();
        Self {
            bits,
            payload_len_bits,
            pad_bits: 0,
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn payload(&self) -> &[u8] {
        &self.bits[..self.payload_len_bits]
    }

    pub fn payload_len_bits(&self) -> usize {
        self.payload_len_bits
    }

    pub fn pad_bits(&self) -> usize {
        self.pad_bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Appends zero bits so the total length is a multiple of `bits_per_symbol`.
    pub fn padded_to(mut self, bits_per_symbol: usize) -> Self {
        assert!(bits_per_symbol > 0);
        self.strip_padding_in_place();
        let rem = self.payload_len_bits % bits_per_symbol;
        if rem != 0 {
            self.pad_bits = bits_per_symbol - rem;
            self.bits.resize(self.payload_len_bits + self.pad_bits, 0);
        }
        self
    }

    /// Drops padding, keeping the payload only.
    pub fn strip_padding(mut self) -> Self {
        self.strip_padding_in_place();
        self
    }

    fn strip_padding_in_place(&mut self) {
        self.bits.truncate(self.payload_len_bits);
        self.pad_bits = 0;
    }

    /// Number of payload positions where `self` and `other` differ.
    pub fn payload_hamming(&self, other: &BitFrame) -> usize {
        self.payload()
            .iter()
            .zip(other.payload())
            .filter(|(a, b)| a != b)
            .count()
    }

    fn words(&self) -> Result<impl Iterator<Item = Float32Bits> + '_> {
        if !self.payload_len_bits.is_multiple_of(WORD_BITS) {
            return Err(Error::Payload(format!(
                "payload of {} bits is not a whole number of 32-bit words",
                self.payload_len_bits
            )));
        }
        Ok(self
            .payload()
            .chunks_exact(WORD_BITS)
            .map(|chunk| Float32Bits(chunk.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))))
    }
}

/// Serializes gradients as consecutive IEEE-754 words, sign bit first.
pub fn encode(values: &[f32]) -> Result<BitFrame> {
    let mut bits = Vec::with_capacity(values.len() * WORD_BITS);
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Payload(format!(
                "non-finite gradient {v} at index {i}"
            )));
        }
        push_word(&mut bits, v.to_bits());
    }
    Ok(BitFrame::from_bits_unchecked(bits))
}

fn push_word(bits: &mut Vec<u8>, word: u32) {
    bits.extend((0..WORD_BITS).map(|k| ((word >> (31 - k)) & 1) as u8));
}

/// Re-interprets every word after forcing its exponent MSB to 0.
pub fn decode_with_clamp(frame: &BitFrame) -> Result<Vec<f32>> {
    Ok(frame.words()?.map(|w| w.clamped().to_f32()).collect())
}

/// Re-interprets every word as-is. May yield NaN, Inf or huge values.
pub fn decode_naive(frame: &BitFrame) -> Result<Vec<f32>> {
    Ok(frame.words()?.map(Float32Bits::to_f32).collect())
}

/// Row-column block interleaver: bits are written row by row into a matrix
/// with `depth` columns and read out column by column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterleaverSpec {
    pub depth: usize,
    pub frame_len: usize,
}

pub const DEFAULT_INTERLEAVER_DEPTH: usize = 32;

impl InterleaverSpec {
    pub fn new(depth: usize, frame_len: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Config("interleaver depth must be >= 1".into()));
        }
        Ok(Self { depth, frame_len })
    }

    /// `perm[i]` is the output position of input bit `i`.
    ///
    /// When `depth` divides the frame length this is
    /// `(i mod depth) * ceil(len / depth) + i / depth`. Otherwise the matrix
    /// has unfilled cells in its last row and they are skipped on read-out.
    pub fn permutation(&self) -> Result<Vec<usize>> {
        if self.depth < 1 {
            return Err(Error::Config("interleaver depth must be >= 1".into()));
        }
        let len = self.frame_len;
        let d = self.depth;
        // Start offset of each column in the read-out order.
        let mut col_start = Vec::with_capacity(d);
        let mut acc = 0;
        for c in 0..d {
            col_start.push(acc);
            acc += if c < len { (len - 1 - c) / d + 1 } else { 0 };
        }
        Ok((0..len).map(|i| col_start[i % d] + i / d).collect())
    }

    fn check(&self, frame: &BitFrame) -> Result<()> {
        if frame.payload_len_bits() != self.frame_len {
            return Err(Error::Config(format!(
                "interleaver built for {} bits, frame has {}",
                self.frame_len,
                frame.payload_len_bits()
            )));
        }
        Ok(())
    }
}

/// Applies the block permutation to the payload bits.
pub fn interleave(frame: &BitFrame, spec: &InterleaverSpec) -> Result<BitFrame> {
    spec.check(frame)?;
    let perm = spec.permutation()?;
    let mut out = vec![0u8; spec.frame_len];
    for (i, &bit) in frame.payload().iter().enumerate() {
        out[perm[i]] = bit;
    }
    Ok(BitFrame::from_bits_unchecked(out))
}

/// Inverse of [`interleave`].
pub fn deinterleave(frame: &BitFrame, spec: &InterleaverSpec) -> Result<BitFrame> {
    spec.check(frame)?;
    let perm = spec.permutation()?;
    let payload = frame.payload();
    let out = perm.iter().map(|&p| payload[p]).collect();
    Ok(BitFrame::from_bits_unchecked(out))
}
