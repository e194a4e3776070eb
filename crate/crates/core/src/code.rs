//! Binary exposure codes (flutter-shutter sequences).
//!
//! A code has one bit per equal sub-exposure: `1` opens the shutter, `0`
//! blocks light. Codes are scored by the magnitude spectrum of their DFT.
//! Ranking uses the minimum over the *non-DC* bins: the DC bin always equals
//! the number of open segments, so including it would hide the zeros that make
//! a blur kernel non-invertible. The variance is taken over all bins.
//!
//! Asymmetry is palindromicity: a code equal to its own reversal blurs a
//! motion and its time reversal identically, so it cannot encode direction.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest code for which [`search_codes`] enumerates every candidate.
pub const EXHAUSTIVE_MAX_LEN: usize = 20;

/// Longest code [`search_codes`] accepts at all (sampled mode packs codes in a `u64`).
pub const SEARCH_MAX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExposureCode {
    bits: Vec<bool>,
}

impl ExposureCode {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidCode(String::new()));
        }
        Ok(Self { bits })
    }

    /// The conventional (box) exposure of length `n`.
    pub fn all_ones(n: usize) -> Result<Self> {
        Self::from_bits(vec![true; n])
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bit(&self, n: usize) -> bool {
        self.bits[n]
    }

    /// Bits as 0.0/1.0 weights.
    pub fn weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            bits: self.bits.iter().rev().copied().collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        is_symmetric(self)
    }

    pub fn id_string(&self) -> String {
        self.to_string()
    }

    /// Fraction of open segments.
    pub fn duty_ratio(&self) -> f64 {
        self.ones_count() as f64 / self.len() as f64
    }

    pub fn ensure_light(&self) -> Result<()> {
        if self.ones_count() == 0 {
            return Err(Error::ZeroThroughput(self.id_string()));
        }
        Ok(())
    }

    fn from_mask(mask: u64, len: usize) -> Self {
        Self {
            bits: (0..len).map(|i| mask >> (len - 1 - i) & 1 == 1).collect(),
        }
    }
}

impl fmt::Display for ExposureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ExposureCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidCode(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        if bits.is_empty() {
            return Err(Error::InvalidCode(s.to_string()));
        }
        Ok(Self { bits })
    }
}

impl Serialize for ExposureCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.id_string())
    }
}

impl<'de> Deserialize<'de> for ExposureCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScore {
    pub magnitudes: Vec<f64>,
    pub min_mag: f64,
    pub min_nondc: f64,
    pub variance: f64,
}

/// Direct O(N²) DFT magnitudes of the 0/1 sequence.
///
/// For `N == 1` there is no non-DC bin and `min_nondc` is reported as the
/// DC magnitude.
pub fn dft_magnitude_spectrum(code: &ExposureCode) -> SpectrumScore {
    let n = code.len();
    let table = TwiddleTable::new(n);
    let magnitudes: Vec<f64> = (0..n).map(|k| table.bin_magnitude(code.bits(), k)).collect();
    summarize(magnitudes)
}

fn summarize(magnitudes: Vec<f64>) -> SpectrumScore {
    let n = magnitudes.len() as f64;
    let min_mag = magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let min_nondc = if magnitudes.len() == 1 {
        magnitudes[0]
    } else {
        magnitudes[1..].iter().copied().fold(f64::INFINITY, f64::min)
    };
    let mean = magnitudes.iter().sum::<f64>() / n;
    let variance = magnitudes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    SpectrumScore {
        magnitudes,
        min_mag,
        min_nondc,
        variance,
    }
}

struct TwiddleTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TwiddleTable {
    fn new(n: usize) -> Self {
        let step = std::f64::consts::TAU / n as f64;
        Self {
            cos: (0..n).map(|j| (step * j as f64).cos()).collect(),
            sin: (0..n).map(|j| (step * j as f64).sin()).collect(),
        }
    }

    fn bin_magnitude(&self, bits: &[bool], k: usize) -> f64 {
        let n = bits.len();
        let (mut re, mut im) = (0.0, 0.0);
        for (t, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            let j = (k * t) % n;
            re += self.cos[j];
            im -= self.sin[j];
        }
        re.hypot(im)
    }
}

/// True iff the code reads the same reversed.
pub fn is_symmetric(code: &ExposureCode) -> bool {
    let b = code.bits();
    b.iter().eq(b.iter().rev())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub length: usize,
    pub ones: usize,
    pub top_k: usize,
    pub require_asymmetric: bool,
    /// Candidates drawn when `length > EXHAUSTIVE_MAX_LEN`.
    pub samples: usize,
    pub seed: u64,
}

impl SearchParams {
    pub fn new(length: usize, ones: usize, top_k: usize, require_asymmetric: bool) -> Self {
        Self {
            length,
            ones,
            top_k,
            require_asymmetric,
            samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code: ExposureCode,
    pub score: SpectrumScore,
}

/// Scores are compared on a 1e-9 grid so that codes whose spectra agree up to
/// rounding (e.g. a code and its reversal) fall through to the
/// lexicographic tie-break instead of being ordered by float noise.
fn rank_key(min_nondc: f64, variance: f64) -> (i64, i64) {
    (
        -(min_nondc * 1e9).round() as i64,
        (variance * 1e9).round() as i64,
    )
}

/// Finds the best codes of a given length and number of open segments.
///
/// Ranked by descending `min_nondc`, then ascending `variance`, then
/// ascending id string.
pub fn search_codes(params: &SearchParams) -> Result<Vec<RankedCode>> {
    let SearchParams {
        length,
        ones,
        top_k,
        require_asymmetric,
        ..
    } = *params;
    if length == 0 || length > SEARCH_MAX_LEN {
        return Err(Error::InvalidArgument(format!(
            "code length must be in 1..={SEARCH_MAX_LEN}, got {length}"
        )));
    }
    if ones == 0 || ones > length {
        return Err(Error::InvalidArgument(format!(
            "ones count must be in 1..={length}, got {ones}"
        )));
    }
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }

    let candidates = if length <= EXHAUSTIVE_MAX_LEN {
        enumerate_masks(length, ones)
    } else {
        sample_masks(length, ones, params.samples, params.seed)
    };

    let table = TwiddleTable::new(length);
    let mut scored: Vec<((i64, i64), String, ExposureCode)> = candidates
        .into_iter()
        .map(|mask| ExposureCode::from_mask(mask, length))
        .filter(|code| !(require_asymmetric && code.is_symmetric()))
        .map(|code| {
            let mags: Vec<f64> = (0..length)
                .map(|k| table.bin_magnitude(code.bits(), k))
                .collect();
            let s = summarize(mags);
            (rank_key(s.min_nondc, s.variance), code.id_string(), code)
        })
        .collect();

    if scored.is_empty() {
        return Err(Error::EmptySearch(format!(
            "length={length} ones={ones} require_asymmetric={require_asymmetric}"
        )));
    }
    scored.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(top_k)
        .map(|(_, _, code)| {
            let score = dft_magnitude_spectrum(&code);
            RankedCode { code, score }
        })
        .collect())
}

/// All `length`-bit masks with exactly `ones` set bits (Gosper's hack).
fn enumerate_masks(length: usize, ones: usize) -> Vec<u64> {
    let mut out = Vec::new();
    let limit = 1u64 << length;
    let mut mask = (1u64 << ones) - 1;
    while mask < limit {
        out.push(mask);
        let lowest = mask & mask.wrapping_neg();
        let ripple = mask + lowest;
        mask = (((ripple ^ mask) >> 2) / lowest) | ripple;
    }
    out
}

fn sample_masks(length: usize, ones: usize, samples: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..length).collect();
    let mut seen = HashSet::with_capacity(samples);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        positions.shuffle(&mut rng);
        let mask = positions[..ones].iter().fold(0u64, |m, &p| m | 1 << p);
        if seen.insert(mask) {
            out.push(mask);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> ExposureCode {
        s.parse().unwrap()
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("".parse::<ExposureCode>().is_err());
        assert!("1021".parse::<ExposureCode>().is_err());
        assert_eq!(code("0110").id_string(), "0110");
    }

    #[test]
    fn box_code_spectrum() {
        let s = dft_magnitude_spectrum(&code("11111111"));
        assert!((s.magnitudes[0] - 8.0).abs() < 1e-12);
        assert!(s.magnitudes[1..].iter().all(|m| m.abs() < 1e-12));
        assert!(s.min_nondc.abs() < 1e-12);
    }

    #[test]
    fn impulse_spectrum_is_flat() {
        let s = dft_magnitude_spectrum(&code("10000000"));
        assert!(s.magnitudes.iter().all(|m| (m - 1.0).abs() < 1e-12));
        assert!(s.variance.abs() < 1e-12);
    }

    #[test]
    fn single_bit_code() {
        let s = dft_magnitude_spectrum(&code("1"));
        assert_eq!(s.magnitudes, vec![1.0]);
        assert!(is_symmetric(&code("1")));
    }

    #[test]
    fn symmetry_labels() {
        assert!(is_symmetric(&code("11011")));
        assert!(!is_symmetric(&code("11101")));
    }

    #[test]
    fn gosper_counts() {
        assert_eq!(enumerate_masks(8, 5).len(), 56);
        assert_eq!(enumerate_masks(5, 5), vec![0b11111]);
        assert_eq!(enumerate_masks(20, 10).len(), 184_756);
    }

    #[test]
    fn search_single_candidate() {
        let r = search_codes(&SearchParams::new(8, 8, 1, false)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].code.id_string(), "11111111");
        assert!(r[0].score.min_nondc.abs() < 1e-12);
    }

    #[test]
    fn search_empty_after_filter() {
        let err = search_codes(&SearchParams::new(2, 2, 5, true)).unwrap_err();
        assert!(matches!(err, Error::EmptySearch(_)));
    }

    #[test]
    fn search_rejects_bad_params() {
        assert!(search_codes(&SearchParams::new(4, 0, 1, false)).is_err());
        assert!(search_codes(&SearchParams::new(4, 5, 1, false)).is_err());
        assert!(search_codes(&SearchParams::new(4, 2, 0, false)).is_err());
    }

    #[test]
    fn sampled_search_is_seeded() {
        let mut p = SearchParams::new(24, 12, 5, true);
        p.samples = 2000;
        let a = search_codes(&p).unwrap();
        let b = search_codes(&p).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.code.len() == 24 && r.code.ones_count() == 12));
    }

    #[test]
    fn serde_uses_id_string() {
        let c = code("11100101");
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, "\"11100101\"");
        assert_eq!(serde_json::from_str::<ExposureCode>(&j).unwrap(), c);
    }
}
