use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency position encoding of a normalized frame index with the frame's
/// code bit folded into the phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEncoding {
    /// Interleaved `[sin_0, cos_0, sin_1, cos_1, ...]`, length `2l`.
    pub values: Vec<f64>,
    pub b: f64,
    pub l: usize,
}

/// `[sin(b^k·π·t + ĉ·π), cos(b^k·π·t + ĉ·π)]` for `k = 0..l`, with `ĉ = 1 − c`.
///
/// A closed segment (`c = 0`) shifts every phase by π.
pub fn position_encode(t: f64, c: bool, b: f64, l: usize) -> Result<PositionEncoding> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "frame index must lie in [0, 1], got {t}"
        )));
    }
    let c_hat = if c { 0.0 } else { 1.0 };
    let pi = std::f64::consts::PI;
    let mut values = Vec::with_capacity(2 * l);
    for k in 0..l {
        let phase = b.powi(k as i32) * pi * t + c_hat * pi;
        values.push(phase.sin());
        values.push(phase.cos());
    }
    Ok(PositionEncoding { values, b, l })
}
