//! Sinusoidal encodings used as conditioning channels.
//!
//! A scalar `s` maps to a [`BINS`]-dimensional vector whose dimensions
//! `(2i, 2i + 1)` hold `(sin(s w_i), cos(s w_i))` with
//! `w_i = 10000^(-2i / BINS)`. `BINS` is odd, so the last dimension carries
//! only `sin(s w_64)`.

use crate::error::Result;
use crate::geometry::Position;
use crate::network::Tensor1d;
use crate::spectra::Anthropometry;
use crate::{ANTHRO_FEATURES, BINS};

/// Positions are divided by this many meters before encoding.
pub const POSITION_SCALE_M: f64 = 2.0;

const FREQUENCY_BASE: f64 = 10_000.0;

/// Angular frequency of dimension pair `i`.
pub fn frequency(i: usize) -> f64 {
    FREQUENCY_BASE.powf(-2.0 * i as f64 / BINS as f64)
}

pub fn sin_encode(s: f64) -> [f64; BINS] {
    let mut out = [0.0; BINS];
    sin_encode_into(s, &mut out);
    out
}

pub(crate) fn sin_encode_into(s: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), BINS);
    for (i, pair) in out.chunks_mut(2).enumerate() {
        let (sin, cos) = (s * frequency(i)).sin_cos();
        pair[0] = sin;
        if let Some(c) = pair.get_mut(1) {
            *c = cos;
        }
    }
}

/// Analytic derivative of [`sin_encode`] with respect to `s`.
pub fn sin_encode_derivative(s: f64) -> [f64; BINS] {
    let mut out = [0.0; BINS];
    for (i, pair) in out.chunks_mut(2).enumerate() {
        let w = frequency(i);
        let (sin, cos) = (s * w).sin_cos();
        pair[0] = w * cos;
        if let Some(c) = pair.get_mut(1) {
            *c = -w * sin;
        }
    }
    out
}

fn encode_rows(values: &[f64]) -> Tensor1d {
    let mut t = Tensor1d::zeros(values.len(), BINS);
    for (row, &v) in values.iter().enumerate() {
        sin_encode_into(v, t.row_mut(row));
    }
    t
}

/// Three rows: `x`, `y`, `z`, each scaled by `1 / POSITION_SCALE_M`.
pub fn encode_position(v: &Position) -> Tensor1d {
    encode_rows(&v.scale(1.0 / POSITION_SCALE_M).to_array())
}

/// Rows for several positions, stacked in order.
pub fn encode_positions(vs: &[Position]) -> Tensor1d {
    let values: Vec<f64> = vs
        .iter()
        .flat_map(|v| v.scale(1.0 / POSITION_SCALE_M).to_array())
        .collect();
    encode_rows(&values)
}

/// One row per z-scored feature.
pub fn encode_anthro(a: &Anthropometry) -> Result<Tensor1d> {
    let z = a.normalized()?;
    Ok(encode_anthro_z(&z))
}

pub fn encode_anthro_z(z: &[f64; ANTHRO_FEATURES]) -> Tensor1d {
    encode_rows(z)
}
