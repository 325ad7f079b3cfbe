//! Frequency positional encoding.
//!
//! Each input channel `x` expands to `(x, sin(x), cos(x), sin(2x), cos(2x), ...,
//! sin(2^{L-1} x), cos(2^{L-1} x))`, with the raw term present only when
//! `include_input` is set. Channel blocks are concatenated in input order.

use crate::error::{Error, Result};

/// Frequency count used for point coordinates.
pub const XYZ_FREQS: usize = 10;
/// Frequency count used for view directions.
pub const DIR_FREQS: usize = 4;
/// Frequency count used for time stamps.
pub const TIME_FREQS: usize = 8;
/// Frequency count used for interpolated voxel features.
pub const VOXEL_FREQS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeSpec {
    pub num_freqs: usize,
    pub include_input: bool,
}

impl PeSpec {
    pub const fn new(num_freqs: usize) -> Self {
        Self {
            num_freqs,
            include_input: true,
        }
    }

    /// Width of one encoded channel block.
    pub const fn block_dim(&self) -> usize {
        2 * self.num_freqs + self.include_input as usize
    }

    pub const fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.block_dim()
    }
}

/// Checked encoding of a single vector.
pub fn positional_encode(x: &[f64], spec: PeSpec) -> Result<Vec<f64>> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "positional encoding of non-finite value {bad}"
        )));
    }
    let mut out = vec![0.0; spec.output_dim(x.len())];
    encode_into(x, spec, &mut out);
    Ok(out)
}

/// Unchecked encoding into a caller-provided slice of length `spec.output_dim(x.len())`.
#[inline]
pub fn encode_into(x: &[f64], spec: PeSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.output_dim(x.len()));
    let block = spec.block_dim();
    if block == 0 {
        return;
    }
    for (&v, chunk) in x.iter().zip(out.chunks_exact_mut(block)) {
        let mut i = 0;
        if spec.include_input {
            chunk[0] = v;
            i = 1;
        }
        let mut freq = 1.0;
        for _ in 0..spec.num_freqs {
            let (s, c) = (freq * v).sin_cos();
            chunk[i] = s;
            chunk[i + 1] = c;
            i += 2;
            freq *= 2.0;
        }
    }
}

/// Reverse-mode pass. `encoded` is the forward output for `x`; the input
/// gradient is accumulated into `dx`.
#[inline]
pub fn encode_backward(encoded: &[f64], spec: PeSpec, upstream: &[f64], dx: &mut [f64]) {
    let block = spec.block_dim();
    if block == 0 {
        return;
    }
    for ((enc, up), d) in encoded
        .chunks_exact(block)
        .zip(upstream.chunks_exact(block))
        .zip(dx.iter_mut())
    {
        let mut acc = 0.0;
        let mut i = 0;
        if spec.include_input {
            acc += up[0];
            i = 1;
        }
        let mut freq = 1.0;
        for _ in 0..spec.num_freqs {
            // d sin(fx)/dx = f cos(fx), d cos(fx)/dx = -f sin(fx)
            acc += freq * (up[i] * enc[i + 1] - up[i + 1] * enc[i]);
            i += 2;
            freq *= 2.0;
        }
        *d += acc;
    }
}
