//! Training objectives and their gradients with respect to rendered quantities.
//!
//! Every squared error is averaged over the three color channels, and every
//! loss is averaged over the rays of the batch.

use crate::error::{Error, Result};
use crate::render::{BatchTape, BatchUpstream};

/// Clamp applied to transmittance before taking logarithms.
pub const ENTROPY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub all_pts: f64,
    pub bg_entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            all_pts: 1e-2,
            bg_entropy: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub photo: f64,
    pub all_pts: f64,
    pub bg_entropy: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sums partial breakdowns computed over disjoint slices of one batch.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.photo += other.photo;
        self.all_pts += other.all_pts;
        self.bg_entropy += other.bg_entropy;
        self.total += other.total;
    }
}

#[inline]
fn sq_err(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)) / 3.0
}

pub fn photometric_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("photometric loss of an empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| sq_err(p, t)).sum::<f64>() / pred.len() as f64)
}

/// Weighted color error of every sample on one ray against the ray's target.
pub fn all_points_loss(weights: &[f64], colors: &[[f64; 3]], target: &[f64; 3]) -> f64 {
    weights.iter().zip(colors).map(|(w, c)| w * sq_err(c, target)).sum()
}

/// Binary entropy of the background weight.
pub fn bg_entropy_loss(t_last: f64) -> f64 {
    let t = t_last.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    -t * t.ln() - (1.0 - t) * (1.0 - t).ln()
}

fn bg_entropy_grad(t_last: f64) -> f64 {
    if t_last <= ENTROPY_CLAMP || t_last >= 1.0 - ENTROPY_CLAMP {
        return 0.0;
    }
    ((1.0 - t_last) / t_last).ln()
}

/// Loss over the rays in `tape` and the matching upstream gradients.
///
/// `batch_rays` is the size of the whole batch the tape belongs to, so that
/// breakdowns and gradients from disjoint slices add up to the full-batch values.
pub fn batch_loss(
    tape: &BatchTape,
    targets: &[[f64; 3]],
    weights: LossWeights,
    batch_rays: usize,
) -> (LossBreakdown, BatchUpstream) {
    let scale = 1.0 / batch_rays as f64;
    let mut up = BatchUpstream::zeros(tape);
    let mut out = LossBreakdown::default();
    for (r, range) in tape.ranges.iter().enumerate() {
        let pred = tape.rgb[r];
        let tgt = targets[r];
        out.photo += sq_err(&pred, &tgt) * scale;
        for k in 0..3 {
            up.d_rgb[r][k] = 2.0 * (pred[k] - tgt[k]) / 3.0 * scale;
        }

        let mut ray_all = 0.0;
        for i in range.clone() {
            let c = tape.colors[i];
            let w = tape.weights[i];
            let e = sq_err(&c, &tgt);
            ray_all += w * e;
            if weights.all_pts != 0.0 {
                up.d_weights[i] = weights.all_pts * e * scale;
                for k in 0..3 {
                    up.d_colors[i][k] = weights.all_pts * w * 2.0 * (c[k] - tgt[k]) / 3.0 * scale;
                }
            }
        }
        out.all_pts += ray_all * scale;

        let t = tape.t_last[r];
        out.bg_entropy += bg_entropy_loss(t) * scale;
        if weights.bg_entropy != 0.0 {
            up.d_t_last[r] = weights.bg_entropy * bg_entropy_grad(t) * scale;
        }
    }
    out.total = out.photo + weights.all_pts * out.all_pts + weights.bg_entropy * out.bg_entropy;
    (out, up)
}
