//! Rays, point sampling, the per-point pipeline, and differentiable compositing.
//!
//! A batch of rays is pushed through the model in one pass so every network
//! layer runs as a single matrix product: time embedding per ray, then per
//! sample deformation, multi-distance voxel query, encoding, density, and
//! (for samples above the opacity threshold) color.

use std::ops::Range;

use rayon::prelude::*;

use crate::encoding::{encode_backward, encode_into};
use crate::error::{Error, Result};
use crate::mlp::{sigmoid, softplus, MlpTape};
use crate::nets::{Model, ModelGrad};
use crate::raster::Image;
use crate::voxels::{Bbox, VoxelGrid};

/// Guard for axis-parallel rays in the slab test.
const SLAB_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit direction.
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], dir: [f64; 3], t_near: f64, t_far: f64) -> Result<Self> {
        let n = norm(dir);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("ray direction has norm {n}")));
        }
        if !(t_near < t_far) {
            return Err(Error::InvalidInput(format!("t_near {t_near} >= t_far {t_far}")));
        }
        Ok(Self { origin, dir, t_near, t_far })
    }

    #[inline]
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

#[inline]
fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Pinhole camera with a camera-to-world pose; the camera looks down -z with y up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: [[f64; 4]; 4],
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let r = &self.pose;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if !det.is_finite() || det.abs() < 1e-8 {
            return Err(Error::InvalidInput(format!("singular camera pose (det {det})")));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::InvalidInput(format!("bad focal length {}", self.focal)));
        }
        Ok(())
    }

    pub fn generate_ray(&self, row: usize, col: usize, near: f64, far: f64) -> Result<Ray> {
        self.validate()?;
        if row >= self.height || col >= self.width {
            return Err(Error::InvalidInput(format!(
                "pixel ({row}, {col}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ray::new(self.origin(), self.pixel_direction(row, col), near, far)
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Unit world-space direction through the center of pixel `(row, col)`.
    #[inline]
    pub fn pixel_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let cx = (col as f64 + 0.5 - self.width as f64 / 2.0) / self.focal;
        let cy = -(row as f64 + 0.5 - self.height as f64 / 2.0) / self.focal;
        let cam = [cx, cy, -1.0];
        let p = &self.pose;
        let mut d = [0.0; 3];
        for (a, da) in d.iter_mut().enumerate() {
            *da = p[a][0] * cam[0] + p[a][1] * cam[1] + p[a][2] * cam[2];
        }
        let n = norm(d);
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

/// Slab intersection of the ray's `[t_near, t_far]` window with a box.
pub fn intersect_bbox(ray: &Ray, bbox: &Bbox) -> Option<(f64, f64)> {
    let mut t0 = ray.t_near;
    let mut t1 = ray.t_far;
    for a in 0..3 {
        let d = ray.dir[a];
        let o = ray.origin[a];
        if d.abs() < SLAB_EPS {
            if o < bbox.min[a] || o > bbox.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut ta, mut tb) = ((bbox.min[a] - o) * inv, (bbox.max[a] - o) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

/// One sample along a ray: distance `t` of its position and its interval length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub delta: f64,
}

/// Evenly spaced samples across the ray's span inside `bbox`.
///
/// The span is cut into `ceil(len / step)` intervals of length `step`, the
/// last one possibly shorter; each sample sits at the midpoint of its interval.
pub fn sample_points(ray: &Ray, bbox: &Bbox, step: f64) -> Vec<SamplePoint> {
    let Some((t0, t1)) = intersect_bbox(ray, bbox) else {
        return Vec::new();
    };
    let len = t1 - t0;
    let n = ((len / step) - 1e-9).ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let delta = if i + 1 == n { len - (n - 1) as f64 * step } else { step };
            SamplePoint {
                t: t0 + i as f64 * step + 0.5 * delta,
                delta,
            }
        })
        .collect()
}

/// Result of compositing one ray's densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub alphas: Vec<f64>,
    /// `T_i`, transmittance reaching sample `i`.
    pub trans: Vec<f64>,
    pub weights: Vec<f64>,
    /// `T_{N+1}`, the background weight.
    pub t_last: f64,
}

/// Opacities, transmittances, and weights for one ray.
pub fn composite(sigmas: &[f64], deltas: &[f64]) -> Composite {
    let n = sigmas.len();
    let mut out = Composite {
        alphas: Vec::with_capacity(n),
        trans: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        t_last: 1.0,
    };
    let mut t = 1.0;
    for (&s, &d) in sigmas.iter().zip(deltas) {
        let tau = s * d;
        let alpha = -(-tau).exp_m1();
        out.alphas.push(alpha);
        out.trans.push(t);
        out.weights.push(t * alpha);
        t *= (-tau).exp();
    }
    out.t_last = t;
    out
}

/// Gradient of a scalar loss with respect to each `sigma_i * delta_i`, given
/// its gradients with respect to the weights and to `T_{N+1}`.
pub fn composite_backward(comp: &Composite, d_weights: &[f64], d_t_last: f64) -> Vec<f64> {
    let n = comp.weights.len();
    let mut d_tau = vec![0.0; n];
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        let t_next = if i + 1 < n { comp.trans[i + 1] } else { comp.t_last };
        d_tau[i] = d_weights[i] * t_next - suffix - d_t_last * comp.t_last;
        suffix += d_weights[i] * comp.weights[i];
    }
    d_tau
}

/// Samples whose color branch is evaluated. A zero threshold keeps everything.
pub fn density_filter(alphas: &[f64], threshold: f64) -> Result<Vec<bool>> {
    check_threshold(threshold)?;
    Ok(alphas.iter().map(|&a| keeps(a, threshold)).collect())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!("alpha threshold {threshold} outside [0, 1)")));
    }
    Ok(())
}

#[inline]
fn keeps(alpha: f64, threshold: f64) -> bool {
    threshold == 0.0 || alpha > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Black,
    White,
}

impl Background {
    pub fn value(self) -> f64 {
        match self {
            Background::Black => 0.0,
            Background::White => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Sample spacing as a fraction of the smallest voxel edge.
    pub step_ratio: f64,
    pub alpha_threshold: f64,
    pub background: Background,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            step_ratio: 0.5,
            alpha_threshold: 1e-4,
            background: Background::Black,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.alpha_threshold)?;
        if !(self.step_ratio > 0.0 && self.step_ratio.is_finite()) {
            return Err(Error::Config(format!("step_ratio {} must be positive", self.step_ratio)));
        }
        Ok(())
    }

    pub fn step_size(&self, grid: &VoxelGrid) -> f64 {
        let v = grid.voxel_size();
        self.step_ratio * v[0].min(v[1]).min(v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayQuery {
    pub ray: Ray,
    pub time: f64,
}

/// Everything the reverse pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchTape {
    pub ranges: Vec<Range<usize>>,
    pub positions: Vec<[f64; 3]>,
    pub deltas: Vec<f64>,
    pub deformed: Vec<[f64; 3]>,
    /// Per axis, whether the deformed coordinate was clamped to the box.
    clamped: Vec<[bool; 3]>,
    time_tape: MlpTape,
    deform_tape: MlpTape,
    trunk_tape: MlpTape,
    pub raw_sigma: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub trans: Vec<f64>,
    pub weights: Vec<f64>,
    pub t_last: Vec<f64>,
    /// Sample indices whose color branch ran, in order.
    pub color_rows: Vec<usize>,
    color_tape: MlpTape,
    /// Zero for filtered samples.
    pub colors: Vec<[f64; 3]>,
    pub rgb: Vec<[f64; 3]>,
    background: Background,
}

impl BatchTape {
    pub fn num_rays(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_samples(&self) -> usize {
        self.positions.len()
    }

    /// Distance of this pass from the nearest point where the loss is not
    /// differentiable: smallest |pre-activation| of any ReLU, and smallest
    /// world-space distance of a deformed point from a box face or from a
    /// lattice plane of any stride.
    pub fn kink_margin(&self, model: &Model) -> f64 {
        let mut margin = f64::INFINITY;
        for (net, tape) in [
            (&model.time_net, &self.time_tape),
            (&model.deform_net, &self.deform_tape),
            (&model.trunk, &self.trunk_tape),
            (&model.color_net, &self.color_tape),
        ] {
            if tape.rows > 0 {
                for z in net.pre_activations(&tape.acts[0], tape.rows) {
                    margin = margin.min(z.abs());
                }
            }
        }
        let grid = &model.grid;
        let bbox = grid.bbox();
        let size = grid.voxel_size();
        for (i, p) in self.positions.iter().enumerate() {
            let off = &self.deform_tape.output()[i * 3..i * 3 + 3];
            for a in 0..3 {
                let v = p[a] + off[a];
                margin = margin.min((v - bbox.min[a]).abs()).min((bbox.max[a] - v).abs());
                let u = (self.deformed[i][a] - bbox.min[a]) / size[a];
                for &s in grid.strides() {
                    let s = grid.effective_stride(s) as f64;
                    let d = (u / s - (u / s).round()).abs() * s * size[a];
                    margin = margin.min(d);
                }
            }
        }
        margin
    }
}

/// Upstream gradients for [`backward_batch`].
#[derive(Debug, Clone)]
pub struct BatchUpstream {
    pub d_rgb: Vec<[f64; 3]>,
    pub d_t_last: Vec<f64>,
    /// Per-sample gradient w.r.t. compositing weights.
    pub d_weights: Vec<f64>,
    /// Per-sample gradient w.r.t. sample colors.
    pub d_colors: Vec<[f64; 3]>,
}

impl BatchUpstream {
    pub fn zeros(tape: &BatchTape) -> Self {
        Self {
            d_rgb: vec![[0.0; 3]; tape.num_rays()],
            d_t_last: vec![0.0; tape.num_rays()],
            d_weights: vec![0.0; tape.num_samples()],
            d_colors: vec![[0.0; 3]; tape.num_samples()],
        }
    }
}

pub fn forward_batch(model: &Model, queries: &[RayQuery], opts: &RenderOptions) -> BatchTape {
    let cfg = &model.config;
    let bbox = *model.bbox();
    let step = opts.step_size(&model.grid);
    let rays = queries.len();

    let mut ranges = Vec::with_capacity(rays);
    let mut positions = Vec::new();
    let mut deltas = Vec::new();
    for q in queries {
        let start = positions.len();
        for s in sample_points(&q.ray, &bbox, step) {
            positions.push(q.ray.at(s.t));
            deltas.push(s.delta);
        }
        ranges.push(start..positions.len());
    }
    let n = positions.len();

    let time_pe = cfg.time_pe();
    let tin_dim = time_pe.output_dim(1);
    let mut tin = vec![0.0; rays * tin_dim];
    for (q, row) in queries.iter().zip(tin.chunks_exact_mut(tin_dim)) {
        encode_into(&[q.time], time_pe, row);
    }
    let time_tape = model.time_net.forward(tin, rays);
    let ct = cfg.time_dim;
    let te = time_tape.output();

    let xyz_pe = cfg.xyz_pe();
    let xd = cfg.xyz_dim();
    let din = xd + ct;
    let mut dinput = vec![0.0; n * din];
    for (r, range) in ranges.iter().enumerate() {
        let te_r = &te[r * ct..(r + 1) * ct];
        for i in range.clone() {
            let row = &mut dinput[i * din..(i + 1) * din];
            encode_into(&bbox.normalize(positions[i]), xyz_pe, &mut row[..xd]);
            row[xd..].copy_from_slice(te_r);
        }
    }
    let deform_tape = model.deform_net.forward(dinput, n);
    let mut deformed = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for (p, off) in positions.iter().zip(deform_tape.output().chunks_exact(3)) {
        let mut q = [0.0; 3];
        let mut c = [false; 3];
        for a in 0..3 {
            let v = p[a] + off[a];
            q[a] = v.clamp(bbox.min[a], bbox.max[a]);
            c[a] = q[a] != v;
        }
        deformed.push(q);
        clamped.push(c);
    }

    let voxel_pe = cfg.voxel_pe();
    let vpe = cfg.strides.len() * cfg.encoded_voxel_dim();
    let tw = cfg.trunk_in_dim();
    let mut tinput = vec![0.0; n * tw];
    let mut feat = vec![0.0; cfg.feature_dim()];
    for (r, range) in ranges.iter().enumerate() {
        let te_r = &te[r * ct..(r + 1) * ct];
        for i in range.clone() {
            model.grid.interpolate_into(deformed[i], &mut feat);
            let row = &mut tinput[i * tw..(i + 1) * tw];
            encode_into(&feat, voxel_pe, &mut row[..vpe]);
            row[vpe..vpe + ct].copy_from_slice(te_r);
            row[vpe + ct..].copy_from_slice(&deform_tape.acts[0][i * din..i * din + xd]);
        }
    }
    let trunk_tape = model.trunk.forward(tinput, n);
    let h = trunk_tape.output();
    let ch = cfg.hidden;

    let mut raw_sigma = vec![0.0; n];
    model.density_head.forward_batch(h, n, &mut raw_sigma);
    let sigmas: Vec<f64> = raw_sigma.iter().map(|&r| softplus(r + cfg.sigma_shift)).collect();

    let mut alphas = vec![0.0; n];
    let mut trans = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut t_last = vec![1.0; rays];
    let mut color_rows = Vec::new();
    for (r, range) in ranges.iter().enumerate() {
        let comp = composite(&sigmas[range.clone()], &deltas[range.clone()]);
        alphas[range.clone()].copy_from_slice(&comp.alphas);
        trans[range.clone()].copy_from_slice(&comp.trans);
        weights[range.clone()].copy_from_slice(&comp.weights);
        t_last[r] = comp.t_last;
        color_rows.extend(range.clone().filter(|&i| keeps(alphas[i], opts.alpha_threshold)));
    }

    let dir_pe = cfg.dir_pe();
    let dd = cfg.dir_dim();
    let cw = ch + dd;
    let mut dir_enc = vec![0.0; rays * dd];
    for (q, row) in queries.iter().zip(dir_enc.chunks_exact_mut(dd)) {
        encode_into(&q.ray.dir, dir_pe, row);
    }
    let ray_of = ray_index(&ranges, n);
    let nc = color_rows.len();
    let mut cinput = vec![0.0; nc * cw];
    for (k, &i) in color_rows.iter().enumerate() {
        let row = &mut cinput[k * cw..(k + 1) * cw];
        row[..ch].copy_from_slice(&h[i * ch..(i + 1) * ch]);
        let r = ray_of[i];
        row[ch..].copy_from_slice(&dir_enc[r * dd..(r + 1) * dd]);
    }
    let color_tape = model.color_net.forward(cinput, nc);
    let mut colors = vec![[0.0; 3]; n];
    for (k, &i) in color_rows.iter().enumerate() {
        let l = &color_tape.output()[k * 3..k * 3 + 3];
        colors[i] = [sigmoid(l[0]), sigmoid(l[1]), sigmoid(l[2])];
    }

    let bg = opts.background.value();
    let rgb = ranges
        .iter()
        .enumerate()
        .map(|(r, range)| {
            let mut c = [0.0; 3];
            for i in range.clone() {
                for a in 0..3 {
                    c[a] += weights[i] * colors[i][a];
                }
            }
            if bg != 0.0 {
                for v in &mut c {
                    *v += t_last[r] * bg;
                }
            }
            c
        })
        .collect();

    BatchTape {
        ranges,
        positions,
        deltas,
        deformed,
        clamped,
        time_tape,
        deform_tape,
        trunk_tape,
        raw_sigma,
        sigmas,
        alphas,
        trans,
        weights,
        t_last,
        color_rows,
        color_tape,
        colors,
        rgb,
        background: opts.background,
    }
}

fn ray_index(ranges: &[Range<usize>], n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for (r, range) in ranges.iter().enumerate() {
        out[range.clone()].fill(r);
    }
    out
}

/// Exact reverse pass of [`forward_batch`], accumulating into `grad`.
pub fn backward_batch(model: &Model, tape: &BatchTape, up: &BatchUpstream, grad: &mut ModelGrad) {
    let cfg = &model.config;
    let n = tape.num_samples();
    let rays = tape.num_rays();
    let ch = cfg.hidden;
    let ct = cfg.time_dim;

    let mut d_raw = vec![0.0; n];
    let mut d_color = vec![[0.0; 3]; n];
    for (r, range) in tape.ranges.iter().enumerate() {
        let drgb = up.d_rgb[r];
        let mut g_t = up.d_t_last[r];
        if tape.background == Background::White {
            g_t += drgb[0] + drgb[1] + drgb[2];
        }
        let t_last = tape.t_last[r];
        let mut suffix = 0.0;
        for i in range.clone().rev() {
            let c = tape.colors[i];
            let gw = drgb[0] * c[0] + drgb[1] * c[1] + drgb[2] * c[2] + up.d_weights[i];
            let t_next = if i + 1 < range.end { tape.trans[i + 1] } else { t_last };
            let d_tau = gw * t_next - suffix - g_t * t_last;
            suffix += gw * tape.weights[i];
            let d_sigma = d_tau * tape.deltas[i];
            d_raw[i] = d_sigma * sigmoid(tape.raw_sigma[i] + cfg.sigma_shift);
            let w = tape.weights[i];
            let dc = up.d_colors[i];
            d_color[i] = [drgb[0] * w + dc[0], drgb[1] * w + dc[1], drgb[2] * w + dc[2]];
        }
    }

    let h = tape.trunk_tape.output();
    let mut dh = vec![0.0; n * ch];
    model.density_head.accumulate_grads(h, &d_raw, n, &mut grad.density_head);
    model.density_head.input_grad(&d_raw, n, 0..ch, &mut dh);

    let nc = tape.color_rows.len();
    if nc > 0 {
        let mut d_logits = vec![0.0; nc * 3];
        for (k, &i) in tape.color_rows.iter().enumerate() {
            let c = tape.colors[i];
            for a in 0..3 {
                d_logits[k * 3 + a] = d_color[i][a] * c[a] * (1.0 - c[a]);
            }
        }
        let dh_c = model.color_net.backward(&tape.color_tape, d_logits, &mut grad.color_net, 0..ch);
        for (k, &i) in tape.color_rows.iter().enumerate() {
            for (d, s) in dh[i * ch..(i + 1) * ch].iter_mut().zip(&dh_c[k * ch..(k + 1) * ch]) {
                *d += s;
            }
        }
    }

    let vpe = cfg.strides.len() * cfg.encoded_voxel_dim();
    let tw = cfg.trunk_in_dim();
    let dcols = vpe + ct;
    let dtrunk = model.trunk.backward(&tape.trunk_tape, dh, &mut grad.trunk, 0..dcols);

    let voxel_pe = cfg.voxel_pe();
    let tinput = &tape.trunk_tape.acts[0];
    let mut d_te = vec![0.0; rays * ct];
    let mut d_off = vec![0.0; n * 3];
    let mut dv = vec![0.0; cfg.feature_dim()];
    for (r, range) in tape.ranges.iter().enumerate() {
        let dte_r = &mut d_te[r * ct..(r + 1) * ct];
        for i in range.clone() {
            let drow = &dtrunk[i * dcols..(i + 1) * dcols];
            for (a, b) in dte_r.iter_mut().zip(&drow[vpe..]) {
                *a += b;
            }
            dv.fill(0.0);
            encode_backward(&tinput[i * tw..i * tw + vpe], voxel_pe, &drow[..vpe], &mut dv);
            let dp = model.grid.scatter_backward(tape.deformed[i], &dv, &mut grad.grid);
            for a in 0..3 {
                if !tape.clamped[i][a] {
                    d_off[i * 3 + a] = dp[a];
                }
            }
        }
    }

    let xd = cfg.xyz_dim();
    let dd = model.deform_net.backward(&tape.deform_tape, d_off, &mut grad.deform_net, xd..xd + ct);
    for (r, range) in tape.ranges.iter().enumerate() {
        let dte_r = &mut d_te[r * ct..(r + 1) * ct];
        for i in range.clone() {
            for (a, b) in dte_r.iter_mut().zip(&dd[i * ct..(i + 1) * ct]) {
                *a += b;
            }
        }
    }
    model.time_net.backward(&tape.time_tape, d_te, &mut grad.time_net, 0..0);
}

/// Per-sample record returned by [`render_ray`].
#[derive(Debug, Clone, PartialEq)]
pub struct RaySample {
    pub position: [f64; 3],
    pub deformed: [f64; 3],
    pub delta: f64,
    pub sigma: f64,
    pub color: [f64; 3],
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    /// `T_{N+1}`.
    pub t_last: f64,
    pub samples: Vec<RaySample>,
}

pub fn render_ray(model: &Model, ray: &Ray, time: f64, opts: &RenderOptions) -> Result<RayRender> {
    opts.validate()?;
    if !(0.0..=1.0).contains(&time) {
        return Err(Error::InvalidInput(format!("time {time} outside [0, 1]")));
    }
    let tape = forward_batch(model, &[RayQuery { ray: *ray, time }], opts);
    let samples = (0..tape.num_samples())
        .map(|i| RaySample {
            position: tape.positions[i],
            deformed: tape.deformed[i],
            delta: tape.deltas[i],
            sigma: tape.sigmas[i],
            color: tape.colors[i],
            alpha: tape.alphas[i],
            weight: tape.weights[i],
        })
        .collect();
    Ok(RayRender {
        rgb: tape.rgb[0],
        t_last: tape.t_last[0],
        samples,
    })
}

/// Renders every pixel, `chunk_size` rays per batched pass. Output does not
/// depend on the chunk size.
pub fn render_image(
    model: &Model,
    camera: &Camera,
    time: f64,
    near: f64,
    far: f64,
    opts: &RenderOptions,
    chunk_size: usize,
) -> Result<Image> {
    camera.validate()?;
    opts.validate()?;
    let chunk = chunk_size.max(1);
    let origin = camera.origin();
    let pixels: Vec<usize> = (0..camera.width * camera.height).collect();
    let colors: Vec<Vec<[f64; 3]>> = pixels
        .par_chunks(chunk)
        .map(|idx| {
            let queries: Vec<RayQuery> = idx
                .iter()
                .map(|&p| RayQuery {
                    ray: Ray {
                        origin,
                        dir: camera.pixel_direction(p / camera.width, p % camera.width),
                        t_near: near,
                        t_far: far,
                    },
                    time,
                })
                .collect();
            forward_batch(model, &queries, opts).rgb
        })
        .collect();
    let mut img = Image::new(camera.width, camera.height);
    for (px, c) in img.pixels.chunks_exact_mut(3).zip(colors.iter().flatten()) {
        px[0] = c[0] as f32;
        px[1] = c[1] as f32;
        px[2] = c[2] as f32;
    }
    Ok(img)
}
