//! Dense learnable feature grids with multi-distance trilinear interpolation.
//!
//! A grid stores `C` feature channels at every vertex of an `Nx x Ny x Nz`
//! lattice spanning an axis-aligned box. Querying at stride `s` interpolates in
//! the sub-lattice `{0, s, 2s, ...}` along each axis; the multi-distance query
//! concatenates the results for every configured stride.
//!
//! Internally features are vertex-major (all channels of one vertex are
//! contiguous). The serialized layout is channel-major with z fastest.

use std::io::{Read, Write};

use half::f16;
use log::warn;

use crate::error::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"TNVX";
const GRID_VERSION: u32 = 1;

/// Out-of-bounds tolerance, relative to the box extent on each axis.
const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bbox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(Error::InvalidInput(format!(
                    "degenerate bbox on axis {a}: [{}, {}]",
                    min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Maps `p` to `[-1, 1]` per axis.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = 2.0 * (p[a] - self.min[a]) / (self.max[a] - self.min[a]) - 1.0;
        }
        out
    }

    /// Grows the box by `frac` of its extent on every side.
    pub fn inflate(&self, frac: f64) -> Self {
        let e = self.extent();
        let mut min = self.min;
        let mut max = self.max;
        for a in 0..3 {
            min[a] -= frac * e[a];
            max[a] += frac * e[a];
        }
        Self { min, max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Full,
    /// Every stored value is exactly representable in IEEE 754 binary16.
    Half,
}

/// Gradient accumulator shaped like a grid's data, with optional per-stride
/// split used for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGrad {
    pub total: Vec<f64>,
    pub per_stride: Option<Vec<Vec<f64>>>,
    touched: bool,
}

impl GridGrad {
    pub fn zeros(len: usize, num_strides: usize, track_strides: bool) -> Self {
        Self {
            total: vec![0.0; len],
            per_stride: track_strides.then(|| vec![vec![0.0; len]; num_strides]),
            touched: false,
        }
    }

    pub fn clear(&mut self) {
        self.total.fill(0.0);
        if let Some(ps) = &mut self.per_stride {
            ps.iter_mut().for_each(|b| b.fill(0.0));
        }
        self.touched = false;
    }

    pub fn tracks_strides(&self) -> bool {
        self.per_stride.is_some()
    }

    pub fn set_track_strides(&mut self, on: bool, num_strides: usize) {
        if on && self.per_stride.is_none() {
            self.per_stride = Some(vec![vec![0.0; self.total.len()]; num_strides]);
        } else if !on {
            self.per_stride = None;
        }
    }

    /// Adds `other` into `self` elementwise.
    pub fn merge(&mut self, other: &GridGrad) {
        add_assign(&mut self.total, &other.total);
        if let (Some(dst), Some(src)) = (&mut self.per_stride, &other.per_stride) {
            for (d, s) in dst.iter_mut().zip(src) {
                add_assign(d, s);
            }
        }
        self.touched |= other.touched;
    }

    pub fn touched(&self) -> bool {
        self.touched
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Per-stride gradient magnitudes, one entry per configured stride.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideGradReport {
    pub strides: Vec<usize>,
    /// L2 norm of each stride's accumulated gradient.
    pub norms: Vec<f64>,
    /// Per-vertex channel-L2 magnitude for each stride, vertex order x-major, z fastest.
    pub fields: Vec<Vec<f64>>,
    pub dims: [usize; 3],
}

/// Cell lookup for one stride: lower corner vertex, fractional offsets and
/// the derivative of the fractions with respect to world coordinates.
#[derive(Debug, Clone, Copy)]
struct Cell {
    base: [usize; 3],
    step: usize,
    frac: [f64; 3],
    dfrac_dp: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    channels: usize,
    dims: [usize; 3],
    bbox: Bbox,
    strides: Vec<usize>,
    data: Vec<f64>,
    pub grad: GridGrad,
    precision: Precision,
}

impl VoxelGrid {
    /// Zero-initialized grid. Every stride must fit in the smallest axis.
    pub fn new(channels: usize, dims: [usize; 3], bbox: Bbox, strides: &[usize]) -> Result<Self> {
        let grid = Self::coarse(channels, dims, bbox, strides)?;
        let min_dim = *dims.iter().min().unwrap();
        if let Some(&s) = strides.iter().find(|&&s| s > min_dim - 1) {
            return Err(Error::InvalidInput(format!(
                "stride {s} exceeds grid size {min_dim} - 1"
            )));
        }
        Ok(grid)
    }

    /// Like [`VoxelGrid::new`] but tolerates strides larger than the lattice;
    /// those are clamped to `min(N) - 1` at query time. Used for the reduced
    /// resolutions early in training.
    pub fn coarse(channels: usize, dims: [usize; 3], bbox: Bbox, strides: &[usize]) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("grid needs at least one channel".into()));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2 vertices per axis, got {dims:?}"
            )));
        }
        if strides.is_empty() || strides[0] == 0 || strides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "strides must be positive and strictly increasing, got {strides:?}"
            )));
        }
        let len = channels * dims[0] * dims[1] * dims[2];
        Ok(Self {
            channels,
            dims,
            bbox,
            strides: strides.to_vec(),
            data: vec![0.0; len],
            grad: GridGrad::zeros(len, strides.len(), false),
            precision: Precision::Full,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bbox(&self) -> &Bbox {
        &self.bbox
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Stride actually used at query time on this lattice.
    pub fn effective_stride(&self, s: usize) -> usize {
        s.min(self.dims.iter().min().unwrap() - 1)
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn num_vertices(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Output width of a multi-distance query.
    pub fn feature_dim(&self) -> usize {
        self.channels * self.strides.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raw vertex-major storage. Callers writing values in half-precision mode
    /// must call [`VoxelGrid::enforce_precision`] afterwards.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Splits into parameter storage and gradient accumulator.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut GridGrad) {
        (&mut self.data, &mut self.grad)
    }

    pub fn vertex_index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn vertex(&self, x: usize, y: usize, z: usize) -> &[f64] {
        let v = self.vertex_index(x, y, z) * self.channels;
        &self.data[v..v + self.channels]
    }

    pub fn set_vertex(&mut self, x: usize, y: usize, z: usize, feat: &[f64]) {
        let v = self.vertex_index(x, y, z) * self.channels;
        self.data[v..v + self.channels].copy_from_slice(feat);
        if self.precision == Precision::Half {
            self.enforce_precision();
        }
    }

    /// World position of a full-lattice vertex.
    pub fn vertex_position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let idx = [x, y, z];
        let e = self.bbox.extent();
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.bbox.min[a] + e[a] * idx[a] as f64 / (self.dims[a] - 1) as f64;
        }
        p
    }

    /// Edge length of one full-resolution cell along each axis.
    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.bbox.extent();
        [
            e[0] / (self.dims[0] - 1) as f64,
            e[1] / (self.dims[1] - 1) as f64,
            e[2] / (self.dims[2] - 1) as f64,
        ]
    }

    pub fn check_bounds(&self, p: [f64; 3]) -> Result<()> {
        let e = self.bbox.extent();
        for a in 0..3 {
            let tol = BOUNDS_TOL * e[a];
            if !p[a].is_finite() || p[a] < self.bbox.min[a] - tol || p[a] > self.bbox.max[a] + tol {
                return Err(Error::OutOfBounds(p));
            }
        }
        Ok(())
    }

    #[inline]
    fn locate(&self, p: [f64; 3], stride: usize) -> Cell {
        let s = self.effective_stride(stride);
        let mut cell = Cell {
            base: [0; 3],
            step: s,
            frac: [0.0; 3],
            dfrac_dp: [0.0; 3],
        };
        for a in 0..3 {
            let n = self.dims[a];
            let ext = self.bbox.max[a] - self.bbox.min[a];
            let scale = (n - 1) as f64 / ext;
            let u = ((p[a] - self.bbox.min[a]) * scale).clamp(0.0, (n - 1) as f64);
            let us = u / s as f64;
            // Sub-lattice vertex count; beyond its last vertex the last cell extends linearly.
            let n_sub = (n - 1) / s + 1;
            let c = (us.floor() as usize).min(n_sub - 2);
            cell.base[a] = c * s;
            cell.frac[a] = us - c as f64;
            cell.dfrac_dp[a] = scale / s as f64;
        }
        cell
    }

    #[inline]
    fn corner_offsets(&self, step: usize) -> [usize; 8] {
        let sx = self.dims[1] * self.dims[2] * step;
        let sy = self.dims[2] * step;
        let sz = step;
        let mut out = [0; 8];
        for (k, o) in out.iter_mut().enumerate() {
            *o = (k >> 2 & 1) * sx + (k >> 1 & 1) * sy + (k & 1) * sz;
        }
        out
    }

    #[inline]
    fn corner_weights(frac: [f64; 3]) -> [f64; 8] {
        let [fx, fy, fz] = frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let mut w = [0.0; 8];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = wx[k >> 2 & 1] * wy[k >> 1 & 1] * wz[k & 1];
        }
        w
    }

    #[inline]
    fn interp_cell(&self, cell: &Cell, out: &mut [f64]) {
        let c = self.channels;
        let base = self.vertex_index(cell.base[0], cell.base[1], cell.base[2]);
        let offs = self.corner_offsets(cell.step);
        let w = Self::corner_weights(cell.frac);
        out.fill(0.0);
        for k in 0..8 {
            let v = (base + offs[k]) * c;
            let feat = &self.data[v..v + c];
            for (o, f) in out.iter_mut().zip(feat) {
                *o += w[k] * f;
            }
        }
    }

    /// Multi-distance query without bounds checking; `p` is clamped into the box.
    /// `out` has length `channels * strides.len()`.
    #[inline]
    pub fn interpolate_into(&self, p: [f64; 3], out: &mut [f64]) {
        let c = self.channels;
        for (m, &s) in self.strides.iter().enumerate() {
            let cell = self.locate(p, s);
            self.interp_cell(&cell, &mut out[m * c..(m + 1) * c]);
        }
    }

    /// Trilinear query of the sub-lattice at stride `s` (1 = full grid).
    pub fn trilinear_at_stride(&self, p: [f64; 3], s: usize) -> Result<Vec<f64>> {
        self.check_bounds(p)?;
        if s == 0 {
            return Err(Error::InvalidInput("stride must be positive".into()));
        }
        let mut out = vec![0.0; self.channels];
        self.interp_cell(&self.locate(p, s), &mut out);
        Ok(out)
    }

    pub fn trilinear_interpolate(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        self.trilinear_at_stride(p, 1)
    }

    pub fn multi_distance_interpolate(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        self.check_bounds(p)?;
        let mut out = vec![0.0; self.feature_dim()];
        self.interpolate_into(p, &mut out);
        Ok(out)
    }

    /// Reverse of [`VoxelGrid::interpolate_into`]: scatters `upstream` into `grad`
    /// and returns the gradient with respect to `p`.
    #[inline]
    pub fn scatter_backward(&self, p: [f64; 3], upstream: &[f64], grad: &mut GridGrad) -> [f64; 3] {
        let c = self.channels;
        let mut dp = [0.0; 3];
        for (m, &s) in self.strides.iter().enumerate() {
            let up = &upstream[m * c..(m + 1) * c];
            if up.iter().all(|&u| u == 0.0) {
                continue;
            }
            grad.touched = true;
            let cell = self.locate(p, s);
            let base = self.vertex_index(cell.base[0], cell.base[1], cell.base[2]);
            let offs = self.corner_offsets(cell.step);
            let w = Self::corner_weights(cell.frac);
            let [fx, fy, fz] = cell.frac;
            let wx = [1.0 - fx, fx];
            let wy = [1.0 - fy, fy];
            let wz = [1.0 - fz, fz];
            let sign = [-1.0, 1.0];
            let mut dfrac = [0.0; 3];
            for k in 0..8 {
                let (ix, iy, iz) = (k >> 2 & 1, k >> 1 & 1, k & 1);
                let v = (base + offs[k]) * c;
                let mut dot = 0.0;
                for ch in 0..c {
                    grad.total[v + ch] += w[k] * up[ch];
                    dot += self.data[v + ch] * up[ch];
                }
                if let Some(ps) = &mut grad.per_stride {
                    let buf = &mut ps[m];
                    for ch in 0..c {
                        buf[v + ch] += w[k] * up[ch];
                    }
                }
                dfrac[0] += dot * sign[ix] * wy[iy] * wz[iz];
                dfrac[1] += dot * wx[ix] * sign[iy] * wz[iz];
                dfrac[2] += dot * wx[ix] * wy[iy] * sign[iz];
            }
            for a in 0..3 {
                dp[a] += dfrac[a] * cell.dfrac_dp[a];
            }
        }
        dp
    }

    /// Checked reverse pass into this grid's own accumulator.
    pub fn backward_interpolate(&mut self, p: [f64; 3], upstream: &[f64]) -> Result<[f64; 3]> {
        self.check_bounds(p)?;
        if upstream.len() != self.feature_dim() {
            return Err(Error::InvalidInput(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                self.feature_dim()
            )));
        }
        let mut grad = std::mem::replace(&mut self.grad, GridGrad::zeros(0, 0, false));
        let dp = self.scatter_backward(p, upstream, &mut grad);
        self.grad = grad;
        Ok(dp)
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
    }

    pub fn set_track_stride_grads(&mut self, on: bool) {
        let n = self.strides.len();
        self.grad.set_track_strides(on, n);
    }

    /// Per-stride gradient norms and magnitude fields for diagnostics.
    pub fn grad_magnitude_per_stride(&self) -> Result<StrideGradReport> {
        let per = match &self.grad.per_stride {
            Some(p) if self.grad.touched => p,
            Some(_) => {
                return Err(Error::State(
                    "no backward pass has populated the per-stride gradients".into(),
                ))
            }
            None => {
                return Err(Error::State(
                    "per-stride gradient accumulation is not enabled".into(),
                ))
            }
        };
        let c = self.channels;
        let norms = per
            .iter()
            .map(|b| b.iter().map(|g| g * g).sum::<f64>().sqrt())
            .collect();
        let fields = per
            .iter()
            .map(|b| {
                b.chunks_exact(c)
                    .map(|v| v.iter().map(|g| g * g).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        Ok(StrideGradReport {
            strides: self.strides.clone(),
            norms,
            fields,
            dims: self.dims,
        })
    }

    /// Resamples onto a new lattice over the same box. Each new vertex takes
    /// the value of the old trilinear interpolant at its position.
    pub fn resample(&self, new_dims: [usize; 3]) -> Result<VoxelGrid> {
        let mut out = VoxelGrid::coarse(self.channels, new_dims, self.bbox, &self.strides)?;
        let c = self.channels;
        let mut feat = vec![0.0; c];
        for x in 0..new_dims[0] {
            for y in 0..new_dims[1] {
                for z in 0..new_dims[2] {
                    let p = out.vertex_position(x, y, z);
                    self.interp_cell(&self.locate(p, 1), &mut feat);
                    let v = out.vertex_index(x, y, z) * c;
                    out.data[v..v + c].copy_from_slice(&feat);
                }
            }
        }
        out.precision = self.precision;
        out.enforce_precision();
        out.grad = GridGrad::zeros(out.data.len(), self.strides.len(), self.grad.tracks_strides());
        Ok(out)
    }

    /// Multiplies every axis by `factor`, capped at `cap`.
    pub fn upscale(&self, factor: usize, cap: [usize; 3]) -> Result<VoxelGrid> {
        if factor == 0 {
            return Err(Error::InvalidInput("upscale factor must be positive".into()));
        }
        let mut dims = self.dims;
        for a in 0..3 {
            dims[a] = (dims[a] * factor).min(cap[a]).max(self.dims[a]);
        }
        self.resample(dims)
    }

    /// Switches storage to binary16. Values beyond the half range saturate.
    pub fn quantize_half(&mut self) {
        self.precision = Precision::Half;
        self.enforce_precision();
    }

    /// Rounds every stored value through the active storage precision.
    pub fn enforce_precision(&mut self) {
        if self.precision != Precision::Half {
            return;
        }
        let mut saturated = 0usize;
        for v in &mut self.data {
            let (h, sat) = to_half(*v);
            saturated += sat as usize;
            *v = h.to_f64();
        }
        if saturated > 0 {
            warn!("{saturated} voxel values exceeded the half-precision range and were saturated");
        }
    }

    /// Serialized size in bytes.
    pub fn serialized_len(&self) -> usize {
        header_len(self.strides.len()) + self.data.len() * self.precision_bytes()
    }

    fn precision_bytes(&self) -> usize {
        match self.precision {
            Precision::Full => 8,
            Precision::Half => 2,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        for n in self.dims {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        let tag = match self.precision {
            Precision::Half => DType::F16,
            Precision::Full => DType::F64,
        };
        w.write_all(&(tag as u32).to_le_bytes())?;
        for v in self.bbox.min.iter().chain(&self.bbox.max) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.strides.len() as u32).to_le_bytes())?;
        for &s in &self.strides {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        let c = self.channels;
        let nv = self.num_vertices();
        let mut buf = Vec::with_capacity(nv * self.precision_bytes());
        for ch in 0..c {
            buf.clear();
            for v in 0..nv {
                let x = self.data[v * c + ch];
                match tag {
                    DType::F16 => buf.extend_from_slice(&to_half(x).0.to_le_bytes()),
                    _ => buf.extend_from_slice(&x.to_le_bytes()),
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<VoxelGrid> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Checkpoint(format!("bad grid magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != GRID_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported grid version {version} (expected {GRID_VERSION})"
            )));
        }
        let channels = read_u32(r)? as usize;
        let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let tag = DType::from_tag(read_u32(r)?)?;
        let mut bb = [0.0; 6];
        for v in &mut bb {
            *v = read_f64(r)?;
        }
        let nstrides = read_u32(r)? as usize;
        if nstrides > 64 {
            return Err(Error::Checkpoint(format!("implausible stride count {nstrides}")));
        }
        let strides = (0..nstrides)
            .map(|_| read_u32(r).map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let bbox = Bbox::new([bb[0], bb[1], bb[2]], [bb[3], bb[4], bb[5]])
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut grid = VoxelGrid::coarse(channels, dims, bbox, &strides)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let nv = grid.num_vertices();
        let width = tag.bytes();
        let mut buf = vec![0u8; nv * width];
        for ch in 0..channels {
            read_exact(r, &mut buf)?;
            for (v, bytes) in buf.chunks_exact(width).enumerate() {
                grid.data[v * channels + ch] = match tag {
                    DType::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
                    DType::F16 => f16::from_le_bytes(bytes.try_into().unwrap()).to_f64(),
                    DType::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
                };
            }
        }
        if tag == DType::F16 {
            grid.precision = Precision::Half;
        }
        Ok(grid)
    }
}

/// Serialized header size for a grid with `num_strides` strides.
pub const fn header_len(num_strides: usize) -> usize {
    4 + 4 + 4 + 12 + 4 + 48 + 4 + 4 * num_strides
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
enum DType {
    F32 = 0,
    F16 = 1,
    F64 = 2,
}

impl DType {
    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F16),
            2 => Ok(DType::F64),
            t => Err(Error::Checkpoint(format!("unknown grid dtype tag {t}"))),
        }
    }

    fn bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::F64 => 8,
        }
    }
}

/// Round-to-nearest-even binary16 conversion with saturation at the finite range.
pub fn to_half(x: f64) -> (f16, bool) {
    if x.abs() > f16::MAX.to_f64() {
        let sat = if x.is_nan() {
            f16::ZERO
        } else if x > 0.0 {
            f16::MAX
        } else {
            f16::MIN
        };
        return (sat, true);
    }
    (f16::from_f64(x), false)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated file".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
