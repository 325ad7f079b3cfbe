//! Run configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. A `preset = tiny|small|base` line, if
//! present, is applied before every other key regardless of its position.
//! Lists are comma-separated; `upscale_iters = none` disables upscaling.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::nets::NetConfig;
use crate::render::{Background, RenderOptions};
use crate::voxels::Bbox;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Final vertices per axis.
    pub resolution: [usize; 3],
    pub net: NetConfig,
    pub total_iters: u64,
    pub batch_rays: usize,
    pub lr_voxels: f64,
    pub lr_deform: f64,
    pub lr_other: f64,
    pub lambda_all: f64,
    pub lambda_bg: f64,
    pub upscale_iters: Vec<u64>,
    pub half_precision_last: u64,
    pub alpha_threshold: f64,
    pub background: Background,
    pub step_ratio: f64,
    pub seed: u64,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub bbox: Option<Bbox>,
    pub checkpoint_every: u64,
    /// Evaluate on the validation split every this many iterations; 0 disables.
    pub eval_every: u64,
    /// Validation frames used by periodic evaluation; 0 means all.
    pub eval_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl TrainConfig {
    pub fn small() -> Self {
        Self {
            resolution: [100; 3],
            net: NetConfig::small(),
            total_iters: 20_000,
            batch_rays: 4096,
            lr_voxels: 8e-2,
            lr_deform: 6e-4,
            lr_other: 8e-4,
            lambda_all: 1e-2,
            lambda_bg: 1e-3,
            upscale_iters: vec![2000, 4000, 6000],
            half_precision_last: 1000,
            alpha_threshold: 1e-4,
            background: Background::Black,
            step_ratio: 0.5,
            seed: 0,
            near: None,
            far: None,
            bbox: None,
            checkpoint_every: 1000,
            eval_every: 0,
            eval_frames: 0,
        }
    }

    pub fn base() -> Self {
        Self {
            resolution: [160; 3],
            net: NetConfig::base(),
            ..Self::small()
        }
    }

    /// Desk-scale run: 32^3 grid, hidden width 32, 2000 iterations.
    pub fn tiny() -> Self {
        Self {
            resolution: [32; 3],
            net: NetConfig { hidden: 32, ..NetConfig::small() },
            total_iters: 2000,
            batch_rays: 1024,
            upscale_iters: vec![300, 600],
            half_precision_last: 200,
            checkpoint_every: 500,
            ..Self::small()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            all_pts: self.lambda_all,
            bg_entropy: self.lambda_bg,
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            step_ratio: self.step_ratio,
            alpha_threshold: self.alpha_threshold,
            background: self.background,
        }
    }

    pub fn lrs(&self) -> [f64; 3] {
        [self.lr_voxels, self.lr_deform, self.lr_other]
    }

    /// Grid size at the start of training: the final size halved once per
    /// scheduled upscale, rounded up.
    pub fn initial_resolution(&self) -> [usize; 3] {
        let div = 1usize << self.upscale_iters.len().min(16);
        self.resolution.map(|n| n.div_ceil(div).max(2))
    }

    /// Grid size in effect at iteration `iter`.
    pub fn resolution_at(&self, iter: u64) -> [usize; 3] {
        let done = self.upscale_iters.iter().filter(|&&u| u <= iter).count();
        let mut dims = self.initial_resolution();
        for _ in 0..done {
            for a in 0..3 {
                dims[a] = (dims[a] * 2).min(self.resolution[a]);
            }
        }
        dims
    }

    /// First iteration that runs with half-precision voxel storage.
    pub fn half_precision_start(&self) -> u64 {
        self.total_iters.saturating_sub(self.half_precision_last)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.resolution.iter().any(|&n| n < 2) {
            return bad(format!("resolution {:?} needs at least 2 vertices per axis", self.resolution));
        }
        if let Some(&s) = self.net.strides.iter().find(|&&s| s > self.resolution.iter().min().unwrap() - 1) {
            return bad(format!("stride {s} does not fit resolution {:?}", self.resolution));
        }
        if self.batch_rays == 0 {
            return bad("batch_rays must be positive".into());
        }
        for (name, v) in [("lr_voxels", self.lr_voxels), ("lr_deform", self.lr_deform), ("lr_other", self.lr_other)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lambda_all", self.lambda_all), ("lambda_bg", self.lambda_bg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        if self.upscale_iters.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("upscale_iters {:?} must be strictly increasing", self.upscale_iters));
        }
        if self.total_iters > 0 && self.upscale_iters.iter().any(|&u| u == 0 || u >= self.total_iters) {
            return bad(format!(
                "upscale_iters {:?} must lie strictly between 0 and total_iters {}",
                self.upscale_iters, self.total_iters
            ));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if let (Some(n), Some(f)) = (self.near, self.far) {
            if !(n < f) {
                return bad(format!("near {n} must be below far {f}"));
            }
        }
        self.render_options().validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            None => Self::small(),
            Some((_, v)) if v == "tiny" => Self::tiny(),
            Some((_, v)) if v == "small" => Self::small(),
            Some((_, v)) if v == "base" => Self::base(),
            Some((_, v)) => return Err(Error::Config(format!("unknown preset `{v}`"))),
        };
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.net;
        match key {
            "resolution" => {
                let v: Vec<usize> = list(key, value)?;
                self.resolution = match v[..] {
                    [r] => [r; 3],
                    [x, y, z] => [x, y, z],
                    _ => return Err(Error::Config(format!("resolution takes 1 or 3 values, got `{value}`"))),
                };
            }
            "channels" => n.channels = num(key, value)?,
            "hidden" => n.hidden = num(key, value)?,
            "time_dim" => n.time_dim = num(key, value)?,
            "pe_xyz" => n.pe_xyz = num(key, value)?,
            "pe_dir" => n.pe_dir = num(key, value)?,
            "pe_time" => n.pe_time = num(key, value)?,
            "pe_voxel" => n.pe_voxel = num(key, value)?,
            "strides" => n.strides = list(key, value)?,
            "sigma_shift" => n.sigma_shift = num(key, value)?,
            "total_iters" => self.total_iters = num(key, value)?,
            "batch_rays" => self.batch_rays = num(key, value)?,
            "lr_voxels" => self.lr_voxels = num(key, value)?,
            "lr_deform" => self.lr_deform = num(key, value)?,
            "lr_other" => self.lr_other = num(key, value)?,
            "lambda_all" => self.lambda_all = num(key, value)?,
            "lambda_bg" => self.lambda_bg = num(key, value)?,
            "upscale_iters" => {
                self.upscale_iters = if value == "none" || value.is_empty() { Vec::new() } else { list(key, value)? }
            }
            "half_precision_last" => self.half_precision_last = num(key, value)?,
            "alpha_threshold" => self.alpha_threshold = num(key, value)?,
            "background" => {
                self.background = match value {
                    "black" => Background::Black,
                    "white" => Background::White,
                    _ => return Err(Error::Config(format!("background must be black or white, got `{value}`"))),
                }
            }
            "step_ratio" => self.step_ratio = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "near" => self.near = Some(num(key, value)?),
            "far" => self.far = Some(num(key, value)?),
            "bbox" => {
                let v: Vec<f64> = list(key, value)?;
                if v.len() != 6 {
                    return Err(Error::Config(format!("bbox takes 6 values, got {}", v.len())));
                }
                self.bbox = Some(
                    Bbox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
                        .map_err(|e| Error::Config(format!("bbox: {e}")))?,
                );
            }
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_frames" => self.eval_frames = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key in a fixed order; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        let r = self.resolution;
        let _ = writeln!(s, "resolution = {},{},{}", r[0], r[1], r[2]);
        let _ = writeln!(s, "channels = {}", n.channels);
        let _ = writeln!(s, "hidden = {}", n.hidden);
        let _ = writeln!(s, "time_dim = {}", n.time_dim);
        let _ = writeln!(s, "pe_xyz = {}", n.pe_xyz);
        let _ = writeln!(s, "pe_dir = {}", n.pe_dir);
        let _ = writeln!(s, "pe_time = {}", n.pe_time);
        let _ = writeln!(s, "pe_voxel = {}", n.pe_voxel);
        let _ = writeln!(s, "strides = {}", join(&n.strides.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(s, "sigma_shift = {:?}", n.sigma_shift);
        let _ = writeln!(s, "total_iters = {}", self.total_iters);
        let _ = writeln!(s, "batch_rays = {}", self.batch_rays);
        let _ = writeln!(s, "lr_voxels = {:?}", self.lr_voxels);
        let _ = writeln!(s, "lr_deform = {:?}", self.lr_deform);
        let _ = writeln!(s, "lr_other = {:?}", self.lr_other);
        let _ = writeln!(s, "lambda_all = {:?}", self.lambda_all);
        let _ = writeln!(s, "lambda_bg = {:?}", self.lambda_bg);
        let ups = if self.upscale_iters.is_empty() {
            "none".to_string()
        } else {
            join(&self.upscale_iters.iter().map(|v| v.to_string()).collect::<Vec<_>>())
        };
        let _ = writeln!(s, "upscale_iters = {ups}");
        let _ = writeln!(s, "half_precision_last = {}", self.half_precision_last);
        let _ = writeln!(s, "alpha_threshold = {:?}", self.alpha_threshold);
        let bg = match self.background {
            Background::Black => "black",
            Background::White => "white",
        };
        let _ = writeln!(s, "background = {bg}");
        let _ = writeln!(s, "step_ratio = {:?}", self.step_ratio);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(v) = self.near {
            let _ = writeln!(s, "near = {v:?}");
        }
        if let Some(v) = self.far {
            let _ = writeln!(s, "far = {v:?}");
        }
        if let Some(b) = self.bbox {
            let v: Vec<String> = b.min.iter().chain(&b.max).map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "bbox = {}", join(&v));
        }
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_frames = {}", self.eval_frames);
        s
    }

    /// Hex SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}
