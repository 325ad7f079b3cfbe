//! The optimization loop.
//!
//! Each iteration draws `batch_rays` pixels uniformly with replacement from
//! every training frame, renders them, and takes one Adam step. The batch is
//! split into one contiguous slice per worker; per-slice gradients are summed
//! in slice order, so results are bitwise reproducible for a fixed worker
//! count. Randomness for iteration `k` comes from its own stream of the seeded
//! generator, so a resumed run needs nothing but the iteration counter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{Dataset, FrameRecord};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossBreakdown};
use crate::metrics::{psnr, MetricReport};
use crate::nets::{Model, ModelGrad, ParamGroupId};
use crate::optim::{lr_schedule, Adam};
use crate::raster::{write_atomic, Image};
use crate::render::{backward_batch, forward_batch, render_image, Ray, RayQuery};
use crate::voxels::{Bbox, GridGrad, Precision, StrideGradReport, VoxelGrid};

pub const LOSS_CSV_HEADER: &str = "iter,photo,all_pts,bg_entropy,total,lr_voxels,psnr_eval";

/// Rays rendered per batched pass when rendering whole images.
pub const RENDER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub iter: u64,
    pub loss: LossBreakdown,
    pub lr_voxels: f64,
    pub psnr_eval: Option<f64>,
}

impl LossRow {
    fn to_csv(&self) -> String {
        let l = &self.loss;
        let eval = self.psnr_eval.map(|p| format!("{p:?}")).unwrap_or_default();
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{}",
            self.iter, l.photo, l.all_pts, l.bg_entropy, l.total, self.lr_voxels, eval
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(Self {
            iter: f[0].parse().ok()?,
            loss: LossBreakdown {
                photo: f[1].parse().ok()?,
                all_pts: f[2].parse().ok()?,
                bg_entropy: f[3].parse().ok()?,
                total: f[4].parse().ok()?,
            },
            lr_voxels: f[5].parse().ok()?,
            psnr_eval: if f[6].is_empty() { None } else { Some(f[6].parse().ok()?) },
        })
    }
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

/// Every training pixel, addressable by one flat index.
struct PixelPool {
    /// Cumulative pixel counts; frame `i` owns `[offsets[i], offsets[i + 1])`.
    offsets: Vec<usize>,
}

impl PixelPool {
    fn new(frames: &[FrameRecord]) -> Self {
        let mut offsets = vec![0];
        for f in frames {
            offsets.push(offsets.last().unwrap() + f.image.width * f.image.height);
        }
        Self { offsets }
    }

    fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn locate(&self, idx: usize) -> (usize, usize) {
        let frame = self.offsets.partition_point(|&o| o <= idx) - 1;
        (frame, idx - self.offsets[frame])
    }
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed iterations.
    pub iteration: u64,
    pub log: Vec<LossRow>,
    pub near: f64,
    pub far: f64,
    data: &'a Dataset,
    pool: PixelPool,
    workers: usize,
    grads: Vec<ModelGrad>,
    diagnostics: Option<StrideGradReport>,
}

/// Fresh model for `config` over `bbox`, at the run's initial resolution.
pub fn initial_model(config: &TrainConfig, bbox: Bbox) -> Result<Model> {
    let grid = VoxelGrid::coarse(config.net.channels, config.initial_resolution(), bbox, &config.net.strides)?;
    Model::new(config.net.clone(), grid, config.seed)
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let (near, far) = data.clip_range(config.near, config.far);
        let bbox = data.scene_bbox(config.bbox, near, far)?;
        info!(
            "scene box [{:.3}, {:.3}, {:.3}] .. [{:.3}, {:.3}, {:.3}], clip {near}..{far}",
            bbox.min[0], bbox.min[1], bbox.min[2], bbox.max[0], bbox.max[1], bbox.max[2]
        );
        let mut model = initial_model(&config, bbox)?;
        let adam = Adam::new(&mut model, config.lrs());
        Ok(Self::assemble(config, model, adam, 0, data, near, far))
    }

    /// Continues a run from a checkpoint. Without stored optimizer state the
    /// moments restart from zero and the run will not match an uninterrupted one.
    pub fn resume(ckpt: Checkpoint, data: &'a Dataset) -> Result<Self> {
        let Checkpoint { iteration, config, mut model, optimizer, .. } = ckpt;
        let adam = match optimizer {
            Some(a) => a,
            None => {
                warn!("checkpoint has no optimizer state; moments restart from zero");
                Adam::new(&mut model, config.lrs())
            }
        };
        let (near, far) = data.clip_range(config.near, config.far);
        Ok(Self::assemble(config, model, adam, iteration, data, near, far))
    }

    fn assemble(
        config: TrainConfig,
        model: Model,
        adam: Adam,
        iteration: u64,
        data: &'a Dataset,
        near: f64,
        far: f64,
    ) -> Self {
        let workers = rayon::current_num_threads().max(1);
        let grads = (0..workers).map(|_| ModelGrad::zeros_like(&model, false)).collect();
        Self {
            pool: PixelPool::new(&data.train),
            config,
            model,
            adam,
            iteration,
            log: Vec::new(),
            near,
            far,
            data,
            workers,
            grads,
            diagnostics: None,
        }
    }

    fn apply_schedule(&mut self, iter: u64) -> Result<()> {
        let dims = self.config.resolution_at(iter);
        if dims != self.model.grid.dims() {
            let before = self.model.grid.dims();
            self.model.grid = self.model.grid.resample(dims)?;
            self.adam.reset_group(ParamGroupId::Voxels, &mut self.model);
            self.grads = (0..self.workers).map(|_| ModelGrad::zeros_like(&self.model, false)).collect();
            info!("iteration {iter}: grid {before:?} -> {dims:?}");
        }
        let half = self.config.half_precision_last > 0 && iter >= self.config.half_precision_start();
        if half && self.model.grid.precision() == Precision::Full {
            self.model.grid.quantize_half();
            info!("iteration {iter}: voxel storage switched to half precision");
        }
        Ok(())
    }

    fn wants_diagnostics(&self, iter: u64) -> bool {
        (iter + 1).is_multiple_of(self.config.checkpoint_every) || iter + 1 == self.config.total_iters
    }

    fn sample_batch(&self, iter: u64) -> (Vec<RayQuery>, Vec<[f64; 3]>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iter);
        let n = self.config.batch_rays;
        let mut queries = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut picks = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = rng.gen_range(0..self.pool.len());
            let (fi, px) = self.pool.locate(idx);
            let frame = &self.data.train[fi];
            let cam = frame.camera();
            let (row, col) = (px / cam.width, px % cam.width);
            queries.push(RayQuery {
                ray: Ray { origin: cam.origin(), dir: cam.pixel_direction(row, col), t_near: self.near, t_far: self.far },
                time: frame.time,
            });
            let p = frame.image.pixel(row, col);
            targets.push([p[0] as f64, p[1] as f64, p[2] as f64]);
            picks.push(idx);
        }
        (queries, targets, picks)
    }

    /// Runs one iteration and returns its loss.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let iter = self.iteration;
        self.apply_schedule(iter)?;
        let track = self.wants_diagnostics(iter);
        for g in &mut self.grads {
            g.grid.set_track_strides(track, self.model.grid.strides().len());
            g.clear();
        }

        let (queries, targets, picks) = self.sample_batch(iter);
        let per = queries.len().div_ceil(self.workers);
        let model = &self.model;
        let opts = self.config.render_options();
        let weights = self.config.loss_weights();
        let batch = queries.len();
        let parts: Vec<LossBreakdown> = self
            .grads
            .par_iter_mut()
            .zip(queries.par_chunks(per.max(1)).zip(targets.par_chunks(per.max(1))))
            .map(|(grad, (q, t))| {
                let tape = forward_batch(model, q, &opts);
                let (loss, up) = batch_loss(&tape, t, weights, batch);
                backward_batch(model, &tape, &up, grad);
                loss
            })
            .collect();
        let mut loss = LossBreakdown::default();
        for p in &parts {
            loss.accumulate(p);
        }
        loss.total = loss.photo + weights.all_pts * loss.all_pts + weights.bg_entropy * loss.bg_entropy;

        if !loss.total.is_finite() {
            return Err(self.nan_abort(iter, &loss, &picks));
        }

        let (head, rest) = self.grads.split_first_mut().unwrap();
        for g in rest.iter() {
            head.merge(g);
        }
        self.adam.step(&mut self.model, head, iter, self.config.total_iters)?;
        if track {
            self.model.grid.grad = head.grid.clone();
            self.diagnostics = self.model.grid.grad_magnitude_per_stride().ok();
            self.model.grid.grad = GridGrad::zeros(0, 0, false);
        }

        self.iteration += 1;
        self.log.push(LossRow {
            iter,
            loss,
            lr_voxels: lr_schedule(self.config.lr_voxels, iter, self.config.total_iters)?,
            psnr_eval: None,
        });
        Ok(loss)
    }

    fn nan_abort(&self, iter: u64, loss: &LossBreakdown, picks: &[usize]) -> Error {
        let detail = format!(
            "non-finite loss at iteration {iter} (photo {}, all_pts {}, bg {})",
            loss.photo, loss.all_pts, loss.bg_entropy
        );
        let pixels: Vec<_> = picks
            .iter()
            .map(|&i| {
                let (f, px) = self.pool.locate(i);
                json!({ "frame": self.data.train[f].name, "pixel": px, "time": self.data.train[f].time })
            })
            .collect();
        let dump = json!({ "iteration": iter, "detail": detail, "grid_dims": self.model.grid.dims(), "batch": pixels });
        warn!("{detail}");
        log::error!("offending batch: {dump}");
        Error::Numerical { group: "loss".into(), detail }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: Some(self.adam.clone()),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Mean PSNR over (up to `eval_frames` of) the validation frames.
    pub fn eval_psnr(&self) -> Result<Option<f64>> {
        let frames = &self.data.val;
        if frames.is_empty() {
            return Ok(None);
        }
        let n = match self.config.eval_frames {
            0 => frames.len(),
            k => k.min(frames.len()),
        };
        let mut total = 0.0;
        for f in &frames[..n] {
            let img = self.render_frame(f)?;
            total += psnr(&img, &f.image)?;
        }
        Ok(Some(total / n as f64))
    }

    pub fn render_frame(&self, frame: &FrameRecord) -> Result<Image> {
        render_image(
            &self.model,
            &frame.camera(),
            frame.time,
            self.near,
            self.far,
            &self.config.render_options(),
            RENDER_CHUNK,
        )
    }

    /// Trains to `total_iters`. With `out_dir`, writes `loss.csv`, periodic
    /// `ckpt_NNNNNN.tnv` checkpoints, and `final.tnv`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            self.log = read_prior_log(&dir.join("loss.csv"), self.iteration);
        }
        let total = self.config.total_iters;
        while self.iteration < total {
            let loss = self.step()?;
            let done = self.iteration;
            if self.config.eval_every > 0 && done.is_multiple_of(self.config.eval_every) {
                let p = self.eval_psnr()?;
                self.log.last_mut().unwrap().psnr_eval = p;
            }
            if done.is_multiple_of(100) || done == total {
                info!(
                    "iter {done}/{total}: loss {:.6} (photo {:.6}), grid {:?}",
                    loss.total,
                    loss.photo,
                    self.model.grid.dims()
                );
            }
            if let Some(dir) = out_dir {
                if done.is_multiple_of(self.config.checkpoint_every) || done == total {
                    self.save_outputs(dir, done.is_multiple_of(self.config.checkpoint_every))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_outputs(dir, false)?;
        }
        Ok(())
    }

    fn save_outputs(&self, dir: &Path, periodic: bool) -> Result<()> {
        let ckpt = self.checkpoint();
        let bytes = ckpt.to_bytes()?;
        if periodic {
            write_atomic(&checkpoint_path(dir, self.iteration), &bytes)?;
        }
        write_atomic(&dir.join("final.tnv"), &bytes)?;
        write_atomic(&dir.join("loss.csv"), loss_csv(&self.log).as_bytes())
    }
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.tnv"))
}

fn read_prior_log(path: &Path, before: u64) -> Vec<LossRow> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(LossRow::parse)
        .filter(|r| r.iter < before)
        .collect()
}

/// Renders every frame and scores it against its image.
pub fn evaluate(model: &Model, config: &TrainConfig, frames: &[FrameRecord], near: f64, far: f64) -> Result<MetricReport> {
    let opts = config.render_options();
    let renders = frames
        .iter()
        .map(|f| render_image(model, &f.camera(), f.time, near, far, &opts, RENDER_CHUNK))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::evaluate(frames.iter().zip(&renders).map(|(f, r)| (f.name.clone(), r, &f.image)))
}
