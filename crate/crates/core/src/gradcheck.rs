//! Finite-difference check of the full training gradient on a tiny model.
//!
//! A seeded model with an 8x8x8 grid is built with every parameter tensor
//! randomized, including the output layers that start at zero in training.
//! Rays are clipped to windows that hold exactly four samples. Rays whose
//! forward pass lies within `margin` of a ReLU kink, a box face, or a lattice
//! plane are redrawn, so that a perturbation of size `h` never crosses a point
//! where the loss is not differentiable.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossWeights};
use crate::mlp::Linear;
use crate::nets::{Model, ModelGrad, NetConfig};
use crate::render::{backward_batch, forward_batch, intersect_bbox, Background, Ray, RayQuery, RenderOptions};
use crate::voxels::{Bbox, VoxelGrid};

pub const GRID_SIZE: usize = 8;
pub const SAMPLES_PER_RAY: usize = 4;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub rays: usize,
    /// Central-difference step.
    pub h: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub margin: f64,
    pub weights: LossWeights,
    pub background: Background,
    pub net: NetConfig,
}

impl GradCheckOptions {
    /// Tiny network (2 channels, hidden width 16, strides 1, 2, 4) with the
    /// encoding settings of `base`.
    pub fn tiny(seed: u64, base: &NetConfig) -> Self {
        let channels = 2;
        Self {
            seed,
            rays: 12,
            h: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            margin: 1e-3,
            weights: LossWeights::default(),
            background: Background::Black,
            net: NetConfig {
                channels,
                hidden: 16,
                time_dim: channels * (2 * base.pe_voxel + 1),
                strides: vec![1, 2, 4],
                ..base.clone()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamError {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<ParamError>,
    pub failures: Vec<ParamError>,
    pub rejected_rays: usize,
    pub loss: f64,
    pub elapsed: Duration,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

/// Names of the flat tensors in the order of [`ModelGrad::tensors`].
pub fn tensor_names(model: &Model) -> Vec<String> {
    let mut out = vec!["voxels".to_string()];
    let nets: [(&str, usize); 5] = [
        ("time_net", model.time_net.layers.len()),
        ("deform_net", model.deform_net.layers.len()),
        ("trunk", model.trunk.layers.len()),
        ("density_head", 0),
        ("color_net", model.color_net.layers.len()),
    ];
    for (name, n) in nets {
        if name == "density_head" {
            out.push("density_head.weight".into());
            out.push("density_head.bias".into());
            continue;
        }
        for i in 0..n {
            out.push(format!("{name}.{i}.weight"));
            out.push(format!("{name}.{i}.bias"));
        }
    }
    out
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Seeded tiny model with all tensors random.
pub fn random_model(opts: &GradCheckOptions) -> Result<Model> {
    let bbox = Bbox::new([-1.0; 3], [1.0; 3])?;
    let n = GRID_SIZE;
    let mut grid = VoxelGrid::new(opts.net.channels, [n; 3], bbox, &opts.net.strides)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for v in grid.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut model = Model::new(opts.net.clone(), grid, opts.seed)?;
    for (mlp, scale) in [(&mut model.time_net, 1.0), (&mut model.deform_net, 0.1)] {
        let last = mlp.layers.last_mut().unwrap();
        *last = Linear::init(last.in_dim, last.out_dim, &mut rng);
        last.weight.iter_mut().for_each(|w| *w *= scale);
        last.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.05..0.05) * scale);
    }
    Ok(model)
}

fn random_ray<R: Rng>(rng: &mut R, bbox: &Bbox, step: f64) -> Option<RayQuery> {
    let mut u = [0.0; 3];
    for a in &mut u {
        *a = rng.gen_range(-1.0..1.0);
    }
    let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(0.1..=1.0).contains(&r) {
        return None;
    }
    let origin = [3.0 * u[0] / r, 3.0 * u[1] / r, 3.0 * u[2] / r];
    let look: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
    let d: [f64; 3] = std::array::from_fn(|a| look[a] - origin[a]);
    let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir = d.map(|v| v / len);
    let probe = Ray { origin, dir, t_near: 0.0, t_far: 10.0 };
    let (t0, t1) = intersect_bbox(&probe, bbox)?;
    let span = (SAMPLES_PER_RAY as f64 - 0.5) * step;
    if t1 - t0 <= span + 2.0 * step {
        return None;
    }
    let t_near = t0 + step + rng.gen_range(0.0..1.0) * (t1 - t0 - span - 2.0 * step);
    Some(RayQuery {
        ray: Ray { origin, dir, t_near, t_far: t_near + span },
        time: rng.gen_range(0.0..1.0),
    })
}

/// Draws `count` rays whose passes keep at least `margin` from every kink.
fn draw_rays(
    model: &Model,
    opts: &GradCheckOptions,
    ropts: &RenderOptions,
) -> Result<(Vec<RayQuery>, Vec<[f64; 3]>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0f4a75);
    let step = ropts.step_size(&model.grid);
    let mut rays = Vec::with_capacity(opts.rays);
    let mut rejected = 0;
    while rays.len() < opts.rays {
        if rejected > 100_000 {
            return Err(Error::State("could not draw rays away from non-differentiable points".into()));
        }
        let Some(q) = random_ray(&mut rng, model.bbox(), step) else {
            continue;
        };
        let tape = forward_batch(model, std::slice::from_ref(&q), ropts);
        if tape.num_samples() != SAMPLES_PER_RAY || tape.kink_margin(model) < opts.margin {
            rejected += 1;
            continue;
        }
        rays.push(q);
    }
    let targets = (0..opts.rays)
        .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
        .collect();
    Ok((rays, targets, rejected))
}

fn total_loss(model: &Model, rays: &[RayQuery], targets: &[[f64; 3]], opts: &GradCheckOptions, ropts: &RenderOptions) -> f64 {
    let tape = forward_batch(model, rays, ropts);
    batch_loss(&tape, targets, opts.weights, rays.len()).0.total
}

pub fn run(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut model = random_model(opts)?;
    let ropts = RenderOptions { alpha_threshold: 0.0, background: opts.background, ..RenderOptions::default() };
    let (rays, targets, rejected_rays) = draw_rays(&model, opts, &ropts)?;

    let tape = forward_batch(&model, &rays, &ropts);
    let (loss, up) = batch_loss(&tape, &targets, opts.weights, rays.len());
    let mut grad = ModelGrad::zeros_like(&model, false);
    backward_batch(&model, &tape, &up, &mut grad);
    let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let names = tensor_names(&model);

    let mut report = GradCheckReport {
        checked: 0,
        worst: None,
        failures: Vec::new(),
        rejected_rays,
        loss: loss.total,
        elapsed: Duration::ZERO,
    };
    for (t, name) in names.iter().enumerate() {
        for i in 0..analytic[t].len() {
            let orig = model.tensors_mut()[t].1[i];
            model.tensors_mut()[t].1[i] = orig + opts.h;
            let plus = total_loss(&model, &rays, &targets, opts, &ropts);
            model.tensors_mut()[t].1[i] = orig - opts.h;
            let minus = total_loss(&model, &rays, &targets, opts, &ropts);
            model.tensors_mut()[t].1[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic[t][i];
            let err = ParamError {
                tensor: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, opts.floor),
            };
            report.checked += 1;
            if err.rel_error >= opts.tolerance || !err.rel_error.is_finite() {
                report.failures.push(err.clone());
            }
            if report.worst.as_ref().is_none_or(|w| err.rel_error > w.rel_error) {
                report.worst = Some(err);
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
