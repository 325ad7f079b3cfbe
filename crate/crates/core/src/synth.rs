//! Analytic dynamic scenes and their exact renderings.
//!
//! A scene is a list of primitives that move along
//! `center + velocity t + amplitude sin(2 pi frequency t + phase)`. Spheres and
//! boxes have constant density inside and none outside, so rays through them
//! composite in closed form segment by segment. Gaussian blobs have smooth
//! density and are integrated with a fine midpoint rule. Colors are view
//! independent; where primitives overlap, albedos mix in proportion to density.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Dataset, FrameRecord, Split};
use crate::error::{Error, Result};
use crate::raster::{write_atomic, Image};
use crate::render::{intersect_bbox, Background, Camera, Ray};
use crate::voxels::Bbox;

/// Horizontal field of view of the synthetic cameras, in radians.
pub const DEFAULT_CAMERA_ANGLE_X: f64 = 0.6911112070083618;
pub const DEFAULT_CAMERA_RADIUS: f64 = 4.0;

/// Quadrature steps per bbox diagonal for smooth densities.
const QUADRATURE_STEPS_PER_DIAGONAL: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub amplitude: [f64; 3],
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> [f64; 3] {
        let s = (2.0 * PI * self.frequency * t + self.phase).sin();
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.center[a] + self.velocity[a] * t + self.amplitude[a] * s;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extent: [f64; 3] },
    /// Isotropic Gaussian; `density` is the peak value.
    Blob { std_dev: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub density: f64,
    pub albedo: [f64; 3],
    #[serde(default)]
    pub trajectory: Trajectory,
}

impl Primitive {
    /// Half-size of the region the primitive occupies, per axis.
    fn reach(&self) -> [f64; 3] {
        match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Box { half_extent } => half_extent,
            Shape::Blob { std_dev } => [3.0 * std_dev; 3],
        }
    }

    pub fn density_at(&self, p: [f64; 3], t: f64) -> f64 {
        let c = self.trajectory.at(t);
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        match self.shape {
            Shape::Sphere { radius } => {
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius {
                    self.density
                } else {
                    0.0
                }
            }
            Shape::Box { half_extent } => {
                if (0..3).all(|a| d[a].abs() <= half_extent[a]) {
                    self.density
                } else {
                    0.0
                }
            }
            Shape::Blob { std_dev } => {
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                self.density * (-0.5 * r2 / (std_dev * std_dev)).exp()
            }
        }
    }

    /// Ray parameter interval inside a constant-density primitive.
    fn ray_interval(&self, ray: &Ray, t: f64) -> Option<(f64, f64)> {
        let c = self.trajectory.at(t);
        match self.shape {
            Shape::Sphere { radius } => {
                let oc = [ray.origin[0] - c[0], ray.origin[1] - c[1], ray.origin[2] - c[2]];
                let b = oc[0] * ray.dir[0] + oc[1] * ray.dir[1] + oc[2] * ray.dir[2];
                let cc = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - cc;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { half_extent } => {
                let bb = Bbox {
                    min: [c[0] - half_extent[0], c[1] - half_extent[1], c[2] - half_extent[2]],
                    max: [c[0] + half_extent[0], c[1] + half_extent[1], c[2] + half_extent[2]],
                };
                let unbounded = Ray { t_near: f64::NEG_INFINITY, t_far: f64::INFINITY, ..*ray };
                intersect_bbox(&unbounded, &bb)
            }
            Shape::Blob { .. } => None,
        }
    }
}

fn default_radius() -> f64 {
    DEFAULT_CAMERA_RADIUS
}

fn default_angle() -> f64 {
    DEFAULT_CAMERA_ANGLE_X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Min corner then max corner.
    pub bbox: [f64; 6],
    #[serde(default = "default_background")]
    pub background: String,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    #[serde(default = "default_radius")]
    pub camera_radius: f64,
    #[serde(default = "default_angle")]
    pub camera_angle_x: f64,
    #[serde(default)]
    pub near: Option<f64>,
    #[serde(default)]
    pub far: Option<f64>,
}

fn default_background() -> String {
    "black".into()
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scene(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn bbox(&self) -> Result<Bbox> {
        let b = self.bbox;
        Bbox::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn background_mode(&self) -> Result<Background> {
        match self.background.as_str() {
            "black" => Ok(Background::Black),
            "white" => Ok(Background::White),
            other => Err(Error::Scene(format!("background must be black or white, got `{other}`"))),
        }
    }

    pub fn near_far(&self) -> Result<(f64, f64)> {
        let half_diag = 0.5 * self.bbox()?.diagonal();
        let near = self.near.unwrap_or((self.camera_radius - half_diag).max(0.05));
        let far = self.far.unwrap_or(self.camera_radius + half_diag);
        Ok((near, far))
    }

    pub fn validate(&self) -> Result<()> {
        let bbox = self.bbox()?;
        self.background_mode()?;
        if !(self.camera_radius > 0.0 && self.camera_angle_x > 0.0 && self.camera_angle_x < PI) {
            return Err(Error::Scene("camera_radius and camera_angle_x must be positive".into()));
        }
        let (near, far) = self.near_far()?;
        if !(near > 0.0 && near < far) {
            return Err(Error::Scene(format!("bad clip range {near}..{far}")));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let size_ok = match p.shape {
                Shape::Sphere { radius } => radius > 0.0,
                Shape::Box { half_extent } => half_extent.iter().all(|&h| h > 0.0),
                Shape::Blob { std_dev } => std_dev > 0.0,
            };
            if !size_ok || !(p.density >= 0.0 && p.density.is_finite()) {
                return Err(Error::Scene(format!("primitive {i}: sizes and density must be positive")));
            }
            if p.albedo.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::Scene(format!("primitive {i}: albedo outside [0, 1]")));
            }
            let reach = p.reach();
            for k in 0..=200 {
                let t = k as f64 / 200.0;
                let c = p.trajectory.at(t);
                for a in 0..3 {
                    if c[a] - reach[a] < bbox.min[a] || c[a] + reach[a] > bbox.max[a] {
                        return Err(Error::Scene(format!(
                            "primitive {i} leaves the bounding box at t = {t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn density(&self, p: [f64; 3], t: f64) -> f64 {
        self.primitives.iter().map(|q| q.density_at(p, t)).sum()
    }

    /// Density-weighted albedo; zero where the scene is empty.
    pub fn color(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for q in &self.primitives {
            let d = q.density_at(p, t);
            total += d;
            for a in 0..3 {
                acc[a] += d * q.albedo[a];
            }
        }
        if total > 0.0 {
            acc.map(|v| v / total)
        } else {
            [0.0; 3]
        }
    }

    fn has_smooth_density(&self) -> bool {
        self.primitives.iter().any(|p| matches!(p.shape, Shape::Blob { .. }))
    }

    /// Color of one ray through the scene at time `t`, composited over the background.
    pub fn render_ray(&self, ray: &Ray, t: f64) -> Result<[f64; 3]> {
        let bbox = self.bbox()?;
        let bg = self.background_mode()?.value();
        let Some((t0, t1)) = intersect_bbox(ray, &bbox) else {
            return Ok([bg; 3]);
        };
        let mut cuts = vec![t0, t1];
        for p in &self.primitives {
            if let Some((a, b)) = p.ray_interval(ray, t) {
                cuts.extend([a, b].into_iter().filter(|&s| s > t0 && s < t1));
            }
        }
        cuts.sort_by(f64::total_cmp);
        let fine = self.has_smooth_density().then(|| bbox.diagonal() / QUADRATURE_STEPS_PER_DIAGONAL);

        let mut rgb = [0.0; 3];
        let mut trans = 1.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let n = fine.map_or(1, |h| (len / h).ceil() as usize);
            let h = len / n as f64;
            for k in 0..n {
                let p = ray.at(w[0] + (k as f64 + 0.5) * h);
                let sigma = self.density(p, t);
                if sigma == 0.0 {
                    continue;
                }
                let c = self.color(p, t);
                let alpha = -(-sigma * h).exp_m1();
                for a in 0..3 {
                    rgb[a] += trans * alpha * c[a];
                }
                trans *= (-sigma * h).exp();
            }
        }
        Ok(rgb.map(|v| v + trans * bg))
    }

    pub fn render_image(&self, camera: &Camera, t: f64, near: f64, far: f64) -> Result<Image> {
        camera.validate()?;
        let origin = camera.origin();
        let rows: Vec<Result<Vec<f32>>> = (0..camera.height)
            .into_par_iter()
            .map(|r| {
                let mut row = Vec::with_capacity(camera.width * 3);
                for c in 0..camera.width {
                    let ray = Ray { origin, dir: camera.pixel_direction(r, c), t_near: near, t_far: far };
                    row.extend(self.render_ray(&ray, t)?.map(|v| v as f32));
                }
                Ok(row)
            })
            .collect();
        let mut img = Image::new(camera.width, camera.height);
        img.pixels.clear();
        for row in rows {
            img.pixels.extend(row?);
        }
        Ok(img)
    }
}

/// Camera-to-world pose at `eye` looking at the origin with +z up.
pub fn look_at_origin(eye: [f64; 3]) -> [[f64; 4]; 4] {
    let n = (eye[0] * eye[0] + eye[1] * eye[1] + eye[2] * eye[2]).sqrt();
    let back = [eye[0] / n, eye[1] / n, eye[2] / n];
    let up = if back[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let right = normalize(cross(up, back));
    let true_up = cross(back, right);
    let mut pose = [[0.0; 4]; 4];
    for a in 0..3 {
        pose[a] = [right[a], true_up[a], back[a], eye[a]];
    }
    pose[3] = [0.0, 0.0, 0.0, 1.0];
    pose
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    /// Training cameras; validation and test each get a quarter as many (at least 2).
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SynthOptions {
    pub fn held_out_cameras(&self) -> usize {
        (self.cameras / 4).max(2)
    }
}

/// Camera placements and times for every split. Training times are evenly
/// spaced over `[0, 1]`; held-out frames sit between them.
fn plan(opts: &SynthOptions, radius: f64) -> Vec<(Split, [[f64; 4]; 4], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    let eye = |rng: &mut ChaCha8Rng| {
        let z: f64 = rng.gen_range(-0.8..0.8);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        look_at_origin([radius * r * phi.cos(), radius * r * phi.sin(), radius * z])
    };
    let n = opts.cameras;
    for i in 0..n {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        out.push((Split::Train, eye(&mut rng), t));
    }
    let m = opts.held_out_cameras();
    for split in [Split::Val, Split::Test] {
        let shift = if split == Split::Val { 0.25 } else { 0.75 };
        for i in 0..m {
            out.push((split, eye(&mut rng), (i as f64 + shift) / m as f64));
        }
    }
    out
}

/// Renders the scene from seeded cameras. Images are quantized to 8 bits,
/// exactly as they would read back from disk.
pub fn synth_dataset(spec: &SceneSpec, opts: &SynthOptions) -> Result<Dataset> {
    spec.validate()?;
    if opts.cameras == 0 || opts.width == 0 || opts.height == 0 {
        return Err(Error::InvalidInput("synthesis needs cameras and a nonzero resolution".into()));
    }
    let (near, far) = spec.near_far()?;
    let focal = 0.5 * opts.width as f64 / (0.5 * spec.camera_angle_x).tan();
    let mut ds = Dataset {
        near: Some(near),
        far: Some(far),
        bbox: Some(spec.bbox()?),
        ..Default::default()
    };
    let mut counters = [0usize; 3];
    for (split, pose, time) in plan(opts, spec.camera_radius) {
        let cam = Camera { pose, focal, width: opts.width, height: opts.height };
        let mut image = spec.render_image(&cam, time, near, far)?;
        for v in &mut image.pixels {
            *v = ((v.clamp(0.0, 1.0) * 255.0).round() as u8) as f32 / 255.0;
        }
        let k = split as usize;
        let name = format!("./{}/r_{:03}", split.name(), counters[k]);
        counters[k] += 1;
        let frame = FrameRecord { name, image, pose, focal, time };
        match split {
            Split::Train => ds.train.push(frame),
            Split::Val => ds.val.push(frame),
            Split::Test => ds.test.push(frame),
        }
    }
    Ok(ds)
}

/// Writes `ds` as `transforms_{split}.json` plus PNG frames under `dir`.
pub fn write_dataset(ds: &Dataset, camera_angle_x: f64, background: Background, dir: &Path) -> Result<()> {
    for split in Split::ALL {
        let frames = ds.split(split);
        let mut entries = Vec::with_capacity(frames.len());
        for f in frames {
            let rel = f.name.trim_start_matches("./");
            f.image.save_png(&dir.join(format!("{rel}.png")))?;
            entries.push(json!({
                "file_path": f.name,
                "time": f.time,
                "transform_matrix": f.pose,
            }));
        }
        let mut doc = json!({
            "camera_angle_x": camera_angle_x,
            "background": match background { Background::Black => "black", Background::White => "white" },
            "frames": entries,
        });
        if let Some(n) = ds.near {
            doc["near"] = json!(n);
        }
        if let Some(f) = ds.far {
            doc["far"] = json!(f);
        }
        if let Some(b) = ds.bbox {
            doc["bbox"] = json!([b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]]);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidInput(e.to_string()))?;
        write_atomic(&dir.join(split.file_name()), text.as_bytes())?;
    }
    Ok(())
}

/// Synthesizes a dataset and writes it to `dir`.
pub fn synth_scene(spec: &SceneSpec, opts: &SynthOptions, dir: &Path) -> Result<Dataset> {
    let ds = synth_dataset(spec, opts)?;
    write_dataset(&ds, spec.camera_angle_x, spec.background_mode()?, dir)?;
    Ok(ds)
}
