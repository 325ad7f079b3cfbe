//! Posed, time-stamped image collections in the `transforms_{split}.json` layout.
//!
//! Each split file holds `camera_angle_x` and a `frames` list whose entries
//! carry `file_path` (relative, `.png` appended when no extension is given),
//! a 4x4 camera-to-world `transform_matrix`, and an optional `time` in
//! `[0, 1]`. Optional top-level `near`, `far`, and `bbox` (6 numbers, min then
//! max) describe the capture volume.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{DatasetError, Error, Result};
use crate::raster::Image;
use crate::render::{Background, Camera};
use crate::voxels::Bbox;

/// Clip range used when neither the config nor the dataset gives one.
pub const DEFAULT_NEAR: f64 = 2.0;
pub const DEFAULT_FAR: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("transforms_{}.json", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub name: String,
    pub image: Image,
    pub pose: [[f64; 4]; 4],
    pub focal: f64,
    pub time: f64,
}

impl FrameRecord {
    pub fn camera(&self) -> Camera {
        Camera {
            pose: self.pose,
            focal: self.focal,
            width: self.image.width,
            height: self.image.height,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<FrameRecord>,
    pub val: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub bbox: Option<Bbox>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[FrameRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<FrameRecord> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Clip range: explicit overrides first, then the dataset's own, then defaults.
    pub fn clip_range(&self, near: Option<f64>, far: Option<f64>) -> (f64, f64) {
        (
            near.or(self.near).unwrap_or(DEFAULT_NEAR),
            far.or(self.far).unwrap_or(DEFAULT_FAR),
        )
    }

    /// Scene box: explicit override, then the dataset's own, then the union of
    /// training frusta between `near` and `far`, grown by 5%.
    pub fn scene_bbox(&self, explicit: Option<Bbox>, near: f64, far: f64) -> Result<Bbox> {
        if let Some(b) = explicit.or(self.bbox) {
            return Ok(b);
        }
        frustum_bbox(&self.train, near, far)
    }
}

/// Axis-aligned box around the image-corner rays of every frame at `near` and `far`.
pub fn frustum_bbox(frames: &[FrameRecord], near: f64, far: f64) -> Result<Bbox> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to bound".into()));
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for f in frames {
        let cam = f.camera();
        let o = cam.origin();
        let (w, h) = (cam.width, cam.height);
        for (r, c) in [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)] {
            let d = cam.pixel_direction(r, c);
            for t in [near, far] {
                for a in 0..3 {
                    let v = o[a] + t * d[a];
                    min[a] = min[a].min(v);
                    max[a] = max[a].max(v);
                }
            }
        }
    }
    Ok(Bbox::new(min, max)?.inflate(0.025))
}

/// Loads every split present under `dir`; at least one must exist.
pub fn load_dnerf(dir: &Path, background: Background) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let mut found = false;
    for split in Split::ALL {
        let file = dir.join(split.file_name());
        if !file.exists() {
            continue;
        }
        found = true;
        let meta = read_split(&file)?;
        for (key, slot) in [("near", &mut ds.near), ("far", &mut ds.far)] {
            if slot.is_none() {
                *slot = meta.get(key).and_then(Value::as_f64);
            }
        }
        if ds.bbox.is_none() {
            if let Some(v) = meta.get("bbox") {
                ds.bbox = Some(parse_bbox(&file, v)?);
            }
        }
        *ds.split_mut(split) = load_frames(dir, &file, &meta, background)?;
    }
    if !found {
        return Err(DatasetError::NoSplits(dir.to_path_buf()).into());
    }
    Ok(ds)
}

fn read_split(file: &Path) -> Result<Value> {
    let text = fs::read_to_string(file).map_err(|e| DatasetError::Io {
        file: file.to_path_buf(),
        detail: e.to_string(),
    })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        file: file.to_path_buf(),
        detail: e.to_string(),
    })?;
    if !v.is_object() {
        return Err(DatasetError::Json {
            file: file.to_path_buf(),
            detail: "top level is not an object".into(),
        }
        .into());
    }
    Ok(v)
}

fn parse_bbox(file: &Path, v: &Value) -> Result<Bbox> {
    let bad = |detail: String| DatasetError::Json { file: file.to_path_buf(), detail };
    let nums: Vec<f64> = v
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    if nums.len() != 6 {
        return Err(bad("bbox must be 6 numbers".into()).into());
    }
    Bbox::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]])
        .map_err(|e| bad(format!("bbox: {e}")).into())
}

struct FrameMeta {
    name: String,
    path: PathBuf,
    pose: [[f64; 4]; 4],
    time: f64,
}

fn load_frames(dir: &Path, file: &Path, meta: &Value, bg: Background) -> Result<Vec<FrameRecord>> {
    let missing = |frame: &str, key: &str| DatasetError::MissingKey {
        file: file.to_path_buf(),
        frame: frame.to_string(),
        key: key.to_string(),
    };
    let angle = meta
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| missing("(header)", "camera_angle_x"))?;
    let frames = meta
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| missing("(header)", "frames"))?;

    let mut metas = Vec::with_capacity(frames.len());
    for (i, fr) in frames.iter().enumerate() {
        let rel = fr.get("file_path").and_then(Value::as_str);
        let name = rel.map_or_else(|| format!("#{i}"), str::to_string);
        let rel = rel.ok_or_else(|| missing(&name, "file_path"))?;
        let pose_v = fr.get("transform_matrix").ok_or_else(|| missing(&name, "transform_matrix"))?;
        let pose = parse_pose(pose_v).map_err(|detail| DatasetError::BadPose {
            file: file.to_path_buf(),
            frame: name.clone(),
            detail,
        })?;
        let time = match fr.get("time").and_then(Value::as_f64) {
            Some(t) => t.clamp(0.0, 1.0),
            None => {
                warn!("{}: frame {name} has no time, using 0", file.display());
                0.0
            }
        };
        let mut path = dir.join(rel);
        if path.extension().is_none() {
            path.set_extension("png");
        }
        metas.push(FrameMeta { name, path, pose, time });
    }

    let images: Vec<Result<Image>> = metas.par_iter().map(|m| read_image(&m.name, &m.path, bg)).collect();
    let mut out = Vec::with_capacity(metas.len());
    for (m, img) in metas.into_iter().zip(images) {
        let image = img?;
        if let Some(first) = out.first().map(|f: &FrameRecord| &f.image) {
            if (first.width, first.height) != (image.width, image.height) {
                return Err(DatasetError::ImageSize {
                    frame: m.name,
                    got_w: image.width as u32,
                    got_h: image.height as u32,
                    want_w: first.width as u32,
                    want_h: first.height as u32,
                }
                .into());
            }
        }
        out.push(FrameRecord {
            focal: 0.5 * image.width as f64 / (0.5 * angle).tan(),
            name: m.name,
            image,
            pose: m.pose,
            time: m.time,
        });
    }
    Ok(out)
}

fn parse_pose(v: &Value) -> std::result::Result<[[f64; 4]; 4], String> {
    let rows = v.as_array().ok_or("transform_matrix is not an array")?;
    if rows.len() != 4 {
        return Err(format!("expected 4 rows, got {}", rows.len()));
    }
    let mut pose = [[0.0; 4]; 4];
    for (r, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or(format!("row {r} is not an array"))?;
        if row.len() != 4 {
            return Err(format!("row {r} has {} entries, expected 4", row.len()));
        }
        for (c, x) in row.iter().enumerate() {
            pose[r][c] = x.as_f64().ok_or(format!("entry ({r}, {c}) is not a number"))?;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| pose[k][i] * pose[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-4 {
                return Err("rotation block is not orthonormal".into());
            }
        }
    }
    Ok(pose)
}

fn read_image(frame: &str, path: &Path, bg: Background) -> Result<Image> {
    let err = |detail: String| DatasetError::Image {
        frame: frame.to_string(),
        path: path.to_path_buf(),
        detail,
    };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    let rgba = image::load_from_memory(&bytes).map_err(|e| err(e.to_string()))?.to_rgba8();
    let (w, h) = rgba.dimensions();
    let b = bg.value() as f32;
    let mut img = Image::new(w as usize, h as usize);
    for (dst, px) in img.pixels.chunks_exact_mut(3).zip(rgba.pixels()) {
        let a = px.0[3] as f32 / 255.0;
        for k in 0..3 {
            dst[k] = px.0[k] as f32 / 255.0 * a + b * (1.0 - a);
        }
    }
    Ok(img)
}
