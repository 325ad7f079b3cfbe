//! RGB image buffers and their on-disk forms.
//!
//! Raw dump layout (little-endian): magic `TNVR`, width u32, height u32,
//! channels u32 (always 3), then `height * width * 3` f32 values, rows top to
//! bottom, channels interleaved.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"TNVR";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB in `[0, 1]`, row-major.
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let enc = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            enc,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::InvalidInput(format!("png encoding failed: {e}")))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode_png()?)
    }

    /// Reads any PNG as RGB, dropping alpha.
    pub fn load_png(path: &Path) -> Result<Image> {
        let rgb = image::open(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            pixels: rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn encode_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len() * 4);
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_raw(bytes: &[u8]) -> Result<Image> {
        let bad = |m: &str| Error::InvalidInput(format!("raw image: {m}"));
        if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(4), word(8), word(12));
        if channels != 3 {
            return Err(bad("expected 3 channels"));
        }
        let n = width * height * 3;
        if bytes.len() != 16 + 4 * n {
            return Err(bad("truncated payload"));
        }
        let pixels = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Image { width, height, pixels })
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
