//! Grayscale frames, video clips, frame-sequence ingestion and the
//! synthetic clip generator.

mod figure;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use figure::{figure_joints, FigureParams};
pub use synth::{generate_synthetic_clip, textured_frame, Motif, SyntheticClip, SyntheticSpec, Texture};

/// Minimum snippet length admitted to the pipeline.
pub const MIN_CLIP_FRAMES: usize = 41;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("missing frame {index} in sequence under {dir}")]
    MissingFrames { dir: PathBuf, index: usize },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("clip has {got} frames, at least {min} required")]
    TooShort { got: usize, min: usize },
    #[error("no frames matching {pattern:?} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },
    #[error("invalid pixel data: {0}")]
    InvalidPixels(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One luminance frame, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, MediaError> {
        if width == 0 || height == 0 {
            return Err(MediaError::InvalidPixels("empty frame".into()));
        }
        if pixels.len() != width * height {
            return Err(MediaError::InvalidPixels(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(MediaError::InvalidPixels(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Frame::new(width, height, vec![value; width * height]).expect("valid constant frame")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Frame { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Edge-clamped integer access.
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    /// Edge-clamped bilinear sample.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        bilinear(&self.pixels, self.width, self.height, x, y)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }
}

/// Edge-clamped bilinear interpolation over a row-major plane.
#[inline]
pub(crate) fn bilinear(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let xmax = (width - 1) as f32;
    let ymax = (height - 1) as f32;
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let a = plane[y0 * width + x0];
    let b = plane[y0 * width + x1];
    let c = plane[y1 * width + x0];
    let d = plane[y1 * width + x1];
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// An ordered stack of equally sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    width: usize,
    height: usize,
}

impl VideoClip {
    /// Builds a clip, enforcing the minimum length unless `allow_short` is set.
    pub fn new(frames: Vec<Frame>, allow_short: bool) -> Result<Self, MediaError> {
        let Some(first) = frames.first() else {
            return Err(MediaError::TooShort { got: 0, min: MIN_CLIP_FRAMES });
        };
        let (width, height) = first.dims();
        for (index, f) in frames.iter().enumerate() {
            if f.dims() != (width, height) {
                return Err(MediaError::DimensionMismatch {
                    index,
                    expected: (width, height),
                    got: f.dims(),
                });
            }
        }
        if !allow_short && frames.len() < MIN_CLIP_FRAMES {
            return Err(MediaError::TooShort {
                got: frames.len(),
                min: MIN_CLIP_FRAMES,
            });
        }
        Ok(VideoClip { frames, width, height })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Splits a single-`*` glob into prefix and suffix. A pattern without a
/// wildcard is treated as `frame_*` plus the pattern's extension.
fn split_pattern(pattern: &str) -> (String, String) {
    match pattern.split_once('*') {
        Some((pre, post)) => (pre.to_string(), post.to_string()),
        None => ("frame_".to_string(), pattern.trim_start_matches('*').to_string()),
    }
}

/// Loads `frame_%05d`-style grayscale frames from `dir` in index order.
///
/// `pattern` is a filename glob with one `*` standing for the frame index,
/// e.g. `frame_*.pgm`. Indices must be contiguous; colour images are
/// luma-converted.
pub fn load_frame_sequence(dir: &Path, pattern: &str, allow_short: bool) -> Result<VideoClip, MediaError> {
    let (prefix, suffix) = split_pattern(pattern);
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.len() < prefix.len() + suffix.len() || !name.starts_with(&prefix) || !name.ends_with(&suffix) {
            continue;
        }
        let middle = &name[prefix.len()..name.len() - suffix.len()];
        if let Ok(idx) = middle.parse::<usize>() {
            indexed.push((idx, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(MediaError::NoFrames {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    indexed.sort();
    let base = indexed[0].0;
    for (offset, (idx, _)) in indexed.iter().enumerate() {
        if *idx != base + offset {
            return Err(MediaError::MissingFrames {
                dir: dir.to_path_buf(),
                index: base + offset,
            });
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    let mut expected: Option<(usize, usize)> = None;
    for (i, (_, path)) in indexed.iter().enumerate() {
        let img = image::open(path)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if let Some(exp) = expected {
            if exp != (w, h) {
                return Err(MediaError::DimensionMismatch {
                    index: i,
                    expected: exp,
                    got: (w, h),
                });
            }
        } else {
            expected = Some((w, h));
        }
        let pixels = img.into_raw().into_iter().map(|p| p as f32 / 255.0).collect();
        frames.push(Frame::new(w, h, pixels)?);
    }
    VideoClip::new(frames, allow_short)
}

/// Writes every frame as `frame_%05d.pgm` (binary, 8-bit).
pub fn write_frame_sequence(clip: &VideoClip, dir: &Path) -> Result<(), MediaError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in clip.frames().iter().enumerate() {
        write_pgm(frame, &dir.join(format!("frame_{i:05}.pgm")))?;
    }
    Ok(())
}

pub fn write_pgm(frame: &Frame, path: &Path) -> Result<(), MediaError> {
    write_gray8(&frame.to_gray8(), frame.width(), frame.height(), path)
}

pub(crate) fn write_gray8(data: &[u8], width: usize, height: usize, path: &Path) -> Result<(), MediaError> {
    let file = fs::File::create(path)?;
    let enc = image::codecs::pnm::PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
    image::ImageEncoder::write_image(enc, data, width as u32, height as u32, image::ExtendedColorType::L8)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 255) as f32 / 255.0)
    }

    #[test]
    fn identical_frames_load() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip::new(vec![textured(64, 64); 41], false).unwrap();
        write_frame_sequence(&clip, dir.path()).unwrap();
        let loaded = load_frame_sequence(dir.path(), "frame_*.pgm", false).unwrap();
        assert_eq!(loaded.frame_count(), 41);
        assert_eq!((loaded.width(), loaded.height()), (64, 64));
        assert_eq!(loaded, clip);
    }

    #[test]
    fn forty_frames_too_short() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip::new(vec![textured(16, 16); 40], true).unwrap();
        write_frame_sequence(&clip, dir.path()).unwrap();
        let err = load_frame_sequence(dir.path(), "frame_*.pgm", false).unwrap_err();
        assert!(matches!(err, MediaError::TooShort { got: 40, min: 41 }));
        assert!(load_frame_sequence(dir.path(), "frame_*.pgm", true).is_ok());
    }

    #[test]
    fn mismatched_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip::new(vec![textured(64, 64); 41], false).unwrap();
        write_frame_sequence(&clip, dir.path()).unwrap();
        write_pgm(&textured(32, 32), &dir.path().join("frame_00020.pgm")).unwrap();
        let err = load_frame_sequence(dir.path(), "frame_*.pgm", false).unwrap_err();
        assert!(matches!(err, MediaError::DimensionMismatch { index: 20, .. }));
    }

    #[test]
    fn gap_in_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip::new(vec![textured(8, 8); 41], false).unwrap();
        write_frame_sequence(&clip, dir.path()).unwrap();
        fs::remove_file(dir.path().join("frame_00007.pgm")).unwrap();
        let err = load_frame_sequence(dir.path(), "frame_*.pgm", false).unwrap_err();
        assert!(matches!(err, MediaError::MissingFrames { index: 7, .. }));
    }

    #[test]
    fn png_color_is_luma_converted() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let img = image::RgbImage::from_pixel(4, 4, image::Rgb([200, 200, 200]));
            img.save(dir.path().join(format!("frame_{i:05}.png"))).unwrap();
        }
        let clip = load_frame_sequence(dir.path(), "frame_*.png", true).unwrap();
        assert_eq!(clip.frame_count(), 3);
        assert!((clip.frame(0).get(1, 1) - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn frame_rejects_out_of_range() {
        assert!(Frame::new(2, 1, vec![0.5, 1.5]).is_err());
        assert!(Frame::new(2, 1, vec![0.5, f32::NAN]).is_err());
        assert!(Frame::new(2, 2, vec![0.5; 3]).is_err());
    }

    #[test]
    fn bilinear_midpoint() {
        let f = Frame::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!((f.sample(0.5, 0.0) - 0.5).abs() < 1e-6);
        assert_eq!(f.sample(-3.0, 0.0), 0.0);
        assert_eq!(f.sample(9.0, 0.0), 1.0);
    }
}
