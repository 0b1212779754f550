//! Video frames as a dense `[T, H, W, 3]` tensor in `[0, 1]`, plus the two
//! on-disk input forms the CLI accepts: a raw little-endian tensor file and
//! a directory of numbered PNG frames. Container demuxing is out of scope.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array4;
use thiserror::Error;

pub const RAW_VIDEO_MAGIC: &[u8; 8] = b"CRAVEVID";

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frames must be at least 8x8, got {h}x{w}")]
    FrameTooSmall { h: usize, w: usize },
    #[error("pixel value {0} outside [0, 1] or not finite")]
    PixelOutOfRange(f64),
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("bad raw video file: {0}")]
    BadFormat(String),
    #[error("frame directory {0} holds no usable frames")]
    EmptyFrameDir(String),
    #[error("frame file {0}: {1}")]
    FrameDecode(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An in-memory clip: `frames[t][y][x][c]` with RGB channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Array4<f64>,
    pub fps: f64,
    pub source_id: String,
}

impl FrameStack {
    pub fn new(frames: Array4<f64>, fps: f64, source_id: impl Into<String>) -> Result<Self, VideoError> {
        let (t, h, w, c) = frames.dim();
        if c != 3 {
            return Err(VideoError::BadFormat(format!("expected 3 channels, got {c}")));
        }
        if t < 2 {
            return Err(VideoError::TooFewFrames(t));
        }
        if h < 8 || w < 8 {
            return Err(VideoError::FrameTooSmall { h, w });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(VideoError::BadFps(fps));
        }
        for &v in frames.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(VideoError::PixelOutOfRange(v));
            }
        }
        Ok(FrameStack { frames, fps, source_id: source_id.into() })
    }

    pub fn t(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    /// Rec.601 luma of one pixel.
    #[inline]
    pub fn luma(&self, t: usize, y: usize, x: usize) -> f64 {
        0.299 * self.frames[(t, y, x, 0)]
            + 0.587 * self.frames[(t, y, x, 1)]
            + 0.114 * self.frames[(t, y, x, 2)]
    }
}

/// Raw tensor file: magic, version, T/H/W as u32 LE, fps as f32 LE, then
/// `T*H*W*3` f32 LE samples.
pub fn save_raw(stack: &FrameStack, path: &Path) -> Result<(), VideoError> {
    let (t, h, w, _) = stack.frames.dim();
    let mut out = Vec::with_capacity(24 + t * h * w * 3 * 4);
    out.extend_from_slice(RAW_VIDEO_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(stack.fps as f32).to_le_bytes());
    for &v in stack.frames.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_raw(path: &Path) -> Result<FrameStack, VideoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[0..8] != RAW_VIDEO_MAGIC {
        return Err(VideoError::BadFormat("missing CRAVEVID magic".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != 1 {
        return Err(VideoError::BadFormat(format!("unsupported version {version}")));
    }
    let (t, h, w) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let fps = f32::from_le_bytes(bytes[24..28].try_into().unwrap()) as f64;
    let expected = 28 + t * h * w * 3 * 4;
    if bytes.len() != expected {
        return Err(VideoError::BadFormat(format!(
            "expected {expected} bytes for {t}x{h}x{w}, got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(t * h * w * 3);
    for chunk in bytes[28..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let frames = Array4::from_shape_vec((t, h, w, 3), data)
        .map_err(|e| VideoError::BadFormat(e.to_string()))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    FrameStack::new(frames, fps, id)
}

/// Loads a directory of PNG frames ordered by the numeric value embedded in
/// each file stem (`frame_0007.png` sorts as 7).
pub fn load_frame_dir(dir: &Path, fps: f64) -> Result<FrameStack, VideoError> {
    let mut entries: Vec<(u64, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().map(|e| e.eq_ignore_ascii_case("png")) != Some(true) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
        let key = digits.parse::<u64>().map_err(|_| {
            VideoError::FrameDecode(stem.clone(), "no frame number in file name".into())
        })?;
        entries.push((key, path));
    }
    if entries.is_empty() {
        return Err(VideoError::EmptyFrameDir(dir.display().to_string()));
    }
    entries.sort_by_key(|(k, _)| *k);

    let mut frames: Option<Array4<f64>> = None;
    let t = entries.len();
    for (idx, (_, path)) in entries.iter().enumerate() {
        let img = image::open(path)
            .map_err(|e| VideoError::FrameDecode(path.display().to_string(), e.to_string()))?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let store = frames.get_or_insert_with(|| Array4::zeros((t, h, w, 3)));
        if store.dim().1 != h || store.dim().2 != w {
            return Err(VideoError::BadFormat(format!(
                "frame {} has size {h}x{w}, expected {}x{}",
                path.display(),
                store.dim().1,
                store.dim().2
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    store[(idx, y, x, c)] = px.0[c] as f64 / 255.0;
                }
            }
        }
    }
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    FrameStack::new(frames.unwrap(), fps, id)
}

/// Dispatch on the path kind: directory of PNGs or a raw tensor file.
pub fn load_video(path: &Path, fps_for_dirs: f64) -> Result<FrameStack, VideoError> {
    if path.is_dir() {
        load_frame_dir(path, fps_for_dirs)
    } else {
        load_raw(path)
    }
}
