//! Feature-extractor interfaces and small deterministic reference
//! implementations.
//!
//! Real deployments would plug pretrained backbones in behind these
//! signatures (see the feature-file contract at the bottom); the reference
//! encoders are seeded random projections of cheap image statistics, which
//! makes every downstream stage exactly testable.
//!
//! Frame sampling takes frames `0, 1, ..` up to the configured count,
//! repeating the final frame when the clip is shorter. Appending exact
//! duplicates of the last frame therefore never changes any feature.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::PromptText;
use crate::video::FrameStack;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("bad feature file: {0}")]
    BadFeatureFile(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Output dimensions of every feature path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub spatial: usize,
    pub aesthetic: usize,
    pub technical: usize,
    pub flow: usize,
    pub action: usize,
    pub text: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { spatial: 16, aesthetic: 8, technical: 8, flow: 12, action: 8, text: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub frames_sampled: usize,
    pub flow_frames: usize,
    pub dims: Dims,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { frames_sampled: 16, flow_frames: 16, dims: Dims::default(), seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.frames_sampled < 2 {
            return Err(EncoderError::BadDims("frames_sampled must be >= 2".into()));
        }
        if self.flow_frames < 2 || self.flow_frames > self.frames_sampled {
            return Err(EncoderError::BadDims(format!(
                "flow_frames must be in [2, frames_sampled={}], got {}",
                self.frames_sampled, self.flow_frames
            )));
        }
        let d = &self.dims;
        for (name, v) in [
            ("spatial", d.spatial),
            ("aesthetic", d.aesthetic),
            ("technical", d.technical),
            ("flow", d.flow),
            ("action", d.action),
            ("text", d.text),
        ] {
            if v == 0 {
                return Err(EncoderError::BadDims(format!("dim {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

// Stat vector widths of the reference encoders.
pub const AES_STATS_DIM: usize = 8;
pub const TECH_STATS_DIM: usize = 4;
pub const FLOW_SUMMARY_DIM: usize = 10;
pub const ACTION_SUMMARY_DIM: usize = 6;
/// Spatial patch edge in pixels.
pub const PATCH: usize = 8;
/// Block-matching parameters of the reference flow.
pub const FLOW_BLOCK: usize = 8;
pub const FLOW_RADIUS: i64 = 3;
pub const FLOW_DOWNSAMPLE: usize = 4;
/// Temporal strides of the action-energy pyramid.
pub const ACTION_STRIDES: [usize; 3] = [1, 2, 4];

const SALT_SPATIAL: u64 = 0x53504154;
const SALT_TEXT: u64 = 0x54455854;
const SALT_XATTN: u64 = 0x58415454;
const SALT_AES: u64 = 0x41455354;
const SALT_TECH: u64 = 0x54454348;
const SALT_FLOW: u64 = 0x464c4f57;
const SALT_ACTION: u64 = 0x414b5449;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn salted_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(salt)))
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform in +-1/sqrt(fan_in), the shared init for all seeded maps.
pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub(crate) fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..bound))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the log argument is strictly positive.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Seeded random projection with unit singular values (orthonormal rows or
/// columns, whichever is the smaller side), via Gram-Schmidt on Gaussian
/// draws. Keeps the reference features well conditioned regardless of seed.
pub(crate) fn orthonormal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let k = rows.min(cols);
    let len = rows.max(cols);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..len).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            for x in &mut v {
                *x /= n;
            }
            basis.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        if rows <= cols {
            basis[r][c]
        } else {
            basis[c][r]
        }
    })
}

/// Frame indices used by every encoder: `min(j, T-1)` for `j` in
/// `0..frames_sampled`.
pub fn sample_indices(t: usize, frames_sampled: usize) -> Vec<usize> {
    (0..frames_sampled).map(|j| j.min(t - 1)).collect()
}

/// Evenly spaced positions within the sampled window for the flow pairs.
fn flow_indices(frames_sampled: usize, flow_frames: usize) -> Vec<usize> {
    if flow_frames >= frames_sampled {
        return (0..frames_sampled).collect();
    }
    (0..flow_frames)
        .map(|i| {
            ((i * (frames_sampled - 1)) as f64 / (flow_frames - 1) as f64).round() as usize
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Spatial encoder: seeded projection of patch means.
// ---------------------------------------------------------------------------

/// Per-frame token grid built from 8x8 patch colour means through one fixed
/// seeded affine map.
#[derive(Debug, Clone)]
pub struct SpatialEncoder {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub frames_sampled: usize,
}

impl SpatialEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_SPATIAL);
        let w = orthonormal_matrix(&mut rng, cfg.dims.spatial, 3);
        let b = uniform_vector(&mut rng, cfg.dims.spatial, 1.0 / 3f64.sqrt());
        SpatialEncoder { w, b, frames_sampled: cfg.frames_sampled }
    }

    /// `[T x N x D_s]` tokens, N = full 8x8 patches per frame.
    pub fn encode(&self, v: &FrameStack) -> Result<Array3<f64>, EncoderError> {
        let means = patch_means(v, self.frames_sampled);
        let (t, n, _) = means.dim();
        let d = self.w.nrows();
        let mut out = Array3::zeros((t, n, d));
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    let mut acc = self.b[di];
                    for c in 0..3 {
                        acc += self.w[(di, c)] * means[(ti, ni, c)];
                    }
                    out[(ti, ni, di)] = acc;
                }
            }
        }
        Ok(out)
    }
}

/// Per-patch RGB means over the sampled frames: `[T x N x 3]`.
pub fn patch_means(v: &FrameStack, frames_sampled: usize) -> Array3<f64> {
    let idx = sample_indices(v.t(), frames_sampled);
    let (rows, cols) = (v.height() / PATCH, v.width() / PATCH);
    let n = rows * cols;
    let mut out = Array3::zeros((idx.len(), n, 3));
    let norm = 1.0 / (PATCH * PATCH) as f64;
    for (ti, &src) in idx.iter().enumerate() {
        for pr in 0..rows {
            for pc in 0..cols {
                let mut acc = [0.0f64; 3];
                for y in pr * PATCH..(pr + 1) * PATCH {
                    for x in pc * PATCH..(pc + 1) * PATCH {
                        for c in 0..3 {
                            acc[c] += v.frames[(src, y, x, c)];
                        }
                    }
                }
                for c in 0..3 {
                    out[(ti, pr * cols + pc, c)] = acc[c] * norm;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Text encoder: seeded token-hash embeddings plus one cross-attention read.
// ---------------------------------------------------------------------------

/// Frozen text encoder. Word embeddings are unit-norm hash embeddings; the
/// `[enc]` position additionally receives one attention read over the
/// per-frame pooled visual tokens (mapped into text space by a fixed seeded
/// matrix), so zero visual input leaves the prompt-only embedding intact.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    seed: u64,
    dim: usize,
    /// Visual-to-text map used by the cross-attention read.
    pub w_visual: Array2<f64>,
}

impl TextEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_XATTN);
        let w_visual = uniform_matrix(&mut rng, cfg.dims.text, cfg.dims.spatial);
        TextEncoder { seed: cfg.seed, dim: cfg.dims.text, w_visual }
    }

    /// Unit-norm embedding of one token, a pure function of (token, seed).
    pub fn token_embedding(&self, token: &str) -> Array1<f64> {
        let mut rng = salted_rng(self.seed ^ fnv1a(token), SALT_TEXT);
        let mut v = Array1::from_shape_fn(self.dim, |_| rng.random_range(-1.0..1.0));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.mapv_inplace(|x| x / norm);
        } else {
            v[0] = 1.0;
        }
        v
    }

    /// Returns the fused `[enc]` embedding (position 0 of the conceptual
    /// output) and the per-word rows (positions 1..=n).
    pub fn encode(
        &self,
        visual_tokens: &Array3<f64>,
        prompt: &PromptText,
    ) -> Result<(Array1<f64>, Array2<f64>), EncoderError> {
        if prompt.is_empty() {
            return Err(EncoderError::EmptyPrompt);
        }
        let enc = self.token_embedding("[enc]");
        let read = self.attention_read(&enc, visual_tokens);
        let f_enc = &enc + &read;

        let n = prompt.word_tokens.len();
        let mut words = Array2::zeros((n, self.dim));
        for (i, tok) in prompt.word_tokens.iter().enumerate() {
            words.row_mut(i).assign(&self.token_embedding(tok));
        }
        Ok((f_enc, words))
    }

    fn attention_read(&self, query: &Array1<f64>, visual_tokens: &Array3<f64>) -> Array1<f64> {
        let (t, n, ds) = visual_tokens.dim();
        if t == 0 || n == 0 {
            return Array1::zeros(self.dim);
        }
        assert_eq!(ds, self.w_visual.ncols(), "visual token dim mismatch");
        // Per-frame pooled token, mapped into text space.
        let mut keys = Vec::with_capacity(t);
        for ti in 0..t {
            let mut pooled = vec![0.0f64; ds];
            for ni in 0..n {
                for di in 0..ds {
                    pooled[di] += visual_tokens[(ti, ni, di)] / n as f64;
                }
            }
            let mut k = Array1::zeros(self.dim);
            for r in 0..self.dim {
                let mut acc = 0.0;
                for c in 0..ds {
                    acc += self.w_visual[(r, c)] * pooled[c];
                }
                k[r] = acc;
            }
            keys.push(k);
        }
        let scale = 1.0 / (self.dim as f64).sqrt();
        let scores: Vec<f64> = keys.iter().map(|k| query.dot(k) * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let mut read = Array1::zeros(self.dim);
        for (ti, k) in keys.iter().enumerate() {
            let alpha = exps[ti] / denom;
            read.scaled_add(alpha, k);
        }
        read
    }
}

// ---------------------------------------------------------------------------
// Aesthetic encoder: seeded projection of colour / luminance statistics.
// ---------------------------------------------------------------------------

/// Global colour statistics over the sampled frames:
/// `[mean_r, mean_g, mean_b, sd_r, sd_g, sd_b, mean_luma, sd_luma]`.
pub fn aesthetic_stats(v: &FrameStack, frames_sampled: usize) -> Vec<f64> {
    let idx = sample_indices(v.t(), frames_sampled);
    let (h, w) = (v.height(), v.width());
    let count = (idx.len() * h * w) as f64;
    let mut sum = [0.0f64; 4];
    let mut sumsq = [0.0f64; 4];
    for &t in &idx {
        for y in 0..h {
            for x in 0..w {
                let luma = v.luma(t, y, x);
                for c in 0..3 {
                    let val = v.frames[(t, y, x, c)];
                    sum[c] += val;
                    sumsq[c] += val * val;
                }
                sum[3] += luma;
                sumsq[3] += luma * luma;
            }
        }
    }
    let mut stats = vec![0.0; AES_STATS_DIM];
    for c in 0..4 {
        let mean = sum[c] / count;
        let var = (sumsq[c] / count - mean * mean).max(0.0);
        let (mean_slot, sd_slot) = if c < 3 { (c, 3 + c) } else { (6, 7) };
        stats[mean_slot] = mean;
        stats[sd_slot] = var.sqrt();
    }
    stats
}

#[derive(Debug, Clone)]
pub struct AestheticEncoder {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub frames_sampled: usize,
}

impl AestheticEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_AES);
        let w = orthonormal_matrix(&mut rng, cfg.dims.aesthetic, AES_STATS_DIM);
        let b = uniform_vector(&mut rng, cfg.dims.aesthetic, 1.0 / (AES_STATS_DIM as f64).sqrt());
        AestheticEncoder { w, b, frames_sampled: cfg.frames_sampled }
    }

    pub fn encode(&self, v: &FrameStack) -> Array1<f64> {
        let stats = aesthetic_stats(v, self.frames_sampled);
        let mut out = self.b.clone();
        for r in 0..self.w.nrows() {
            for (c, s) in stats.iter().enumerate() {
                out[r] += self.w[(r, c)] * s;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Technical encoder: positive gains over high-frequency residual energy.
// ---------------------------------------------------------------------------

/// RMS residual against a 3x3 box blur, per channel and for luma,
/// mean-pooled over the sampled frames.
pub fn technical_stats(v: &FrameStack, frames_sampled: usize) -> Vec<f64> {
    let idx = sample_indices(v.t(), frames_sampled);
    let (h, w) = (v.height(), v.width());
    let mut acc = [0.0f64; TECH_STATS_DIM];
    for &t in &idx {
        for y in 0..h {
            for x in 0..w {
                let mut blurred = [0.0f64; 3];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        for c in 0..3 {
                            blurred[c] += v.frames[(t, yy, xx, c)] / 9.0;
                        }
                    }
                }
                let mut luma_res = 0.0;
                for c in 0..3 {
                    let res = v.frames[(t, y, x, c)] - blurred[c];
                    acc[c] += res * res;
                    let coef = [0.299, 0.587, 0.114][c];
                    luma_res += coef * res;
                }
                acc[3] += luma_res * luma_res;
            }
        }
    }
    let count = (idx.len() * h * w) as f64;
    acc.iter().map(|v| (v / count).sqrt()).collect()
}

/// The distortion path uses strictly positive seeded gains over the tiled
/// stat vector, so shrinking every residual-energy component shrinks the
/// output norm monotonically.
#[derive(Debug, Clone)]
pub struct TechnicalEncoder {
    pub gains: Array1<f64>,
    pub frames_sampled: usize,
}

impl TechnicalEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_TECH);
        let gains = Array1::from_shape_fn(cfg.dims.technical, |_| rng.random_range(0.5..1.5));
        TechnicalEncoder { gains, frames_sampled: cfg.frames_sampled }
    }

    pub fn encode(&self, v: &FrameStack) -> Array1<f64> {
        let stats = technical_stats(v, self.frames_sampled);
        Array1::from_shape_fn(self.gains.len(), |j| self.gains[j] * stats[j % TECH_STATS_DIM])
    }
}

// ---------------------------------------------------------------------------
// Flow encoder: integer block matching on downsampled luma.
// ---------------------------------------------------------------------------

/// Largest factor in {4, 2, 1} that leaves the downsampled frame room for a
/// block plus the full search radius on both sides; without that margin a
/// block could not displace at all.
fn flow_downsample_factor(h: usize, w: usize) -> usize {
    let needed = FLOW_BLOCK + 2 * FLOW_RADIUS as usize;
    for f in [FLOW_DOWNSAMPLE, 2, 1] {
        if h / f >= needed && w / f >= needed {
            return f;
        }
    }
    1
}

fn gray_downsampled(v: &FrameStack, t: usize, factor: usize) -> Array2<f64> {
    let (h, w) = (v.height() / factor, v.width() / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Array2::from_shape_fn((h, w), |(gy, gx)| {
        let mut acc = 0.0;
        for y in gy * factor..(gy + 1) * factor {
            for x in gx * factor..(gx + 1) * factor {
                acc += v.luma(t, y, x);
            }
        }
        acc * norm
    })
}

/// Integer displacement per block between two grayscale frames, minimising
/// SAD. Candidates are scanned nearest-first so the zero displacement wins
/// all ties and a static pair reports exactly zero motion.
pub fn block_match_pair(
    prev: &Array2<f64>,
    curr: &Array2<f64>,
    block: usize,
    radius: i64,
) -> Vec<(i64, i64)> {
    assert_eq!(prev.dim(), curr.dim(), "frame size mismatch");
    let (h, w) = prev.dim();
    let mut candidates: Vec<(i64, i64)> = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            candidates.push((dy, dx));
        }
    }
    candidates.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let mut out = Vec::new();
    for by in (0..h + 1 - block).step_by(block) {
        for bx in (0..w + 1 - block).step_by(block) {
            let mut best = (0i64, 0i64);
            let mut best_sad = f64::INFINITY;
            for &(dy, dx) in &candidates {
                let ty = by as i64 + dy;
                let tx = bx as i64 + dx;
                if ty < 0 || tx < 0 || ty as usize + block > h || tx as usize + block > w {
                    continue;
                }
                let mut sad = 0.0;
                'block: for y in 0..block {
                    for x in 0..block {
                        sad += (prev[(by + y, bx + x)]
                            - curr[((ty as usize) + y, (tx as usize) + x)])
                            .abs();
                        if sad >= best_sad {
                            break 'block;
                        }
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (dy, dx);
                }
            }
            out.push(best);
        }
    }
    out
}

/// All block displacements over the configured flow pairs.
pub fn flow_displacements(
    v: &FrameStack,
    cfg: &EncoderConfig,
) -> Result<Vec<(i64, i64)>, EncoderError> {
    if cfg.flow_frames < 2 {
        return Err(EncoderError::TooFewFrames { needed: 2, got: cfg.flow_frames });
    }
    let sampled = sample_indices(v.t(), cfg.frames_sampled);
    let positions = flow_indices(sampled.len(), cfg.flow_frames);
    let factor = flow_downsample_factor(v.height(), v.width());
    let grays: Vec<Array2<f64>> =
        positions.iter().map(|&p| gray_downsampled(v, sampled[p], factor)).collect();
    let mut out = Vec::new();
    for pair in grays.windows(2) {
        out.extend(block_match_pair(&pair[0], &pair[1], FLOW_BLOCK, FLOW_RADIUS));
    }
    Ok(out)
}

/// Histogram of displacement magnitudes (bin 0 = exactly zero, then unit
/// rings, normalised) concatenated with mean and deviation per direction.
pub fn flow_summary(v: &FrameStack, cfg: &EncoderConfig) -> Result<Vec<f64>, EncoderError> {
    let disps = flow_displacements(v, cfg)?;
    Ok(summarize_displacements(&disps))
}

pub fn summarize_displacements(disps: &[(i64, i64)]) -> Vec<f64> {
    let mut hist = [0.0f64; 6];
    let n = disps.len().max(1) as f64;
    let mut sum = (0.0, 0.0);
    let mut sumsq = (0.0, 0.0);
    for &(dy, dx) in disps {
        let mag = ((dy * dy + dx * dx) as f64).sqrt();
        let bin = if mag == 0.0 { 0 } else { (mag.ceil() as usize).min(5) };
        hist[bin] += 1.0 / n;
        sum.0 += dx as f64;
        sum.1 += dy as f64;
        sumsq.0 += (dx * dx) as f64;
        sumsq.1 += (dy * dy) as f64;
    }
    let mean = (sum.0 / n, sum.1 / n);
    let sd = |sq: f64, m: f64| (sq / n - m * m).max(0.0).sqrt();
    let mut out = hist.to_vec();
    out.extend_from_slice(&[mean.0, sd(sumsq.0, mean.0), mean.1, sd(sumsq.1, mean.1)]);
    out
}

#[derive(Debug, Clone)]
pub struct FlowEncoder {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    cfg: EncoderConfig,
}

impl FlowEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_FLOW);
        let w = orthonormal_matrix(&mut rng, cfg.dims.flow, FLOW_SUMMARY_DIM);
        let b = uniform_vector(&mut rng, cfg.dims.flow, 1.0 / (FLOW_SUMMARY_DIM as f64).sqrt());
        FlowEncoder { w, b, cfg: *cfg }
    }

    pub fn encode(&self, v: &FrameStack) -> Result<Array1<f64>, EncoderError> {
        let summary = flow_summary(v, &self.cfg)?;
        let mut out = self.b.clone();
        for r in 0..self.w.nrows() {
            for (c, s) in summary.iter().enumerate() {
                out[r] += self.w[(r, c)] * s;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Action encoder: temporal-difference energy pyramid.
// ---------------------------------------------------------------------------

/// RMS and mean absolute frame difference at strides 1, 2 and 4 over the
/// sampled window; strides with no pairs contribute zeros.
pub fn action_summary(v: &FrameStack, cfg: &EncoderConfig) -> Result<Vec<f64>, EncoderError> {
    if v.t() < 2 {
        return Err(EncoderError::TooFewFrames { needed: 2, got: v.t() });
    }
    let idx = sample_indices(v.t(), cfg.frames_sampled);
    let (h, w) = (v.height(), v.width());
    let mut out = Vec::with_capacity(ACTION_SUMMARY_DIM);
    for stride in ACTION_STRIDES {
        let mut sq = 0.0;
        let mut ab = 0.0;
        let mut count = 0usize;
        for t in 0..idx.len().saturating_sub(stride) {
            let (a, b) = (idx[t], idx[t + stride]);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let d = v.frames[(b, y, x, c)] - v.frames[(a, y, x, c)];
                        sq += d * d;
                        ab += d.abs();
                    }
                }
            }
            count += h * w * 3;
        }
        if count > 0 {
            out.push((sq / count as f64).sqrt());
            out.push(ab / count as f64);
        } else {
            out.push(0.0);
            out.push(0.0);
        }
    }
    Ok(out)
}

/// Bias-free projection so a static clip maps exactly to the zero vector.
#[derive(Debug, Clone)]
pub struct ActionEncoder {
    pub w: Array2<f64>,
    cfg: EncoderConfig,
}

impl ActionEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = salted_rng(cfg.seed, SALT_ACTION);
        let w = orthonormal_matrix(&mut rng, cfg.dims.action, ACTION_SUMMARY_DIM);
        ActionEncoder { w, cfg: *cfg }
    }

    pub fn encode(&self, v: &FrameStack) -> Result<Array1<f64>, EncoderError> {
        let summary = action_summary(v, &self.cfg)?;
        let mut out = Array1::zeros(self.w.nrows());
        for r in 0..self.w.nrows() {
            for (c, s) in summary.iter().enumerate() {
                out[r] += self.w[(r, c)] * s;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// External adapter contract.
// ---------------------------------------------------------------------------

/// In-process extension point: anything that maps a clip to a flat feature
/// vector of a fixed dimension.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn extract(&self, v: &FrameStack) -> Result<Vec<f64>, EncoderError>;
}

impl FeatureExtractor for AestheticEncoder {
    fn dim(&self) -> usize {
        self.w.nrows()
    }
    fn extract(&self, v: &FrameStack) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode(v).to_vec())
    }
}

impl FeatureExtractor for TechnicalEncoder {
    fn dim(&self) -> usize {
        self.gains.len()
    }
    fn extract(&self, v: &FrameStack) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode(v).to_vec())
    }
}

impl FeatureExtractor for FlowEncoder {
    fn dim(&self) -> usize {
        self.w.nrows()
    }
    fn extract(&self, v: &FrameStack) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode(v)?.to_vec())
    }
}

impl FeatureExtractor for ActionEncoder {
    fn dim(&self) -> usize {
        self.w.nrows()
    }
    fn extract(&self, v: &FrameStack) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode(v)?.to_vec())
    }
}

pub const FEATURE_MAGIC: &[u8; 8] = b"CRAVFEAT";

/// Feature file: 16-byte header (8-byte magic, u32 LE dim, 4 reserved bytes)
/// followed by `dim` little-endian f32 values. This is the wire format an
/// out-of-process extractor must emit.
pub fn write_feature_file(path: &std::path::Path, data: &[f64]) -> Result<(), EncoderError> {
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(data.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&[0u8; 4]);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| EncoderError::Io(e.to_string()))
}

pub fn read_feature_file(path: &std::path::Path) -> Result<Vec<f64>, EncoderError> {
    let bytes = std::fs::read(path).map_err(|e| EncoderError::Io(e.to_string()))?;
    if bytes.len() < 16 || &bytes[0..8] != FEATURE_MAGIC {
        return Err(EncoderError::BadFeatureFile("missing CRAVFEAT magic".into()));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 16 + dim * 4 {
        return Err(EncoderError::BadFeatureFile(format!(
            "expected {} bytes for dim {dim}, got {}",
            16 + dim * 4,
            bytes.len()
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}
