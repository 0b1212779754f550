//! Deterministic synthetic fixtures: clips with controlled motion and
//! texture, annotation tables with planted observers, and small on-disk
//! corpora with MOS planted as a linear function of encoder statistics.
//!
//! Everything here is seeded; the same arguments always produce the same
//! bytes, which the reproducibility tests rely on.

use std::path::Path;

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{self, EncoderConfig};
use crate::harness::manifest::{DatasetManifest, Record};
use crate::harness::HarnessError;
use crate::study::AnnotationTable;
use crate::video::{save_raw, FrameStack};

pub fn constant_video(value: f64, t: usize, h: usize, w: usize) -> FrameStack {
    FrameStack::new(Array4::from_elem((t, h, w, 3), value), 24.0, "constant").unwrap()
}

/// Independent uniform noise per pixel and channel.
pub fn noise_video(seed: u64, t: usize, h: usize, w: usize) -> FrameStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Array4::from_shape_fn((t, h, w, 3), |_| rng.random_range(0.0..1.0));
    FrameStack::new(frames, 24.0, format!("noise{seed}")).unwrap()
}

/// Alternating all-black / all-white frames.
pub fn flicker_video(t: usize, h: usize, w: usize) -> FrameStack {
    let frames = Array4::from_shape_fn((t, h, w, 3), |(ti, _, _, _)| (ti % 2) as f64);
    FrameStack::new(frames, 24.0, "flicker").unwrap()
}

/// A bright square bouncing over a textured background.
///
/// `speed` is pixels per frame; `noise` adds per-pixel jitter. Texture keeps
/// block matching well-posed at zero speed.
pub fn moving_dot_video(
    seed: u64,
    t: usize,
    h: usize,
    w: usize,
    speed: f64,
    noise: f64,
) -> FrameStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.random_range(0.08..0.72);
    let texture =
        Array2::from_shape_fn((h, w), |_| rng.random_range(-0.08..0.08f64));
    let radius = rng.random_range((h.min(w) / 10).max(2)..=(h.min(w) / 4).max(3));
    let mut px = rng.random_range(radius as f64..(w - radius) as f64);
    let mut py = rng.random_range(radius as f64..(h - radius) as f64);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let mut vx = speed * angle.cos();
    let mut vy = speed * angle.sin();

    let mut frames = Array4::zeros((t, h, w, 3));
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let inside = (x as f64 - px).abs() < radius as f64
                    && (y as f64 - py).abs() < radius as f64;
                let value = if inside { 0.95 } else { base + texture[(y, x)] };
                for c in 0..3 {
                    let jitter =
                        if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                    frames[(ti, y, x, c)] = (value + jitter).clamp(0.0, 1.0);
                }
            }
        }
        px += vx;
        py += vy;
        if px < radius as f64 || px > (w - radius) as f64 {
            vx = -vx;
            px += 2.0 * vx;
        }
        if py < radius as f64 || py > (h - radius) as f64 {
            vy = -vy;
            py += 2.0 * vy;
        }
    }
    FrameStack::new(frames, 24.0, format!("dot{seed}")).unwrap()
}

/// 3x3 box blur of every frame (edge clamp), preserving shape.
pub fn box_blur_video(v: &FrameStack) -> FrameStack {
    let (t, h, w, _) = v.frames.dim();
    let mut out = Array4::zeros((t, h, w, 3));
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                            let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            acc += v.frames[(ti, yy, xx, c)];
                        }
                    }
                    out[(ti, y, x, c)] = acc / 9.0;
                }
            }
        }
    }
    FrameStack::new(out, v.fps, format!("{}_blur", v.source_id)).unwrap()
}

/// Appends `k` exact copies of the final frame.
pub fn append_duplicate_frames(v: &FrameStack, k: usize) -> FrameStack {
    let (t, h, w, _) = v.frames.dim();
    let mut out = Array4::zeros((t + k, h, w, 3));
    for ti in 0..t + k {
        let src = ti.min(t - 1);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[(ti, y, x, c)] = v.frames[(src, y, x, c)];
                }
            }
        }
    }
    FrameStack::new(out, v.fps, format!("{}_ext", v.source_id)).unwrap()
}

/// Grayscale pair where the second frame is the first shifted right by
/// `shift` pixels (fresh noise enters on the left edge).
pub fn shifted_gray_pair(seed: u64, h: usize, w: usize, shift: usize) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prev = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0f64));
    let curr = Array2::from_shape_fn((h, w), |(y, x)| {
        if x >= shift {
            prev[(y, x - shift)]
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    (prev, curr)
}

/// Complete raw-score table with integer opinion scores uniform in 1..=10,
/// the form a 10-point human study actually produces.
pub fn annotation_table_random(n_videos: usize, n_annotators: usize, seed: u64) -> AnnotationTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n_videos)
        .map(|_| (0..n_annotators).map(|_| rng.random_range(1..=10) as f64).collect())
        .collect();
    AnnotationTable::from_rows(
        (0..n_videos).map(|i| format!("v{i:03}")).collect(),
        (0..n_annotators).map(|i| format!("a{i}")).collect(),
        rows,
    )
    .unwrap()
}

/// Peers score 3 give or take a point (integers in {2, 3, 4}); the final
/// annotator scores 10 on every video.
pub fn annotation_table_with_outlier(
    n_annotators: usize,
    n_videos: usize,
    seed: u64,
) -> AnnotationTable {
    assert!(n_annotators >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n_videos)
        .map(|_| {
            (0..n_annotators)
                .map(|a| {
                    if a + 1 == n_annotators {
                        10.0
                    } else {
                        rng.random_range(2..=4) as f64
                    }
                })
                .collect()
        })
        .collect();
    AnnotationTable::from_rows(
        (0..n_videos).map(|i| format!("v{i:03}")).collect(),
        (0..n_annotators).map(|i| format!("a{i}")).collect(),
        rows,
    )
    .unwrap()
}

/// Prompts built from the built-in lexicon vocabulary, each with at least
/// five descriptive tokens.
pub const FIXTURE_PROMPTS: [&str; 8] = [
    "A red fox runs over the icy river.",
    "The golden kite drifts across a vast misty sky.",
    "An ancient train crosses the narrow bridge in a stormy city.",
    "A silver boat sails past the quiet harbor under bright lanterns.",
    "The gentle dancer spins through an emerald garden.",
    "A crimson dot glides along the frozen meadow near the cliff.",
    "The bright lantern floats over an ancient temple in the misty forest.",
    "A blue kite leaps across the vast desert under a stormy sky.",
];

/// Which encoder statistics drive the planted MOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MosPlan {
    /// Linear in all of aesthetic ++ technical ++ flow ++ action stats.
    AllFeatures,
    /// Linear in the flow ++ action block only.
    MotionOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusOptions {
    pub n: usize,
    pub seed: u64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub plan: MosPlan,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { n: 32, seed: 7, t: 16, h: 64, w: 64, plan: MosPlan::AllFeatures }
    }
}

/// Writes `n` raw clips plus a manifest under `dir` and returns the
/// manifest. MOS is a planted linear function of the per-video encoder
/// statistics (standardised across the corpus), itself standardised to
/// z-units.
pub fn write_synthetic_corpus(
    dir: &Path,
    enc_cfg: &EncoderConfig,
    opts: &CorpusOptions,
) -> Result<DatasetManifest, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats_rows: Vec<Vec<f64>> = Vec::with_capacity(opts.n);
    let mut records = Vec::with_capacity(opts.n);

    for i in 0..opts.n {
        // Speeds span rest to fast; the top end moves 3 px/frame at the
        // 4x-downsampled block-matching scale, so flow magnitudes cover
        // the whole histogram range.
        let speed = 12.0 * (i as f64 / (opts.n - 1).max(1) as f64);
        let noise = rng.random_range(0.0..0.2);
        let video = moving_dot_video(
            opts.seed.wrapping_add(1000 + i as u64),
            opts.t,
            opts.h,
            opts.w,
            speed,
            noise,
        );
        let file = format!("vid{i:03}.cvt");
        save_raw(&video, &dir.join(&file)).map_err(|e| HarnessError::Parse(e.to_string()))?;

        let mut stats = encoders::aesthetic_stats(&video, enc_cfg.frames_sampled);
        stats.extend(encoders::technical_stats(&video, enc_cfg.frames_sampled));
        stats.extend(
            encoders::flow_summary(&video, enc_cfg).map_err(|e| HarnessError::Parse(e.to_string()))?,
        );
        stats.extend(
            encoders::action_summary(&video, enc_cfg)
                .map_err(|e| HarnessError::Parse(e.to_string()))?,
        );
        stats_rows.push(stats);

        records.push(Record {
            video_id: format!("vid{i:03}"),
            frames: file,
            prompt: FIXTURE_PROMPTS[i % FIXTURE_PROMPTS.len()].to_string(),
            mos: None,
            generator: Some(format!("gen{}", i % 3)),
        });
    }

    let mos = planted_mos(&stats_rows, opts.plan, opts.seed);
    for (r, m) in records.iter_mut().zip(mos) {
        r.mos = Some(m);
    }

    let mut manifest = DatasetManifest::new(records)?;
    manifest.base_dir = dir.to_path_buf();
    manifest.save(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Applies seeded weights directly to the raw feature vector over the
/// selected block, then standardises the resulting scores to z-units.
/// Planting in raw space keeps the target inside the scale regime the
/// evaluator's heads actually operate in.
fn planted_mos(stats_rows: &[Vec<f64>], plan: MosPlan, seed: u64) -> Vec<f64> {
    let n = stats_rows.len();
    let d = stats_rows[0].len();
    let motion_start = encoders::AES_STATS_DIM + encoders::TECH_STATS_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d4f53);
    let weights: Vec<f64> = (0..d)
        .map(|j| {
            let active = match plan {
                MosPlan::AllFeatures => true,
                MosPlan::MotionOnly => j >= motion_start,
            };
            if active {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let raw: Vec<f64> = stats_rows
        .iter()
        .map(|row| row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    raw.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect()
}
