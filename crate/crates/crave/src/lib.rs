//! CRAVE: a desk-scale quality evaluator for text-driven AI-generated videos.
//!
//! The library is organised around the three scoring branches of the
//! evaluator and the machinery needed to train and benchmark it:
//!
//! * [`study`] — subjective-study processing: z-score normalisation,
//!   BT.500-style observer screening and MOS aggregation.
//! * [`text`] — prompt decomposition into paragraph / phrase / word
//!   granularity levels with pooled embeddings per level.
//! * [`encoders`] — feature-extractor interfaces with small deterministic
//!   reference implementations (spatial tokens, text, aesthetic, technical,
//!   optical-flow and action features).
//! * [`model`] — the evaluator network: temporal adapter, the three branch
//!   scores and their learned fusion.
//! * [`objective`] — differentiable PLCC + pairwise-rank training losses.
//! * [`metrics`] — SRCC / PLCC / KRCC, quartic fitting and fold utilities.
//! * [`harness`] — dataset manifests, the training loop, k-fold evaluation,
//!   generator ranking and the CLI.
//!
//! Reference encoders are deliberately cheap and seeded so every pipeline
//! stage is reproducible and testable on one CPU core; adapters for real
//! pretrained backbones plug in through the feature-file contract described
//! in [`encoders`].

// Index loops over small dense tensors are the house style here; iterator
// rewrites obscure the stencil patterns.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod checkpoint;
pub mod encoders;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod study;
pub mod synth;
pub mod text;
pub mod video;
