//! Writes a small synthetic corpus (raw clips + manifest) so the CLI can be
//! tried without real videos:
//!
//! ```sh
//! cargo run --release --example make_demo_corpus -- /tmp/demo_corpus
//! cargo run --release --bin crave -- train \
//!     --manifest /tmp/demo_corpus/manifest.tsv --seed 5 --out /tmp/model.ckpt
//! ```

use crave::encoders::EncoderConfig;
use crave::synth::{write_synthetic_corpus, CorpusOptions, MosPlan};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "demo_corpus".to_string());
    let enc = EncoderConfig { seed: 5, ..Default::default() };
    let opts = CorpusOptions { n: 12, seed: 5, t: 16, h: 48, w: 48, plan: MosPlan::AllFeatures };
    let manifest = write_synthetic_corpus(std::path::Path::new(&out), &enc, &opts)
        .expect("failed to write corpus");
    println!("wrote {} clips and {out}/manifest.tsv", manifest.len());
}
