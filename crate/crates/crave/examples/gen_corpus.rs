fn main() {
    let out = std::env::args().nth(1).expect("output dir");
    let cfg = crave::harness::train::parse_train_config("seed=5\nframes_sampled=8\nflow_frames=8\n").unwrap();
    crave::synth::write_synthetic_corpus(
        std::path::Path::new(&out),
        &cfg.model.encoder,
        &crave::synth::CorpusOptions { n: 12, seed: 5, t: 8, h: 48, w: 48, plan: crave::synth::MosPlan::AllFeatures },
    ).unwrap();
    println!("corpus written to {out}");
}
