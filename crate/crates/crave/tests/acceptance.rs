//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (run with `cargo test --test acceptance -- --nocapture`
//! to see them).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crave::harness::manifest::DatasetManifest;
use crave::harness::train::{evaluate, kfold_evaluate, train, TrainConfig, TrainSchedule};
use crave::harness::HarnessError;
use crave::metrics;
use crave::model::{align_score, CraveModel, MotionMode};
use crave::objective::{total_loss, LossConfig};
use crave::study::{
    bt500_screen, zscore_normalize, AnnotationTable, ScreeningConfig, StudyError,
};
use crave::synth::{self, CorpusOptions, MosPlan};
use crave::text::GranularityBundle;

fn pass(n: usize, name: &str) {
    println!("[acceptance] criterion {n} ({name}): PASS");
}

// --- independent oracles ---------------------------------------------------

fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn oracle_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let less = values.iter().filter(|v| **v < values[i]).count() as f64;
        let equal = values.iter().filter(|v| **v == values[i]).count() as f64;
        out[i] = less + (equal + 1.0) / 2.0;
    }
    out
}

fn oracle_kendall(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 && db == 0.0 {
            } else if da == 0.0 {
                tx += 1.0;
            } else if db == 0.0 {
                ty += 1.0;
            } else if da * db > 0.0 {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0usize;
    while checked < 200 {
        let n = rng.random_range(2..=50);
        let ties = rng.random_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if ties {
                        rng.random_range(0..6) as f64
                    } else {
                        rng.random_range(-10.0..10.0)
                    }
                })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let constant =
            a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]);
        if constant {
            continue;
        }
        checked += 1;

        let plcc = metrics::plcc(&a, &b).expect("plcc");
        assert!((plcc - oracle_pearson(&a, &b)).abs() < 1e-9, "plcc vs oracle");

        let srcc = metrics::srcc(&a, &b).expect("srcc");
        let oracle_s = oracle_pearson(&oracle_ranks(&a), &oracle_ranks(&b));
        assert!((srcc - oracle_s).abs() < 1e-9, "srcc vs oracle");

        match metrics::krcc(&a, &b) {
            Ok(krcc) => {
                assert!((krcc - oracle_kendall(&a, &b)).abs() < 1e-9, "krcc vs oracle")
            }
            Err(metrics::MetricError::AllTied) => {
                assert!(oracle_kendall(&a, &b).is_nan());
            }
            Err(e) => panic!("unexpected metric error {e}"),
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "metric oracles took {elapsed:?}");
    pass(1, "metric oracle equivalence");
}

#[test]
fn criterion_02_zscore_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..50 {
        let videos = rng.random_range(4..30);
        let annotators = rng.random_range(2..20);
        let table = synth::annotation_table_random(videos, annotators, rng.random());
        let z = match zscore_normalize(&table) {
            Ok(z) => z,
            // Integer scores can make a small column constant; that case is
            // the error clause verified below.
            Err(StudyError::DegenerateAnnotator(_)) => continue,
            Err(e) => panic!("unexpected error {e}"),
        };
        for col in 0..z.n_annotators() {
            let values: Vec<f64> = (0..z.n_videos()).map(|r| z.scores[(r, col)]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / values.len() as f64)
                .sqrt();
            assert!(mean.abs() < 1e-9, "column mean {mean}");
            assert!((sd - 1.0).abs() < 1e-9, "column sd {sd}");
        }
    }

    let constant = AnnotationTable::from_rows(
        vec!["v0".into(), "v1".into(), "v2".into()],
        vec!["a0".into(), "a1".into()],
        vec![vec![4.0, 7.0], vec![4.0, 5.0], vec![4.0, 3.0]],
    )
    .unwrap();
    assert!(matches!(
        zscore_normalize(&constant),
        Err(StudyError::DegenerateAnnotator(a)) if a == "a0"
    ));
    pass(2, "z-score contract");
}

#[test]
fn criterion_03_bt500_screening() {
    // 21 annotators x 40 videos, one uniform-10 scorer among peers near 3.
    let planted = synth::annotation_table_with_outlier(21, 40, 303);
    let (_, report) = bt500_screen(&planted, &ScreeningConfig::default()).unwrap();
    assert_eq!(report.rejected_annotators, vec!["a20".to_string()]);

    // Homogeneous table: identical columns, nobody rejected.
    let rows: Vec<Vec<f64>> = (0..40).map(|m| vec![(m % 9 + 1) as f64; 21]).collect();
    let homogeneous = AnnotationTable::from_rows(
        (0..40).map(|i| format!("v{i:02}")).collect(),
        (0..21).map(|i| format!("a{i}")).collect(),
        rows,
    )
    .unwrap();
    let (_, report) = bt500_screen(&homogeneous, &ScreeningConfig::default()).unwrap();
    assert!(report.rejected_annotators.is_empty());
    pass(3, "bt500 screening fixtures");
}

#[test]
fn criterion_04_gradient_check() {
    let cfg = LossConfig { gamma: 0.3, ..LossConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    let step = 1e-3;
    for batch in 0..20 {
        let pred: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Central differences are only valid away from the hinge kinks;
        // the seed is chosen so every batch keeps a safe pair gap.
        let mut min_gap = f64::INFINITY;
        for i in 0..8 {
            for j in (i + 1)..8 {
                min_gap = min_gap.min((pred[i] - pred[j]).abs());
            }
        }
        assert!(min_gap > 2.0 * step, "batch {batch} sits on a hinge boundary");
        let diff = total_loss(&pred, &target, &cfg).unwrap();
        let mut fd = vec![0.0; 8];
        for i in 0..8 {
            let mut hi = pred.clone();
            hi[i] += step;
            let mut lo = pred.clone();
            lo[i] -= step;
            fd[i] = (total_loss(&hi, &target, &cfg).unwrap().value
                - total_loss(&lo, &target, &cfg).unwrap().value)
                / (2.0 * step);
        }
        let err = diff
            .grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(err / scale < 1e-4, "batch {batch}: relative error {}", err / scale);
    }
    pass(4, "analytic gradient vs finite differences");
}

#[test]
fn criterion_05_alignment_bounds_and_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let dim = 24;
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let f_v = draw(&mut rng);
        let levels: Vec<Vec<f64>> = (0..3).map(|_| draw(&mut rng)).collect();
        let bundle = GranularityBundle {
            paragraph: Some(ndarray::Array1::from_vec(levels[0].clone())),
            phrase: Some(ndarray::Array1::from_vec(levels[1].clone())),
            word: Some(ndarray::Array1::from_vec(levels[2].clone())),
            levels_present: vec![],
            phrase_from_fallback: false,
        };
        let base = align_score(&f_v, &bundle).unwrap();
        assert!(base.abs() <= 3.0 + 1e-12, "|o_align| = {}", base.abs());

        let alpha = rng.random_range(0.01..100.0);
        let betas: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..100.0)).collect();
        let scaled_fv: Vec<f64> = f_v.iter().map(|v| v * alpha).collect();
        let scaled = GranularityBundle {
            paragraph: Some(ndarray::Array1::from_vec(
                levels[0].iter().map(|v| v * betas[0]).collect(),
            )),
            phrase: Some(ndarray::Array1::from_vec(
                levels[1].iter().map(|v| v * betas[1]).collect(),
            )),
            word: Some(ndarray::Array1::from_vec(
                levels[2].iter().map(|v| v * betas[2]).collect(),
            )),
            levels_present: vec![],
            phrase_from_fallback: false,
        };
        let rescaled = align_score(&scaled_fv, &scaled).unwrap();
        assert!((rescaled - base).abs() < 1e-9, "scale invariance: {base} vs {rescaled}");
    }
    pass(5, "alignment bounds and scale invariance");
}

/// The release schedule on the 32-clip synthetic fixture.
fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        probe_epochs: 20,
        finetune_epochs: 10,
        schedule: TrainSchedule::ProbeFinetune,
        learning_rate: 1e-3,
        batch_size: 8,
        ..TrainConfig::default()
    }
    .with_seed(seed)
}

fn overfit_corpus(dir: &std::path::Path, cfg: &TrainConfig, plan: MosPlan) -> DatasetManifest {
    synth::write_synthetic_corpus(
        dir,
        &cfg.model.encoder,
        &CorpusOptions { n: 32, seed: cfg.seed, t: 16, h: 64, w: 64, plan },
    )
    .unwrap()
}

#[test]
fn criterion_06_overfit_sanity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = overfit_config(606);
    let manifest = overfit_corpus(dir.path(), &cfg, MosPlan::AllFeatures);
    let trained = train(&manifest, &cfg).unwrap();
    let report = evaluate(&trained.model, &manifest).unwrap();
    let elapsed = start.elapsed();
    println!(
        "[acceptance] criterion 6 detail: training SRCC {:.4}, loss {:.4} -> {:.4}, {:?}",
        report.srcc,
        trained.log.epoch_losses.first().unwrap(),
        trained.log.epoch_losses.last().unwrap(),
        elapsed
    );
    assert!(report.srcc >= 0.95, "training SRCC {} below 0.95", report.srcc);
    assert!(
        trained.log.epoch_losses.last().unwrap() <= trained.log.epoch_losses.first().unwrap(),
        "training loss increased over the run"
    );
    assert!(elapsed.as_secs_f64() < 300.0, "overfit run took {elapsed:?}");
    pass(6, "overfit sanity on the synthetic fixture");
}

#[test]
fn criterion_07_motion_ablation_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let base = overfit_config(606); // same seed and fixture family as criterion 6
    let manifest = overfit_corpus(dir.path(), &base, MosPlan::MotionOnly);

    let mut hybrid_cfg = base;
    hybrid_cfg.model.motion = MotionMode::Hybrid;
    let hybrid = train(&manifest, &hybrid_cfg).unwrap();
    let hybrid_srcc = evaluate(&hybrid.model, &manifest).unwrap().srcc;

    let mut none_cfg = base;
    none_cfg.model.motion = MotionMode::None;
    let none = train(&manifest, &none_cfg).unwrap();
    let none_srcc = evaluate(&none.model, &manifest).unwrap().srcc;

    println!(
        "[acceptance] criterion 7 detail: hybrid SRCC {hybrid_srcc:.4}, none SRCC {none_srcc:.4}"
    );
    assert!(
        hybrid_srcc >= none_srcc,
        "hybrid ({hybrid_srcc}) must not trail the motion-free ablation ({none_srcc})"
    );
    pass(7, "motion ablation ordering");
}

#[test]
fn criterion_08_poly4_recovery() {
    let truth = [1.0, -2.0, 0.0, 0.0, 1.0]; // x^4 - 2x + 1
    let xs: Vec<f64> = (0..40).map(|i| -2.0 + 4.0 * i as f64 / 39.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| metrics::poly4_eval(&truth, x)).collect();
    let fit = metrics::poly4_fit(&xs, &ys).unwrap();
    for k in 0..5 {
        let scale = truth[k].abs().max(1.0);
        assert!(
            (fit[k] - truth[k]).abs() / scale < 1e-6,
            "coefficient {k}: {} vs {}",
            fit[k],
            truth[k]
        );
    }
    pass(8, "quartic coefficient recovery");
}

#[test]
fn criterion_09_fold_properties_and_leakage() {
    // Exact partition over random sizes.
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..25 {
        let k = rng.random_range(2..=10);
        let n = rng.random_range(k..=80);
        let plan = metrics::make_folds(n, k, rng.random()).unwrap();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        for fold in 0..k {
            let idx = plan.fold_indices(fold);
            sizes.push(idx.len());
            for i in idx {
                assert!(!seen[i], "item {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "folds must cover every item");
        let (lo, hi) =
            (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "fold sizes differ by more than one: {sizes:?}");
    }

    // Poisoning: altering a test fold's MOS must not change the checkpoint
    // trained on the complement.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = overfit_config(911);
    cfg.probe_epochs = 2;
    cfg.finetune_epochs = 1;
    let manifest = synth::write_synthetic_corpus(
        dir.path(),
        &cfg.model.encoder,
        &CorpusOptions { n: 20, seed: cfg.seed, t: 8, h: 32, w: 32, plan: MosPlan::AllFeatures },
    )
    .unwrap();
    let plan = metrics::make_folds(manifest.len(), 10, cfg.seed).unwrap();
    let complement = plan.complement_indices(0);
    let train_subset = |m: &DatasetManifest| -> Vec<u8> {
        let records: Vec<_> = complement.iter().map(|&i| m.records[i].clone()).collect();
        let mut sub = DatasetManifest::new(records).unwrap();
        sub.base_dir = m.base_dir.clone();
        let trained = train(&sub, &cfg).unwrap();
        crave::checkpoint::encode(&cfg.model, trained.model.params(), "")
    };
    let clean = train_subset(&manifest);
    let mut poisoned = manifest.clone();
    for idx in plan.fold_indices(0) {
        poisoned.records[idx].mos = Some(-123.0);
    }
    assert_eq!(clean, train_subset(&poisoned), "test-fold MOS leaked into training");

    // The 10-fold harness itself runs end to end on this corpus.
    let report = kfold_evaluate(&manifest, &cfg, 10).unwrap();
    assert_eq!(report.per_fold.len(), 10);
    pass(9, "fold partition and no-leakage");
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = "seed=77\nprobe_epochs=3\nfinetune_epochs=2\nbatch_size=4\n\
                    frames_sampled=8\nflow_frames=8\n";
    let cfg_path = dir.path().join("train.cfg");
    std::fs::write(&cfg_path, cfg_text).unwrap();

    let cfg = crave::harness::train::parse_train_config(cfg_text).unwrap();
    let corpus_dir = dir.path().join("corpus");
    synth::write_synthetic_corpus(
        &corpus_dir,
        &cfg.model.encoder,
        &CorpusOptions { n: 8, seed: 77, t: 8, h: 32, w: 32, plan: MosPlan::AllFeatures },
    )
    .unwrap();
    let manifest_path = corpus_dir.join("manifest.tsv");

    let run_once = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let scores = dir.path().join(format!("{tag}.scores.tsv"));
        let code = crave::harness::cli::run([
            "crave".to_string(),
            "train".into(),
            "--manifest".into(),
            manifest_path.display().to_string(),
            "--config".into(),
            cfg_path.display().to_string(),
            "--out".into(),
            ckpt.display().to_string(),
        ]);
        assert_eq!(code, 0, "train exit code");
        let code = crave::harness::cli::run([
            "crave".to_string(),
            "score".into(),
            "--checkpoint".into(),
            ckpt.display().to_string(),
            "--manifest".into(),
            manifest_path.display().to_string(),
            "--out".into(),
            scores.display().to_string(),
        ]);
        assert_eq!(code, 0, "score exit code");
        (std::fs::read(&ckpt).unwrap(), std::fs::read(&scores).unwrap())
    };

    let (ckpt_a, scores_a) = run_once("run_a");
    let (ckpt_b, scores_b) = run_once("run_b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    assert_eq!(scores_a, scores_b, "score files differ between identical runs");
    pass(10, "end-to-end determinism");
}

#[test]
fn criterion_11_generator_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = overfit_config(613);
    let mut manifest = synth::write_synthetic_corpus(
        dir.path(),
        &cfg.model.encoder,
        &CorpusOptions { n: 12, seed: 613, t: 8, h: 32, w: 32, plan: MosPlan::AllFeatures },
    )
    .unwrap();
    let model = CraveModel::new(cfg.model).unwrap();

    // Label records so that one generator dominates: the top half by fused
    // score becomes "alpha", the bottom half "beta".
    let scored = crave::harness::train::score_records(&model, &manifest).unwrap();
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.fused.partial_cmp(&scored[a].1.fused).unwrap());
    for (pos, &idx) in order.iter().enumerate() {
        manifest.records[idx].generator =
            Some(if pos < scored.len() / 2 { "alpha".into() } else { "beta".into() });
    }

    let ranking = crave::harness::train::rank_generators(&model, &manifest).unwrap();
    assert_eq!(ranking[0].0, "alpha", "dominant generator must rank first");
    assert_eq!(ranking[1].0, "beta");
    assert!(ranking[0].1 > ranking[1].1);

    // Stable under record shuffling.
    let mut shuffled = manifest.clone();
    shuffled.records.rotate_left(5);
    shuffled.records.swap(0, 3);
    assert_eq!(
        crave::harness::train::rank_generators(&model, &shuffled).unwrap(),
        ranking
    );
    pass(11, "generator ranking dominance and stability");
}

/// Sanity net for the whole suite: TooFewItems and similar errors keep
/// their types through the harness (used by several criteria above).
#[test]
fn harness_error_types_survive_composition() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = overfit_config(991);
    cfg.probe_epochs = 1;
    cfg.finetune_epochs = 0;
    let manifest = synth::write_synthetic_corpus(
        dir.path(),
        &cfg.model.encoder,
        &CorpusOptions { n: 6, seed: 991, t: 8, h: 32, w: 32, plan: MosPlan::AllFeatures },
    )
    .unwrap();
    assert!(matches!(
        kfold_evaluate(&manifest, &cfg, 6),
        Err(HarnessError::TooFewItems { .. })
    ));
}
