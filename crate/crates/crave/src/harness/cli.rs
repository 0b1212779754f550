//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on data or processing errors (with a
//! diagnostic on stderr), 2 on usage errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::manifest::load_manifest;
use super::train::{
    evaluate, kfold_evaluate, parse_train_config, rank_generators, score_records,
    train_with_tagger, TrainConfig, TrainSchedule,
};
use super::HarnessError;
use crate::checkpoint;
use crate::metrics;
use crate::study::{self, PipelineOrder, ScreeningConfig};
use crate::text::LexiconTagger;

#[derive(Parser)]
#[command(
    name = "crave",
    version,
    about = "Quality evaluation for text-driven AI-generated videos",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed applied to training, model init and encoders.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value training configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `token<TAB>TAG` lexicon for the phrase chunker.
    #[arg(long, global = true)]
    pos_lexicon: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    /// Screen raw scores first, then z-score the survivors.
    RawFirst,
    /// Z-score first, then screen the normalised table.
    ZscoreFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    ProbeFinetune,
    SingleSplit,
}

#[derive(Subcommand)]
enum Command {
    /// Annotation table -> screened, z-scored MOS plus a screening report.
    ProcessStudy {
        table: PathBuf,
        #[arg(long, default_value = "mos.tsv")]
        output: PathBuf,
        #[arg(long, default_value = "screening_report.txt")]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = OrderArg::RawFirst)]
        order: OrderArg,
        #[arg(long, default_value_t = 0.05)]
        r1: f64,
        #[arg(long, default_value_t = 0.3)]
        r2: f64,
    },
    /// Train on a manifest and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        schedule: Option<ScheduleArg>,
    },
    /// Score every manifest record -> TSV of per-video branch scores.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SRCC / PLCC / KRCC of fused scores against stored MOS.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation: train on k-1 folds, evaluate on the rest.
    Kfold {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank generator labels by mean fused score.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scatter + quartic-fit curve data from a score file and manifest MOS.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => parse_train_config(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn load_tagger(cli: &Cli) -> Result<LexiconTagger, HarnessError> {
    match &cli.pos_lexicon {
        Some(path) => Ok(LexiconTagger::from_path(path)?),
        None => Ok(LexiconTagger::small_english()),
    }
}

fn load_model(cli: &Cli, path: &Path) -> Result<crate::model::CraveModel, HarnessError> {
    let loaded = checkpoint::load(path)?;
    Ok(loaded.into_model()?.with_tagger(load_tagger(cli)?))
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::ProcessStudy { table, output, report, order, r1, r2 } => {
            let raw = study::load_table(table)?;
            let thresholds = ScreeningConfig { r1: *r1, r2: *r2 };
            let pipeline_order = match order {
                OrderArg::RawFirst => PipelineOrder::ScreenThenZscore,
                OrderArg::ZscoreFirst => PipelineOrder::ZscoreThenScreen,
            };
            let (mos, screening) = study::process_study(&raw, &thresholds, pipeline_order)?;
            std::fs::write(output, mos.to_tsv())?;
            screening.write(report)?;
            println!(
                "processed {} videos x {} annotators; rejected: [{}]",
                raw.n_videos(),
                raw.n_annotators(),
                screening.rejected_annotators.join(", ")
            );
            Ok(())
        }
        Command::Train { manifest, out, schedule } => {
            let mut cfg = load_config(&cli)?;
            if let Some(s) = schedule {
                cfg.schedule = match s {
                    ScheduleArg::ProbeFinetune => TrainSchedule::ProbeFinetune,
                    ScheduleArg::SingleSplit => TrainSchedule::SingleSplit,
                };
            }
            let data = load_manifest(manifest)?;
            let trained = train_with_tagger(&data, &cfg, load_tagger(&cli)?)?;
            checkpoint::save(out, &cfg.model, trained.model.params(), &trained.meta)?;
            for (epoch, loss) in trained.log.epoch_losses.iter().enumerate() {
                println!("epoch {}\tloss {loss}", epoch + 1);
            }
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Score { checkpoint: ckpt, manifest, out } => {
            let model = load_model(&cli, ckpt)?;
            let data = load_manifest(manifest)?;
            let scored = score_records(&model, &data)?;
            let mut text = String::from("video_id\to_vh\to_align\to_hmm\tfused\n");
            for (id, s) in &scored {
                let _ = writeln!(
                    text,
                    "{id}\t{:.9}\t{:.9}\t{:.9}\t{:.9}",
                    s.o_vh, s.o_align, s.o_hmm, s.fused
                );
            }
            std::fs::write(out, text)?;
            println!("scored {} records", scored.len());
            Ok(())
        }
        Command::Eval { checkpoint: ckpt, manifest, out } => {
            let model = load_model(&cli, ckpt)?;
            let data = load_manifest(manifest)?;
            let report = evaluate(&model, &data)?;
            let mut text = report.to_text();
            // A quartic remap of the predictions is the usual companion
            // number; report it alongside the raw PLCC when computable.
            let mos = data.mos_vector()?;
            let scored = score_records(&model, &data)?;
            let pred: Vec<f64> = scored.iter().map(|(_, s)| s.fused).collect();
            if pred.len() >= 5 {
                if let Ok(coeffs) = metrics::poly4_fit(&pred, &mos) {
                    let mapped: Vec<f64> =
                        pred.iter().map(|&x| metrics::poly4_eval(&coeffs, x)).collect();
                    if let Ok(p) = metrics::plcc(&mapped, &mos) {
                        let _ = writeln!(text, "plcc_poly4\t{p}");
                    }
                }
            }
            write_or_print(out.as_ref(), &text)
        }
        Command::Kfold { manifest, k, out } => {
            let cfg = load_config(&cli)?;
            let data = load_manifest(manifest)?;
            let report = kfold_evaluate(&data, &cfg, *k)?;
            let mut text = String::new();
            for (i, fold) in report.per_fold.iter().enumerate() {
                let _ = writeln!(
                    text,
                    "fold {i}\tsrcc {}\tplcc {}\tkrcc {}\tn {}",
                    fold.srcc, fold.plcc, fold.krcc, fold.n
                );
            }
            let _ = writeln!(
                text,
                "mean\tsrcc {}\tplcc {}\tkrcc {}\tn {}",
                report.mean.srcc, report.mean.plcc, report.mean.krcc, report.mean.n
            );
            write_or_print(out.as_ref(), &text)
        }
        Command::Rank { checkpoint: ckpt, manifest, out } => {
            let model = load_model(&cli, ckpt)?;
            let data = load_manifest(manifest)?;
            let ranking = rank_generators(&model, &data)?;
            let mut text = String::from("rank\tgenerator\tmean_fused\n");
            for (i, (label, score)) in ranking.iter().enumerate() {
                let _ = writeln!(text, "{}\t{label}\t{score}", i + 1);
            }
            write_or_print(out.as_ref(), &text)
        }
        Command::Plot { scores, manifest, out, samples } => {
            let data = load_manifest(manifest)?;
            let mos = data.mos_vector()?;
            let pred = read_fused_scores(scores, &data)?;
            let coeffs = metrics::poly4_fit(&pred, &mos)?;
            metrics::write_plot_data(out, &pred, &mos, &coeffs, *samples)?;
            println!("plot data written to {}", out.display());
            Ok(())
        }
    }
}

/// Reads the fused column of a score file, aligned to manifest order.
fn read_fused_scores(
    path: &Path,
    manifest: &super::manifest::DatasetManifest,
) -> Result<Vec<f64>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut by_id = std::collections::HashMap::new();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| HarnessError::Parse("empty score file".into()))?;
    if header != "video_id\to_vh\to_align\to_hmm\tfused" {
        return Err(HarnessError::Parse(format!("bad score header {header:?}")));
    }
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 5 {
            return Err(HarnessError::Parse(format!("score line {} malformed", lineno + 2)));
        }
        let fused = cells[4]
            .parse::<f64>()
            .map_err(|e| HarnessError::Parse(format!("line {}: {e}", lineno + 2)))?;
        by_id.insert(cells[0].to_string(), fused);
    }
    manifest
        .records
        .iter()
        .map(|r| {
            by_id
                .get(&r.video_id)
                .copied()
                .ok_or_else(|| HarnessError::Parse(format!("no score for {}", r.video_id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_vec(args: &[&str]) -> i32 {
        run(args.iter().map(|s| s.to_string()))
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run_vec(&["crave", "frobnicate"]), 2);
        assert_eq!(run_vec(&["crave"]), 2);
    }

    #[test]
    fn missing_required_flag_is_a_usage_error() {
        assert_eq!(run_vec(&["crave", "train", "--manifest", "x.tsv"]), 2);
    }

    #[test]
    fn missing_input_file_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.tsv");
        assert_eq!(
            run_vec(&["crave", "process-study", missing.to_str().unwrap()]),
            1
        );
    }
}
