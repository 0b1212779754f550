//! The training loop (linear probe, then full fine-tune), evaluation,
//! k-fold cross-validation and zero-shot generator ranking.
//!
//! Frozen encoder features are computed once per record; every optimisation
//! step rebuilds the batch graph from the current parameters, so gradients
//! always match the forward pass exactly. Everything is seeded and single
//! threaded, which keeps checkpoints byte-reproducible.

use std::collections::HashMap;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Record};
use super::HarnessError;
use crate::autodiff::{Graph, Tensor};
use crate::metrics::{self, CorrelationReport};
use crate::model::{param_group, BranchScores, CraveModel, ModelConfig, ParamGroup, RecordFeatures};
use crate::objective::LossConfig;
use crate::text::{LexiconTagger, PromptText};
use crate::video;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSchedule {
    /// Probe heads/adapter/fusion first, then additionally unfreeze the
    /// backbone projections.
    ProbeFinetune,
    /// One phase with everything (except the frozen text/visual encoders)
    /// trainable, for `alt_total_epochs`.
    SingleSplit,
}

impl TrainSchedule {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "probe_finetune" => Ok(TrainSchedule::ProbeFinetune),
            "single_split" => Ok(TrainSchedule::SingleSplit),
            other => Err(HarnessError::Parse(format!("unknown schedule {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainSchedule::ProbeFinetune => "probe_finetune",
            TrainSchedule::SingleSplit => "single_split",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub probe_epochs: usize,
    pub finetune_epochs: usize,
    pub alt_total_epochs: usize,
    pub schedule: TrainSchedule,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            probe_epochs: 20,
            finetune_epochs: 10,
            alt_total_epochs: 40,
            schedule: TrainSchedule::ProbeFinetune,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(HarnessError::Parse(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Parse("batch_size must be >= 1".into()));
        }
        let epochs = match self.schedule {
            TrainSchedule::ProbeFinetune => self.probe_epochs + self.finetune_epochs,
            TrainSchedule::SingleSplit => self.alt_total_epochs,
        };
        if epochs == 0 {
            return Err(HarnessError::Parse("schedule has zero epochs".into()));
        }
        self.model.validate()?;
        Ok(())
    }

    /// Applies one seed to the training loop, the model init and the
    /// encoders.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self.model.encoder.seed = seed;
        self
    }
}

/// Parses the flat key=value config-file format. Unknown keys are errors.
pub fn parse_train_config(text: &str) -> Result<TrainConfig, HarnessError> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Parse(format!("line {}: expected key=value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = |e: String| HarnessError::Parse(format!("{k}: {e}"));
        match k {
            "probe_epochs" => cfg.probe_epochs = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "finetune_epochs" => cfg.finetune_epochs = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "alt_total_epochs" => cfg.alt_total_epochs = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "schedule" => cfg.schedule = TrainSchedule::parse(v)?,
            "learning_rate" => cfg.learning_rate = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "batch_size" => cfg.batch_size = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "seed" => {
                let seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                cfg = cfg.with_seed(seed);
            }
            "gamma" => cfg.loss.gamma = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "rank_margin" => cfg.loss.rank_margin = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "eps" => cfg.loss.eps = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "frames_sampled" => cfg.model.encoder.frames_sampled = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "flow_frames" => cfg.model.encoder.flow_frames = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "dim_spatial" => {
                cfg.model.encoder.dims.spatial = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                cfg.model.adapter.channels = cfg.model.encoder.dims.spatial;
            }
            "dim_aesthetic" => cfg.model.encoder.dims.aesthetic = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "dim_technical" => cfg.model.encoder.dims.technical = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "dim_flow" => cfg.model.encoder.dims.flow = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "dim_action" => cfg.model.encoder.dims.action = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "dim_text" => cfg.model.encoder.dims.text = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "adapter_variant" => cfg.model.adapter.variant = crate::model::AdapterVariant::parse(v)?,
            "kernel_t" => cfg.model.adapter.kernel_t = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "levels" => cfg.model.levels = ModelConfig::parse_levels(v)?,
            "motion" => cfg.model.motion = crate::model::MotionMode::parse(v)?,
            "hmm_hidden" => cfg.model.hmm_hidden = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "hmm_out" => cfg.model.hmm_out = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            other => return Err(HarnessError::Parse(format!("unknown config key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Training-set loss after each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Batches skipped because their MOS targets were constant or the tail
    /// batch had fewer than two records.
    pub skipped_batches: usize,
}

pub struct Trained {
    pub model: CraveModel,
    pub log: TrainLog,
    /// Human-readable training provenance stored in the checkpoint.
    pub meta: String,
}

/// First-order adaptive-moment optimiser with the conventional moment
/// defaults.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(lr: f64, model: &CraveModel) -> Self {
        let zeros: Vec<Tensor> =
            (0..model.params().len()).map(|i| model.params().tensor_at(i).zeros_like()).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update to the listed parameter indices.
    fn step(&mut self, model: &mut CraveModel, grads: &[Option<Tensor>], trainable: &[usize]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for &idx in trainable {
            let tensor = model.params_mut().tensor_at_mut(idx);
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for e in 0..tensor.len() {
                let g = grads[idx].as_ref().map_or(0.0, |t| t.data()[e]);
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * g;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * g * g;
                let mh = m[e] / bc1;
                let vh = v[e] / bc2;
                tensor.data_mut()[e] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Loads every clip and computes its frozen features and MOS target.
pub fn precompute_features(
    model: &CraveModel,
    manifest: &DatasetManifest,
) -> Result<Vec<RecordFeatures>, HarnessError> {
    let mut out = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        let clip = video::load_video(&manifest.frames_path(record), 24.0)?;
        let prompt = PromptText::new(&record.prompt);
        out.push(model.extract_features(&clip, &prompt)?);
    }
    Ok(out)
}

fn build_loss<'a>(
    model: &CraveModel,
    g: &mut Graph,
    features: impl Iterator<Item = &'a RecordFeatures>,
    targets: &[f64],
    loss_cfg: &LossConfig,
) -> (crate::autodiff::NodeId, crate::model::ParamNodes) {
    let params = model.params().register(g);
    let fused: Vec<_> = features.map(|f| model.build_scores(g, &params, f).fused).collect();
    let pred = g.stack_scalars(&fused);
    let target = g.leaf(Tensor::vector(targets.to_vec()));
    let plcc = g.plcc_loss(pred, target, loss_cfg.eps);
    let rank = g.rank_loss(pred, target, loss_cfg.rank_margin);
    (g.add_scaled(plcc, rank, loss_cfg.gamma), params)
}

/// Loss and per-parameter gradients over one batch.
pub fn batch_loss_and_grads(
    model: &CraveModel,
    features: &[&RecordFeatures],
    targets: &[f64],
    loss_cfg: &LossConfig,
) -> (f64, Vec<Option<Tensor>>) {
    let mut g = Graph::new();
    let (loss, params) =
        build_loss(model, &mut g, features.iter().copied(), targets, loss_cfg);
    let grads = g.backward(loss);
    let value = g.value(loss).as_scalar();
    let per_param: Vec<Option<Tensor>> = (0..model.params().len())
        .map(|i| grads.get(params.id_at(i)).cloned())
        .collect();
    (value, per_param)
}

/// Training-set loss with the current parameters, forward only.
pub fn dataset_loss(
    model: &CraveModel,
    features: &[RecordFeatures],
    targets: &[f64],
    loss_cfg: &LossConfig,
) -> f64 {
    let mut g = Graph::new();
    let (loss, _) = build_loss(model, &mut g, features.iter(), targets, loss_cfg);
    g.value(loss).as_scalar()
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

use rand::SeedableRng;

fn trainable_indices(model: &CraveModel, include_backbone: bool) -> Vec<usize> {
    (0..model.params().len())
        .filter(|&i| {
            include_backbone || param_group(model.params().name_at(i)) == ParamGroup::Head
        })
        .collect()
}

/// Trains a freshly initialised model on the manifest. Every record needs a
/// MOS. Text and visual encoders have no trainable parameters at all; the
/// probe phase additionally freezes the backbone projections.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Trained, HarnessError> {
    train_with_tagger(manifest, cfg, LexiconTagger::small_english())
}

pub fn train_with_tagger(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    tagger: LexiconTagger,
) -> Result<Trained, HarnessError> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if manifest.len() < 2 {
        return Err(HarnessError::TooFewItems { needed: 2, got: manifest.len() });
    }
    let targets = manifest.mos_vector()?;
    let mut model = CraveModel::new(cfg.model)?.with_tagger(tagger);
    let features = precompute_features(&model, manifest)?;

    let phases: Vec<(usize, bool)> = match cfg.schedule {
        TrainSchedule::ProbeFinetune => {
            vec![(cfg.probe_epochs, false), (cfg.finetune_epochs, true)]
        }
        TrainSchedule::SingleSplit => vec![(cfg.alt_total_epochs, true)],
    };

    let mut adam = Adam::new(cfg.learning_rate, &model);
    let mut log = TrainLog::default();
    let mut epoch_counter = 0u64;
    for (epochs, include_backbone) in &phases {
        let trainable = trainable_indices(&model, *include_backbone);
        for _ in 0..*epochs {
            epoch_counter += 1;
            let order = shuffled_indices(manifest.len(), cfg.seed, epoch_counter);
            for chunk in order.chunks(cfg.batch_size) {
                if chunk.len() < 2 {
                    log.skipped_batches += 1;
                    continue;
                }
                let batch_targets: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                if batch_targets.iter().all(|v| *v == batch_targets[0]) {
                    log.skipped_batches += 1;
                    continue;
                }
                let batch_features: Vec<&RecordFeatures> =
                    chunk.iter().map(|&i| &features[i]).collect();
                let (_, grads) =
                    batch_loss_and_grads(&model, &batch_features, &batch_targets, &cfg.loss);
                adam.step(&mut model, &grads, &trainable);
            }
            log.epoch_losses.push(dataset_loss(&model, &features, &targets, &cfg.loss));
        }
    }

    let meta = format!(
        "schedule={}\nprobe_epochs={}\nfinetune_epochs={}\nalt_total_epochs={}\n\
         learning_rate={}\nbatch_size={}\ntrain_seed={}\ngamma={}\n\
         probe_trainable=adapter,projection,vh,hmm,fusion\n\
         finetune_trainable=adapter,projection,vh,hmm,fusion,enc\n\
         frozen=spatial_encoder,text_encoder\n",
        cfg.schedule.name(),
        cfg.probe_epochs,
        cfg.finetune_epochs,
        cfg.alt_total_epochs,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.seed,
        cfg.loss.gamma,
    );
    Ok(Trained { model, log, meta })
}

/// Per-record branch scores in manifest order. Never needs MOS.
pub fn score_records(
    model: &CraveModel,
    manifest: &DatasetManifest,
) -> Result<Vec<(String, BranchScores)>, HarnessError> {
    let mut out = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        let clip = video::load_video(&manifest.frames_path(record), 24.0)?;
        let prompt = PromptText::new(&record.prompt);
        let scores = model.predict(&clip, &prompt)?;
        out.push((record.video_id.clone(), scores));
    }
    Ok(out)
}

/// Correlations between fused predictions and stored MOS.
pub fn evaluate(
    model: &CraveModel,
    manifest: &DatasetManifest,
) -> Result<CorrelationReport, HarnessError> {
    let mos = manifest.mos_vector()?;
    let scored = score_records(model, manifest)?;
    let pred: Vec<f64> = scored.iter().map(|(_, s)| s.fused).collect();
    evaluate_scores(&pred, &mos)
}

pub fn evaluate_scores(pred: &[f64], mos: &[f64]) -> Result<CorrelationReport, HarnessError> {
    Ok(CorrelationReport::compute(pred, mos)?)
}

#[derive(Debug, Clone)]
pub struct KfoldReport {
    pub per_fold: Vec<CorrelationReport>,
    pub mean: CorrelationReport,
    pub plan: metrics::FoldPlan,
}

fn subset(manifest: &DatasetManifest, indices: &[usize]) -> DatasetManifest {
    let records: Vec<Record> =
        indices.iter().map(|&i| manifest.records[i].clone()).collect();
    let mut sub = DatasetManifest::new(records).expect("subset of a valid manifest");
    sub.base_dir = manifest.base_dir.clone();
    sub
}

/// For each fold: re-initialise from the seed, train on the complement,
/// evaluate on the fold. Means are arithmetic over folds.
pub fn kfold_evaluate(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    k: usize,
) -> Result<KfoldReport, HarnessError> {
    let n = manifest.len();
    let plan = metrics::make_folds(n, k, cfg.seed)?;
    for fold in 0..k {
        let size = plan.fold_indices(fold).len();
        if size < 2 {
            return Err(HarnessError::TooFewItems { needed: 2, got: size });
        }
    }
    let mut per_fold = Vec::with_capacity(k);
    for fold in 0..k {
        let train_set = subset(manifest, &plan.complement_indices(fold));
        let test_set = subset(manifest, &plan.fold_indices(fold));
        let trained = train(&train_set, cfg)?;
        per_fold.push(evaluate(&trained.model, &test_set)?);
    }
    let kf = k as f64;
    let mean = CorrelationReport {
        srcc: per_fold.iter().map(|r| r.srcc).sum::<f64>() / kf,
        plcc: per_fold.iter().map(|r| r.plcc).sum::<f64>() / kf,
        krcc: per_fold.iter().map(|r| r.krcc).sum::<f64>() / kf,
        n: per_fold.iter().map(|r| r.n).sum(),
    };
    Ok(KfoldReport { per_fold, mean, plan })
}

/// Groups fused scores by generator label: mean per group, sorted by score
/// descending with lexicographic tie-break.
pub fn rank_from_scores(pairs: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    for (label, score) in pairs {
        let entry = sums.entry(label.as_str()).or_insert((0.0, 0));
        entry.0 += score;
        entry.1 += 1;
    }
    let mut out: Vec<(String, f64)> =
        sums.into_iter().map(|(label, (sum, n))| (label.to_string(), sum / n as f64)).collect();
    out.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0))
    });
    out
}

/// Zero-shot ranking: every record must carry a generator label.
pub fn rank_generators(
    model: &CraveModel,
    manifest: &DatasetManifest,
) -> Result<Vec<(String, f64)>, HarnessError> {
    let mut labelled = Vec::with_capacity(manifest.len());
    let scored = score_records(model, manifest)?;
    for (record, (_, scores)) in manifest.records.iter().zip(&scored) {
        let label = record
            .generator
            .clone()
            .ok_or_else(|| HarnessError::NoLabels(record.video_id.clone()))?;
        labelled.push((label, scores.fused));
    }
    Ok(rank_from_scores(&labelled))
}
