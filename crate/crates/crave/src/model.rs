//! The evaluator network: three branch scores over frozen encoder features
//! and a learned affine fusion.
//!
//! * visual harmony: affine head over aesthetic ++ technical features;
//! * text-temporal alignment: temporal adapter over spatial tokens,
//!   projected into text space and scored as a summed cosine against the
//!   granularity bundle;
//! * motion fidelity: feed-forward network over flow ++ action features.
//!
//! The spatial and text encoders are pure seeded functions and stay frozen;
//! the aesthetic / technical / flow / action projections live in the
//! parameter store as the "backbone" group so the fine-tune phase can
//! unfreeze them, while the probe phase trains heads, adapter and fusion
//! only. All forward math runs on the autodiff tape, so inference and
//! training share one implementation.

use std::collections::HashMap;

use ndarray::Array3;
use thiserror::Error;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::encoders::{
    self, ActionEncoder, AestheticEncoder, EncoderConfig, EncoderError, FlowEncoder,
    SpatialEncoder, TechnicalEncoder, TextEncoder,
};
use crate::text::{
    build_bundle, chunk_phrases, GranularityBundle, LevelSet, LexiconTagger, PromptText, TextError,
};
use crate::video::FrameStack;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("need at least {needed} frames for the temporal adapter, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("zero-norm vector in cosine alignment")]
    ZeroVector,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterVariant {
    /// Mean-pool the tokens straight into the projection.
    None,
    /// Depthwise 1-D convolution along time with a gated identity path.
    Pseudo3dConv,
    /// Single-head attention along time per token position.
    TemporalAttention,
    /// Flatten time into the token axis and mix with one dense layer.
    StGraph,
}

impl AdapterVariant {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "none" => Ok(AdapterVariant::None),
            "pseudo3dconv" => Ok(AdapterVariant::Pseudo3dConv),
            "temporal_attention" => Ok(AdapterVariant::TemporalAttention),
            "st_graph" => Ok(AdapterVariant::StGraph),
            other => Err(ModelError::ConfigParse(format!("unknown adapter variant {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdapterVariant::None => "none",
            AdapterVariant::Pseudo3dConv => "pseudo3dconv",
            AdapterVariant::TemporalAttention => "temporal_attention",
            AdapterVariant::StGraph => "st_graph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalAdapterConfig {
    pub variant: AdapterVariant,
    pub kernel_t: usize,
    pub channels: usize,
}

impl Default for TemporalAdapterConfig {
    fn default() -> Self {
        TemporalAdapterConfig {
            variant: AdapterVariant::Pseudo3dConv,
            kernel_t: 3,
            channels: Dims::default_spatial(),
        }
    }
}

struct Dims;
impl Dims {
    fn default_spatial() -> usize {
        encoders::Dims::default().spatial
    }
}

/// Which motion features feed the motion-fidelity branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    None,
    /// Action features only.
    HighLevel,
    /// Flow features only.
    LowLevel,
    Hybrid,
}

impl MotionMode {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "none" => Ok(MotionMode::None),
            "high_level" => Ok(MotionMode::HighLevel),
            "low_level" => Ok(MotionMode::LowLevel),
            "hybrid" => Ok(MotionMode::Hybrid),
            other => Err(ModelError::ConfigParse(format!("unknown motion mode {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MotionMode::None => "none",
            MotionMode::HighLevel => "high_level",
            MotionMode::LowLevel => "low_level",
            MotionMode::Hybrid => "hybrid",
        }
    }

    fn uses_flow(&self) -> bool {
        matches!(self, MotionMode::LowLevel | MotionMode::Hybrid)
    }

    fn uses_action(&self) -> bool {
        matches!(self, MotionMode::HighLevel | MotionMode::Hybrid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub adapter: TemporalAdapterConfig,
    pub levels: LevelSet,
    pub motion: MotionMode,
    pub hmm_hidden: usize,
    pub hmm_out: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            adapter: TemporalAdapterConfig::default(),
            levels: LevelSet::COMBINED,
            motion: MotionMode::Hybrid,
            hmm_hidden: 16,
            hmm_out: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.adapter.kernel_t == 0 || self.adapter.kernel_t.is_multiple_of(2) {
            return Err(ModelError::BadDims(format!(
                "kernel_t must be odd and >= 1, got {}",
                self.adapter.kernel_t
            )));
        }
        if self.adapter.channels != self.encoder.dims.spatial {
            return Err(ModelError::BadDims(format!(
                "adapter channels {} must equal spatial dim {}",
                self.adapter.channels, self.encoder.dims.spatial
            )));
        }
        if self.adapter.variant == AdapterVariant::Pseudo3dConv
            && self.encoder.frames_sampled < self.adapter.kernel_t
        {
            return Err(ModelError::TooFewFrames {
                needed: self.adapter.kernel_t,
                got: self.encoder.frames_sampled,
            });
        }
        if self.hmm_hidden == 0 || self.hmm_out == 0 {
            return Err(ModelError::BadDims("hmm dims must be >= 1".into()));
        }
        Ok(())
    }

    fn level_names(levels: &LevelSet) -> String {
        let mut parts = Vec::new();
        if levels.paragraph {
            parts.push("paragraph");
        }
        if levels.phrase {
            parts.push("phrase");
        }
        if levels.word {
            parts.push("word");
        }
        parts.join(",")
    }

    pub fn parse_levels(s: &str) -> Result<LevelSet, ModelError> {
        let mut set = LevelSet::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "paragraph" | "global" => set.paragraph = true,
                "phrase" | "local" => set.phrase = true,
                "word" | "individual" => set.word = true,
                "none" => {}
                "combined" => set = LevelSet::COMBINED,
                other => {
                    return Err(ModelError::ConfigParse(format!("unknown level {other:?}")))
                }
            }
        }
        Ok(set)
    }

    /// Canonical key=value text. The checkpoint hash is computed over this,
    /// and `parse` reads it back.
    pub fn canonical(&self) -> String {
        let d = &self.encoder.dims;
        format!(
            "encoder.frames_sampled={}\nencoder.flow_frames={}\nencoder.seed={}\n\
             dims.spatial={}\ndims.aesthetic={}\ndims.technical={}\ndims.flow={}\n\
             dims.action={}\ndims.text={}\nadapter.variant={}\nadapter.kernel_t={}\n\
             adapter.channels={}\nlevels={}\nmotion={}\nhmm_hidden={}\nhmm_out={}\nseed={}\n",
            self.encoder.frames_sampled,
            self.encoder.flow_frames,
            self.encoder.seed,
            d.spatial,
            d.aesthetic,
            d.technical,
            d.flow,
            d.action,
            d.text,
            self.adapter.variant.name(),
            self.adapter.kernel_t,
            self.adapter.channels,
            Self::level_names(&self.levels),
            self.motion.name(),
            self.hmm_hidden,
            self.hmm_out,
            self.seed,
        )
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut map = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::ConfigParse(format!("bad line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k).cloned().ok_or_else(|| ModelError::ConfigParse(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?.parse::<usize>().map_err(|e| ModelError::ConfigParse(format!("{k}: {e}")))
        };
        let num64 = |k: &str| -> Result<u64, ModelError> {
            get(k)?.parse::<u64>().map_err(|e| ModelError::ConfigParse(format!("{k}: {e}")))
        };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                frames_sampled: num("encoder.frames_sampled")?,
                flow_frames: num("encoder.flow_frames")?,
                dims: encoders::Dims {
                    spatial: num("dims.spatial")?,
                    aesthetic: num("dims.aesthetic")?,
                    technical: num("dims.technical")?,
                    flow: num("dims.flow")?,
                    action: num("dims.action")?,
                    text: num("dims.text")?,
                },
                seed: num64("encoder.seed")?,
            },
            adapter: TemporalAdapterConfig {
                variant: AdapterVariant::parse(&get("adapter.variant")?)?,
                kernel_t: num("adapter.kernel_t")?,
                channels: num("adapter.channels")?,
            },
            levels: Self::parse_levels(&get("levels")?)?,
            motion: MotionMode::parse(&get("motion")?)?,
            hmm_hidden: num("hmm_hidden")?,
            hmm_out: num("hmm_out")?,
            seed: num64("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which parameters a training phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Heads, adapter, projection and fusion: trainable from the start.
    Head,
    /// Aesthetic / technical / flow / action projections standing in for
    /// the pretrained backbones: unfrozen only in the fine-tune phase.
    Backbone,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("enc.") {
        ParamGroup::Backbone
    } else {
        ParamGroup::Head
    }
}

/// Biases that shift every prediction by the same constant: the heads that
/// sit behind purely linear paths (`vh.b` and `enc.aes.b` reach the output
/// through the affine harmony head; `hmm.ffn2.b`, `hmm.head.b` and
/// `fusion.b` sit after the last nonlinearity). The training objective
/// (correlation + pairwise rank) is invariant under a uniform shift of the
/// predictions, so these receive only float-dust gradients and effectively
/// stay at their initial value.
pub fn translation_invariant_param(name: &str) -> bool {
    matches!(name, "vh.b" | "enc.aes.b" | "hmm.ffn2.b" | "hmm.head.b" | "fusion.b")
}

/// Named parameter tensors in fixed insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), ModelError> {
        match self.index.get(name) {
            Some(&i) => {
                assert_eq!(
                    self.tensors[i].shape(),
                    tensor.shape(),
                    "shape change for parameter {name}"
                );
                self.tensors[i] = tensor;
                Ok(())
            }
            None => Err(ModelError::UnknownParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Register every parameter as a graph leaf; ids align with store order.
    pub fn register(&self, g: &mut Graph) -> ParamNodes {
        ParamNodes { ids: self.tensors.iter().map(|t| g.leaf(t.clone())).collect() }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

pub struct ParamNodes {
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn id_at(&self, i: usize) -> NodeId {
        self.ids[i]
    }
}

/// The three branch scalars and their fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchScores {
    pub o_vh: f64,
    pub o_align: f64,
    pub o_hmm: f64,
    pub fused: f64,
}

/// Frozen per-record features: everything `predict` needs besides the
/// trainable parameters. Computing these once per record makes training
/// loops cheap.
#[derive(Debug, Clone)]
pub struct RecordFeatures {
    pub aes_stats: Vec<f64>,
    pub tech_stats: Vec<f64>,
    pub flow_summary: Vec<f64>,
    pub action_summary: Vec<f64>,
    pub tokens: Array3<f64>,
    /// Present granularity-level vectors, in (paragraph, phrase, word) order.
    pub anchors: Vec<Vec<f64>>,
}

/// Node ids of one record's scores inside a graph.
pub struct ScoreNodes {
    pub o_vh: NodeId,
    pub o_align: NodeId,
    pub o_hmm: NodeId,
    pub fused: NodeId,
}

const SALT_ADAPTER: u64 = 0x41445054;
const SALT_HEADS: u64 = 0x48454144;

pub struct CraveModel {
    pub cfg: ModelConfig,
    params: ParamStore,
    spatial: SpatialEncoder,
    text: TextEncoder,
    tagger: LexiconTagger,
}

impl CraveModel {
    /// Seeded initialisation: heads and adapter from the model seed,
    /// backbone projections copied from the seeded reference encoders.
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.encoder.dims;
        let mut params = ParamStore::new();

        let mut rng = encoders::salted_rng(cfg.seed, SALT_ADAPTER);
        match cfg.adapter.variant {
            AdapterVariant::None => {}
            AdapterVariant::Pseudo3dConv => {
                let k = cfg.adapter.kernel_t;
                params.push(
                    "adapter.conv.w",
                    matrix_from(encoders::uniform_matrix(&mut rng, d.spatial, k)),
                );
                params.push("adapter.conv.b", Tensor::vector(vec![0.0; d.spatial]));
                params.push("adapter.conv.gate", Tensor::scalar(1.0));
            }
            AdapterVariant::TemporalAttention => {
                for name in ["adapter.attn.wq", "adapter.attn.wk", "adapter.attn.wv"] {
                    params.push(
                        name,
                        matrix_from(encoders::uniform_matrix(&mut rng, d.spatial, d.spatial)),
                    );
                }
            }
            AdapterVariant::StGraph => {
                params.push(
                    "adapter.graph.w",
                    matrix_from(encoders::uniform_matrix(&mut rng, d.spatial, d.spatial)),
                );
                params.push("adapter.graph.b", Tensor::vector(vec![0.0; d.spatial]));
            }
        }

        let mut rng = encoders::salted_rng(cfg.seed, SALT_HEADS);
        params.push("proj.w", matrix_from(encoders::uniform_matrix(&mut rng, d.text, d.spatial)));
        params.push("proj.b", Tensor::vector(vec![0.0; d.text]));
        let vh_in = d.aesthetic + d.technical;
        params.push(
            "vh.w",
            Tensor::vector(
                encoders::uniform_vector(&mut rng, vh_in, 1.0 / (vh_in as f64).sqrt()).to_vec(),
            ),
        );
        params.push("vh.b", Tensor::scalar(0.0));
        let hmm_in = d.flow + d.action;
        params.push(
            "hmm.ffn1.w",
            matrix_from(encoders::uniform_matrix(&mut rng, cfg.hmm_hidden, hmm_in)),
        );
        params.push("hmm.ffn1.b", Tensor::vector(vec![0.0; cfg.hmm_hidden]));
        params.push(
            "hmm.ffn2.w",
            matrix_from(encoders::uniform_matrix(&mut rng, cfg.hmm_out, cfg.hmm_hidden)),
        );
        params.push("hmm.ffn2.b", Tensor::vector(vec![0.0; cfg.hmm_out]));
        params.push(
            "hmm.head.w",
            Tensor::vector(
                encoders::uniform_vector(&mut rng, cfg.hmm_out, 1.0 / (cfg.hmm_out as f64).sqrt())
                    .to_vec(),
            ),
        );
        params.push("hmm.head.b", Tensor::scalar(0.0));
        params.push(
            "fusion.w",
            Tensor::vector(encoders::uniform_vector(&mut rng, 3, 1.0 / 3f64.sqrt()).to_vec()),
        );
        params.push("fusion.b", Tensor::scalar(0.0));

        // Backbone projections, initialised exactly as the reference
        // encoders so an untrained model reproduces them.
        let aes = AestheticEncoder::new(&cfg.encoder);
        params.push("enc.aes.w", matrix_from(aes.w));
        params.push("enc.aes.b", Tensor::vector(aes.b.to_vec()));
        let tech = TechnicalEncoder::new(&cfg.encoder);
        params.push("enc.tech.gains", Tensor::vector(tech.gains.to_vec()));
        let flow = FlowEncoder::new(&cfg.encoder);
        params.push("enc.flow.w", matrix_from(flow.w));
        params.push("enc.flow.b", Tensor::vector(flow.b.to_vec()));
        let act = ActionEncoder::new(&cfg.encoder);
        params.push("enc.act.w", matrix_from(act.w));

        Ok(CraveModel {
            spatial: SpatialEncoder::new(&cfg.encoder),
            text: TextEncoder::new(&cfg.encoder),
            tagger: LexiconTagger::small_english(),
            cfg,
            params,
        })
    }

    /// Rebuild from a loaded checkpoint.
    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let fresh = CraveModel::new(cfg)?;
        if fresh.params.names() != params.names() {
            return Err(ModelError::ConfigParse(
                "checkpoint parameters do not match the configuration".into(),
            ));
        }
        for (name, tensor) in params.iter() {
            if fresh.params.get(name).shape() != tensor.shape() {
                return Err(ModelError::BadDims(format!("parameter {name} shape mismatch")));
            }
        }
        Ok(CraveModel { params, ..fresh })
    }

    pub fn with_tagger(mut self, tagger: LexiconTagger) -> Self {
        self.tagger = tagger;
        self
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Everything frozen for one record: encoder stats, spatial tokens and
    /// the granularity anchors.
    pub fn extract_features(
        &self,
        v: &FrameStack,
        prompt: &PromptText,
    ) -> Result<RecordFeatures, ModelError> {
        if prompt.is_empty() {
            return Err(EncoderError::EmptyPrompt.into());
        }
        let tokens = self.spatial.encode(v)?;
        let anchors = if self.cfg.levels.is_empty() {
            Vec::new()
        } else {
            let (f_enc, f_word) = self.text.encode(&tokens, prompt)?;
            let tags = self.tagger.tag(&prompt.word_tokens);
            let spans = chunk_phrases(&prompt.word_tokens, &tags)?;
            let bundle = build_bundle(&f_enc, &f_word, &spans, self.cfg.levels)?;
            bundle_anchors(&bundle)?
        };
        Ok(RecordFeatures {
            aes_stats: encoders::aesthetic_stats(v, self.cfg.encoder.frames_sampled),
            tech_stats: encoders::technical_stats(v, self.cfg.encoder.frames_sampled),
            flow_summary: encoders::flow_summary(v, &self.cfg.encoder)?,
            action_summary: encoders::action_summary(v, &self.cfg.encoder)?,
            tokens,
            anchors,
        })
    }

    /// Builds the full three-branch forward pass for one record on `g`.
    pub fn build_scores(
        &self,
        g: &mut Graph,
        params: &ParamNodes,
        feat: &RecordFeatures,
    ) -> ScoreNodes {
        let pid = |name: &str| params.id_at(self.params.index[name]);

        // Visual harmony branch.
        let aes_in = g.leaf(Tensor::vector(feat.aes_stats.clone()));
        let aes = {
            let (w, b) = (pid("enc.aes.w"), pid("enc.aes.b"));
            g.affine(w, aes_in, b)
        };
        let tech_in = g.leaf(Tensor::vector(feat.tech_stats.clone()));
        let tech = {
            let gains = pid("enc.tech.gains");
            g.gain_tile(gains, tech_in)
        };
        let vh_in = g.concat(&[aes, tech]);
        let o_vh = {
            let (w, b) = (pid("vh.w"), pid("vh.b"));
            g.affine_scalar(w, vh_in, b)
        };

        // Alignment branch.
        let tokens = g.leaf(tensor_from_tokens(&feat.tokens));
        let pooled = self.build_adapter(g, params, tokens);
        let f_v = {
            let (w, b) = (pid("proj.w"), pid("proj.b"));
            g.affine(w, pooled, b)
        };
        let o_align = if feat.anchors.is_empty() {
            g.leaf(Tensor::scalar(0.0))
        } else {
            let anchor_ids: Vec<NodeId> =
                feat.anchors.iter().map(|a| g.leaf(Tensor::vector(a.clone()))).collect();
            g.cosine_sum(f_v, &anchor_ids)
        };

        // Motion branch; a disabled side is a constant zero feature.
        let flow_feat = if self.cfg.motion.uses_flow() {
            let input = g.leaf(Tensor::vector(feat.flow_summary.clone()));
            let (w, b) = (pid("enc.flow.w"), pid("enc.flow.b"));
            g.affine(w, input, b)
        } else {
            g.leaf(Tensor::vector(vec![0.0; self.cfg.encoder.dims.flow]))
        };
        let action_feat = if self.cfg.motion.uses_action() {
            let input = g.leaf(Tensor::vector(feat.action_summary.clone()));
            let w = pid("enc.act.w");
            let zero = g.leaf(Tensor::vector(vec![0.0; self.cfg.encoder.dims.action]));
            g.affine(w, input, zero)
        } else {
            g.leaf(Tensor::vector(vec![0.0; self.cfg.encoder.dims.action]))
        };
        let o_hmm = self.build_hmm_head(g, params, flow_feat, action_feat);

        let branches = g.stack_scalars(&[o_vh, o_align, o_hmm]);
        let fused = {
            let (w, b) = (pid("fusion.w"), pid("fusion.b"));
            g.affine_scalar(w, branches, b)
        };
        ScoreNodes { o_vh, o_align, o_hmm, fused }
    }

    fn build_adapter(&self, g: &mut Graph, params: &ParamNodes, tokens: NodeId) -> NodeId {
        let pid = |name: &str| params.id_at(self.params.index[name]);
        match self.cfg.adapter.variant {
            AdapterVariant::None => g.pool_tokens(tokens),
            AdapterVariant::Pseudo3dConv => {
                let (w, b, gate) =
                    (pid("adapter.conv.w"), pid("adapter.conv.b"), pid("adapter.conv.gate"));
                let mixed = g.temporal_conv(w, b, gate, tokens);
                g.pool_tokens(mixed)
            }
            AdapterVariant::TemporalAttention => {
                let (wq, wk, wv) =
                    (pid("adapter.attn.wq"), pid("adapter.attn.wk"), pid("adapter.attn.wv"));
                let mixed = g.temporal_attention(wq, wk, wv, tokens);
                g.pool_tokens(mixed)
            }
            AdapterVariant::StGraph => {
                let (w, b) = (pid("adapter.graph.w"), pid("adapter.graph.b"));
                let mixed = g.token_dense(w, b, tokens);
                g.pool_tokens(mixed)
            }
        }
    }

    fn build_hmm_head(
        &self,
        g: &mut Graph,
        params: &ParamNodes,
        flow_feat: NodeId,
        action_feat: NodeId,
    ) -> NodeId {
        let pid = |name: &str| params.id_at(self.params.index[name]);
        let joined = g.concat(&[flow_feat, action_feat]);
        let h1 = {
            let (w, b) = (pid("hmm.ffn1.w"), pid("hmm.ffn1.b"));
            let lin = g.affine(w, joined, b);
            g.relu(lin)
        };
        let z = {
            let (w, b) = (pid("hmm.ffn2.w"), pid("hmm.ffn2.b"));
            g.affine(w, h1, b)
        };
        let (w, b) = (pid("hmm.head.w"), pid("hmm.head.b"));
        g.affine_scalar(w, z, b)
    }

    /// Scores one record from precomputed features.
    pub fn predict_features(&self, feat: &RecordFeatures) -> BranchScores {
        let mut g = Graph::new();
        let params = self.params.register(&mut g);
        let nodes = self.build_scores(&mut g, &params, feat);
        let scores = BranchScores {
            o_vh: g.value(nodes.o_vh).as_scalar(),
            o_align: g.value(nodes.o_align).as_scalar(),
            o_hmm: g.value(nodes.o_hmm).as_scalar(),
            fused: g.value(nodes.fused).as_scalar(),
        };
        debug_assert!(scores.o_align.abs() <= self.cfg.levels.count() as f64 + 1e-9);
        scores
    }

    pub fn predict(&self, v: &FrameStack, prompt: &PromptText) -> Result<BranchScores, ModelError> {
        let feat = self.extract_features(v, prompt)?;
        Ok(self.predict_features(&feat))
    }

    /// Temporal adapter + pooling + projection on raw spatial tokens.
    pub fn temporal_adapt(&self, tokens: &Array3<f64>) -> Result<Vec<f64>, ModelError> {
        let (t, _, d) = tokens.dim();
        if self.cfg.adapter.variant == AdapterVariant::Pseudo3dConv && t < self.cfg.adapter.kernel_t
        {
            return Err(ModelError::TooFewFrames { needed: self.cfg.adapter.kernel_t, got: t });
        }
        if d != self.cfg.encoder.dims.spatial {
            return Err(ModelError::BadDims(format!(
                "token channel dim {d} != spatial dim {}",
                self.cfg.encoder.dims.spatial
            )));
        }
        let mut g = Graph::new();
        let params = self.params.register(&mut g);
        let input = g.leaf(tensor_from_tokens(tokens));
        let pooled = self.build_adapter(&mut g, &params, input);
        let pid = |name: &str| params.id_at(self.params.index[name]);
        let f_v = {
            let (w, b) = (pid("proj.w"), pid("proj.b"));
            g.affine(w, pooled, b)
        };
        Ok(g.value(f_v).data().to_vec())
    }

    /// Visual-harmony head over explicit feature vectors.
    pub fn vh_from_features(&self, aesthetic: &[f64], technical: &[f64]) -> f64 {
        let mut g = Graph::new();
        let params = self.params.register(&mut g);
        let pid = |name: &str| params.id_at(self.params.index[name]);
        let a = g.leaf(Tensor::vector(aesthetic.to_vec()));
        let t = g.leaf(Tensor::vector(technical.to_vec()));
        let joined = g.concat(&[a, t]);
        let (w, b) = (pid("vh.w"), pid("vh.b"));
        let out = g.affine_scalar(w, joined, b);
        g.value(out).as_scalar()
    }

    /// Full visual-harmony branch on a clip with the current parameters.
    pub fn visual_harmony(&self, v: &FrameStack) -> Result<f64, ModelError> {
        let aes_stats = encoders::aesthetic_stats(v, self.cfg.encoder.frames_sampled);
        let tech_stats = encoders::technical_stats(v, self.cfg.encoder.frames_sampled);
        let mut g = Graph::new();
        let params = self.params.register(&mut g);
        let pid = |name: &str| params.id_at(self.params.index[name]);
        let aes_in = g.leaf(Tensor::vector(aes_stats));
        let aes = {
            let (w, b) = (pid("enc.aes.w"), pid("enc.aes.b"));
            g.affine(w, aes_in, b)
        };
        let tech_in = g.leaf(Tensor::vector(tech_stats));
        let tech = {
            let gains = pid("enc.tech.gains");
            g.gain_tile(gains, tech_in)
        };
        let joined = g.concat(&[aes, tech]);
        let (w, b) = (pid("vh.w"), pid("vh.b"));
        let out = g.affine_scalar(w, joined, b);
        Ok(g.value(out).as_scalar())
    }

    /// Motion-fidelity head over explicit (post-projection) features,
    /// honouring the configured ablation mask.
    pub fn hmm_score(&self, flow_feat: &[f64], action_feat: &[f64]) -> Result<f64, ModelError> {
        let d = self.cfg.encoder.dims;
        if flow_feat.len() != d.flow || action_feat.len() != d.action {
            return Err(ModelError::BadDims(format!(
                "expected flow {} / action {}, got {} / {}",
                d.flow,
                d.action,
                flow_feat.len(),
                action_feat.len()
            )));
        }
        let mut g = Graph::new();
        let params = self.params.register(&mut g);
        let flow = if self.cfg.motion.uses_flow() { flow_feat.to_vec() } else { vec![0.0; d.flow] };
        let action = if self.cfg.motion.uses_action() {
            action_feat.to_vec()
        } else {
            vec![0.0; d.action]
        };
        let f = g.leaf(Tensor::vector(flow));
        let a = g.leaf(Tensor::vector(action));
        let out = self.build_hmm_head(&mut g, &params, f, a);
        Ok(g.value(out).as_scalar())
    }
}

/// `sum_l cos(F_l, F_v)` over the present levels; both sides must have
/// non-zero norm.
pub fn align_score(f_v: &[f64], bundle: &GranularityBundle) -> Result<f64, ModelError> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(f_v);
    if nv == 0.0 {
        return Err(ModelError::ZeroVector);
    }
    let mut total = 0.0;
    for level in bundle.present_vectors() {
        let lv = level.as_slice().expect("contiguous level vector");
        if lv.len() != f_v.len() {
            return Err(ModelError::BadDims(format!(
                "level dim {} != visual dim {}",
                lv.len(),
                f_v.len()
            )));
        }
        let nl = norm(lv);
        if nl == 0.0 {
            return Err(ModelError::ZeroVector);
        }
        total += lv.iter().zip(f_v).map(|(a, b)| a * b).sum::<f64>() / (nl * nv);
    }
    Ok(total)
}

fn bundle_anchors(bundle: &GranularityBundle) -> Result<Vec<Vec<f64>>, ModelError> {
    let mut anchors = Vec::new();
    for level in bundle.present_vectors() {
        let v = level.to_vec();
        if v.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            return Err(ModelError::ZeroVector);
        }
        anchors.push(v);
    }
    Ok(anchors)
}

fn matrix_from(m: ndarray::Array2<f64>) -> Tensor {
    let (r, c) = m.dim();
    Tensor::matrix(r, c, m.into_iter().collect())
}

fn tensor_from_tokens(tokens: &Array3<f64>) -> Tensor {
    let (t, n, d) = tokens.dim();
    Tensor::tokens(t, n, d, tokens.iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                frames_sampled: 4,
                flow_frames: 4,
                dims: encoders::Dims {
                    spatial: 5,
                    aesthetic: 4,
                    technical: 4,
                    flow: 6,
                    action: 4,
                    text: 7,
                },
                seed,
            },
            adapter: TemporalAdapterConfig {
                variant: AdapterVariant::Pseudo3dConv,
                kernel_t: 3,
                channels: 5,
            },
            levels: LevelSet::COMBINED,
            motion: MotionMode::Hybrid,
            hmm_hidden: 6,
            hmm_out: 4,
            seed,
        }
    }

    fn rand_tokens(seed: u64, t: usize, n: usize, d: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((t, n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn config_canonical_roundtrip() {
        let cfg = small_cfg(11);
        let parsed = ModelConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn config_rejects_even_kernel_and_channel_mismatch() {
        let mut cfg = small_cfg(1);
        cfg.adapter.kernel_t = 2;
        assert!(matches!(cfg.validate(), Err(ModelError::BadDims(_))));
        let mut cfg = small_cfg(1);
        cfg.adapter.channels = 9;
        assert!(matches!(cfg.validate(), Err(ModelError::BadDims(_))));
    }

    #[test]
    fn adapter_averaging_kernel_collapses_constant_time() {
        let cfg = small_cfg(3);
        let mut model = CraveModel::new(cfg).unwrap();
        let d = cfg.encoder.dims.spatial;
        // Averaging kernel, zero bias, zero identity path.
        model
            .params_mut()
            .set("adapter.conv.w", Tensor::matrix(d, 3, vec![1.0 / 3.0; d * 3]))
            .unwrap();
        model.params_mut().set("adapter.conv.gate", Tensor::scalar(0.0)).unwrap();

        let frame = rand_tokens(5, 1, 4, d);
        let mut tokens = Array3::zeros((3, 4, d));
        for t in 0..3 {
            for n in 0..4 {
                for di in 0..d {
                    tokens[(t, n, di)] = frame[(0, n, di)];
                }
            }
        }
        let adapted = model.temporal_adapt(&tokens).unwrap();

        // Single-frame pooled projection, computed by hand.
        let mut pooled = vec![0.0; d];
        for n in 0..4 {
            for di in 0..d {
                pooled[di] += frame[(0, n, di)] / 4.0;
            }
        }
        let w = model.params().get("proj.w");
        let b = model.params().get("proj.b");
        for r in 0..w.shape()[0] {
            let mut acc = b.data()[r];
            for c in 0..d {
                acc += w.at2(r, c) * pooled[c];
            }
            assert!((adapted[r] - acc).abs() < 1e-12, "row {r}");
        }
    }

    #[test]
    fn adapter_identity_kernel_equals_pure_pooling() {
        let cfg = small_cfg(4);
        let mut model = CraveModel::new(cfg).unwrap();
        let d = cfg.encoder.dims.spatial;
        // Identity at centre tap, zero residual path.
        let mut kernel = vec![0.0; d * 3];
        for di in 0..d {
            kernel[di * 3 + 1] = 1.0;
        }
        model.params_mut().set("adapter.conv.w", Tensor::matrix(d, 3, kernel)).unwrap();
        model.params_mut().set("adapter.conv.gate", Tensor::scalar(0.0)).unwrap();

        let tokens = rand_tokens(6, 4, 3, d);
        let adapted = model.temporal_adapt(&tokens).unwrap();

        // Pooling oracle: mean over (T, N) then the projection.
        let (t, n, _) = tokens.dim();
        let mut pooled = vec![0.0; d];
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    pooled[di] += tokens[(ti, ni, di)] / (t * n) as f64;
                }
            }
        }
        let w = model.params().get("proj.w").clone();
        let b = model.params().get("proj.b").clone();
        for r in 0..w.shape()[0] {
            let mut acc = b.data()[r];
            for c in 0..d {
                acc += w.at2(r, c) * pooled[c];
            }
            assert!((adapted[r] - acc).abs() < 1e-9, "row {r}");
        }
    }

    #[test]
    fn adapter_output_dim_is_text_dim_for_all_variants() {
        for variant in [
            AdapterVariant::None,
            AdapterVariant::Pseudo3dConv,
            AdapterVariant::TemporalAttention,
            AdapterVariant::StGraph,
        ] {
            let mut cfg = small_cfg(6);
            cfg.adapter.variant = variant;
            let model = CraveModel::new(cfg).unwrap();
            let tokens = rand_tokens(7, 4, 3, cfg.encoder.dims.spatial);
            let out = model.temporal_adapt(&tokens).unwrap();
            assert_eq!(out.len(), cfg.encoder.dims.text, "variant {variant:?}");
        }
    }

    #[test]
    fn adapter_rejects_short_clips() {
        let cfg = small_cfg(6);
        let model = CraveModel::new(cfg).unwrap();
        let tokens = rand_tokens(8, 2, 3, cfg.encoder.dims.spatial);
        assert!(matches!(
            model.temporal_adapt(&tokens),
            Err(ModelError::TooFewFrames { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn vh_head_zero_weights_returns_bias() {
        let cfg = small_cfg(8);
        let mut model = CraveModel::new(cfg).unwrap();
        let vh_in = cfg.encoder.dims.aesthetic + cfg.encoder.dims.technical;
        model.params_mut().set("vh.w", Tensor::vector(vec![0.0; vh_in])).unwrap();
        model.params_mut().set("vh.b", Tensor::scalar(2.5)).unwrap();
        let v = synth::noise_video(31, 4, 16, 16);
        assert_eq!(model.visual_harmony(&v).unwrap(), 2.5);
    }

    #[test]
    fn vh_concat_order_matters_and_head_is_affine() {
        let cfg = small_cfg(9);
        let model = CraveModel::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let aes: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tech: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct = model.vh_from_features(&aes, &tech);
        let swapped = model.vh_from_features(&tech, &aes);
        assert!((direct - swapped).abs() > 1e-9, "generic head must notice the order");

        let bias = model.params().get("vh.b").as_scalar();
        let alpha = 2.3;
        let scaled_aes: Vec<f64> = aes.iter().map(|v| v * alpha).collect();
        let scaled_tech: Vec<f64> = tech.iter().map(|v| v * alpha).collect();
        let scaled = model.vh_from_features(&scaled_aes, &scaled_tech);
        assert!((scaled - bias - alpha * (direct - bias)).abs() < 1e-9);
    }

    #[test]
    fn align_score_examples_and_invariance() {
        let f_v = vec![1.0, 0.0, 0.0];
        let bundle = GranularityBundle {
            paragraph: Some(Array1::from_vec(f_v.clone())),
            phrase: Some(Array1::from_vec(f_v.clone())),
            word: Some(Array1::from_vec(f_v.clone())),
            levels_present: vec![],
            phrase_from_fallback: false,
        };
        assert!((align_score(&f_v, &bundle).unwrap() - 3.0).abs() < 1e-12);

        let ortho = GranularityBundle {
            paragraph: Some(Array1::from_vec(vec![0.0, 1.0, 0.0])),
            phrase: Some(Array1::from_vec(vec![0.0, 0.0, 1.0])),
            word: None,
            levels_present: vec![],
            phrase_from_fallback: false,
        };
        assert_eq!(align_score(&f_v, &ortho).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bundle = GranularityBundle {
                paragraph: Some(Array1::from_vec(b.clone())),
                phrase: None,
                word: Some(Array1::from_vec(c.clone())),
                levels_present: vec![],
                phrase_from_fallback: false,
            };
            let base = align_score(&a, &bundle).unwrap();
            // Brute-force cosine oracle.
            let cos = |x: &[f64], y: &[f64]| {
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (nx * ny)
            };
            assert!((base - (cos(&b, &a) + cos(&c, &a))).abs() < 1e-9);

            let scaled_fv: Vec<f64> = a.iter().map(|v| v * 3.7).collect();
            let scaled_bundle = GranularityBundle {
                paragraph: Some(Array1::from_vec(b.iter().map(|v| v * 0.2).collect())),
                phrase: None,
                word: Some(Array1::from_vec(c.iter().map(|v| v * 9.1).collect())),
                levels_present: vec![],
                phrase_from_fallback: false,
            };
            assert!((align_score(&scaled_fv, &scaled_bundle).unwrap() - base).abs() < 1e-9);
        }

        assert!(matches!(align_score(&[1.0, 2.0], &ortho), Err(ModelError::BadDims(_))));
        let zero = vec![0.0; 3];
        assert!(matches!(align_score(&zero, &bundle), Err(ModelError::ZeroVector)));
    }

    #[test]
    fn hmm_zero_weights_give_bias_and_low_level_ignores_action() {
        let mut cfg = small_cfg(10);
        cfg.motion = MotionMode::LowLevel;
        let mut model = CraveModel::new(cfg).unwrap();
        let flow = vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.3];
        let action = vec![1.0, 2.0, 3.0, 4.0];
        let perturbed = vec![-9.0, 5.0, 0.0, 7.0];
        let a = model.hmm_score(&flow, &action).unwrap();
        let b = model.hmm_score(&flow, &perturbed).unwrap();
        assert_eq!(a, b, "low-level mode must ignore action features");

        for name in ["hmm.ffn1.w", "hmm.ffn2.w", "hmm.head.w"] {
            let shape = model.params().get(name).shape().to_vec();
            let len: usize = shape.iter().product();
            let zeros = if shape.len() == 2 {
                Tensor::matrix(shape[0], shape[1], vec![0.0; len])
            } else {
                Tensor::vector(vec![0.0; len])
            };
            model.params_mut().set(name, zeros).unwrap();
        }
        model.params_mut().set("hmm.head.b", Tensor::scalar(-1.25)).unwrap();
        assert_eq!(model.hmm_score(&flow, &action).unwrap(), -1.25);
    }

    #[test]
    fn hmm_matches_dense_oracle() {
        let cfg = small_cfg(12);
        let model = CraveModel::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flow: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = model.hmm_score(&flow, &action).unwrap();

        // Hand-rolled matrix arithmetic.
        let p = model.params();
        let joined: Vec<f64> = flow.iter().chain(&action).cloned().collect();
        let w1 = p.get("hmm.ffn1.w");
        let b1 = p.get("hmm.ffn1.b");
        let h1: Vec<f64> = (0..w1.shape()[0])
            .map(|r| {
                let mut acc = b1.data()[r];
                for c in 0..joined.len() {
                    acc += w1.at2(r, c) * joined[c];
                }
                acc.max(0.0)
            })
            .collect();
        let w2 = p.get("hmm.ffn2.w");
        let b2 = p.get("hmm.ffn2.b");
        let z: Vec<f64> = (0..w2.shape()[0])
            .map(|r| {
                let mut acc = b2.data()[r];
                for c in 0..h1.len() {
                    acc += w2.at2(r, c) * h1[c];
                }
                acc
            })
            .collect();
        let wh = p.get("hmm.head.w");
        let expect = p.get("hmm.head.b").as_scalar()
            + wh.data().iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        assert!((got - expect).abs() < 1e-6);
    }

    #[test]
    fn predict_is_deterministic_and_fusion_is_affine() {
        let cfg = small_cfg(14);
        let mut model = CraveModel::new(cfg).unwrap();
        let v = synth::moving_dot_video(41, 4, 16, 16, 1.0, 0.05);
        let prompt = PromptText::new("a red fox runs over the icy river");
        let s1 = model.predict(&v, &prompt).unwrap();
        let s2 = model.predict(&v, &prompt).unwrap();
        assert_eq!(s1, s2, "prediction must be bitwise deterministic");
        assert!(s1.o_align.abs() <= 3.0);

        model.params_mut().set("fusion.w", Tensor::vector(vec![1.0, 1.0, 1.0])).unwrap();
        model.params_mut().set("fusion.b", Tensor::scalar(0.0)).unwrap();
        let s = model.predict(&v, &prompt).unwrap();
        assert!((s.fused - (s.o_vh + s.o_align + s.o_hmm)).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_composed_oracle_chain() {
        let cfg = small_cfg(15);
        let model = CraveModel::new(cfg).unwrap();
        for vid_seed in [51u64, 52] {
            let v = synth::moving_dot_video(vid_seed, 4, 16, 16, 1.5, 0.1);
            let prompt = PromptText::new("the golden kite drifts across a vast misty sky");
            let scores = model.predict(&v, &prompt).unwrap();
            let feat = model.extract_features(&v, &prompt).unwrap();
            let p = model.params();

            // o_vh oracle.
            let matvec = |w: &Tensor, x: &[f64], b: Option<&Tensor>| -> Vec<f64> {
                (0..w.shape()[0])
                    .map(|r| {
                        let mut acc = b.map_or(0.0, |t| t.data()[r]);
                        for c in 0..x.len() {
                            acc += w.at2(r, c) * x[c];
                        }
                        acc
                    })
                    .collect()
            };
            let aes = matvec(p.get("enc.aes.w"), &feat.aes_stats, Some(p.get("enc.aes.b")));
            let gains = p.get("enc.tech.gains");
            let tech: Vec<f64> = (0..gains.len())
                .map(|j| gains.data()[j] * feat.tech_stats[j % feat.tech_stats.len()])
                .collect();
            let vh_in: Vec<f64> = aes.iter().chain(&tech).cloned().collect();
            let o_vh = p.get("vh.b").as_scalar()
                + p.get("vh.w").data().iter().zip(&vh_in).map(|(a, b)| a * b).sum::<f64>();
            assert!((scores.o_vh - o_vh).abs() < 1e-5);

            // o_align oracle through temporal_adapt + cosine sum.
            let f_v = model.temporal_adapt(&feat.tokens).unwrap();
            let cos = |x: &[f64], y: &[f64]| {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (nx * ny)
            };
            let o_align: f64 = feat.anchors.iter().map(|a| cos(a, &f_v)).sum();
            assert!((scores.o_align - o_align).abs() < 1e-5);

            // o_hmm oracle via the public head on projected features.
            let flow_feat =
                matvec(p.get("enc.flow.w"), &feat.flow_summary, Some(p.get("enc.flow.b")));
            let action_feat = matvec(p.get("enc.act.w"), &feat.action_summary, None);
            let o_hmm = model.hmm_score(&flow_feat, &action_feat).unwrap();
            assert!((scores.o_hmm - o_hmm).abs() < 1e-5);

            let fused = p.get("fusion.b").as_scalar()
                + p.get("fusion.w").data()[0] * o_vh
                + p.get("fusion.w").data()[1] * o_align
                + p.get("fusion.w").data()[2] * o_hmm;
            assert!((scores.fused - fused).abs() < 1e-5);
        }
    }

    #[test]
    fn none_adapter_routes_pooled_tokens_to_projection() {
        let mut cfg = small_cfg(16);
        cfg.adapter.variant = AdapterVariant::None;
        let model = CraveModel::new(cfg).unwrap();
        let tokens = rand_tokens(61, 4, 3, cfg.encoder.dims.spatial);
        let out = model.temporal_adapt(&tokens).unwrap();

        let (t, n, d) = tokens.dim();
        let mut pooled = vec![0.0; d];
        for ti in 0..t {
            for ni in 0..n {
                for di in 0..d {
                    pooled[di] += tokens[(ti, ni, di)] / (t * n) as f64;
                }
            }
        }
        let w = model.params().get("proj.w");
        let b = model.params().get("proj.b");
        for r in 0..w.shape()[0] {
            let mut acc = b.data()[r];
            for c in 0..d {
                acc += w.at2(r, c) * pooled[c];
            }
            assert!((out[r] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_level_set_yields_zero_alignment() {
        let mut cfg = small_cfg(18);
        cfg.levels = LevelSet::NONE;
        let model = CraveModel::new(cfg).unwrap();
        let v = synth::moving_dot_video(43, 4, 16, 16, 1.0, 0.0);
        let prompt = PromptText::new("a silver boat sails past the quiet harbor");
        let scores = model.predict(&v, &prompt).unwrap();
        assert_eq!(scores.o_align, 0.0);
    }

    #[test]
    fn alignment_bound_follows_level_count() {
        let v = synth::moving_dot_video(44, 4, 16, 16, 1.0, 0.05);
        let prompt = PromptText::new("the gentle dancer spins through an emerald garden");
        for (levels, bound) in [
            (LevelSet::GLOBAL, 1.0),
            (LevelSet::LOCAL, 1.0),
            (LevelSet::INDIVIDUAL, 1.0),
            (LevelSet::COMBINED, 3.0),
        ] {
            let mut cfg = small_cfg(19);
            cfg.levels = levels;
            let model = CraveModel::new(cfg).unwrap();
            let scores = model.predict(&v, &prompt).unwrap();
            assert!(
                scores.o_align.abs() <= bound + 1e-12,
                "levels {levels:?}: |o_align| = {}",
                scores.o_align.abs()
            );
        }
    }
}
