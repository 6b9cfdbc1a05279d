//! Sub-CNN, fullband baseline and joint subband network.
//!
//! A sub-CNN is nine 3x3 conv blocks (conv, batch norm, ReLU) with 2x2 max
//! pooling after blocks 2, 4, 6, 8 and 9, global average pooling, a 32-unit
//! embedding layer and a single sigmoid output. The fullband baseline is the
//! same network on all 257 bins. The joint model drops the output layer of
//! each sub-CNN, concatenates the 32-dim embeddings in ascending frequency
//! order and classifies them with a 256-128-1 feed-forward head.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{Spectrogram, N_FRAMES};
use crate::nn::{
    bce_with_logits, sigmoid, BatchNorm, Buffer, Conv3x3, Dropout, GlobalAvgPool, Layer, Linear,
    MaxPool2, NnRng, Param, Relu, Stack, Tensor,
};
use crate::subband::{crop, SubSpectrogram, SubbandPlan};

pub const FULL_CHANNELS: [usize; 9] = [16, 16, 32, 32, 64, 64, 128, 128, 256];
pub const REDUCED_CHANNELS: [usize; 9] = [4, 4, 8, 8, 8, 8, 16, 16, 16];
/// 1-based conv blocks followed by max pooling.
pub const POOL_AFTER: [usize; 5] = [2, 4, 6, 8, 9];
pub const EMBEDDING_DIM: usize = 32;
pub const DROPOUT: f64 = 0.5;
pub const HEAD_UNITS: [usize; 2] = [256, 128];
/// Band widths produced by the 1/2/4/8-way plans.
pub const SUPPORTED_WIDTHS: [usize; 7] = [32, 33, 64, 65, 128, 129, 257];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCnnConfig {
    pub input_frames: usize,
    pub input_bins: usize,
    pub conv_channels: Vec<usize>,
    pub pool_after: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout: f64,
}

/// Channel schedule preset. `Full` is the full-size stack; `Reduced` keeps
/// the same depth and pooling but far fewer channels for CPU experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    Reduced,
}

impl Profile {
    pub fn config(self, input_bins: usize) -> SubCnnConfig {
        let channels = match self {
            Profile::Full => FULL_CHANNELS.to_vec(),
            Profile::Reduced => REDUCED_CHANNELS.to_vec(),
        };
        SubCnnConfig {
            input_frames: N_FRAMES,
            input_bins,
            conv_channels: channels,
            pool_after: POOL_AFTER.to_vec(),
            embedding_dim: EMBEDDING_DIM,
            dropout: DROPOUT,
        }
    }
}

impl SubCnnConfig {
    /// Checks that the stack is well formed and the input survives pooling.
    pub fn validate_geometry(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelConfig(m));
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!("conv channels {:?}", self.conv_channels));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.pool_after.windows(2).any(|w| w[0] >= w[1])
            || self
                .pool_after
                .iter()
                .any(|&p| p == 0 || p > self.conv_channels.len())
        {
            return bad(format!("pool schedule {:?}", self.pool_after));
        }
        let shrink = 1usize << self.pool_after.len();
        if self.input_frames < shrink || self.input_bins < shrink {
            return bad(format!(
                "input {}x{} too small for {} pooling layers",
                self.input_frames,
                self.input_bins,
                self.pool_after.len()
            ));
        }
        Ok(())
    }

    /// The standard architecture: 9 conv, 5 pool, 32-dim embedding,
    /// 300-frame input, and a width produced by a supported subband plan.
    pub fn validate(&self) -> Result<()> {
        self.validate_geometry()?;
        if self.conv_channels.len() != 9 || self.pool_after.len() != 5 {
            return Err(Error::ModelConfig(format!(
                "expected 9 conv and 5 pooling layers, got {} and {}",
                self.conv_channels.len(),
                self.pool_after.len()
            )));
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::ModelConfig(format!(
                "embedding_dim must be {EMBEDDING_DIM}"
            )));
        }
        if self.input_frames != N_FRAMES {
            return Err(Error::ModelConfig(format!(
                "input_frames must be {N_FRAMES}"
            )));
        }
        if !SUPPORTED_WIDTHS.contains(&self.input_bins) {
            return Err(Error::ModelConfig(format!(
                "unsupported input width {} (expected one of {SUPPORTED_WIDTHS:?})",
                self.input_bins
            )));
        }
        Ok(())
    }

    /// Same layer structure, ignoring the input width.
    pub fn same_backbone(&self, other: &SubCnnConfig) -> bool {
        self.conv_channels == other.conv_channels
            && self.pool_after == other.pool_after
            && self.embedding_dim == other.embedding_dim
            && self.input_frames == other.input_frames
    }
}

/// Which band of which plan a sub-CNN was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandAssignment {
    pub n_splits: usize,
    pub band: usize,
}

fn embedding_stack(cfg: &SubCnnConfig, rng: &mut NnRng) -> Stack {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for (i, &out_ch) in cfg.conv_channels.iter().enumerate() {
        layers.push(Layer::Conv(Conv3x3::new(&format!("conv{i}"), in_ch, out_ch, rng)));
        layers.push(Layer::Norm(BatchNorm::new(&format!("bn{i}"), out_ch)));
        layers.push(Layer::Relu(Relu::default()));
        if cfg.pool_after.contains(&(i + 1)) {
            layers.push(Layer::Pool(MaxPool2::default()));
        }
        in_ch = out_ch;
    }
    layers.push(Layer::Gap(GlobalAvgPool::default()));
    layers.push(Layer::Dropout(Dropout::new(cfg.dropout)));
    layers.push(Layer::Linear(Linear::new("fc", in_ch, cfg.embedding_dim, false, rng)));
    layers.push(Layer::Norm(BatchNorm::new("fc_bn", cfg.embedding_dim)));
    layers.push(Layer::Relu(Relu::default()));
    Stack::new(layers)
}

fn output_stack(in_features: usize, dropout: f64, rng: &mut NnRng) -> Stack {
    Stack::new(vec![
        Layer::Dropout(Dropout::new(dropout)),
        Layer::Linear(Linear::new("out", in_features, 1, true, rng)),
    ])
}

fn head_stack(in_features: usize, dropout: f64, rng: &mut NnRng) -> Stack {
    let mut layers = Vec::new();
    let mut width = in_features;
    for (i, &units) in HEAD_UNITS.iter().enumerate() {
        layers.push(Layer::Dropout(Dropout::new(dropout)));
        layers.push(Layer::Linear(Linear::new(&format!("fc{}", i + 1), width, units, false, rng)));
        layers.push(Layer::Norm(BatchNorm::new(&format!("bn{}", i + 1), units)));
        layers.push(Layer::Relu(Relu::default()));
        width = units;
    }
    layers.push(Layer::Dropout(Dropout::new(dropout)));
    layers.push(Layer::Linear(Linear::new("out", width, 1, true, rng)));
    Stack::new(layers)
}

/// Stack equally sized matrices into an `N x 1 x frames x bins` tensor.
pub fn batch_tensor(items: &[&Spectrogram]) -> Result<Tensor> {
    let (frames, bins) = items
        .first()
        .map(|s| s.shape())
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let mut data = Vec::with_capacity(items.len() * frames * bins);
    for s in items {
        if s.shape() != (frames, bins) {
            return Err(Error::Shape(format!(
                "batch mixes {frames}x{bins} with {}x{}",
                s.frames(),
                s.bins()
            )));
        }
        data.extend_from_slice(s.as_slice());
    }
    Ok(Tensor::from_vec(items.len(), 1, frames, bins, data))
}

fn logits_of(t: &Tensor) -> Vec<f64> {
    t.data.clone()
}

/// Anything the trainer can fit and score. Inputs are fullband normalized
/// spectrograms; each model crops the bands it needs.
pub trait Classifier {
    /// Evaluation-mode logits (running statistics, no dropout).
    fn logits(&self, specs: &[&Spectrogram]) -> Result<Vec<f64>>;

    /// Training-mode forward and backward for one batch. Gradients are
    /// accumulated into the parameters; returns the mean loss.
    fn accumulate_gradients(
        &mut self,
        specs: &[&Spectrogram],
        targets: &[f64],
        rng: &mut NnRng,
    ) -> Result<f64>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Bonafide posteriors.
    fn scores(&self, specs: &[&Spectrogram]) -> Result<Vec<f64>> {
        Ok(self.logits(specs)?.into_iter().map(sigmoid).collect())
    }
}

#[derive(Debug, Clone)]
pub struct SubCnn {
    config: SubCnnConfig,
    band: Option<BandAssignment>,
    pub(crate) embedding: Stack,
    pub(crate) output: Stack,
}

/// Build a sub-CNN (or the fullband baseline when `input_bins == 257`).
pub fn build_sub_cnn(cfg: SubCnnConfig, seed: u64) -> Result<SubCnn> {
    cfg.validate()?;
    let net = SubCnn::custom(cfg, seed)?;
    log::debug!(
        "built sub-CNN for {} bins with {} parameters",
        net.config.input_bins,
        net.param_count()
    );
    Ok(net)
}

impl SubCnn {
    /// Any geometrically valid configuration, e.g. the shallow stacks used
    /// for gradient checking.
    pub fn custom(cfg: SubCnnConfig, seed: u64) -> Result<Self> {
        cfg.validate_geometry()?;
        let mut rng = NnRng::seed_from_u64(seed);
        let embedding = embedding_stack(&cfg, &mut rng);
        let output = output_stack(cfg.embedding_dim, cfg.dropout, &mut rng);
        Ok(SubCnn {
            config: cfg,
            band: None,
            embedding,
            output,
        })
    }

    pub fn with_band(mut self, band: BandAssignment) -> Self {
        self.band = Some(band);
        self
    }

    pub fn config(&self) -> &SubCnnConfig {
        &self.config
    }

    pub fn band(&self) -> Option<BandAssignment> {
        self.band
    }

    pub fn embedding_stack(&self) -> &Stack {
        &self.embedding
    }

    pub fn output_stack(&self) -> &Stack {
        &self.output
    }

    pub fn param_count(&self) -> usize {
        self.embedding.param_count() + self.output.param_count()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.embedding.params();
        p.extend(self.output.params());
        p
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        let mut b = self.embedding.buffers();
        b.extend(self.output.buffers());
        b
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != 1 || x.h != self.config.input_frames || x.w != self.config.input_bins {
            return Err(Error::Shape(format!(
                "sub-CNN expects 1x{}x{}, got {}x{}x{}",
                self.config.input_frames, self.config.input_bins, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Evaluation-mode 32-dim embeddings, one row per sample.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.embedding.infer(x))
    }

    pub fn logits_tensor(&self, x: &Tensor) -> Result<Vec<f64>> {
        let e = self.embed(x)?;
        Ok(logits_of(&self.output.infer(&e)))
    }

    /// Bonafide posterior for one band matrix.
    pub fn forward_score(&self, s: &SubSpectrogram) -> Result<f64> {
        if let Some(b) = self.band {
            if s.band_index != b.band {
                return Err(Error::Shape(format!(
                    "model trained on band {}, got band {}",
                    b.band, s.band_index
                )));
            }
        }
        let x = batch_tensor(&[&s.values])?;
        Ok(sigmoid(self.logits_tensor(&x)?[0]))
    }

    /// Bonafide posteriors for a batch of band matrices.
    pub fn forward_batch(&self, items: &[&Spectrogram]) -> Result<Vec<f64>> {
        let x = batch_tensor(items)?;
        Ok(self.logits_tensor(&x)?.into_iter().map(sigmoid).collect())
    }

    /// Training-mode loss and gradient accumulation on a prepared tensor.
    pub fn loss_and_gradients(&mut self, x: Tensor, targets: &[f64], rng: &mut NnRng) -> Result<f64> {
        self.check_input(&x)?;
        let e = self.embedding.forward(x, rng);
        let z = self.output.forward(e, rng);
        let (loss, dz) = bce_with_logits(&z.data, targets);
        let de = self
            .output
            .backward(Tensor::flat(z.n, 1, dz), true)
            .expect("output stack returns input gradient");
        self.embedding.backward(de, false);
        Ok(loss)
    }

    /// Training-mode loss without touching gradients' consumers.
    pub fn train_mode_loss(&mut self, x: Tensor, targets: &[f64], rng: &mut NnRng) -> Result<f64> {
        self.check_input(&x)?;
        let e = self.embedding.forward(x, rng);
        let z = self.output.forward(e, rng);
        Ok(bce_with_logits(&z.data, targets).0)
    }

    pub fn params_mut_all(&mut self) -> Vec<&mut Param> {
        let mut p = self.embedding.params_mut();
        p.extend(self.output.params_mut());
        p
    }

    fn band_inputs<'a>(&self, specs: &[&'a Spectrogram]) -> Result<Vec<std::borrow::Cow<'a, Spectrogram>>> {
        use std::borrow::Cow;
        match self.band {
            Some(b) => {
                let plan = SubbandPlan::new(b.n_splits)?;
                specs
                    .iter()
                    .map(|s| crop(s, &plan, b.band).map(|c| Cow::Owned(c.values)))
                    .collect()
            }
            None => Ok(specs.iter().map(|s| Cow::Borrowed(*s)).collect()),
        }
    }
}

impl Classifier for SubCnn {
    fn logits(&self, specs: &[&Spectrogram]) -> Result<Vec<f64>> {
        let inputs = self.band_inputs(specs)?;
        let refs: Vec<&Spectrogram> = inputs.iter().map(|c| c.as_ref()).collect();
        self.logits_tensor(&batch_tensor(&refs)?)
    }

    fn accumulate_gradients(
        &mut self,
        specs: &[&Spectrogram],
        targets: &[f64],
        rng: &mut NnRng,
    ) -> Result<f64> {
        let inputs = self.band_inputs(specs)?;
        let refs: Vec<&Spectrogram> = inputs.iter().map(|c| c.as_ref()).collect();
        let x = batch_tensor(&refs)?;
        self.loss_and_gradients(x, targets, rng)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params_mut_all()
    }
}

/// Concatenation of per-band embedding stages and a feed-forward head.
#[derive(Debug, Clone)]
pub struct JointModel {
    n_splits: usize,
    bands: Vec<usize>,
    configs: Vec<SubCnnConfig>,
    pub(crate) embeddings: Vec<Stack>,
    pub(crate) head: Stack,
    dropout: f64,
}

/// Assemble a joint model over `bands` of `plan` from one sub-CNN per band.
///
/// With `transfer` the embedding stages (weights and batch-norm statistics)
/// are copied from `sub_models`; otherwise they are freshly initialized from
/// `seed`. The head is always Glorot-uniform with zero biases.
pub fn build_joint(
    sub_models: &[SubCnn],
    plan: &SubbandPlan,
    bands: &[usize],
    transfer: bool,
    seed: u64,
) -> Result<JointModel> {
    plan.validate_selection(bands)?;
    if sub_models.len() != bands.len() {
        return Err(Error::ModelConfig(format!(
            "{} sub-CNNs for {} bands",
            sub_models.len(),
            bands.len()
        )));
    }
    let reference = sub_models[0].config();
    for (m, &b) in sub_models.iter().zip(bands) {
        if m.config.input_bins != plan.width(b)? {
            return Err(Error::ModelConfig(format!(
                "band {b} is {} bins wide but its sub-CNN takes {}",
                plan.width(b)?,
                m.config.input_bins
            )));
        }
        if !m.config.same_backbone(reference) {
            return Err(Error::ModelConfig(format!(
                "architecture mismatch between band {} and band {} sub-CNNs",
                bands[0], b
            )));
        }
        if let Some(a) = m.band {
            if a.n_splits != plan.n() || a.band != b {
                return Err(Error::ModelConfig(format!(
                    "sub-CNN trained on band {} of {} used for band {b} of {}",
                    a.band,
                    a.n_splits,
                    plan.n()
                )));
            }
        }
    }
    let mut rng = NnRng::seed_from_u64(seed);
    let embeddings = sub_models
        .iter()
        .map(|m| {
            if transfer {
                m.embedding.clone()
            } else {
                embedding_stack(&m.config, &mut rng)
            }
        })
        .collect();
    let dim: usize = sub_models.iter().map(|m| m.config.embedding_dim).sum();
    let head = head_stack(dim, reference.dropout, &mut rng);
    Ok(JointModel {
        n_splits: plan.n(),
        bands: bands.to_vec(),
        configs: sub_models.iter().map(|m| m.config.clone()).collect(),
        embeddings,
        head,
        dropout: reference.dropout,
    })
}

impl JointModel {
    /// Skeleton with the given structure, used when loading checkpoints.
    pub(crate) fn skeleton(
        n_splits: usize,
        bands: Vec<usize>,
        configs: Vec<SubCnnConfig>,
        dropout: f64,
    ) -> Result<Self> {
        let plan = SubbandPlan::new(n_splits)?;
        plan.validate_selection(&bands)?;
        if configs.len() != bands.len() {
            return Err(Error::ModelConfig("band/config count mismatch".into()));
        }
        let mut rng = NnRng::seed_from_u64(0);
        let mut embeddings = Vec::new();
        for c in &configs {
            c.validate_geometry()?;
            embeddings.push(embedding_stack(c, &mut rng));
        }
        let dim = configs.iter().map(|c| c.embedding_dim).sum();
        let head = head_stack(dim, dropout, &mut rng);
        Ok(JointModel {
            n_splits,
            bands,
            configs,
            embeddings,
            head,
            dropout,
        })
    }

    pub fn n_splits(&self) -> usize {
        self.n_splits
    }

    pub fn bands(&self) -> &[usize] {
        &self.bands
    }

    pub fn configs(&self) -> &[SubCnnConfig] {
        &self.configs
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn embedding_stages(&self) -> &[Stack] {
        &self.embeddings
    }

    pub fn head(&self) -> &Stack {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Stack {
        &mut self.head
    }

    pub fn head_input_dim(&self) -> usize {
        self.configs.iter().map(|c| c.embedding_dim).sum()
    }

    pub fn param_count(&self) -> usize {
        self.embeddings.iter().map(|s| s.param_count()).sum::<usize>() + self.head.param_count()
    }

    fn band_tensors(&self, specs: &[&Spectrogram]) -> Result<Vec<Tensor>> {
        let plan = SubbandPlan::new(self.n_splits)?;
        self.bands
            .iter()
            .map(|&b| {
                let crops = specs
                    .iter()
                    .map(|s| crop(s, &plan, b).map(|c| c.values))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Spectrogram> = crops.iter().collect();
                batch_tensor(&refs)
            })
            .collect()
    }

    fn check_band_tensor(&self, k: usize, x: &Tensor) -> Result<()> {
        let c = &self.configs[k];
        if x.c != 1 || x.h != c.input_frames || x.w != c.input_bins {
            return Err(Error::Shape(format!(
                "band {} expects {}x{}, got {}x{}",
                self.bands[k], c.input_frames, c.input_bins, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Concatenated evaluation-mode embeddings (`N x 32k`).
    pub fn embed_tensors(&self, inputs: &[Tensor]) -> Result<Tensor> {
        if inputs.len() != self.bands.len() {
            return Err(Error::Shape(format!(
                "joint model takes {} bands, got {}",
                self.bands.len(),
                inputs.len()
            )));
        }
        let feats = inputs
            .iter()
            .enumerate()
            .map(|(k, x)| {
                self.check_band_tensor(k, x)?;
                Ok(self.embeddings[k].infer(x))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::concat_features(&feats))
    }

    pub fn logits_tensors(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        let e = self.embed_tensors(inputs)?;
        Ok(logits_of(&self.head.infer(&e)))
    }

    /// Bonafide posterior from band matrices given in the model's band order.
    pub fn forward_joint(&self, bands: &[SubSpectrogram]) -> Result<f64> {
        if bands.len() != self.bands.len() {
            return Err(Error::Shape(format!(
                "joint model takes {} bands, got {}",
                self.bands.len(),
                bands.len()
            )));
        }
        for (s, &b) in bands.iter().zip(&self.bands) {
            if s.band_index != b {
                return Err(Error::Shape(format!(
                    "expected band {b} in this position, got band {}",
                    s.band_index
                )));
            }
        }
        let inputs = bands
            .iter()
            .map(|s| batch_tensor(&[&s.values]))
            .collect::<Result<Vec<_>>>()?;
        Ok(sigmoid(self.logits_tensors(&inputs)?[0]))
    }

    pub fn loss_and_gradients(&mut self, inputs: Vec<Tensor>, targets: &[f64], rng: &mut NnRng) -> Result<f64> {
        if inputs.len() != self.bands.len() {
            return Err(Error::Shape("band count mismatch".into()));
        }
        for (k, x) in inputs.iter().enumerate() {
            self.check_band_tensor(k, x)?;
        }
        let feats: Vec<Tensor> = inputs
            .into_iter()
            .zip(self.embeddings.iter_mut())
            .map(|(x, stage)| stage.forward(x, rng))
            .collect();
        let sizes: Vec<usize> = feats.iter().map(|f| f.sample_len()).collect();
        let cat = Tensor::concat_features(&feats);
        let z = self.head.forward(cat, rng);
        let (loss, dz) = bce_with_logits(&z.data, targets);
        let dcat = self
            .head
            .backward(Tensor::flat(z.n, 1, dz), true)
            .expect("head returns input gradient");
        for (stage, d) in self.embeddings.iter_mut().zip(dcat.split_features(&sizes)) {
            stage.backward(d, false);
        }
        Ok(loss)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.embeddings.iter().flat_map(|s| s.params()).collect();
        p.extend(self.head.params());
        p
    }
}

impl Classifier for JointModel {
    fn logits(&self, specs: &[&Spectrogram]) -> Result<Vec<f64>> {
        let inputs = self.band_tensors(specs)?;
        self.logits_tensors(&inputs)
    }

    fn accumulate_gradients(
        &mut self,
        specs: &[&Spectrogram],
        targets: &[f64],
        rng: &mut NnRng,
    ) -> Result<f64> {
        let inputs = self.band_tensors(specs)?;
        self.loss_and_gradients(inputs, targets, rng)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self
            .embeddings
            .iter_mut()
            .flat_map(|s| s.params_mut())
            .collect();
        p.extend(self.head.params_mut());
        p
    }
}
