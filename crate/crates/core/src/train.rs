//! Contrastive pretraining and the three evaluation procedures.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::augment::{two_views_indexed, TransformPipeline};
use crate::data::{labels_of, stack_windows, DatasetSplit, SensorWindow};
use crate::error::{Error, Result};
use crate::metrics::{argmax_rows, confusion, weighted_f1, ConfusionMatrix};
use crate::model::{
    classify, classify_backward, encode, encode_backward, encode_eval, init_params, project,
    project_backward, Head, ModelConfig, ModelParams,
};
pub use crate::record::TrainRecord;
use crate::numcore::{
    l2_normalize, l2_normalize_backward, nt_xent_loss, softmax_cross_entropy, DualTensor, Mode,
    OptimizerState, Tensor,
};
use crate::rng::{self, derive_seed};

// stream tags
const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const DROPOUT: u64 = 3;
const HEAD: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Linear,
    FineTune,
    Supervised,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Linear => "linear",
            Protocol::FineTune => "finetune",
            Protocol::Supervised => "supervised",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Protocol::Linear => 0.03,
            Protocol::FineTune | Protocol::Supervised => 0.001,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Protocol::Linear),
            "finetune" | "fine-tune" | "fine_tune" => Ok(Protocol::FineTune),
            "supervised" => Ok(Protocol::Supervised),
            other => Err(Error::Parse(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub temperature: f64,
    pub pipeline: TransformPipeline,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            batch_size: 512,
            base_lr: 0.1,
            temperature: 0.1,
            pipeline: TransformPipeline::new(Vec::new(), 0),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter("batch size must be at least 2".into()));
        }
        if !(self.base_lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Parameter("learning rate and temperature must be positive".into()));
        }
        self.pipeline.params.validate()?;
        self.model.validate()
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("optimizer".into(), "sgd_cosine".into()),
            ("base_lr".into(), self.base_lr.to_string()),
            ("temperature".into(), self.temperature.to_string()),
            ("pipeline".into(), self.pipeline.spec()),
            ("pipeline_seed".into(), self.pipeline.base_seed.to_string()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl EvalConfig {
    /// Protocol defaults: 50 epochs, batch 512, SGD 0.03 for linear and
    /// Adam 0.001 otherwise.
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        EvalConfig {
            protocol,
            epochs: 50,
            lr: protocol.default_lr(),
            batch_size: 512,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer_name(&self) -> &'static str {
        match self.protocol {
            Protocol::Linear => "sgd",
            _ => "adam",
        }
    }

    fn optimizer(&self) -> Result<OptimizerState<f32>> {
        match self.protocol {
            Protocol::Linear => OptimizerState::sgd(self.lr),
            _ => OptimizerState::adam(self.lr),
        }
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("protocol".into(), self.protocol.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("optimizer".into(), self.optimizer_name().into()),
            ("lr".into(), self.lr.to_string()),
        ])
    }
}

/// Aborts on a non-finite loss, or once the loss has exceeded ten times its
/// first value for five epochs running.
#[derive(Debug, Default)]
struct DivergenceGuard {
    initial: Option<f64>,
    streak: usize,
}

impl DivergenceGuard {
    fn check(&mut self, stage: &str, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("{stage}: loss {loss} at epoch {epoch}")));
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial.abs() {
            self.streak += 1;
            if self.streak >= 5 {
                return Err(Error::Diverged(format!(
                    "{stage}: loss {loss} above ten times the initial {initial} for 5 epochs (epoch {epoch})"
                )));
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[SHUFFLE, epoch as u64]));
    order
}

/// Interleaves two `[B, ...]` tensors into `[2B, ...]` with rows `2i`, `2i+1`
/// taken from `a[i]`, `b[i]`.
fn interleave(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = a.shape()[0];
    let mut rows = Vec::with_capacity(2 * n);
    for i in 0..n {
        rows.push(a.outer(i));
        rows.push(b.outer(i));
    }
    let mut shape = a.shape().to_vec();
    shape[0] = 2 * n;
    Tensor::from_vec(&shape, rows.concat())
}

/// Window values without labels, `[N, L, C]`.
pub fn unlabeled(windows: &[SensorWindow]) -> Result<Tensor<f32>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows".into()));
    }
    stack_windows(windows, &(0..windows.len()).collect::<Vec<_>>())
}

fn encoder_and_projection(p: &mut ModelParams<f32>) -> Vec<&mut DualTensor<f32>> {
    p.conv
        .iter_mut()
        .chain(p.proj.iter_mut())
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

/// SimCLR pretraining of encoder and projection head.
///
/// Takes bare `[N, L, C]` windows; labels are never seen. Each epoch
/// reshuffles the windows, drops the incomplete trailing batch and draws
/// fresh augmentations. The learning rate follows a cosine decay over
/// `epochs · ⌊N / batch⌋` steps. A batch larger than `N` is clamped to `N`.
pub fn pretrain_simclr(windows: &Tensor<f32>, config: &PretrainConfig) -> Result<TrainRecord> {
    config.validate()?;
    windows.expect_rank("pretrain_simclr", 3)?;
    let n = windows.shape()[0];
    if n == 0 {
        return Err(Error::Data("pretraining set is empty".into()));
    }
    let batch = if config.batch_size > n {
        log::warn!("batch size {} exceeds {n} windows; clamping", config.batch_size);
        n
    } else {
        config.batch_size
    };
    let steps_per_epoch = n / batch;
    let total_steps = (config.epochs * steps_per_epoch) as u64;
    let start = Instant::now();
    let mut params = init_params::<f32>(&config.model, derive_seed(config.seed, &[INIT]))?;
    let mut opt = OptimizerState::sgd_cosine(config.base_lr, total_steps)?;
    let mut guard = DivergenceGuard::default();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let order = shuffled(n, config.seed, epoch);
        let pipeline = config
            .pipeline
            .with_seed(derive_seed(config.pipeline.base_seed, &[epoch as u64]));
        let mut acc = 0.0;
        for idx in order.chunks_exact(batch) {
            let x = windows.select(idx);
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let (a, b) = two_views_indexed(&pipeline, &x, &ids)?;
            let views = interleave(&a, &b)?;

            params.zero_grad();
            let mut drop_rng = rng::stream(config.seed, &[DROPOUT, step]);
            let (h, etrace) = encode(&params, &views, Mode::Train, &mut drop_rng)?;
            let (z, ptrace) = project(&params, &h)?;
            let normed = l2_normalize(&z)?;
            let (loss, gz) = nt_xent_loss(&normed.output, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("pretrain: loss {loss} at step {step}")));
            }
            let gz = l2_normalize_backward(&gz, &normed)?;
            let gh = project_backward(&mut params, &ptrace, &gz)?;
            encode_backward(&mut params, &etrace, &gh, 0)?;
            opt.step_duals(&mut encoder_and_projection(&mut params))?;
            acc += loss;
            step += 1;
        }
        let mean = acc / steps_per_epoch as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.5}");
        guard.check("pretrain", epoch, mean)?;
        losses.push(mean);
    }
    if !params.all_finite() {
        return Err(Error::Diverged("pretrain: parameters became non-finite".into()));
    }
    let mut echo = config.echo();
    echo.insert("total_steps".into(), total_steps.to_string());
    echo.insert("effective_batch_size".into(), batch.to_string());
    Ok(TrainRecord {
        stage: "pretrain".into(),
        seed: config.seed,
        config: echo,
        epoch_losses: losses,
        duration_secs: start.elapsed().as_secs_f64(),
        f1: None,
        params,
    })
}

/// Deterministic embeddings of `[N, L, C]` windows, computed `chunk` at a time.
pub fn embed(params: &ModelParams<f32>, windows: &Tensor<f32>, chunk: usize) -> Result<Tensor<f32>> {
    let n = windows.shape()[0];
    let dim = params.config.embedding_dim();
    let mut out = Vec::with_capacity(n * dim);
    let idx: Vec<usize> = (0..n).collect();
    for c in idx.chunks(chunk.max(1)) {
        out.extend_from_slice(encode_eval(params, &windows.select(c))?.data());
    }
    Tensor::from_vec(&[n, dim], out)
}

/// Result of an evaluation protocol.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub record: TrainRecord,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

fn check_split(split: &DatasetSplit, classes: usize) -> Result<()> {
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if split.test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    for w in split.train.iter().chain(&split.test) {
        if w.label.index() >= classes {
            return Err(Error::LabelOutOfRange {
                label: w.label.index(),
                classes,
            });
        }
    }
    Ok(())
}

fn score(params: &ModelParams<f32>, test: &[SensorWindow], head: Head, chunk: usize) -> Result<(f64, ConfusionMatrix)> {
    let x = unlabeled(test)?;
    let h = embed(params, &x, chunk)?;
    let (logits, _) = classify(params, &h, head)?;
    let pred = argmax_rows(logits.data(), params.config.n_classes);
    let truth = labels_of(test, &(0..test.len()).collect::<Vec<_>>());
    let cm = confusion(&truth, &pred, params.config.n_classes)?;
    Ok((weighted_f1(&cm)?, cm))
}

/// Linear evaluation: the whole encoder is frozen in inference mode and only
/// a freshly initialised linear head is trained on its features.
pub fn linear_eval(pretrained: &ModelParams<f32>, split: &DatasetSplit, config: &EvalConfig) -> Result<Evaluation> {
    config.validate()?;
    check_split(split, pretrained.config.n_classes)?;
    let start = Instant::now();
    let mut params = pretrained.clone();
    params.reinit_head(Head::Linear, derive_seed(config.seed, &[HEAD]));
    let chunk = config.batch_size;
    let features = embed(&params, &unlabeled(&split.train)?, chunk)?;
    let labels = labels_of(&split.train, &(0..split.train.len()).collect::<Vec<_>>());
    let n = labels.len();
    let mut opt = config.optimizer()?;
    let mut guard = DivergenceGuard::default();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = shuffled(n, config.seed, epoch);
        let mut acc = 0.0;
        for idx in order.chunks(config.batch_size.min(n)) {
            params.linear.weight.zero_grad();
            params.linear.bias.zero_grad();
            let h = features.select(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, trace) = classify(&params, &h, Head::Linear)?;
            let (loss, gl) = softmax_cross_entropy(&logits, &y)?;
            classify_backward(&mut params, &trace, &gl, Head::Linear, false)?;
            let l = &mut params.linear;
            opt.step_duals(&mut [&mut l.weight, &mut l.bias])?;
            acc += loss * idx.len() as f64;
        }
        let mean = acc / n as f64;
        guard.check("linear", epoch, mean)?;
        losses.push(mean);
    }
    let (f1, cm) = score(&params, &split.test, Head::Linear, chunk)?;
    Ok(Evaluation {
        record: TrainRecord {
            stage: "linear".into(),
            seed: config.seed,
            config: config.echo(),
            epoch_losses: losses,
            duration_secs: start.elapsed().as_secs_f64(),
            f1: Some(f1),
            params,
        },
        f1,
        confusion: cm,
    })
}

/// Trains convolution stages `first_trainable..3` together with the
/// fine-tune head on raw windows, encoder in training mode.
fn train_end_to_end(
    mut params: ModelParams<f32>,
    split: &DatasetSplit,
    config: &EvalConfig,
    first_trainable: usize,
) -> Result<Evaluation> {
    config.validate()?;
    check_split(split, params.config.n_classes)?;
    let start = Instant::now();
    let x = unlabeled(&split.train)?;
    let labels = labels_of(&split.train, &(0..split.train.len()).collect::<Vec<_>>());
    let n = labels.len();
    let mut opt = config.optimizer()?;
    let mut guard = DivergenceGuard::default();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let order = shuffled(n, config.seed, epoch);
        let mut acc = 0.0;
        for idx in order.chunks(config.batch_size.min(n)) {
            params.zero_grad();
            let xb = x.select(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut drop_rng = rng::stream(config.seed, &[DROPOUT, step]);
            let (h, etrace) = encode(&params, &xb, Mode::Train, &mut drop_rng)?;
            let (logits, ctrace) = classify(&params, &h, Head::FineTune)?;
            let (loss, gl) = softmax_cross_entropy(&logits, &y)?;
            let gh = classify_backward(&mut params, &ctrace, &gl, Head::FineTune, true)?
                .expect("input gradient requested");
            encode_backward(&mut params, &etrace, &gh, first_trainable)?;
            let ModelParams { conv, ft, .. } = &mut params;
            let mut trainable: Vec<&mut DualTensor<f32>> = conv[first_trainable..]
                .iter_mut()
                .chain(ft.iter_mut())
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .collect();
            opt.step_duals(&mut trainable)?;
            acc += loss * idx.len() as f64;
            step += 1;
        }
        let mean = acc / n as f64;
        guard.check(config.protocol.name(), epoch, mean)?;
        losses.push(mean);
    }
    let (f1, cm) = score(&params, &split.test, Head::FineTune, config.batch_size)?;
    Ok(Evaluation {
        record: TrainRecord {
            stage: config.protocol.name().into(),
            seed: config.seed,
            config: config.echo(),
            epoch_losses: losses,
            duration_secs: start.elapsed().as_secs_f64(),
            f1: Some(f1),
            params,
        },
        f1,
        confusion: cm,
    })
}

/// Fine-tuned evaluation: conv1 and conv2 frozen, conv3 and a fresh
/// two-layer head trained.
pub fn finetune_eval(pretrained: &ModelParams<f32>, split: &DatasetSplit, config: &EvalConfig) -> Result<Evaluation> {
    let mut params = pretrained.clone();
    params.reinit_head(Head::FineTune, derive_seed(config.seed, &[HEAD]));
    train_end_to_end(params, split, config, 2)
}

/// Encoder and fine-tune head trained from scratch on labels alone.
pub fn supervised_baseline(model: &ModelConfig, split: &DatasetSplit, config: &EvalConfig) -> Result<Evaluation> {
    let params = init_params::<f32>(model, derive_seed(config.seed, &[INIT]))?;
    train_end_to_end(params, split, config, 0)
}

/// Dispatches on `config.protocol`; `pretrained` is ignored for the
/// supervised baseline.
pub fn evaluate(pretrained: &ModelParams<f32>, split: &DatasetSplit, config: &EvalConfig) -> Result<Evaluation> {
    match config.protocol {
        Protocol::Linear => linear_eval(pretrained, split, config),
        Protocol::FineTune => finetune_eval(pretrained, split, config),
        Protocol::Supervised => supervised_baseline(&pretrained.config, split, config),
    }
}
