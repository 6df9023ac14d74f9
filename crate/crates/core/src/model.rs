//! Temporal convolutional encoder with projection and classification heads,
//! wired by hand from the `numcore` kernels.
//!
//! ```text
//! encoder:  [B,400,3] → conv(24,32)→ReLU→drop → conv(16,64)→ReLU→drop
//!                     → conv(8,96)→ReLU→drop → global max pool → [B,96]
//! proj:     96 → 256 → ReLU → 128 → ReLU → 50
//! linear:   96 → 6
//! finetune: 96 → 1024 → ReLU → 6
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numcore::{
    conv1d_backward_opt, conv1d_forward, dense, dense_backward, dropout, dropout_backward,
    global_max_pool1d, global_max_pool1d_backward, load_container, relu, relu_backward,
    save_container, DualTensor, Mode, Pooled, Scalar, Tensor, TensorContainer,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub kernel_sizes: [usize; 3],
    pub filters: [usize; 3],
    pub dropout: f64,
    pub window_len: usize,
    pub channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kernel_sizes: [24, 16, 8],
            filters: [32, 64, 96],
            dropout: 0.1,
            window_len: 400,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub proj_units: [usize; 3],
    pub ft_hidden: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            proj_units: [256, 128, 50],
            ft_hidden: 1024,
            n_classes: 6,
        }
    }
}

impl ModelConfig {
    /// Width of the pooled representation.
    pub fn embedding_dim(&self) -> usize {
        self.encoder.filters[2]
    }

    /// Time length after each convolution stage.
    pub fn stage_lengths(&self) -> [usize; 3] {
        let mut t = self.encoder.window_len;
        self.encoder.kernel_sizes.map(|k| {
            t = (t + 1).saturating_sub(k);
            t
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.kernel_sizes.contains(&0) || e.filters.contains(&0) || e.channels == 0 {
            return Err(Error::Parameter("kernel sizes, filters and channels must be positive".into()));
        }
        if self.stage_lengths()[2] == 0 {
            return Err(Error::Parameter(format!(
                "window length {} too short for kernels {:?}",
                e.window_len, e.kernel_sizes
            )));
        }
        crate::numcore::dropout(&Tensor::<f32>::zeros(&[0]), e.dropout, Mode::Eval, &mut rng::stream(0, &[]))?;
        if self.proj_units.contains(&0) || self.ft_hidden == 0 || self.n_classes == 0 {
            return Err(Error::Parameter("head widths must be positive".into()));
        }
        Ok(())
    }
}

/// Weight and bias of one convolution or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub weight: DualTensor<T>,
    pub bias: DualTensor<T>,
}

impl<T: Scalar> Layer<T> {
    /// Glorot-uniform weight, zero bias. `receptive` is the kernel width (1
    /// for dense layers).
    fn glorot(shape: &[usize], receptive: usize, fan_in: usize, fan_out: usize, r: &mut Rng) -> Self {
        let limit = (6.0 / ((fan_in + fan_out) * receptive) as f64).sqrt();
        let weight = Tensor::from_fn(shape, |_| T::lit(r.random_range(-limit..limit)));
        let out = *shape.last().expect("non-empty shape");
        Layer {
            weight: DualTensor::new(weight),
            bias: DualTensor::new(Tensor::zeros(&[out])),
        }
    }

    fn dense(d_in: usize, d_out: usize, r: &mut Rng) -> Self {
        Self::glorot(&[d_in, d_out], 1, d_in, d_out, r)
    }

    fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            weight: DualTensor::new(self.weight.value.cast()),
            bias: DualTensor::new(self.bias.value.cast()),
        }
    }
}

/// Which classification head to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    FineTune,
}

/// All learnable tensors of encoder and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub config: ModelConfig,
    pub conv: [Layer<T>; 3],
    pub proj: [Layer<T>; 3],
    pub linear: Layer<T>,
    pub ft: [Layer<T>; 2],
}

const STREAM_CONV: u64 = 0;
const STREAM_PROJ: u64 = 1;
const STREAM_LINEAR: u64 = 2;
const STREAM_FT: u64 = 3;

fn linear_head<T: Scalar>(c: &ModelConfig, seed: u64) -> Layer<T> {
    Layer::dense(c.embedding_dim(), c.n_classes, &mut rng::stream(seed, &[STREAM_LINEAR]))
}

fn ft_head<T: Scalar>(c: &ModelConfig, seed: u64) -> [Layer<T>; 2] {
    let mut r = rng::stream(seed, &[STREAM_FT]);
    [
        Layer::dense(c.embedding_dim(), c.ft_hidden, &mut r),
        Layer::dense(c.ft_hidden, c.n_classes, &mut r),
    ]
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let e = &config.encoder;
    let mut r = rng::stream(seed, &[STREAM_CONV]);
    let mut ch_in = e.channels;
    let conv = std::array::from_fn(|i| {
        let (k, ch_out) = (e.kernel_sizes[i], e.filters[i]);
        let l = Layer::glorot(&[k, ch_in, ch_out], k, ch_in, ch_out, &mut r);
        ch_in = ch_out;
        l
    });
    let mut r = rng::stream(seed, &[STREAM_PROJ]);
    let mut d_in = config.embedding_dim();
    let proj = std::array::from_fn(|i| {
        let l = Layer::dense(d_in, config.proj_units[i], &mut r);
        d_in = config.proj_units[i];
        l
    });
    Ok(ModelParams {
        config: *config,
        conv,
        proj,
        linear: linear_head(config, seed),
        ft: ft_head(config, seed),
    })
}

impl<T: Scalar> ModelParams<T> {
    /// Every tensor under its stable checkpoint name.
    pub fn named(&self) -> Vec<(String, &DualTensor<T>)> {
        let groups = self
            .conv
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("encoder.conv{}", i + 1), l))
            .chain(self.proj.iter().enumerate().map(|(i, l)| (format!("proj.fc{}", i + 1), l)))
            .chain(std::iter::once(("head.linear".to_string(), &self.linear)))
            .chain(self.ft.iter().enumerate().map(|(i, l)| (format!("head.ft{}", i + 1), l)));
        groups
            .flat_map(|(prefix, l)| {
                [
                    (format!("{prefix}.weight"), &l.weight),
                    (format!("{prefix}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.conv
            .iter_mut()
            .chain(self.proj.iter_mut())
            .chain(std::iter::once(&mut self.linear))
            .chain(self.ft.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(Layer::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.value.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            conv: std::array::from_fn(|i| self.conv[i].cast()),
            proj: std::array::from_fn(|i| self.proj[i].cast()),
            linear: self.linear.cast(),
            ft: std::array::from_fn(|i| self.ft[i].cast()),
        }
    }

    /// Fresh Glorot initialisation of one classification head.
    pub fn reinit_head(&mut self, head: Head, seed: u64) {
        match head {
            Head::Linear => self.linear = linear_head(&self.config, seed),
            Head::FineTune => self.ft = ft_head(&self.config, seed),
        }
    }
}

fn config_meta(c: &ModelConfig) -> BTreeMap<String, String> {
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let e = &c.encoder;
    BTreeMap::from([
        ("kind".to_string(), "model".to_string()),
        ("encoder.kernel_sizes".to_string(), join(&e.kernel_sizes)),
        ("encoder.filters".to_string(), join(&e.filters)),
        ("encoder.dropout".to_string(), e.dropout.to_string()),
        ("encoder.window_len".to_string(), e.window_len.to_string()),
        ("encoder.channels".to_string(), e.channels.to_string()),
        ("proj.units".to_string(), join(&c.proj_units)),
        ("head.ft_hidden".to_string(), c.ft_hidden.to_string()),
        ("head.n_classes".to_string(), c.n_classes.to_string()),
    ])
}

fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    fn get<'a>(m: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
        m.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("checkpoint missing `{k}`")))
    }
    fn num<N: std::str::FromStr>(s: &str) -> Result<N> {
        s.trim().parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
    }
    fn triple(s: &str) -> Result<[usize; 3]> {
        let v: Vec<usize> = s.split(',').map(num).collect::<Result<_>>()?;
        v.try_into().map_err(|_| Error::Parse(format!("expected three values in `{s}`")))
    }
    if meta.get("kind").map(String::as_str) != Some("model") {
        return Err(Error::Parse("container is not a model checkpoint".into()));
    }
    Ok(ModelConfig {
        encoder: EncoderConfig {
            kernel_sizes: triple(get(meta, "encoder.kernel_sizes")?)?,
            filters: triple(get(meta, "encoder.filters")?)?,
            dropout: num(get(meta, "encoder.dropout")?)?,
            window_len: num(get(meta, "encoder.window_len")?)?,
            channels: num(get(meta, "encoder.channels")?)?,
        },
        proj_units: triple(get(meta, "proj.units")?)?,
        ft_hidden: num(get(meta, "head.ft_hidden")?)?,
        n_classes: num(get(meta, "head.n_classes")?)?,
    })
}

impl ModelParams<f32> {
    pub fn to_container(&self) -> TensorContainer {
        TensorContainer {
            meta: config_meta(&self.config),
            tensors: self
                .named()
                .into_iter()
                .map(|(n, t)| (n, t.value.clone()))
                .collect(),
        }
    }

    pub fn from_container(mut c: TensorContainer) -> Result<Self> {
        let config = config_from_meta(&c.meta)?;
        let mut params = init_params::<f32>(&config, 0)?;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let mut values = Vec::with_capacity(names.len());
        for n in &names {
            values.push(c.take(n)?);
        }
        for (layer_slot, v) in params
            .layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .zip(values)
        {
            if layer_slot.value.shape() != v.shape() {
                return Err(Error::Parse(format!(
                    "checkpoint tensor shape {:?}, expected {:?}",
                    v.shape(),
                    layer_slot.value.shape()
                )));
            }
            *layer_slot = DualTensor::new(v);
        }
        Ok(params)
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        save_container(manifest, &self.to_container())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        Self::from_container(load_container(manifest)?)
    }
}

/// Intermediates kept by [`encode`] for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace<T: Scalar> {
    /// Input to each convolution.
    pub stage_inputs: [Tensor<T>; 3],
    /// Convolution outputs before ReLU.
    pub pre_activations: [Tensor<T>; 3],
    pub masks: [Option<Vec<T>>; 3],
    pub pooled: Pooled<T>,
}

/// Encodes `[B, L, C]` windows to `[B, filters[2]]`. Dropout draws from `rng`
/// in [`Mode::Train`] only.
pub fn encode<T: Scalar>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, EncoderTrace<T>)> {
    let e = &params.config.encoder;
    input.expect_rank("encode", 3)?;
    if input.shape()[1..] != [e.window_len, e.channels] {
        return Err(Error::dim(
            "encode",
            format!(
                "input {:?}, expected [B, {}, {}]",
                input.shape(),
                e.window_len,
                e.channels
            ),
        ));
    }
    let mut x = input.clone();
    let mut inputs = Vec::with_capacity(3);
    let mut pre = Vec::with_capacity(3);
    let mut masks = Vec::with_capacity(3);
    for layer in &params.conv {
        let z = conv1d_forward(&x, &layer.weight.value, &layer.bias.value)?;
        let a = relu(&z);
        let d = dropout(&a, e.dropout, mode, rng)?;
        inputs.push(std::mem::replace(&mut x, d.output));
        pre.push(z);
        masks.push(d.mask);
    }
    let pooled = global_max_pool1d(&x)?;
    let h = pooled.output.clone();
    Ok((
        h,
        EncoderTrace {
            stage_inputs: three(inputs),
            pre_activations: three(pre),
            masks: three(masks),
            pooled,
        },
    ))
}

fn three<X>(v: Vec<X>) -> [X; 3] {
    v.try_into().unwrap_or_else(|_| unreachable!("three stages"))
}

/// Deterministic inference.
pub fn encode_eval<T: Scalar>(params: &ModelParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut unused = rng::stream(0, &[]);
    Ok(encode(params, input, Mode::Eval, &mut unused)?.0)
}

/// Accumulates encoder parameter gradients for convolution stages
/// `first_trainable..3`; earlier stages receive nothing and are not
/// back-propagated through.
pub fn encode_backward<T: Scalar>(
    params: &mut ModelParams<T>,
    trace: &EncoderTrace<T>,
    grad_h: &Tensor<T>,
    first_trainable: usize,
) -> Result<()> {
    if first_trainable >= 3 {
        return Ok(());
    }
    let mut g = global_max_pool1d_backward(grad_h, &trace.pooled)?;
    for i in (first_trainable..3).rev() {
        g = dropout_backward(&g, trace.masks[i].as_deref())?;
        g = relu_backward(&g, &trace.pre_activations[i])?;
        let layer = &mut params.conv[i];
        let grads = conv1d_backward_opt(&g, &trace.stage_inputs[i], &layer.weight.value, i > first_trainable)?;
        layer.weight.accumulate(&grads.kernel)?;
        layer.bias.accumulate(&grads.bias)?;
        if let Some(gi) = grads.input {
            g = gi;
        }
    }
    Ok(())
}

/// Inputs and pre-activations of an MLP.
#[derive(Debug, Clone)]
pub struct MlpTrace<T: Scalar> {
    pub inputs: Vec<Tensor<T>>,
    pub pre_activations: Vec<Tensor<T>>,
}

fn mlp_forward<T: Scalar>(layers: &[&Layer<T>], x: &Tensor<T>) -> Result<(Tensor<T>, MlpTrace<T>)> {
    let mut trace = MlpTrace {
        inputs: Vec::with_capacity(layers.len()),
        pre_activations: Vec::with_capacity(layers.len()),
    };
    let mut cur = x.clone();
    for (i, l) in layers.iter().enumerate() {
        let z = dense(&cur, &l.weight.value, &l.bias.value)?;
        let next = if i + 1 < layers.len() { relu(&z) } else { z.clone() };
        trace.inputs.push(std::mem::replace(&mut cur, next));
        trace.pre_activations.push(z);
    }
    Ok((cur, trace))
}

fn mlp_backward<T: Scalar>(
    layers: &mut [&mut Layer<T>],
    trace: &MlpTrace<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let n = layers.len();
    let mut g = grad_out.clone();
    for i in (0..n).rev() {
        if i + 1 < n {
            g = relu_backward(&g, &trace.pre_activations[i])?;
        }
        let l = &mut layers[i];
        let grads = dense_backward(&g, &trace.inputs[i], &l.weight.value, i > 0 || need_input)?;
        l.weight.accumulate(&grads.weight)?;
        l.bias.accumulate(&grads.bias)?;
        match grads.input {
            Some(gi) => g = gi,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}

/// Projection head: dense→ReLU→dense→ReLU→dense, no output activation.
pub fn project<T: Scalar>(params: &ModelParams<T>, h: &Tensor<T>) -> Result<(Tensor<T>, MlpTrace<T>)> {
    let [a, b, c] = &params.proj;
    mlp_forward(&[a, b, c], h)
}

/// Returns the gradient with respect to the encoder output.
pub fn project_backward<T: Scalar>(
    params: &mut ModelParams<T>,
    trace: &MlpTrace<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [a, b, c] = &mut params.proj;
    mlp_backward(&mut [a, b, c], trace, grad, true).map(|g| g.expect("input gradient requested"))
}

pub fn classify<T: Scalar>(
    params: &ModelParams<T>,
    h: &Tensor<T>,
    head: Head,
) -> Result<(Tensor<T>, MlpTrace<T>)> {
    match head {
        Head::Linear => mlp_forward(&[&params.linear], h),
        Head::FineTune => {
            let [a, b] = &params.ft;
            mlp_forward(&[a, b], h)
        }
    }
}

pub fn classify_backward<T: Scalar>(
    params: &mut ModelParams<T>,
    trace: &MlpTrace<T>,
    grad: &Tensor<T>,
    head: Head,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    match head {
        Head::Linear => mlp_backward(&mut [&mut params.linear], trace, grad, need_input),
        Head::FineTune => {
            let [a, b] = &mut params.ft;
            mlp_backward(&mut [a, b], trace, grad, need_input)
        }
    }
}
