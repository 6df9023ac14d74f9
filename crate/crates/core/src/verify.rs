//! Finite-difference verification of every backward kernel and of the full
//! encoder → projection → NT-Xent chain, run in `f64`.
//!
//! Each instance draws random inputs and parameters, contracts the kernel
//! output with a random cotangent `r` to get a scalar objective `Σ r·y`, and
//! compares the analytic gradient against central differences at every
//! coordinate. Instances whose ReLU pre-activations or max-pool margins sit
//! too close to a kink for the chosen step are redrawn.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{
    classify, classify_backward, encode, encode_backward, init_params, project,
    project_backward, EncoderConfig, EncoderTrace, Head, MlpTrace, ModelConfig, ModelParams,
};
use crate::numcore::fixtures::{rand_nonzero, rand_tensor};
use crate::numcore::{
    conv1d_backward, conv1d_forward, dense, dense_backward, dropout, dropout_backward,
    global_max_pool1d, global_max_pool1d_backward, grad_check, l2_normalize,
    l2_normalize_backward, nt_xent_loss, relu, relu_backward, softmax_cross_entropy, Mode,
    Tensor,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Conv1d,
    Relu,
    Dropout,
    MaxPool,
    Dense,
    SoftmaxCrossEntropy,
    L2Normalize,
    NtXent,
    /// Encoder, projection head, normalisation and NT-Xent end to end.
    ContrastiveChain,
    /// Encoder, fine-tune head and cross-entropy end to end.
    ClassifierChain,
}

impl Kernel {
    pub const ALL: [Kernel; 10] = [
        Kernel::Conv1d,
        Kernel::Relu,
        Kernel::Dropout,
        Kernel::MaxPool,
        Kernel::Dense,
        Kernel::SoftmaxCrossEntropy,
        Kernel::L2Normalize,
        Kernel::NtXent,
        Kernel::ContrastiveChain,
        Kernel::ClassifierChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Conv1d => "conv1d",
            Kernel::Relu => "relu",
            Kernel::Dropout => "dropout",
            Kernel::MaxPool => "global_max_pool1d",
            Kernel::Dense => "dense",
            Kernel::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Kernel::L2Normalize => "l2_normalize",
            Kernel::NtXent => "nt_xent",
            Kernel::ContrastiveChain => "encoder_projection_nt_xent",
            Kernel::ClassifierChain => "encoder_finetune_cross_entropy",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown kernel `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub instances: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Scales the analytic gradient of this kernel by 1.1 before comparison.
    pub fault: Option<Kernel>,
    pub kernels: Vec<Kernel>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            instances: 20,
            epsilon: 1e-5,
            tolerance: 1e-4,
            seed: 0x5eed,
            fault: None,
            kernels: Kernel::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub kernel: Kernel,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub kernels: Vec<KernelReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.kernels.iter().all(|k| k.passed)
    }
}

/// One random instance: flat parameters, analytic gradient and the objective.
struct Instance {
    params: Vec<f64>,
    analytic: Vec<f64>,
    objective: Objective,
}

type Objective = Box<dyn Fn(&[f64]) -> f64>;

/// Views a flat vector as consecutive tensors of the given shapes.
#[derive(Clone)]
struct Layout(Vec<Vec<usize>>);

impl Layout {
    fn split(&self, flat: &[f64]) -> Vec<Tensor<f64>> {
        let mut off = 0;
        self.0
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::from_vec(s, flat[off..off + n].to_vec()).expect("layout length");
                off += n;
                t
            })
            .collect()
    }

    fn pack(tensors: &[&Tensor<f64>]) -> (Layout, Vec<f64>) {
        let layout = Layout(tensors.iter().map(|t| t.shape().to_vec()).collect());
        let flat = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        (layout, flat)
    }
}

fn contract(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn flatten(ts: &[&Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Smallest gap between the maximum and runner-up of any pooled column,
/// ignoring columns that are identically zero at the top.
fn pool_margin(x: &Tensor<f64>) -> f64 {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut margin = f64::INFINITY;
    for bi in 0..b {
        let s = x.outer(bi);
        for ci in 0..c {
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for ti in 0..t {
                let v = s[ti * c + ci];
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
            // dead columns tie at exactly zero and stay dead under perturbation
            if !(top == 0.0 && second == 0.0) {
                margin = margin.min(top - second);
            }
        }
    }
    margin
}

fn min_abs(ts: &[&Tensor<f64>]) -> f64 {
    ts.iter()
        .flat_map(|t| t.data().iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Instances closer than this to a ReLU or max-pool kink are redrawn; it
/// must exceed the effect of an `epsilon` step on any pre-activation.
const KINK_MARGIN: f64 = 1e-3;

fn conv_instance(r: &mut Rng) -> Result<Instance> {
    let (k, ci, co) = (r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=3));
    let (b, t) = (r.random_range(1..=3), k + r.random_range(0..=6));
    let x = rand_tensor::<f64>(r, &[b, t, ci]);
    let w = rand_tensor::<f64>(r, &[k, ci, co]);
    let bias = rand_tensor::<f64>(r, &[co]);
    let cot = rand_tensor::<f64>(r, &[b, t + 1 - k, co]);
    let g = conv1d_backward(&cot, &x, &w)?;
    let (layout, params) = Layout::pack(&[&x, &w, &bias]);
    let analytic = flatten(&[g.input.as_ref().expect("input gradient"), &g.kernel, &g.bias]);
    Ok(Instance {
        params,
        analytic,
        objective: Box::new(move |p| {
            let v = layout.split(p);
            contract(&conv1d_forward(&v[0], &v[1], &v[2]).expect("shapes"), &cot)
        }),
    })
}

fn relu_instance(r: &mut Rng) -> Result<Instance> {
    let shape = [r.random_range(1..=4), r.random_range(1..=6)];
    let x = rand_nonzero(r, &shape, 0.05, 2.0);
    let cot = rand_tensor::<f64>(r, &shape);
    let analytic = relu_backward(&cot, &x)?.into_data();
    Ok(Instance {
        params: x.data().to_vec(),
        analytic,
        objective: Box::new(move |p| contract(&relu(&Tensor::from_vec(&shape, p.to_vec()).expect("shape")), &cot)),
    })
}

fn dropout_instance(r: &mut Rng) -> Result<Instance> {
    let shape = [r.random_range(1..=4), r.random_range(2..=8)];
    let rate = r.random_range(0.05..0.6);
    let mask_seed: u64 = r.random();
    let x = rand_tensor::<f64>(r, &shape);
    let cot = rand_tensor::<f64>(r, &shape);
    let d = dropout(&x, rate, Mode::Train, &mut rng::stream(mask_seed, &[]))?;
    let analytic = dropout_backward(&cot, d.mask.as_deref())?.into_data();
    Ok(Instance {
        params: x.into_data(),
        analytic,
        objective: Box::new(move |p| {
            let x = Tensor::from_vec(&shape, p.to_vec()).expect("shape");
            let d = dropout(&x, rate, Mode::Train, &mut rng::stream(mask_seed, &[])).expect("rate");
            contract(&d.output, &cot)
        }),
    })
}

fn pool_instance(r: &mut Rng) -> Result<Instance> {
    let shape = [r.random_range(1..=3), r.random_range(1..=8), r.random_range(1..=4)];
    let x = loop {
        let x = rand_tensor::<f64>(r, &shape);
        if pool_margin(&x) > KINK_MARGIN {
            break x;
        }
    };
    let cot = rand_tensor::<f64>(r, &[shape[0], shape[2]]);
    let analytic = global_max_pool1d_backward(&cot, &global_max_pool1d(&x)?)?.into_data();
    Ok(Instance {
        params: x.into_data(),
        analytic,
        objective: Box::new(move |p| {
            let x = Tensor::from_vec(&shape, p.to_vec()).expect("shape");
            contract(&global_max_pool1d(&x).expect("non-empty").output, &cot)
        }),
    })
}

fn dense_instance(r: &mut Rng) -> Result<Instance> {
    let (b, di, dout) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=5));
    let x = rand_tensor::<f64>(r, &[b, di]);
    let w = rand_tensor::<f64>(r, &[di, dout]);
    let bias = rand_tensor::<f64>(r, &[dout]);
    let cot = rand_tensor::<f64>(r, &[b, dout]);
    let g = dense_backward(&cot, &x, &w, true)?;
    let (layout, params) = Layout::pack(&[&x, &w, &bias]);
    let analytic = flatten(&[g.input.as_ref().expect("input gradient"), &g.weight, &g.bias]);
    Ok(Instance {
        params,
        analytic,
        objective: Box::new(move |p| {
            let v = layout.split(p);
            contract(&dense(&v[0], &v[1], &v[2]).expect("shapes"), &cot)
        }),
    })
}

fn softmax_instance(r: &mut Rng) -> Result<Instance> {
    let (b, c) = (r.random_range(1..=5), r.random_range(2..=6));
    let x = rand_tensor::<f64>(r, &[b, c]);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
    let (_, g) = softmax_cross_entropy(&x, &labels)?;
    Ok(Instance {
        params: x.into_data(),
        analytic: g.into_data(),
        objective: Box::new(move |p| {
            let x = Tensor::from_vec(&[b, c], p.to_vec()).expect("shape");
            softmax_cross_entropy(&x, &labels).expect("labels").0
        }),
    })
}

fn l2_instance(r: &mut Rng) -> Result<Instance> {
    let shape = [r.random_range(1..=4), r.random_range(2..=6)];
    let x = rand_tensor::<f64>(r, &shape);
    let cot = rand_tensor::<f64>(r, &shape);
    let analytic = l2_normalize_backward(&cot, &l2_normalize(&x)?)?.into_data();
    Ok(Instance {
        params: x.into_data(),
        analytic,
        objective: Box::new(move |p| {
            let x = Tensor::from_vec(&shape, p.to_vec()).expect("shape");
            contract(&l2_normalize(&x).expect("non-degenerate").output, &cot)
        }),
    })
}

fn nt_xent_instance(r: &mut Rng) -> Result<Instance> {
    let shape = [2 * r.random_range(1..=4), r.random_range(2..=8)];
    let tau = [0.05, 0.1, 0.5, 1.0][r.random_range(0..4)];
    // unit rows keep exp(sim/τ) in a realistic range
    let z = l2_normalize(&rand_tensor::<f64>(r, &shape))?.output;
    let (_, g) = nt_xent_loss(&z, tau)?;
    Ok(Instance {
        params: z.into_data(),
        analytic: g.into_data(),
        objective: Box::new(move |p| {
            nt_xent_loss(&Tensor::from_vec(&shape, p.to_vec()).expect("shape"), tau).expect("valid").0
        }),
    })
}

/// Small enough that every coordinate can be differenced.
pub fn chain_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            kernel_sizes: [5, 4, 3],
            filters: [4, 5, 6],
            dropout: 0.1,
            window_len: 20,
            channels: 3,
        },
        proj_units: [7, 6, 5],
        ft_hidden: 8,
        n_classes: 6,
    }
}

fn write_params(params: &mut ModelParams<f64>, flat: &[f64]) {
    let mut off = 0;
    for l in params.layers_mut() {
        for t in [&mut l.weight.value, &mut l.bias.value] {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

fn read_params(params: &mut ModelParams<f64>, grads: bool) -> Vec<f64> {
    params
        .layers_mut()
        .flat_map(|l| {
            [&l.weight, &l.bias]
                .map(|d| if grads { d.grad.data().to_vec() } else { d.value.data().to_vec() })
        })
        .flatten()
        .collect()
}

fn encoder_margin(trace: &EncoderTrace<f64>, heads: &MlpTrace<f64>) -> f64 {
    let pre: Vec<&Tensor<f64>> = trace.pre_activations.iter().collect();
    let hidden = &heads.pre_activations[..heads.pre_activations.len() - 1];
    let mut m = min_abs(&pre).min(min_abs(&hidden.iter().collect::<Vec<_>>()));
    // pooled input is the third stage after ReLU and dropout; rebuild it
    let mut last = relu(&trace.pre_activations[2]);
    if let Some(mask) = &trace.masks[2] {
        last.data_mut().iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }
    m = m.min(pool_margin(&last));
    m
}

/// Random parameters with non-zero biases so every unit sees a generic
/// operating point.
fn chain_params(r: &mut Rng) -> Result<ModelParams<f64>> {
    let mut p = init_params::<f64>(&chain_config(), r.random())?;
    for l in p.layers_mut() {
        l.bias.value = rand_tensor::<f64>(r, l.bias.shape()).map(|v| 0.1 * v);
    }
    Ok(p)
}

fn contrastive_objective(
    params: &ModelParams<f64>,
    x: &Tensor<f64>,
    drop_seed: u64,
    tau: f64,
) -> Result<(f64, ModelParams<f64>, f64)> {
    let mut p = params.clone();
    let (h, trace) = encode(&p, x, Mode::Train, &mut rng::stream(drop_seed, &[]))?;
    let (z, ptrace) = project(&p, &h)?;
    let n = l2_normalize(&z)?;
    let (loss, gz) = nt_xent_loss(&n.output, tau)?;
    let margin = encoder_margin(&trace, &ptrace);
    p.zero_grad();
    let gz = l2_normalize_backward(&gz, &n)?;
    let gh = project_backward(&mut p, &ptrace, &gz)?;
    encode_backward(&mut p, &trace, &gh, 0)?;
    Ok((loss, p, margin))
}

fn contrastive_instance(r: &mut Rng) -> Result<Instance> {
    let cfg = chain_config();
    let tau = 0.5;
    loop {
        let params = chain_params(r)?;
        let x = rand_tensor::<f64>(r, &[4, cfg.encoder.window_len, cfg.encoder.channels]);
        let drop_seed: u64 = r.random();
        let (_, mut with_grad, margin) = contrastive_objective(&params, &x, drop_seed, tau)?;
        if margin < KINK_MARGIN {
            continue;
        }
        let mut base = params.clone();
        return Ok(Instance {
            params: read_params(&mut base, false),
            analytic: read_params(&mut with_grad, true),
            objective: Box::new(move |flat| {
                let mut p = base.clone();
                write_params(&mut p, flat);
                contrastive_objective(&p, &x, drop_seed, tau).map_or(f64::NAN, |o| o.0)
            }),
        });
    }
}

fn classifier_objective(
    params: &ModelParams<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    drop_seed: u64,
) -> Result<(f64, ModelParams<f64>, f64)> {
    let mut p = params.clone();
    let (h, trace) = encode(&p, x, Mode::Train, &mut rng::stream(drop_seed, &[]))?;
    let (logits, ctrace) = classify(&p, &h, Head::FineTune)?;
    let (loss, gl) = softmax_cross_entropy(&logits, labels)?;
    let margin = encoder_margin(&trace, &ctrace);
    p.zero_grad();
    let gh = classify_backward(&mut p, &ctrace, &gl, Head::FineTune, true)?.expect("input gradient");
    encode_backward(&mut p, &trace, &gh, 0)?;
    Ok((loss, p, margin))
}

fn classifier_instance(r: &mut Rng) -> Result<Instance> {
    let cfg = chain_config();
    loop {
        let params = chain_params(r)?;
        let x = rand_tensor::<f64>(r, &[3, cfg.encoder.window_len, cfg.encoder.channels]);
        let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..cfg.n_classes)).collect();
        let drop_seed: u64 = r.random();
        let (_, mut with_grad, margin) = classifier_objective(&params, &x, &labels, drop_seed)?;
        if margin < KINK_MARGIN {
            continue;
        }
        let mut base = params.clone();
        return Ok(Instance {
            params: read_params(&mut base, false),
            analytic: read_params(&mut with_grad, true),
            objective: Box::new(move |flat| {
                let mut p = base.clone();
                write_params(&mut p, flat);
                classifier_objective(&p, &x, &labels, drop_seed).map_or(f64::NAN, |o| o.0)
            }),
        });
    }
}

fn instance(kernel: Kernel, r: &mut Rng) -> Result<Instance> {
    match kernel {
        Kernel::Conv1d => conv_instance(r),
        Kernel::Relu => relu_instance(r),
        Kernel::Dropout => dropout_instance(r),
        Kernel::MaxPool => pool_instance(r),
        Kernel::Dense => dense_instance(r),
        Kernel::SoftmaxCrossEntropy => softmax_instance(r),
        Kernel::L2Normalize => l2_instance(r),
        Kernel::NtXent => nt_xent_instance(r),
        Kernel::ContrastiveChain => contrastive_instance(r),
        Kernel::ClassifierChain => classifier_instance(r),
    }
}

pub fn verify_kernel(kernel: Kernel, opts: &VerifyOptions) -> Result<KernelReport> {
    let idx = Kernel::ALL.iter().position(|&k| k == kernel).expect("listed") as u64;
    let (mut worst, mut coords) = (0.0f64, 0usize);
    for i in 0..opts.instances {
        let mut r = rng::stream(opts.seed, &[idx, i as u64]);
        let mut inst = instance(kernel, &mut r)?;
        if opts.fault == Some(kernel) {
            inst.analytic.iter_mut().for_each(|g| *g *= 1.1);
        }
        let rep = grad_check(&inst.objective, &inst.params, &inst.analytic, opts.epsilon, opts.tolerance)?;
        worst = worst.max(rep.max_rel_error);
        coords += rep.checked;
    }
    Ok(KernelReport {
        kernel,
        instances: opts.instances,
        coordinates: coords,
        max_rel_error: worst,
        passed: worst < opts.tolerance,
    })
}

/// Runs every requested kernel; kernels are checked in parallel.
pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    use rayon::prelude::*;
    let kernels = opts
        .kernels
        .par_iter()
        .map(|&k| verify_kernel(k, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        tolerance: opts.tolerance,
        kernels,
    })
}
