use std::f64::consts::PI;

use super::{DualTensor, Scalar, Tensor};
use crate::error::{Error, Result};

/// `0.5·base_lr·(1 + cos(π·step/total_steps))`.
pub fn cosine_lr(step: u64, base_lr: f64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Parameter("cosine horizon must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Parameter(format!(
            "step {step} beyond cosine horizon {total_steps}"
        )));
    }
    Ok(0.5 * base_lr * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD with the learning rate cosine-decayed to zero over `total_steps`.
    SgdCosine,
    /// SGD with a constant learning rate.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        AdamConstants {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar = f32> {
    pub kind: OptimizerKind,
    pub step_count: u64,
    pub base_lr: f64,
    /// Cosine horizon; ignored by the other kinds.
    pub total_steps: u64,
    pub adam: AdamConstants,
    /// First/second moments, one pair per parameter in call order.
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    fn new(kind: OptimizerKind, base_lr: f64, total_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {base_lr}"
            )));
        }
        Ok(OptimizerState {
            kind,
            step_count: 0,
            base_lr,
            total_steps,
            adam: AdamConstants::default(),
            moments: Vec::new(),
        })
    }

    pub fn sgd_cosine(base_lr: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Parameter("cosine horizon must be positive".into()));
        }
        Self::new(OptimizerKind::SgdCosine, base_lr, total_steps)
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr, 0)
    }

    pub fn with_adam_constants(mut self, adam: AdamConstants) -> Self {
        self.adam = adam;
        self
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> Result<f64> {
        match self.kind {
            OptimizerKind::SgdCosine => cosine_lr(self.step_count, self.base_lr, self.total_steps),
            OptimizerKind::Sgd | OptimizerKind::Adam => Ok(self.base_lr),
        }
    }

    /// Applies one update to `params` given matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "optimizer_step",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.kind == OptimizerKind::SgdCosine && self.step_count >= self.total_steps {
            return Err(Error::Parameter(format!(
                "cosine schedule exhausted after {} steps",
                self.total_steps
            )));
        }
        let lr = self.current_lr()?;
        match self.kind {
            OptimizerKind::SgdCosine | OptimizerKind::Sgd => {
                let lr = T::lit(lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => self.adam_update(lr, params, grads)?,
        }
        self.step_count += 1;
        Ok(())
    }

    fn adam_update(&mut self, lr: f64, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                .collect();
        }
        if self.moments.len() != params.len()
            || self.moments.iter().zip(params.iter()).any(|(m, p)| m.0.shape() != p.shape())
        {
            return Err(Error::dim(
                "optimizer_step",
                "parameter list changed between Adam steps",
            ));
        }
        let AdamConstants { beta1, beta2, epsilon } = self.adam;
        let t = (self.step_count + 1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let (inv_c1, inv_c2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
        let lr = T::lit(lr);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv * inv_c1;
                let v_hat = *vv * inv_c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates each parameter with its own accumulated gradient.
    pub fn step_duals(&mut self, params: &mut [&mut DualTensor<T>]) -> Result<()> {
        let (mut values, grads): (Vec<&mut Tensor<T>>, Vec<&Tensor<T>>) =
            params.iter_mut().map(|d| (&mut d.value, &d.grad)).unzip();
        self.step(&mut values, &grads)
    }
}
