//! SGD with momentum and weight decay, Adam, and the step LR schedule.

use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::Tensor;

fn check_grads(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Usage(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Usage(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}

/// SGD state. Update per parameter:
/// `buf ← momentum·buf + (grad + weight_decay·param)`, `param ← param − lr·buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Tensor>,
}

impl SgdState {
    pub fn new(params: &ParamSet, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: params.tensors().iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        check_grads(params, grads)?;
        if self.buffers.len() != params.len() {
            return Err(Error::Usage(
                "optimizer state does not match parameters".into(),
            ));
        }
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        for ((p, g), buf) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.buffers)
        {
            for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                *bv = mu * *bv + (gv + wd * *pv);
                *pv -= lr * *bv;
            }
        }
        Ok(())
    }
}

/// Plain `param − lr·grad`, the form of the virtual step.
pub fn sgd_vanilla(params: &ParamSet, grads: &[Tensor], lr: f64) -> Result<ParamSet> {
    check_grads(params, grads)?;
    params.offset(-lr, grads)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(Tensor::zeros_like).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.len() != params.len() {
            return Err(Error::Usage(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((pv, &gv), mv), vv) in it {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate divided by 10 at each milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    base: f64,
    milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn new(base: f64, milestones: Vec<usize>) -> Result<Self> {
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage(format!(
                "milestones must be strictly increasing, got {milestones:?}"
            )));
        }
        Ok(Self { base, milestones })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        (0..passed).fold(self.base, |lr, _| lr / 10.0)
    }
}
