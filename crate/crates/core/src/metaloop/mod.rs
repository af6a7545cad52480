//! Training iterations: plain cross-entropy, MW-Net loss reweighting and
//! meta feature re-weighting (MFRW).
//!
//! One MFRW iteration runs four phases on a training batch and a clean meta
//! batch:
//!
//! 1. **Loss pre-calculation**: per-example losses `L_pre` of the unattended
//!    model, with no gradient recorded.
//! 2. **Virtual train**: `ŵ(θ) = w − α ∇_w L_train(w, θ)` on a copy of the
//!    main weights, where the advisor scales the features by
//!    `W_f = Ψ(f, L_pre; θ)` before the classifier.
//! 3. **Meta train**: `θ' = Adam(θ, ∇_θ L_meta(ŵ(θ)))`, the meta loss being the
//!    clean-batch loss of the virtual model.
//! 4. **Actual train**: a real SGD step on `w` with attention from `θ'`.
//!
//! MW-Net follows the same shape with a scalar weight per example in place of
//! per-feature attention, and no pre-calculation phase of its own (the
//! detached per-example losses play the same role).
//!
//! The hypergradient in phase 3 needs the mixed second derivative
//! `∂²L_train/∂θ∂w` along `v = ∇_ŵ L_meta`. It is taken as a symmetric
//! difference of first-order gradients:
//!
//! ```text
//! ∇_θ L_meta(ŵ(θ)) ≈ −α · (∇_θ L_train(w + εv, θ) − ∇_θ L_train(w − εv, θ)) / 2ε,
//! ε = ε_scale / ‖v‖₂
//! ```

mod train;

pub use train::{evaluate, train, EpochSplit, MetricsRecord, Splits, TrainConfig, TrainOutcome};

use crate::autodiff::{Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nets::optim::sgd_vanilla;
use crate::nets::{AdamState, AdvisorSpec, MainModel, MwNetSpec, ParamSet, SgdState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ce,
    MwNet,
    Mfrw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::MwNet => "mwnet",
            Method::Mfrw => "mfrw",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Method::Ce),
            "mwnet" => Ok(Method::MwNet),
            "mfrw" => Ok(Method::Mfrw),
            other => Err(Error::Input(format!("unknown method {other:?}"))),
        }
    }
}

/// How the training loss is reweighted by the meta-model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// Per-feature attention `f ⊙ Ψ(f, L_pre; θ)`.
    Advisor(AdvisorSpec),
    /// Per-example weights `(1/n) Σ V_i ℓ_i` with `V_i = Ψ_mw(L_i; θ)`.
    MwNet(MwNetSpec),
    /// The advisor replaced by a constant attention value.
    ConstantAttention(f64),
    /// Every MW-Net example weight fixed to a constant.
    ConstantExampleWeight(f64),
}

impl Weighting {
    fn is_feature_level(&self) -> bool {
        matches!(
            self,
            Weighting::Advisor(_) | Weighting::ConstantAttention(_)
        )
    }
}

/// The weighted training loss and the weights that produced it
/// (`[n×d]` attention or `[n]` example weights).
pub struct WeightedLoss {
    pub loss: Var,
    pub weights: Var,
}

impl Weighting {
    /// Builds `L_train(w, θ)` on `tape`. `pre` holds the per-example losses fed
    /// to the meta-model; it enters as a constant.
    pub fn train_loss(
        &self,
        tape: &mut Tape,
        model: &MainModel,
        w: &[Var],
        theta: &[Var],
        batch: &Batch,
        pre: &Tensor,
    ) -> Result<WeightedLoss> {
        if pre.len() != batch.len() {
            return Err(Error::Usage(format!(
                "{} pre-computed losses for a batch of {}",
                pre.len(),
                batch.len()
            )));
        }
        let x = tape.constant(batch.x.clone());
        let f = model.features(tape, x, w)?;
        if self.is_feature_level() {
            let weights = match *self {
                Weighting::Advisor(spec) => {
                    let pre = tape.constant(pre.clone());
                    spec.forward(tape, f, pre, theta)?
                }
                Weighting::ConstantAttention(c) => {
                    tape.constant(Tensor::filled(tape.value(f).shape(), c))
                }
                _ => unreachable!(),
            };
            let attended = tape.hadamard(f, weights)?;
            let logits = model.logits(tape, attended, w)?;
            let losses = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let loss = tape.mean(losses)?;
            Ok(WeightedLoss { loss, weights })
        } else {
            let logits = model.logits(tape, f, w)?;
            let losses = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let weights = match *self {
                Weighting::MwNet(spec) => {
                    let pre = tape.constant(pre.clone());
                    spec.forward(tape, pre, theta)?
                }
                Weighting::ConstantExampleWeight(c) => {
                    tape.constant(Tensor::filled(&[batch.len()], c))
                }
                _ => unreachable!(),
            };
            let weighted = tape.hadamard(weights, losses)?;
            let loss = tape.mean(weighted)?;
            Ok(WeightedLoss { loss, weights })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypergradMode {
    FiniteDifference,
    /// The meta-model is never updated.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypergradSpec {
    pub mode: HypergradMode,
    pub eps_scale: f64,
}

impl Default for HypergradSpec {
    fn default() -> Self {
        Self {
            mode: HypergradMode::FiniteDifference,
            eps_scale: 0.01,
        }
    }
}

/// A temporarily updated copy of the main weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualModel {
    pub params: ParamSet,
    /// Iteration of the real model this copy was taken from.
    pub source_iteration: usize,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub t: usize,
    pub pre_losses: Tensor,
    /// Mean scalarized weight over clean / corrupted examples of the batch.
    pub weight_clean: Option<f64>,
    pub weight_noisy: Option<f64>,
    pub train_loss: f64,
    pub meta_loss: Option<f64>,
}

/// Meta-model parameters, optimizer and weighting scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub weighting: Weighting,
    pub theta: ParamSet,
    pub adam: AdamState,
    pub hyper: HypergradSpec,
}

/// Everything one training run carries between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: MainModel,
    pub w: ParamSet,
    pub sgd: SgdState,
    pub meta: Option<MetaState>,
    pub t: usize,
}

/// Per-example unattended losses, computed without recording gradients.
pub fn loss_precalculate(model: &MainModel, w: &ParamSet, batch: &Batch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let wv = w.freeze(&mut tape);
    let x = tape.constant(batch.x.clone());
    let logits = model.forward(&mut tape, x, &wv)?;
    let losses = tape.softmax_cross_entropy(logits, &batch.labels)?;
    Ok(tape.value(losses).clone())
}

/// Mean clean-label loss of `params` on `batch`, no advisor involved.
pub fn meta_loss(model: &MainModel, params: &ParamSet, batch: &Batch) -> Result<f64> {
    Ok(loss_precalculate(model, params, batch)?.mean())
}

/// `ŵ = w − α ∇_w L_train(w, θ)` by vanilla SGD. Neither `w` nor `θ` change.
pub fn virtual_train(
    weighting: &Weighting,
    model: &MainModel,
    w: &ParamSet,
    theta: &ParamSet,
    batch: &Batch,
    pre: &Tensor,
    alpha: f64,
) -> Result<ParamSet> {
    let mut tape = Tape::new();
    let wv = w.track(&mut tape);
    let tv = theta.freeze(&mut tape);
    let wl = weighting.train_loss(&mut tape, model, &wv, &tv, batch, pre)?;
    let grads = tape.backward(wl.loss)?.collect_or_zero(&wv, w.tensors());
    sgd_vanilla(w, &grads, alpha)
}

/// The MFRW virtual step with the advisor `theta`.
pub fn virtual_train_mfrw(
    state: &TrainState,
    advisor: &AdvisorSpec,
    theta: &ParamSet,
    batch: &Batch,
    pre: &Tensor,
    alpha: f64,
) -> Result<VirtualModel> {
    let params = virtual_train(
        &Weighting::Advisor(*advisor),
        &state.model,
        &state.w,
        theta,
        batch,
        pre,
        alpha,
    )?;
    Ok(VirtualModel {
        params,
        source_iteration: state.t,
    })
}

/// `∇_θ L_train(w, θ)` with `w` held constant; zeros where `θ` is unused.
pub fn meta_param_grad(
    weighting: &Weighting,
    model: &MainModel,
    w: &ParamSet,
    theta: &ParamSet,
    batch: &Batch,
    pre: &Tensor,
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let wv = w.freeze(&mut tape);
    let tv = theta.track(&mut tape);
    let wl = weighting.train_loss(&mut tape, model, &wv, &tv, batch, pre)?;
    Ok(tape
        .backward(wl.loss)?
        .collect_or_zero(&tv, theta.tensors()))
}

/// Result of one hypergradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergradient {
    pub grad: Vec<Tensor>,
    /// Meta loss of the virtual model.
    pub meta_loss: f64,
}

/// `∇_θ L_meta(ŵ(θ))` through the one-step virtual update.
#[allow(clippy::too_many_arguments)]
pub fn hypergradient(
    weighting: &Weighting,
    model: &MainModel,
    w: &ParamSet,
    theta: &ParamSet,
    batch_train: &Batch,
    pre: &Tensor,
    batch_meta: &Batch,
    alpha: f64,
    hyper: &HypergradSpec,
) -> Result<Hypergradient> {
    let w_hat = virtual_train(weighting, model, w, theta, batch_train, pre, alpha)?;

    let mut tape = Tape::new();
    let wv = w_hat.track(&mut tape);
    let x = tape.constant(batch_meta.x.clone());
    let logits = model.forward(&mut tape, x, &wv)?;
    let losses = tape.softmax_cross_entropy(logits, &batch_meta.labels)?;
    let loss = tape.mean(losses)?;
    let meta_loss = tape.value(loss).data()[0];

    if hyper.mode == HypergradMode::Disabled {
        return Ok(Hypergradient {
            grad: theta.tensors().iter().map(Tensor::zeros_like).collect(),
            meta_loss,
        });
    }

    let v = tape.backward(loss)?.collect_or_zero(&wv, w_hat.tensors());
    let norm = v.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::DegenerateGradient { norm });
    }
    if hyper.eps_scale.is_nan() || hyper.eps_scale <= 0.0 {
        return Err(Error::Usage(format!(
            "eps_scale must be > 0, got {}",
            hyper.eps_scale
        )));
    }
    let eps = hyper.eps_scale / norm;

    let w_plus = w.offset(eps, &v)?;
    let w_minus = w.offset(-eps, &v)?;
    let g_plus = meta_param_grad(weighting, model, &w_plus, theta, batch_train, pre)?;
    let g_minus = meta_param_grad(weighting, model, &w_minus, theta, batch_train, pre)?;

    let coef = -alpha / (2.0 * eps);
    let grad = g_plus
        .iter()
        .zip(&g_minus)
        .map(|(p, m)| p.zip_map(m, |a, b| coef * (a - b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Hypergradient { grad, meta_loss })
}

/// Outcome of the meta-train phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStep {
    pub theta: ParamSet,
    pub hypergrad: Vec<Tensor>,
    pub meta_loss: f64,
}

/// Computes the hypergradient and returns `θ' = Adam(θ, hypergradient)`.
/// `w` is untouched; only `adam` advances.
#[allow(clippy::too_many_arguments)]
pub fn meta_train(
    weighting: &Weighting,
    model: &MainModel,
    w: &ParamSet,
    theta: &ParamSet,
    batch_train: &Batch,
    pre: &Tensor,
    batch_meta: &Batch,
    alpha: f64,
    adam: &mut AdamState,
    hyper: &HypergradSpec,
) -> Result<MetaStep> {
    let h = hypergradient(
        weighting,
        model,
        w,
        theta,
        batch_train,
        pre,
        batch_meta,
        alpha,
        hyper,
    )?;
    let mut next = theta.clone();
    if hyper.mode == HypergradMode::FiniteDifference {
        adam.step(&mut next, &h.grad)?;
    }
    Ok(MetaStep {
        theta: next,
        hypergrad: h.grad,
        meta_loss: h.meta_loss,
    })
}

/// Real optimizer step on `w` with the (already updated) meta-model held
/// constant. Returns the training loss and the weights used.
pub fn actual_train(
    weighting: &Weighting,
    model: &MainModel,
    w: &mut ParamSet,
    theta: &ParamSet,
    batch: &Batch,
    pre: &Tensor,
    sgd: &mut SgdState,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let wv = w.track(&mut tape);
    let tv = theta.freeze(&mut tape);
    let wl = weighting.train_loss(&mut tape, model, &wv, &tv, batch, pre)?;
    let loss = tape.value(wl.loss).data()[0];
    let weights = tape.value(wl.weights).clone();
    let grads = tape.backward(wl.loss)?.collect_or_zero(&wv, w.tensors());
    sgd.step(w, &grads)?;
    Ok((loss, weights))
}

/// MFRW actual step on the state's main weights.
pub fn actual_train_mfrw(
    state: &mut TrainState,
    advisor: &AdvisorSpec,
    theta: &ParamSet,
    batch: &Batch,
    pre: &Tensor,
) -> Result<f64> {
    let TrainState { model, w, sgd, .. } = state;
    let (loss, _) = actual_train(
        &Weighting::Advisor(*advisor),
        model,
        w,
        theta,
        batch,
        pre,
        sgd,
    )?;
    Ok(loss)
}

/// Scalarizes weights per example (row mean for attention) and averages them
/// over clean and corrupted examples separately.
pub fn split_weight_means(weights: &Tensor, corrupted: &[bool]) -> (Option<f64>, Option<f64>) {
    let per_example: Vec<f64> = match weights.dims2() {
        Some((n, d)) => (0..n)
            .map(|i| weights.data()[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64)
            .collect(),
        None => weights.data().to_vec(),
    };
    let mean_where = |want: bool| {
        let vals: Vec<f64> = per_example
            .iter()
            .zip(corrupted)
            .filter(|(_, &c)| c == want)
            .map(|(v, _)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    (mean_where(false), mean_where(true))
}

/// One iteration of a meta-reweighted method: pre-calculation, virtual
/// train, meta train, actual train. Works for both MFRW and MW-Net; the
/// weighting scheme lives in the state.
pub fn meta_iteration(
    state: &mut TrainState,
    batch_train: &Batch,
    batch_meta: &Batch,
) -> Result<IterationTrace> {
    let meta = state
        .meta
        .as_mut()
        .ok_or_else(|| Error::Usage("meta iteration without a meta-model".into()))?;
    let pre = loss_precalculate(&state.model, &state.w, batch_train)?;
    let alpha = state.sgd.lr;
    let step = meta_train(
        &meta.weighting,
        &state.model,
        &state.w,
        &meta.theta,
        batch_train,
        &pre,
        batch_meta,
        alpha,
        &mut meta.adam,
        &meta.hyper,
    )?;
    meta.theta = step.theta;
    let (train_loss, weights) = actual_train(
        &meta.weighting,
        &state.model,
        &mut state.w,
        &meta.theta,
        batch_train,
        &pre,
        &mut state.sgd,
    )?;
    let (weight_clean, weight_noisy) = split_weight_means(&weights, &batch_train.corrupted);
    let trace = IterationTrace {
        t: state.t,
        pre_losses: pre,
        weight_clean,
        weight_noisy,
        train_loss,
        meta_loss: Some(step.meta_loss),
    };
    state.t += 1;
    Ok(trace)
}

fn expect_weighting(state: &TrainState, feature_level: bool, what: &str) -> Result<()> {
    match &state.meta {
        Some(m) if m.weighting.is_feature_level() == feature_level => Ok(()),
        _ => Err(Error::Usage(format!(
            "{what} needs a matching meta-model in the state"
        ))),
    }
}

/// One MFRW iteration (four phases).
pub fn mfrw_iteration(
    state: &mut TrainState,
    batch_train: &Batch,
    batch_meta: &Batch,
) -> Result<IterationTrace> {
    expect_weighting(state, true, "mfrw_iteration")?;
    meta_iteration(state, batch_train, batch_meta)
}

/// One MW-Net iteration (virtual, meta and actual steps on weighted losses).
pub fn mwnet_iteration(
    state: &mut TrainState,
    batch_train: &Batch,
    batch_meta: &Batch,
) -> Result<IterationTrace> {
    expect_weighting(state, false, "mwnet_iteration")?;
    meta_iteration(state, batch_train, batch_meta)
}

/// One SGD step on the mean cross-entropy.
pub fn ce_iteration(state: &mut TrainState, batch: &Batch) -> Result<IterationTrace> {
    let mut tape = Tape::new();
    let wv = state.w.track(&mut tape);
    let x = tape.constant(batch.x.clone());
    let logits = state.model.forward(&mut tape, x, &wv)?;
    let losses = tape.softmax_cross_entropy(logits, &batch.labels)?;
    let pre_losses = tape.value(losses).clone();
    let loss = tape.mean(losses)?;
    let train_loss = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?.collect_or_zero(&wv, state.w.tensors());
    state.sgd.step(&mut state.w, &grads)?;
    let trace = IterationTrace {
        t: state.t,
        pre_losses,
        weight_clean: None,
        weight_noisy: None,
        train_loss,
        meta_loss: None,
    };
    state.t += 1;
    Ok(trace)
}
