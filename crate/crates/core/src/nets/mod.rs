//! The networks: backbone, classifier head, the feature advisor and the
//! scalar loss-weighting meta-network used by the MW-Net baseline.
//!
//! Every network is a spec (widths only) plus a [`ParamSet`] holding its
//! tensors. Forward passes take the parameters as tape [`Var`]s so the caller
//! decides which set is tracked in a given phase.

pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use optim::{AdamState, LrSchedule, SgdState};

/// Which model a [`ParamSet`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Backbone and classifier weights.
    Main,
    /// Advisor or MW-Net meta-model weights.
    Meta,
}

/// Ordered, uniquely named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    role: Role,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(role: Role, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Usage(format!("duplicate parameter name {n}")));
            }
        }
        Ok(Self {
            role,
            names,
            tensors,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a tracked leaf.
    pub fn track(&self, tape: &mut Tape) -> Vec<Var> {
        tape.params(&self.tensors)
    }

    /// Registers every tensor as a constant leaf.
    pub fn freeze(&self, tape: &mut Tape) -> Vec<Var> {
        tape.constants(&self.tensors)
    }

    /// Copy with `self + scale * dir` applied tensor by tensor.
    pub fn offset(&self, scale: f64, dir: &[Tensor]) -> Result<Self> {
        if dir.len() != self.tensors.len() {
            return Err(Error::Usage(format!(
                "offset direction has {} tensors, parameters have {}",
                dir.len(),
                self.tensors.len()
            )));
        }
        let mut out = self.clone();
        for (t, d) in out.tensors.iter_mut().zip(dir) {
            t.axpy(scale, d)?;
        }
        Ok(out)
    }

    /// All values flattened in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites all values from a flat slice laid out as [`Self::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::Usage(format!(
                "flat vector has {} values, parameters have {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

/// Fan-in scaled uniform weights `U(-√(3/fan_in), √(3/fan_in))`, which keep
/// the output variance of a linear layer equal to its input variance.
fn uniform_weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

fn linear_entries(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    zero_weight: bool,
) -> [(String, Tensor); 2] {
    let w = if zero_weight {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        uniform_weight(rng, fan_in, fan_out)
    };
    [
        (format!("{prefix}.weight"), w),
        (format!("{prefix}.bias"), Tensor::zeros(&[fan_out])),
    ]
}

fn expect_params(what: &str, params: &[Var], expected: usize) -> Result<()> {
    if params.len() == expected {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "{what} expects {expected} parameter tensors, got {}",
            params.len()
        )))
    }
}

fn expect_width(tape: &Tape, what: &str, x: Var, width: usize) -> Result<usize> {
    match tape.value(x).dims2() {
        Some((n, d)) if d == width => Ok(n),
        _ => Err(Error::Input(format!(
            "{what} expects [n×{width}] input, got {:?}",
            tape.value(x).shape()
        ))),
    }
}

/// MLP feature extractor: every layer is affine followed by ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, feature_dim: usize) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::Input("backbone widths must be ≥ 1".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            feature_dim,
        })
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.feature_dim);
        w
    }

    pub fn num_tensors(&self) -> usize {
        2 * (self.hidden_dims.len() + 1)
    }

    pub fn entries(&self, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor)> {
        self.widths()
            .windows(2)
            .enumerate()
            .flat_map(|(i, w)| linear_entries(rng, &format!("backbone.{i}"), w[0], w[1], false))
            .collect()
    }

    /// `x:[n×input_dim]` → features `f:[n×feature_dim]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        expect_params("backbone", params, self.num_tensors())?;
        expect_width(tape, "backbone", x, self.input_dim)?;
        let mut h = x;
        for layer in params.chunks(2) {
            let z = tape.affine(h, layer[0], layer[1])?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }
}

/// Single affine layer from features to class logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ClassifierSpec {
    pub fn new(feature_dim: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || feature_dim == 0 {
            return Err(Error::Input(format!(
                "classifier needs ≥ 2 classes and ≥ 1 feature, got {num_classes} and {feature_dim}"
            )));
        }
        Ok(Self {
            feature_dim,
            num_classes,
        })
    }

    pub fn entries(&self, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor)> {
        linear_entries(rng, "classifier", self.feature_dim, self.num_classes, false).into()
    }

    /// Features `f:[n×d]` → logits `s:[n×c]`. Probabilities only exist inside
    /// the fused softmax cross-entropy.
    pub fn forward(&self, tape: &mut Tape, f: Var, params: &[Var]) -> Result<Var> {
        expect_params("classifier", params, 2)?;
        expect_width(tape, "classifier", f, self.feature_dim)?;
        tape.affine(f, params[0], params[1])
    }
}

/// Backbone followed by classifier, with parameters stored in one set
/// (backbone tensors first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainModel {
    pub backbone: BackboneSpec,
    pub classifier: ClassifierSpec,
}

impl MainModel {
    pub fn new(backbone: BackboneSpec, num_classes: usize) -> Result<Self> {
        let classifier = ClassifierSpec::new(backbone.feature_dim, num_classes)?;
        Ok(Self {
            backbone,
            classifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = self.backbone.entries(&mut rng);
        entries.extend(self.classifier.entries(&mut rng));
        ParamSet::new(Role::Main, entries).expect("generated names are unique")
    }

    /// Splits main-model vars into (backbone, classifier).
    pub fn split<'a>(&self, params: &'a [Var]) -> (&'a [Var], &'a [Var]) {
        params.split_at(self.backbone.num_tensors().min(params.len()))
    }

    pub fn features(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        self.backbone.forward(tape, x, self.split(params).0)
    }

    pub fn logits(&self, tape: &mut Tape, f: Var, params: &[Var]) -> Result<Var> {
        self.classifier.forward(tape, f, self.split(params).1)
    }

    /// Unattended forward pass `x → logits`.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let f = self.features(tape, x, params)?;
        self.logits(tape, f, params)
    }
}

/// The feature advisor: two embeddings (feature, loss) joined in a common
/// space, then projected back to per-feature weights in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvisorSpec {
    pub feature_dim: usize,
    pub embed_dim: usize,
}

pub const DEFAULT_EMBED_DIM: usize = 100;

impl AdvisorSpec {
    pub fn new(feature_dim: usize, embed_dim: usize) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 {
            return Err(Error::Input("advisor widths must be ≥ 1".into()));
        }
        Ok(Self {
            feature_dim,
            embed_dim,
        })
    }

    pub fn common_dim(&self) -> usize {
        2 * self.embed_dim
    }

    /// Parameters in order: feature embedding, loss embedding, common layer,
    /// output layer. The output weight starts at zero so the initial
    /// attention is exactly 0.5 everywhere.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, e, c) = (self.feature_dim, self.embed_dim, self.common_dim());
        let mut entries = Vec::with_capacity(8);
        entries.extend(linear_entries(
            &mut rng,
            "advisor.embed_feature",
            d,
            e,
            false,
        ));
        entries.extend(linear_entries(&mut rng, "advisor.embed_loss", 1, e, false));
        entries.extend(linear_entries(&mut rng, "advisor.common", c, c, false));
        entries.extend(linear_entries(&mut rng, "advisor.out", c, d, true));
        ParamSet::new(Role::Meta, entries).expect("generated names are unique")
    }

    /// `W_f = σ(A₄·relu(A₃·[relu(A₁ f) ‖ relu(A₂ L)]))` with affine `Aᵢ`.
    ///
    /// `loss` is read as a value only; no gradient reaches it.
    pub fn forward(&self, tape: &mut Tape, f: Var, loss: Var, params: &[Var]) -> Result<Var> {
        expect_params("advisor", params, 8)?;
        let n = expect_width(tape, "advisor", f, self.feature_dim)?;
        let loss_col = loss_column(tape, loss, n)?;
        let ef = tape.affine(f, params[0], params[1])?;
        let ef = tape.relu(ef)?;
        let el = tape.affine(loss_col, params[2], params[3])?;
        let el = tape.relu(el)?;
        let joined = tape.concat_cols(ef, el)?;
        let common = tape.affine(joined, params[4], params[5])?;
        let common = tape.relu(common)?;
        let out = tape.affine(common, params[6], params[7])?;
        tape.sigmoid(out)
    }
}

/// Detached `[n×1]` copy of a per-example loss vector, validated finite and
/// non-negative.
fn loss_column(tape: &mut Tape, loss: Var, n: usize) -> Result<Var> {
    let v = tape.value(loss);
    if v.len() != n {
        return Err(Error::Input(format!(
            "loss vector has {} entries for {n} examples",
            v.len()
        )));
    }
    if v.data().iter().any(|&l| !l.is_finite() || l < 0.0) {
        return Err(Error::Input(
            "loss values must be finite and non-negative".into(),
        ));
    }
    let col = v.reshape(vec![n, 1])?;
    Ok(tape.constant(col))
}

/// MW-Net meta-model: loss value → scalar example weight via 1→h→1 MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MwNetSpec {
    pub hidden: usize,
}

pub const DEFAULT_MWNET_HIDDEN: usize = 100;

impl MwNetSpec {
    pub fn new(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Input("MW-Net hidden width must be ≥ 1".into()));
        }
        Ok(Self { hidden })
    }

    /// Output layer starts at zero, so every initial weight is 0.5.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(4);
        entries.extend(linear_entries(
            &mut rng,
            "mwnet.hidden",
            1,
            self.hidden,
            false,
        ));
        entries.extend(linear_entries(&mut rng, "mwnet.out", self.hidden, 1, true));
        ParamSet::new(Role::Meta, entries).expect("generated names are unique")
    }

    /// Per-example losses `[n]` → weights `V:[n]` in (0, 1). The loss input
    /// is detached.
    pub fn forward(&self, tape: &mut Tape, loss: Var, params: &[Var]) -> Result<Var> {
        expect_params("mwnet", params, 4)?;
        let n = tape.value(loss).len();
        let col = loss_column(tape, loss, n)?;
        let h = tape.affine(col, params[0], params[1])?;
        let h = tape.relu(h)?;
        let out = tape.affine(h, params[2], params[3])?;
        let v = tape.sigmoid(out)?;
        tape.reshape(v, vec![n])
    }
}
