//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here touches the tape.

#![allow(dead_code)]

use mfrw_core::autodiff::Tape;
use mfrw_core::data::Batch;
use mfrw_core::metaloop::{virtual_train, Weighting};
use mfrw_core::nets::{AdvisorSpec, BackboneSpec, MainModel, MwNetSpec, ParamSet};
use mfrw_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn rel_l2(approx: &[f64], truth: &[f64]) -> f64 {
    let diff = approx
        .iter()
        .zip(truth)
        .map(|(a, t)| (a - t).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / truth.iter().map(|t| t * t).sum::<f64>().sqrt()
}

pub fn flat(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// A plain ReLU MLP with softmax cross-entropy on top, stored as row-major
/// `(W [fan_in × fan_out], b)` pairs.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Mlp {
    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        self.widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Pre-activations of every hidden layer, then the mean loss.
    pub fn eval(&self, params: &[f64]) -> (Vec<f64>, f64) {
        let n = self.batch();
        let layers = self.layer_sizes();
        let mut act = self.x.clone();
        let mut pre_all = Vec::new();
        let mut off = 0;
        for (li, &(fi, fo)) in layers.iter().enumerate() {
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; n * fo];
            for r in 0..n {
                for j in 0..fo {
                    let mut s = b[j];
                    for k in 0..fi {
                        s += act[r * fi + k] * w[k * fo + j];
                    }
                    z[r * fo + j] = s;
                }
            }
            if li + 1 < layers.len() {
                pre_all.extend_from_slice(&z);
                act = z.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                act = z;
            }
        }
        let c = *self.widths.last().unwrap();
        let mut total = 0.0;
        for r in 0..n {
            let row = &act[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[self.labels[r]];
        }
        (pre_all, total / n as f64)
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.eval(params).1
    }

    /// Loss and parameter gradients through the tape.
    pub fn tape_grad(&self) -> (f64, Vec<f64>) {
        let n = self.batch();
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (fi, fo) in self.layer_sizes() {
            let w = Tensor::matrix(fi, fo, self.params[off..off + fi * fo].to_vec()).unwrap();
            let b =
                Tensor::vector(self.params[off + fi * fo..off + fi * fo + fo].to_vec()).unwrap();
            off += fi * fo + fo;
            vars.push((tape.param(w), tape.param(b)));
        }
        let mut h = tape.constant(Tensor::matrix(n, self.widths[0], self.x.clone()).unwrap());
        for (i, &(w, b)) in vars.iter().enumerate() {
            h = tape.affine(h, w, b).unwrap();
            if i + 1 < vars.len() {
                h = tape.relu(h).unwrap();
            }
        }
        let l = tape.softmax_cross_entropy(h, &self.labels).unwrap();
        let loss = tape.mean(l).unwrap();
        let value = tape.value(loss).data()[0];
        let g = tape.backward(loss).unwrap();
        let mut out = Vec::new();
        for (w, b) in vars {
            out.extend_from_slice(g.get(w).unwrap().data());
            out.extend_from_slice(g.get(b).unwrap().data());
        }
        (value, out)
    }
}

/// A random MLP with 1–3 affine layers and widths ≤ 64. Instances whose
/// hidden pre-activations come within `margin` of a ReLU kink are redrawn,
/// deterministically, from the next stream of `seed`.
pub fn random_mlp(seed: u64, margin: f64) -> Mlp {
    for attempt in 0u64.. {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        let layers = rng.random_range(1..=3);
        let mut widths = vec![rng.random_range(1..=64)];
        for _ in 1..layers {
            widths.push(rng.random_range(1..=64));
        }
        let classes = rng.random_range(2..=10);
        widths.push(classes);
        let n = rng.random_range(1..=6);
        let mut params = Vec::new();
        for w in widths.windows(2) {
            let bound = (3.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend((0..w[1]).map(|_| rng.random_range(-0.5..0.5)));
        }
        let x = (0..n * widths[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mlp = Mlp {
            widths,
            params,
            x,
            labels,
        };
        let (pre, _) = mlp.eval(&mlp.params);
        if pre.iter().all(|z| z.abs() > margin) {
            return mlp;
        }
    }
    unreachable!()
}

/// Checks every parameter gradient of `mlp` against central differences
/// with step `h`; returns the worst relative error.
pub fn worst_mlp_grad_error(mlp: &Mlp, h: f64) -> f64 {
    let (_, analytic) = mlp.tape_grad();
    let numeric = central_diff(|p| mlp.loss(p), &mlp.params, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n, 1e-6))
        .fold(0.0, f64::max)
}

/// The tiny bilevel instance: 2-dim inputs, a 3-unit feature, 2 classes,
/// batches of 4.
pub struct TinyInstance {
    pub model: MainModel,
    pub w: ParamSet,
    pub theta: ParamSet,
    pub weighting: Weighting,
    pub train: Batch,
    pub meta: Batch,
    pub pre: Tensor,
    pub alpha: f64,
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let x: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels: Vec<usize> = (0..n).map(|i| (i + rng.random_range(0..2)) % 2).collect();
    Batch {
        x: Tensor::matrix(n, 2, x).unwrap(),
        corrupted: vec![false; n],
        labels,
    }
}

fn randomize(set: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for t in set.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub const TINY_EMBED: usize = 4;
pub const TINY_MWNET_HIDDEN: usize = 10;

pub fn tiny_instance(seed: u64, feature_level: bool) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MainModel::new(BackboneSpec::new(2, vec![], 3).unwrap(), 2).unwrap();
    let mut w = model.init(seed);
    randomize(&mut w, &mut rng, 1.0);
    let (weighting, mut theta) = if feature_level {
        let spec = AdvisorSpec::new(3, TINY_EMBED).unwrap();
        (Weighting::Advisor(spec), spec.init(seed))
    } else {
        let spec = MwNetSpec::new(TINY_MWNET_HIDDEN).unwrap();
        (Weighting::MwNet(spec), spec.init(seed))
    };
    randomize(&mut theta, &mut rng, 0.8);
    let train = random_batch(&mut rng, 4);
    let meta = random_batch(&mut rng, 4);
    let pre = mfrw_core::metaloop::loss_precalculate(&model, &w, &train).unwrap();
    TinyInstance {
        model,
        w,
        theta,
        weighting,
        train,
        meta,
        pre,
        alpha: 0.5,
    }
}

impl TinyInstance {
    pub fn total_params(&self) -> usize {
        self.w.numel() + self.theta.numel()
    }

    /// `θ ↦ L_meta(ŵ(θ))`, the full pipeline with the virtual step recomputed.
    pub fn meta_objective(&self, theta_flat: &[f64]) -> f64 {
        let mut theta = self.theta.clone();
        theta.assign_flat(theta_flat).unwrap();
        let w_hat = virtual_train(
            &self.weighting,
            &self.model,
            &self.w,
            &theta,
            &self.train,
            &self.pre,
            self.alpha,
        )
        .unwrap();
        mfrw_core::metaloop::meta_loss(&self.model, &w_hat, &self.meta).unwrap()
    }

    pub fn brute_force_hypergrad(&self, h: f64) -> Vec<f64> {
        central_diff(|t| self.meta_objective(t), &self.theta.flatten(), h)
    }
}
