use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    ce_iteration, loss_precalculate, meta_iteration, split_weight_means, HypergradSpec, MetaState,
    Method, TrainState, Weighting,
};
use crate::autodiff::Tape;
use crate::data::{batches, Batch, LabeledDataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::nets::{
    AdamState, AdvisorSpec, BackboneSpec, LrSchedule, MainModel, MwNetSpec, ParamSet, SgdState,
};

/// Every hyperparameter of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub mwnet_hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub meta_lr: f64,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub hyper: HypergradSpec,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

/// Train (noisy), meta (clean) and test (clean) sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub meta: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSplit {
    Train,
    Meta,
    Test,
}

impl EpochSplit {
    pub fn name(self) -> &'static str {
        match self {
            EpochSplit::Train => "train",
            EpochSplit::Meta => "meta",
            EpochSplit::Test => "test",
        }
    }
}

/// One row of the per-epoch metrics. The weight means are filled on the train
/// row of meta-reweighted runs: mean attention for MFRW, mean example weight
/// for MW-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: EpochSplit,
    pub loss: f64,
    pub accuracy: f64,
    pub weight_clean: Option<f64>,
    pub weight_noisy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The main model only; the meta-model is dropped after training.
    pub params: ParamSet,
    pub history: Vec<MetricsRecord>,
    pub final_test_accuracy: f64,
}

impl TrainConfig {
    fn validate(&self, splits: &Splits) -> Result<()> {
        if self.batch_size == 0 || self.meta_batch_size == 0 {
            return Err(Error::Usage("batch sizes must be ≥ 1".into()));
        }
        let d = splits.train.input_dim();
        if splits.meta.input_dim() != d || splits.test.input_dim() != d {
            return Err(Error::Consistency("splits disagree on input width".into()));
        }
        let c = splits.train.num_classes();
        if splits.meta.num_classes() != c || splits.test.num_classes() != c {
            return Err(Error::Consistency("splits disagree on class count".into()));
        }
        Ok(())
    }

    pub fn main_model(&self, input_dim: usize, num_classes: usize) -> Result<MainModel> {
        let backbone = BackboneSpec::new(input_dim, self.hidden_dims.clone(), self.feature_dim)?;
        MainModel::new(backbone, num_classes)
    }

    /// Fresh state with parameters initialized from `init_seed`.
    pub fn initial_state(&self, input_dim: usize, num_classes: usize) -> Result<TrainState> {
        let model = self.main_model(input_dim, num_classes)?;
        let w = model.init(self.init_seed);
        let sgd = SgdState::new(&w, self.lr, self.momentum, self.weight_decay);
        let meta_seed = derive_seed(self.init_seed, 1);
        let meta = match self.method {
            Method::Ce => None,
            Method::Mfrw => {
                let spec = AdvisorSpec::new(self.feature_dim, self.embed_dim)?;
                Some((Weighting::Advisor(spec), spec.init(meta_seed)))
            }
            Method::MwNet => {
                let spec = MwNetSpec::new(self.mwnet_hidden)?;
                Some((Weighting::MwNet(spec), spec.init(meta_seed)))
            }
        }
        .map(|(weighting, theta)| MetaState {
            weighting,
            adam: AdamState::new(&theta, self.meta_lr),
            theta,
            hyper: self.hyper,
        });
        Ok(TrainState {
            model,
            w,
            sgd,
            meta,
            t: 0,
        })
    }
}

/// Cycles through the meta set in meta-batches, reshuffling on each pass.
struct MetaSampler {
    order: Vec<usize>,
    pos: usize,
    pass: u64,
    batch: usize,
    seed: u64,
}

impl MetaSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            pass: 0,
            batch: batch.min(n),
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order
            .shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                self.seed, self.pass,
            )));
        self.pass += 1;
        self.pos = 0;
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Mean loss and accuracy of the main model on `batch`.
pub fn evaluate(model: &MainModel, w: &ParamSet, batch: &Batch) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let wv = w.freeze(&mut tape);
    let x = tape.constant(batch.x.clone());
    let logits = model.forward(&mut tape, x, &wv)?;
    let losses = tape.softmax_cross_entropy(logits, &batch.labels)?;
    let c = model.num_classes();
    let correct = tape
        .value(logits)
        .data()
        .chunks(c)
        .zip(&batch.labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok((
        tape.value(losses).mean(),
        correct as f64 / batch.len() as f64,
    ))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Mean meta-model weight over clean and corrupted training examples, with
/// the current main weights supplying the pre-calculated losses.
fn weight_means(state: &TrainState, batch: &Batch) -> Result<(Option<f64>, Option<f64>)> {
    let Some(meta) = &state.meta else {
        return Ok((None, None));
    };
    let pre = loss_precalculate(&state.model, &state.w, batch)?;
    let mut tape = Tape::new();
    let wv = state.w.freeze(&mut tape);
    let tv = meta.theta.freeze(&mut tape);
    let wl = meta
        .weighting
        .train_loss(&mut tape, &state.model, &wv, &tv, batch, &pre)?;
    Ok(split_weight_means(tape.value(wl.weights), &batch.corrupted))
}

fn epoch_records(state: &TrainState, splits: &Splits, epoch: usize) -> Result<Vec<MetricsRecord>> {
    let full_train = splits
        .train
        .batch(&(0..splits.train.len()).collect::<Vec<_>>())?;
    let (loss, accuracy) = evaluate(&state.model, &state.w, &full_train)?;
    let (weight_clean, weight_noisy) = weight_means(state, &full_train)?;
    let mut out = vec![MetricsRecord {
        epoch,
        split: EpochSplit::Train,
        loss,
        accuracy,
        weight_clean,
        weight_noisy,
    }];
    for (split, set) in [
        (EpochSplit::Meta, &splits.meta),
        (EpochSplit::Test, &splits.test),
    ] {
        let (loss, accuracy) = evaluate(&state.model, &state.w, &set.clean_batch())?;
        out.push(MetricsRecord {
            epoch,
            split,
            loss,
            accuracy,
            weight_clean: None,
            weight_noisy: None,
        });
    }
    Ok(out)
}

/// Runs `epochs` epochs of the configured method. Train labels are the
/// observed (possibly corrupted) ones; meta and test sets are scored on true
/// labels.
pub fn train(config: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    config.validate(splits)?;
    let mut state = config.initial_state(splits.train.input_dim(), splits.train.num_classes())?;
    let schedule = LrSchedule::new(config.lr, config.milestones.clone())?;
    let mut meta_sampler = MetaSampler::new(
        splits.meta.len(),
        config.meta_batch_size,
        derive_seed(config.shuffle_seed, u64::MAX),
    );
    let mut history = Vec::with_capacity(3 * config.epochs);

    for epoch in 0..config.epochs {
        state.sgd.lr = schedule.lr_at_epoch(epoch);
        for idx in batches(
            splits.train.len(),
            config.batch_size,
            derive_seed(config.shuffle_seed, epoch as u64),
        )? {
            let batch = splits.train.batch(&idx)?;
            match config.method {
                Method::Ce => ce_iteration(&mut state, &batch)?,
                Method::Mfrw | Method::MwNet => {
                    let meta_batch = splits.meta.batch(&meta_sampler.next())?;
                    meta_iteration(&mut state, &batch, &meta_batch)?
                }
            };
        }
        history.extend(epoch_records(&state, splits, epoch + 1)?);
    }

    let (_, final_test_accuracy) = evaluate(&state.model, &state.w, &splits.test.clean_batch())?;
    Ok(TrainOutcome {
        params: state.w,
        history,
        final_test_accuracy,
    })
}
