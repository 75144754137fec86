//! SGD with momentum and step-decayed learning rate over sampled segments.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{predict, Ensemble, Sharing};
use crate::pipeline::{FeatureConfig, FeatureExtractor};
use crate::sampler::SamplingMode;
use crate::seed::{self, stream};
use crate::tensor::{Tape, Tensor};

/// Which step counter drives the learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    /// One counter over the whole run.
    Global,
    /// The counter restarts at 0 with every epoch.
    PerEpoch,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(LrSchedule::Global),
            "per-epoch" => Ok(LrSchedule::PerEpoch),
            other => Err(Error::invalid(format!("unknown learning-rate schedule `{other}`"))),
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrSchedule::Global => "global",
            LrSchedule::PerEpoch => "per-epoch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sharing: Sharing,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            momentum: 0.9,
            decay_factor: 10.0,
            decay_every: 50,
            schedule: LrSchedule::PerEpoch,
            batch_size: 16,
            epochs: 30,
            seed: 1,
            sharing: Sharing::Independent,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn segments(&self) -> usize {
        self.features.sampler.segments
    }

    pub fn with_segments(mut self, n: usize) -> Self {
        self.features.sampler.segments = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.lr0, "lr0")?;
        positive(self.decay_factor, "decay_factor")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid("decay_every must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.features.validate()
    }
}

/// `lr0 / decay_factor^⌊step / decay_every⌋`, on a global step counter.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_every) as i32;
    cfg.lr0 / cfg.decay_factor.powi(k)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f32>>,
    pub momentum: f32,
    pub step: u64,
}

impl SgdState {
    pub fn new(params: &[&mut Tensor], momentum: f64) -> Self {
        SgdState {
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            momentum: momentum as f32,
            step: 0,
        }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`
pub fn sgd_step(params: &mut [&mut Tensor], state: &mut SgdState, lr: f64) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} parameters for {} velocity buffers", params.len(), state.velocity.len()),
        ));
    }
    for (i, (p, v)) in params.iter().zip(&state.velocity).enumerate() {
        if p.grad().is_none() {
            return Err(Error::MissingGradient(format!("#{i} with shape {:?}", p.shape())));
        }
        if p.len() != v.len() {
            return Err(Error::shape("sgd_step", format!("velocity {i} does not mirror its parameter")));
        }
    }
    let lr = lr as f32;
    let mu = state.momentum;
    for (p, v) in params.iter_mut().zip(state.velocity.iter_mut()) {
        let g = p.grad().expect("checked above").to_vec();
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    /// Parameters from the epoch with the best validation accuracy.
    pub ensemble: Ensemble,
    pub history: Vec<EpochRecord>,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// One optimisation step at rate `lr` on the clips `ids`. Returns the
/// batch loss and the number of correct training-mode predictions.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    ens: &mut Ensemble,
    sgd: &mut SgdState,
    fx: &FeatureExtractor,
    ds: &Dataset,
    ids: &[usize],
    seed: u64,
    epoch: u64,
    lr: f64,
) -> Result<(f64, usize)> {
    let batches = fx.batch(ds, ids, SamplingMode::Stochastic, seed, epoch)?;
    let labels: Vec<usize> = ids.iter().map(|&i| ds.clips[i].label).collect();
    let mut tape = Tape::new();
    let (mean, bindings) = ens.forward_train(&mut tape, &batches)?;
    let loss = tape.cross_entropy(mean, &labels)?;
    let grads = tape.backward(loss)?;
    ens.zero_grad();
    for (net, leaves) in &bindings {
        ens.nets[*net].accumulate_grads(leaves, &grads)?;
    }
    sgd_step(&mut ens.params_mut(), sgd, lr)?;

    let k = crate::dataset::NUM_CLASSES;
    let correct = tape
        .value(mean)
        .data()
        .chunks_exact(k)
        .zip(&labels)
        .filter(|(row, &l)| predict(row) == l)
        .count();
    Ok((tape.value(loss).data()[0] as f64, correct))
}

/// Trains a fresh ensemble on `train_ids`, tracking `val_ids` each epoch.
pub fn train_fold(ds: &Dataset, train_ids: &[usize], val_ids: &[usize], cfg: &TrainConfig) -> Result<TrainedFold> {
    cfg.validate()?;
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let channels = ds.clips[train_ids[0]].frame_dims()[0];
    let mut ens = Ensemble::new(cfg.segments(), cfg.sharing, channels, cfg.seed)?;
    let mut sgd = SgdState::new(&ens.params_mut(), cfg.momentum);
    let fx = FeatureExtractor::new(cfg.features)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Ensemble)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = train_ids.to_vec();
        order.shuffle(&mut seed::rng(&[cfg.seed, stream::SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = match cfg.schedule {
                LrSchedule::Global => sgd.step,
                LrSchedule::PerEpoch => i as u64,
            };
            let lr = lr_at(step, cfg);
            let (loss, c) = train_step(&mut ens, &mut sgd, &fx, ds, chunk, cfg.seed, epoch as u64, lr)?;
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        let val = evaluate(&ens, ds, val_ids, &cfg.features, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        history.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, epoch + 1, ens.clone()));
        }
    }
    Ok(match best {
        Some((_, epoch, ensemble)) => TrainedFold {
            ensemble,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainedFold {
            ensemble: ens,
            history,
            best_epoch: None,
        },
    })
}
