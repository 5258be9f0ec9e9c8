//! Offline pretraining of the base model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::model::cross_entropy;
use crate::dataset::TaskSpec;
use crate::dsp::{time_shift, DspConfig, FeatureWindow, MfccExtractor, MAX_SHIFT};
use crate::model::{argmax, chunked_mean, Arch, Classifier, Gradients, ModelParams, Scalar};
use crate::seed::{derive_seed, rng_for};
use crate::{AudioClip, Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub augment_shift_max: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            patience: 3,
            seed: 0,
            augment_shift_max: MAX_SHIFT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!("batch_size {} must be even and >= 2", self.batch_size)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.augment_shift_max > MAX_SHIFT {
            return Err(Error::Config(format!("augment_shift_max above {MAX_SHIFT}")));
        }
        Ok(())
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(arch: Arch) -> Self {
        let n = arch.param_count();
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `values` in place.
    ///
    /// Nothing is modified when a gradient entry is not finite.
    pub fn apply(&mut self, values: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if values.len() != grads.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam over {} params with {} grads and {} moments",
                values.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some((index, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                index,
                value: g.to_f64().unwrap_or(f64::NAN),
            });
        }
        self.t += 1;
        let conv = |x: f64| T::from_f64(x).unwrap();
        let (b1, b2) = (conv(self.beta1), conv(self.beta2));
        let (one_b1, one_b2) = (conv(1.0 - self.beta1), conv(1.0 - self.beta2));
        let bc1 = conv(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = conv(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (conv(lr), conv(self.eps));
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional Adam step: returns the updated parameters and optimizer state.
pub fn adam_step<T: Scalar>(
    params: &ModelParams<T>,
    grads: &Gradients<T>,
    state: &AdamState<T>,
    lr: f64,
) -> Result<(ModelParams<T>, AdamState<T>)> {
    if params.arch != grads.arch {
        return Err(Error::Shape("gradients belong to a different architecture".into()));
    }
    let mut next = params.clone();
    let mut st = state.clone();
    st.apply(&mut next.values, &grads.values, lr)?;
    Ok((next, st))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub acc: f64,
}

/// Mean cross-entropy and argmax accuracy (ties predict non-target).
pub fn evaluate<M: Classifier>(model: &M, dataset: &[(FeatureWindow, Label)]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let per_sample = dataset
        .par_iter()
        .map(|(x, y)| {
            let probs = model.predict(x)?;
            Ok((cross_entropy(probs, *y), argmax(probs) == *y))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    Ok(Evaluation {
        loss: chunked_mean(&per_sample.iter().map(|p| p.0).collect::<Vec<_>>()),
        acc: per_sample.iter().filter(|p| p.1).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patience {
    Improved,
    Waiting,
    Stop,
}

/// Stops once validation loss has failed to improve for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> Patience {
        let improved = match self.best {
            None => val_loss.is_finite(),
            Some((_, best)) => val_loss < best,
        };
        if improved {
            self.best = Some((epoch, val_loss));
            self.wait = 0;
            Patience::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                Patience::Stop
            } else {
                Patience::Waiting
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }
}

/// Where training samples come from each epoch.
pub enum TrainingData<'a> {
    /// Fixed feature windows, reused unchanged.
    Features(&'a [(FeatureWindow, Label)]),
    /// Raw 1 s clips; every draw applies a fresh uniform time shift in
    /// `[-shift_max, shift_max]` before extracting MFCCs.
    Clips {
        clips: &'a [(AudioClip, Label)],
        extractor: &'a MfccExtractor,
        shift_max: usize,
    },
}

impl TrainingData<'_> {
    pub fn len(&self) -> usize {
        match self {
            TrainingData::Features(f) => f.len(),
            TrainingData::Clips { clips, .. } => clips.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw(&self, seed: u64) -> Result<Vec<(FeatureWindow, Label)>> {
        match self {
            TrainingData::Features(f) => Ok(f.to_vec()),
            TrainingData::Clips {
                clips,
                extractor,
                shift_max,
            } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let m = *shift_max as i64;
                let shifts: Vec<i64> = clips.iter().map(|_| rng.gen_range(-m..=m)).collect();
                clips
                    .par_iter()
                    .zip(shifts)
                    .map(|((clip, label), s)| {
                        let shifted = time_shift(clip, s)?;
                        Ok((extractor.extract(&shifted.samples, 0)?, *label))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Mini-batch Adam with early stopping; returns the best-validation-loss parameters.
///
/// Training metrics are measured on the epoch's (augmented) training draw with
/// the end-of-epoch parameters. Validation uses one frozen draw for all epochs
/// so its loss is comparable from epoch to epoch.
pub fn fit<T: Scalar>(
    arch: Arch,
    train: &TrainingData<'_>,
    validation: &TrainingData<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    arch.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config("training and validation partitions must be non-empty".into()));
    }
    let mut params = ModelParams::<T>::init(arch, derive_seed(cfg.seed, "pretrain/init"));
    let mut adam = AdamState::new(arch);
    let val = validation.draw(derive_seed(cfg.seed, "pretrain/validation"))?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let data = train.draw(derive_seed(cfg.seed, &format!("pretrain/epoch/{epoch}/shift")))?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("pretrain/epoch/{epoch}/order")));
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| data[i].clone()).collect();
            let (_, grads) = params.loss_and_grad(&batch)?;
            adam.apply(&mut params.values, &grads.values, cfg.lr)?;
        }
        let tr = evaluate(&params, &data)?;
        let va = evaluate(&params, &val)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.acc,
            val_loss: va.loss,
            val_acc: va.acc,
        });
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            tr.loss,
            tr.acc,
            va.loss,
            va.acc
        );
        match stopper.update(epoch, va.loss) {
            Patience::Improved => best = params.clone(),
            Patience::Waiting => {}
            Patience::Stop => break,
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
    })
}

/// Pretrains the base model of one keyword task from its clips.
pub fn pretrain(task: &TaskSpec, dsp: &DspConfig, cfg: &TrainConfig, arch: Arch) -> Result<TrainOutcome<f32>> {
    if task.train.is_empty() || task.validation.is_empty() {
        return Err(Error::Config(format!("task {:?} has an empty partition", task.target_word)));
    }
    let extractor = MfccExtractor::new(dsp)?;
    let train = task.load(&task.train)?;
    let validation = task.load(&task.validation)?;
    fit(
        arch,
        &TrainingData::Clips {
            clips: &train,
            extractor: &extractor,
            shift_max: cfg.augment_shift_max,
        },
        &TrainingData::Clips {
            clips: &validation,
            extractor: &extractor,
            shift_max: cfg.augment_shift_max,
        },
        cfg,
    )
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc";

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for m in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            m.epoch, m.train_loss, m.val_loss, m.train_acc, m.val_acc
        );
    }
    s
}

pub fn write_history_csv(history: &[EpochMetrics], path: &Path) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Schema(format!("{}: unexpected history header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("bad history row {l:?}")))
            };
            Ok(EpochMetrics {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_loss: num(2)?,
                train_acc: num(3)?,
                val_acc: num(4)?,
            })
        })
        .collect()
}
