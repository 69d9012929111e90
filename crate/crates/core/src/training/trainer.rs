use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::focce::{FocceConfig, FocceNet};
use crate::nn::{clip_global_norm, Adam, Optimizer, OptimizerKind, ParamStore, Sgd};
use crate::rng::seeded;
use crate::streaming::ChunkParams;
use crate::transducer::{TransducerConfig, TransducerNet};

use super::decode::{beam_decode, greedy_decode, DecodeOptions};
use super::metrics::{corpus_token_error_rate, MetricsRecord};
use super::objective::{total_objective, ObjectiveKind, ObjectiveOptions, ObjectiveWeights};
use super::synth::{Dataset, Utterance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "one")]
    pub lambda_mod: f64,
    #[serde(default = "default_lambda_chi")]
    pub lambda_chi: f64,
    #[serde(default = "default_lambda_gamma")]
    pub lambda_gamma: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub objective: ObjectiveKind,
    /// Per-network global gradient norm cap.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Optimizer steps before `log gamma` enters the modified likelihood.
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_max_symbols")]
    pub max_symbols_per_frame: usize,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
}

fn one() -> f64 {
    1.0
}
fn default_lambda_chi() -> f64 {
    0.01
}
fn default_lambda_gamma() -> f64 {
    0.05
}
fn default_lr() -> f64 {
    1e-3
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_clip() -> f64 {
    5.0
}
fn default_max_symbols() -> usize {
    3
}
fn default_beam() -> usize {
    4
}

impl TrainConfig {
    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            lambda_mod: self.lambda_mod,
            lambda_chi: self.lambda_chi,
            lambda_gamma: self.lambda_gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_symbols_per_frame == 0 || self.beam_width == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_symbols_per_frame and beam_width must be at least 1".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_symbols_per_frame: self.max_symbols_per_frame,
            max_output_len: usize::MAX,
        }
    }
}

/// Streams derived from the run seed. `theta` uses the run seed itself, so
/// both objectives start from the same transducer.
const OMEGA_STREAM: u64 = 0x006F_6D65_6761;
const SHUFFLE_STREAM: u64 = 0x0073_6875_6666_6C65;

fn make_optimizer(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Box<dyn Optimizer> {
    match kind {
        OptimizerKind::Sgd => Box::new(Sgd { lr }),
        OptimizerKind::Adam => Box::new(Adam::new(lr, store)),
    }
}

fn add_into(acc: &mut [Tensor], g: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (x, y) in a.values_mut().iter_mut().zip(g.values()) {
            *x += y;
        }
    }
}

/// Turns summed ascent gradients into averaged descent gradients, clipped.
fn to_descent(acc: &mut [Tensor], count: usize, clip: f64) -> f64 {
    let factor = -1.0 / count as f64;
    for t in acc.iter_mut() {
        t.values_mut().iter_mut().for_each(|v| *v *= factor);
    }
    clip_global_norm(acc, clip)
}

/// Averages of the logged quantities over a set of utterances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub deformed_ll: f64,
    pub modified_ll: f64,
    pub focce_objective: Option<f64>,
    pub mean_abs_log_gamma: f64,
    pub token_error_rate: f64,
}

pub struct Trainer {
    config: TrainConfig,
    chunk: ChunkParams,
    theta: TransducerNet,
    omega: Option<FocceNet>,
    theta_opt: Box<dyn Optimizer>,
    omega_opt: Option<Box<dyn Optimizer>>,
    shuffle: crate::rng::SeededRng,
    steps: usize,
    epoch: usize,
    records: Vec<MetricsRecord>,
}

impl Trainer {
    /// `focce` is only used (and `omega` only built) in the modified mode.
    pub fn new(
        config: TrainConfig,
        theta_config: TransducerConfig,
        focce: Option<FocceConfig>,
        chunk: ChunkParams,
    ) -> Result<Self> {
        config.validate()?;
        chunk.validate()?;
        let theta = TransducerNet::new(&mut seeded(config.seed), theta_config)?;
        let omega = match config.objective {
            ObjectiveKind::DeformedBaseline => None,
            ObjectiveKind::FocceModified => {
                let cfg = focce.ok_or_else(|| {
                    Error::InvalidConfig("the modified objective needs a FoCCE config".into())
                })?;
                if cfg.stack != theta.config().stack {
                    return Err(Error::InvalidConfig("both networks must stack frames alike".into()));
                }
                Some(FocceNet::new(&mut seeded(config.seed ^ OMEGA_STREAM), cfg, chunk)?)
            }
        };
        let theta_opt = make_optimizer(config.optimizer, config.learning_rate, theta.params());
        let omega_opt = omega
            .as_ref()
            .map(|o| make_optimizer(config.optimizer, config.learning_rate, o.params()));
        Ok(Self {
            shuffle: seeded(config.seed ^ SHUFFLE_STREAM),
            config,
            chunk,
            theta,
            omega,
            theta_opt,
            omega_opt,
            steps: 0,
            epoch: 0,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn theta(&self) -> &TransducerNet {
        &self.theta
    }

    pub fn omega(&self) -> Option<&FocceNet> {
        self.omega.as_ref()
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn options(&self, trainable: bool, with_deformed: bool) -> ObjectiveOptions {
        ObjectiveOptions {
            trainable,
            gamma_active: self.steps >= self.config.warmup_steps,
            with_deformed,
        }
    }

    /// One optimizer step over `batch`. Returns the mean total objective.
    pub fn step(&mut self, batch: &[&Utterance]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let weights = self.config.weights();
        let opts = self.options(true, false);
        let mut theta_acc: Option<Vec<Tensor>> = None;
        let mut omega_acc: Option<Vec<Tensor>> = None;
        let mut total = 0.0;
        for utt in batch {
            let obj = total_objective(
                &self.theta,
                self.omega.as_ref(),
                &utt.features,
                &utt.labels,
                self.chunk,
                &weights,
                self.config.objective,
                opts,
            )?;
            let value = obj.scalar(obj.total);
            if !value.is_finite() {
                return Err(self.diverged(format!("non-finite objective {value}")));
            }
            total += value;
            let (gt, go) = obj.gradients()?;
            match &mut theta_acc {
                Some(acc) => add_into(acc, &gt),
                None => theta_acc = Some(gt),
            }
            if let Some(go) = go {
                match &mut omega_acc {
                    Some(acc) => add_into(acc, &go),
                    None => omega_acc = Some(go),
                }
            }
        }
        let n = batch.len();
        if let Some(mut g) = theta_acc {
            let norm = to_descent(&mut g, n, self.config.clip_norm);
            if !norm.is_finite() {
                return Err(self.diverged("non-finite transducer gradient".into()));
            }
            self.theta_opt.step(self.theta.params_mut(), &g);
        }
        if let (Some(mut g), Some(net), Some(opt)) = (omega_acc, self.omega.as_mut(), self.omega_opt.as_mut()) {
            let norm = to_descent(&mut g, n, self.config.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch + 1,
                    step: self.steps,
                    reason: "non-finite estimator gradient".into(),
                });
            }
            opt.step(net.params_mut(), &g);
        }
        self.steps += 1;
        Ok(total / n as f64)
    }

    fn diverged(&self, reason: String) -> Error {
        Error::Diverged {
            epoch: self.epoch + 1,
            step: self.steps,
            reason,
        }
    }

    /// One pass over `train` in a seeded shuffled order.
    pub fn train_epoch(&mut self, train: &[Utterance]) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&Utterance> = idx.iter().map(|&i| &train[i]).collect();
            sum += self.step(&batch)?;
            batches += 1;
        }
        self.epoch += 1;
        Ok(sum / batches.max(1) as f64)
    }

    /// Likelihoods, estimator statistics and greedy token error rate.
    pub fn evaluate(&self, data: &[Utterance]) -> Result<Evaluation> {
        let weights = self.config.weights();
        let opts = self.options(false, true);
        let mut eval = Evaluation {
            focce_objective: self.omega.as_ref().map(|_| 0.0),
            ..Evaluation::default()
        };
        let (mut gamma_sum, mut gamma_cells) = (0.0, 0usize);
        let mut pairs = Vec::with_capacity(data.len());
        for utt in data {
            let obj = total_objective(
                &self.theta,
                self.omega.as_ref(),
                &utt.features,
                &utt.labels,
                self.chunk,
                &weights,
                self.config.objective,
                opts,
            )?;
            eval.modified_ll += obj.scalar(obj.modified);
            eval.deformed_ll += obj.deformed.map_or(0.0, |d| obj.scalar(d));
            if let (Some(acc), Some(f)) = (eval.focce_objective.as_mut(), obj.focce) {
                *acc += obj.scalar(f);
            }
            let (mean, cells) = obj.log_gamma_magnitude();
            gamma_sum += mean * cells as f64;
            gamma_cells += cells;
            pairs.push((self.greedy(&utt.features)?, utt.labels.clone()));
        }
        let n = data.len().max(1) as f64;
        eval.deformed_ll /= n;
        eval.modified_ll /= n;
        if let Some(f) = eval.focce_objective.as_mut() {
            *f /= n;
        }
        eval.mean_abs_log_gamma = if gamma_cells == 0 { 0.0 } else { gamma_sum / gamma_cells as f64 };
        eval.token_error_rate = corpus_token_error_rate(&pairs);
        Ok(eval)
    }

    pub fn greedy(&self, features: &Tensor) -> Result<Vec<usize>> {
        let frames = features.shape()[0].div_ceil(self.theta.config().stack);
        let schedule = self.chunk.schedule(frames)?;
        let mut scorer = self.theta.scorer(features, &schedule)?;
        Ok(greedy_decode(&mut scorer, &self.config.decode_options()))
    }

    pub fn beam(&self, features: &Tensor) -> Result<Vec<usize>> {
        let frames = features.shape()[0].div_ceil(self.theta.config().stack);
        let schedule = self.chunk.schedule(frames)?;
        let mut scorer = self.theta.scorer(features, &schedule)?;
        beam_decode(&mut scorer, self.config.beam_width, &self.config.decode_options())
    }

    /// Corpus token error rate with the configured beam.
    pub fn beam_token_error_rate(&self, data: &[Utterance]) -> Result<f64> {
        let pairs = data
            .iter()
            .map(|u| Ok((self.beam(&u.features)?, u.labels.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(corpus_token_error_rate(&pairs))
    }

    /// Trains one epoch, evaluates on `dev`, and logs a record.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<MetricsRecord> {
        self.train_epoch(&data.train)?;
        let eval = self.evaluate(&data.dev)?;
        let record = MetricsRecord {
            epoch: self.epoch,
            seed: self.config.seed,
            deformed_ll: eval.deformed_ll,
            modified_ll: eval.modified_ll,
            focce_objective: eval.focce_objective,
            mean_abs_log_gamma: eval.mean_abs_log_gamma,
            token_error_rate: eval.token_error_rate,
        };
        if !(record.deformed_ll.is_finite() && record.modified_ll.is_finite()) {
            return Err(self.diverged("non-finite dev likelihood".into()));
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs every configured epoch. On error the records logged so far
    /// remain available through [`Trainer::records`].
    pub fn fit(&mut self, data: &Dataset) -> Result<&[MetricsRecord]> {
        if data.train.is_empty() {
            return Err(Error::InvalidConfig("empty training set".into()));
        }
        for _ in 0..self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(&self.records)
    }
}
