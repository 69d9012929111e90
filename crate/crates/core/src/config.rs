//! Run configuration: one JSON file describing the task, both networks, the
//! training loop, the chunk schedule, the output directory and the seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focce::FocceConfig;
use crate::streaming::ChunkParams;
use crate::training::{ObjectiveKind, SyntheticTaskSpec, TrainConfig};
use crate::transducer::TransducerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: SyntheticTaskSpec,
    pub transducer: TransducerConfig,
    /// Required for the modified objective; ignored by the baseline.
    #[serde(default)]
    pub focce: Option<FocceConfig>,
    pub train: TrainConfig,
    pub chunk: ChunkParams,
    pub output_dir: PathBuf,
    /// One run per seed; each overrides `train.seed`.
    pub seeds: Vec<u64>,
}

/// Hyperparameters a sweep may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    LambdaGamma,
    LambdaChi,
    ChunkSize,
    Horizon,
}

impl SweepParam {
    pub const NAMES: &'static [&'static str] = &["lambda_gamma", "lambda_chi", "chunk_size", "horizon"];

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "lambda_gamma" => Self::LambdaGamma,
            "lambda_chi" => Self::LambdaChi,
            "chunk_size" | "C" => Self::ChunkSize,
            "horizon" | "h" => Self::Horizon,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep parameter {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    fn integral(self) -> bool {
        matches!(self, Self::ChunkSize | Self::Horizon)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.transducer.validate()?;
        self.train.validate()?;
        self.chunk.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let t = &self.transducer;
        if t.vocab != self.task.vocab || t.feature_dim != self.task.feature_dim {
            return bad("transducer vocab and feature_dim must match the task".into());
        }
        if self.task.chunk_size != self.chunk.chunk_size * t.stack {
            return bad(format!(
                "task.chunk_size ({}) must equal chunk.chunk_size * transducer.stack ({})",
                self.task.chunk_size,
                self.chunk.chunk_size * t.stack
            ));
        }
        match (&self.focce, self.train.objective) {
            (None, ObjectiveKind::FocceModified) => {
                return bad("the focce-modified objective needs a focce section".into());
            }
            (Some(f), _) => {
                f.validate()?;
                if f.vocab != t.vocab || f.feature_dim != t.feature_dim || f.stack != t.stack {
                    return bad("focce vocab, feature_dim and stack must match the transducer".into());
                }
            }
            (None, ObjectiveKind::DeformedBaseline) => {}
        }
        Ok(())
    }

    /// Copy with one hyperparameter replaced, revalidated.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        if param.integral() && (value.fract() != 0.0 || value < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{} takes non-negative integers, got {value}",
                param.name()
            )));
        }
        match param {
            SweepParam::LambdaGamma => cfg.train.lambda_gamma = value,
            SweepParam::LambdaChi => cfg.train.lambda_chi = value,
            SweepParam::ChunkSize => {
                cfg.chunk.chunk_size = value as usize;
                cfg.task.chunk_size = value as usize * cfg.transducer.stack;
            }
            SweepParam::Horizon => cfg.task.horizon = value as usize,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "task": {"vocab": 4, "feature_dim": 3, "min_len": 8, "max_len": 12, "chunk_size": 2,
                 "horizon": 2, "noise": 0.1, "emission_rate": 0.15,
                 "train_utterances": 12, "dev_utterances": 4, "test_utterances": 4, "seed": 5},
        "transducer": {"stack": 1, "feature_dim": 3, "vocab": 4, "encoder_dim": 6, "encoder_layers": 2,
                       "kernel": 3, "predictor_dim": 5, "joiner_dim": 6},
        "focce": {"stack": 1, "feature_dim": 3, "vocab": 4, "encoder_dim": 5, "encoder_layers": 1,
                  "kernel": 3, "predictor_dim": 4, "flow_depth": 1, "flow_blocks": 2, "flow_hidden": 8},
        "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.003},
        "chunk": {"chunk_size": 2},
        "output_dir": "out",
        "seeds": [1, 2]
    }"#;

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.train.objective, ObjectiveKind::FocceModified);
        assert_eq!(cfg.train.lambda_gamma, 0.05);
        assert_eq!(cfg.train.clip_norm, 5.0);
        let c4 = cfg.with_param(SweepParam::ChunkSize, 4.0).unwrap();
        assert_eq!((c4.chunk.chunk_size, c4.task.chunk_size), (4, 4));
        assert!(cfg.with_param(SweepParam::Horizon, 1.5).is_err());
        assert!(cfg.with_param(SweepParam::LambdaGamma, -1.0).is_err());
        assert!(SweepParam::parse("depth").is_err());
        assert_eq!(SweepParam::parse("h").unwrap().name(), "horizon");
    }

    #[test]
    fn rejects_inconsistent_sections() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.transducer.vocab = 6;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.focce = None;
        assert!(cfg.validate().is_err());
        cfg.train.objective = ObjectiveKind::DeformedBaseline;
        cfg.validate().unwrap();
        assert!(RunConfig::from_json(&SAMPLE.replace("\"seeds\"", "\"seedz\"")).is_err());
    }
}
