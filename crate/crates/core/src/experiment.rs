//! Multi-seed runs and sweeps over a [`RunConfig`].

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, SweepParam};
use crate::error::{Error, Result};
use crate::training::{median, metrics_csv, synth_generate, Dataset, MetricsRecord, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Corpus token error rate on the test split with the configured beam.
    pub test_token_error_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seeds: Vec<SeedOutcome>,
}

impl RunSummary {
    pub fn median_test_token_error_rate(&self) -> f64 {
        median(&self.seeds.iter().map(|s| s.test_token_error_rate).collect::<Vec<_>>())
    }

    /// Per-epoch medians across seeds, then one row with the test-set
    /// error rates.
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(
            "epoch,deformed_ll,modified_ll,focce_objective,mean_abs_log_gamma,token_error_rate\n",
        );
        let epochs = self.seeds.iter().map(|s| s.records.len()).min().unwrap_or(0);
        for e in 0..epochs {
            let col = |f: &dyn Fn(&MetricsRecord) -> f64| {
                median(&self.seeds.iter().map(|s| f(&s.records[e])).collect::<Vec<_>>())
            };
            let focce = if self.seeds[0].records[e].focce_objective.is_some() {
                format!("{:.6}", col(&|r| r.focce_objective.unwrap_or(f64::NAN)))
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{},{:.6},{:.6}",
                e + 1,
                col(&|r| r.deformed_ll),
                col(&|r| r.modified_ll),
                focce,
                col(&|r| r.mean_abs_log_gamma),
                col(&|r| r.token_error_rate),
            );
        }
        out.push_str("\nseed,test_token_error_rate\n");
        for s in &self.seeds {
            let _ = writeln!(out, "{},{:.6}", s.seed, s.test_token_error_rate);
        }
        let _ = writeln!(out, "median,{:.6}", self.median_test_token_error_rate());
        out
    }
}

/// Trains one seed on `data`. On divergence the metrics logged so far are
/// written (when `out` is set) and appended to the error.
pub fn run_seed(cfg: &RunConfig, data: &Dataset, seed: u64, out: Option<&Path>) -> Result<SeedOutcome> {
    let mut train = cfg.train.clone();
    train.seed = seed;
    let mut trainer = Trainer::new(train, cfg.transducer.clone(), cfg.focce.clone(), cfg.chunk)?;
    let fitted = trainer.fit(data).map(|_| ());
    if let Some(dir) = out {
        std::fs::write(dir.join(format!("metrics_seed{seed}.csv")), metrics_csv(trainer.records()))?;
    }
    if let Err(err) = fitted {
        return Err(match err {
            Error::Diverged { epoch, step, reason } => Error::Diverged {
                epoch,
                step,
                reason: match trainer.records().last() {
                    Some(r) => format!("{reason}; last finite metrics: {}", r.csv_row()),
                    None => format!("{reason}; no finite metrics were logged"),
                },
            },
            other => other,
        });
    }
    if let Some(dir) = out {
        let mut ck = Checkpoint::new(serde_json::to_value(cfg)?).with_network("theta", trainer.theta().params());
        if let Some(omega) = trainer.omega() {
            ck = ck.with_network("omega", omega.params());
        }
        ck.save(&dir.join(format!("checkpoint_seed{seed}.json")))?;
    }
    Ok(SeedOutcome {
        seed,
        records: trainer.records().to_vec(),
        test_token_error_rate: trainer.beam_token_error_rate(&data.test)?,
    })
}

/// Every seed of `cfg`. The dataset depends only on the task seed, so all
/// runs see the same data and differ only in initialization and order.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let data = synth_generate(&cfg.task)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, &data, s, out))
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary { seeds };
    if let Some(dir) = out {
        std::fs::write(dir.join("aggregate.csv"), summary.aggregate_csv())?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub summary: RunSummary,
}

/// Runs `cfg` once per value of `param`, each into its own subdirectory.
/// All configs are validated before the first run starts.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("a sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| cfg.with_param(param, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (&value, c) in values.iter().zip(&configs) {
        let dir = out.map(|d| d.join(format!("{}={}", param.name(), value)));
        rows.push(SweepRow {
            value,
            summary: run(c, dir.as_deref())?,
        });
    }
    if let Some(dir) = out {
        std::fs::write(dir.join("sweep.csv"), sweep_csv(param, &rows))?;
    }
    Ok(rows)
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},median_test_token_error_rate,median_final_dev_token_error_rate,seeds\n", param.name());
    for r in rows {
        let final_dev: Vec<f64> = r
            .summary
            .seeds
            .iter()
            .filter_map(|s| s.records.last().map(|m| m.token_error_rate))
            .collect();
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            r.value,
            r.summary.median_test_token_error_rate(),
            median(&final_dev),
            r.summary.seeds.len()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests::SAMPLE;
    use crate::training::ObjectiveKind;

    #[test]
    fn deterministic_bytes_and_layout() {
        let cfg = RunConfig::from_json(SAMPLE).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(&cfg, Some(a.path())).unwrap();
        run(&cfg, Some(b.path())).unwrap();
        for name in ["metrics_seed1.csv", "metrics_seed2.csv", "aggregate.csv", "checkpoint_seed1.json"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let csv = std::fs::read_to_string(a.path().join("metrics_seed1.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let ck = Checkpoint::load(&a.path().join("checkpoint_seed1.json")).unwrap();
        assert!(ck.networks.contains_key("omega"));
    }

    #[test]
    fn baseline_builds_no_estimator() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.train.objective = ObjectiveKind::DeformedBaseline;
        cfg.seeds = vec![3];
        let dir = tempfile::tempdir().unwrap();
        let s = run(&cfg, Some(dir.path())).unwrap();
        assert!(s.seeds[0].records.iter().all(|r| r.focce_objective.is_none()));
        let ck = Checkpoint::load(&dir.path().join("checkpoint_seed3.json")).unwrap();
        assert_eq!(ck.networks.keys().collect::<Vec<_>>(), vec!["theta"]);
    }

    #[test]
    fn sweep_has_one_row_per_value() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.seeds = vec![1];
        cfg.train.epochs = 1;
        let rows = sweep(&cfg, SweepParam::LambdaGamma, &[0.01, 0.05, 0.25], None).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(sweep_csv(SweepParam::LambdaGamma, &rows).lines().count(), 4);
    }
}
