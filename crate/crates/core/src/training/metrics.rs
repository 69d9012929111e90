use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Levenshtein distance over tokens.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Edit distance over reference length. An empty reference scores the
/// number of inserted tokens.
pub fn token_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    edit_distance(hyp, reference) as f64 / reference.len().max(1) as f64
}

/// Total edits over total reference tokens.
pub fn corpus_token_error_rate(pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let edits: usize = pairs.iter().map(|(h, r)| edit_distance(h, r)).sum();
    let tokens: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    edits as f64 / tokens.max(1) as f64
}

/// One row of the per-epoch metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub seed: u64,
    pub deformed_ll: f64,
    pub modified_ll: f64,
    /// Absent when no estimator network is trained.
    pub focce_objective: Option<f64>,
    pub mean_abs_log_gamma: f64,
    pub token_error_rate: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,seed,deformed_ll,modified_ll,focce_objective,mean_abs_log_gamma,token_error_rate";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let focce = self
            .focce_objective
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{},{:.6},{:.6}",
            self.epoch,
            self.seed,
            self.deformed_ll,
            self.modified_ll,
            focce,
            self.mean_abs_log_gamma,
            self.token_error_rate
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ter_examples() {
        assert_eq!(token_error_rate(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert_eq!(token_error_rate::<u8>(&[], &[1, 2, 3, 4]), 1.0);
        assert!((token_error_rate(&['a', 'b', 'c'], &['a', 'x', 'c']) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(edit_distance(&[1, 2], &[2]), 1);
        assert_eq!(edit_distance(&[2, 1, 2], &[1, 2]), 1);
    }

    #[test]
    fn median_and_csv() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let r = MetricsRecord {
            epoch: 1,
            seed: 7,
            deformed_ll: -1.5,
            modified_ll: -1.25,
            focce_objective: None,
            mean_abs_log_gamma: 0.0,
            token_error_rate: 0.5,
        };
        assert_eq!(r.csv_row(), "1,7,-1.500000,-1.250000,,0.000000,0.500000");
    }
}
