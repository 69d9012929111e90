use rand::Rng;

use crate::autodiff::{log_sum_exp_iter, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on per-cell local normalization.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Per-cell log blank and log label probabilities over the `T x (U+1)`
/// lattice of one utterance.
///
/// Frames are 0-based here: row `t` holds the distribution used while the
/// alignment sits at frame `t + 1`. Labels are `1..=vocab`; `0` is reserved
/// for blank / start-of-sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalProbTable {
    frames: usize,
    vocab: usize,
    target: Vec<usize>,
    /// `[T, U+1]`
    log_blank: Tensor,
    /// `[T, U+1, V]`, label `k` at index `k - 1`.
    log_label: Tensor,
}

impl LocalProbTable {
    pub fn new(log_blank: Tensor, log_label: Tensor, target: Vec<usize>, vocab: usize) -> Result<Self> {
        let table = Self::new_unnormalized(log_blank, log_label, target, vocab)?;
        table.check_normalized()?;
        Ok(table)
    }

    /// Shape and label checks only. Used for gradient probes that move
    /// individual entries off the simplex.
    pub fn new_unnormalized(
        log_blank: Tensor,
        log_label: Tensor,
        target: Vec<usize>,
        vocab: usize,
    ) -> Result<Self> {
        let frames = log_blank.shape().first().copied().unwrap_or(0);
        if frames == 0 {
            return Err(Error::InvalidConfig("a lattice needs at least one frame".into()));
        }
        let u1 = target.len() + 1;
        if log_blank.shape() != [frames, u1] {
            return Err(Error::ShapeMismatch {
                op: "log_blank",
                lhs: log_blank.shape().to_vec(),
                rhs: vec![frames, u1],
            });
        }
        if log_label.shape() != [frames, u1, vocab] {
            return Err(Error::ShapeMismatch {
                op: "log_label",
                lhs: log_label.shape().to_vec(),
                rhs: vec![frames, u1, vocab],
            });
        }
        if let Some(&bad) = target.iter().find(|&&y| y == 0 || y > vocab) {
            return Err(Error::OutOfRange {
                what: "target label",
                index: bad,
                bound: vocab,
            });
        }
        Ok(Self {
            frames,
            vocab,
            target,
            log_blank,
            log_label,
        })
    }

    fn check_normalized(&self) -> Result<()> {
        for t in 0..self.frames {
            for u in 0..=self.target_len() {
                let total = self.log_blank_at(t, u).exp()
                    + self
                        .label_row(t, u)
                        .iter()
                        .map(|v| v.exp())
                        .sum::<f64>();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "cell (t={t}, u={u}) sums to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Random locally normalized table: logits drawn from `N(0, scale^2)`
    /// over blank plus `vocab` labels, target drawn uniformly.
    pub fn random<R: Rng>(rng: &mut R, frames: usize, target_len: usize, vocab: usize, scale: f64) -> Self {
        let target: Vec<usize> = (0..target_len).map(|_| rng.random_range(1..=vocab)).collect();
        Self::random_for_target(rng, frames, target, vocab, scale)
    }

    pub fn random_for_target<R: Rng>(
        rng: &mut R,
        frames: usize,
        target: Vec<usize>,
        vocab: usize,
        scale: f64,
    ) -> Self {
        let u1 = target.len() + 1;
        let mut blank = Vec::with_capacity(frames * u1);
        let mut labels = Vec::with_capacity(frames * u1 * vocab);
        for _ in 0..frames * u1 {
            let logits: Vec<f64> = (0..=vocab)
                .map(|_| scale * rng::normal(rng))
                .collect();
            let lse = log_sum_exp_iter(logits.iter().copied());
            blank.push(logits[0] - lse);
            labels.extend(logits[1..].iter().map(|l| l - lse));
        }
        Self {
            frames,
            vocab,
            target,
            log_blank: Tensor::from_parts(vec![frames, u1], blank),
            log_label: Tensor::from_parts(vec![frames, u1, vocab], labels),
        }
    }

    /// Every outcome (blank and each label) has probability `1/(V+1)`.
    pub fn uniform(frames: usize, target: Vec<usize>, vocab: usize) -> Result<Self> {
        let u1 = target.len() + 1;
        let lp = -((vocab + 1) as f64).ln();
        Self::new(
            Tensor::full(vec![frames, u1], lp),
            Tensor::full(vec![frames, u1, vocab], lp),
            target,
            vocab,
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn target_len(&self) -> usize {
        self.target.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn log_blank(&self) -> &Tensor {
        &self.log_blank
    }

    pub fn log_label(&self) -> &Tensor {
        &self.log_label
    }

    pub fn log_blank_at(&self, t: usize, u: usize) -> f64 {
        self.log_blank.values()[t * (self.target_len() + 1) + u]
    }

    fn label_row(&self, t: usize, u: usize) -> &[f64] {
        let v = self.vocab;
        let at = (t * (self.target_len() + 1) + u) * v;
        &self.log_label.values()[at..at + v]
    }

    /// `log Y(t, u, k)` for label `k` in `1..=V`.
    pub fn log_label_at(&self, t: usize, u: usize, k: usize) -> f64 {
        self.label_row(t, u)[k - 1]
    }

    /// Log probability of emitting the next target label `y_{u+1}` at `(t, u)`.
    pub fn log_emit_at(&self, t: usize, u: usize) -> f64 {
        self.log_label_at(t, u, self.target[u])
    }

    /// `[T, U]` table of `log Y(t, u, y_{u+1})`.
    pub fn emit_table(&self) -> Tensor {
        let u = self.target_len();
        let mut values = Vec::with_capacity(self.frames * u);
        for t in 0..self.frames {
            for j in 0..u {
                values.push(self.log_emit_at(t, j));
            }
        }
        Tensor::from_parts(vec![self.frames, u], values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_tables_are_normalized() {
        let mut rng = rng::seeded(1);
        for _ in 0..20 {
            let t = LocalProbTable::random(&mut rng, 4, 3, 5, 2.0);
            assert!(t.check_normalized().is_ok());
        }
    }

    #[test]
    fn rejects_bad_labels_and_mass() {
        let lb = Tensor::full(vec![1, 2], 0.5f64.ln());
        let ll = Tensor::full(vec![1, 2, 1], 0.5f64.ln());
        assert!(LocalProbTable::new(lb.clone(), ll.clone(), vec![2], 1).is_err());
        assert!(LocalProbTable::new(lb.clone(), ll.clone(), vec![0], 1).is_err());
        assert!(LocalProbTable::new(lb, ll, vec![1], 1).is_ok());
        let heavy = Tensor::full(vec![1, 1], 0.9f64.ln());
        let ll = Tensor::full(vec![1, 1, 1], 0.5f64.ln());
        assert!(LocalProbTable::new(heavy, ll, vec![], 1).is_err());
    }

    #[test]
    fn zero_frames_rejected() {
        let lb = Tensor::zeros(vec![0, 1]);
        let ll = Tensor::zeros(vec![0, 1, 2]);
        assert!(LocalProbTable::new_unnormalized(lb, ll, vec![], 2).is_err());
    }
}
