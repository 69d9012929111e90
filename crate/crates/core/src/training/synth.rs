//! Synthetic streaming-sensitive transduction task.
//!
//! Each event carries a class `c` and a key bit `b`. The class is a one-hot
//! pulse at the event frame `t0`; the key is a `±1` pulse on its own channel
//! at frame `t0 + h`. The label is `2c + b + 1`, so a model must see `h`
//! frames past the event to name it. With chunked context, an event whose
//! key falls beyond the chunk's context end is ambiguous at emission time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{normal, seeded};
use crate::streaming::{context_end, ChunkParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    /// Even number of labels; `V / 2` classes times two key values.
    pub vocab: usize,
    /// At least `V / 2 + 1`; extra channels carry noise only.
    pub feature_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chunk size in raw frames. Used for the analytic streaming rate.
    pub chunk_size: usize,
    pub horizon: usize,
    pub noise: f64,
    /// Probability that any admissible frame starts an event.
    pub emission_rate: f64,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("task: {m}")));
        if self.vocab < 2 || !self.vocab.is_multiple_of(2) {
            return bad("vocab must be even and at least 2");
        }
        if self.feature_dim < self.classes() + 1 {
            return bad("feature_dim must be at least vocab / 2 + 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.max_len <= self.horizon {
            return bad("max_len must exceed horizon");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.emission_rate) {
            return bad("emission_rate must lie in [0, 1]");
        }
        if self.train_utterances == 0 {
            return bad("train_utterances must be at least 1");
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.vocab / 2
    }

    /// Expected accuracy of the Bayes-optimal rule that must name each event
    /// with only the context visible at its own frame (right context
    /// `right`), over the uniform within-chunk event position. Once the key
    /// is unseen the two candidate labels are equally likely.
    pub fn bayes_streaming_accuracy(&self, right: usize) -> f64 {
        let c = self.chunk_size;
        let visible = (1..=c).filter(|p| p + self.horizon <= c + right).count();
        let frac = visible as f64 / c as f64;
        frac + 0.5 * (1.0 - frac)
    }

    /// The same rule with the whole utterance visible.
    pub fn bayes_full_accuracy(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `[T, feature_dim]` raw frames.
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// 1-based event frames, one per label.
    pub event_frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

fn utterance<R: Rng>(spec: &SyntheticTaskSpec, rng: &mut R) -> Utterance {
    let t_len = rng.random_range(spec.min_len..=spec.max_len);
    let d = spec.feature_dim;
    let mut x: Vec<f64> = (0..t_len * d).map(|_| spec.noise * normal(rng)).collect();
    let key = spec.classes();
    let mut labels = Vec::new();
    let mut event_frames = Vec::new();
    // An event needs its key frame inside the utterance.
    for t0 in 1..=t_len - spec.horizon {
        if !rng.random_bool(spec.emission_rate) {
            continue;
        }
        let c = rng.random_range(0..spec.classes());
        let b = rng.random_range(0..2usize);
        x[(t0 - 1) * d + c] += 1.0;
        x[(t0 - 1 + spec.horizon) * d + key] += if b == 1 { 1.0 } else { -1.0 };
        labels.push(2 * c + b + 1);
        event_frames.push(t0);
    }
    Utterance {
        features: Tensor::from_parts(vec![t_len, d], x),
        labels,
        event_frames,
    }
}

/// Deterministic in `spec.seed`; the three splits use disjoint streams.
pub fn synth_generate(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let split = |n: usize, stream: u64| {
        let mut rng = seeded(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream));
        (0..n).map(|_| utterance(spec, &mut rng)).collect::<Vec<_>>()
    };
    Ok(Dataset {
        train: split(spec.train_utterances, 1),
        dev: split(spec.dev_utterances, 2),
        test: split(spec.test_utterances, 3),
    })
}

/// Runs the Bayes-optimal per-event rule on clean features: an event is
/// named correctly when its key frame is within the visible context, and
/// otherwise guessed (first of the two candidates). Returns accuracy.
pub fn oracle_streaming_accuracy(data: &[Utterance], spec: &SyntheticTaskSpec, chunk: ChunkParams) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for u in data {
        let t_len = u.features.shape()[0];
        for (&t0, &label) in u.event_frames.iter().zip(&u.labels) {
            let visible = context_end(chunk.chunk_size, chunk.right_context, t_len, t0)?;
            let guess_bit = if t0 + spec.horizon <= visible { (label - 1) % 2 } else { 0 };
            total += 1;
            right += usize::from(guess_bit == (label - 1) % 2);
        }
    }
    Ok(right as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(h: usize) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            vocab: 8,
            feature_dim: 5,
            min_len: 32,
            max_len: 64,
            chunk_size: 4,
            horizon: h,
            noise: 0.1,
            emission_rate: 0.1,
            train_utterances: 40,
            dev_utterances: 10,
            test_utterances: 10,
            seed: 3,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&spec(4)).unwrap();
        let b = synth_generate(&spec(4)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(4);
        other.seed = 4;
        assert_ne!(a.train, synth_generate(&other).unwrap().train);
    }

    #[test]
    fn labels_encode_class_and_key() {
        let s = spec(4);
        let data = synth_generate(&s).unwrap();
        for u in &data.train {
            for (&t0, &y) in u.event_frames.iter().zip(&u.labels) {
                let c = (y - 1) / 2;
                let b = (y - 1) % 2;
                assert!(u.features.get(&[t0 - 1, c]).unwrap() > 0.5);
                let key = u.features.get(&[t0 - 1 + 4, 4]).unwrap();
                assert_eq!(key > 0.0, b == 1);
            }
        }
    }

    #[test]
    fn streaming_gap_follows_horizon() {
        let chunk = ChunkParams {
            chunk_size: 4,
            right_context: 0,
        };
        assert_eq!(spec(0).bayes_streaming_accuracy(0), 1.0);
        assert_eq!(spec(4).bayes_streaming_accuracy(0), 0.5);
        let d0 = synth_generate(&spec(0)).unwrap();
        assert_eq!(oracle_streaming_accuracy(&d0.train, &spec(0), chunk).unwrap(), 1.0);
        let d4 = synth_generate(&spec(4)).unwrap();
        let acc = oracle_streaming_accuracy(&d4.train, &spec(4), chunk).unwrap();
        assert!(acc < 0.75, "{acc}");
    }
}
