//! Frame-synchronous greedy and beam decoding over a [`PrefixScorer`].

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_add_exp, Tensor};
use crate::error::Result;
use crate::lattice::{self, LocalProbTable};
use crate::transducer::PrefixScorer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub max_symbols_per_frame: usize,
    /// Hard cap on the hypothesis length.
    #[serde(default = "unbounded")]
    pub max_output_len: usize,
}

fn unbounded() -> usize {
    usize::MAX
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_symbols_per_frame: 3,
            max_output_len: usize::MAX,
        }
    }
}

/// Lowest-index argmax over labels `1..=V`.
fn best_label(lp: &[f64]) -> (usize, f64) {
    let mut best = (1, lp[1]);
    for (k, &v) in lp.iter().enumerate().skip(2) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// At each frame, emit the best label while it beats blank (up to the
/// per-frame cap), then advance.
pub fn greedy_decode(scorer: &mut dyn PrefixScorer, opts: &DecodeOptions) -> Vec<usize> {
    let mut prefix = Vec::new();
    for t in 0..scorer.frames() {
        for _ in 0..opts.max_symbols_per_frame {
            if prefix.len() >= opts.max_output_len {
                break;
            }
            let lp = scorer.log_probs(t, &prefix);
            let (k, v) = best_label(&lp);
            if v > lp[0] {
                prefix.push(k);
            } else {
                break;
            }
        }
    }
    prefix
}

/// Exact log-likelihood of `labels` under the scorer (sum over every
/// alignment, no per-frame cap).
pub fn sequence_log_likelihood(scorer: &mut dyn PrefixScorer, labels: &[usize]) -> Result<f64> {
    let (t_len, u1, v) = (scorer.frames(), labels.len() + 1, scorer.vocab());
    let mut blank = Vec::with_capacity(t_len * u1);
    let mut label = Vec::with_capacity(t_len * u1 * v);
    for t in 0..t_len {
        for u in 0..u1 {
            let lp = scorer.log_probs(t, &labels[..u]);
            blank.push(lp[0]);
            label.extend_from_slice(&lp[1..]);
        }
    }
    let table = LocalProbTable::new_unnormalized(
        Tensor::with_log_zero(vec![t_len, u1], blank)?,
        Tensor::with_log_zero(vec![t_len, u1, v], label)?,
        labels.to_vec(),
        v,
    )?;
    lattice::likelihood(&table)
}

#[derive(Clone, Debug, PartialEq)]
struct Hyp {
    prefix: Vec<usize>,
    score: f64,
    finished: bool,
}

fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.finished.cmp(&a.finished))
        .then_with(|| a.prefix.cmp(&b.prefix))
}

fn merge(cands: Vec<Hyp>) -> Vec<Hyp> {
    let mut slots: HashMap<(bool, Vec<usize>), usize> = HashMap::new();
    let mut out: Vec<Hyp> = Vec::with_capacity(cands.len());
    for h in cands {
        match slots.get(&(h.finished, h.prefix.clone())) {
            Some(&i) => out[i].score = log_add_exp(out[i].score, h.score),
            None => {
                slots.insert((h.finished, h.prefix.clone()), out.len());
                out.push(h);
            }
        }
    }
    out
}

/// Beam search with prefix merging.
///
/// Inside a frame, hypotheses either finish (take blank and move to the next
/// frame) or emit another label; both kinds compete for the same `width`
/// slots, with ties going to finishing and then to the lowest label. Width 1
/// therefore reproduces [`greedy_decode`]. Merged scores sum alignments, so
/// an unpruned search assigns every prefix its exact likelihood.
///
/// The survivors and the greedy hypothesis are rescored exactly and the best
/// is returned, which guarantees the result never scores below greedy.
pub fn beam_decode(scorer: &mut dyn PrefixScorer, width: usize, opts: &DecodeOptions) -> Result<Vec<usize>> {
    let width = width.max(1);
    let mut beam = vec![Hyp {
        prefix: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    for t in 0..scorer.frames() {
        let mut finished: Vec<Hyp> = Vec::new();
        let mut active = beam;
        for step in 0..=opts.max_symbols_per_frame {
            let mut cands = finished.clone();
            for h in &active {
                let lp = scorer.log_probs(t, &h.prefix);
                cands.push(Hyp {
                    prefix: h.prefix.clone(),
                    score: h.score + lp[0],
                    finished: true,
                });
                if step < opts.max_symbols_per_frame && h.prefix.len() < opts.max_output_len {
                    for (k, &v) in lp.iter().enumerate().skip(1) {
                        let mut prefix = h.prefix.clone();
                        prefix.push(k);
                        cands.push(Hyp {
                            prefix,
                            score: h.score + v,
                            finished: false,
                        });
                    }
                }
            }
            let mut cands = merge(cands);
            cands.sort_by(rank);
            cands.truncate(width);
            (finished, active) = cands.into_iter().partition(|h| h.finished);
            if active.is_empty() {
                break;
            }
        }
        beam = finished
            .into_iter()
            .map(|h| Hyp { finished: false, ..h })
            .collect();
    }
    let greedy = greedy_decode(scorer, opts);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut candidates: Vec<Vec<usize>> = beam.into_iter().map(|h| h.prefix).collect();
    candidates.push(greedy);
    for prefix in candidates {
        let score = sequence_log_likelihood(scorer, &prefix)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, prefix));
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_default())
}

/// Number of label sequences of length `0..=max_len` over `vocab` labels.
pub fn sequence_count(vocab: usize, max_len: usize) -> usize {
    (0..=max_len).map(|l| vocab.pow(l as u32)).sum()
}

/// MAP label sequence among all sequences of length at most `max_len`, by
/// exact likelihood. Ties go to the earlier sequence (shorter, then
/// lexicographically smaller).
pub fn exhaustive_map(scorer: &mut dyn PrefixScorer, max_len: usize) -> Result<(Vec<usize>, f64)> {
    let v = scorer.vocab();
    let mut best = (Vec::new(), sequence_log_likelihood(scorer, &[])?);
    for len in 1..=max_len {
        let mut seq = vec![1; len];
        loop {
            let score = sequence_log_likelihood(scorer, &seq)?;
            if score > best.1 {
                best = (seq.clone(), score);
            }
            // Odometer increment over 1..=v.
            let mut wrapped = true;
            for i in (0..len).rev() {
                if seq[i] < v {
                    seq[i] += 1;
                    wrapped = false;
                    break;
                }
                seq[i] = 1;
            }
            if wrapped {
                break;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores depend only on `(t, prefix)` through a fixed function.
    struct Fixed<F: FnMut(usize, &[usize]) -> Vec<f64>> {
        frames: usize,
        vocab: usize,
        f: F,
    }

    impl<F: FnMut(usize, &[usize]) -> Vec<f64>> PrefixScorer for Fixed<F> {
        fn frames(&self) -> usize {
            self.frames
        }
        fn vocab(&self) -> usize {
            self.vocab
        }
        fn log_probs(&mut self, t: usize, prefix: &[usize]) -> Vec<f64> {
            (self.f)(t, prefix)
        }
    }

    fn normalize(p: &[f64]) -> Vec<f64> {
        let s: f64 = p.iter().sum();
        p.iter().map(|v| (v / s).ln()).collect()
    }

    #[test]
    fn all_blank_gives_empty() {
        let mut s = Fixed {
            frames: 5,
            vocab: 3,
            f: |_, _: &[usize]| normalize(&[0.9, 0.05, 0.03, 0.02]),
        };
        assert!(greedy_decode(&mut s, &DecodeOptions::default()).is_empty());
        assert!(beam_decode(&mut s, 4, &DecodeOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn single_frame_label_then_blank() {
        let mut s = Fixed {
            frames: 1,
            vocab: 3,
            f: |_, prefix: &[usize]| {
                if prefix.is_empty() {
                    normalize(&[0.1, 0.1, 0.7, 0.1])
                } else {
                    normalize(&[0.8, 0.1, 0.05, 0.05])
                }
            },
        };
        assert_eq!(greedy_decode(&mut s, &DecodeOptions::default()), vec![2]);
    }

    #[test]
    fn per_frame_cap_applies() {
        let mut s = Fixed {
            frames: 2,
            vocab: 2,
            f: |_, _: &[usize]| normalize(&[0.1, 0.8, 0.1]),
        };
        let opts = DecodeOptions {
            max_symbols_per_frame: 3,
            max_output_len: usize::MAX,
        };
        assert_eq!(greedy_decode(&mut s, &opts), vec![1; 6]);
    }

    #[test]
    fn edge_of_tie_prefers_blank() {
        let mut s = Fixed {
            frames: 1,
            vocab: 2,
            f: |_, _: &[usize]| normalize(&[0.4, 0.4, 0.2]),
        };
        assert!(greedy_decode(&mut s, &DecodeOptions::default()).is_empty());
        assert!(beam_decode(&mut s, 1, &DecodeOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn counts_sequences() {
        assert_eq!(sequence_count(3, 2), 13);
        let mut seen = 0;
        let mut s = Fixed {
            frames: 1,
            vocab: 3,
            f: |_, _: &[usize]| {
                seen += 1;
                normalize(&[0.25, 0.25, 0.25, 0.25])
            },
        };
        exhaustive_map(&mut s, 2).unwrap();
        assert!(seen > 0);
    }
}
