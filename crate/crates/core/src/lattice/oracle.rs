//! Brute-force likelihood by enumerating every monotonic alignment path.
//!
//! Independent of the tape and of the recursion: plain `f64` sums over
//! explicitly listed paths. Only usable on tiny lattices.

use crate::autodiff::{log_sum_exp_iter, Tensor};
use crate::error::{Error, Result};

use super::table::LocalProbTable;

/// Upper bound on the number of paths an enumeration may visit.
pub const MAX_ENUMERATED_PATHS: u128 = 1_000_000;

/// One step of an alignment path through the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    /// Blank: advance one frame without emitting.
    Advance,
    /// Emit the next target label at the current frame.
    Emit,
}

/// `C(T-1+U, U)`, the number of monotone paths from `(1,0)` to `(T,U)`.
pub fn path_count(frames: usize, target_len: usize) -> u128 {
    let n = (frames - 1 + target_len) as u128;
    let k = target_len.min(frames - 1) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Every path as a step sequence with `T-1` advances and `U` emissions.
pub fn enumerate_paths(frames: usize, target_len: usize) -> Result<Vec<Vec<Step>>> {
    guard(frames, target_len)?;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(frames - 1 + target_len);
    fn rec(advances: usize, emits: usize, current: &mut Vec<Step>, out: &mut Vec<Vec<Step>>) {
        if advances == 0 && emits == 0 {
            out.push(current.clone());
            return;
        }
        if advances > 0 {
            current.push(Step::Advance);
            rec(advances - 1, emits, current, out);
            current.pop();
        }
        if emits > 0 {
            current.push(Step::Emit);
            rec(advances, emits - 1, current, out);
            current.pop();
        }
    }
    rec(frames - 1, target_len, &mut current, &mut out);
    Ok(out)
}

fn guard(frames: usize, target_len: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidConfig("a lattice needs at least one frame".into()));
    }
    let paths = path_count(frames, target_len);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::EnumerationTooLarge {
            paths,
            limit: MAX_ENUMERATED_PATHS,
        });
    }
    Ok(())
}

/// Log score of one path: `φ` on every advance (times `γ` of the cell being
/// left, when given), `Y(·,·,y_{u+1})` on every emission, and the final
/// `φ(T,U)`.
pub fn path_log_score(probs: &LocalProbTable, log_gamma: Option<&Tensor>, path: &[Step]) -> f64 {
    let cols = probs.target_len() + 1;
    let (mut t, mut u) = (0usize, 0usize);
    let mut score = 0.0;
    for step in path {
        match step {
            Step::Advance => {
                score += probs.log_blank_at(t, u);
                if let Some(g) = log_gamma {
                    score += g.values()[t * cols + u];
                }
                t += 1;
            }
            Step::Emit => {
                score += probs.log_emit_at(t, u);
                u += 1;
            }
        }
    }
    score + probs.log_blank_at(t, u)
}

pub(crate) fn enumerate_with_gamma(probs: &LocalProbTable, log_gamma: Option<&Tensor>) -> Result<f64> {
    let paths = enumerate_paths(probs.frames(), probs.target_len())?;
    let scores: Vec<f64> = paths
        .iter()
        .map(|p| path_log_score(probs, log_gamma, p))
        .collect();
    Ok(log_sum_exp_iter(scores.iter().copied()))
}

/// Log-likelihood by summing over all monotonic alignments.
pub fn oracle_enumerate(probs: &LocalProbTable) -> Result<f64> {
    enumerate_with_gamma(probs, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn path_counts() {
        assert_eq!(path_count(3, 2), 6);
        assert_eq!(path_count(1, 0), 1);
        assert_eq!(path_count(1, 2), 1);
        assert_eq!(path_count(5, 3), 35);
        let paths = enumerate_paths(3, 2).unwrap();
        let distinct: HashSet<_> = paths.iter().cloned().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn single_frame_two_labels() {
        // Both labels emit at the only frame: exactly one path.
        let paths = enumerate_paths(1, 2).unwrap();
        assert_eq!(paths, vec![vec![Step::Emit, Step::Emit]]);
        let mut rng = crate::rng::seeded(2);
        let probs = LocalProbTable::random(&mut rng, 1, 2, 3, 1.0);
        let expected = probs.log_emit_at(0, 0) + probs.log_emit_at(0, 1) + probs.log_blank_at(0, 2);
        assert!((oracle_enumerate(&probs).unwrap() - expected).abs() < 1e-14);
        assert!(expected.is_finite());
    }

    #[test]
    fn guard_trips() {
        assert!(matches!(
            enumerate_paths(30, 15),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }
}
