use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::schedule::ContextSchedule;

/// Log FoCC values `log γ(t, u)` over `[T, U+1]`.
///
/// Row `r` belongs to frame `t = r + 1`. Rows of frames that are not chunk
/// boundaries are exactly zero (`γ = 1`); this is enforced on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FoccTable {
    log_gamma: Tensor,
}

impl FoccTable {
    pub fn zeros(frames: usize, target_len: usize) -> Self {
        Self {
            log_gamma: Tensor::zeros(vec![frames, target_len + 1]),
        }
    }

    pub fn new(schedule: &ContextSchedule, log_gamma: Tensor) -> Result<Self> {
        check_against_schedule(schedule, &log_gamma)?;
        Ok(Self { log_gamma })
    }

    /// Random values on boundary rows, zeros elsewhere.
    pub fn random<R: rand::Rng>(rng: &mut R, schedule: &ContextSchedule, target_len: usize, scale: f64) -> Self {
        let cols = target_len + 1;
        let mut values = vec![0.0; schedule.frames() * cols];
        for t in schedule.boundaries() {
            for v in &mut values[(t - 1) * cols..t * cols] {
                *v = scale * crate::rng::normal(rng);
            }
        }
        Self {
            log_gamma: Tensor::from_parts(vec![schedule.frames(), cols], values),
        }
    }

    pub fn log_gamma(&self) -> &Tensor {
        &self.log_gamma
    }

    pub fn into_tensor(self) -> Tensor {
        self.log_gamma
    }

    /// `log γ(t, u)` with 1-based `t`.
    pub fn at(&self, t: usize, u: usize) -> f64 {
        let cols = self.log_gamma.shape()[1];
        self.log_gamma.values()[(t - 1) * cols + u]
    }
}

/// Shape, finiteness, and zero-off-boundary checks for a log-γ tensor.
pub(crate) fn check_against_schedule(schedule: &ContextSchedule, log_gamma: &Tensor) -> Result<()> {
    let shape = log_gamma.shape();
    if shape.len() != 2 || shape[0] != schedule.frames() {
        return Err(Error::ShapeMismatch {
            op: "FoCC table",
            lhs: shape.to_vec(),
            rhs: vec![schedule.frames()],
        });
    }
    let cols = shape[1];
    for (i, &v) in log_gamma.values().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i, value: v });
        }
        let (t, u) = (i / cols + 1, i % cols);
        if v != 0.0 && !schedule.is_boundary(t) {
            return Err(Error::FoccOffBoundary { t, u, value: v });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_values_off_boundary() {
        let s = ContextSchedule::new(2, 0, 4).unwrap();
        let mut values = vec![0.0; 4 * 2];
        values[2 * 2 + 1] = 0.3; // frame 3 is mid-chunk
        let err = FoccTable::new(&s, Tensor::new(vec![4, 2], values).unwrap()).unwrap_err();
        assert!(matches!(err, Error::FoccOffBoundary { t: 3, u: 1, .. }));

        let mut ok = vec![0.0; 8];
        ok[2] = 0.3; // frame 2 is a boundary
        let table = FoccTable::new(&s, Tensor::new(vec![4, 2], ok).unwrap()).unwrap();
        assert_eq!(table.at(2, 0), 0.3);
    }

    #[test]
    fn random_respects_schedule() {
        let s = ContextSchedule::new(3, 1, 10).unwrap();
        let mut rng = crate::rng::seeded(4);
        let table = FoccTable::random(&mut rng, &s, 2, 1.0);
        assert!(check_against_schedule(&s, table.log_gamma()).is_ok());
    }
}
