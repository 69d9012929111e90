//! Per-utterance total objective with gradient routing.
//!
//! Both networks are bound on one tape. `theta` reaches the total only
//! through the modified likelihood, and `log gamma` enters that term behind
//! a stop-gradient, so `omega` reaches the total only through the FoCCE
//! density objective. One backward pass therefore yields both gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::focce::FocceNet;
use crate::nn::Bound;
use crate::streaming::{self, ChunkParams};
use crate::transducer::TransducerNet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Plain recursion on streaming probabilities; no estimator network.
    DeformedBaseline,
    #[default]
    FocceModified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda_mod: f64,
    pub lambda_chi: f64,
    pub lambda_gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_mod: 1.0,
            lambda_chi: 0.01,
            lambda_gamma: 0.05,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_mod", self.lambda_mod),
            ("lambda_chi", self.lambda_chi),
            ("lambda_gamma", self.lambda_gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// What to build on the tape besides the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ObjectiveOptions {
    /// Bind parameters as trainable leaves.
    pub trainable: bool,
    /// Whether `log gamma` enters the modified likelihood (false during
    /// warmup, where the modified term falls back to the deformed one).
    pub gamma_active: bool,
    /// Also build the deformed likelihood when it is not already the
    /// modified term.
    pub with_deformed: bool,
}

/// A recorded utterance objective.
pub struct UtteranceObjective {
    pub tape: Tape,
    pub theta: Bound,
    pub omega: Option<Bound>,
    /// `lambda_mod * L_mod + lambda_chi * L_chi`, to be maximized.
    pub total: Var,
    pub modified: Var,
    pub deformed: Option<Var>,
    pub focce: Option<Var>,
    pub log_gamma: Option<Var>,
    pub boundaries: Vec<usize>,
}

impl UtteranceObjective {
    pub fn scalar(&self, v: Var) -> f64 {
        self.tape.value(v).values()[0]
    }

    /// Ascent gradients of the total for `theta` and, when bound, `omega`.
    pub fn gradients(&self) -> Result<(Vec<Tensor>, Option<Vec<Tensor>>)> {
        let grads = self.tape.backward(self.total)?;
        let theta = self.theta.gradients(&grads);
        let omega = self.omega.as_ref().map(|o| o.gradients(&grads));
        Ok((theta, omega))
    }

    /// Mean `|log gamma|` over boundary cells, and the number of such cells.
    pub fn log_gamma_magnitude(&self) -> (f64, usize) {
        let Some(lg) = self.log_gamma else {
            return (0.0, 0);
        };
        let value = self.tape.value(lg);
        let u1 = value.shape()[1];
        let sum: f64 = self
            .boundaries
            .iter()
            .flat_map(|&t| value.row(t - 1).iter().map(|v| v.abs()))
            .sum();
        let cells = self.boundaries.len() * u1;
        (if cells == 0 { 0.0 } else { sum / cells as f64 }, cells)
    }
}

/// Builds the total objective of one utterance.
///
/// `omega` must be present exactly when `kind` is
/// [`ObjectiveKind::FocceModified`].
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    theta_net: &TransducerNet,
    omega_net: Option<&FocceNet>,
    features: &Tensor,
    labels: &[usize],
    chunk: ChunkParams,
    weights: &ObjectiveWeights,
    kind: ObjectiveKind,
    opts: ObjectiveOptions,
) -> Result<UtteranceObjective> {
    let mut tape = Tape::new();
    let frames = theta_net.stack(features)?;
    let schedule = chunk.schedule(frames.shape()[0])?;
    let theta = theta_net.params().bind(&mut tape, opts.trainable);
    let joint = theta_net.joint(&mut tape, &theta, &frames, labels, &schedule)?;
    let lattice = theta_net.lattice_vars(&mut tape, &joint, labels)?;

    let (omega, modified, deformed, focce, log_gamma) = match (kind, omega_net) {
        (ObjectiveKind::DeformedBaseline, None) => {
            let d = streaming::deformed_likelihood_var(&mut tape, &lattice)?;
            (None, d, Some(d), None, None)
        }
        (ObjectiveKind::FocceModified, Some(net)) => {
            let omega = net.params().bind(&mut tape, opts.trainable);
            let omega_frames = net.stack(features)?;
            let out = net.densities(&mut tape, &omega, &omega_frames, labels, &schedule)?;
            let objective = net.objective(&mut tape, &out)?;
            let log_gamma = net.log_gamma(&mut tape, &out, weights.lambda_gamma)?;
            let (modified, deformed) = if opts.gamma_active {
                let m = streaming::modified_likelihood_var(&mut tape, &lattice, &schedule, log_gamma, true)?;
                let d = if opts.with_deformed {
                    Some(streaming::deformed_likelihood_var(&mut tape, &lattice)?)
                } else {
                    None
                };
                (m, d)
            } else {
                let d = streaming::deformed_likelihood_var(&mut tape, &lattice)?;
                (d, Some(d))
            };
            (Some(omega), modified, deformed, Some(objective), Some(log_gamma))
        }
        (ObjectiveKind::DeformedBaseline, Some(_)) => {
            return Err(Error::InvalidConfig("the deformed baseline takes no estimator network".into()))
        }
        (ObjectiveKind::FocceModified, None) => {
            return Err(Error::InvalidConfig("the modified objective needs an estimator network".into()))
        }
    };

    let mut total = tape.scale(modified, weights.lambda_mod);
    if let Some(obj) = focce {
        let chi = tape.scale(obj, weights.lambda_chi);
        total = tape.add(total, chi)?;
    }
    Ok(UtteranceObjective {
        tape,
        theta,
        omega,
        total,
        modified,
        deformed,
        focce,
        log_gamma,
        boundaries: schedule.boundaries(),
    })
}
