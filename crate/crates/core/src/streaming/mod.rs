//! Streaming (chunk-causal) lattices.
//!
//! A streaming model's local probabilities at frame `t` only see input up to
//! `e(t)`. Running the plain recursion on them gives the *deformed*
//! likelihood. Weighting each horizontal transition out of a chunk boundary
//! by `γ(t,u)` (forward variable causal compensation, FoCC) gives the
//! modified likelihood.

mod focc;
mod schedule;

pub use focc::FoccTable;
pub use schedule::{context_end, ChunkParams, ContextSchedule};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::lattice::{self, ForwardTable, LatticeVars, LocalProbTable};

pub(crate) use focc::check_against_schedule;

/// Log forward variables of the FoCC-weighted recursion.
pub type StreamingForwardTable = ForwardTable;

/// The plain recursion applied to streaming local probabilities.
///
/// Numerically identical to [`lattice::likelihood`]; kept as its own entry
/// point so baselines log it under its own name.
pub fn deformed_likelihood(probs: &LocalProbTable) -> Result<f64> {
    lattice::likelihood(probs)
}

pub fn deformed_likelihood_var(tape: &mut Tape, lattice: &LatticeVars) -> Result<Var> {
    lattice::likelihood_var(tape, lattice)
}

/// Differentiable modified likelihood.
///
/// `log_gamma` is a `[T, U+1]` node, zero on non-boundary rows. With
/// `detach` set it enters through a stop-gradient, so nothing upstream of
/// it receives a gradient from this term.
pub fn modified_likelihood_var(
    tape: &mut Tape,
    lattice: &LatticeVars,
    schedule: &ContextSchedule,
    log_gamma: Var,
    detach: bool,
) -> Result<Var> {
    check_against_schedule(schedule, tape.value(log_gamma))?;
    let gamma = if detach {
        tape.stop_gradient(log_gamma)
    } else {
        log_gamma
    };
    let layout = lattice::alpha_diagonals(tape, lattice, Some(gamma))?;
    lattice::terminal_log_likelihood(tape, lattice, &layout)
}

/// Full table of the FoCC-weighted forward variables.
pub fn modified_forward(
    probs: &LocalProbTable,
    schedule: &ContextSchedule,
    focc: &FoccTable,
    detach: bool,
) -> Result<StreamingForwardTable> {
    check_against_schedule(schedule, focc.log_gamma())?;
    let mut tape = Tape::new();
    let lattice = LatticeVars::from_table(&mut tape, probs, false);
    let g = tape.constant(focc.log_gamma().clone());
    let gamma = if detach { tape.stop_gradient(g) } else { g };
    let layout = lattice::alpha_diagonals(&mut tape, &lattice, Some(gamma))?;
    Ok(layout.to_table(&tape))
}

/// `log α̂(T,U) + log φ(T,U)`.
pub fn modified_likelihood(
    probs: &LocalProbTable,
    schedule: &ContextSchedule,
    focc: &FoccTable,
    detach: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let lattice = LatticeVars::from_table(&mut tape, probs, false);
    let g = tape.constant(focc.log_gamma().clone());
    let root = modified_likelihood_var(&mut tape, &lattice, schedule, g, detach)?;
    tape.value(root).item()
}

/// Path enumeration with `γ` multiplied in at every advance out of a
/// boundary frame.
pub fn oracle_enumerate(probs: &LocalProbTable, focc: &FoccTable) -> Result<f64> {
    lattice::oracle::enumerate_with_gamma(probs, Some(focc.log_gamma()))
}
