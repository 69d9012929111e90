//! Non-streaming transducer likelihood over the time x target lattice.
//!
//! Gradients come from reverse-mode differentiation of the forward
//! recursion itself; there is no separate backward-variable pass.

pub mod oracle;
mod recursion;
mod table;

pub use oracle::{enumerate_paths, oracle_enumerate, path_count, path_log_score, Step};
pub use recursion::{forward_alpha, likelihood, likelihood_var, ForwardTable, LatticeVars};
pub use table::{LocalProbTable, NORMALIZATION_TOL};

pub(crate) use recursion::{alpha_diagonals, terminal_log_likelihood};
