use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::table::LocalProbTable;

/// Differentiable view of one utterance's lattice on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatticeVars {
    pub frames: usize,
    pub target_len: usize,
    /// `[T, U+1]` log blank probabilities.
    pub log_blank: Var,
    /// `[T, U]` log probabilities of emitting the next target label.
    pub log_emit: Var,
}

impl LatticeVars {
    /// Places a plain table on the tape as trainable leaves.
    pub fn from_table(tape: &mut Tape, probs: &LocalProbTable, trainable: bool) -> Self {
        let blank = probs.log_blank().clone();
        let emit = probs.emit_table();
        let (log_blank, log_emit) = if trainable {
            (tape.param(blank), tape.param(emit))
        } else {
            (tape.constant(blank), tape.constant(emit))
        };
        Self {
            frames: probs.frames(),
            target_len: probs.target_len(),
            log_blank,
            log_emit,
        }
    }

    fn validate(&self, tape: &Tape) -> Result<()> {
        let (t, u) = (self.frames, self.target_len);
        if t == 0 {
            return Err(Error::InvalidConfig("a lattice needs at least one frame".into()));
        }
        if tape.shape(self.log_blank) != [t, u + 1] {
            return Err(Error::ShapeMismatch {
                op: "lattice log_blank",
                lhs: tape.shape(self.log_blank).to_vec(),
                rhs: vec![t, u + 1],
            });
        }
        if tape.shape(self.log_emit) != [t, u] {
            return Err(Error::ShapeMismatch {
                op: "lattice log_emit",
                lhs: tape.shape(self.log_emit).to_vec(),
                rhs: vec![t, u],
            });
        }
        Ok(())
    }
}

/// Log forward variables of a full lattice, `[T+1, U+1]`.
///
/// Row `t` is the alignment positioned at frame `t` (1-based), so row 0 is
/// the all-`-inf` boundary and entry `(1, 0)` is `0` (probability one).
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTable {
    log_alpha: Tensor,
}

impl ForwardTable {
    pub fn log_alpha(&self) -> &Tensor {
        &self.log_alpha
    }

    /// `log α(t, u)` for `t` in `0..=T`.
    pub fn at(&self, t: usize, u: usize) -> f64 {
        let cols = self.log_alpha.shape()[1];
        self.log_alpha.values()[t * cols + u]
    }

    pub fn frames(&self) -> usize {
        self.log_alpha.shape()[0] - 1
    }

    pub fn target_len(&self) -> usize {
        self.log_alpha.shape()[1] - 1
    }
}

/// Anti-diagonal layout of the forward recursion: diagonal `d` holds the
/// cells with `t + u = d` (0-based frame `t`), ordered by `u`.
pub(crate) struct AlphaDiagonals {
    frames: usize,
    target_len: usize,
    diagonals: Vec<Var>,
}

impl AlphaDiagonals {
    fn u_min(&self, d: usize) -> usize {
        d.saturating_sub(self.frames - 1)
    }

    pub(crate) fn last(&self) -> Var {
        *self.diagonals.last().expect("at least one diagonal")
    }

    pub(crate) fn to_table(&self, tape: &Tape) -> ForwardTable {
        let (t_len, u_len) = (self.frames, self.target_len);
        let cols = u_len + 1;
        let mut values = vec![f64::NEG_INFINITY; (t_len + 1) * cols];
        for (d, &var) in self.diagonals.iter().enumerate() {
            let umin = self.u_min(d);
            for (pos, &v) in tape.value(var).values().iter().enumerate() {
                let u = umin + pos;
                let t = d - u;
                values[(t + 1) * cols + u] = v;
            }
        }
        ForwardTable {
            log_alpha: Tensor::from_parts(vec![t_len + 1, cols], values),
        }
    }
}

/// Log-space forward recursion
/// `α(t,u) = α(t-1,u) φ(t-1,u) γ(t-1,u) + α(t,u-1) Y(t,u-1, y_u)`,
/// evaluated one anti-diagonal at a time. Cells on a diagonal depend only
/// on the previous diagonal, so each step is a handful of vector ops.
///
/// `log_gamma` (`[T, U+1]`) scales the horizontal transitions; `None` is
/// the plain transducer recursion.
pub(crate) fn alpha_diagonals(
    tape: &mut Tape,
    lattice: &LatticeVars,
    log_gamma: Option<Var>,
) -> Result<AlphaDiagonals> {
    lattice.validate(tape)?;
    let (t_len, u_len) = (lattice.frames, lattice.target_len);
    let cols = u_len + 1;
    let horizontal = match log_gamma {
        Some(g) => {
            if tape.shape(g) != [t_len, cols] {
                return Err(Error::ShapeMismatch {
                    op: "log_gamma",
                    lhs: tape.shape(g).to_vec(),
                    rhs: vec![t_len, cols],
                });
            }
            tape.add(lattice.log_blank, g)?
        }
        None => lattice.log_blank,
    };

    let mut layout = AlphaDiagonals {
        frames: t_len,
        target_len: u_len,
        diagonals: Vec::with_capacity(t_len + u_len),
    };
    layout.diagonals.push(tape.constant(Tensor::scalar(0.0).reshaped(vec![1])?));

    for d in 1..t_len + u_len {
        let umin = layout.u_min(d);
        let umax = d.min(u_len);
        let prev_min = layout.u_min(d - 1);
        let n = umax + 1 - umin;
        let mut h_src = Vec::with_capacity(n);
        let mut h_w = Vec::with_capacity(n);
        let mut v_src = Vec::with_capacity(n);
        let mut v_w = Vec::with_capacity(n);
        for u in umin..=umax {
            let t = d - u;
            if t >= 1 {
                h_src.push(Some(u - prev_min));
                h_w.push(Some((t - 1) * cols + u));
            } else {
                h_src.push(None);
                h_w.push(None);
            }
            if u >= 1 {
                v_src.push(Some(u - 1 - prev_min));
                v_w.push(Some(t * u_len + (u - 1)));
            } else {
                v_src.push(None);
                v_w.push(None);
            }
        }
        let prev = layout.diagonals[d - 1];
        let ninf = f64::NEG_INFINITY;
        let ha = tape.gather(prev, h_src, ninf, vec![n])?;
        let hw = tape.gather(horizontal, h_w, ninf, vec![n])?;
        let h = tape.add(ha, hw)?;
        let va = tape.gather(prev, v_src, ninf, vec![n])?;
        let vw = tape.gather(lattice.log_emit, v_w, ninf, vec![n])?;
        let v = tape.add(va, vw)?;
        let both = tape.stack_columns(&[h, v])?;
        let alpha = tape.log_sum_exp(both, 1)?;
        layout.diagonals.push(alpha);
    }
    Ok(layout)
}

/// `log α(T,U) + log φ(T,U)` from a finished recursion, as a scalar node.
pub(crate) fn terminal_log_likelihood(
    tape: &mut Tape,
    lattice: &LatticeVars,
    layout: &AlphaDiagonals,
) -> Result<Var> {
    let (t_len, u_len) = (lattice.frames, lattice.target_len);
    let last = tape.gather(layout.last(), vec![Some(0)], 0.0, vec![1])?;
    let final_blank = tape.gather(
        lattice.log_blank,
        vec![Some((t_len - 1) * (u_len + 1) + u_len)],
        0.0,
        vec![1],
    )?;
    let total = tape.add(last, final_blank)?;
    Ok(tape.sum(total))
}

/// Differentiable transducer log-likelihood of the target.
pub fn likelihood_var(tape: &mut Tape, lattice: &LatticeVars) -> Result<Var> {
    let layout = alpha_diagonals(tape, lattice, None)?;
    terminal_log_likelihood(tape, lattice, &layout)
}

/// Full table of log forward variables.
pub fn forward_alpha(probs: &LocalProbTable) -> Result<ForwardTable> {
    let mut tape = Tape::new();
    let lattice = LatticeVars::from_table(&mut tape, probs, false);
    let layout = alpha_diagonals(&mut tape, &lattice, None)?;
    Ok(layout.to_table(&tape))
}

/// `log P(y | x)` with the end condition applied by the final blank.
pub fn likelihood(probs: &LocalProbTable) -> Result<f64> {
    let mut tape = Tape::new();
    let lattice = LatticeVars::from_table(&mut tape, probs, false);
    let root = likelihood_var(&mut tape, &lattice)?;
    tape.value(root).item()
}
