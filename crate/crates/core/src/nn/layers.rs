use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;

use super::{Bound, ParamId, ParamStore};

/// `x W + b` on row-major `[n, in]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: store.add_normal(rng, format!("{name}.weight"), vec![input, output], input),
            bias: store.add_zeros(format!("{name}.bias"), vec![output]),
            input,
            output,
        }
    }

    /// Same layout, all weights zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: store.add_zeros(format!("{name}.weight"), vec![input, output]),
            bias: store.add_zeros(format!("{name}.bias"), vec![output]),
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.var(self.weight))?;
        tape.add_row(h, p.var(self.bias))
    }

    /// Plain `f64` evaluation of one input row.
    pub fn apply(&self, store: &ParamStore, x: &[f64], out: &mut [f64]) {
        let w = store.get(self.weight).values();
        out.copy_from_slice(store.get(self.bias).values());
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * self.output..(i + 1) * self.output];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }
}

/// Lookup table of `[count, dim]` vectors.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, count: usize, dim: usize) -> Self {
        Self {
            table: store.add_normal(rng, format!("{name}.table"), vec![count, dim], 1),
            count,
            dim,
        }
    }

    /// `[ids.len(), dim]`.
    pub fn lookup(&self, tape: &mut Tape, p: &Bound, ids: &[usize]) -> Result<Var> {
        let rows: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        tape.gather_rows(p.var(self.table), &rows)
    }

    pub fn row<'a>(&self, store: &'a ParamStore, id: usize) -> &'a [f64] {
        &store.get(self.table).values()[id * self.dim..(id + 1) * self.dim]
    }
}

/// Single-layer LSTM run over a whole sequence at once.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    input_gate: Linear,
    forget_gate: Linear,
    cell: Linear,
    output_gate: Linear,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        let width = input + hidden;
        let lstm = Self {
            input_gate: Linear::new(store, rng, &format!("{name}.i"), width, hidden),
            forget_gate: Linear::new(store, rng, &format!("{name}.f"), width, hidden),
            cell: Linear::new(store, rng, &format!("{name}.g"), width, hidden),
            output_gate: Linear::new(store, rng, &format!("{name}.o"), width, hidden),
            input,
            hidden,
        };
        // Forget-gate bias of one keeps early gradients alive.
        store
            .get_mut(lstm.forget_gate.bias)
            .values_mut()
            .fill(1.0);
        lstm
    }

    /// Hidden state after each input row of `xs` (`[n, input]` → `[n, hidden]`).
    pub fn forward(&self, tape: &mut Tape, p: &Bound, xs: Var) -> Result<Var> {
        let n = tape.shape(xs)[0];
        let zero = crate::autodiff::Tensor::zeros(vec![1, self.hidden]);
        let mut h = tape.constant(zero.clone());
        let mut c = tape.constant(zero);
        let mut outputs = Vec::with_capacity(n);
        for step in 0..n {
            let x = tape.gather_rows(xs, &[Some(step)])?;
            let xh = tape.concat(&[x, h], 1)?;
            let i = self.input_gate.forward(tape, p, xh)?;
            let i = tape.sigmoid(i)?;
            let f = self.forget_gate.forward(tape, p, xh)?;
            let f = tape.sigmoid(f)?;
            let g = self.cell.forward(tape, p, xh)?;
            let g = tape.tanh(g)?;
            let o = self.output_gate.forward(tape, p, xh)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
            outputs.push(h);
        }
        tape.concat(&outputs, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn linear_apply_matches_tape() {
        let mut rng = crate::rng::seeded(3);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut rng, "l", 3, 2);
        store.get_mut(lin.bias).values_mut().copy_from_slice(&[0.5, -0.25]);
        let x = [0.3, -1.2, 2.0];
        let mut out = [0.0; 2];
        lin.apply(&store, &x, &mut out);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.constant(Tensor::matrix(1, 3, x.to_vec()).unwrap());
        let y = lin.forward(&mut tape, &p, xv).unwrap();
        for (a, b) in tape.value(y).values().iter().zip(out) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_is_prefix_causal() {
        let mut rng = crate::rng::seeded(9);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, &mut rng, "lstm", 2, 3);
        let run = |rows: Vec<f64>| {
            let n = rows.len() / 2;
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let xs = tape.constant(Tensor::matrix(n, 2, rows).unwrap());
            let out = lstm.forward(&mut tape, &p, xs).unwrap();
            tape.value(out).values().to_vec()
        };
        let short = run(vec![0.1, 0.2, -0.3, 0.4]);
        let long = run(vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0]);
        assert_eq!(short[..], long[..6]);
    }
}
