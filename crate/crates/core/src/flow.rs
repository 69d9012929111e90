//! Conditional masked autoregressive flow (MAF) with a standard Gaussian prior.
//!
//! Each layer maps `v` to `z_i = (v_i - mu_i) * exp(-a_i)` where `mu_i` and
//! `a_i` come from a MADE conditioner that sees `v_{<i}` and the condition
//! vector. The log-scale is soft-clamped, `a = s * tanh(raw / s)`, so a
//! freshly trained conditioner cannot blow up the density. The output heads
//! start at zero, which makes an untrained flow the identity map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MafConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    /// Hidden layers per conditioner.
    pub blocks: usize,
    /// Number of flow layers.
    pub depth: usize,
    /// Feature order is reversed inside consecutive groups of this many
    /// dimensions between layers; use `dim` for a plain reversal.
    pub group: usize,
    pub scale_clamp: f64,
}

impl MafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.blocks == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(
                "flow dim, hidden, blocks and depth must be at least 1".into(),
            ));
        }
        if self.group == 0 || !self.dim.is_multiple_of(self.group) {
            return Err(Error::InvalidConfig(format!(
                "flow group {} must divide dim {}",
                self.group, self.dim
            )));
        }
        if self.scale_clamp <= 0.0 || !self.scale_clamp.is_finite() {
            return Err(Error::InvalidConfig("scale_clamp must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
    /// Autoregressive connectivity, `[in, out]`; `None` means dense.
    mask: Option<Tensor>,
}

#[derive(Clone, Debug)]
struct FlowLayer {
    input: Dense,
    cond: Option<ParamId>,
    hidden: Vec<Dense>,
    shift: Dense,
    log_scale: Dense,
}

/// Flow parameters live in the caller's [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Maf {
    config: MafConfig,
    layers: Vec<FlowLayer>,
    /// Position `i` of the next layer's input takes position `perm[i]` of
    /// the previous layer's output.
    perm: Vec<usize>,
}

fn hidden_degree(k: usize, dim: usize) -> usize {
    if dim == 1 {
        0
    } else {
        k % (dim - 1) + 1
    }
}

fn mask_tensor(rows: usize, cols: usize, keep: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut values = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if keep(r, c) {
                values[r * cols + c] = 1.0;
            }
        }
    }
    Tensor::from_parts(vec![rows, cols], values)
}

impl Maf {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, config: MafConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.hidden);
        let in_mask = mask_tensor(d, h, |i, k| i < hidden_degree(k, d));
        let hid_mask = mask_tensor(h, h, |k, j| hidden_degree(k, d) <= hidden_degree(j, d));
        let out_mask = mask_tensor(h, d, |k, i| hidden_degree(k, d) < i + 1);
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let p = format!("{name}.layer{l}");
            let input = Dense {
                weight: store.add_normal(rng, format!("{p}.in.weight"), vec![d, h], d),
                bias: store.add_zeros(format!("{p}.in.bias"), vec![h]),
                mask: Some(in_mask.clone()),
            };
            let cond = (config.cond_dim > 0).then(|| {
                store.add_normal(rng, format!("{p}.cond.weight"), vec![config.cond_dim, h], config.cond_dim)
            });
            let hidden = (1..config.blocks)
                .map(|b| Dense {
                    weight: store.add_normal(rng, format!("{p}.hidden{b}.weight"), vec![h, h], h),
                    bias: store.add_zeros(format!("{p}.hidden{b}.bias"), vec![h]),
                    mask: Some(hid_mask.clone()),
                })
                .collect();
            let head = |store: &mut ParamStore, what: &str| Dense {
                weight: store.add_zeros(format!("{p}.{what}.weight"), vec![h, d]),
                bias: store.add_zeros(format!("{p}.{what}.bias"), vec![d]),
                mask: Some(out_mask.clone()),
            };
            let shift = head(store, "shift");
            let log_scale = head(store, "log_scale");
            layers.push(FlowLayer {
                input,
                cond,
                hidden,
                shift,
                log_scale,
            });
        }
        let g = config.group;
        let perm = (0..d).map(|i| (i / g) * g + (g - 1 - i % g)).collect();
        Ok(Self { config, layers, perm })
    }

    pub fn config(&self) -> &MafConfig {
        &self.config
    }

    /// Scalars of the `shift`/`log_scale` heads, which start at zero.
    pub fn head_params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.shift.weight, l.shift.bias, l.log_scale.weight, l.log_scale.bias])
            .collect()
    }

    fn dense(&self, tape: &mut Tape, p: &Bound, layer: &Dense, x: Var) -> Result<Var> {
        let w = p.var(layer.weight);
        let w = match &layer.mask {
            Some(m) => {
                let m = tape.constant(m.clone());
                tape.mul(w, m)?
            }
            None => w,
        };
        let y = tape.matmul(x, w)?;
        tape.add_row(y, p.var(layer.bias))
    }

    fn permute(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let rows = tape.shape(x)[0];
        let d = self.config.dim;
        let index = (0..rows)
            .flat_map(|r| self.perm.iter().map(move |&c| Some(r * d + c)))
            .collect();
        tape.gather(x, index, 0.0, vec![rows, d])
    }

    /// Row-wise log-densities of `v` (`[n, dim]`) given `cond` (`[n, cond_dim]`).
    ///
    /// `mask` (`[n, dim]`, 0/1) marks the dimensions that exist; masked-out
    /// dimensions must sit after all kept ones in every frame group, so the
    /// result is the exact marginal density of the kept dimensions.
    pub fn log_density(&self, tape: &mut Tape, p: &Bound, v: Var, cond: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (n, d) = (tape.shape(v)[0], self.config.dim);
        if tape.shape(v) != [n, d] {
            return Err(Error::ShapeMismatch {
                op: "flow input",
                lhs: tape.shape(v).to_vec(),
                rhs: vec![n, d],
            });
        }
        if tape.shape(cond) != [n, self.config.cond_dim] {
            return Err(Error::ShapeMismatch {
                op: "flow condition",
                lhs: tape.shape(cond).to_vec(),
                rhs: vec![n, self.config.cond_dim],
            });
        }
        let mut mask_var = mask.map(|m| tape.constant(m.clone()));
        let mut x = v;
        let mut log_det: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                x = self.permute(tape, x)?;
                if let Some(m) = mask_var {
                    mask_var = Some(self.permute(tape, m)?);
                }
            }
            let mut h = self.dense(tape, p, &layer.input, x)?;
            if let Some(c) = layer.cond {
                let hc = tape.matmul(cond, p.var(c))?;
                h = tape.add(h, hc)?;
            }
            h = tape.tanh(h)?;
            for hidden in &layer.hidden {
                h = self.dense(tape, p, hidden, h)?;
                h = tape.tanh(h)?;
            }
            let mu = self.dense(tape, p, &layer.shift, h)?;
            let raw = self.dense(tape, p, &layer.log_scale, h)?;
            let s = self.config.scale_clamp;
            let a = tape.scale(raw, 1.0 / s);
            let a = tape.tanh(a)?;
            let a = tape.scale(a, s);
            let centred = tape.sub(x, mu)?;
            let neg_a = tape.neg(a);
            let inv_scale = tape.exp(neg_a)?;
            x = tape.mul(centred, inv_scale)?;
            let a = match mask_var {
                Some(m) => tape.mul(a, m)?,
                None => a,
            };
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, a)?,
                None => a,
            });
        }
        // log N(z) - sum(a), per kept dimension.
        let z2 = tape.mul(x, x)?;
        let half = tape.scale(z2, -0.5);
        let mut per_dim = tape.sub(half, log_det.expect("depth >= 1"))?;
        let offset = tape.constant(Tensor::scalar(-HALF_LN_2PI));
        per_dim = tape.add(per_dim, offset)?;
        if let Some(m) = mask_var {
            per_dim = tape.mul(per_dim, m)?;
        }
        let ones = tape.constant(Tensor::full(vec![d, 1], 1.0));
        let rows = tape.matmul(per_dim, ones)?;
        tape.reshape(rows, vec![n])
    }

    fn conditioner(&self, store: &ParamStore, layer: &FlowLayer, x: &[f64], cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        fn dense(store: &ParamStore, layer: &Dense, x: &[f64]) -> Vec<f64> {
            let w = store.get(layer.weight).values();
            let m = layer.mask.as_ref().map(Tensor::values);
            let out = store.get(layer.bias).len();
            let mut y = store.get(layer.bias).values().to_vec();
            for (i, &xi) in x.iter().enumerate() {
                for (j, yj) in y.iter_mut().enumerate() {
                    let k = i * out + j;
                    let keep = m.is_none_or(|m| m[k] != 0.0);
                    if keep {
                        *yj += xi * w[k];
                    }
                }
            }
            y
        }
        let mut h = dense(store, &layer.input, x);
        if let Some(c) = layer.cond {
            let w = store.get(c).values();
            let hd = h.len();
            for (i, &ci) in cond.iter().enumerate() {
                for (j, hj) in h.iter_mut().enumerate() {
                    *hj += ci * w[i * hd + j];
                }
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        for hidden in &layer.hidden {
            h = dense(store, hidden, &h);
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
        let s = self.config.scale_clamp;
        let mu = dense(store, &layer.shift, &h);
        let a = dense(store, &layer.log_scale, &h)
            .into_iter()
            .map(|r| s * (r / s).tanh())
            .collect();
        (mu, a)
    }

    /// Data to latent for one vector, with the summed log-determinant
    /// `log |det dz/dv|`.
    pub fn forward(&self, store: &ParamStore, v: &[f64], cond: &[f64]) -> (Vec<f64>, f64) {
        let mut x = v.to_vec();
        let mut log_det = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                x = self.perm.iter().map(|&c| x[c]).collect();
            }
            let (mu, a) = self.conditioner(store, layer, &x, cond);
            for i in 0..x.len() {
                x[i] = (x[i] - mu[i]) * (-a[i]).exp();
                log_det -= a[i];
            }
        }
        (x, log_det)
    }

    /// Latent to data; sequential over dimensions within each layer.
    pub fn inverse(&self, store: &ParamStore, z: &[f64], cond: &[f64]) -> Vec<f64> {
        let d = self.config.dim;
        let mut x = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut v = vec![0.0; d];
            for i in 0..d {
                let (mu, a) = self.conditioner(store, layer, &v, cond);
                v[i] = x[i] * a[i].exp() + mu[i];
            }
            x = v;
            if l > 0 {
                let mut undone = vec![0.0; d];
                for (i, &c) in self.perm.iter().enumerate() {
                    undone[c] = x[i];
                }
                x = undone;
            }
        }
        x
    }

    /// Plain evaluation of the (unmasked) log-density.
    pub fn log_density_f64(&self, store: &ParamStore, v: &[f64], cond: &[f64]) -> f64 {
        let (z, log_det) = self.forward(store, v, cond);
        z.iter().map(|zi| -0.5 * zi * zi - HALF_LN_2PI).sum::<f64>() + log_det
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dim: usize, depth: usize) -> MafConfig {
        MafConfig {
            dim,
            cond_dim: 2,
            hidden: 8,
            blocks: 2,
            depth,
            group: dim,
            scale_clamp: 3.0,
        }
    }

    fn randomized(dim: usize, depth: usize, seed: u64) -> (ParamStore, Maf) {
        let mut rng = crate::rng::seeded(seed);
        let mut store = ParamStore::new();
        let maf = Maf::new(&mut store, &mut rng, "maf", config(dim, depth)).unwrap();
        for id in maf.head_params() {
            for v in store.get_mut(id).values_mut() {
                *v = 0.4 * crate::rng::normal(&mut rng);
            }
        }
        (store, maf)
    }

    #[test]
    fn identity_at_init() {
        let mut rng = crate::rng::seeded(0);
        let mut store = ParamStore::new();
        let maf = Maf::new(&mut store, &mut rng, "maf", config(2, 1)).unwrap();
        let lp = maf.log_density_f64(&store, &[0.0, 0.0], &[0.3, -0.2]);
        assert!((lp + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn autoregressive_structure() {
        let (store, maf) = randomized(4, 1, 5);
        let v = [0.1, -0.4, 0.7, 0.2];
        let (z, _) = maf.forward(&store, &v, &[0.5, 0.5]);
        // z_i depends on v_{<=i} only.
        for i in 0..4 {
            let mut w = v;
            for x in &mut w[i + 1..] {
                *x += 1.0;
            }
            let (zw, _) = maf.forward(&store, &w, &[0.5, 0.5]);
            assert_eq!(z[..=i], zw[..=i]);
        }
    }

    #[test]
    fn tape_matches_plain() {
        for depth in [1, 2] {
            let (store, maf) = randomized(3, depth, 11);
            let rows = [[0.3, -1.0, 0.5], [1.2, 0.1, -0.7]];
            let conds = [[0.2, 0.0], [-0.5, 1.0]];
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let v = tape.constant(Tensor::matrix(2, 3, rows.concat()).unwrap());
            let c = tape.constant(Tensor::matrix(2, 2, conds.concat()).unwrap());
            let lp = maf.log_density(&mut tape, &p, v, c, None).unwrap();
            for r in 0..2 {
                let expect = maf.log_density_f64(&store, &rows[r], &conds[r]);
                assert!((tape.value(lp).values()[r] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip() {
        let (store, maf) = randomized(4, 2, 23);
        let mut rng = crate::rng::seeded(8);
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| crate::rng::normal(&mut rng)).collect();
            let c = [crate::rng::normal(&mut rng), 0.0];
            let v = maf.inverse(&store, &z, &c);
            let (back, _) = maf.forward(&store, &v, &c);
            for (a, b) in z.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn masked_tail_frame_is_a_marginal() {
        // Two frames of width 2; the second is padding and must not matter.
        let mut rng = crate::rng::seeded(31);
        let mut store = ParamStore::new();
        let cfg = MafConfig { group: 2, ..config(4, 2) };
        let maf = Maf::new(&mut store, &mut rng, "maf", cfg).unwrap();
        for id in maf.head_params() {
            for v in store.get_mut(id).values_mut() {
                *v = 0.4 * crate::rng::normal(&mut rng);
            }
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let v = tape.constant(Tensor::matrix(2, 4, vec![0.3, -0.2, 0.0, 0.0, 0.3, -0.2, 5.0, -3.0]).unwrap());
        let c = tape.constant(Tensor::zeros(vec![2, 2]));
        let mask = Tensor::matrix(2, 4, vec![1., 1., 0., 0., 1., 1., 0., 0.]).unwrap();
        let lp = maf.log_density(&mut tape, &p, v, c, Some(&mask)).unwrap();
        let vals = tape.value(lp).values();
        assert_eq!(vals[0], vals[1]);
        assert!(vals[0] != maf.log_density_f64(&store, &[0.3, -0.2, 0.0, 0.0], &[0.0, 0.0]));
    }
}
