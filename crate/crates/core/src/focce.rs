//! FoCC estimator network (FoCCE).
//!
//! A chunk-causal encoder summarizes `x_{1:e(t)}` into `f_t`, an LSTM
//! summarizes the label prefix into `g_u`, and one conditional flow scores
//! the next chunk `x_{e(t)+1:e(t+1)}` under `[f_t; g_u]` (giving `chi`) and
//! under `[f_t; 0]` (giving `chi_bar`). The estimated compensation is
//! `log gamma = lambda_gamma * (log chi - log chi_bar)` on boundary frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{Maf, MafConfig};
use crate::nn::{stack_frames, Bound, ChunkConvEncoder, Embedding, EncoderConfig, Lstm, ParamStore};
use crate::streaming::{ChunkParams, ContextSchedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Sum of log-densities.
    #[default]
    Log,
    /// Sum of raw densities.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocceConfig {
    /// Raw frames per encoder frame.
    pub stack: usize,
    /// Raw feature width.
    pub feature_dim: usize,
    pub vocab: usize,
    pub encoder_dim: usize,
    pub encoder_layers: usize,
    pub kernel: usize,
    pub predictor_dim: usize,
    pub flow_depth: usize,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    #[serde(default = "default_scale_clamp")]
    pub scale_clamp: f64,
    #[serde(default)]
    pub objective_mode: ObjectiveMode,
}

fn default_scale_clamp() -> f64 {
    3.0
}

impl FocceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stack == 0 || self.flow_depth == 0 || self.vocab == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(
                "stack, flow_depth, vocab and feature_dim must be at least 1".into(),
            ));
        }
        if self.predictor_dim == 0 || self.encoder_dim == 0 {
            return Err(Error::InvalidConfig("FoCCE widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn frame_dim(&self) -> usize {
        self.stack * self.feature_dim
    }
}

/// The FoCCE network `omega` together with its parameters.
#[derive(Clone, Debug)]
pub struct FocceNet {
    config: FocceConfig,
    chunk: ChunkParams,
    params: ParamStore,
    encoder: ChunkConvEncoder,
    embedding: Embedding,
    lstm: Lstm,
    flow: Maf,
}

/// Densities of one utterance, laid out as `rows = B * (U + 1) + B`: first
/// the `chi(t_i, u)` rows in `(i, u)` order, then one `chi_bar(t_i)` row per
/// boundary.
#[derive(Clone, Debug)]
pub struct FocceOutputs {
    pub boundaries: Vec<usize>,
    pub frames: usize,
    pub target_len: usize,
    /// `[rows]` log-densities, or `None` when there is no boundary.
    pub log_density: Option<Var>,
}

impl FocceOutputs {
    fn chi_row(&self, i: usize, u: usize) -> usize {
        i * (self.target_len + 1) + u
    }

    fn bar_row(&self, i: usize) -> usize {
        self.boundaries.len() * (self.target_len + 1) + i
    }

    /// `log chi(t, u)` with 1-based boundary frame `t`.
    pub fn log_chi(&self, tape: &Tape, t: usize, u: usize) -> Option<f64> {
        let i = self.boundaries.iter().position(|&b| b == t)?;
        Some(tape.value(self.log_density?).values()[self.chi_row(i, u)])
    }

    pub fn log_chi_bar(&self, tape: &Tape, t: usize) -> Option<f64> {
        let i = self.boundaries.iter().position(|&b| b == t)?;
        Some(tape.value(self.log_density?).values()[self.bar_row(i)])
    }
}

/// `lambda * (log chi - log chi_bar)`.
pub fn gamma_omega(log_chi: f64, log_chi_bar: f64, lambda_gamma: f64) -> f64 {
    lambda_gamma * (log_chi - log_chi_bar)
}

impl FocceNet {
    pub fn new<R: Rng>(rng: &mut R, config: FocceConfig, chunk: ChunkParams) -> Result<Self> {
        config.validate()?;
        chunk.validate()?;
        let mut params = ParamStore::new();
        let frame_dim = config.frame_dim();
        let encoder = ChunkConvEncoder::new(
            &mut params,
            rng,
            "focce.encoder",
            EncoderConfig {
                input_dim: frame_dim,
                dim: config.encoder_dim,
                conv_layers: config.encoder_layers,
                kernel: config.kernel,
            },
        )?;
        let embedding = Embedding::new(&mut params, rng, "focce.embed", config.vocab + 1, config.predictor_dim);
        let lstm = Lstm::new(&mut params, rng, "focce.lstm", config.predictor_dim, config.predictor_dim);
        let flow = Maf::new(
            &mut params,
            rng,
            "focce.flow",
            MafConfig {
                dim: chunk.chunk_size * frame_dim,
                cond_dim: config.encoder_dim + config.predictor_dim,
                hidden: config.flow_hidden,
                blocks: config.flow_blocks,
                depth: config.flow_depth,
                group: frame_dim,
                scale_clamp: config.scale_clamp,
            },
        )?;
        Ok(Self {
            config,
            chunk,
            params,
            encoder,
            embedding,
            lstm,
            flow,
        })
    }

    pub fn config(&self) -> &FocceConfig {
        &self.config
    }

    pub fn chunk(&self) -> ChunkParams {
        self.chunk
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn flow(&self) -> &Maf {
        &self.flow
    }

    /// Stacks raw `[T_raw, feature_dim]` features into encoder frames.
    pub fn stack(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.rank() != 2 || raw.shape()[1] != self.config.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "FoCCE features",
                lhs: raw.shape().to_vec(),
                rhs: vec![self.config.feature_dim],
            });
        }
        stack_frames(raw, self.config.stack)
    }

    /// `f_t` for every frame, `[T, encoder_dim]`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, frames: &Tensor, schedule: &ContextSchedule) -> Result<Var> {
        let x = tape.constant(frames.clone());
        self.encoder.forward(tape, p, x, schedule)
    }

    /// `g_u` for `u = 0..=U`, `[U+1, predictor_dim]`; row 0 has seen only
    /// the start symbol.
    pub fn predict(&self, tape: &mut Tape, p: &Bound, target: &[usize]) -> Result<Var> {
        let mut ids = Vec::with_capacity(target.len() + 1);
        ids.push(0);
        for &y in target {
            if y == 0 || y > self.config.vocab {
                return Err(Error::OutOfRange {
                    what: "FoCCE label",
                    index: y,
                    bound: self.config.vocab,
                });
            }
            ids.push(y);
        }
        let emb = self.embedding.lookup(tape, p, &ids)?;
        self.lstm.forward(tape, p, emb)
    }

    /// Next-chunk target for boundary `t` (1-based), padded to `C` frames,
    /// with the number of real frames.
    pub fn chunk_target(&self, frames: &Tensor, schedule: &ContextSchedule, t: usize) -> (Vec<f64>, usize) {
        let fd = self.config.frame_dim();
        let range = schedule.next_chunk(t);
        let (start, end) = (*range.start() - 1, *range.end());
        let mut v = frames.values()[start * fd..end * fd].to_vec();
        let real = end - start;
        v.resize(self.chunk.chunk_size * fd, 0.0);
        (v, real)
    }

    /// Evaluates every density this utterance needs.
    pub fn densities(
        &self,
        tape: &mut Tape,
        p: &Bound,
        frames: &Tensor,
        target: &[usize],
        schedule: &ContextSchedule,
    ) -> Result<FocceOutputs> {
        let boundaries = schedule.boundaries();
        let u1 = target.len() + 1;
        let mut out = FocceOutputs {
            boundaries,
            frames: schedule.frames(),
            target_len: target.len(),
            log_density: None,
        };
        if out.boundaries.is_empty() {
            return Ok(out);
        }
        let fd = self.config.frame_dim();
        let d = self.chunk.chunk_size * fd;
        let f = self.encode(tape, p, frames, schedule)?;
        let g = self.predict(tape, p, target)?;
        let b = out.boundaries.len();
        let rows = b * u1 + b;
        let mut values = Vec::with_capacity(rows * d);
        let mut mask_values = Vec::with_capacity(rows * d);
        let mut any_padding = false;
        let mut f_rows = Vec::with_capacity(rows);
        let mut g_rows = Vec::with_capacity(rows);
        let targets: Vec<(Vec<f64>, usize)> = out
            .boundaries
            .iter()
            .map(|&t| self.chunk_target(frames, schedule, t))
            .collect();
        let mut push = |(v, real): &(Vec<f64>, usize), values: &mut Vec<f64>, mask: &mut Vec<f64>| {
            values.extend_from_slice(v);
            mask.extend((0..d).map(|k| if k < real * fd { 1.0 } else { 0.0 }));
            any_padding |= *real < self.chunk.chunk_size;
        };
        for (i, &t) in out.boundaries.iter().enumerate() {
            for u in 0..u1 {
                push(&targets[i], &mut values, &mut mask_values);
                f_rows.push(Some(t - 1));
                g_rows.push(Some(u));
            }
        }
        for (i, &t) in out.boundaries.iter().enumerate() {
            push(&targets[i], &mut values, &mut mask_values);
            f_rows.push(Some(t - 1));
            g_rows.push(None);
        }
        let v = tape.constant(Tensor::from_parts(vec![rows, d], values));
        let fc = tape.gather_rows(f, &f_rows)?;
        let gc = tape.gather_rows(g, &g_rows)?;
        let cond = tape.concat(&[fc, gc], 1)?;
        let mask = any_padding.then(|| Tensor::from_parts(vec![rows, d], mask_values));
        out.log_density = Some(self.flow.log_density(tape, p, v, cond, mask.as_ref())?);
        Ok(out)
    }

    /// `[T, U+1]` log-FoCC tempered by `lambda_gamma`; zero off the boundary set.
    pub fn log_gamma(&self, tape: &mut Tape, out: &FocceOutputs, lambda_gamma: f64) -> Result<Var> {
        let (t_len, u1) = (out.frames, out.target_len + 1);
        let Some(lp) = out.log_density else {
            return Ok(tape.constant(Tensor::zeros(vec![t_len, u1])));
        };
        let mut chi_index = vec![None; t_len * u1];
        let mut bar_index = vec![None; t_len * u1];
        for (i, &t) in out.boundaries.iter().enumerate() {
            for u in 0..u1 {
                chi_index[(t - 1) * u1 + u] = Some(out.chi_row(i, u));
                bar_index[(t - 1) * u1 + u] = Some(out.bar_row(i));
            }
        }
        let chi = tape.gather(lp, chi_index, 0.0, vec![t_len, u1])?;
        let bar = tape.gather(lp, bar_index, 0.0, vec![t_len, u1])?;
        let diff = tape.sub(chi, bar)?;
        Ok(tape.scale(diff, lambda_gamma))
    }

    /// Sum over boundaries of `chi_bar(t) + mean_{u=1..U} chi(t, u)`, in
    /// log-densities or raw densities per the configured mode. An empty
    /// label sequence contributes only the `chi_bar` terms.
    pub fn objective(&self, tape: &mut Tape, out: &FocceOutputs) -> Result<Var> {
        let Some(lp) = out.log_density else {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        };
        let rows = tape.shape(lp)[0];
        let mut weights = vec![0.0; rows];
        let u_len = out.target_len;
        for i in 0..out.boundaries.len() {
            weights[out.bar_row(i)] = 1.0;
            for u in 1..=u_len {
                weights[out.chi_row(i, u)] = 1.0 / u_len as f64;
            }
        }
        let w = tape.constant(Tensor::from_parts(vec![rows], weights));
        let terms = match self.config.objective_mode {
            ObjectiveMode::Log => lp,
            ObjectiveMode::Literal => tape.exp(lp)?,
        };
        let weighted = tape.mul(terms, w)?;
        Ok(tape.sum(weighted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FocceNet {
        let mut rng = crate::rng::seeded(4);
        let config = FocceConfig {
            stack: 2,
            feature_dim: 2,
            vocab: 3,
            encoder_dim: 4,
            encoder_layers: 2,
            kernel: 3,
            predictor_dim: 3,
            flow_depth: 2,
            flow_blocks: 2,
            flow_hidden: 6,
            scale_clamp: 3.0,
            objective_mode: ObjectiveMode::Log,
        };
        let mut net = FocceNet::new(&mut rng, config, ChunkParams { chunk_size: 2, right_context: 0 }).unwrap();
        let heads = net.flow.head_params();
        for id in heads {
            for v in net.params_mut().get_mut(id).values_mut() {
                *v = 0.3 * crate::rng::normal(&mut rng);
            }
        }
        net
    }

    fn features(raw_frames: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::seeded(seed);
        Tensor::new(vec![raw_frames, 2], (0..raw_frames * 2).map(|_| crate::rng::normal(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn gamma_arithmetic() {
        assert_eq!(gamma_omega(-3.0, -1.0, 0.0), 0.0);
        assert_eq!(gamma_omega(-2.5, -2.5, 0.7), 0.0);
        assert!((gamma_omega(1.0, -1.0, 0.05) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn objective_sums_boundary_terms() {
        let net = tiny();
        let frames = net.stack(&features(9, 1)).unwrap();
        assert_eq!(frames.shape(), &[5, 4]);
        let s = ContextSchedule::new(2, 0, 5).unwrap();
        let target = [2, 1];
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, true);
        let out = net.densities(&mut tape, &p, &frames, &target, &s).unwrap();
        assert_eq!(out.boundaries, vec![2, 4]);
        let obj = net.objective(&mut tape, &out).unwrap();
        let mut expect = 0.0;
        for &t in &out.boundaries {
            expect += out.log_chi_bar(&tape, t).unwrap();
            expect += 0.5 * (out.log_chi(&tape, t, 1).unwrap() + out.log_chi(&tape, t, 2).unwrap());
        }
        assert!((tape.value(obj).item().unwrap() - expect).abs() < 1e-12);

        let lg = net.log_gamma(&mut tape, &out, 0.05).unwrap();
        let lg = tape.value(lg).clone();
        crate::streaming::FoccTable::new(&s, lg.clone()).unwrap();
        let t = 4;
        let want = 0.05 * (out.log_chi(&tape, t, 1).unwrap() - out.log_chi_bar(&tape, t).unwrap());
        assert!((lg.get(&[t - 1, 1]).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn single_chunk_has_empty_objective() {
        let net = tiny();
        let frames = net.stack(&features(4, 2)).unwrap();
        let s = ContextSchedule::new(4, 0, 2).unwrap();
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, true);
        let out = net.densities(&mut tape, &p, &frames, &[1], &s).unwrap();
        let obj = net.objective(&mut tape, &out).unwrap();
        assert_eq!(tape.value(obj).item().unwrap(), 0.0);
        let grads = tape.backward(obj).unwrap();
        assert!(p.vars().iter().all(|&v| grads.wrt(v).max_abs() == 0.0));
    }

    #[test]
    fn predictor_prefix_property() {
        let net = tiny();
        let run = |target: &[usize]| {
            let mut tape = Tape::new();
            let p = net.params().bind(&mut tape, false);
            let g = net.predict(&mut tape, &p, target).unwrap();
            tape.value(g).values().to_vec()
        };
        let a = run(&[1, 2]);
        let b = run(&[1, 2, 3]);
        assert_eq!(a[..], b[..a.len()]);
        let c = run(&[1, 3]);
        assert_ne!(a[6..9], c[6..9]);
        assert_eq!(run(&[])[..], a[..3]);
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, false);
        assert!(net.predict(&mut tape, &p, &[4]).is_err());
    }
}
