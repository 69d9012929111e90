//! Toy streaming transducer `theta`: chunk-causal convolutional encoder,
//! stateless predictor over the last few labels, and an additive joiner
//! followed by a log-softmax over blank (index 0) and labels `1..=V`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lattice::{LatticeVars, LocalProbTable};
use crate::nn::{stack_frames, Bound, ChunkConvEncoder, Embedding, EncoderConfig, Linear, ParamStore};
use crate::streaming::ContextSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransducerConfig {
    pub stack: usize,
    pub feature_dim: usize,
    pub vocab: usize,
    pub encoder_dim: usize,
    pub encoder_layers: usize,
    pub kernel: usize,
    pub predictor_dim: usize,
    #[serde(default = "default_context")]
    pub predictor_context: usize,
    pub joiner_dim: usize,
}

fn default_context() -> usize {
    2
}

impl TransducerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.stack,
            self.feature_dim,
            self.vocab,
            self.encoder_dim,
            self.kernel,
            self.predictor_dim,
            self.predictor_context,
            self.joiner_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("transducer dims must all be at least 1".into()));
        }
        Ok(())
    }

    pub fn frame_dim(&self) -> usize {
        self.stack * self.feature_dim
    }
}

#[derive(Clone, Debug)]
pub struct TransducerNet {
    config: TransducerConfig,
    params: ParamStore,
    encoder: ChunkConvEncoder,
    embedding: Embedding,
    predictor: Linear,
    enc_proj: Linear,
    pred_proj: Linear,
    output: Linear,
}

/// Per-utterance network outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct JointOutputs {
    pub frames: usize,
    pub target_len: usize,
    /// `[T * (U+1), V+1]` log-probabilities, row `t * (U+1) + u`.
    pub log_probs: Var,
}

impl TransducerNet {
    pub fn new<R: Rng>(rng: &mut R, config: TransducerConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let encoder = ChunkConvEncoder::new(
            &mut params,
            rng,
            "theta.encoder",
            EncoderConfig {
                input_dim: config.frame_dim(),
                dim: config.encoder_dim,
                conv_layers: config.encoder_layers,
                kernel: config.kernel,
            },
        )?;
        let p = config.predictor_dim;
        let embedding = Embedding::new(&mut params, rng, "theta.embed", config.vocab + 1, p);
        let predictor = Linear::new(&mut params, rng, "theta.predictor", config.predictor_context * p, p);
        let enc_proj = Linear::new(&mut params, rng, "theta.joiner.enc", config.encoder_dim, config.joiner_dim);
        let pred_proj = Linear::new(&mut params, rng, "theta.joiner.pred", p, config.joiner_dim);
        let output = Linear::new(&mut params, rng, "theta.joiner.out", config.joiner_dim, config.vocab + 1);
        Ok(Self {
            config,
            params,
            encoder,
            embedding,
            predictor,
            enc_proj,
            pred_proj,
            output,
        })
    }

    pub fn config(&self) -> &TransducerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stack(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.rank() != 2 || raw.shape()[1] != self.config.feature_dim || raw.shape()[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "transducer features",
                lhs: raw.shape().to_vec(),
                rhs: vec![self.config.feature_dim],
            });
        }
        stack_frames(raw, self.config.stack)
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&y| y == 0 || y > self.config.vocab) {
            Some(&y) => Err(Error::OutOfRange {
                what: "transducer label",
                index: y,
                bound: self.config.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Embedding ids of the last `context` labels of `prefix`, start-padded.
    pub fn context_ids(&self, prefix: &[usize]) -> Vec<usize> {
        let k = self.config.predictor_context;
        let mut ids = vec![0; k];
        let take = prefix.len().min(k);
        ids[k - take..].copy_from_slice(&prefix[prefix.len() - take..]);
        ids
    }

    /// `[T, encoder_dim]` encodings of stacked frames.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, frames: &Tensor, schedule: &ContextSchedule) -> Result<Var> {
        let x = tape.constant(frames.clone());
        self.encoder.forward(tape, p, x, schedule)
    }

    /// `[U+1, predictor_dim]`; row `u` depends on `y_{u-context+1..=u}` only.
    pub fn predict(&self, tape: &mut Tape, p: &Bound, target: &[usize]) -> Result<Var> {
        self.check_labels(target)?;
        let k = self.config.predictor_context;
        let mut ids = Vec::with_capacity((target.len() + 1) * k);
        for u in 0..=target.len() {
            ids.extend(self.context_ids(&target[..u]));
        }
        let emb = self.embedding.lookup(tape, p, &ids)?;
        let emb = tape.reshape(emb, vec![target.len() + 1, k * self.config.predictor_dim])?;
        let h = self.predictor.forward(tape, p, emb)?;
        tape.relu(h)
    }

    /// Log-softmax of the joiner over every `(t, u)` pair.
    pub fn joint(
        &self,
        tape: &mut Tape,
        p: &Bound,
        frames: &Tensor,
        target: &[usize],
        schedule: &ContextSchedule,
    ) -> Result<JointOutputs> {
        let f = self.encode(tape, p, frames, schedule)?;
        let g = self.predict(tape, p, target)?;
        let fj = self.enc_proj.forward(tape, p, f)?;
        let gj = self.pred_proj.forward(tape, p, g)?;
        let (t_len, u1) = (schedule.frames(), target.len() + 1);
        let t_rows: Vec<Option<usize>> = (0..t_len * u1).map(|r| Some(r / u1)).collect();
        let u_rows: Vec<Option<usize>> = (0..t_len * u1).map(|r| Some(r % u1)).collect();
        let ft = tape.gather_rows(fj, &t_rows)?;
        let gu = tape.gather_rows(gj, &u_rows)?;
        let h = tape.add(ft, gu)?;
        let h = tape.tanh(h)?;
        let logits = self.output.forward(tape, p, h)?;
        Ok(JointOutputs {
            frames: t_len,
            target_len: target.len(),
            log_probs: tape.log_softmax(logits)?,
        })
    }

    /// Differentiable lattice view of the joint outputs for `target`.
    pub fn lattice_vars(&self, tape: &mut Tape, joint: &JointOutputs, target: &[usize]) -> Result<LatticeVars> {
        let (t_len, u1) = (joint.frames, joint.target_len + 1);
        let v1 = self.config.vocab + 1;
        let blank = (0..t_len * u1).map(|r| Some(r * v1)).collect();
        let log_blank = tape.gather(joint.log_probs, blank, 0.0, vec![t_len, u1])?;
        let emit = (0..t_len)
            .flat_map(|t| (0..u1 - 1).map(move |u| Some((t * u1 + u) * v1 + target[u])))
            .collect();
        let log_emit = tape.gather(joint.log_probs, emit, 0.0, vec![t_len, u1 - 1])?;
        Ok(LatticeVars {
            frames: t_len,
            target_len: joint.target_len,
            log_blank,
            log_emit,
        })
    }

    /// Fills the `(T, U+1, V)` local probability table.
    pub fn build_prob_table(&self, raw: &Tensor, target: &[usize], schedule: &ContextSchedule) -> Result<LocalProbTable> {
        let frames = self.stack(raw)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let joint = self.joint(&mut tape, &p, &frames, target, schedule)?;
        let lp = tape.value(joint.log_probs).values();
        let (t_len, u1, v) = (joint.frames, target.len() + 1, self.config.vocab);
        let mut blank = Vec::with_capacity(t_len * u1);
        let mut label = Vec::with_capacity(t_len * u1 * v);
        for row in lp.chunks(v + 1) {
            blank.push(row[0]);
            label.extend_from_slice(&row[1..]);
        }
        LocalProbTable::new(
            Tensor::with_log_zero(vec![t_len, u1], blank)?,
            Tensor::with_log_zero(vec![t_len, u1, v], label)?,
            target.to_vec(),
            v,
        )
    }

    /// Plain-`f64` scorer over arbitrary prefixes, for decoding.
    pub fn scorer(&self, raw: &Tensor, schedule: &ContextSchedule) -> Result<JointScorer<'_>> {
        let frames = self.stack(raw)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let f = self.encode(&mut tape, &p, &frames, schedule)?;
        let fj = self.enc_proj.forward(&mut tape, &p, f)?;
        Ok(JointScorer {
            net: self,
            enc: tape.value(fj).clone(),
            cache: HashMap::new(),
        })
    }
}

/// Scores for blank and every label at `(t, prefix)`; index 0 is blank.
pub trait PrefixScorer {
    fn frames(&self) -> usize;
    fn vocab(&self) -> usize;
    /// `t` is 0-based.
    fn log_probs(&mut self, t: usize, prefix: &[usize]) -> Vec<f64>;
}

pub struct JointScorer<'a> {
    net: &'a TransducerNet,
    /// `[T, joiner_dim]` projected encoder outputs.
    enc: Tensor,
    cache: HashMap<Vec<usize>, Vec<f64>>,
}

impl JointScorer<'_> {
    fn projected_predictor(&mut self, prefix: &[usize]) -> &[f64] {
        let net = self.net;
        let key = net.context_ids(prefix);
        self.cache.entry(key).or_insert_with_key(|ids| {
            let store = &net.params;
            let emb: Vec<f64> = ids.iter().flat_map(|&i| net.embedding.row(store, i).iter().copied()).collect();
            let mut g = vec![0.0; net.config.predictor_dim];
            net.predictor.apply(store, &emb, &mut g);
            g.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut gj = vec![0.0; net.config.joiner_dim];
            net.pred_proj.apply(store, &g, &mut gj);
            gj
        })
    }
}

impl PrefixScorer for JointScorer<'_> {
    fn frames(&self) -> usize {
        self.enc.shape()[0]
    }

    fn vocab(&self) -> usize {
        self.net.config.vocab
    }

    fn log_probs(&mut self, t: usize, prefix: &[usize]) -> Vec<f64> {
        let gj = self.projected_predictor(prefix).to_vec();
        let h: Vec<f64> = self.enc.row(t).iter().zip(&gj).map(|(a, b)| (a + b).tanh()).collect();
        let mut logits = vec![0.0; self.net.config.vocab + 1];
        self.net.output.apply(&self.net.params, &h, &mut logits);
        let lse = crate::autodiff::log_sum_exp_iter(logits.iter().copied());
        logits.iter_mut().for_each(|v| *v -= lse);
        logits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> TransducerConfig {
        TransducerConfig {
            stack: 1,
            feature_dim: 3,
            vocab: 4,
            encoder_dim: 5,
            encoder_layers: 2,
            kernel: 3,
            predictor_dim: 4,
            predictor_context: 2,
            joiner_dim: 6,
        }
    }

    fn features(frames: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::seeded(seed);
        Tensor::new(vec![frames, 3], (0..frames * 3).map(|_| crate::rng::normal(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn table_is_normalized_and_matches_scorer() {
        let mut rng = crate::rng::seeded(1);
        let net = TransducerNet::new(&mut rng, tiny_config()).unwrap();
        let x = features(7, 2);
        let s = ContextSchedule::new(3, 1, 7).unwrap();
        let target = [2, 4, 1];
        let table = net.build_prob_table(&x, &target, &s).unwrap();
        let mut scorer = net.scorer(&x, &s).unwrap();
        for t in 0..7 {
            for u in 0..=3 {
                let lp = scorer.log_probs(t, &target[..u]);
                assert!((lp[0] - table.log_blank_at(t, u)).abs() < 1e-12);
                for (k, v) in lp.iter().enumerate().skip(1) {
                    assert!((v - table.log_label_at(t, u, k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stateless_predictor_context() {
        let mut rng = crate::rng::seeded(3);
        let net = TransducerNet::new(&mut rng, tiny_config()).unwrap();
        let rows = |target: &[usize]| {
            let mut tape = Tape::new();
            let p = net.params().bind(&mut tape, false);
            let g = net.predict(&mut tape, &p, target).unwrap();
            tape.value(g).clone()
        };
        let a = rows(&[1, 3, 2]);
        let b = rows(&[4, 3, 2]);
        assert_eq!(a.row(3), b.row(3));
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
        assert_eq!(net.context_ids(&[]), vec![0, 0]);
        assert_eq!(net.context_ids(&[7]), vec![0, 7]);
    }

    #[test]
    fn zero_joiner_is_uniform() {
        let mut rng = crate::rng::seeded(5);
        let mut net = TransducerNet::new(&mut rng, tiny_config()).unwrap();
        for id in [net.output.weight, net.output.bias] {
            net.params_mut().get_mut(id).values_mut().fill(0.0);
        }
        let s = ContextSchedule::new(2, 0, 4).unwrap();
        let table = net.build_prob_table(&features(4, 1), &[1], &s).unwrap();
        let uniform = -(5f64).ln();
        assert!((table.log_blank_at(2, 1) - uniform).abs() < 1e-15);
        assert!((table.log_label_at(0, 0, 3) - uniform).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_labels() {
        let mut rng = crate::rng::seeded(5);
        let net = TransducerNet::new(&mut rng, tiny_config()).unwrap();
        let s = ContextSchedule::new(2, 0, 4).unwrap();
        assert!(net.build_prob_table(&features(4, 1), &[5], &s).is_err());
        assert!(net.build_prob_table(&features(4, 1), &[0], &s).is_err());
    }
}
