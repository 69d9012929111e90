use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::streaming::ContextSchedule;

use super::{Bound, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of one (already stacked) input frame.
    pub input_dim: usize,
    pub dim: usize,
    pub conv_layers: usize,
    /// Odd kernel widths are centred; even ones lean one frame to the past.
    pub kernel: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.dim == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig("encoder dims and kernel must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pointwise projection followed by residual chunk-masked convolutions.
///
/// The first convolution may read any frame up to `e(t)`. Later ones read
/// only up to the end of `t`'s own chunk: every frame in that range was
/// itself computed from input no later than `e(t)`, so the stack stays
/// chunk-causal for any right offset.
#[derive(Clone, Debug)]
pub struct ChunkConvEncoder {
    config: EncoderConfig,
    proj: Linear,
    convs: Vec<Linear>,
}

impl ChunkConvEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let proj = Linear::new(store, rng, &format!("{name}.proj"), config.input_dim, config.dim);
        let convs = (0..config.conv_layers)
            .map(|l| {
                Linear::new(
                    store,
                    rng,
                    &format!("{name}.conv{l}"),
                    config.kernel * config.dim,
                    config.dim,
                )
            })
            .collect();
        Ok(Self { config, proj, convs })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn offsets(&self) -> impl Iterator<Item = isize> {
        let k = self.config.kernel as isize;
        let lo = -(k / 2);
        lo..lo + k
    }

    /// `[T, input_dim]` frames to `[T, dim]` encodings.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, schedule: &ContextSchedule) -> Result<Var> {
        let frames = tape.shape(x)[0];
        if frames != schedule.frames() || tape.shape(x)[1] != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encoder input",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![schedule.frames(), self.config.input_dim],
            });
        }
        let h = self.proj.forward(tape, p, x)?;
        let mut h = tape.tanh(h)?;
        for (layer, conv) in self.convs.iter().enumerate() {
            let mut taps = Vec::with_capacity(self.config.kernel);
            for off in self.offsets() {
                let rows: Vec<Option<usize>> = (0..frames)
                    .map(|t| {
                        let limit = if layer == 0 {
                            schedule.end(t + 1)
                        } else {
                            schedule.chunk_end(t + 1)
                        };
                        let src = t as isize + off;
                        (src >= 0 && (src as usize) < limit).then_some(src as usize)
                    })
                    .collect();
                taps.push(tape.gather_rows(h, &rows)?);
            }
            let window = tape.concat(&taps, 1)?;
            let y = conv.forward(tape, p, window)?;
            let y = tape.tanh(y)?;
            h = tape.add(h, y)?;
        }
        Ok(h)
    }
}

/// Groups `stack` consecutive raw frames into one wider frame, zero-padding
/// the tail. `[T_raw, D]` becomes `[ceil(T_raw / stack), stack * D]`.
pub fn stack_frames(x: &Tensor, stack: usize) -> Result<Tensor> {
    if x.rank() != 2 || stack == 0 {
        return Err(Error::ShapeMismatch {
            op: "stack_frames",
            lhs: x.shape().to_vec(),
            rhs: vec![stack],
        });
    }
    let (raw, dim) = (x.shape()[0], x.shape()[1]);
    let frames = raw.div_ceil(stack);
    let mut values = x.values().to_vec();
    values.resize(frames * stack * dim, 0.0);
    Ok(Tensor::from_parts(vec![frames, stack * dim], values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(enc: &ChunkConvEncoder, store: &ParamStore, x: &Tensor, s: &ContextSchedule) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = enc.forward(&mut tape, &p, xv, s).unwrap();
        tape.value(out).values().to_vec()
    }

    #[test]
    fn outputs_ignore_frames_past_context_end() {
        let mut rng = crate::rng::seeded(17);
        let mut store = ParamStore::new();
        let config = EncoderConfig {
            input_dim: 3,
            dim: 4,
            conv_layers: 3,
            kernel: 3,
        };
        let enc = ChunkConvEncoder::new(&mut store, &mut rng, "enc", config).unwrap();
        for right in [0, 1, 2] {
            let s = ContextSchedule::new(3, right, 11).unwrap();
            let x = Tensor::new(vec![11, 3], (0..33).map(|_| crate::rng::normal(&mut rng)).collect()).unwrap();
            let base = encode(&enc, &store, &x, &s);
            for t in 1..=11 {
                let e = s.end(t);
                if e == 11 {
                    continue;
                }
                let mut y = x.clone();
                for v in &mut y.values_mut()[e * 3..] {
                    *v += 1.0;
                }
                let moved = encode(&enc, &store, &y, &s);
                assert_eq!(base[(t - 1) * 4..t * 4], moved[(t - 1) * 4..t * 4]);
            }
        }
    }

    #[test]
    fn stacking_pads_tail() {
        let x = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = stack_frames(&x, 2).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        assert_eq!(s.values(), &[1., 2., 3., 4., 5., 6., 0., 0.]);
    }
}
