use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Last input frame visible at encoder frame `t` (1-based):
/// `min(T, C * ceil(t / C) + R)`.
pub fn context_end(chunk_size: usize, right_context: usize, frames: usize, t: usize) -> Result<usize> {
    if chunk_size == 0 {
        return Err(Error::InvalidConfig("chunk size must be at least 1".into()));
    }
    if t == 0 || t > frames {
        return Err(Error::OutOfRange {
            what: "context_end frame",
            index: t,
            bound: frames,
        });
    }
    Ok(frames.min(chunk_size * t.div_ceil(chunk_size) + right_context))
}

/// Chunk size and right offset shared by every chunk-causal component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub chunk_size: usize,
    #[serde(default)]
    pub right_context: usize,
}

impl ChunkParams {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, frames: usize) -> Result<ContextSchedule> {
        ContextSchedule::new(self.chunk_size, self.right_context, frames)
    }
}

/// Context-end map of one utterance of `frames` encoder frames.
///
/// Public methods take 1-based frame indices, matching `e(t)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextSchedule {
    chunk_size: usize,
    right_context: usize,
    frames: usize,
    ends: Vec<usize>,
}

impl ContextSchedule {
    pub fn new(chunk_size: usize, right_context: usize, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidConfig("a schedule needs at least one frame".into()));
        }
        let ends = (1..=frames)
            .map(|t| context_end(chunk_size, right_context, frames, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            chunk_size,
            right_context,
            frames,
            ends,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn right_context(&self) -> usize {
        self.right_context
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `e(t)`; panics outside `1..=T`.
    pub fn end(&self, t: usize) -> usize {
        self.ends[t - 1]
    }

    /// Last frame of the chunk containing `t`.
    pub fn chunk_end(&self, t: usize) -> usize {
        self.frames.min(self.chunk_size * t.div_ceil(self.chunk_size))
    }

    /// `e(t) < e(t+1)`, for `t` in `1..T`.
    pub fn is_boundary(&self, t: usize) -> bool {
        t >= 1 && t < self.frames && self.ends[t - 1] < self.ends[t]
    }

    /// All `t` in `1..T` where the visible context grows.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.frames).filter(|&t| self.is_boundary(t)).collect()
    }

    /// 1-based frames `e(t)+1 ..= e(t+1)` revealed after boundary `t`.
    pub fn next_chunk(&self, t: usize) -> std::ops::RangeInclusive<usize> {
        self.ends[t - 1] + 1..=self.ends[t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula_examples() {
        assert_eq!(context_end(8, 0, 100, 3).unwrap(), 8);
        assert_eq!(context_end(8, 0, 100, 8).unwrap(), 8);
        assert_eq!(context_end(8, 0, 100, 9).unwrap(), 16);
        assert_eq!(context_end(8, 4, 10, 9).unwrap(), 10);
    }

    #[test]
    fn out_of_range() {
        assert!(context_end(8, 0, 10, 0).is_err());
        assert!(context_end(8, 0, 10, 11).is_err());
        assert!(context_end(0, 0, 10, 1).is_err());
    }

    #[test]
    fn boundaries_where_context_grows() {
        let s = ContextSchedule::new(4, 0, 10).unwrap();
        assert_eq!(s.boundaries(), vec![4, 8]);
        assert_eq!(s.next_chunk(4), 5..=8);
        assert_eq!(s.next_chunk(8), 9..=10);
        let single = ContextSchedule::new(16, 0, 10).unwrap();
        assert!(single.boundaries().is_empty());
        assert_eq!(s.end(10), 10);
    }

    #[test]
    fn right_context_shifts_ends() {
        let s = ContextSchedule::new(4, 2, 12).unwrap();
        assert_eq!(s.end(1), 6);
        assert_eq!(s.end(5), 10);
        assert_eq!(s.end(9), 12);
        assert_eq!(s.boundaries(), vec![4, 8]);
        assert_eq!(s.chunk_end(5), 8);
    }

    proptest! {
        #[test]
        fn nondecreasing_and_covering(c in 1usize..12, r in 0usize..10, frames in 1usize..80) {
            let s = ContextSchedule::new(c, r, frames).unwrap();
            for t in 1..=frames {
                prop_assert!(s.end(t) >= t);
                prop_assert!(s.end(t) <= frames);
                if t < frames {
                    prop_assert!(s.end(t) <= s.end(t + 1));
                    prop_assert_eq!(s.is_boundary(t), s.end(t) < s.end(t + 1));
                }
            }
            if r == 0 && frames % c == 0 {
                prop_assert_eq!(s.end(frames), frames);
            }
        }
    }
}
