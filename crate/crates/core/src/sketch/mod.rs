//! Oblivious streaming sketches with a linear vector segment.

mod f2;
mod l0;

pub use f2::{F2Params, LinearSketch};
pub use l0::{ExactSupportSampler, J0Sampler, L0Sampler};

use thiserror::Error;

/// One turnstile event plus the query flag of the adversarial games.
///
/// Items are 1-based identifiers in `[1, n]`; deltas are `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamUpdate {
    pub item: u32,
    pub delta: i8,
    pub query: bool,
}

impl StreamUpdate {
    pub fn insert(item: u32) -> Self {
        Self {
            item,
            delta: 1,
            query: false,
        }
    }

    pub fn delete(item: u32) -> Self {
        Self {
            item,
            delta: -1,
            query: false,
        }
    }

    pub fn queried(mut self) -> Self {
        self.query = true;
        self
    }

    pub fn with_query(mut self, query: bool) -> Self {
        self.query = query;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("invalid sketch parameters: {0}")]
    InvalidParams(String),
    #[error("item {item} outside domain [1, {domain}]")]
    ItemOutOfDomain { item: u32, domain: u32 },
    #[error("delta {0} is not +1 or -1")]
    InvalidDelta(i8),
    #[error("sketches differ in {0}")]
    Mismatch(&'static str),
    #[error("bit index {index} outside vector segment of {bits} bits")]
    BitIndexOutOfRange { index: usize, bits: usize },
}
