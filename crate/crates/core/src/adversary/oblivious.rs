use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AsaAdversary, AsbiAdversary};
use crate::seed::SketchSeed;
use crate::sketch::StreamUpdate;

#[derive(Clone, Debug, PartialEq)]
pub struct ObliviousParams {
    pub domain: u32,
    pub length: usize,
    /// Probability that an update is a deletion; `0.0` is insertion-only.
    pub delete_prob: f64,
    /// Query flags placed evenly over the stream (ASA only).
    pub queries: usize,
}

impl ObliviousParams {
    pub fn insertion_only(domain: u32, length: usize, queries: usize) -> Self {
        Self {
            domain,
            length,
            delete_prob: 0.0,
            queries,
        }
    }
}

/// Uniform items from `[1, domain]`, fixed in advance by the seed.
#[derive(Clone, Debug)]
pub struct ObliviousAdversary {
    params: ObliviousParams,
    seed: SketchSeed,
    stream: Vec<StreamUpdate>,
    cursor: usize,
}

/// Whether step `i` (1-based) of `m` carries one of `t` evenly spread queries.
pub fn evenly_spaced_query(i: usize, t: usize, m: usize) -> bool {
    i >= 1 && i <= m && i * t / m > (i - 1) * t / m
}

fn draw(rng: &mut ChaCha8Rng, params: &ObliviousParams) -> StreamUpdate {
    let item = rng.random_range(1..=params.domain);
    if params.delete_prob > 0.0 && rng.random_bool(params.delete_prob.min(1.0)) {
        StreamUpdate::delete(item)
    } else {
        StreamUpdate::insert(item)
    }
}

impl ObliviousAdversary {
    pub fn new(params: ObliviousParams, seed: SketchSeed) -> Self {
        let stream = Self::generate(&params, &seed, params.length);
        Self {
            params,
            seed,
            stream,
            cursor: 0,
        }
    }

    fn generate(params: &ObliviousParams, seed: &SketchSeed, len: usize) -> Vec<StreamUpdate> {
        let mut rng = seed.child("oblivious").rng();
        (1..=len)
            .map(|i| draw(&mut rng, params).with_query(evenly_spaced_query(i, params.queries, len)))
            .collect()
    }

    pub fn params(&self) -> &ObliviousParams {
        &self.params
    }

    pub fn stream(&self) -> &[StreamUpdate] {
        &self.stream
    }
}

impl AsaAdversary for ObliviousAdversary {
    fn next_update(&mut self) -> Option<StreamUpdate> {
        let u = self.stream.get(self.cursor).copied();
        self.cursor += 1;
        u
    }

    fn observe(&mut self, _response: f64) {}
}

impl AsbiAdversary for ObliviousAdversary {
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate> {
        if len != self.stream.len() {
            self.stream = Self::generate(&self.params, &self.seed, len);
        }
        self.stream.iter().map(|u| u.with_query(false)).collect()
    }

    fn react(&mut self, _step: usize, _response: f64) -> Option<Vec<StreamUpdate>> {
        None
    }
}
