//! Levelled ℓ0-sampler and an exact-support reference.
//!
//! Each repetition keeps `L = ceil(log2 n) + 1` one-sparse recovery cells.
//! Item `a` enters level `ℓ` of repetition `r` iff its keyed hash has at least
//! `ℓ` trailing zeros, so level `ℓ` subsamples the domain with probability
//! `2^-ℓ`. A cell stores `(count, weighted_sum) = (sum f_a, sum f_a * a)` over
//! its members.
//!
//! A query scans repetitions in order and, within each, levels from sparsest
//! to densest, returning the first cell that decodes: `count != 0`,
//! `count | weighted_sum`, the quotient lies in `[1, n]`, and the quotient is
//! itself a member of that level. There is no fingerprint, so a cell holding
//! several items can still decode to a wrong item; that rate is measured by
//! the tests rather than bounded.

use std::collections::BTreeMap;

use crate::seed::{keyed_hash, SketchSeed};

/// The J0 contract: answer any element with non-zero frequency, or `None`.
pub trait J0Sampler {
    fn update(&mut self, item: u32, delta: i64);

    fn sample(&mut self) -> Option<u32>;

    /// Whether the sampler consumes an advice bit after each query.
    fn wants_advice(&self) -> bool {
        false
    }

    fn advise(&mut self, _bit: bool) {}
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Cell {
    count: i64,
    weighted_sum: i64,
}

#[derive(Clone, Debug)]
pub struct L0Sampler {
    seed: SketchSeed,
    domain: u32,
    levels: usize,
    keys: Vec<u64>,
    cells: Vec<Cell>,
}

impl L0Sampler {
    pub const DEFAULT_REPETITIONS: usize = 4;

    pub fn new(domain: u32, seed: SketchSeed) -> Self {
        Self::with_repetitions(domain, Self::DEFAULT_REPETITIONS, seed)
    }

    pub fn with_repetitions(domain: u32, repetitions: usize, seed: SketchSeed) -> Self {
        assert!(domain > 0, "domain must be non-empty");
        assert!(repetitions > 0, "need at least one repetition");
        let levels = (domain as f64).log2().ceil() as usize + 1;
        let keys = (0..repetitions)
            .map(|r| seed.child("rep").child(r).key())
            .collect();
        Self {
            seed,
            domain,
            levels,
            keys,
            cells: vec![Cell::default(); repetitions * levels],
        }
    }

    pub fn seed(&self) -> &SketchSeed {
        &self.seed
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn repetitions(&self) -> usize {
        self.keys.len()
    }

    /// Machine words of state: two per cell.
    pub fn space_words(&self) -> usize {
        2 * self.cells.len()
    }

    fn level_of(&self, rep: usize, item: u32) -> usize {
        let h = keyed_hash(self.keys[rep], item as u64, 0);
        (h.trailing_zeros() as usize).min(self.levels - 1)
    }

    fn decode(&self, rep: usize, level: usize) -> Option<u32> {
        let cell = self.cells[rep * self.levels + level];
        if cell.count == 0 || cell.weighted_sum % cell.count != 0 {
            return None;
        }
        let item = cell.weighted_sum / cell.count;
        if item < 1 || item > self.domain as i64 {
            return None;
        }
        let item = item as u32;
        (self.level_of(rep, item) >= level).then_some(item)
    }
}

impl J0Sampler for L0Sampler {
    fn update(&mut self, item: u32, delta: i64) {
        debug_assert!((1..=self.domain).contains(&item));
        for rep in 0..self.keys.len() {
            let top = self.level_of(rep, item);
            let base = rep * self.levels;
            for cell in &mut self.cells[base..=base + top] {
                cell.count += delta;
                cell.weighted_sum += delta * item as i64;
            }
        }
    }

    fn sample(&mut self) -> Option<u32> {
        (0..self.keys.len())
            .flat_map(|rep| (0..self.levels).rev().map(move |level| (rep, level)))
            .find_map(|(rep, level)| self.decode(rep, level))
    }
}

/// Stores the whole frequency vector; answers the smallest live item.
#[derive(Clone, Debug, Default)]
pub struct ExactSupportSampler {
    freq: BTreeMap<u32, i64>,
}

impl ExactSupportSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn support_len(&self) -> usize {
        self.freq.len()
    }
}

impl J0Sampler for ExactSupportSampler {
    fn update(&mut self, item: u32, delta: i64) {
        let f = self.freq.entry(item).or_insert(0);
        *f += delta;
        if *f == 0 {
            self.freq.remove(&item);
        }
    }

    fn sample(&mut self) -> Option<u32> {
        self.freq.keys().next().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_support_fails() {
        let mut s = L0Sampler::new(1024, SketchSeed::new(1));
        assert_eq!(s.sample(), None);
        s.update(10, 1);
        s.update(10, -1);
        assert_eq!(s.sample(), None);
    }

    #[test]
    fn single_item_recovered() {
        for root in 0..50 {
            let mut s = L0Sampler::new(1024, SketchSeed::new(root));
            s.update(77, 1);
            s.update(3, 1);
            s.update(3, -1);
            assert_eq!(s.sample(), Some(77));
            s.update(77, 1);
            assert_eq!(s.sample(), Some(77));
        }
    }

    #[test]
    fn level_count_and_space() {
        let s = L0Sampler::new(4096, SketchSeed::new(0));
        assert_eq!(s.levels(), 13);
        assert_eq!(s.space_words(), 2 * 4 * 13);
        assert!(s.space_words() <= 144);
        assert_eq!(L0Sampler::new(1024, SketchSeed::new(0)).levels(), 11);
    }

    #[test]
    fn exact_sampler_tracks_support() {
        let mut s = ExactSupportSampler::new();
        assert_eq!(s.sample(), None);
        s.update(9, 1);
        s.update(4, 1);
        assert_eq!(s.sample(), Some(4));
        s.update(4, -1);
        assert_eq!(s.sample(), Some(9));
        assert_eq!(s.support_len(), 1);
    }
}
