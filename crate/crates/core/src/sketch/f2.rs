//! AMS second-moment sketch with an explicit three-segment state.
//!
//! The state is split the way the linear-state contract requires:
//!
//! * seed segment: a [`SketchSeed`] fixing every sign function,
//! * vector segment: `d` counters of `w` bits, two's complement, wrapping,
//! * scratch segment: a cache of expanded sign rows, never serialized and
//!   never compared.
//!
//! Counter `j` holds `sum_a f_a * sign_j(a)` reduced mod `2^w`, so the vector
//! segment of a concatenated stream is the counter-wise modular sum of the
//! segments of its parts. The estimate is the median over `d2` groups of the
//! mean of `d1` squared counters.
//!
//! Counters are exact as long as every true counter stays below `2^(w-1)` in
//! magnitude; with `w = 32` that holds for any stream of at most `2^30` updates.

use std::collections::HashMap;
use std::fmt;

use super::{SketchError, StreamUpdate};
use crate::seed::{keyed_hash, SketchSeed};

/// Sign rows are cached until the cache would exceed this many bytes.
const SIGN_CACHE_BYTES: usize = 48 << 20;

/// Shape of an F2 sketch: `groups` means of `group_size` squared counters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F2Params {
    alpha: f64,
    beta_single: f64,
    group_size: usize,
    groups: usize,
    width_bits: u32,
}

impl F2Params {
    /// Per-sketch failure probability assumed by the robust wrappers.
    pub const BETA_SINGLE: f64 = 0.1;
    pub const DEFAULT_WIDTH: u32 = 32;

    /// `d1 = ceil(8 / alpha^2)`, `d2 = ceil(4 ln(1 / 0.1))`, 32-bit counters.
    pub fn for_accuracy(alpha: f64) -> Result<Self, SketchError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(SketchError::InvalidParams(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let beta = Self::BETA_SINGLE;
        let group_size = (8.0 / (alpha * alpha)).ceil() as usize;
        let groups = (4.0 * (1.0 / beta).ln()).ceil() as usize;
        let params = Self {
            alpha,
            beta_single: beta,
            group_size,
            groups,
            width_bits: Self::DEFAULT_WIDTH,
        };
        params.validate()?;
        Ok(params)
    }

    /// Explicit shape, used for small advice experiments where `s = d * w`
    /// must stay in the hundreds of bits. The nominal accuracy becomes
    /// `sqrt(8 / d1)`.
    pub fn with_shape(group_size: usize, groups: usize, width_bits: u32) -> Result<Self, SketchError> {
        let params = Self {
            alpha: if group_size == 0 {
                f64::INFINITY
            } else {
                (8.0 / group_size as f64).sqrt()
            },
            beta_single: Self::BETA_SINGLE,
            group_size,
            groups,
            width_bits,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<(), SketchError> {
        if self.group_size == 0 || self.groups == 0 {
            return Err(SketchError::InvalidParams(format!(
                "counter count must be positive (d1 = {}, d2 = {})",
                self.group_size, self.groups
            )));
        }
        if !(8..=32).contains(&self.width_bits) {
            return Err(SketchError::InvalidParams(format!(
                "counter width must be in [8, 32] bits, got {}",
                self.width_bits
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta_single(&self) -> f64 {
        self.beta_single
    }

    /// `d1`, the number of squared counters averaged per group.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// `d2`, the number of groups the median is taken over.
    pub fn groups(&self) -> usize {
        self.groups
    }

    /// `d = d1 * d2`.
    pub fn counters(&self) -> usize {
        self.group_size * self.groups
    }

    pub fn width_bits(&self) -> u32 {
        self.width_bits
    }

    /// `s = d * w`, the bit length of the vector segment.
    pub fn vector_bits(&self) -> usize {
        self.counters() * self.width_bits as usize
    }
}

#[derive(Default)]
struct Scratch {
    rows: HashMap<u32, Box<[i8]>>,
    cached_bytes: usize,
    row: Vec<i8>,
    means: Vec<f64>,
}

/// Linear-state F2 sketch.
pub struct LinearSketch {
    seed: SketchSeed,
    key: u64,
    params: F2Params,
    domain: u32,
    counters: Vec<i32>,
    scratch: Scratch,
}

impl LinearSketch {
    /// Fresh sketch with an all-zero vector segment.
    pub fn new(params: F2Params, domain: u32, seed: SketchSeed) -> Result<Self, SketchError> {
        params.validate()?;
        if domain == 0 {
            return Err(SketchError::InvalidParams("domain must be non-empty".into()));
        }
        Ok(Self {
            key: seed.key(),
            seed,
            params,
            domain,
            counters: vec![0; params.counters()],
            scratch: Scratch::default(),
        })
    }

    pub fn seed(&self) -> &SketchSeed {
        &self.seed
    }

    pub fn params(&self) -> &F2Params {
        &self.params
    }

    pub fn domain(&self) -> u32 {
        self.domain
    }

    /// Counters as `w`-bit signed values.
    pub fn counters(&self) -> &[i32] {
        &self.counters
    }

    pub fn vector_bits(&self) -> usize {
        self.params.vector_bits()
    }

    pub fn is_zero(&self) -> bool {
        self.counters.iter().all(|&c| c == 0)
    }

    /// `sign_j(item)` for counter `j`. One keyed hash covers 64 counters.
    pub fn sign(&self, counter: usize, item: u32) -> i8 {
        let word = keyed_hash(self.key, item as u64, (counter / 64) as u64);
        1 - 2 * ((word >> (counter % 64)) & 1) as i8
    }

    pub fn update(&mut self, u: StreamUpdate) -> Result<(), SketchError> {
        if u.item == 0 || u.item > self.domain {
            return Err(SketchError::ItemOutOfDomain {
                item: u.item,
                domain: self.domain,
            });
        }
        if u.delta != 1 && u.delta != -1 {
            return Err(SketchError::InvalidDelta(u.delta));
        }
        let delta = u.delta as i32;
        let width = self.params.width_bits;
        let row = Self::sign_row(&mut self.scratch, self.key, self.counters.len(), u.item);
        if delta == 1 {
            for (c, &s) in self.counters.iter_mut().zip(row) {
                *c = c.wrapping_add(s as i32);
            }
        } else {
            for (c, &s) in self.counters.iter_mut().zip(row) {
                *c = c.wrapping_sub(s as i32);
            }
        }
        if width < 32 {
            let shift = 32 - width;
            for c in &mut self.counters {
                *c = (*c << shift) >> shift;
            }
        }
        Ok(())
    }

    fn sign_row(scratch: &mut Scratch, key: u64, d: usize, item: u32) -> &[i8] {
        let fill = |row: &mut [i8]| {
            for (block, chunk) in row.chunks_mut(64).enumerate() {
                let word = keyed_hash(key, item as u64, block as u64);
                for (bit, s) in chunk.iter_mut().enumerate() {
                    *s = 1 - 2 * ((word >> bit) & 1) as i8;
                }
            }
        };
        if !scratch.rows.contains_key(&item) && scratch.cached_bytes + d <= SIGN_CACHE_BYTES {
            let mut row = vec![0i8; d].into_boxed_slice();
            fill(&mut row);
            scratch.cached_bytes += d;
            scratch.rows.insert(item, row);
        }
        match scratch.rows.get(&item) {
            Some(row) => row,
            None => {
                scratch.row.resize(d, 0);
                fill(&mut scratch.row);
                &scratch.row
            }
        }
    }

    /// Median over groups of the mean squared counter.
    pub fn estimate(&mut self) -> f64 {
        let d1 = self.params.group_size;
        let means = &mut self.scratch.means;
        means.clear();
        means.extend(self.counters.chunks_exact(d1).map(|group| {
            let sum: f64 = group
                .iter()
                .map(|&c| {
                    let c = c as f64;
                    c * c
                })
                .sum();
            sum / d1 as f64
        }));
        median_in_place(means)
    }

    /// Counter-wise modular sum. Both sketches must share seed, shape and domain.
    pub fn merge(&self, other: &LinearSketch) -> Result<LinearSketch, SketchError> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &LinearSketch) -> Result<(), SketchError> {
        self.check_compatible(other)?;
        let shift = 32 - self.params.width_bits;
        for (a, &b) in self.counters.iter_mut().zip(&other.counters) {
            *a = (a.wrapping_add(b) << shift) >> shift;
        }
        Ok(())
    }

    fn check_compatible(&self, other: &LinearSketch) -> Result<(), SketchError> {
        if self.seed != other.seed {
            return Err(SketchError::Mismatch("seed segment"));
        }
        if self.params != other.params {
            return Err(SketchError::Mismatch("parameters"));
        }
        if self.domain != other.domain {
            return Err(SketchError::Mismatch("domain"));
        }
        Ok(())
    }

    fn locate(&self, index: usize) -> Result<(usize, u32), SketchError> {
        let bits = self.vector_bits();
        if index >= bits {
            return Err(SketchError::BitIndexOutOfRange { index, bits });
        }
        let w = self.params.width_bits as usize;
        Ok((index / w, (index % w) as u32))
    }

    /// Bit `index` of the canonical serialization: counter-major, little-endian
    /// within each `w`-bit counter.
    pub fn bit(&self, index: usize) -> Result<bool, SketchError> {
        let (counter, bit) = self.locate(index)?;
        Ok((self.counters[counter] as u32 >> bit) & 1 == 1)
    }

    pub fn set_bit(&mut self, index: usize, value: bool) -> Result<(), SketchError> {
        let (counter, bit) = self.locate(index)?;
        let raw = self.counters[counter] as u32;
        let raw = if value { raw | (1 << bit) } else { raw & !(1 << bit) };
        let shift = 32 - self.params.width_bits;
        self.counters[counter] = ((raw << shift) as i32) >> shift;
        Ok(())
    }

    /// Canonical vector segment as packed bytes; bit `i` lives in byte `i / 8`
    /// at position `i % 8`. Exactly `s` meaningful bits.
    pub fn vector_segment(&self) -> Vec<u8> {
        let bits = self.vector_bits();
        let mut out = vec![0u8; bits.div_ceil(8)];
        let w = self.params.width_bits as usize;
        for (j, &c) in self.counters.iter().enumerate() {
            let raw = c as u32;
            for b in 0..w {
                if (raw >> b) & 1 == 1 {
                    let i = j * w + b;
                    out[i / 8] |= 1 << (i % 8);
                }
            }
        }
        out
    }

    /// Inverse of [`vector_segment`](Self::vector_segment).
    pub fn load_vector_segment(&mut self, bytes: &[u8]) -> Result<(), SketchError> {
        let bits = self.vector_bits();
        if bytes.len() != bits.div_ceil(8) {
            return Err(SketchError::InvalidParams(format!(
                "expected {} bytes of vector segment, got {}",
                bits.div_ceil(8),
                bytes.len()
            )));
        }
        for i in 0..bits {
            self.set_bit(i, (bytes[i / 8] >> (i % 8)) & 1 == 1)?;
        }
        Ok(())
    }

    /// Zeroes the vector segment; the seed segment is untouched.
    pub fn reset(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = 0);
    }
}

impl Clone for LinearSketch {
    fn clone(&self) -> Self {
        Self {
            seed: self.seed.clone(),
            key: self.key,
            params: self.params,
            domain: self.domain,
            counters: self.counters.clone(),
            scratch: Scratch::default(),
        }
    }
}

/// Equality covers the seed and vector segments; scratch is ignored.
impl PartialEq for LinearSketch {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.params == other.params
            && self.domain == other.domain
            && self.counters == other.counters
    }
}

impl fmt::Debug for LinearSketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSketch")
            .field("seed", &self.seed)
            .field("params", &self.params)
            .field("domain", &self.domain)
            .field("counters", &self.counters.len())
            .finish()
    }
}

/// Median; for an even count, the mean of the two middle values.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sketch(alpha: f64, root: u64) -> LinearSketch {
        LinearSketch::new(F2Params::for_accuracy(alpha).unwrap(), 64, SketchSeed::new(root)).unwrap()
    }

    #[test]
    fn derived_shape() {
        let p = F2Params::for_accuracy(1.0).unwrap();
        assert_eq!(p.group_size(), 8);
        assert_eq!(p.groups(), 10);
        assert_eq!(F2Params::for_accuracy(0.1).unwrap().group_size(), 800);
        assert_eq!(p.vector_bits(), 80 * 32);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(F2Params::with_shape(0, 1, 32).is_err());
        assert!(F2Params::with_shape(4, 0, 32).is_err());
        assert!(F2Params::with_shape(4, 1, 7).is_err());
        assert!(F2Params::with_shape(4, 1, 33).is_err());
        assert!(F2Params::for_accuracy(0.0).is_err());
    }

    #[test]
    fn fresh_is_zero_and_estimates_zero() {
        let mut s = sketch(1.0, 1);
        assert!(s.is_zero());
        assert_eq!(s.estimate(), 0.0);
        assert!((0..s.vector_bits()).all(|i| !s.bit(i).unwrap()));
    }

    #[test]
    fn single_insert_every_counter_unit() {
        for root in 0..20 {
            let mut s = sketch(0.5, root);
            s.update(StreamUpdate::insert(17)).unwrap();
            assert!(s.counters().iter().all(|&c| c == 1 || c == -1));
            assert_eq!(s.estimate(), 1.0);
        }
    }

    #[test]
    fn insert_then_delete_cancels() {
        let mut s = sketch(0.5, 3);
        s.update(StreamUpdate::insert(5)).unwrap();
        s.update(StreamUpdate::delete(5)).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn out_of_domain_rejected() {
        let mut s = sketch(1.0, 0);
        assert!(matches!(
            s.update(StreamUpdate::insert(0)),
            Err(SketchError::ItemOutOfDomain { .. })
        ));
        assert!(s.update(StreamUpdate::insert(65)).is_err());
        let bad = StreamUpdate {
            item: 1,
            delta: 2,
            query: false,
        };
        assert_eq!(s.update(bad), Err(SketchError::InvalidDelta(2)));
    }

    #[test]
    fn cached_and_uncached_signs_agree() {
        let mut s = sketch(0.5, 9);
        let row: Vec<i8> = LinearSketch::sign_row(&mut s.scratch, s.key, s.counters.len(), 11).to_vec();
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, s.sign(j, 11));
        }
    }

    #[test]
    fn merge_identity_and_doubling() {
        let fresh = sketch(1.0, 4);
        let mut x = sketch(1.0, 4);
        x.update(StreamUpdate::insert(9)).unwrap();
        assert_eq!(fresh.merge(&x).unwrap(), x);
        let doubled = x.merge(&x).unwrap();
        for (d, c) in doubled.counters().iter().zip(x.counters()) {
            assert_eq!(*d, 2 * c);
        }
    }

    #[test]
    fn merge_rejects_mismatch() {
        let a = sketch(1.0, 1);
        let b = sketch(1.0, 2);
        assert_eq!(a.merge(&b), Err(SketchError::Mismatch("seed segment")));
        let c = LinearSketch::new(F2Params::for_accuracy(0.5).unwrap(), 64, SketchSeed::new(1)).unwrap();
        assert_eq!(a.merge(&c), Err(SketchError::Mismatch("parameters")));
    }

    #[test]
    fn narrow_counters_wrap() {
        let p = F2Params::with_shape(2, 1, 8).unwrap();
        let mut s = LinearSketch::new(p, 4, SketchSeed::new(0)).unwrap();
        for _ in 0..200 {
            s.update(StreamUpdate::insert(1)).unwrap();
        }
        for (j, &c) in s.counters().iter().enumerate() {
            let truth = 200 * s.sign(j, 1) as i32;
            assert_eq!(c, (truth as i8) as i32);
        }
    }

    #[test]
    fn bit_round_trip() {
        let mut s = sketch(1.0, 5);
        s.update(StreamUpdate::insert(3)).unwrap();
        for i in [0, 1, 31, 32, 100, s.vector_bits() - 1] {
            for v in [true, false] {
                s.set_bit(i, v).unwrap();
                assert_eq!(s.bit(i).unwrap(), v);
            }
        }
        assert!(s.bit(s.vector_bits()).is_err());
        assert!(s.set_bit(s.vector_bits(), true).is_err());
    }

    #[test]
    fn bit_layout_is_little_endian_counter_major() {
        let p = F2Params::with_shape(2, 1, 8).unwrap();
        let mut s = LinearSketch::new(p, 4, SketchSeed::new(0)).unwrap();
        s.set_bit(8, true).unwrap();
        s.set_bit(9, true).unwrap();
        assert_eq!(s.counters(), &[0, 3]);
        s.set_bit(7, true).unwrap();
        assert_eq!(s.counters(), &[-128, 3]);
        assert_eq!(s.vector_segment(), vec![0x80, 0x03]);
    }

    #[test]
    fn segment_transfer_reconstructs() {
        let mut a = sketch(1.0, 8);
        for item in [1, 2, 2, 40] {
            a.update(StreamUpdate::insert(item)).unwrap();
        }
        let mut b = sketch(1.0, 8);
        for i in 0..a.vector_bits() {
            b.set_bit(i, a.bit(i).unwrap()).unwrap();
        }
        assert_eq!(a, b);
        let mut c = sketch(1.0, 8);
        c.load_vector_segment(&a.vector_segment()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_in_place(&mut []), 0.0);
    }
}
