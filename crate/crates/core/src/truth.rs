//! Exact ground truth kept by the game harness, outside any space bound.

use crate::sketch::StreamUpdate;

#[derive(Clone, Debug)]
pub struct FrequencyVector {
    freq: Vec<i64>,
    f2: i64,
    support: usize,
}

impl FrequencyVector {
    pub fn new(domain: u32) -> Self {
        Self {
            freq: vec![0; domain as usize + 1],
            f2: 0,
            support: 0,
        }
    }

    pub fn apply(&mut self, u: &StreamUpdate) {
        let f = &mut self.freq[u.item as usize];
        let old = *f;
        *f += u.delta as i64;
        self.f2 += *f * *f - old * old;
        match (old == 0, *f == 0) {
            (true, false) => self.support += 1,
            (false, true) => self.support -= 1,
            _ => {}
        }
    }

    pub fn f2(&self) -> i64 {
        self.f2
    }

    pub fn frequency(&self, item: u32) -> i64 {
        self.freq[item as usize]
    }

    pub fn support_len(&self) -> usize {
        self.support
    }

    pub fn frequencies(&self) -> &[i64] {
        &self.freq[1..]
    }
}

/// `|z - truth| / truth`, with `0/0 = 0` and `z/0 = inf` for `z != 0`.
pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((estimate - truth) / truth).abs()
    }
}
