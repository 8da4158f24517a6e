//! The support-recovery attack on J0 samplers.
//!
//! Insert every element of a secret set `Y` once, then `T` times: query the
//! sampler, delete whatever it returned. A correct sampler hands back all of
//! `Y`, which a small-space sampler cannot afford to remember.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::sketch::J0Sampler;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum J0AttackError {
    #[error("|Y| = {got} but T = {t}")]
    SizeMismatch { got: usize, t: usize },
    #[error("domain {domain} smaller than 4T = {needed}")]
    DomainTooSmall { domain: u32, needed: usize },
    #[error("item {0} outside domain or repeated in Y")]
    BadItem(u32),
}

/// One query of the attack: what the sampler said and whether it was live.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct J0Query {
    pub answer: Option<u32>,
    pub live: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct J0Outcome {
    pub queries: Vec<J0Query>,
    pub recovered: BTreeSet<u32>,
    pub success: bool,
    /// First query (1-based) answered with an element outside the live
    /// support, or not answered at all.
    pub violation_step: Option<usize>,
}

/// Runs the attack. With `advice` set, a sampler that asks for advice gets
/// one fresh random bit before every query.
pub fn j0_attack<S, R>(
    sampler: &mut S,
    t: usize,
    y: &[u32],
    domain: u32,
    mut advice: Option<&mut R>,
) -> Result<J0Outcome, J0AttackError>
where
    S: J0Sampler + ?Sized,
    R: Rng + ?Sized,
{
    if y.len() != t {
        return Err(J0AttackError::SizeMismatch { got: y.len(), t });
    }
    if (domain as usize) < 4 * t {
        return Err(J0AttackError::DomainTooSmall {
            domain,
            needed: 4 * t,
        });
    }
    let mut live = BTreeSet::new();
    for &x in y {
        if x == 0 || x > domain || !live.insert(x) {
            return Err(J0AttackError::BadItem(x));
        }
    }
    for &x in y {
        sampler.update(x, 1);
    }
    let mut recovered = BTreeSet::new();
    let mut violation_step = None;
    let mut queries = Vec::with_capacity(t);
    for step in 1..=t {
        if let Some(rng) = advice.as_deref_mut() {
            if sampler.wants_advice() {
                sampler.advise(rng.random());
            }
        }
        let answer = sampler.sample();
        let ok = match answer {
            Some(x) => {
                let ok = live.remove(&x);
                recovered.insert(x);
                sampler.update(x, -1);
                ok
            }
            None => false,
        };
        if !ok {
            violation_step.get_or_insert(step);
        }
        queries.push(J0Query { answer, live: ok });
    }
    let success = violation_step.is_none() && recovered.len() == t && y.iter().all(|x| recovered.contains(x));
    Ok(J0Outcome {
        queries,
        recovered,
        success,
        violation_step,
    })
}

/// Degenerate sampler that always answers the same element.
#[derive(Clone, Debug)]
pub struct FixedAnswerSampler(pub u32);

impl J0Sampler for FixedAnswerSampler {
    fn update(&mut self, _item: u32, _delta: i64) {}

    fn sample(&mut self) -> Option<u32> {
        Some(self.0)
    }
}
