//! Probe-and-amplify attacker for the interruption game.
//!
//! The committed stream inserts one anchor item and then probes items in
//! pairs `+a, -a`. The jump in the response across `+a` reveals how strongly
//! `a` lines up with the sketch's current counters. At an interruption the
//! attacker swaps in a suffix that first inserts (or deletes) the probed
//! items in proportion to how much they inflate the estimate relative to the
//! true F2, then resumes probing fresh items.

use rand::seq::SliceRandom;

use super::AsbiAdversary;
use crate::seed::SketchSeed;
use crate::sketch::StreamUpdate;
use crate::truth::{relative_error, FrequencyVector};

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeSchedule {
    Never,
    /// Interrupt at exactly these steps (budget permitting).
    At(Vec<usize>),
    /// Interrupt as soon as a round has collected `probes_per_round` probes.
    AfterProbes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuffixSwitchConfig {
    pub domain: u32,
    pub interruptions: usize,
    pub probes_per_round: usize,
    /// Interrupt whenever the response is off from the true F2 by more than
    /// this relative amount. `f64::INFINITY` disables the trigger.
    pub threshold: f64,
    pub schedule: ProbeSchedule,
    /// Update weight per standard deviation of probe score.
    pub gain: f64,
    /// Cap on `|weight|` per item and round.
    pub max_weight: u32,
}

impl SuffixSwitchConfig {
    pub fn scheduled(domain: u32, interruptions: usize) -> Self {
        Self {
            domain,
            interruptions,
            probes_per_round: 256,
            threshold: f64::INFINITY,
            schedule: ProbeSchedule::AfterProbes,
            gain: 0.6,
            max_weight: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Anchor,
    ProbeUp(u32),
    ProbeDown,
    Apply,
}

const ANCHOR: u32 = 1;

pub struct SuffixSwitchAdversary {
    config: SuffixSwitchConfig,
    order: Vec<u32>,
    cursor: usize,
    len: usize,
    stream: Vec<StreamUpdate>,
    roles: Vec<Role>,
    truth: FrequencyVector,
    last_response: f64,
    scores: Vec<(u32, f64)>,
    used: usize,
}

impl SuffixSwitchAdversary {
    pub fn new(config: SuffixSwitchConfig, seed: &SketchSeed) -> Self {
        let mut order: Vec<u32> = (ANCHOR + 1..=config.domain).collect();
        order.shuffle(&mut seed.child("suffix-switch").rng());
        let truth = FrequencyVector::new(config.domain);
        Self {
            config,
            order,
            cursor: 0,
            len: 0,
            stream: Vec::new(),
            roles: Vec::new(),
            truth,
            last_response: 0.0,
            scores: Vec::new(),
            used: 0,
        }
    }

    pub fn interruptions_used(&self) -> usize {
        self.used
    }

    fn push(&mut self, u: StreamUpdate, role: Role) {
        self.stream.push(u);
        self.roles.push(role);
    }

    /// Probe pairs until the stream reaches `len`.
    fn fill_with_probes(&mut self) {
        while self.stream.len() < self.len {
            if self.order.is_empty() {
                self.push(StreamUpdate::insert(ANCHOR), Role::Apply);
                continue;
            }
            let a = self.order[self.cursor % self.order.len()];
            self.cursor += 1;
            self.push(StreamUpdate::insert(a), Role::ProbeUp(a));
            if self.stream.len() < self.len {
                self.push(StreamUpdate::delete(a), Role::ProbeDown);
            }
        }
    }

    /// Items weighted by their normalised score, strongest first.
    fn amplify(&mut self) {
        let scores = std::mem::take(&mut self.scores);
        let n = scores.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = scores.iter().map(|s| s.1).sum::<f64>() / n;
        let sd = (scores.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd.is_nan() || sd <= 0.0 {
            return;
        }
        let mut ranked = scores;
        ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        let cap = self.config.max_weight as f64;
        for (item, g) in ranked {
            let w = (self.config.gain * g / sd).round().clamp(-cap, cap);
            let u = if w > 0.0 {
                StreamUpdate::insert(item)
            } else {
                StreamUpdate::delete(item)
            };
            for _ in 0..w.abs() as usize {
                if self.stream.len() >= self.len {
                    return;
                }
                self.push(u, Role::Apply);
            }
        }
    }

    fn triggered(&self, step: usize, response: f64) -> bool {
        if relative_error(response, self.truth.f2() as f64) > self.config.threshold {
            return true;
        }
        match &self.config.schedule {
            ProbeSchedule::Never => false,
            ProbeSchedule::At(steps) => steps.contains(&step),
            ProbeSchedule::AfterProbes => {
                self.roles[step - 1] == Role::ProbeDown
                    && self.scores.len() >= self.config.probes_per_round
            }
        }
    }
}

impl AsbiAdversary for SuffixSwitchAdversary {
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate> {
        self.len = len;
        self.stream.clear();
        self.roles.clear();
        if len > 0 {
            self.push(StreamUpdate::insert(ANCHOR), Role::Anchor);
        }
        self.fill_with_probes();
        self.stream.clone()
    }

    fn react(&mut self, step: usize, response: f64) -> Option<Vec<StreamUpdate>> {
        let u = self.stream[step - 1];
        let before = self.last_response;
        let f2_before = self.truth.f2() as f64;
        if let Role::ProbeUp(a) = self.roles[step - 1] {
            let ratio = if f2_before > 0.0 { before / f2_before } else { 1.0 };
            let grad = (response - before - 1.0) - 2.0 * ratio * self.truth.frequency(a) as f64;
            self.scores.push((a, grad));
        }
        self.truth.apply(&u);
        self.last_response = response;
        if self.used >= self.config.interruptions || step >= self.len || !self.triggered(step, response) {
            return None;
        }
        self.used += 1;
        self.stream.truncate(step);
        self.roles.truncate(step);
        self.amplify();
        self.fill_with_probes();
        Some(self.stream[step..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_blind(adv: &mut SuffixSwitchAdversary, len: usize) -> Vec<usize> {
        adv.commit(len);
        (1..=len)
            .filter(|&i| adv.react(i, 0.0).is_some())
            .collect()
    }

    #[test]
    fn infinite_threshold_never_interrupts() {
        let mut config = SuffixSwitchConfig::scheduled(64, 4);
        config.schedule = ProbeSchedule::Never;
        let mut adv = SuffixSwitchAdversary::new(config, &SketchSeed::new(1));
        let stream = adv.commit(101);
        assert_eq!(stream.len(), 101);
        assert_eq!(stream[0], StreamUpdate::insert(ANCHOR));
        assert_eq!(stream[1].item, stream[2].item);
        assert_eq!(stream[2].delta, -1);
        for i in 1..=101 {
            assert_eq!(adv.react(i, 1e9), None);
        }
    }

    #[test]
    fn scheduled_points_are_honoured() {
        let mut config = SuffixSwitchConfig::scheduled(64, 3);
        config.schedule = ProbeSchedule::At(vec![10, 20, 30, 40]);
        let mut adv = SuffixSwitchAdversary::new(config, &SketchSeed::new(2));
        assert_eq!(run_blind(&mut adv, 100), vec![10, 20, 30]);
    }

    #[test]
    fn suffix_fills_the_stream() {
        let mut config = SuffixSwitchConfig::scheduled(64, 2);
        config.probes_per_round = 8;
        let mut adv = SuffixSwitchAdversary::new(config, &SketchSeed::new(3));
        adv.commit(60);
        let mut z = 1.0;
        for i in 1..=60 {
            z += (i % 7) as f64 - 2.5;
            if let Some(s) = adv.react(i, z) {
                assert_eq!(s.len(), 60 - i);
            }
        }
        assert_eq!(adv.interruptions_used(), 2);
    }
}
