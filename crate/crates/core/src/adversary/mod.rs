//! Adversaries for both games.
//!
//! An ASA adversary emits one `(update, query flag)` pair at a time and sees
//! every response. An ASBI adversary commits a whole stream up front and,
//! after each response, may replace the unprocessed suffix.

mod j0;
mod oblivious;
mod script;
mod suffix_switch;

pub use j0::{j0_attack, FixedAnswerSampler, J0AttackError, J0Outcome, J0Query};
pub use oblivious::{evenly_spaced_query, ObliviousAdversary, ObliviousParams};
pub use script::{Script, ScriptError, ScriptedAdversary};
pub use suffix_switch::{ProbeSchedule, SuffixSwitchAdversary, SuffixSwitchConfig};

use crate::sketch::StreamUpdate;

pub trait AsaAdversary {
    /// Next update; `None` ends the stream.
    fn next_update(&mut self) -> Option<StreamUpdate>;

    /// Response to the most recent query-flagged update.
    fn observe(&mut self, response: f64);
}

pub trait AsbiAdversary {
    /// The full stream, exactly `len` updates.
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate>;

    /// Called after step `step` (1-based). `Some(suffix)` is an interruption
    /// replacing steps `step + 1 ..= len`.
    fn react(&mut self, step: usize, response: f64) -> Option<Vec<StreamUpdate>>;
}

impl<A: AsaAdversary + ?Sized> AsaAdversary for &mut A {
    fn next_update(&mut self) -> Option<StreamUpdate> {
        (**self).next_update()
    }

    fn observe(&mut self, response: f64) {
        (**self).observe(response)
    }
}

impl<A: AsbiAdversary + ?Sized> AsbiAdversary for &mut A {
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate> {
        (**self).commit(len)
    }

    fn react(&mut self, step: usize, response: f64) -> Option<Vec<StreamUpdate>> {
        (**self).react(step, response)
    }
}

/// Cuts the response channel: the wrapped adversary only ever sees zeros.
pub struct Severed<A>(pub A);

impl<A: AsaAdversary> AsaAdversary for Severed<A> {
    fn next_update(&mut self) -> Option<StreamUpdate> {
        self.0.next_update()
    }

    fn observe(&mut self, _response: f64) {
        self.0.observe(0.0)
    }
}

impl<A: AsbiAdversary> AsbiAdversary for Severed<A> {
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate> {
        self.0.commit(len)
    }

    fn react(&mut self, step: usize, _response: f64) -> Option<Vec<StreamUpdate>> {
        self.0.react(step, 0.0)
    }
}
