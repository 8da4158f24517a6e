//! Adversarially robust streaming: linear F2 sketches, an exponential
//! mechanism private median, the advice-based wrapper, sketch switching
//! under bounded interruptions, and the adversaries that play against them.

pub mod adversary;
pub mod asa;
pub mod asbi;
pub mod batch;
pub mod dp;
pub mod game;
pub mod seed;
pub mod sketch;
pub mod truth;

pub use asa::{AsaConfig, AsaTranscript, RobustAdvice};
pub use asbi::{AsbiConfig, AsbiTranscript, RobustInterruptions, UnprotectedSketch};
pub use game::GameError;
pub use seed::SketchSeed;
pub use sketch::{F2Params, LinearSketch, StreamUpdate};
