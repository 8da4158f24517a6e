//! Shared game plumbing: errors and transcript number formatting.

use thiserror::Error;

use crate::asa::AsaError;
use crate::asbi::AsbiError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    /// The adversary broke the game rules (budget, suffix length, domain).
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Asa(#[from] AsaError),
    #[error(transparent)]
    Asbi(#[from] AsbiError),
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn fmt_opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}
