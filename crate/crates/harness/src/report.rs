//! Space accounting: the theoretical `k` and `eps0` next to the desk-scale
//! overrides, and the measured vector-segment bits of live copies.

use std::fmt::{self, Write as _};

use robust_stream::asa::{theoretical_copy_count, AsaConfig, RobustAdvice, MAX_COPIES};
use robust_stream::asbi::{AsbiAlgorithm, AsbiConfig, RobustInterruptions};
use robust_stream::dp::{derive_eps0, PrivacyBudget};
use robust_stream::SketchSeed;
use serde::Serialize;

use crate::HarnessError;

/// Parameters of the headline theoretical evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoryPoint {
    pub eta: u64,
    pub s: u64,
    pub m: u64,
    pub beta: f64,
    pub alpha: f64,
    pub c_k: f64,
    pub epsilon: f64,
}

impl Default for TheoryPoint {
    fn default() -> Self {
        Self {
            eta: 1,
            s: 256,
            m: 1_000_000,
            beta: 0.01,
            alpha: 0.1,
            c_k: 1.0,
            epsilon: PrivacyBudget::DEFAULT_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryRow {
    pub point: TheoryPoint,
    /// `c_k eta s ln(m/beta) ln^2(m/(beta alpha))`, unrounded.
    pub k: f64,
    pub delta: f64,
    /// `epsilon / sqrt(8 eta k s ln(1/delta))` at `k = ceil(k)`.
    pub eps0: f64,
    pub exceeds_desk_scale: bool,
}

impl TheoryRow {
    pub fn evaluate(point: TheoryPoint) -> Result<Self, HarnessError> {
        let k = theoretical_copy_count(point.eta, point.s, point.m, point.beta, point.alpha, point.c_k);
        let delta = PrivacyBudget::default_delta(point.epsilon, point.beta, point.m);
        let eps0 = derive_eps0(point.epsilon, delta, point.eta, k.ceil() as u64, point.s)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Self {
            point,
            k,
            delta,
            eps0,
            exceeds_desk_scale: k > MAX_COPIES as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsaRow {
    pub eta: u64,
    pub k: usize,
    pub s: usize,
    pub eps0: f64,
    pub advice_bits_per_loop: u64,
    pub queries_per_loop: u64,
    /// Measured bits across the active, next and shadow banks.
    pub space_bits: usize,
    pub theory: TheoryRow,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsbiRow {
    pub r: usize,
    pub s: usize,
    /// Measured bits across all `2R` copies.
    pub space_bits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceReport {
    pub asa: Vec<AsaRow>,
    pub asbi: Vec<AsbiRow>,
    pub headline: TheoryRow,
}

pub const ASA_SWEEP: [u64; 3] = [1, 2, 4];
pub const ASBI_SWEEP: [usize; 4] = [1, 2, 4, 8];

/// The advice configuration used at desk scale: `k = 30`, `eps0 = 0.3`.
pub fn desk_asa() -> AsaConfig {
    AsaConfig::with_overrides(2000, 512, 4, 0.5, 256, 30, 0.3).expect("valid desk config")
}

pub fn desk_asbi() -> AsbiConfig {
    AsbiConfig::new(4, 5000, 0.3, 512).expect("valid desk config")
}

fn cfg_err(e: impl fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Sweeps `eta` over [`ASA_SWEEP`] at the overrides of `asa`, and `R` over
/// [`ASBI_SWEEP`] at the sketch shape of `asbi`.
pub fn space_report(asa: &AsaConfig, asbi: &AsbiConfig) -> Result<SpaceReport, HarnessError> {
    let seed = SketchSeed::new(0).child("space-report");
    let mut asa_rows = Vec::new();
    for eta in ASA_SWEEP {
        let config = AsaConfig {
            eta,
            ..asa.clone()
        };
        let algo = RobustAdvice::new(config.clone(), seed.clone()).map_err(cfg_err)?;
        let k = algo.copies();
        let s = config.vector_bits();
        let theory = TheoryRow::evaluate(TheoryPoint {
            eta,
            s: s as u64,
            m: config.stream_len as u64,
            beta: config.beta,
            alpha: config.alpha,
            ..TheoryPoint::default()
        })?;
        asa_rows.push(AsaRow {
            eta,
            k,
            s,
            eps0: algo.eps0(),
            advice_bits_per_loop: (k * s) as u64,
            queries_per_loop: config.queries_per_loop().map_err(cfg_err)?,
            space_bits: algo.space_bits(),
            theory,
        });
    }
    let mut asbi_rows = Vec::new();
    for r in ASBI_SWEEP {
        let config = AsbiConfig {
            interruptions: r,
            ..asbi.clone()
        };
        let algo = RobustInterruptions::new(config.clone(), seed.clone()).map_err(cfg_err)?;
        let measured = algo
            .answer_copies()
            .iter()
            .chain(algo.check_copies())
            .map(|c| c.vector_bits())
            .sum();
        debug_assert_eq!(measured, algo.space_bits());
        asbi_rows.push(AsbiRow {
            r,
            s: config.sketch.vector_bits(),
            space_bits: measured,
        });
    }
    Ok(SpaceReport {
        asa: asa_rows,
        asbi: asbi_rows,
        headline: TheoryRow::evaluate(TheoryPoint::default())?,
    })
}

impl SpaceReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "ASA (advice), desk overrides vs theory");
        let _ = writeln!(
            w,
            "{:>4} {:>6} {:>8} {:>8} {:>12} {:>14} {:>12} {:>12} {:>12}",
            "eta", "k", "s", "eps0", "advice/loop", "queries/loop", "space bits", "theory k", "theory eps0"
        );
        for r in &self.asa {
            let _ = writeln!(
                w,
                "{:>4} {:>6} {:>8} {:>8.3} {:>12} {:>14} {:>12} {:>12.4e} {:>12.4e}",
                r.eta,
                r.k,
                r.s,
                r.eps0,
                r.advice_bits_per_loop,
                r.queries_per_loop,
                r.space_bits,
                r.theory.k,
                r.theory.eps0
            );
        }
        let _ = writeln!(w);
        let _ = writeln!(w, "ASBI (interruptions)");
        let _ = writeln!(w, "{:>4} {:>8} {:>12}", "R", "s", "space bits");
        for r in &self.asbi {
            let _ = writeln!(w, "{:>4} {:>8} {:>12}", r.r, r.s, r.space_bits);
        }
        let h = &self.headline;
        let _ = writeln!(w);
        let _ = writeln!(
            w,
            "theory at eta={} s={} m={} beta={} alpha={}: k = {:.6e}, eps0 = {:.6e}{}",
            h.point.eta,
            h.point.s,
            h.point.m,
            h.point.beta,
            h.point.alpha,
            h.k,
            h.eps0,
            if h.exceeds_desk_scale {
                format!("  [exceeds desk scale: k > {MAX_COPIES}]")
            } else {
                String::new()
            }
        );
        out
    }
}
