//! Exponential-mechanism private median and privacy-budget arithmetic.
//!
//! The median mechanism works over a fixed [`ValueGrid`]. Inputs are rounded
//! to their nearest grid point, every grid point `x` gets quality
//! `q(S, x) = min(#{y <= x}, #{y >= x})` (sensitivity one), and `x` is drawn
//! with probability proportional to `exp(eps0 * q / 2)`. Probabilities are
//! computed exactly with a log-sum-exp shift and sampled by inverse CDF.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("private median needs at least one value")]
    EmptyValues,
    #[error("value grid is empty")]
    EmptyGrid,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite input value {0}")]
    NonFiniteValue(f64),
    #[error("parameter {name} = {value} violates {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

fn require(cond: bool, name: &'static str, value: f64, constraint: &'static str) -> Result<(), DpError> {
    if cond {
        Ok(())
    } else {
        Err(DpError::InvalidParameter {
            name,
            value,
            constraint,
        })
    }
}

/// Sorted, de-duplicated output range of the private median.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    points: Vec<f64>,
}

impl ValueGrid {
    /// `{±n^c (1+ratio)^-j} ∪ {0}` for `j = 0..=J`, where `J` is the first
    /// power that reaches `1/n^c`. Every magnitude in `[1/n^c, n^c]` is
    /// within a factor `1 + ratio` of some grid point.
    pub fn geometric(domain: u32, exponent: f64, ratio: f64) -> Result<Self, DpError> {
        require(domain >= 2, "domain", domain as f64, "n >= 2")?;
        require(exponent > 0.0 && exponent.is_finite(), "exponent", exponent, "c > 0")?;
        require(ratio > 0.0 && ratio.is_finite(), "ratio", ratio, "alpha > 0")?;
        let log_top = exponent * (domain as f64).ln();
        let steps = (2.0 * log_top / ratio.ln_1p()).ceil() as usize;
        let base = 1.0 + ratio;
        let top = (domain as f64).powf(exponent);
        let positives: Vec<f64> = (0..=steps).rev().map(|j| top * base.powi(-(j as i32))).collect();
        let mut points: Vec<f64> = positives.iter().rev().map(|p| -p).collect();
        points.push(0.0);
        points.extend(positives);
        Ok(Self { points })
    }

    pub fn from_points(mut points: Vec<f64>) -> Result<Self, DpError> {
        if points.is_empty() {
            return Err(DpError::EmptyGrid);
        }
        if let Some(&bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(DpError::InvalidGrid(format!("non-finite point {bad}")));
        }
        points.sort_by(|a, b| a.total_cmp(b));
        points.dedup();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest grid point; exact midpoints go to the smaller
    /// magnitude. Values beyond the ends clamp.
    pub fn nearest_index(&self, value: f64) -> usize {
        let p = &self.points;
        let hi = p.partition_point(|&x| x < value);
        if hi == 0 {
            return 0;
        }
        if hi == p.len() {
            return p.len() - 1;
        }
        let lo = hi - 1;
        let (dl, dh) = (value - p[lo], p[hi] - value);
        if dl < dh {
            lo
        } else if dh < dl {
            hi
        } else if p[lo].abs() <= p[hi].abs() {
            lo
        } else {
            hi
        }
    }

    pub fn round(&self, value: f64) -> f64 {
        self.points[self.nearest_index(value)]
    }
}

/// `q(S, x)` for every grid point, after rounding `S` onto the grid.
pub fn median_quality(values: &[f64], grid: &ValueGrid) -> Result<Vec<u64>, DpError> {
    if grid.is_empty() {
        return Err(DpError::EmptyGrid);
    }
    if values.is_empty() {
        return Err(DpError::EmptyValues);
    }
    let mut hist = vec![0u64; grid.len()];
    for &v in values {
        if !v.is_finite() {
            return Err(DpError::NonFiniteValue(v));
        }
        hist[grid.nearest_index(v)] += 1;
    }
    let total = values.len() as u64;
    let mut below = 0u64;
    Ok(hist
        .iter()
        .map(|&h| {
            let above = total - below;
            below += h;
            below.min(above)
        })
        .collect())
}

/// Exact output distribution of [`private_med`]. `eps0 = +inf` selects
/// uniformly among the maximisers of `q`, i.e. the grid medians.
pub fn exp_mech_distribution(values: &[f64], grid: &ValueGrid, eps0: f64) -> Result<Vec<f64>, DpError> {
    require(eps0 > 0.0 && !eps0.is_nan(), "eps0", eps0, "eps0 > 0")?;
    let quality = median_quality(values, grid)?;
    if eps0.is_infinite() {
        let best = *quality.iter().max().expect("grid is non-empty");
        let winners = quality.iter().filter(|&&q| q == best).count() as f64;
        return Ok(quality
            .iter()
            .map(|&q| if q == best { 1.0 / winners } else { 0.0 })
            .collect());
    }
    let logits: Vec<f64> = quality.iter().map(|&q| 0.5 * eps0 * q as f64).collect();
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - shift).exp()).collect();
    let norm: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / norm).collect())
}

/// Samples an approximate median of `values` from `grid` with the
/// exponential mechanism at privacy `eps0`.
pub fn private_med<R: Rng + ?Sized>(
    values: &[f64],
    grid: &ValueGrid,
    eps0: f64,
    rng: &mut R,
) -> Result<f64, DpError> {
    let probs = exp_mech_distribution(values, grid, eps0)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return Ok(grid.points()[i]);
        }
    }
    Ok(grid.points()[last])
}

/// `max(0, |S|/2 - min(#{y <= x}, #{y >= x}))` on the raw values.
pub fn rank_error(values: &[f64], x: f64) -> f64 {
    let below = values.iter().filter(|&&y| y <= x).count();
    let above = values.iter().filter(|&&y| y >= x).count();
    (values.len() as f64 / 2.0 - below.min(above) as f64).max(0.0)
}

/// Explicit utility bound `(2 / eps0) ln(|grid| / beta)`.
pub fn median_error_bound(eps0: f64, grid_len: usize, beta: f64) -> f64 {
    2.0 / eps0 * (grid_len as f64 / beta).ln()
}

/// `eps / sqrt(8 * eta * k * s * ln(1/delta))`.
pub fn derive_eps0(epsilon: f64, delta: f64, eta: u64, k: u64, s: u64) -> Result<f64, DpError> {
    require(epsilon > 0.0 && epsilon.is_finite(), "epsilon", epsilon, "epsilon > 0")?;
    require(delta > 0.0 && delta < 1.0, "delta", delta, "0 < delta < 1")?;
    for (name, v) in [("eta", eta), ("k", k), ("s", s)] {
        require(v >= 1, name, v as f64, ">= 1")?;
    }
    let mechanisms = eta as f64 * k as f64 * s as f64;
    Ok(epsilon / (8.0 * mechanisms * (1.0 / delta).ln()).sqrt())
}

/// Advanced composition: `sqrt(2k ln(1/delta')) * eps + 2k eps^2`.
pub fn compose_epsilon(k_mechs: u64, eps0: f64, delta_prime: f64) -> Result<f64, DpError> {
    require(k_mechs >= 1, "k", k_mechs as f64, "k >= 1")?;
    require(eps0 > 0.0 && eps0 <= 1.0, "eps0", eps0, "0 < eps0 <= 1")?;
    require(
        delta_prime > 0.0 && delta_prime <= 1.0,
        "delta_prime",
        delta_prime,
        "0 < delta' <= 1",
    )?;
    let k = k_mechs as f64;
    Ok((2.0 * k * (1.0 / delta_prime).ln()).sqrt() * eps0 + 2.0 * k * eps0 * eps0)
}

/// Per-outer-loop privacy accounting of the advice wrapper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub eps0: f64,
    pub mechanisms_per_loop: u64,
}

impl PrivacyBudget {
    pub const DEFAULT_EPSILON: f64 = 0.01;

    /// Derives `eps0` from `(epsilon, delta)` for `eta * k * s` mechanisms.
    pub fn derive(epsilon: f64, delta: f64, eta: u64, k: u64, s: u64) -> Result<Self, DpError> {
        Ok(Self {
            epsilon,
            delta,
            eps0: derive_eps0(epsilon, delta, eta, k, s)?,
            mechanisms_per_loop: eta * k * s,
        })
    }

    /// `delta = epsilon * beta / (2m)`.
    pub fn default_delta(epsilon: f64, beta: f64, m: u64) -> f64 {
        epsilon * beta / (2.0 * m as f64)
    }

    /// Composed epsilon over one loop at `delta' = delta`.
    pub fn composed_epsilon(&self) -> Result<f64, DpError> {
        compose_epsilon(self.mechanisms_per_loop, self.eps0, self.delta)
    }
}
