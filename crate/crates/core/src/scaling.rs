//! Least-squares power-law fits `y ≈ A·xᵖ` in log-log coordinates.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("a power-law fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("x and y lengths differ")]
    LengthMismatch,
    #[error("log-log fit needs positive finite data (point {0})")]
    NonPositive(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub slope: f64,
    /// `ln A`.
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerFit, ScalingError> {
    if xs.len() != ys.len() {
        return Err(ScalingError::LengthMismatch);
    }
    if xs.len() < 3 {
        return Err(ScalingError::TooFewPoints(xs.len()));
    }
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        if !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(ScalingError::NonPositive(i));
        }
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerFit { slope, intercept, r2, points: xs.len() })
}
