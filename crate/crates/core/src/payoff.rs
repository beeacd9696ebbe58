//! Named initial functions used by configs and test suites.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Grid, GridFunction};

/// A function of x, applied to |x| or the first coordinate as noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Constant { value: f64 },
    /// Σ slope·xᵢ.
    Linear { slope: f64 },
    /// |x|.
    Abs,
    /// min(|x|, cap).
    CappedAbs { cap: f64 },
    /// cos(freq·x₀), or the product over axes in 2D.
    Cos { freq: f64 },
    Sin { freq: f64 },
    /// |x|².
    Square,
    NegSquare,
    NegAbs,
}

impl Payoff {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            Payoff::Constant { value } => value,
            Payoff::Linear { slope } => slope * x.iter().sum::<f64>(),
            Payoff::Abs => norm2.sqrt(),
            Payoff::CappedAbs { cap } => norm2.sqrt().min(cap),
            Payoff::Cos { freq } => x.iter().map(|v| (freq * v).cos()).product(),
            Payoff::Sin { freq } => x.iter().map(|v| (freq * v).sin()).product(),
            Payoff::Square => norm2,
            Payoff::NegSquare => -norm2,
            Payoff::NegAbs => -norm2.sqrt(),
        }
    }

    pub fn sample(&self, grid: Arc<Grid>) -> Result<GridFunction> {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Global Lipschitz constant in the Euclidean norm, if finite.
    pub fn lipschitz(&self, dim: usize) -> Option<f64> {
        match *self {
            Payoff::Constant { .. } => Some(0.0),
            Payoff::Linear { slope } => Some(slope.abs() * (dim as f64).sqrt()),
            Payoff::Abs | Payoff::NegAbs | Payoff::CappedAbs { .. } => Some(1.0),
            Payoff::Cos { freq } | Payoff::Sin { freq } => Some(freq.abs() * (dim as f64).sqrt()),
            Payoff::Square | Payoff::NegSquare => None,
        }
    }

    /// Sup norm over the whole space, if finite.
    pub fn sup_bound(&self) -> Option<f64> {
        match *self {
            Payoff::Constant { value } => Some(value.abs()),
            Payoff::Cos { .. } | Payoff::Sin { .. } => Some(1.0),
            Payoff::CappedAbs { cap } => Some(cap.abs()),
            _ => None,
        }
    }
}
