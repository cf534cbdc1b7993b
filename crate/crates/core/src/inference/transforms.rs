//! Maps between natural parameter values and the unconstrained scale used by
//! the optimizer and the sampler.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    /// `u = log x` for `x > 0`.
    Log,
    /// `u = log((1 + x) / (1 - x))`, inverse `x = tanh(u / 2)`, for `|x| < 1`.
    StationaryLogit,
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::StationaryLogit => "stationary-logit",
        }
    }

    pub fn to_unconstrained(&self, x: f64) -> Result<f64> {
        match self {
            Transform::Identity if x.is_finite() => Ok(x),
            Transform::Log if x > 0.0 && x.is_finite() => Ok(x.ln()),
            Transform::StationaryLogit if x.abs() < 1.0 => Ok(((1.0 + x) / (1.0 - x)).ln()),
            _ => Err(Error::Domain(format!("value {x} is outside the domain of the {} transform", self.name()))),
        }
    }

    pub fn to_natural(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::StationaryLogit => (0.5 * u).tanh(),
        }
    }

    /// `dx/du` evaluated at the unconstrained value `u`.
    pub fn jacobian(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => u.exp(),
            Transform::StationaryLogit => {
                let x = (0.5 * u).tanh();
                0.5 * (1.0 - x * x)
            }
        }
    }
}

pub fn to_unconstrained(theta: &[f64], transforms: &[Transform]) -> Result<Vec<f64>> {
    check_len(theta.len(), transforms.len())?;
    theta.iter().zip(transforms).map(|(&x, t)| t.to_unconstrained(x)).collect()
}

pub fn to_natural(u: &[f64], transforms: &[Transform]) -> Result<Vec<f64>> {
    check_len(u.len(), transforms.len())?;
    Ok(u.iter().zip(transforms).map(|(&x, t)| t.to_natural(x)).collect())
}

/// Converts a natural-scale gradient to the unconstrained scale.
pub fn chain_rule(grad_natural: &[f64], u: &[f64], transforms: &[Transform]) -> Vec<f64> {
    grad_natural.iter().zip(u).zip(transforms).map(|((g, &x), t)| g * t.jacobian(x)).collect()
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Input(format!("{a} parameter values for {b} transforms")))
    }
}
