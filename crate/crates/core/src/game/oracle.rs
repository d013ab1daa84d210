use serde::Serialize;

use super::{pseudo_gradient, validate_assumptions, GameDefinition, StrategyProfile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    /// Fixed stepsize; when `None` one is derived from `mu` and `L`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            gamma: None,
            tol: 1e-12,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    #[serde(skip)]
    pub x: StrategyProfile,
    /// `|x - P_X[x - gamma F(x)]|` at the returned point's predecessor.
    pub residual: f64,
    pub iterations: usize,
    pub gamma: f64,
}

/// Centralized reference equilibrium: iterates `x <- P_X[x - gamma F(x)]`
/// from the projected origin until the fixed-point residual drops below
/// `tol`.
///
/// Default stepsize is `2/(mu + L)` for symmetric affine pseudo-gradients
/// (gradient of a strongly convex potential) and `0.9 * 2 mu / L^2`
/// otherwise.
pub fn solve_ne_oracle(game: &GameDefinition, opts: &OracleOptions) -> Result<OracleSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(
            "oracle tolerance must be positive".into(),
        ));
    }
    let gamma = match opts.gamma {
        Some(g) if g > 0.0 && g.is_finite() => g,
        Some(g) => {
            return Err(Error::InvalidParameter(format!(
                "oracle stepsize {g} must be positive"
            )))
        }
        None => default_stepsize(game)?,
    };

    let mut x = game.project(&StrategyProfile::zeros(&game.dims()))?;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let f = pseudo_gradient(game, &x)?;
        let trial = x.with_stacked(x.stacked() - f * gamma)?;
        let next = game.project(&trial)?;
        residual = (next.stacked() - x.stacked()).norm();
        if !residual.is_finite() {
            return Err(Error::NonFiniteDetected { iteration: it });
        }
        x = next;
        if residual <= opts.tol {
            return Ok(OracleSolution {
                x,
                residual,
                iterations: it,
                gamma,
            });
        }
    }
    Err(Error::MaxIterExceeded {
        max_iter: opts.max_iter,
        residual,
    })
}

fn default_stepsize(game: &GameDefinition) -> Result<f64> {
    let (mu, lip, symmetric) = match game.affine_form() {
        Some(spec) => (
            spec.monotonicity_modulus(),
            spec.lipschitz(),
            spec.is_symmetric(),
        ),
        None => {
            let report = validate_assumptions(game, 64, 0)?;
            (report.mu, report.lipschitz, false)
        }
    };
    if !(mu > 0.0) || !(lip > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cannot pick an oracle stepsize: mu = {mu:.3e}, L = {lip:.3e}"
        )));
    }
    Ok(if symmetric {
        2.0 / (mu + lip)
    } else {
        0.9 * 2.0 * mu / (lip * lip)
    })
}
