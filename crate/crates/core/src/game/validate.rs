use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{local_operator_unchecked, pseudo_gradient, GameDefinition, StrategyProfile};
use crate::error::{Error, Result};

/// Largest accepted `|P(P(v)) - P(v)|` on sampled points.
pub const IDEMPOTENCE_TOL: f64 = 1e-10;

/// Outcome of checking the standing assumptions on a game.
///
/// For games whose pseudo-gradient is affine, `mu` and `lipschitz` are exact
/// (to eigensolver precision). Otherwise they are sampled bounds: `mu` is the
/// smallest observed monotonicity ratio and the `beta_*` fields are the
/// largest observed difference quotients.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub mu: f64,
    pub mu_exact: bool,
    /// Sampled monotonicity lower bound, reported even when `mu` is exact.
    pub mu_sampled: f64,
    pub lipschitz: f64,
    pub lipschitz_exact: bool,
    /// Bound on the total derivative of `J_i(x_i, phi_i(x_i)/N + y)`.
    pub beta_total: f64,
    pub beta_own: f64,
    pub beta_aggregate: f64,
    pub beta_rule: f64,
    /// Largest `|P(P(v)) - P(v)|` over sampled `v`.
    pub projector_idempotence: f64,
    pub samples: usize,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_assumptions(
    game: &GameDefinition,
    sample_budget: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if sample_budget < 2 {
        return Err(Error::InvalidParameter(
            "sample_budget must be at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |n: usize| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let dims = game.dims();
    let n = game.total_dim();
    let d = game.aggregate_dim();
    let nf = game.n_agents() as f64;
    let mut violations = Vec::new();

    let mut mu_sampled = f64::INFINITY;
    let mut lip_sampled: f64 = 0.0;
    for _ in 0..sample_budget {
        let x = StrategyProfile::new(gaussian(n), &dims)?;
        let y = StrategyProfile::new(gaussian(n), &dims)?;
        let diff = x.stacked() - y.stacked();
        let dist2 = diff.norm_squared();
        if dist2 == 0.0 {
            continue;
        }
        let df = pseudo_gradient(game, &x)? - pseudo_gradient(game, &y)?;
        mu_sampled = mu_sampled.min(df.dot(&diff) / dist2);
        lip_sampled = lip_sampled.max(df.norm() / dist2.sqrt());
    }

    let (mut beta_total, mut beta_own, mut beta_aggregate, mut beta_rule) =
        (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut idempotence: f64 = 0.0;
    for k in 0..sample_budget {
        let i = k % game.n_agents();
        let p = game.player(i);
        let ni = dims[i];
        let (xa, xb) = (gaussian(ni), gaussian(ni));
        let (ya, yb) = (gaussian(d), gaussian(d));
        let dist = (&xa - &xb).norm().hypot((&ya - &yb).norm());
        if dist > 0.0 {
            let sa = p.aggregation.eval(xa.as_slice()) / nf + &ya;
            let sb = p.aggregation.eval(xb.as_slice()) / nf + &yb;
            let ta = local_operator_unchecked(game, i, xa.as_slice(), sa.as_slice());
            let tb = local_operator_unchecked(game, i, xb.as_slice(), sb.as_slice());
            beta_total = beta_total.max((ta - tb).norm() / dist);
            let ga = p.cost.grad_own(xa.as_slice(), ya.as_slice());
            let gb = p.cost.grad_own(xb.as_slice(), yb.as_slice());
            beta_own = beta_own.max((ga - gb).norm() / dist);
            let ha = p.cost.grad_aggregate(xa.as_slice(), ya.as_slice());
            let hb = p.cost.grad_aggregate(xb.as_slice(), yb.as_slice());
            beta_aggregate = beta_aggregate.max((ha - hb).norm() / dist);
        }
        let dx = (&xa - &xb).norm();
        if dx > 0.0 {
            let ratio =
                (p.aggregation.eval(xa.as_slice()) - p.aggregation.eval(xb.as_slice())).norm() / dx;
            beta_rule = beta_rule.max(ratio);
            if let Some(bound) = p.aggregation.lipschitz_bound() {
                if ratio > bound * (1.0 + 1e-9) + 1e-12 {
                    violations.push(format!(
                        "agent {i}: aggregation rule exceeds its declared Lipschitz bound ({ratio:.3e} > {bound:.3e})"
                    ));
                }
            }
        }
        let once = p.projector.project(xa.as_slice())?;
        let twice = p.projector.project(once.as_slice())?;
        idempotence = idempotence.max((twice - once).norm());
    }

    let (mu, mu_exact, lipschitz, lipschitz_exact) = match game.affine_form() {
        Some(spec) => (spec.monotonicity_modulus(), true, spec.lipschitz(), true),
        None => (mu_sampled, false, lip_sampled, false),
    };

    if !(mu > 0.0) {
        violations.push(format!(
            "pseudo-gradient is not strongly monotone (mu = {mu:.3e})"
        ));
    }
    if !(lipschitz.is_finite() && beta_total.is_finite() && beta_aggregate.is_finite()) {
        violations.push("non-finite Lipschitz estimate".into());
    }
    if idempotence > IDEMPOTENCE_TOL {
        violations.push(format!(
            "projector not idempotent (defect {idempotence:.3e})"
        ));
    }

    Ok(AssumptionReport {
        mu,
        mu_exact,
        mu_sampled,
        lipschitz,
        lipschitz_exact,
        beta_total,
        beta_own,
        beta_aggregate,
        beta_rule,
        projector_idempotence: idempotence,
        samples: sample_budget,
        violations,
    })
}
