//! Independent reference solvers shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use trades_core::projection::ConvexSet;

/// Polyhedron `{w : a_e w = b_e, a_i w <= b_i}` kept in raw form so the
/// reference solver never touches the library's projection code.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    pub dim: usize,
    pub eq: Vec<(DVector<f64>, f64)>,
    pub ineq: Vec<(DVector<f64>, f64)>,
}

impl Polyhedron {
    pub fn residual(&self, w: &DVector<f64>) -> f64 {
        let e = self.eq.iter().map(|(a, b)| (a.dot(w) - b).abs());
        let i = self.ineq.iter().map(|(a, b)| (a.dot(w) - b).max(0.0));
        e.chain(i).fold(0.0, f64::max)
    }
}

/// Exact projection onto a small polyhedron by enumerating active sets:
/// for every subset of inequalities, solve the equality-constrained problem
/// `min |w - v|^2 / 2` through its KKT system and keep the candidate that is
/// primal feasible with nonnegative inequality multipliers.
pub fn active_set_projection(poly: &Polyhedron, v: &DVector<f64>) -> DVector<f64> {
    let m = poly.ineq.len();
    assert!(
        m <= 16,
        "enumeration is exponential in the number of inequalities"
    );
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<&(DVector<f64>, f64)> = poly
            .eq
            .iter()
            .chain(
                (0..m)
                    .filter(|k| mask & (1 << k) != 0)
                    .map(|k| &poly.ineq[k]),
            )
            .collect();
        let (w, lambda) = if rows.is_empty() {
            (v.clone(), DVector::zeros(0))
        } else {
            let a = DMatrix::from_fn(rows.len(), poly.dim, |r, c| rows[r].0[c]);
            let b = DVector::from_fn(rows.len(), |r, _| rows[r].1);
            // Multipliers of the least-norm correction: A A' lambda = A v - b.
            let gram = &a * a.transpose();
            let Ok(lambda) = gram.clone().svd(true, true).solve(&(&a * v - &b), 1e-12) else {
                continue;
            };
            let w = v - a.transpose() * &lambda;
            if (&a * &w - &b).amax() > 1e-9 {
                continue;
            }
            (w, lambda)
        };
        let n_eq = poly.eq.len();
        let dual_ok = lambda.iter().skip(n_eq).all(|&l| l >= -1e-10);
        if !dual_ok || poly.residual(&w) > 1e-9 {
            continue;
        }
        let dist = (&w - v).norm();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, w));
        }
    }
    best.expect("nonempty polyhedron has a KKT point").1
}

/// Random nonempty polyhedron in 2 to 4 dimensions: a box around the origin,
/// up to one hyperplane and up to three halfspaces, all passing near a
/// common interior point.
pub fn random_polyhedron(rng: &mut impl Rng) -> (Polyhedron, ConvexSet) {
    let dim = rng.random_range(2..=4);
    let half: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
    let anchor = DVector::from_fn(dim, |i, _| rng.random_range(-0.5..0.5) * half[i]);
    let unit = |rng: &mut _| {
        let a = DVector::from_fn(dim, |_, _| gaussian(rng));
        &a / a.norm()
    };
    let mut poly = Polyhedron {
        dim,
        eq: Vec::new(),
        ineq: Vec::new(),
    };
    for (i, &h) in half.iter().enumerate() {
        let e = DVector::from_fn(dim, |k, _| if k == i { 1.0 } else { 0.0 });
        poly.ineq.push((e.clone(), h));
        poly.ineq.push((-e, h));
    }
    let mut members = vec![ConvexSet::boxed(
        DVector::from_iterator(dim, half.iter().map(|h| -h)),
        DVector::from_column_slice(&half),
    )
    .unwrap()];
    if rng.random_bool(0.5) {
        let a = unit(rng);
        let b = a.dot(&anchor);
        poly.eq.push((a.clone(), b));
        members.push(ConvexSet::hyperplane(a, b).unwrap());
    }
    for _ in 0..rng.random_range(1..=3) {
        let a = unit(rng);
        let b = a.dot(&anchor) + rng.random_range(0.0..0.5);
        poly.ineq.push((a.clone(), b));
        members.push(ConvexSet::halfspace(a, b).unwrap());
    }
    (poly, ConvexSet::intersection(members).unwrap())
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller keeps this module free of distribution crates.
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Charger set data as plain numbers, mirroring the documented model: plugged
/// active powers sum to `-target`, `p <= 0`, `p = 0` while unplugged, `q = 0`
/// while unplugged unless `q_free`, and `p^2 + q^2 <= s^2` per slot. Vectors
/// are `(p_0..p_T-1, q_0..q_T-1)`.
#[derive(Debug, Clone)]
pub struct EvSet {
    pub plugged: Vec<bool>,
    pub target: f64,
    pub s: f64,
    pub q_free: bool,
}

const ACTIVE: f64 = 1e-7;

impl EvSet {
    pub fn primal_residual(&self, w: &[f64]) -> f64 {
        let t = self.plugged.len();
        let mut res: f64 = 0.0;
        let mut energy = 0.0;
        for k in 0..t {
            let (p, q) = (w[k], w[t + k]);
            res = res.max(p.max(0.0)).max((p.hypot(q) - self.s).max(0.0));
            if self.plugged[k] {
                energy += p;
            } else {
                res = res.max(p.abs());
                if !self.q_free {
                    res = res.max(q.abs());
                }
            }
        }
        if self.plugged.iter().any(|&a| a) {
            res = res.max((energy + self.target).abs());
        }
        res
    }

    /// Largest violation of the KKT conditions of `min |w - v|^2 / 2` over
    /// the set at `w`: primal feasibility plus the distance of `v - w` from
    /// the normal cone at `w`, minimized over the charge multiplier.
    pub fn kkt_residual(&self, v: &[f64], w: &[f64]) -> f64 {
        let t = self.plugged.len();
        let s = self.s;
        let r: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
        let mut fixed: f64 = 0.0;
        for k in (0..t).filter(|&k| !self.plugged[k]) {
            // p is pinned, so r_p is unconstrained.
            if self.q_free {
                let q = w[t + k];
                fixed = fixed.max(if q.abs() < s - ACTIVE {
                    r[t + k].abs()
                } else {
                    (-r[t + k] * q.signum()).max(0.0)
                });
            }
        }
        let slots: Vec<usize> = (0..t).filter(|&k| self.plugged[k]).collect();
        let cone_gap = |lambda: f64| -> f64 {
            slots
                .iter()
                .map(|&k| {
                    let (p, q) = (w[k], w[t + k]);
                    let g = [r[k] - lambda, r[t + k]];
                    let mut gens: Vec<[f64; 2]> = Vec::new();
                    if p > -ACTIVE {
                        gens.push([1.0, 0.0]);
                    }
                    if p.hypot(q) > s - ACTIVE {
                        gens.push([p / s, q / s]);
                    }
                    cone_distance(g, &gens)
                })
                .fold(0.0, f64::max)
        };
        let stationarity = if slots.is_empty() {
            0.0
        } else {
            // The multiplier can exceed every residual entry (a lone plugged
            // slot has |lambda| up to |r_q| |p| / |q| beyond r_p), so widen
            // the bracket until the minimizer sits inside it.
            let mut span = r.iter().map(|x| x.abs()).fold(0.0, f64::max) + 1.0;
            loop {
                let (gap, at) = golden_min(cone_gap, -span, span);
                if at.abs() < 0.9 * span || span > 1e12 {
                    break gap;
                }
                span *= 4.0;
            }
        };
        self.primal_residual(w).max(fixed).max(stationarity)
    }
}

/// Distance from `g` to the cone generated by at most two vectors.
fn cone_distance(g: [f64; 2], gens: &[[f64; 2]]) -> f64 {
    let norm = |a: [f64; 2]| a[0].hypot(a[1]);
    let mut best = norm(g);
    for a in gens {
        let c = (g[0] * a[0] + g[1] * a[1]) / (a[0] * a[0] + a[1] * a[1]);
        if c >= 0.0 {
            best = best.min(norm([g[0] - c * a[0], g[1] - c * a[1]]));
        }
    }
    if let [a, b] = gens {
        let det = a[0] * b[1] - a[1] * b[0];
        if det.abs() > 1e-12 {
            let ca = (g[0] * b[1] - g[1] * b[0]) / det;
            let cb = (a[0] * g[1] - a[1] * g[0]) / det;
            if ca >= 0.0 && cb >= 0.0 {
                best = 0.0;
            }
        }
    }
    best
}

/// Minimum of a unimodal function on `[lo, hi]` and where it is attained.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (fa, a)
    } else {
        (fb, b)
    }
}

/// Random charger: overnight-ish plug window, target up to 90% of capacity.
pub fn random_ev_set(rng: &mut impl Rng, t: usize, s: f64) -> EvSet {
    let start = rng.random_range(0..t);
    let len = rng.random_range(1..=t);
    let plugged: Vec<bool> = (0..t).map(|k| (k + t - start) % t < len).collect();
    let cap = s * len as f64;
    EvSet {
        plugged,
        target: rng.random_range(0.0..0.9) * cap,
        s,
        q_free: rng.random_bool(0.5),
    }
}
