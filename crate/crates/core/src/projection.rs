//! Euclidean projections onto the convex sets that make up local strategy
//! domains, plus Dykstra's algorithm for their intersections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_DYKSTRA_TOL: f64 = 1e-10;
pub const DEFAULT_DYKSTRA_MAX_SWEEPS: usize = 5000;

/// Residual below which an intersection is accepted as nonempty.
const CERTIFY_TOL: f64 = 1e-8;
/// Cyclic residual above which a stalled Dykstra run is declared infeasible.
const STAGNATION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetKind {
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `{v : normal . v = offset}`
    Hyperplane {
        normal: DVector<f64>,
        offset: f64,
    },
    /// `{v : normal . v <= offset}`
    Halfspace {
        normal: DVector<f64>,
        offset: f64,
    },
    /// Each listed coordinate pair `(i, j)` must satisfy `v_i^2 + v_j^2 <= radius^2`.
    DiskPairs {
        dim: usize,
        pairs: Vec<(usize, usize)>,
        radius: f64,
    },
    Intersection(Vec<ConvexSet>),
}

/// A closed convex set. Constructors enforce the shape invariants; in
/// particular an intersection is only built once Dykstra has found a point
/// in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConvexSet {
    kind: SetKind,
}

impl ConvexSet {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidSet("box requires lower <= upper".into()));
        }
        Ok(Self {
            kind: SetKind::Box { lower, upper },
        })
    }

    pub fn hyperplane(normal: DVector<f64>, offset: f64) -> Result<Self> {
        Self::check_normal(&normal, offset)?;
        Ok(Self {
            kind: SetKind::Hyperplane { normal, offset },
        })
    }

    pub fn halfspace(normal: DVector<f64>, offset: f64) -> Result<Self> {
        Self::check_normal(&normal, offset)?;
        Ok(Self {
            kind: SetKind::Halfspace { normal, offset },
        })
    }

    pub fn disk_pairs(dim: usize, pairs: Vec<(usize, usize)>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSet("disk radius must be positive".into()));
        }
        let mut seen = vec![false; dim];
        for &(i, j) in &pairs {
            if i >= dim || j >= dim || i == j || seen[i] || seen[j] {
                return Err(Error::InvalidSet(format!(
                    "disk pair ({i}, {j}) is out of range or overlaps another pair"
                )));
            }
            seen[i] = true;
            seen[j] = true;
        }
        Ok(Self {
            kind: SetKind::DiskPairs { dim, pairs, radius },
        })
    }

    /// Builds an intersection and certifies it is nonempty by projecting the
    /// origin with Dykstra. Nested intersections are flattened.
    pub fn intersection(members: Vec<ConvexSet>) -> Result<Self> {
        let mut flat = Vec::with_capacity(members.len());
        for m in members {
            match m.kind {
                SetKind::Intersection(inner) => flat.extend(inner),
                _ => flat.push(m),
            }
        }
        let Some(first) = flat.first() else {
            return Err(Error::InvalidSet(
                "intersection needs at least one member".into(),
            ));
        };
        let dim = first.dim();
        for m in &flat {
            check_dim("intersection member", dim, m.dim())?;
        }
        let origin = DVector::zeros(dim);
        let residual = match dykstra(
            &flat,
            &origin,
            DEFAULT_DYKSTRA_TOL,
            DEFAULT_DYKSTRA_MAX_SWEEPS,
            true,
        ) {
            Ok(w) => max_residual(&flat, w.as_slice()),
            Err(Error::MaxSweepsExceeded { residual, .. }) => residual,
            Err(e) => return Err(e),
        };
        if residual > CERTIFY_TOL {
            return Err(Error::InfeasibleSpec(format!(
                "intersection not certified nonempty (residual {residual:.3e})"
            )));
        }
        Ok(Self {
            kind: SetKind::Intersection(flat),
        })
    }

    fn check_normal(normal: &DVector<f64>, offset: f64) -> Result<()> {
        if normal.norm() == 0.0
            || !offset.is_finite()
            || !crate::linalg::all_finite(normal.as_slice())
        {
            return Err(Error::InvalidSet(
                "normal vector must be nonzero and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::Box { lower, .. } => lower.len(),
            SetKind::Hyperplane { normal, .. } | SetKind::Halfspace { normal, .. } => normal.len(),
            SetKind::DiskPairs { dim, .. } => *dim,
            SetKind::Intersection(m) => m[0].dim(),
        }
    }

    pub fn is_box(&self) -> bool {
        matches!(self.kind, SetKind::Box { .. })
    }

    /// Largest constraint violation of `v`, measured as a distance for every
    /// primitive. Zero means `v` is in the set.
    pub fn membership_residual(&self, v: &[f64]) -> f64 {
        match &self.kind {
            SetKind::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(x, (l, u))| (l - x).max(x - u).max(0.0))
                .fold(0.0, f64::max),
            SetKind::Hyperplane { normal, offset } => {
                (dot(normal.as_slice(), v) - offset).abs() / normal.norm()
            }
            SetKind::Halfspace { normal, offset } => {
                (dot(normal.as_slice(), v) - offset).max(0.0) / normal.norm()
            }
            SetKind::DiskPairs { pairs, radius, .. } => pairs
                .iter()
                .map(|&(i, j)| (v[i].hypot(v[j]) - radius).max(0.0))
                .fold(0.0, f64::max),
            SetKind::Intersection(members) => max_residual(members, v),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_residual(members: &[ConvexSet], v: &[f64]) -> f64 {
    members
        .iter()
        .map(|m| m.membership_residual(v))
        .fold(0.0, f64::max)
}

/// Closed-form projection onto a primitive set.
pub fn project_primitive(set: &ConvexSet, v: &[f64]) -> Result<DVector<f64>> {
    check_dim("projection input", set.dim(), v.len())?;
    let mut out = DVector::from_column_slice(v);
    project_primitive_in_place(set, &mut out)?;
    Ok(out)
}

fn project_primitive_in_place(set: &ConvexSet, v: &mut DVector<f64>) -> Result<()> {
    match &set.kind {
        SetKind::Box { lower, upper } => {
            for ((x, l), u) in v.iter_mut().zip(lower.iter()).zip(upper.iter()) {
                *x = x.clamp(*l, *u);
            }
        }
        SetKind::Hyperplane { normal, offset } => {
            let excess = normal.dot(v) - offset;
            v.axpy(-excess / normal.norm_squared(), normal, 1.0);
        }
        SetKind::Halfspace { normal, offset } => {
            let excess = normal.dot(v) - offset;
            if excess > 0.0 {
                v.axpy(-excess / normal.norm_squared(), normal, 1.0);
            }
        }
        SetKind::DiskPairs { pairs, radius, .. } => {
            for &(i, j) in pairs {
                let r = v[i].hypot(v[j]);
                if r > *radius {
                    let s = radius / r;
                    v[i] *= s;
                    v[j] *= s;
                }
            }
        }
        SetKind::Intersection(_) => {
            return Err(Error::InvalidSet(
                "project_primitive called on an intersection".into(),
            ))
        }
    }
    Ok(())
}

/// Dykstra's alternating projection onto an intersection.
///
/// Stops once a full sweep changes neither the iterate nor any correction by
/// more than `tol` and the iterate lies in every member to within `10 * tol`.
/// The iterate alone can stall for several sweeps while the corrections are
/// still moving, so both are checked.
pub fn project_dykstra(
    set: &ConvexSet,
    v: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<DVector<f64>> {
    check_dim("projection input", set.dim(), v.len())?;
    match &set.kind {
        SetKind::Intersection(members) => dykstra(
            members,
            &DVector::from_column_slice(v),
            tol,
            max_sweeps,
            false,
        ),
        _ => Err(Error::InvalidSet(
            "project_dykstra expects an intersection".into(),
        )),
    }
}

fn dykstra(
    members: &[ConvexSet],
    v: &DVector<f64>,
    tol: f64,
    max_sweeps: usize,
    detect_empty: bool,
) -> Result<DVector<f64>> {
    if let [single] = members {
        return project_primitive(single, v.as_slice());
    }
    let n = v.len();
    let mut x = v.clone();
    let mut corrections = vec![DVector::<f64>::zeros(n); members.len()];
    let mut prev = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(n);
    let mut checkpoint_residual = f64::INFINITY;

    for sweep in 1..=max_sweeps {
        prev.copy_from(&x);
        let mut shifted: f64 = 0.0;
        for (set, p) in members.iter().zip(corrections.iter_mut()) {
            y.copy_from(&x);
            y += &*p;
            x.copy_from(&y);
            project_primitive_in_place(set, &mut x)?;
            // y - x is the new correction.
            let mut change = 0.0;
            for ((pk, yk), xk) in p.iter_mut().zip(y.iter()).zip(x.iter()) {
                let next = yk - xk;
                change += (next - *pk) * (next - *pk);
                *pk = next;
            }
            shifted = shifted.max(change.sqrt());
        }
        if !crate::linalg::all_finite(x.as_slice()) {
            return Err(Error::NonFiniteDetected { iteration: sweep });
        }
        let moved = (&x - &prev).norm();
        if moved <= tol && shifted <= tol {
            let residual = max_residual(members, x.as_slice());
            if residual <= 10.0 * tol {
                return Ok(x);
            }
        }
        if detect_empty && sweep % 100 == 0 {
            let residual = max_residual(members, x.as_slice());
            if sweep >= 200 && residual > STAGNATION_FLOOR && residual > 0.99 * checkpoint_residual
            {
                return Err(Error::EmptyIntersectionSuspected { residual });
            }
            checkpoint_residual = residual;
        }
    }
    let residual = max_residual(members, x.as_slice());
    Err(Error::MaxSweepsExceeded {
        sweeps: max_sweeps,
        residual,
        best: x,
    })
}

/// Projection operator onto one agent's feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSetProjector {
    pub set: ConvexSet,
    pub dykstra_tol: f64,
    pub dykstra_max_sweeps: usize,
    /// Present for EV charger sets; enables the exact fallback when Dykstra
    /// runs out of sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev_layout: Option<EvLayout>,
}

impl FeasibleSetProjector {
    pub fn new(set: ConvexSet) -> Self {
        Self {
            set,
            dykstra_tol: DEFAULT_DYKSTRA_TOL,
            dykstra_max_sweeps: DEFAULT_DYKSTRA_MAX_SWEEPS,
            ev_layout: None,
        }
    }

    /// Unconstrained `R^dim`, represented as an infinite box.
    pub fn unconstrained(dim: usize) -> Self {
        let set = ConvexSet::boxed(
            DVector::from_element(dim, f64::NEG_INFINITY),
            DVector::from_element(dim, f64::INFINITY),
        )
        .expect("infinite box is valid");
        Self::new(set)
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn project(&self, v: &[f64]) -> Result<DVector<f64>> {
        match self.set.kind() {
            SetKind::Intersection(_) => {
                match project_dykstra(&self.set, v, self.dykstra_tol, self.dykstra_max_sweeps) {
                    Err(
                        Error::MaxSweepsExceeded { .. } | Error::EmptyIntersectionSuspected { .. },
                    ) if self.ev_layout.is_some() => self.ev_layout.as_ref().unwrap().project(v),
                    other => other,
                }
            }
            _ => project_primitive(&self.set, v),
        }
    }

    pub fn membership_residual(&self, v: &[f64]) -> f64 {
        self.set.membership_residual(v)
    }
}

/// Feasible set of one EV charger over `T` slots, acting on `(p, q)` in
/// `R^{2T}`: the plugged-in active powers sum to `-target`, active power is
/// never injected (`p <= 0`), `p = 0` while unplugged, and each slot stays
/// within the apparent-power disk of radius `s_max`. When
/// `reactive_always_on` is false, `q` is also pinned to zero while unplugged.
pub fn build_ev_projector_with(
    plugged: &[bool],
    target: f64,
    s_max: f64,
    reactive_always_on: bool,
) -> Result<FeasibleSetProjector> {
    let t = plugged.len();
    if t == 0 {
        return Err(Error::InvalidParameter("empty charging horizon".into()));
    }
    if !(s_max > 0.0) || !(target >= 0.0) || !target.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need s_max > 0 and target >= 0 (got {s_max}, {target})"
        )));
    }
    let slots = plugged.iter().filter(|&&a| a).count();
    if s_max * (slots as f64) < target {
        return Err(Error::InfeasibleSpec(format!(
            "recharge target {target} exceeds {slots} plugged slots at {s_max}"
        )));
    }

    let mut members = Vec::with_capacity(3);
    if slots > 0 {
        let normal = DVector::from_fn(2 * t, |k, _| if k < t && plugged[k] { 1.0 } else { 0.0 });
        members.push(ConvexSet::hyperplane(normal, -target)?);
    }
    let q_free = |slot: usize| reactive_always_on || plugged[slot];
    let lower = DVector::from_fn(2 * t, |k, _| match (k < t, k % t) {
        (true, s) if plugged[s] => f64::NEG_INFINITY,
        (false, s) if q_free(s) => f64::NEG_INFINITY,
        _ => 0.0,
    });
    let upper = DVector::from_fn(2 * t, |k, _| match (k < t, k % t) {
        (false, s) if q_free(s) => f64::INFINITY,
        _ => 0.0,
    });
    members.push(ConvexSet::boxed(lower, upper)?);
    members.push(ConvexSet::disk_pairs(
        2 * t,
        (0..t).map(|k| (k, t + k)).collect(),
        s_max,
    )?);
    let mut projector = FeasibleSetProjector::new(ConvexSet::intersection(members)?);
    projector.ev_layout = Some(EvLayout {
        plugged: plugged.to_vec(),
        target,
        s_max,
        reactive_always_on,
    });
    Ok(projector)
}

/// Parameters of an EV charger set, kept so the set can also be projected
/// exactly.
///
/// Dykstra needs on the order of `|v| / s_max` sweeps when `v` lies far
/// outside the disks (the iterate barely moves while the corrections drift),
/// so inputs at a much larger scale than the set can exhaust the sweep budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvLayout {
    pub plugged: Vec<bool>,
    pub target: f64,
    pub s_max: f64,
    pub reactive_always_on: bool,
}

impl EvLayout {
    /// Exact projection by bisection on the multiplier `lambda` of the
    /// charge equality: each plugged slot projects `(v_p - lambda, v_q)` onto
    /// the half disk `{p <= 0, p^2 + q^2 <= s_max^2}` and the summed active
    /// power is nonincreasing in `lambda`.
    pub fn project(&self, v: &[f64]) -> Result<DVector<f64>> {
        let t = self.plugged.len();
        check_dim("projection input", 2 * t, v.len())?;
        let s = self.s_max;
        let mut out = DVector::zeros(2 * t);
        for k in 0..t {
            if !self.plugged[k] && self.reactive_always_on {
                out[t + k] = v[t + k].clamp(-s, s);
            }
        }
        let slots: Vec<usize> = (0..t).filter(|&k| self.plugged[k]).collect();
        if slots.is_empty() {
            return Ok(out);
        }
        let half_disk = |u: f64, w: f64| -> (f64, f64) {
            if u > 0.0 {
                (0.0, w.clamp(-s, s))
            } else {
                let r = u.hypot(w);
                if r > s {
                    (u * s / r, w * s / r)
                } else {
                    (u, w)
                }
            }
        };
        let total = |lambda: f64| -> f64 {
            slots
                .iter()
                .map(|&k| half_disk(v[k] - lambda, v[t + k]).0)
                .sum()
        };

        let capacity = s * slots.len() as f64;
        if self.target >= capacity * (1.0 - 4.0 * f64::EPSILON) {
            // Only p = -s_max, q = 0 reaches the target.
            for &k in &slots {
                out[k] = -s;
            }
            return Ok(out);
        }
        let goal = -self.target;
        let mut lo = slots.iter().map(|&k| v[k]).fold(f64::INFINITY, f64::min) - 1.0;
        let mut step = 1.0_f64.max(s);
        let mut hi = lo + step;
        while total(hi) > goal {
            step *= 2.0;
            hi = lo + step;
            if !hi.is_finite() {
                return Err(Error::InfeasibleSpec(
                    "EV multiplier search diverged".into(),
                ));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if total(mid) > goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        for &k in &slots {
            let (p, q) = half_disk(v[k] - lambda, v[t + k]);
            out[k] = p;
            out[t + k] = q;
        }
        Ok(out)
    }
}

pub fn build_ev_projector(
    plugged: &[bool],
    target: f64,
    s_max: f64,
) -> Result<FeasibleSetProjector> {
    build_ev_projector_with(plugged, target, s_max, true)
}
