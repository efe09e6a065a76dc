//! Finite orbit segments and the boundary value operator.
//!
//! A homoclinic orbit is approximated by a segment `x_J`, `J = [n_-, n_+]`,
//! solving the dynamics equations `x_{n+1} = f(x_n, λ)` for
//! `n = n_-..n_+ - 1` together with k boundary rows: either periodic
//! (`x_{n_-} = x_{n_+}`) or projection conditions pinning the left endpoint
//! to the unstable subspace and the right endpoint to the stable subspace
//! of the fixed point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BorderedSystem;
use crate::map::{hyperbolic_splitting, HyperbolicSplitting, ParameterizedMap};

/// Boundary condition attached to a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Periodic,
    Projection,
}

/// A finite orbit segment on `J = [n_minus, n_plus]` at parameter λ.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegment {
    pub n_minus: i64,
    pub n_plus: i64,
    pub lambda: f64,
    pub points: Vec<DVector<f64>>,
    pub bc: BoundaryKind,
    /// Sup-norm of the boundary value operator, recorded after a solve.
    pub residual: f64,
}

impl OrbitSegment {
    pub fn new(
        n_minus: i64,
        n_plus: i64,
        lambda: f64,
        points: Vec<DVector<f64>>,
        bc: BoundaryKind,
    ) -> Self {
        assert!(n_minus < 0 && 0 < n_plus, "interval must straddle 0");
        assert_eq!(points.len(), (n_plus - n_minus + 1) as usize);
        OrbitSegment { n_minus, n_plus, lambda, points, bc, residual: f64::NAN }
    }

    /// Constant segment at a point (typically the fixed point).
    pub fn constant(
        n_minus: i64,
        n_plus: i64,
        lambda: f64,
        value: &DVector<f64>,
        bc: BoundaryKind,
    ) -> Self {
        let len = (n_plus - n_minus + 1) as usize;
        Self::new(n_minus, n_plus, lambda, vec![value.clone(); len], bc)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn index_of(&self, n: i64) -> usize {
        (n - self.n_minus) as usize
    }

    /// Point at absolute index n ∈ J.
    pub fn point(&self, n: i64) -> &DVector<f64> {
        &self.points[self.index_of(n)]
    }

    /// Point at absolute index, padded with `outside` beyond J.
    pub fn point_padded<'a>(&'a self, n: i64, outside: &'a DVector<f64>) -> &'a DVector<f64> {
        if n < self.n_minus || n > self.n_plus {
            outside
        } else {
            self.point(n)
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let k = self.dim();
        DVector::from_iterator(k * self.len(), self.points.iter().flat_map(|p| p.iter().copied()))
    }

    pub fn set_from_flat(&mut self, x: &DVector<f64>) {
        let k = self.dim();
        for (i, p) in self.points.iter_mut().enumerate() {
            p.copy_from(&x.rows(i * k, k));
        }
    }

    pub fn with_flat(&self, x: &DVector<f64>, lambda: f64) -> OrbitSegment {
        let mut seg = self.clone();
        seg.lambda = lambda;
        seg.set_from_flat(x);
        seg
    }

    /// Max distance of the two endpoints from a reference point.
    pub fn endpoint_distance(&self, xi: &DVector<f64>) -> f64 {
        let first = (self.points.first().unwrap() - xi).norm();
        let last = (self.points.last().unwrap() - xi).norm();
        first.max(last)
    }
}

#[derive(Serialize, Deserialize)]
struct OrbitSegmentRepr {
    lambda: f64,
    n_minus: i64,
    n_plus: i64,
    points: Vec<f64>,
    bc: BoundaryKind,
    residual: f64,
}

impl From<OrbitSegment> for OrbitSegmentRepr {
    fn from(seg: OrbitSegment) -> Self {
        OrbitSegmentRepr {
            lambda: seg.lambda,
            n_minus: seg.n_minus,
            n_plus: seg.n_plus,
            points: seg.points.iter().flat_map(|p| p.iter().copied()).collect(),
            bc: seg.bc,
            residual: seg.residual,
        }
    }
}

impl TryFrom<OrbitSegmentRepr> for OrbitSegment {
    type Error = String;

    fn try_from(r: OrbitSegmentRepr) -> std::result::Result<Self, String> {
        let count = (r.n_plus - r.n_minus + 1) as usize;
        if count < 3 || r.points.is_empty() || r.points.len() % count != 0 {
            return Err(format!("point array length {} does not tile J", r.points.len()));
        }
        let k = r.points.len() / count;
        let points = r.points.chunks(k).map(|c| DVector::from_row_slice(c)).collect();
        Ok(OrbitSegment {
            n_minus: r.n_minus,
            n_plus: r.n_plus,
            lambda: r.lambda,
            points,
            bc: r.bc,
            residual: r.residual,
        })
    }
}

impl Serialize for OrbitSegment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OrbitSegmentRepr::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrbitSegment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = OrbitSegmentRepr::deserialize(d)?;
        OrbitSegment::try_from(repr).map_err(serde::de::Error::custom)
    }
}

/// Newton iteration contract.
#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor in (0, 1]; None disables damping.
    pub damping: Option<f64>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-12, max_iter: 30, damping: None }
    }
}

impl NewtonSettings {
    pub fn damped() -> Self {
        NewtonSettings { damping: Some(0.5), max_iter: 60, ..Self::default() }
    }
}

fn boundary_values<M: ParameterizedMap + ?Sized>(
    map: &M,
    bc: BoundaryKind,
    lambda: f64,
    first: &DVector<f64>,
    last: &DVector<f64>,
) -> Result<DVector<f64>> {
    match bc {
        BoundaryKind::Periodic => Ok(first - last),
        BoundaryKind::Projection => {
            let fp = map.reference_fixed_point(lambda)?;
            let split = hyperbolic_splitting(&fp)?;
            Ok(projection_rows(&split, &fp.location, first, last))
        }
    }
}

fn projection_rows(
    split: &HyperbolicSplitting,
    xi: &DVector<f64>,
    first: &DVector<f64>,
    last: &DVector<f64>,
) -> DVector<f64> {
    let left = &split.b_stable * (first - xi);
    let right = &split.b_unstable * (last - xi);
    let mut out = DVector::zeros(left.len() + right.len());
    out.rows_mut(0, left.len()).copy_from(&left);
    out.rows_mut(left.len(), right.len()).copy_from(&right);
    out
}

/// Evaluates the boundary value operator on flattened state.
pub fn gamma_residual_flat<M: ParameterizedMap + ?Sized>(
    map: &M,
    bc: BoundaryKind,
    n_minus: i64,
    n_plus: i64,
    x: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let k = map.dim();
    let m = (n_plus - n_minus + 1) as usize;
    assert_eq!(x.len(), k * m);
    let mut out = DVector::zeros(k * m);
    for i in 0..m - 1 {
        let xn = x.rows(i * k, k).clone_owned();
        let next = x.rows((i + 1) * k, k);
        let r = next - map.eval(&xn, lambda);
        out.rows_mut(i * k, k).copy_from(&r);
    }
    let first = x.rows(0, k).clone_owned();
    let last = x.rows((m - 1) * k, k).clone_owned();
    let b = boundary_values(map, bc, lambda, &first, &last)?;
    out.rows_mut(k * (m - 1), k).copy_from(&b);
    Ok(out)
}

/// Boundary value operator on a segment.
pub fn gamma_residual<M: ParameterizedMap + ?Sized>(map: &M, seg: &OrbitSegment) -> Result<DVector<f64>> {
    gamma_residual_flat(map, seg.bc, seg.n_minus, seg.n_plus, &seg.flatten(), seg.lambda)
}

/// Assembles the Newton system for the boundary value operator, optionally
/// with the parameter derivative as an extra column. The boundary rows
/// enter as border rows; their λ-derivative is taken by central
/// differences (the projection subspaces move with λ).
pub fn gamma_system_flat<M: ParameterizedMap + ?Sized>(
    map: &M,
    bc: BoundaryKind,
    n_minus: i64,
    n_plus: i64,
    x: &DVector<f64>,
    lambda: f64,
    with_lambda: bool,
) -> Result<BorderedSystem> {
    let k = map.dim();
    let m = (n_plus - n_minus + 1) as usize;
    let ne = if with_lambda { 1 } else { 0 };
    let mut diag = Vec::with_capacity(m - 1);
    let mut sup = Vec::with_capacity(m - 1);
    let mut extra_cols = Vec::with_capacity(m - 1);
    for i in 0..m - 1 {
        let xn = x.rows(i * k, k).clone_owned();
        diag.push(-map.jacobian(&xn, lambda));
        sup.push(DMatrix::identity(k, k));
        if with_lambda {
            extra_cols.push(DMatrix::from_column_slice(k, 1, (-map.dlambda(&xn, lambda)).as_slice()));
        } else {
            extra_cols.push(DMatrix::zeros(k, 0));
        }
    }

    let n_cols = k * m + ne;
    let mut border = DMatrix::zeros(k + ne, n_cols);
    let first = x.rows(0, k).clone_owned();
    let last = x.rows((m - 1) * k, k).clone_owned();
    match bc {
        BoundaryKind::Periodic => {
            for r in 0..k {
                border[(r, r)] = 1.0;
                border[(r, (m - 1) * k + r)] = -1.0;
            }
        }
        BoundaryKind::Projection => {
            let fp = map.reference_fixed_point(lambda)?;
            let split = hyperbolic_splitting(&fp)?;
            let ks = split.b_stable.nrows();
            border.view_mut((0, 0), (ks, k)).copy_from(&split.b_stable);
            border
                .view_mut((ks, (m - 1) * k), (k - ks, k))
                .copy_from(&split.b_unstable);
            if with_lambda {
                let h = crate::map::FD_STEP;
                let bp = boundary_values(map, bc, lambda + h, &first, &last)?;
                let bm = boundary_values(map, bc, lambda - h, &first, &last)?;
                let db = (bp - bm) / (2.0 * h);
                for r in 0..k {
                    border[(r, k * m)] = db[r];
                }
            }
        }
    }
    // Border rows beyond the k boundary rows (arclength constraints) are
    // filled in by callers; keep them zero here.
    Ok(BorderedSystem { block_size: k, blocks: m, extras: ne, diag, sup, extra_cols, border })
}

/// Newton solve of Γ_J(x, λ) = 0 at fixed λ. Returns the solved segment
/// and the residual history (sup norms, including the final one).
pub fn newton_solve<M: ParameterizedMap + ?Sized>(
    map: &M,
    seed: &OrbitSegment,
    settings: &NewtonSettings,
) -> Result<(OrbitSegment, Vec<f64>)> {
    let k = map.dim();
    let m = seed.len();
    let lambda = seed.lambda;
    let mut x = seed.flatten();
    let mut history = Vec::new();
    let mut residual = gamma_residual_flat(map, seed.bc, seed.n_minus, seed.n_plus, &x, lambda)?;
    let mut rnorm = residual.amax();
    if !rnorm.is_finite() {
        return Err(Error::NoConvergence { iterations: 0, residual: rnorm });
    }
    history.push(rnorm);
    for _ in 0..settings.max_iter {
        if rnorm <= settings.tol {
            let mut seg = seed.with_flat(&x, lambda);
            seg.residual = rnorm;
            return Ok((seg, history));
        }
        let sys = gamma_system_flat(map, seed.bc, seed.n_minus, seed.n_plus, &x, lambda, false)?;
        let ri = residual.rows(0, k * (m - 1)).clone_owned();
        let rb = residual.rows(k * (m - 1), k).clone_owned();
        let delta = sys.solve(&(-ri), &(-rb))?;

        let mut step = 1.0;
        loop {
            let candidate = &x + &delta * step;
            let cand_res =
                gamma_residual_flat(map, seed.bc, seed.n_minus, seed.n_plus, &candidate, lambda)?;
            let cand_norm = cand_res.amax();
            let accept = match settings.damping {
                Some(_) => cand_norm.is_finite() && (cand_norm < rnorm || step < 1e-3),
                None => true,
            };
            if accept {
                x = candidate;
                residual = cand_res;
                rnorm = cand_norm;
                break;
            }
            step *= settings.damping.unwrap();
        }
        history.push(rnorm);
        if !rnorm.is_finite() {
            return Err(Error::NoConvergence { iterations: history.len(), residual: rnorm });
        }
    }
    if rnorm <= settings.tol {
        let mut seg = seed.with_flat(&x, lambda);
        seg.residual = rnorm;
        return Ok((seg, history));
    }
    Err(Error::NoConvergence { iterations: settings.max_iter, residual: rnorm })
}

/// Orbit amplitude: the ℓ² norm of displacements from the fixed point.
pub fn amplitude<M: ParameterizedMap + ?Sized>(map: &M, seg: &OrbitSegment) -> Result<f64> {
    let xi = map.reference_fixed_point(seg.lambda)?.location;
    Ok(seg.points.iter().map(|p| (p - &xi).norm_squared()).sum::<f64>().sqrt())
}

/// Sup distance between two segments on a common index range, comparing
/// `a` at n with `b` at n + shift, padding with `xi` outside.
pub fn shifted_distance(
    a: &OrbitSegment,
    b: &OrbitSegment,
    xi: &DVector<f64>,
    shift: i64,
) -> f64 {
    let lo = a.n_minus.min(b.n_minus - shift);
    let hi = a.n_plus.max(b.n_plus - shift);
    let mut d: f64 = 0.0;
    for n in lo..=hi {
        let pa = a.point_padded(n, xi);
        let pb = b.point_padded(n + shift, xi);
        d = d.max((pa - pb).amax());
    }
    d
}

/// Minimum shifted distance over |shift| ≤ max_shift; returns the
/// minimizing shift as well.
pub fn min_distance_upto_shift(
    a: &OrbitSegment,
    b: &OrbitSegment,
    xi: &DVector<f64>,
    max_shift: i64,
) -> (f64, i64) {
    let mut best = (f64::INFINITY, 0);
    for shift in -max_shift..=max_shift {
        let d = shifted_distance(a, b, xi, shift);
        if d < best.0 {
            best = (d, shift);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::HenonMap;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn fixed_point_segment(bc: BoundaryKind) -> (HenonMap, OrbitSegment) {
        let map = HenonMap::default();
        let xi = map.reference_fixed_point(0.35).unwrap().location;
        (map, OrbitSegment::constant(-5, 6, 0.35, &xi, bc))
    }

    #[test]
    fn constant_fixed_point_segment_has_zero_residual() {
        for bc in [BoundaryKind::Projection, BoundaryKind::Periodic] {
            let (map, seg) = fixed_point_segment(bc);
            let r = gamma_residual(&map, &seg).unwrap();
            assert!(r.amax() <= 1e-12, "{bc:?}: {}", r.amax());
        }
    }

    #[test]
    fn true_orbit_leaves_only_boundary_rows() {
        let map = HenonMap::default();
        let lambda = 0.35;
        // A genuine trajectory that is not homoclinic: every interior row
        // vanishes by construction, only the boundary rows survive.
        let mut points = vec![v2(0.1, 0.2)];
        for _ in 0..10 {
            let next = map.eval(points.last().unwrap(), lambda);
            points.push(next);
        }
        let seg = OrbitSegment::new(-5, 5, lambda, points, BoundaryKind::Projection);
        let r = gamma_residual(&map, &seg).unwrap();
        let k = 2;
        let interior = r.rows(0, k * (seg.len() - 1)).amax();
        let boundary = r.rows(k * (seg.len() - 1), k).amax();
        assert!(interior <= 1e-12, "interior rows {interior}");
        assert!(boundary > 1e-3, "boundary rows unexpectedly small: {boundary}");
    }

    #[test]
    fn newton_accepts_exact_solution_immediately() {
        let (map, seg) = fixed_point_segment(BoundaryKind::Projection);
        let (solved, history) = newton_solve(&map, &seg, &NewtonSettings::default()).unwrap();
        assert!(history.len() <= 2);
        assert!((solved.flatten() - seg.flatten()).amax() <= 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let map = HenonMap::default();
        let xi = map.reference_fixed_point(0.35).unwrap().location;
        let mut seg = OrbitSegment::constant(-4, 5, 0.35, &xi, BoundaryKind::Projection);
        // Perturb to a generic state.
        for (i, p) in seg.points.iter_mut().enumerate() {
            p[0] += 0.1 * ((i as f64) * 0.7).sin();
            p[1] -= 0.05 * ((i as f64) * 1.3).cos();
        }
        let x = seg.flatten();
        let sys = gamma_system_flat(&map, seg.bc, seg.n_minus, seg.n_plus, &x, seg.lambda, true)
            .unwrap();
        // First k·m rows of the assembled system are the Γ rows; the final
        // border row is the caller-owned constraint, zero here.
        let n = x.len();
        let dense = sys.to_dense().rows(0, n).clone_owned();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(n, n + 1);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (gamma_residual_flat(&map, seg.bc, seg.n_minus, seg.n_plus, &xp, seg.lambda)
                .unwrap()
                - gamma_residual_flat(&map, seg.bc, seg.n_minus, seg.n_plus, &xm, seg.lambda)
                    .unwrap())
                / (2.0 * h);
            fd.set_column(j, &col);
        }
        let col = (gamma_residual_flat(&map, seg.bc, seg.n_minus, seg.n_plus, &x, seg.lambda + h)
            .unwrap()
            - gamma_residual_flat(&map, seg.bc, seg.n_minus, seg.n_plus, &x, seg.lambda - h)
                .unwrap())
            / (2.0 * h);
        fd.set_column(n, &col);
        // Rows must be compared in the solver's ordering: interior rows
        // first, border rows last — same layout in both.
        let rel = (&dense - &fd).amax() / dense.amax();
        assert!(rel <= 1e-5, "relative Jacobian defect {rel}");
    }

    #[test]
    fn amplitude_of_constant_segment_is_zero() {
        let (map, seg) = fixed_point_segment(BoundaryKind::Projection);
        assert!(amplitude(&map, &seg).unwrap() <= 1e-13);
    }

    #[test]
    fn amplitude_of_single_displacement() {
        let (map, mut seg) = fixed_point_segment(BoundaryKind::Projection);
        let mid = seg.index_of(0);
        seg.points[mid][0] += 3.0;
        seg.points[mid][1] += 4.0;
        let a = amplitude(&map, &seg).unwrap();
        assert!((a - 5.0).abs() <= 1e-12, "amplitude {a}");
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let (_, mut seg) = fixed_point_segment(BoundaryKind::Projection);
        seg.points[3][0] = 0.1 + 0.2; // not representable exactly
        seg.points[4][1] = f64::MIN_POSITIVE;
        seg.residual = 3.9e-13;
        let json = serde_json::to_string(&seg).unwrap();
        let back: OrbitSegment = serde_json::from_str(&json).unwrap();
        assert_eq!(seg, back);
        let json2 = serde_json::to_string(&back).unwrap();
        assert_eq!(json, json2);
    }

    #[test]
    fn shifted_distance_detects_index_shifts() {
        let map = HenonMap::default();
        let xi = map.reference_fixed_point(0.35).unwrap().location;
        let mut a = OrbitSegment::constant(-5, 6, 0.35, &xi, BoundaryKind::Projection);
        let mut b = a.clone();
        a.points[5][0] += 1.0;
        b.points[6][0] += 1.0;
        let (d0, _) = (shifted_distance(&a, &b, &xi, 0), 0);
        let (dmin, shift) = min_distance_upto_shift(&a, &b, &xi, 2);
        assert!(d0 > 0.5);
        assert!(dmin <= 1e-14);
        assert_eq!(shift, 1);
    }
}
