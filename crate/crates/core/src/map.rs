//! Parameterized map abstraction and the Hénon instance.
//!
//! A map supplies its value and analytic first/second derivatives; a
//! finite-difference fallback exists for maps defined by a closure only
//! (flagged via [`ParameterizedMap::derivatives_are_approximate`]).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Margin around modulus 1 inside which an eigenvalue is rejected as
/// non-hyperbolic. Far below the Hénon eigenvalue gap.
pub const HYPERBOLICITY_MARGIN: f64 = 1e-6;

/// Step for finite-difference derivative checks and fallbacks.
pub const FD_STEP: f64 = 1e-5;

/// A smooth family of diffeomorphisms x ↦ f(x, λ) on R^k.
pub trait ParameterizedMap {
    fn dim(&self) -> usize;

    /// f(x, λ)
    fn eval(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64>;

    /// f_x(x, λ)
    fn jacobian(&self, x: &DVector<f64>, lambda: f64) -> DMatrix<f64>;

    /// f_λ(x, λ)
    fn dlambda(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64>;

    /// f_xx(x, λ)[u, v]
    fn bilinear(&self, x: &DVector<f64>, lambda: f64, u: &DVector<f64>, v: &DVector<f64>)
        -> DVector<f64>;

    /// ∂/∂λ (f_x(x, λ) u); central-difference default.
    fn mixed(&self, x: &DVector<f64>, lambda: f64, u: &DVector<f64>) -> DVector<f64> {
        let h = FD_STEP;
        let jp = self.jacobian(x, lambda + h);
        let jm = self.jacobian(x, lambda - h);
        (&jp - &jm) * (1.0 / (2.0 * h)) * u
    }

    /// Inverse map, when available in closed form.
    fn inverse(&self, _y: &DVector<f64>, _lambda: f64) -> Option<DVector<f64>> {
        None
    }

    /// The fixed point the homoclinic orbits return to, with eigendata.
    fn reference_fixed_point(&self, lambda: f64) -> Result<FixedPointData>;

    /// Admissible parameter interval.
    fn parameter_domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    /// True when derivatives come from finite differences rather than
    /// analytic formulas.
    fn derivatives_are_approximate(&self) -> bool {
        false
    }
}

/// The Hénon map f((x1,x2), λ) = (1 + x2 − λ x1², b x1).
#[derive(Debug, Clone, Copy)]
pub struct HenonMap {
    /// Shear coefficient, 1.4 in the classical setting.
    pub b: f64,
}

impl Default for HenonMap {
    fn default() -> Self {
        HenonMap { b: 1.4 }
    }
}

impl HenonMap {
    pub fn new(b: f64) -> Self {
        HenonMap { b }
    }

    /// Both fixed points, from the closed-form quadratic in the first
    /// coordinate. For λ = 0 the equation degenerates to a single root.
    pub fn fixed_points(&self, lambda: f64) -> Result<Vec<FixedPointData>> {
        let b = self.b;
        if lambda == 0.0 {
            if (1.0 - b).abs() < 1e-14 {
                return Err(Error::Degenerate("b = 1 with λ = 0 has no fixed point".into()));
            }
            let x1 = 1.0 / (1.0 - b);
            return Ok(vec![self.fixed_point_at(x1, lambda)?]);
        }
        let disc = (1.0 - b) * (1.0 - b) + 4.0 * lambda;
        if disc < 0.0 {
            return Err(Error::Degenerate(format!(
                "no real fixed points: discriminant {disc} < 0"
            )));
        }
        let root = disc.sqrt();
        let plus = ((b - 1.0) + root) / (2.0 * lambda);
        let minus = ((b - 1.0) - root) / (2.0 * lambda);
        Ok(vec![self.fixed_point_at(plus, lambda)?, self.fixed_point_at(minus, lambda)?])
    }

    fn fixed_point_at(&self, x1: f64, lambda: f64) -> Result<FixedPointData> {
        let location = DVector::from_vec(vec![x1, self.b * x1]);
        let jac = self.jacobian(&location, lambda);
        let eigen = eigen_real(&jac)?;
        Ok(FixedPointData { location, lambda, eigen })
    }
}

impl ParameterizedMap for HenonMap {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
        DVector::from_vec(vec![1.0 + x[1] - lambda * x[0] * x[0], self.b * x[0]])
    }

    fn jacobian(&self, x: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-2.0 * lambda * x[0], 1.0, self.b, 0.0])
    }

    fn dlambda(&self, x: &DVector<f64>, _lambda: f64) -> DVector<f64> {
        DVector::from_vec(vec![-x[0] * x[0], 0.0])
    }

    fn bilinear(
        &self,
        _x: &DVector<f64>,
        lambda: f64,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::from_vec(vec![-2.0 * lambda * u[0] * v[0], 0.0])
    }

    fn mixed(&self, x: &DVector<f64>, _lambda: f64, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![-2.0 * x[0] * u[0], 0.0])
    }

    fn inverse(&self, y: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let x1 = y[1] / self.b;
        Some(DVector::from_vec(vec![x1, y[0] - 1.0 + lambda * x1 * x1]))
    }

    fn reference_fixed_point(&self, lambda: f64) -> Result<FixedPointData> {
        // The branch with positive first coordinate for λ > 0.
        Ok(self.fixed_points(lambda)?.into_iter().next().unwrap())
    }
}

/// A map given by a closure, with finite-difference derivatives.
pub struct NumericalMap<F>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    pub dim: usize,
    pub f: F,
    pub reference_seed: DVector<f64>,
}

impl<F> ParameterizedMap for NumericalMap<F>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
        (self.f)(x, lambda)
    }

    fn jacobian(&self, x: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        let k = self.dim;
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let col = (self.eval(&xp, lambda) - self.eval(&xm, lambda)) / (2.0 * FD_STEP);
            jac.set_column(j, &col);
        }
        jac
    }

    fn dlambda(&self, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
        (self.eval(x, lambda + FD_STEP) - self.eval(x, lambda - FD_STEP)) / (2.0 * FD_STEP)
    }

    fn bilinear(
        &self,
        x: &DVector<f64>,
        lambda: f64,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let h = 1e-4;
        let jp = self.jacobian(&(x + v * h), lambda);
        let jm = self.jacobian(&(x - v * h), lambda);
        (jp - jm) * (1.0 / (2.0 * h)) * u
    }

    fn reference_fixed_point(&self, lambda: f64) -> Result<FixedPointData> {
        fixed_point_from_seed(self, lambda, &self.reference_seed, 1e-12, 50)
    }

    fn derivatives_are_approximate(&self) -> bool {
        true
    }
}

/// Real eigen decomposition of a small matrix.
#[derive(Debug, Clone)]
pub struct RealEigen {
    /// Eigenvalues sorted by increasing modulus.
    pub values: Vec<f64>,
    /// Unit right eigenvectors, matching `values`.
    pub right: Vec<DVector<f64>>,
    /// Unit left eigenvectors, matching `values`.
    pub left: Vec<DVector<f64>>,
}

/// A hyperbolic fixed point with its eigen data.
#[derive(Debug, Clone)]
pub struct FixedPointData {
    pub location: DVector<f64>,
    pub lambda: f64,
    pub eigen: RealEigen,
}

impl FixedPointData {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn stable_indices(&self) -> Vec<usize> {
        (0..self.eigen.values.len()).filter(|&i| self.eigen.values[i].abs() < 1.0).collect()
    }

    pub fn unstable_indices(&self) -> Vec<usize> {
        (0..self.eigen.values.len()).filter(|&i| self.eigen.values[i].abs() > 1.0).collect()
    }

    /// Errors unless every eigenvalue modulus stays clear of 1.
    pub fn require_hyperbolic(&self, margin: f64) -> Result<()> {
        for &mu in &self.eigen.values {
            if (mu.abs() - 1.0).abs() <= margin {
                return Err(Error::NotHyperbolic { modulus: mu.abs(), margin });
            }
        }
        Ok(())
    }
}

/// Stable/unstable bases, spectral projectors and the projection
/// boundary-condition rows at a hyperbolic fixed point.
#[derive(Debug, Clone)]
pub struct HyperbolicSplitting {
    pub stable_basis: DMatrix<f64>,
    pub unstable_basis: DMatrix<f64>,
    pub proj_stable: DMatrix<f64>,
    pub proj_unstable: DMatrix<f64>,
    /// Rows annihilating the unstable subspace (left eigenvectors of the
    /// stable eigenvalues); applied to the left endpoint of a segment.
    pub b_stable: DMatrix<f64>,
    /// Rows annihilating the stable subspace; applied to the right endpoint.
    pub b_unstable: DMatrix<f64>,
}

/// Builds the hyperbolic splitting from fixed-point eigendata.
pub fn hyperbolic_splitting(fp: &FixedPointData) -> Result<HyperbolicSplitting> {
    fp.require_hyperbolic(HYPERBOLICITY_MARGIN)?;
    let k = fp.dim();
    let stable = fp.stable_indices();
    let unstable = fp.unstable_indices();
    if stable.is_empty() || unstable.is_empty() {
        return Err(Error::Degenerate("fixed point is not a saddle".into()));
    }

    let col_matrix = |idx: &[usize], vecs: &[DVector<f64>]| {
        let mut m = DMatrix::zeros(k, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            m.set_column(c, &vecs[i]);
        }
        m
    };
    let stable_basis = col_matrix(&stable, &fp.eigen.right);
    let unstable_basis = col_matrix(&unstable, &fp.eigen.right);

    // Spectral projectors from the biorthogonal system V, V^{-1}.
    let mut v = DMatrix::zeros(k, k);
    for (c, vec) in fp.eigen.right.iter().enumerate() {
        v.set_column(c, vec);
    }
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("eigenvector basis is singular".into()))?;
    let mut proj_stable = DMatrix::zeros(k, k);
    for &i in &stable {
        let vi = v.column(i);
        let wi = v_inv.row(i);
        proj_stable += vi * wi;
    }
    let proj_unstable = DMatrix::identity(k, k) - &proj_stable;

    let row_matrix = |idx: &[usize]| {
        let mut m = DMatrix::zeros(idx.len(), k);
        for (r, &i) in idx.iter().enumerate() {
            m.set_row(r, &fp.eigen.left[i].transpose());
        }
        m
    };
    Ok(HyperbolicSplitting {
        stable_basis,
        unstable_basis,
        proj_stable,
        proj_unstable,
        b_stable: row_matrix(&stable),
        b_unstable: row_matrix(&unstable),
    })
}

/// Newton search for a fixed point of f(·, λ) from a seed.
pub fn fixed_point_from_seed<M: ParameterizedMap + ?Sized>(
    map: &M,
    lambda: f64,
    seed: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointData> {
    let k = map.dim();
    let mut x = seed.clone();
    for _ in 0..max_iter {
        let r = map.eval(&x, lambda) - &x;
        if r.amax() <= tol {
            let jac = map.jacobian(&x, lambda);
            let eigen = eigen_real(&jac)?;
            return Ok(FixedPointData { location: x, lambda, eigen });
        }
        let a = map.jacobian(&x, lambda) - DMatrix::identity(k, k);
        let delta = a
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian("fixed point Newton".into()))?;
        x -= delta;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence { iterations: max_iter, residual: f64::INFINITY });
        }
    }
    let residual = (map.eval(&x, lambda) - &x).amax();
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Real eigenvalues and eigenvectors. 2x2 matrices use the closed-form
/// quadratic; larger ones go through QR eigenvalues plus inverse iteration.
pub fn eigen_real(a: &DMatrix<f64>) -> Result<RealEigen> {
    let k = a.nrows();
    if k == 2 {
        return eigen_real_2x2(a);
    }
    let complex = a.complex_eigenvalues();
    let scale = a.amax().max(1.0);
    let mut values: Vec<f64> = Vec::with_capacity(k);
    for c in complex.iter() {
        if c.im.abs() > 1e-9 * scale {
            return Err(Error::Degenerate(format!(
                "complex eigenvalue pair {} ± {}i not supported",
                c.re, c.im
            )));
        }
        values.push(c.re);
    }
    values.sort_by(|p, q| p.abs().partial_cmp(&q.abs()).unwrap());
    let mut right = Vec::with_capacity(k);
    let mut left = Vec::with_capacity(k);
    for &mu in &values {
        right.push(inverse_iteration(a, mu)?);
        left.push(inverse_iteration(&a.transpose(), mu)?);
    }
    Ok(RealEigen { values, right, left })
}

fn eigen_real_2x2(a: &DMatrix<f64>) -> Result<RealEigen> {
    let (tr, det) = (a[(0, 0)] + a[(1, 1)], a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]);
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        return Err(Error::Degenerate(format!("complex eigenvalues: discriminant {disc} < 0")));
    }
    // Stable quadratic roots of μ² − tr·μ + det: avoid cancellation.
    let b = -tr;
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 { (0.0, tr) } else { (q, det / q) };
    let mut values = vec![r1, r2];
    values.sort_by(|p, q| p.abs().partial_cmp(&q.abs()).unwrap());

    let vec_for = |m: &DMatrix<f64>, mu: f64| -> DVector<f64> {
        // Rows of (m − μI) are both orthogonal to the eigenvector; use the
        // larger row for stability.
        let rows = [
            DVector::from_vec(vec![m[(0, 0)] - mu, m[(0, 1)]]),
            DVector::from_vec(vec![m[(1, 0)], m[(1, 1)] - mu]),
        ];
        let r = if rows[0].norm() >= rows[1].norm() { &rows[0] } else { &rows[1] };
        let v = DVector::from_vec(vec![-r[1], r[0]]);
        orient(v.normalize())
    };
    let right: Vec<_> = values.iter().map(|&mu| vec_for(a, mu)).collect();
    let at = a.transpose();
    let left: Vec<_> = values.iter().map(|&mu| vec_for(&at, mu)).collect();
    Ok(RealEigen { values, right, left })
}

fn inverse_iteration(a: &DMatrix<f64>, mu: f64) -> Result<DVector<f64>> {
    let k = a.nrows();
    let scale = a.amax().max(1.0);
    let mut shift = mu;
    for attempt in 0..3 {
        let shifted = a - DMatrix::identity(k, k) * shift;
        if let Some(lu) = Some(shifted.lu()) {
            let mut v = DVector::from_element(k, 1.0).normalize();
            let mut ok = true;
            for _ in 0..5 {
                match lu.solve(&v) {
                    Some(w) if w.norm() > 0.0 && w.iter().all(|x| x.is_finite()) => {
                        v = w.normalize();
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let residual = (a * &v - &v * mu).amax();
                if residual <= 1e-8 * scale {
                    return Ok(orient(v));
                }
            }
        }
        shift = mu + scale * 1e-12 * 10f64.powi(attempt);
    }
    Err(Error::Degenerate(format!("inverse iteration failed for eigenvalue {mu}")))
}

/// Sign convention: the largest-magnitude component is positive.
fn orient(v: DVector<f64>) -> DVector<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

/// Report of the runtime map checks: invertibility on the sampled region
/// and consistency of analytic derivatives with central differences.
#[derive(Debug, Clone)]
pub struct MapValidation {
    pub samples: usize,
    pub min_abs_det: f64,
    pub max_jacobian_rel_err: f64,
    pub max_dlambda_rel_err: f64,
    pub max_bilinear_rel_err: f64,
    pub approximate_derivatives: bool,
}

/// Samples the region uniformly (seeded) and measures derivative and
/// invertibility defects.
pub fn validate_map<M: ParameterizedMap + ?Sized>(
    map: &M,
    region: &[(f64, f64)],
    lambda_range: (f64, f64),
    samples: usize,
    seed: u64,
) -> MapValidation {
    let k = map.dim();
    assert_eq!(region.len(), k, "region bounds must match the map dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MapValidation {
        samples,
        min_abs_det: f64::INFINITY,
        max_jacobian_rel_err: 0.0,
        max_dlambda_rel_err: 0.0,
        max_bilinear_rel_err: 0.0,
        approximate_derivatives: map.derivatives_are_approximate(),
    };
    let h = FD_STEP;
    for _ in 0..samples {
        let x = DVector::from_iterator(
            k,
            region.iter().map(|&(lo, hi)| rng.random_range(lo..hi)),
        );
        let lambda = rng.random_range(lambda_range.0..lambda_range.1);
        let jac = map.jacobian(&x, lambda);
        report.min_abs_det = report.min_abs_det.min(jac.determinant().abs());

        let mut fd_jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            fd_jac.set_column(j, &((map.eval(&xp, lambda) - map.eval(&xm, lambda)) / (2.0 * h)));
        }
        let rel = (&jac - &fd_jac).amax() / jac.amax().max(1.0);
        report.max_jacobian_rel_err = report.max_jacobian_rel_err.max(rel);

        let fd_dl = (map.eval(&x, lambda + h) - map.eval(&x, lambda - h)) / (2.0 * h);
        let dl = map.dlambda(&x, lambda);
        let rel = (&dl - &fd_dl).amax() / dl.amax().max(1.0);
        report.max_dlambda_rel_err = report.max_dlambda_rel_err.max(rel);

        let u = DVector::from_iterator(k, (0..k).map(|_| rng.random_range(-1.0..1.0)));
        let fd_bil =
            (map.jacobian(&(&x + &u * h), lambda) - map.jacobian(&(&x - &u * h), lambda))
                * (1.0 / (2.0 * h))
                * &u;
        let bil = map.bilinear(&x, lambda, &u, &u);
        let rel = (&bil - &fd_bil).amax() / bil.amax().max(1.0);
        report.max_bilinear_rel_err = report.max_bilinear_rel_err.max(rel);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn henon() -> HenonMap {
        HenonMap::default()
    }

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn evaluate_at_origin() {
        let f = henon();
        assert_eq!(f.eval(&v2(0.0, 0.0), 0.35), v2(1.0, 0.0));
    }

    #[test]
    fn evaluate_at_unit_point() {
        let f = henon();
        let y = f.eval(&v2(1.0, 0.0), 0.35);
        assert_relative_eq!(y[0], 0.65, epsilon = 1e-15);
        assert_relative_eq!(y[1], 1.4, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_at_origin_kills_lambda_term() {
        let f = henon();
        let j = f.jacobian(&v2(0.0, 0.0), 0.35);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.4, 0.0]));
    }

    #[test]
    fn bilinear_form_of_quadratic_term() {
        let f = henon();
        let u = v2(1.0, 0.0);
        for &lambda in &[0.1, 0.35, 0.9] {
            let b = f.bilinear(&v2(0.7, -1.3), lambda, &u, &u);
            assert_relative_eq!(b[0], -2.0 * lambda, epsilon = 1e-15);
            assert_eq!(b[1], 0.0);
        }
    }

    #[test]
    fn determinant_is_constant_minus_b() {
        let f = henon();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = v2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let lambda = rng.random_range(0.1..1.0);
            let det = f.jacobian(&x, lambda).determinant();
            assert!((det + 1.4).abs() <= 1e-12, "det {det}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = henon();
        let report = validate_map(&f, &[(-3.0, 3.0), (-3.0, 3.0)], (0.1, 1.0), 100, 42);
        assert!(report.max_jacobian_rel_err <= 1e-6, "{report:?}");
        assert!(report.max_dlambda_rel_err <= 1e-6, "{report:?}");
        assert!(report.max_bilinear_rel_err <= 1e-6, "{report:?}");
        assert!(report.min_abs_det > 0.0);
        assert!(!report.approximate_derivatives);
    }

    #[test]
    fn fixed_point_location_and_eigenvalues() {
        let f = henon();
        let fp = f.reference_fixed_point(0.35).unwrap();
        assert_relative_eq!(fp.location[0], 2.3557137, epsilon = 1e-6);
        assert_relative_eq!(fp.location[1], 3.2979992, epsilon = 1e-6);
        // Fixed-point identity.
        let image = f.eval(&fp.location, 0.35);
        assert!((image - &fp.location).amax() <= 1e-12);
        // Roots of μ² + 2λν μ − 1.4.
        let unstable = fp.eigen.values[1];
        let stable = fp.eigen.values[0];
        assert_relative_eq!(unstable, -2.2667, epsilon = 1e-4);
        assert_relative_eq!(stable, 0.6177, epsilon = 1e-4);
        assert!((stable * unstable + 1.4).abs() <= 1e-10);
    }

    #[test]
    fn coincident_branches_at_discriminant_zero() {
        let f = henon();
        let lambda = -1.0 / 25.0;
        let fps = f.fixed_points(lambda).unwrap();
        assert_eq!(fps.len(), 2);
        assert!((&fps[0].location - &fps[1].location).amax() <= 1e-12);
    }

    #[test]
    fn degenerate_below_discriminant() {
        let f = henon();
        assert!(matches!(f.fixed_points(-0.1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn splitting_projectors_and_invariance() {
        let f = henon();
        let fp = f.reference_fixed_point(0.35).unwrap();
        let split = hyperbolic_splitting(&fp).unwrap();
        let k = 2;
        let sum = &split.proj_stable + &split.proj_unstable;
        assert!((sum - DMatrix::<f64>::identity(k, k)).amax() <= 1e-12);
        let idem = &split.proj_stable * &split.proj_stable - &split.proj_stable;
        assert!(idem.amax() <= 1e-12);
        // Commutation with the Jacobian on the spectral subspaces.
        let a = f.jacobian(&fp.location, 0.35);
        let comm = &a * &split.proj_stable - &split.proj_stable * &a;
        assert!(comm.amax() <= 1e-10, "commutation residual {}", comm.amax());
    }

    #[test]
    fn projection_rows_annihilate_opposite_subspaces() {
        let f = henon();
        let fp = f.reference_fixed_point(0.35).unwrap();
        let split = hyperbolic_splitting(&fp).unwrap();
        let r = &split.b_stable * &split.unstable_basis;
        assert!(r.amax() <= 1e-12, "B_s on unstable basis: {}", r.amax());
        let r = &split.b_unstable * &split.stable_basis;
        assert!(r.amax() <= 1e-12, "B_u on stable basis: {}", r.amax());
    }

    #[test]
    fn generic_eigen_path_matches_2x2() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.0, 2.0, 0.3, 0.0, 0.0, -0.2]);
        let e = eigen_real(&a).unwrap();
        let mut values = e.values.clone();
        values.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert_relative_eq!(values[0], -0.2, epsilon = 1e-9);
        assert_relative_eq!(values[1], 0.5, epsilon = 1e-9);
        assert_relative_eq!(values[2], 2.0, epsilon = 1e-9);
        for (i, &mu) in e.values.iter().enumerate() {
            assert!((&a * &e.right[i] - &e.right[i] * mu).amax() <= 1e-8);
            assert!((&a.transpose() * &e.left[i] - &e.left[i] * mu).amax() <= 1e-8);
        }
    }

    #[test]
    fn newton_fixed_point_for_numerical_map() {
        let nm = NumericalMap {
            dim: 2,
            f: |x: &DVector<f64>, lambda: f64| {
                DVector::from_vec(vec![1.0 + x[1] - lambda * x[0] * x[0], 1.4 * x[0]])
            },
            reference_seed: DVector::from_vec(vec![2.0, 3.0]),
        };
        let fp = nm.reference_fixed_point(0.35).unwrap();
        assert_relative_eq!(fp.location[0], 2.3557137, epsilon = 1e-6);
        assert!(nm.derivatives_are_approximate());
    }

    #[test]
    fn inverse_really_inverts() {
        let f = henon();
        let x = v2(0.3, -1.2);
        let y = f.eval(&x, 0.35);
        let back = f.inverse(&y, 0.35).unwrap();
        assert!((back - x).amax() <= 1e-14);
    }
}
