//! Pseudo-arclength continuation with fold detection.
//!
//! Works on any zero problem F(x, λ) = 0 through [`ContinuationSystem`];
//! orbit segments plug in via [`OrbitBvp`], which routes the linear
//! algebra through the bordered block-bidiagonal solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::map::{hyperbolic_splitting, ParameterizedMap};
use crate::orbit::{
    amplitude, gamma_residual_flat, gamma_system_flat, BoundaryKind, OrbitSegment,
};

/// A parameterized zero problem with the derivatives needed for tangents,
/// correctors and the augmented fold system.
pub trait ContinuationSystem {
    fn dim(&self) -> usize;

    fn residual(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>>;

    fn jacobian_x(&self, x: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>>;

    fn jacobian_lambda(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>>;

    /// Matrix of v ↦ D²_x F(x, λ)[u, v].
    fn hessian_apply(&self, x: &DVector<f64>, lambda: f64, u: &DVector<f64>)
        -> Result<DMatrix<f64>>;

    /// ∂/∂λ (D_x F(x, λ) u).
    fn mixed_apply(&self, x: &DVector<f64>, lambda: f64, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Scalar reported along branches (orbit amplitude).
    fn observable(&self, _x: &DVector<f64>, _lambda: f64) -> f64 {
        0.0
    }

    /// Solves the square bordered system `[D_x F, D_λ F; rowᵀ] δ = rhs`
    /// where `rhs` stacks the F-rows and the border row.
    fn solve_bordered(
        &self,
        x: &DVector<f64>,
        lambda: f64,
        row: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&self.jacobian_x(x, lambda)?);
        a.view_mut((0, n), (n, 1)).copy_from(&self.jacobian_lambda(x, lambda)?);
        a.view_mut((n, 0), (1, n + 1)).copy_from(&row.transpose());
        solve_dense(a, rhs)
    }
}

/// A point on a continuation branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub state: DVector<f64>,
    pub lambda: f64,
    pub arclength: f64,
    /// Unit tangent in (state, λ); last component is the λ part.
    pub tangent: DVector<f64>,
    pub amplitude: f64,
}

impl BranchPoint {
    pub fn tangent_lambda(&self) -> f64 {
        self.tangent[self.tangent.len() - 1]
    }

    fn augmented(&self) -> DVector<f64> {
        augmented(&self.state, self.lambda)
    }
}

fn augmented(state: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = state.len();
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(state);
    z[n] = lambda;
    z
}

/// Fold side: λ has a local maximum (right) or minimum (left) on the branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FoldSide {
    L,
    R,
}

/// A located fold (turning point) with the kernel of the augmented solve.
#[derive(Debug, Clone)]
pub struct FoldEvent {
    pub lambda: f64,
    pub state: DVector<f64>,
    /// Kernel direction of D_x F at the fold, unit ℓ² norm.
    pub kernel: DVector<f64>,
    pub side: FoldSide,
    pub arclength: f64,
    /// False when the augmented (quadratic turning point) solve failed and
    /// the event records only the bisection estimate.
    pub quadratic: bool,
}

/// A recorded crossing of the reference parameter λ̃.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub arclength: f64,
    pub state: DVector<f64>,
    pub lambda: f64,
}

/// Reason a trace ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Closed,
    StepBudget,
    MinStep,
    WindowExit,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub folds: Vec<FoldEvent>,
    pub crossings: Vec<Crossing>,
    pub closed: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct TraceSettings {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Corrector residual tolerance (sup norm).
    pub tol: f64,
    pub max_steps: usize,
    pub corrector_iters: usize,
    pub lambda_window: (f64, f64),
    /// Record crossings of this parameter value.
    pub lambda_tilde: Option<f64>,
    pub closure_tol: f64,
    /// Closure is only tested after this multiple of h_max of arclength.
    pub closure_min_factor: f64,
    /// Locate folds with the augmented system as they are passed.
    pub locate_folds: bool,
}

impl Default for TraceSettings {
    fn default() -> Self {
        TraceSettings {
            h0: 1e-2,
            h_min: 1e-4,
            h_max: 5e-2,
            tol: 1e-10,
            max_steps: 50_000,
            corrector_iters: 8,
            lambda_window: (f64::NEG_INFINITY, f64::INFINITY),
            lambda_tilde: None,
            closure_tol: 1e-6,
            closure_min_factor: 10.0,
            locate_folds: true,
        }
    }
}

/// Unit tangent of the extended system at (x, λ), oriented along `prev`
/// when given, otherwise towards positive λ (ties: positive first state
/// component).
pub fn branch_tangent<S: ContinuationSystem + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    lambda: f64,
    prev: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = self_dim_guard(system, x)?;
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if let Some(p) = prev {
        candidates.push(p.clone());
    }
    let mut e_lambda = DVector::zeros(n + 1);
    e_lambda[n] = 1.0;
    candidates.push(e_lambda);
    let mut e_first = DVector::zeros(n + 1);
    e_first[0] = 1.0;
    candidates.push(e_first);

    let mut tangent = None;
    for row in &candidates {
        match system.solve_bordered(x, lambda, row, &rhs) {
            Ok(t) if t.norm() > 1e-10 && t.iter().all(|v| v.is_finite()) => {
                tangent = Some(t.normalize());
                break;
            }
            _ => continue,
        }
    }
    let mut t = tangent.ok_or(Error::RankDeficient)?;
    match prev {
        Some(p) => {
            if t.dot(p) < 0.0 {
                t = -t;
            }
        }
        None => {
            let lam = t[n];
            if lam < -1e-12 || (lam.abs() <= 1e-12 && t[0] < 0.0) {
                t = -t;
            }
        }
    }
    Ok(t)
}

fn self_dim_guard<S: ContinuationSystem + ?Sized>(system: &S, x: &DVector<f64>) -> Result<usize> {
    let n = system.dim();
    if x.len() != n {
        return Err(Error::InvalidInput(format!("state length {} != dim {}", x.len(), n)));
    }
    Ok(n)
}

/// One predictor-corrector step of signed length h along the tangent.
pub fn predictor_corrector_step<S: ContinuationSystem + ?Sized>(
    system: &S,
    point: &BranchPoint,
    h: f64,
    settings: &TraceSettings,
) -> Result<BranchPoint> {
    let n = system.dim();
    let pred = point.augmented() + &point.tangent * h;
    let corrected = correct(system, &pred, &point.tangent, settings)?;
    let state = corrected.rows(0, n).clone_owned();
    let lambda = corrected[n];
    let tangent = branch_tangent(system, &state, lambda, Some(&point.tangent))?;
    let step = (&corrected - point.augmented()).norm();
    Ok(BranchPoint {
        amplitude: system.observable(&state, lambda),
        arclength: point.arclength + step,
        state,
        lambda,
        tangent,
    })
}

/// Newton corrector on {F = 0, tangent·(z − pred) = 0}.
fn correct<S: ContinuationSystem + ?Sized>(
    system: &S,
    pred: &DVector<f64>,
    tangent: &DVector<f64>,
    settings: &TraceSettings,
) -> Result<DVector<f64>> {
    let n = system.dim();
    let mut z = pred.clone();
    for _ in 0..settings.corrector_iters {
        let x = z.rows(0, n).clone_owned();
        let lambda = z[n];
        let f = system.residual(&x, lambda)?;
        let constraint = tangent.dot(&(&z - pred));
        if !f.amax().is_finite() {
            return Err(Error::StepFailed);
        }
        if f.amax() <= settings.tol && constraint.abs() <= settings.tol.max(1e-12) {
            return Ok(z);
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-&f));
        rhs[n] = -constraint;
        let delta = system
            .solve_bordered(&x, lambda, tangent, &rhs)
            .map_err(|_| Error::StepFailed)?;
        z += delta;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::StepFailed);
        }
    }
    // Final acceptance check.
    let x = z.rows(0, n).clone_owned();
    let f = system.residual(&x, z[n])?;
    if f.amax() <= settings.tol {
        Ok(z)
    } else {
        Err(Error::StepFailed)
    }
}

/// Builds the starting branch point (tangent from scratch).
pub fn start_point<S: ContinuationSystem + ?Sized>(
    system: &S,
    state: DVector<f64>,
    lambda: f64,
) -> Result<BranchPoint> {
    let tangent = branch_tangent(system, &state, lambda, None)?;
    Ok(BranchPoint {
        amplitude: system.observable(&state, lambda),
        arclength: 0.0,
        state,
        lambda,
        tangent,
    })
}

/// Traces a branch from a solved point until closure, window exit or
/// budget exhaustion.
pub fn trace_branch<S: ContinuationSystem + ?Sized>(
    system: &S,
    start: BranchPoint,
    settings: &TraceSettings,
) -> Result<Branch> {
    let mut branch = Branch {
        points: vec![start.clone()],
        folds: Vec::new(),
        crossings: Vec::new(),
        closed: false,
        termination: Termination::StepBudget,
    };
    if let Some(lt) = settings.lambda_tilde {
        if (start.lambda - lt).abs() <= 1e-12 {
            branch.crossings.push(Crossing {
                arclength: 0.0,
                state: start.state.clone(),
                lambda: start.lambda,
            });
        }
    }
    let start_aug = start.augmented();
    let closure_after = settings.closure_min_factor * settings.h_max;
    let mut h = settings.h0;
    let mut accepts_in_a_row = 0usize;
    let mut current = start.clone();

    for _ in 0..settings.max_steps {
        match predictor_corrector_step(system, &current, h, settings) {
            Ok(next) => {
                // Fold passage: sign change of the tangent λ-component.
                if current.tangent_lambda() * next.tangent_lambda() < 0.0 {
                    if settings.locate_folds {
                        match locate_fold(system, &current, &next, settings) {
                            Ok(event) => branch.folds.push(event),
                            Err(Error::NoSignChange) => {}
                            Err(e) => return Err(e),
                        }
                    } else {
                        branch.folds.push(FoldEvent {
                            lambda: 0.5 * (current.lambda + next.lambda),
                            state: next.state.clone(),
                            kernel: DVector::zeros(system.dim()),
                            side: if current.tangent_lambda() > 0.0 {
                                FoldSide::R
                            } else {
                                FoldSide::L
                            },
                            arclength: 0.5 * (current.arclength + next.arclength),
                            quadratic: false,
                        });
                    }
                }
                // λ̃ crossing by dense output.
                if let Some(lt) = settings.lambda_tilde {
                    if (current.lambda - lt) * (next.lambda - lt) < 0.0 {
                        if let Ok(c) = locate_crossing(system, &current, &next, lt, settings) {
                            branch.crossings.push(c);
                        }
                    }
                }
                // Closure test.
                let dist_to_start = (next.augmented() - &start_aug).norm();
                if next.arclength > closure_after
                    && dist_to_start <= h.max(settings.h_max)
                    && next.tangent.dot(&start.tangent) > 0.5
                {
                    if let Some(end) = try_close(system, &next, &start, settings) {
                        branch.points.push(next);
                        branch.points.push(end);
                        branch.closed = true;
                        branch.termination = Termination::Closed;
                        return Ok(branch);
                    }
                }
                // Window exit.
                if next.lambda < settings.lambda_window.0 || next.lambda > settings.lambda_window.1
                {
                    branch.points.push(next);
                    branch.termination = Termination::WindowExit;
                    return Ok(branch);
                }
                branch.points.push(next.clone());
                current = next;
                accepts_in_a_row += 1;
                if accepts_in_a_row >= 3 {
                    h = (h * 1.3).min(settings.h_max);
                    accepts_in_a_row = 0;
                }
            }
            Err(Error::StepFailed) | Err(Error::SingularJacobian(_)) => {
                accepts_in_a_row = 0;
                h *= 0.5;
                if h < settings.h_min {
                    branch.termination = Termination::MinStep;
                    return Ok(branch);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(branch)
}

/// Probes whether the curve through `from` passes through `start`; returns
/// the corrected endpoint when it does.
fn try_close<S: ContinuationSystem + ?Sized>(
    system: &S,
    from: &BranchPoint,
    start: &BranchPoint,
    settings: &TraceSettings,
) -> Option<BranchPoint> {
    let gap = start.augmented() - from.augmented();
    let h_star = from.tangent.dot(&gap);
    let pred = from.augmented() + &from.tangent * h_star;
    let corrected = correct(system, &pred, &from.tangent, settings).ok()?;
    if (&corrected - start.augmented()).norm() <= settings.closure_tol {
        Some(BranchPoint {
            state: start.state.clone(),
            lambda: start.lambda,
            arclength: from.arclength + gap.norm(),
            tangent: from.tangent.clone(),
            amplitude: start.amplitude,
        })
    } else {
        None
    }
}

fn locate_crossing<S: ContinuationSystem + ?Sized>(
    system: &S,
    a: &BranchPoint,
    b: &BranchPoint,
    lambda_tilde: f64,
    settings: &TraceSettings,
) -> Result<Crossing> {
    let n = system.dim();
    let theta = (lambda_tilde - a.lambda) / (b.lambda - a.lambda);
    let z = a.augmented() * (1.0 - theta) + b.augmented() * theta;
    let mut x = z.rows(0, n).clone_owned();
    // Frozen-λ Newton via the bordered solve with a δλ = 0 row.
    let mut row = DVector::zeros(n + 1);
    row[n] = 1.0;
    for _ in 0..40 {
        let f = system.residual(&x, lambda_tilde)?;
        if f.amax() <= settings.tol {
            let s = a.arclength + theta * (b.arclength - a.arclength);
            return Ok(Crossing { arclength: s, state: x, lambda: lambda_tilde });
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-&f));
        let delta = system.solve_bordered(&x, lambda_tilde, &row, &rhs)?;
        x += delta.rows(0, n);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::StepFailed);
        }
    }
    Err(Error::NoConvergence { iterations: 40, residual: f64::NAN })
}

/// Locates and classifies a fold bracketed by two branch points with
/// opposite tangent λ-components: bisection along the curve, then the
/// augmented (Moore–Spence type) system.
pub fn locate_fold<S: ContinuationSystem + ?Sized>(
    system: &S,
    a: &BranchPoint,
    b: &BranchPoint,
    settings: &TraceSettings,
) -> Result<FoldEvent> {
    if a.tangent_lambda() * b.tangent_lambda() >= 0.0 {
        return Err(Error::NoSignChange);
    }
    let side = if a.tangent_lambda() > 0.0 { FoldSide::R } else { FoldSide::L };
    let mut lo = a.clone();
    let mut hi = b.clone();
    for _ in 0..30 {
        let gap = hi.arclength - lo.arclength;
        if gap <= 1e-9 || lo.tangent_lambda().abs() <= 1e-5 {
            break;
        }
        let mid = match predictor_corrector_step(system, &lo, 0.5 * gap, settings) {
            Ok(p) => p,
            Err(_) => break,
        };
        if mid.tangent_lambda() * lo.tangent_lambda() > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (seed, s_est) = if lo.tangent_lambda().abs() <= hi.tangent_lambda().abs() {
        (lo.clone(), lo.arclength)
    } else {
        (hi.clone(), hi.arclength)
    };
    let u0 = seed.tangent.rows(0, system.dim()).clone_owned();
    match moore_spence(system, &seed.state, seed.lambda, &u0, settings.tol, 25) {
        Ok((state, lambda, kernel)) => Ok(FoldEvent {
            lambda,
            state,
            kernel,
            side,
            arclength: s_est,
            quadratic: true,
        }),
        Err(_) => Ok(FoldEvent {
            lambda: seed.lambda,
            state: seed.state,
            kernel: u0.normalize(),
            side,
            arclength: s_est,
            quadratic: false,
        }),
    }
}

/// Solves the augmented fold system {F = 0, D_xF·u = 0, ‖u‖² = 1} by
/// Newton's method on the doubled unknowns (x, λ, u).
pub fn moore_spence<S: ContinuationSystem + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    lambda0: f64,
    u0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    let n = system.dim();
    let mut x = x0.clone();
    let mut lambda = lambda0;
    let mut u = u0.normalize();
    for _ in 0..max_iter {
        let f1 = system.residual(&x, lambda)?;
        let jx = system.jacobian_x(&x, lambda)?;
        let f2 = &jx * &u;
        let f3 = u.dot(&u) - 1.0;
        if f1.amax() <= tol && f2.amax() <= tol.max(1e-10) && f3.abs() <= 1e-12 {
            return Ok((x, lambda, u));
        }
        let jl = system.jacobian_lambda(&x, lambda)?;
        let h = system.hessian_apply(&x, lambda, &u)?;
        let m = system.mixed_apply(&x, lambda, &u)?;
        let size = 2 * n + 1;
        let mut a = DMatrix::zeros(size, size);
        a.view_mut((0, 0), (n, n)).copy_from(&jx);
        a.view_mut((0, n), (n, 1)).copy_from(&jl);
        a.view_mut((n, 0), (n, n)).copy_from(&h);
        a.view_mut((n, n), (n, 1)).copy_from(&m);
        a.view_mut((n, n + 1), (n, n)).copy_from(&jx);
        for j in 0..n {
            a[(size - 1, n + 1 + j)] = 2.0 * u[j];
        }
        let mut rhs = DVector::zeros(size);
        rhs.rows_mut(0, n).copy_from(&(-&f1));
        rhs.rows_mut(n, n).copy_from(&(-&f2));
        rhs[size - 1] = -f3;
        let delta = solve_dense(a, &rhs)
            .map_err(|e| Error::AugmentedSingular(e.to_string()))?;
        x += delta.rows(0, n);
        lambda += delta[n];
        u += delta.rows(n + 1, n);
        if !x.iter().all(|v| v.is_finite()) || !lambda.is_finite() {
            return Err(Error::AugmentedSingular("diverged".into()));
        }
    }
    Err(Error::AugmentedSingular(format!("no convergence in {max_iter} iterations")))
}

/// Orbit boundary value problem as a continuation system. The state is
/// the flattened segment; the bordered solves use the structured
/// elimination.
pub struct OrbitBvp<'a, M: ParameterizedMap + ?Sized> {
    pub map: &'a M,
    pub n_minus: i64,
    pub n_plus: i64,
    pub bc: BoundaryKind,
}

impl<'a, M: ParameterizedMap + ?Sized> OrbitBvp<'a, M> {
    pub fn new(map: &'a M, n_minus: i64, n_plus: i64, bc: BoundaryKind) -> Self {
        OrbitBvp { map, n_minus, n_plus, bc }
    }

    pub fn for_segment(map: &'a M, seg: &OrbitSegment) -> Self {
        OrbitBvp { map, n_minus: seg.n_minus, n_plus: seg.n_plus, bc: seg.bc }
    }

    pub fn blocks(&self) -> usize {
        (self.n_plus - self.n_minus + 1) as usize
    }

    pub fn segment(&self, x: &DVector<f64>, lambda: f64) -> OrbitSegment {
        let k = self.map.dim();
        let m = self.blocks();
        let points = (0..m).map(|i| x.rows(i * k, k).clone_owned()).collect();
        let mut seg = OrbitSegment::new(self.n_minus, self.n_plus, lambda, points, self.bc);
        seg.residual = gamma_residual_flat(self.map, self.bc, self.n_minus, self.n_plus, x, lambda)
            .map(|r| r.amax())
            .unwrap_or(f64::NAN);
        seg
    }
}

impl<'a, M: ParameterizedMap + ?Sized> ContinuationSystem for OrbitBvp<'a, M> {
    fn dim(&self) -> usize {
        self.map.dim() * self.blocks()
    }

    fn residual(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        gamma_residual_flat(self.map, self.bc, self.n_minus, self.n_plus, x, lambda)
    }

    fn jacobian_x(&self, x: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        Ok(gamma_system_flat(self.map, self.bc, self.n_minus, self.n_plus, x, lambda, false)?
            .to_dense())
    }

    fn jacobian_lambda(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let k = self.map.dim();
        let m = self.blocks();
        let sys = gamma_system_flat(self.map, self.bc, self.n_minus, self.n_plus, x, lambda, true)?;
        let mut col = DVector::zeros(k * m);
        for i in 0..m - 1 {
            for r in 0..k {
                col[i * k + r] = sys.extra_cols[i][(r, 0)];
            }
        }
        for r in 0..k {
            col[(m - 1) * k + r] = sys.border[(r, k * m)];
        }
        Ok(col)
    }

    fn hessian_apply(
        &self,
        x: &DVector<f64>,
        lambda: f64,
        u: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let k = self.map.dim();
        let m = self.blocks();
        let n = k * m;
        let mut h = DMatrix::zeros(n, n);
        let mut basis = DVector::zeros(k);
        for i in 0..m - 1 {
            let xn = x.rows(i * k, k).clone_owned();
            let un = u.rows(i * k, k).clone_owned();
            for j in 0..k {
                basis.fill(0.0);
                basis[j] = 1.0;
                let col = -self.map.bilinear(&xn, lambda, &un, &basis);
                for r in 0..k {
                    h[(i * k + r, i * k + j)] = col[r];
                }
            }
        }
        // Boundary rows are linear in x for both condition kinds.
        Ok(h)
    }

    fn mixed_apply(&self, x: &DVector<f64>, lambda: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.map.dim();
        let m = self.blocks();
        let mut out = DVector::zeros(k * m);
        for i in 0..m - 1 {
            let xn = x.rows(i * k, k).clone_owned();
            let un = u.rows(i * k, k).clone_owned();
            let v = -self.map.mixed(&xn, lambda, &un);
            out.rows_mut(i * k, k).copy_from(&v);
        }
        if self.bc == BoundaryKind::Projection {
            let h = crate::map::FD_STEP;
            let rows_at = |l: f64| -> Result<DVector<f64>> {
                let fp = self.map.reference_fixed_point(l)?;
                let split = hyperbolic_splitting(&fp)?;
                let u_first = u.rows(0, k).clone_owned();
                let u_last = u.rows((m - 1) * k, k).clone_owned();
                let top = &split.b_stable * u_first;
                let bottom = &split.b_unstable * u_last;
                let mut r = DVector::zeros(k);
                r.rows_mut(0, top.len()).copy_from(&top);
                r.rows_mut(top.len(), bottom.len()).copy_from(&bottom);
                Ok(r)
            };
            let diff = (rows_at(lambda + h)? - rows_at(lambda - h)?) / (2.0 * h);
            out.rows_mut(k * (m - 1), k).copy_from(&diff);
        }
        let _ = x;
        Ok(out)
    }

    fn observable(&self, x: &DVector<f64>, lambda: f64) -> f64 {
        let seg = self.segment(x, lambda);
        amplitude(self.map, &seg).unwrap_or(f64::NAN)
    }

    fn solve_bordered(
        &self,
        x: &DVector<f64>,
        lambda: f64,
        row: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let k = self.map.dim();
        let m = self.blocks();
        let mut sys =
            gamma_system_flat(self.map, self.bc, self.n_minus, self.n_plus, x, lambda, true)?;
        sys.border.row_mut(k).copy_from(&row.transpose());
        let rhs_interior = rhs.rows(0, k * (m - 1)).clone_owned();
        let mut rhs_border = DVector::zeros(k + 1);
        rhs_border.rows_mut(0, k).copy_from(&rhs.rows(k * (m - 1), k));
        rhs_border[k] = rhs[k * m];
        sys.solve(&rhs_interior, &rhs_border)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle x² + λ² = 1 as a one-dimensional zero problem.
    struct Circle;

    impl ContinuationSystem for Circle {
        fn dim(&self) -> usize {
            1
        }

        fn residual(&self, x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![x[0] * x[0] + lambda * lambda - 1.0]))
        }

        fn jacobian_x(&self, x: &DVector<f64>, _lambda: f64) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_vec(1, 1, vec![2.0 * x[0]]))
        }

        fn jacobian_lambda(&self, _x: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![2.0 * lambda]))
        }

        fn hessian_apply(
            &self,
            _x: &DVector<f64>,
            _lambda: f64,
            u: &DVector<f64>,
        ) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_vec(1, 1, vec![2.0 * u[0]]))
        }

        fn mixed_apply(
            &self,
            _x: &DVector<f64>,
            _lambda: f64,
            _u: &DVector<f64>,
        ) -> Result<DVector<f64>> {
            Ok(DVector::zeros(1))
        }
    }

    fn one(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn tangent_on_circle_geometry() {
        // At (x, λ) = (0, −1) the curve runs along x.
        let t = branch_tangent(&Circle, &one(0.0), -1.0, None).unwrap();
        assert!(t[0].abs() > 1.0 - 1e-12, "{t:?}");
        assert!(t[1].abs() <= 1e-12);
        // At (1, 0) it runs along λ; the λ-component dominates.
        let t = branch_tangent(&Circle, &one(1.0), 0.0, None).unwrap();
        assert!(t[1].abs() > 1.0 - 1e-12, "{t:?}");
        assert!(t[1] > 0.0, "orientation prefers positive λ");
    }

    #[test]
    fn step_lands_on_circle() {
        let settings = TraceSettings { tol: 1e-13, ..Default::default() };
        let start = start_point(&Circle, one(0.0), -1.0).unwrap();
        let stepped = predictor_corrector_step(&Circle, &start, 0.1, &settings).unwrap();
        let r = stepped.state[0].powi(2) + stepped.lambda.powi(2);
        assert!((r - 1.0).abs() <= 1e-12);
        assert!((stepped.arclength - 0.1).abs() <= 2e-3);
    }

    #[test]
    fn zero_step_returns_same_point() {
        let settings = TraceSettings::default();
        let start = start_point(&Circle, one(0.0), -1.0).unwrap();
        let stepped = predictor_corrector_step(&Circle, &start, 0.0, &settings).unwrap();
        assert!((stepped.state[0] - start.state[0]).abs() <= 1e-12);
        assert!((stepped.lambda - start.lambda).abs() <= 1e-12);
    }

    #[test]
    fn traces_closed_circle_with_two_folds() {
        let settings = TraceSettings {
            h0: 0.05,
            h_max: 0.05,
            tol: 1e-12,
            lambda_tilde: Some(0.0),
            ..Default::default()
        };
        let start = start_point(&Circle, one(1.0), 0.0).unwrap();
        let branch = trace_branch(&Circle, start, &settings).unwrap();
        assert!(branch.closed, "terminated {:?}", branch.termination);
        let total = branch.points.last().unwrap().arclength;
        assert!(
            (total - std::f64::consts::TAU).abs() <= 0.01 * std::f64::consts::TAU,
            "arclength {total}"
        );
        assert_eq!(branch.folds.len(), 2);
        for fold in &branch.folds {
            assert!(fold.quadratic);
            assert!((fold.lambda.abs() - 1.0).abs() <= 1e-10, "fold λ {}", fold.lambda);
            match fold.side {
                FoldSide::R => assert!(fold.lambda > 0.0),
                FoldSide::L => assert!(fold.lambda < 0.0),
            }
        }
        assert_eq!(branch.folds.iter().filter(|f| f.side == FoldSide::R).count(), 1);
        // The start counts once; the opposite crossing of λ = 0 once.
        assert_eq!(branch.crossings.len(), 2);
        let other = &branch.crossings[1];
        assert!((other.state[0] + 1.0).abs() <= 1e-9, "crossing at {:?}", other.state);
    }

    #[test]
    fn moore_spence_polishes_circle_fold() {
        let (x, lambda, u) = moore_spence(&Circle, &one(0.02), 0.999, &one(1.0), 1e-13, 20).unwrap();
        assert!(x[0].abs() <= 1e-12);
        assert!((lambda - 1.0).abs() <= 1e-12);
        assert!((u[0].abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fold_bracket_without_sign_change_is_rejected() {
        let settings = TraceSettings::default();
        let a = start_point(&Circle, one(1.0), 0.0).unwrap();
        let err = locate_fold(&Circle, &a, &a, &settings);
        assert!(matches!(err, Err(Error::NoSignChange)));
    }
}
