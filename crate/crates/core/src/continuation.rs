//! Numerical continuation of gait manifolds.
//!
//! Families are seeded at equilibrium gaits where the indicator
//! `I(τ) = det ∂P/∂x0` changes sign, then traced by pseudo-arclength
//! predictor-corrector steps on a continuation map `M(c) = [P(c); Φ(c)]`
//! whose extra rows pin all but one direction of the gait manifold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{HybridModel, ModelDims, RobotState};
use crate::error::{Error, Result};
use crate::hybrid::{self, tau_index, FlowOptions, GaitPoint};
use crate::linalg::{self, FullSvd};

/// A smooth map `ℝ^dim → ℝ^m` with a Jacobian.
pub trait ResidualMap: Sync {
    fn domain_dim(&self) -> usize;

    fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>>;

    /// Defaults to central differences of [`ResidualMap::residual`].
    fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        let cols = (0..c.len())
            .map(|i| {
                let h = 1e-6 * c[i].abs().max(1.0);
                let mut cp = c.clone();
                cp[i] += h;
                let mut cm = c.clone();
                cm[i] -= h;
                Ok((self.residual(&cp)? - self.residual(&cm)?) / (2.0 * h))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    fn residual_and_jacobian(&self, c: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.residual(c)?, self.jacobian(c)?))
    }
}

/// Extra rows appended to the periodicity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// `P` alone.
    Periodicity,
    /// `μ − μ₀`: gaits at fixed control parameters.
    ConstantControl { mu: Vec<f64> },
    /// `τ − t` and `μ_j − υ_j` for `j ≠ free`: gaits at fixed duration with
    /// one control parameter free (`free` is 1-based).
    ConstantTime { free: usize, tau: f64, mu: Vec<f64> },
}

impl MapKind {
    /// Selector rows `S` and targets `r` so that `Φ(c) = S c − r`.
    fn selector(&self, dims: &ModelDims) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let dim = dims.space_dim();
        let mu0 = 2 * dims.n + 1;
        match self {
            MapKind::Periodicity => Ok((DMatrix::zeros(0, dim), DVector::zeros(0))),
            MapKind::ConstantControl { mu } => {
                if mu.len() != dims.k {
                    return Err(Error::InvalidInput(format!(
                        "constant-control map needs {} parameters, got {}",
                        dims.k,
                        mu.len()
                    )));
                }
                let mut s = DMatrix::zeros(dims.k, dim);
                for j in 0..dims.k {
                    s[(j, mu0 + j)] = 1.0;
                }
                Ok((s, DVector::from_column_slice(mu)))
            }
            MapKind::ConstantTime { free, tau, mu } => {
                if *free == 0 || *free > dims.k || mu.len() != dims.k {
                    return Err(Error::InvalidInput(format!(
                        "constant-time map: free index {free} invalid for {} parameters",
                        dims.k
                    )));
                }
                let mut s = DMatrix::zeros(dims.k, dim);
                let mut r = DVector::zeros(dims.k);
                s[(0, tau_index(dims))] = 1.0;
                r[0] = *tau;
                let mut row = 1;
                for j in 0..dims.k {
                    if j + 1 == *free {
                        continue;
                    }
                    s[(row, mu0 + j)] = 1.0;
                    r[row] = mu[j];
                    row += 1;
                }
                Ok((s, r))
            }
        }
    }
}

/// `M(c) = [P(c); Φ(c)]` for a given model.
#[derive(Clone)]
pub struct ContinuationMap<'m> {
    pub model: &'m dyn HybridModel,
    pub kind: MapKind,
    pub opts: FlowOptions,
    selector: DMatrix<f64>,
    target: DVector<f64>,
}

impl std::fmt::Debug for ContinuationMap<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuationMap")
            .field("model", &self.model.name())
            .field("kind", &self.kind)
            .finish()
    }
}

impl<'m> ContinuationMap<'m> {
    pub fn new(model: &'m dyn HybridModel, kind: MapKind) -> Result<Self> {
        Self::with_options(model, kind, FlowOptions::default())
    }

    pub fn with_options(
        model: &'m dyn HybridModel,
        kind: MapKind,
        opts: FlowOptions,
    ) -> Result<Self> {
        let (selector, target) = kind.selector(&model.dims())?;
        Ok(Self {
            model,
            kind,
            opts,
            selector,
            target,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.model.dims()
    }

    fn point(&self, c: &DVector<f64>) -> Result<GaitPoint> {
        GaitPoint::from_vector(c, &self.dims())
    }
}

impl ResidualMap for ContinuationMap<'_> {
    fn domain_dim(&self) -> usize {
        self.dims().space_dim()
    }

    fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let p = hybrid::periodicity_with(self.model, &self.point(c)?, &self.opts)?;
        let extra = &self.selector * c - &self.target;
        Ok(stack_rows(&p, &extra))
    }

    fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.residual_and_jacobian(c)?.1)
    }

    fn residual_and_jacobian(&self, c: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (p, jp) = hybrid::periodicity_and_jacobian(self.model, &self.point(c)?, &self.opts)?;
        let extra = &self.selector * c - &self.target;
        let mut jac = DMatrix::zeros(jp.nrows() + self.selector.nrows(), jp.ncols());
        jac.view_mut((0, 0), jp.shape()).copy_from(&jp);
        jac.view_mut((jp.nrows(), 0), self.selector.shape())
            .copy_from(&self.selector);
        Ok((stack_rows(&p, &extra), jac))
    }
}

pub(crate) fn stack_rows(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Component-wise bounds on the unknowns of a Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn clamp(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

/// Newton-corrector tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub bounds: Option<BoxBounds>,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            bounds: None,
        }
    }
}

/// Converged Newton iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub point: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Residual growth (relative to `1 + ‖r(z0)‖`) at which projected Newton
/// gives up.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Newton's method with pseudoinverse steps, each iterate clamped to the
/// bounds. Stops with an error carrying the last iterate when the
/// iteration stagnates or exhausts `max_iter`.
pub fn projected_newton(
    map: &(impl ResidualMap + ?Sized),
    z0: &DVector<f64>,
    opts: &CorrectorOptions,
) -> Result<NewtonReport> {
    let mut z = z0.clone();
    if let Some(b) = &opts.bounds {
        if b.lower.len() != z.len() || b.upper.len() != z.len() {
            return Err(Error::InvalidInput(
                "bounds do not match the unknowns".into(),
            ));
        }
        b.clamp(&mut z);
    }
    let mut r = map.residual(&z)?;
    let r0 = r.norm();
    for it in 0..opts.max_iter {
        let rn = r.norm();
        if rn < opts.tol {
            return Ok(NewtonReport {
                point: z,
                residual_norm: rn,
                iterations: it,
            });
        }
        let jac = map.jacobian(&z)?;
        let (d, _) = linalg::pinv_solve(&jac, &r);
        let mut next = &z - d;
        if let Some(b) = &opts.bounds {
            b.clamp(&mut next);
        }
        let moved = (&next - &z).norm();
        z = next;
        r = map.residual(&z)?;
        let stagnated = moved <= 1e-15 * (1.0 + z.norm()) && r.norm() >= opts.tol;
        // A residual far above the starting one means Newton has left the
        // basin of attraction; further iterations only cost flows.
        let diverged = !(r.norm() <= DIVERGENCE_FACTOR * (1.0 + r0));
        if stagnated || diverged {
            return Err(Error::NonConvergence {
                last: z.iter().copied().collect(),
                residual: r.norm(),
            });
        }
    }
    let rn = r.norm();
    if rn < opts.tol {
        return Ok(NewtonReport {
            point: z,
            residual_norm: rn,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NonConvergence {
        last: z.iter().copied().collect(),
        residual: rn,
    })
}

/// `[M(z); ċᵀ(z − c) − h]`.
struct Arclength<'a, R: ResidualMap + ?Sized> {
    map: &'a R,
    c: &'a DVector<f64>,
    cdot: &'a DVector<f64>,
    h: f64,
}

impl<R: ResidualMap + ?Sized> ResidualMap for Arclength<'_, R> {
    fn domain_dim(&self) -> usize {
        self.map.domain_dim()
    }

    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.map.residual(z)?;
        let s = self.cdot.dot(&(z - self.c)) - self.h;
        Ok(stack_rows(&r, &DVector::from_element(1, s)))
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = self.map.jacobian(z)?;
        let mut out = DMatrix::zeros(j.nrows() + 1, j.ncols());
        out.view_mut((0, 0), j.shape()).copy_from(&j);
        out.set_row(j.nrows(), &self.cdot.transpose());
        Ok(out)
    }
}

/// One pseudo-arclength step: predictor `c + ċh`, Newton corrector on the
/// hyperplane `ċᵀ(z − c) = h`.
pub fn cm_step(
    map: &(impl ResidualMap + ?Sized),
    c: &DVector<f64>,
    cdot: &DVector<f64>,
    h: f64,
    opts: &CorrectorOptions,
) -> Result<DVector<f64>> {
    let norm = cdot.norm();
    if !(norm > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(
            "step needs a nonzero tangent and finite h".into(),
        ));
    }
    let unit = cdot / norm;
    let aug = Arclength {
        map,
        c,
        cdot: &unit,
        h,
    };
    let z0 = c + &unit * h;
    match projected_newton(&aug, &z0, opts) {
        Ok(rep) => {
            let r = map.residual(&rep.point)?.norm();
            if r < opts.tol {
                Ok(rep.point)
            } else {
                Err(Error::StepFailure {
                    iterations: rep.iterations,
                    residual: r,
                })
            }
        }
        Err(Error::NonConvergence { residual, .. }) => Err(Error::StepFailure {
            iterations: opts.max_iter,
            residual,
        }),
        Err(e) => Err(e),
    }
}

/// Unit tangent at `z` closest to `prev` (the null-space projection of
/// `prev` when the null space has more than one dimension), oriented so
/// that `tᵀ prev ≥ 0`.
pub fn oriented_tangent(
    map: &(impl ResidualMap + ?Sized),
    z: &DVector<f64>,
    prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    let basis = hybrid::tangent_basis(map, z)?;
    let mut t = if basis.ncols() == 1 {
        basis.column(0).into_owned()
    } else {
        let proj = &basis * (basis.transpose() * prev);
        if proj.norm() < 1e-12 {
            basis.column(0).into_owned()
        } else {
            proj
        }
    };
    t /= t.norm();
    if t.dot(prev) < 0.0 {
        t = -t;
    }
    Ok(t)
}

/// Step-size control of [`cm_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub corrector: CorrectorOptions,
    /// Smallest step magnitude tried before giving up.
    pub h_min: f64,
    /// Consecutive successes after which a halved step is doubled again.
    pub restore_after: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            corrector: CorrectorOptions::default(),
            h_min: 1e-6,
            restore_after: 3,
        }
    }
}

/// Ordered points of a traced curve with their tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<DVector<f64>>,
    pub tangents: Vec<DVector<f64>>,
    /// Signed arclength step that produced each point (0 for the seed).
    pub steps: Vec<f64>,
    /// `false` when tracing stopped before the requested count.
    pub complete: bool,
    pub diagnostic: Option<String>,
}

/// Trace up to `count` points from `c0` along `cdot0` with signed nominal
/// step `h`. The seed is the first point. Failed steps are halved down to
/// `h_min`; a partial curve is returned with a diagnostic when that floor
/// is reached or the tangent is lost.
pub fn cm_curve(
    map: &(impl ResidualMap + ?Sized),
    c0: &DVector<f64>,
    cdot0: &DVector<f64>,
    count: usize,
    h: f64,
    opts: &CurveOptions,
) -> Result<Curve> {
    if count == 0 || !(h.abs() > 0.0) {
        return Err(Error::InvalidInput(
            "curve needs count ≥ 1 and nonzero h".into(),
        ));
    }
    let t0 = cdot0 / cdot0.norm();
    let mut curve = Curve {
        points: vec![c0.clone()],
        tangents: vec![t0],
        steps: vec![0.0],
        complete: true,
        diagnostic: None,
    };
    let nominal = h.abs();
    let mut h_cur = h;
    let mut successes = 0;
    while curve.points.len() < count {
        let c = curve.points.last().expect("nonempty").clone();
        let cdot = curve.tangents.last().expect("nonempty").clone();
        let z = loop {
            match cm_step(map, &c, &cdot, h_cur, &opts.corrector) {
                Ok(z) => break Some(z),
                Err(Error::StepFailure { .. })
                | Err(Error::Integration { .. })
                | Err(Error::SingularDynamics { .. }) => {
                    h_cur *= 0.5;
                    successes = 0;
                    if h_cur.abs() < opts.h_min {
                        break None;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let Some(z) = z else {
            curve.complete = false;
            curve.diagnostic = Some(format!(
                "step size fell below {:e} after {} points",
                opts.h_min,
                curve.points.len()
            ));
            break;
        };
        let t = match oriented_tangent(map, &z, &cdot) {
            Ok(t) => t,
            Err(e) => {
                curve.complete = false;
                curve.diagnostic = Some(format!(
                    "tangent lost after {} points: {e}",
                    curve.points.len()
                ));
                break;
            }
        };
        curve.steps.push(h_cur);
        curve.points.push(z);
        curve.tangents.push(t);
        successes += 1;
        if successes >= opts.restore_after && h_cur.abs() < nominal {
            h_cur = (2.0 * h_cur.abs()).min(nominal) * h_cur.signum();
            successes = 0;
        }
    }
    Ok(curve)
}

/// Classification of an indicator scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorStatus {
    /// At least one sign change was found.
    Crossings,
    /// The indicator never changes sign on the interval.
    NoCrossing,
    /// The indicator vanishes identically (below `1e-12`) on the grid.
    ConstantZero,
}

impl IndicatorStatus {
    pub fn remediation(&self) -> &'static str {
        match self {
            IndicatorStatus::Crossings => "none",
            IndicatorStatus::NoCrossing => {
                "the indicator keeps its sign on this interval: widen the step-duration interval, \
                 change physical parameters, or add a control parameter and continue in it"
            }
            IndicatorStatus::ConstantZero => {
                "the periodicity map is singular at every duration, which usually means a \
                 coordinate does not affect the flow (a free or decoupled coordinate): remove or \
                 constrain that coordinate, or add an integral or potential term that couples it"
            }
        }
    }
}

/// A singular equilibrium gait and its non-time tangent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularGait {
    pub point: GaitPoint,
    pub indicator: f64,
    /// Dimension of the null space of `∂P/∂x0`; the tangent space of the
    /// gait set here has one more dimension (the step-duration direction).
    pub null_dim: usize,
    /// Unit tangent `[v; 0; 0]` with `v` spanning (the least-singular
    /// direction of) the null space of `∂P/∂x0`.
    pub tangent: DVector<f64>,
    /// The same direction mapped through the impact derivative: the
    /// tangent of the post-impact state `(q, q̇⁺)` along the branch,
    /// normalized and signed like `tangent`.
    pub post_impact_tangent: DVector<f64>,
    /// Branch switching is only attempted when the tangent space is
    /// two-dimensional (`null_dim == 1`).
    pub switchable: bool,
}

/// Indicator samples, polished roots, and a classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub equilibrium: RobotState,
    pub mu: DVector<f64>,
    pub samples: Vec<(f64, f64)>,
    pub roots: Vec<SingularGait>,
    pub status: IndicatorStatus,
}

impl ScanReport {
    pub fn max_abs_indicator(&self) -> f64 {
        self.samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max)
    }
}

/// `∂P/∂x0` at an equilibrium gait. Uses the variational equations when
/// the vector field is context free (smooth in `τ`), finite differences
/// of the flow otherwise.
pub fn equilibrium_state_jacobian(
    model: &dyn HybridModel,
    x_eq: &RobotState,
    tau: f64,
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let c = GaitPoint::new(x_eq.clone(), tau, mu.clone());
    let opts = FlowOptions::default();
    let jac = if model.uses_step_context() {
        hybrid::periodicity_and_jacobian(model, &c, &opts)?.1
    } else {
        hybrid::variational_jacobian(model, &c, &opts)?
    };
    Ok(hybrid::state_block(&jac, model.dims().n))
}

/// `I(τ) = det ∂P/∂x0` at `(x_eq, τ, μ)`.
pub fn indicator(
    model: &dyn HybridModel,
    x_eq: &RobotState,
    tau: f64,
    mu: &DVector<f64>,
) -> Result<f64> {
    Ok(equilibrium_state_jacobian(model, x_eq, tau, mu)?.determinant())
}

/// Absolute indicator tolerance for a polished root.
pub const ROOT_INDICATOR_TOL: f64 = 1e-10;
/// Bracket width at which root polishing stops.
pub const ROOT_BRACKET_TOL: f64 = 1e-12;
/// Indicator magnitude below which the scan is classified as constant zero.
pub const CONSTANT_ZERO_TOL: f64 = 1e-12;

/// Bisection-safeguarded secant iteration on a sign-changing bracket.
pub fn polish_root<F>(f: F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok((a, fa));
    }
    if fb == 0.0 {
        return Ok((b, fb));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::InvalidInput("bracket does not change sign".into()));
    }
    let mut best = if fa.abs() < fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    // Illinois variant of regula falsi: the retained endpoint's value is
    // halved when the same side is kept twice in a row.
    let mut side = 0i8;
    for _ in 0..200 {
        if best.1.abs() < ROOT_INDICATOR_TOL || (b - a).abs() < ROOT_BRACKET_TOL {
            break;
        }
        let secant = b - fb * (b - a) / (fb - fa);
        let (lo, hi) = (a.min(b), a.max(b));
        let x = if secant.is_finite() && secant > lo && secant < hi {
            secant
        } else {
            0.5 * (a + b)
        };
        let fx = f(x)?;
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx == 0.0 {
            break;
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Ok(best)
}

fn singular_gait(
    model: &dyn HybridModel,
    x_eq: &RobotState,
    tau: f64,
    value: f64,
    mu: &DVector<f64>,
) -> Result<SingularGait> {
    let dims = model.dims();
    let block = equilibrium_state_jacobian(model, x_eq, tau, mu)?;
    let svd = FullSvd::new(&block);
    let null_dim = (2 * dims.n - svd.rank(linalg::NULL_CUTOFF)).max(1);
    let mut v = svd.v.column(2 * dims.n - 1).into_owned();
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v = -v;
    }
    let mut tangent = DVector::zeros(dims.space_dim());
    tangent.rows_mut(0, 2 * dims.n).copy_from(&v);
    let d_impact = hybrid::impact_state_jacobian(model, x_eq, mu, &FlowOptions::default())?;
    let mut w = d_impact * &v;
    let w_norm = w.norm();
    if w_norm > 0.0 {
        w /= w_norm;
    }
    if w.dot(&v) < 0.0 {
        w = -w;
    }
    let mut post_impact_tangent = DVector::zeros(dims.space_dim());
    post_impact_tangent.rows_mut(0, 2 * dims.n).copy_from(&w);
    Ok(SingularGait {
        point: GaitPoint::new(x_eq.clone(), tau, mu.clone()),
        indicator: value,
        null_dim,
        tangent,
        post_impact_tangent,
        switchable: null_dim == 1,
    })
}

/// Sample `I(τ)` on `steps + 1` uniform points of `[a, b]`, polish every
/// sign change, and compute the branch-switching tangent at each root.
pub fn scan_singular(
    model: &dyn HybridModel,
    x_eq: &RobotState,
    mu: &DVector<f64>,
    interval: (f64, f64),
    steps: usize,
) -> Result<ScanReport> {
    let (a, b) = interval;
    if !(a > 0.0 && b > a && a.is_finite() && b.is_finite()) || steps == 0 {
        return Err(Error::InvalidInput(format!(
            "scan interval [{a}, {b}] with {steps} steps is invalid (need 0 < a < b)"
        )));
    }
    let dims = model.dims();
    x_eq.validate(dims.n)?;
    if mu.len() != dims.k {
        return Err(Error::InvalidInput(
            "parameter vector has wrong length".into(),
        ));
    }
    let flip = model.flip_matrix();
    if (&flip * x_eq.to_vector() - x_eq.to_vector()).norm() > 1e-12 {
        return Err(Error::InvalidInput(
            "equilibrium is not fixed by the flip".into(),
        ));
    }

    let grid: Vec<f64> = (0..=steps)
        .map(|i| a + (b - a) * i as f64 / steps as f64)
        .collect();
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&t| indicator(model, x_eq, t, mu))
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();

    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max_abs < CONSTANT_ZERO_TOL {
        return Ok(ScanReport {
            equilibrium: x_eq.clone(),
            mu: mu.clone(),
            samples,
            roots: Vec::new(),
            status: IndicatorStatus::ConstantZero,
        });
    }

    let mut brackets = Vec::new();
    for i in 1..samples.len() {
        let (t0, f0) = samples[i - 1];
        let (t1, f1) = samples[i];
        if f0 == 0.0 || (f0 * f1 < 0.0) {
            brackets.push((t0, f0, t1, f1));
        } else if f1 == 0.0 && i == samples.len() - 1 {
            brackets.push((t1, f1, t1, f1));
        }
    }
    let polished: Vec<(f64, f64)> = brackets
        .par_iter()
        .map(|&(t0, f0, t1, f1)| polish_root(|t| indicator(model, x_eq, t, mu), t0, f0, t1, f1))
        .collect::<Result<Vec<_>>>()?;
    let mut unique: Vec<(f64, f64)> = Vec::new();
    for r in polished {
        if unique.iter().all(|u| (u.0 - r.0).abs() > 1e-9) {
            unique.push(r);
        }
    }
    let roots = unique
        .par_iter()
        .map(|&(t, v)| singular_gait(model, x_eq, t, v, mu))
        .collect::<Result<Vec<_>>>()?;
    let status = if roots.is_empty() {
        IndicatorStatus::NoCrossing
    } else {
        IndicatorStatus::Crossings
    };
    Ok(ScanReport {
        equilibrium: x_eq.clone(),
        mu: mu.clone(),
        samples,
        roots,
        status,
    })
}

/// One traced branch of a gait family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Index of the seed among the scan roots (or the seed gait for
    /// higher-dimensional levels).
    pub seed_index: usize,
    /// Manifold dimension level this curve belongs to (1 for families
    /// traced from singular equilibria).
    pub level: usize,
    /// +1 or −1: sign of the initial tangent.
    pub direction: i8,
    pub map: MapKind,
    pub step_size: f64,
    pub gaits: Vec<GaitPoint>,
    pub complete: bool,
    pub diagnostic: Option<String>,
}

/// Settings for [`build_family`].
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyOptions {
    pub interval: (f64, f64),
    pub scan_steps: usize,
    pub count: usize,
    pub step_size: f64,
    /// Restrict tracing to one scan root.
    pub seed_index: Option<usize>,
    pub curve: CurveOptions,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            interval: (0.1, 1.0),
            scan_steps: 100,
            count: 250,
            step_size: 1.0 / 20.0,
            seed_index: None,
            curve: CurveOptions::default(),
        }
    }
}

/// Scan result plus every branch traced from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitFamily {
    pub scan: ScanReport,
    pub branches: Vec<Branch>,
}

/// Trace one curve of constant-control gaits from a point along `tangent`.
pub fn trace_branch(
    model: &dyn HybridModel,
    seed: &GaitPoint,
    tangent: &DVector<f64>,
    kind: MapKind,
    count: usize,
    h: f64,
    opts: &CurveOptions,
) -> Result<Curve> {
    let map = ContinuationMap::new(model, kind)?;
    cm_curve(&map, &seed.to_vector(), tangent, count, h, opts)
}

fn curve_to_branch(
    dims: &ModelDims,
    curve: Curve,
    seed_index: usize,
    level: usize,
    direction: i8,
    map: MapKind,
    h: f64,
) -> Result<Branch> {
    let gaits = curve
        .points
        .iter()
        .map(|p| GaitPoint::from_vector(p, dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(Branch {
        seed_index,
        level,
        direction,
        map,
        step_size: h,
        gaits,
        complete: curve.complete,
        diagnostic: curve.diagnostic,
    })
}

/// Scan an equilibrium for singular gaits and trace both tangent
/// directions from every switchable root under the constant-control map.
pub fn build_family(
    model: &dyn HybridModel,
    x_eq: &RobotState,
    mu: &DVector<f64>,
    opts: &FamilyOptions,
) -> Result<GaitFamily> {
    let scan = scan_singular(model, x_eq, mu, opts.interval, opts.scan_steps)?;
    let dims = model.dims();
    let mut jobs = Vec::new();
    for (i, root) in scan.roots.iter().enumerate() {
        if opts.seed_index.is_some_and(|s| s != i) || !root.switchable {
            continue;
        }
        for dir in [1i8, -1] {
            jobs.push((i, dir));
        }
    }
    if let Some(s) = opts.seed_index {
        if s >= scan.roots.len() {
            return Err(Error::InvalidInput(format!(
                "seed index {s} out of range ({} singular gaits)",
                scan.roots.len()
            )));
        }
    }
    let kind = MapKind::ConstantControl {
        mu: mu.iter().copied().collect(),
    };
    let branches = jobs
        .par_iter()
        .map(|&(i, dir)| {
            let root = &scan.roots[i];
            let h = opts.step_size.abs() * f64::from(dir);
            let curve = trace_branch(
                model,
                &root.point,
                &root.tangent,
                kind.clone(),
                opts.count,
                h,
                &opts.curve,
            )?;
            curve_to_branch(&dims, curve, i, 1, dir, kind.clone(), h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaitFamily { scan, branches })
}

/// Recursive multi-dimensional continuation from a singular equilibrium.
///
/// Level 0 is the seed itself. Level 1 traces constant-control curves in
/// both directions. Level `d ≥ 2` traces, from every gait of level
/// `d − 1`, a constant-time curve with control parameter `d − 1` free and
/// all others held at the seed gait's values.
pub fn multi_dim(
    model: &dyn HybridModel,
    seed: &SingularGait,
    depth: usize,
    count: usize,
    h: f64,
    opts: &CurveOptions,
) -> Result<Vec<Branch>> {
    let dims = model.dims();
    if depth > dims.k + 1 {
        return Err(Error::InvalidInput(format!(
            "depth {depth} exceeds manifold dimension {}",
            dims.k + 1
        )));
    }
    if depth == 0 {
        return Ok(vec![Branch {
            seed_index: 0,
            level: 0,
            direction: 1,
            map: MapKind::Periodicity,
            step_size: 0.0,
            gaits: vec![seed.point.clone()],
            complete: true,
            diagnostic: None,
        }]);
    }
    let kind = MapKind::ConstantControl {
        mu: seed.point.mu.iter().copied().collect(),
    };
    let level1 = [1i8, -1]
        .par_iter()
        .map(|&dir| {
            let hh = h.abs() * f64::from(dir);
            let curve = trace_branch(
                model,
                &seed.point,
                &seed.tangent,
                kind.clone(),
                count,
                hh,
                opts,
            )?;
            curve_to_branch(&dims, curve, 0, 1, dir, kind.clone(), hh)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = level1.clone();
    let mut previous: Vec<GaitPoint> = level1
        .iter()
        .flat_map(|b| b.gaits.iter().cloned())
        .collect();
    for level in 2..=depth {
        let free = level - 1;
        let jobs: Vec<(usize, i8)> = (0..previous.len())
            .flat_map(|i| [(i, 1i8), (i, -1)])
            .collect();
        let branches = jobs
            .par_iter()
            .map(|&(i, dir)| -> Result<Branch> {
                let g = &previous[i];
                let kind = MapKind::ConstantTime {
                    free,
                    tau: g.tau,
                    mu: g.mu.iter().copied().collect(),
                };
                let map = ContinuationMap::new(model, kind.clone())?;
                let c = g.to_vector();
                let mut reference = DVector::zeros(dims.space_dim());
                reference[2 * dims.n + free] = 1.0;
                let hh = h.abs() * f64::from(dir);
                let tangent = match oriented_tangent(&map, &c, &reference) {
                    Ok(t) => t,
                    Err(e) => {
                        return Ok(Branch {
                            seed_index: i,
                            level,
                            direction: dir,
                            map: kind,
                            step_size: hh,
                            gaits: vec![g.clone()],
                            complete: false,
                            diagnostic: Some(e.to_string()),
                        })
                    }
                };
                let curve = cm_curve(&map, &c, &tangent, count, hh, opts)?;
                curve_to_branch(&dims, curve, i, level, dir, kind, hh)
            })
            .collect::<Result<Vec<_>>>()?;
        previous = branches
            .iter()
            .flat_map(|b| b.gaits.iter().skip(1).cloned())
            .collect();
        all.extend(branches);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle in the plane: one equation, two unknowns.
    struct Circle;

    impl ResidualMap for Circle {
        fn domain_dim(&self) -> usize {
            2
        }
        fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, c[0] * c[0] + c[1] * c[1] - 1.0))
        }
        fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, 2, &[2.0 * c[0], 2.0 * c[1]]))
        }
    }

    #[test]
    fn circle_is_traced_with_constant_chord() {
        let c0 = DVector::from_vec(vec![1.0, 0.0]);
        let t0 = DVector::from_vec(vec![0.0, 1.0]);
        let curve = cm_curve(&Circle, &c0, &t0, 40, 0.1, &CurveOptions::default()).unwrap();
        assert!(curve.complete);
        for p in &curve.points {
            assert!((p.norm() - 1.0).abs() < 1e-10);
        }
        // Successive points turn counter-clockwise.
        for w in curve.points.windows(2) {
            let cross = w[0][0] * w[1][1] - w[0][1] * w[1][0];
            assert!(cross > 0.0);
        }
    }

    #[test]
    fn orientation_survives_negative_step() {
        let c0 = DVector::from_vec(vec![1.0, 0.0]);
        let t0 = DVector::from_vec(vec![0.0, 1.0]);
        let curve = cm_curve(&Circle, &c0, &t0, 10, -0.1, &CurveOptions::default()).unwrap();
        for w in curve.points.windows(2) {
            let cross = w[0][0] * w[1][1] - w[0][1] * w[1][0];
            assert!(cross < 0.0);
        }
    }

    struct Shift;

    impl ResidualMap for Shift {
        fn domain_dim(&self) -> usize {
            1
        }
        fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, c[0] + 1.0))
        }
    }

    #[test]
    fn projected_newton_stops_at_bound() {
        let opts = CorrectorOptions {
            bounds: Some(BoxBounds {
                lower: DVector::from_element(1, 0.0),
                upper: DVector::from_element(1, f64::INFINITY),
            }),
            ..Default::default()
        };
        match projected_newton(&Shift, &DVector::from_element(1, 2.0), &opts) {
            Err(Error::NonConvergence { last, residual }) => {
                assert_eq!(last, vec![0.0]);
                assert!((residual - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// `x + s + 1 = 0` with a slack `s ≥ 0`.
    struct SlackLine;

    impl ResidualMap for SlackLine {
        fn domain_dim(&self) -> usize {
            2
        }
        fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, c[0] + c[1] + 1.0))
        }
    }

    #[test]
    fn projected_newton_solves_linear_map_in_one_step() {
        let r = projected_newton(
            &SlackLine,
            &DVector::from_vec(vec![3.0, -2.0]),
            &CorrectorOptions::default(),
        )
        .unwrap();
        assert!(r.iterations <= 1);
        assert!(r.residual_norm < 1e-10);
    }

    #[test]
    fn slack_bound_is_active_at_solution() {
        let opts = CorrectorOptions {
            bounds: Some(BoxBounds {
                lower: DVector::from_vec(vec![f64::NEG_INFINITY, 0.0]),
                upper: DVector::from_element(2, f64::INFINITY),
            }),
            ..Default::default()
        };
        let r = projected_newton(&SlackLine, &DVector::zeros(2), &opts).unwrap();
        // Closest feasible point to the start: the unconstrained projection
        // (−½, −½) violates s ≥ 0, so the bound is active and x = −1.
        assert_eq!(r.point[1], 0.0);
        assert!((r.point[0] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn polish_finds_simple_root() {
        let f = |t: f64| Ok(t * t - 2.0);
        let (r, v) = polish_root(f, 1.0, -1.0, 2.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-10);
        assert!(v.abs() < ROOT_INDICATOR_TOL);
    }

    #[test]
    fn constant_time_selector_layout() {
        let dims = ModelDims {
            n: 2,
            n_p: 0,
            n_v: 0,
            n_u: 2,
            k: 2,
        };
        let kind = MapKind::ConstantTime {
            free: 2,
            tau: 0.5,
            mu: vec![1.5, 9.0],
        };
        let (s, r) = kind.selector(&dims).unwrap();
        assert_eq!(s.shape(), (2, 7));
        assert_eq!(s[(0, 4)], 1.0);
        assert_eq!(s[(1, 5)], 1.0);
        assert_eq!(r.as_slice(), &[0.5, 1.5]);
        assert!(MapKind::ConstantTime {
            free: 3,
            tau: 0.5,
            mu: vec![0.0, 0.0]
        }
        .selector(&dims)
        .is_err());
    }
}
