//! Gait homotopy: move along a gait manifold from a reference gait `a` to a
//! gait that satisfies user constraints `H(c) = 0`.
//!
//! The map `M_a(c) = [P(c); H(c) − p(c) H(a)]` with
//! `p(c) = H(a)ᵀH(c) / H(a)ᵀH(a)` keeps iterates on gaits whose constraint
//! vector is parallel to `H(a)`; the homotopy parameter `p` is driven from
//! 1 to 0 by Newton steps projected onto the tangent space of `M_a`, each
//! globalised by an Armijo line search on `½p²`.
//!
//! Inequalities `q(c) ≥ target` are handled with slack unknowns `s ≥ 0`
//! appended to `c`; integral constraints penalise the negative part of a
//! trajectory function, `∫₀^τ [g(x(t))]⁻ dt`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuation::{cm_step, stack_rows, BoxBounds, CorrectorOptions, ResidualMap};
use crate::dynamics::HybridModel;
use crate::error::{Error, Result};
use crate::hybrid::{self, FlowOptions, GaitPoint, Trajectory};
use crate::linalg::{self, FullSvd};

/// Scalar function of a gait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Walking-surface angle implied by `x0`.
    Slope,
    StepLength,
    StepDuration,
    /// Step length over step duration.
    AverageSpeed,
    /// Control parameter `μ[index]`.
    Parameter,
    /// Pre-impact state component `x0[index]`.
    State,
    /// Swing-foot height above the walking surface, evaluated along the
    /// whole step (integral constraints only).
    FootClearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `q(c) = target`.
    Equality,
    /// `q(c) ≥ target`, through a nonnegative slack.
    AtLeast,
    /// `q(c) ≤ target`, through a nonnegative slack.
    AtMost,
    /// `∫₀^τ [q(x(t)) − target]⁻ dt = 0`.
    Integral,
}

/// One user constraint of a gait query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryConstraint {
    pub quantity: Quantity,
    pub kind: ConstraintKind,
    #[serde(default)]
    pub target: f64,
    #[serde(default)]
    pub index: usize,
}

impl QueryConstraint {
    pub fn equality(quantity: Quantity, target: f64) -> Self {
        Self {
            quantity,
            kind: ConstraintKind::Equality,
            target,
            index: 0,
        }
    }

    fn uses_slack(&self) -> bool {
        matches!(self.kind, ConstraintKind::AtLeast | ConstraintKind::AtMost)
    }

    fn validate(&self, model: &dyn HybridModel) -> Result<()> {
        let dims = model.dims();
        let trajectory_only = self.quantity == Quantity::FootClearance;
        if trajectory_only != (self.kind == ConstraintKind::Integral) {
            return Err(Error::InvalidInput(
                "foot clearance must be used with (and only with) integral constraints".into(),
            ));
        }
        if self.quantity == Quantity::Parameter && self.index >= dims.k {
            return Err(Error::InvalidInput(format!(
                "parameter index {} out of range",
                self.index
            )));
        }
        if self.quantity == Quantity::State && self.index >= 2 * dims.n {
            return Err(Error::InvalidInput(format!(
                "state index {} out of range",
                self.index
            )));
        }
        if !self.target.is_finite() {
            return Err(Error::InvalidInput("non-finite constraint target".into()));
        }
        Ok(())
    }

    /// Value of the gait quantity (not shifted by the target).
    pub fn evaluate(
        &self,
        model: &dyn HybridModel,
        c: &GaitPoint,
        opts: &FlowOptions,
    ) -> Result<f64> {
        let missing = |what: &str| {
            Error::InvalidInput(format!("model {} does not define {what}", model.name()))
        };
        match self.quantity {
            Quantity::Slope => model.slope(&c.x0).ok_or_else(|| missing("a slope")),
            Quantity::StepLength => model
                .step_length(&c.x0)
                .ok_or_else(|| missing("a step length")),
            Quantity::StepDuration => Ok(c.tau),
            Quantity::AverageSpeed => Ok(model
                .step_length(&c.x0)
                .ok_or_else(|| missing("a step length"))?
                / c.tau),
            Quantity::Parameter => Ok(c.mu[self.index]),
            Quantity::State => Ok(c.x0.to_vector()[self.index]),
            Quantity::FootClearance => {
                if model.swing_foot_height(&c.x0, &c.x0).is_none() {
                    return Err(missing("a swing-foot height"));
                }
                let traj = hybrid::trajectory(model, c, opts)?;
                let x0 = c.x0.clone();
                let target = self.target;
                integral_penalty(&traj, |x| {
                    model.swing_foot_height(x, &x0).unwrap_or(0.0) - target
                })
            }
        }
    }

    /// Constraint component `H_i(c, s)`.
    fn component(
        &self,
        model: &dyn HybridModel,
        c: &GaitPoint,
        slack: f64,
        opts: &FlowOptions,
    ) -> Result<f64> {
        let v = self.evaluate(model, c, opts)?;
        Ok(match self.kind {
            ConstraintKind::Equality => v - self.target,
            ConstraintKind::AtLeast => v - self.target - slack,
            ConstraintKind::AtMost => v - self.target + slack,
            ConstraintKind::Integral => v,
        })
    }
}

/// `∫₀^τ [g(x(t))]⁻ dt` (the integral of `min(g, 0)`) over the dense output
/// of a step, by adaptive Simpson quadrature on every integration interval.
pub fn integral_penalty<G>(traj: &Trajectory, g: G) -> Result<f64>
where
    G: Fn(&crate::dynamics::RobotState) -> f64,
{
    const TOL: f64 = 1e-10;
    let f = |t: f64| g(&traj.state_at(t)).min(0.0);
    let times = &traj.solution.times;
    let span = traj.duration().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let tol = TOL * (b - a) / span;
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        if fa == 0.0 && fm == 0.0 && fb == 0.0 {
            continue;
        }
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 30);
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::InvalidInput("integral penalty is not finite".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// A gait query: constraints plus line-search and iteration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitQuery {
    #[serde(rename = "constraint")]
    pub constraints: Vec<QueryConstraint>,
    #[serde(default)]
    pub options: HomotopyOptions,
}

impl GaitQuery {
    pub fn from_toml(text: &str) -> Result<Self> {
        let q: GaitQuery = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if q.constraints.is_empty() {
            return Err(Error::InvalidInput("query has no constraints".into()));
        }
        q.options.validate()?;
        Ok(q)
    }
}

/// Armijo parameters, iteration cap and convergence tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomotopyOptions {
    pub alpha: f64,
    pub beta: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Smallest line-search fraction before the descent is declared stalled.
    pub min_lambda: f64,
    /// Corrector iterations allowed for one line-search trial; a trial
    /// that needs more is rejected like one that fails the decrease test.
    pub trial_iterations: usize,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 0.5,
            max_iterations: 100,
            tolerance: 1e-8,
            min_lambda: 1e-12,
            trial_iterations: 12,
        }
    }
}

impl HomotopyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidInput(
                "Armijo parameters must lie in (0, 1)".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.min_lambda > 0.0)
            || self.max_iterations == 0
            || self.trial_iterations == 0
        {
            return Err(Error::InvalidInput(
                "tolerances and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `[P(c); H(c, s) − p(c, s) H(a)]` on the slack-augmented space.
pub struct HomotopyMap<'m> {
    pub model: &'m dyn HybridModel,
    pub constraints: Vec<QueryConstraint>,
    pub h_ref: DVector<f64>,
    pub opts: FlowOptions,
    slack_slots: Vec<Option<usize>>,
    n_slack: usize,
}

impl<'m> HomotopyMap<'m> {
    /// Map anchored at the gait `reference`, together with the reference's
    /// slack-augmented coordinates.
    pub fn new(
        model: &'m dyn HybridModel,
        constraints: Vec<QueryConstraint>,
        reference: &GaitPoint,
    ) -> Result<(Self, DVector<f64>)> {
        reference.validate(&model.dims())?;
        for c in &constraints {
            c.validate(model)?;
        }
        let mut next = 0;
        let slack_slots = constraints
            .iter()
            .map(|c| {
                c.uses_slack().then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let mut map = Self {
            model,
            constraints,
            h_ref: DVector::zeros(0),
            opts: FlowOptions::default(),
            slack_slots,
            n_slack: next,
        };
        let z = map.augment(reference)?;
        map.h_ref = map.constraint_vector(&z)?;
        Ok((map, z))
    }

    pub fn n_slack(&self) -> usize {
        self.n_slack
    }

    fn space_dim(&self) -> usize {
        self.model.dims().space_dim()
    }

    /// Split an augmented vector into the gait and its slacks.
    pub fn split(&self, z: &DVector<f64>) -> Result<(GaitPoint, DVector<f64>)> {
        let d = self.space_dim();
        let g = GaitPoint::from_vector(&z.rows(0, d).into_owned(), &self.model.dims())?;
        Ok((g, z.rows(d, self.n_slack).into_owned()))
    }

    /// Augment a gait with slacks that make every inequality component of
    /// `H` vanish where the gait already satisfies it.
    pub fn augment(&self, c: &GaitPoint) -> Result<DVector<f64>> {
        let d = self.space_dim();
        let mut z = DVector::zeros(d + self.n_slack);
        z.rows_mut(0, d).copy_from(&c.to_vector());
        for (con, slot) in self.constraints.iter().zip(&self.slack_slots) {
            if let Some(i) = slot {
                let v = con.evaluate(self.model, c, &self.opts)? - con.target;
                z[d + i] = match con.kind {
                    ConstraintKind::AtLeast => v.max(0.0),
                    _ => (-v).max(0.0),
                };
            }
        }
        Ok(z)
    }

    /// Bounds keeping slacks nonnegative.
    pub fn bounds(&self) -> BoxBounds {
        let d = self.space_dim();
        let mut b = BoxBounds::unbounded(d + self.n_slack);
        for i in 0..self.n_slack {
            b.lower[d + i] = 0.0;
        }
        b
    }

    /// `H(c, s)`.
    pub fn constraint_vector(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (g, s) = self.split(z)?;
        let vals = self
            .constraints
            .iter()
            .zip(&self.slack_slots)
            .map(|(con, slot)| {
                con.component(self.model, &g, slot.map_or(0.0, |i| s[i]), &self.opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Central-difference Jacobian of `H`.
    pub fn constraint_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let cols = (0..z.len())
            .map(|i| {
                let h = 1e-6 * z[i].abs().max(1.0);
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                Ok((self.constraint_vector(&zp)? - self.constraint_vector(&zm)?) / (2.0 * h))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    fn ref_norm_sq(&self) -> f64 {
        self.h_ref.norm_squared()
    }

    /// Homotopy parameter `p = H(a)ᵀH / H(a)ᵀH(a)`.
    pub fn homotopy_parameter(&self, h: &DVector<f64>) -> f64 {
        self.h_ref.dot(h) / self.ref_norm_sq()
    }

    /// Projector removing the `H(a)` direction: `G = Π H`, `∂G = Π ∂H`.
    fn projector(&self) -> DMatrix<f64> {
        let m = self.h_ref.len();
        DMatrix::identity(m, m) - &self.h_ref * self.h_ref.transpose() / self.ref_norm_sq()
    }
}

impl ResidualMap for HomotopyMap<'_> {
    fn domain_dim(&self) -> usize {
        self.space_dim() + self.n_slack
    }

    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (g, _) = self.split(z)?;
        let p = hybrid::periodicity_with(self.model, &g, &self.opts)?;
        let h = self.constraint_vector(z)?;
        Ok(stack_rows(&p, &(self.projector() * h)))
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.residual_and_jacobian(z)?.1)
    }

    fn residual_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (g, _) = self.split(z)?;
        let (p, jp) = hybrid::periodicity_and_jacobian(self.model, &g, &self.opts)?;
        let h = self.constraint_vector(z)?;
        let jh = self.constraint_jacobian(z)?;
        let proj = self.projector();
        let rows = p.len() + h.len();
        let mut jac = DMatrix::zeros(rows, z.len());
        jac.view_mut((0, 0), jp.shape()).copy_from(&jp);
        jac.view_mut((p.len(), 0), (h.len(), z.len()))
            .copy_from(&(&proj * jh));
        Ok((stack_rows(&p, &(proj * h)), jac))
    }
}

/// One accepted iterate of the homotopy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyState {
    pub gait: GaitPoint,
    pub slacks: Vec<f64>,
    /// Homotopy parameter at this iterate.
    pub p: f64,
    /// `½p²`.
    pub merit: f64,
    /// Line-search fraction that produced this iterate (1 for the reference).
    pub lambda: f64,
    /// `‖M_a‖` at this iterate.
    pub residual: f64,
    /// `‖∂M_a · d‖ / ‖d‖` for the step direction `d` that led here (0 for
    /// the reference).
    pub direction_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomotopyStatus {
    Converged,
    Stalled,
    IterationLimit,
}

/// Sequence of accepted iterates from the reference gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyPath {
    pub constraints: Vec<QueryConstraint>,
    pub h_reference: Vec<f64>,
    pub states: Vec<HomotopyState>,
    pub status: HomotopyStatus,
    pub diagnostic: Option<String>,
}

impl HomotopyPath {
    pub fn last(&self) -> &HomotopyState {
        self.states.last().expect("path contains the reference")
    }

    pub fn converged(&self) -> bool {
        self.status == HomotopyStatus::Converged
    }

    /// Convert an unsuccessful path into the corresponding error.
    pub fn into_result(self) -> Result<HomotopyPath> {
        let last = self.last();
        let mut v = last.gait.to_vector().iter().copied().collect::<Vec<_>>();
        v.extend(&last.slacks);
        match self.status {
            HomotopyStatus::Converged => Ok(self),
            HomotopyStatus::Stalled => Err(Error::StalledDescent { last: v, p: last.p }),
            HomotopyStatus::IterationLimit => Err(Error::NonConvergence {
                last: v,
                residual: last.p.abs(),
            }),
        }
    }
}

/// Drive the homotopy parameter from 1 to 0 starting at the gait `reference`.
///
/// Returns [`Error::DegenerateReference`] when `H(reference) = 0`; callers
/// that want "already satisfied" semantics check
/// [`reference_satisfies`] first.
pub fn ghm_solve(
    model: &dyn HybridModel,
    constraints: &[QueryConstraint],
    reference: &GaitPoint,
    opts: &HomotopyOptions,
) -> Result<HomotopyPath> {
    opts.validate()?;
    if constraints.is_empty() {
        return Err(Error::InvalidInput("no constraints given".into()));
    }
    let (map, mut z) = HomotopyMap::new(model, constraints.to_vec(), reference)?;
    if map.h_ref.norm() == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let bounds = map.bounds();
    let corrector = CorrectorOptions {
        bounds: Some(bounds),
        max_iter: opts.trial_iterations,
        ..CorrectorOptions::default()
    };

    let state = |z: &DVector<f64>,
                 p: f64,
                 lambda: f64,
                 residual: f64,
                 direction_residual: f64|
     -> Result<HomotopyState> {
        let (g, s) = map.split(z)?;
        Ok(HomotopyState {
            gait: g,
            slacks: s.iter().copied().collect(),
            p,
            merit: 0.5 * p * p,
            lambda,
            residual,
            direction_residual,
        })
    };

    let mut p = 1.0;
    let mut states = vec![state(&z, p, 1.0, map.residual(&z)?.norm(), 0.0)?];
    let mut status = HomotopyStatus::IterationLimit;
    let mut diagnostic = None;

    for _ in 0..opts.max_iterations {
        if p.abs() < opts.tolerance {
            status = HomotopyStatus::Converged;
            break;
        }
        let jac = map.jacobian(&z)?;
        let basis = FullSvd::new(&jac).null_space(linalg::NULL_CUTOFF);
        if basis.ncols() == 0 {
            return Err(Error::NoTangent);
        }
        let jh = map.constraint_jacobian(&z)?;
        let dp = (map.h_ref.transpose() * jh) / map.ref_norm_sq();
        // Minimum-norm solution of the 1 × k_G system `g Δs = −p`.
        let g = (&dp * &basis).transpose();
        let gn = g.norm_squared();
        if !(gn > 0.0) {
            status = HomotopyStatus::Stalled;
            diagnostic = Some("homotopy parameter is stationary on the gait manifold".into());
            break;
        }
        let ds = &g * (-p / gn);
        let direction = &basis * &ds;
        let direction_residual = (&jac * &direction).norm() / direction.norm();
        let slope = g.dot(&ds) * p;
        let f0 = 0.5 * p * p;
        let mut lambda = 1.0;
        let accepted = loop {
            if lambda < opts.min_lambda {
                break None;
            }
            let len = lambda * direction.norm();
            if let Ok(trial) = cm_step(&map, &z, &direction, len, &corrector) {
                let pt = map.homotopy_parameter(&map.constraint_vector(&trial)?);
                if 0.5 * pt * pt - f0 <= opts.alpha * lambda * slope {
                    break Some((trial, pt));
                }
            }
            lambda *= opts.beta;
        };
        match accepted {
            Some((trial, pt)) => {
                z = trial;
                p = pt;
                let r = map.residual(&z)?.norm();
                states.push(state(&z, p, lambda, r, direction_residual)?);
            }
            None => {
                status = HomotopyStatus::Stalled;
                diagnostic = Some(format!(
                    "line search fell below λ = {:e} at p = {p:e}",
                    opts.min_lambda
                ));
                break;
            }
        }
    }
    if status == HomotopyStatus::IterationLimit && p.abs() < opts.tolerance {
        status = HomotopyStatus::Converged;
    }
    if status == HomotopyStatus::IterationLimit {
        diagnostic = Some(format!(
            "|p| = {:e} after {} iterations",
            p.abs(),
            opts.max_iterations
        ));
    }
    Ok(HomotopyPath {
        constraints: constraints.to_vec(),
        h_reference: map.h_ref.iter().copied().collect(),
        states,
        status,
        diagnostic,
    })
}

/// True when the reference already satisfies every constraint (`H(a) = 0`
/// to within `tol`).
pub fn reference_satisfies(
    model: &dyn HybridModel,
    constraints: &[QueryConstraint],
    reference: &GaitPoint,
    tol: f64,
) -> Result<bool> {
    let (map, _) = HomotopyMap::new(model, constraints.to_vec(), reference)?;
    Ok(map.h_ref.norm() <= tol)
}

/// [`ghm_solve`], except that a reference which already satisfies the
/// constraints (to `tol`) is returned unchanged as a converged one-state path.
pub fn solve_query(
    model: &dyn HybridModel,
    constraints: &[QueryConstraint],
    reference: &GaitPoint,
    opts: &HomotopyOptions,
    tol: f64,
) -> Result<HomotopyPath> {
    let (map, z) = HomotopyMap::new(model, constraints.to_vec(), reference)?;
    if map.h_ref.norm() > tol {
        return ghm_solve(model, constraints, reference, opts);
    }
    let (gait, slacks) = map.split(&z)?;
    let residual = hybrid::periodicity_with(model, &gait, &map.opts)?.norm();
    Ok(HomotopyPath {
        constraints: constraints.to_vec(),
        h_reference: map.h_ref.iter().copied().collect(),
        states: vec![HomotopyState {
            gait,
            slacks: slacks.iter().copied().collect(),
            p: 0.0,
            merit: 0.0,
            lambda: 1.0,
            residual,
            direction_residual: 0.0,
        }],
        status: HomotopyStatus::Converged,
        diagnostic: Some("reference already satisfies the constraints".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotState;
    use crate::models::compass::{CompassGait, CompassParams, HipActuation};

    fn passive() -> CompassGait {
        CompassGait::passive(CompassParams::default()).unwrap()
    }

    fn upright(tau: f64, k: usize) -> GaitPoint {
        GaitPoint::new(RobotState::zeros(2), tau, DVector::zeros(k))
    }

    #[test]
    fn reference_has_unit_homotopy_parameter() {
        let p = CompassParams::default();
        let model = CompassGait::actuated(p, HipActuation::for_params(&p)).unwrap();
        let con = QueryConstraint {
            quantity: Quantity::Parameter,
            kind: ConstraintKind::Equality,
            target: 1.5,
            index: 0,
        };
        let (map, z) = HomotopyMap::new(&model, vec![con], &upright(0.4, 1)).unwrap();
        assert_eq!(map.h_ref[0], -1.5);
        assert_eq!(
            map.homotopy_parameter(&map.constraint_vector(&z).unwrap()),
            1.0
        );
        assert!(map.residual(&z).unwrap().norm() < 1e-12);
        // At a root of H the parameter vanishes.
        let mut root = z.clone();
        root[5] = 1.5;
        assert_eq!(
            map.homotopy_parameter(&map.constraint_vector(&root).unwrap()),
            0.0
        );
    }

    #[test]
    fn satisfied_reference_is_degenerate() {
        let model = passive();
        let cons = [QueryConstraint::equality(Quantity::Slope, 0.0)];
        let a = upright(0.5, 0);
        assert!(reference_satisfies(&model, &cons, &a, 1e-12).unwrap());
        assert!(matches!(
            ghm_solve(&model, &cons, &a, &HomotopyOptions::default()),
            Err(Error::DegenerateReference)
        ));
        let path = solve_query(&model, &cons, &a, &HomotopyOptions::default(), 1e-12).unwrap();
        assert!(path.converged());
        assert_eq!(path.states.len(), 1);
        assert_eq!(path.last().gait, a);
    }

    #[test]
    fn step_duration_query_along_equilibria() {
        let model = passive();
        let cons = [QueryConstraint::equality(Quantity::StepDuration, 0.45)];
        let path = ghm_solve(&model, &cons, &upright(0.3, 0), &HomotopyOptions::default()).unwrap();
        assert!(path.converged());
        assert!(path.states.len() <= 4);
        let last = path.last();
        assert!((last.gait.tau - 0.45).abs() < 1e-8);
        assert_eq!(last.gait.x0, RobotState::zeros(2));
        for w in path.states.windows(2) {
            assert!(w[1].merit < w[0].merit);
            assert!(w[1].direction_residual < 1e-8);
        }
    }

    #[test]
    fn slack_constraint_starts_inactive() {
        let model = passive();
        let con = QueryConstraint {
            quantity: Quantity::StepDuration,
            kind: ConstraintKind::AtLeast,
            target: 0.2,
            index: 0,
        };
        let (map, z) = HomotopyMap::new(&model, vec![con], &upright(0.5, 0)).unwrap();
        assert_eq!(map.n_slack(), 1);
        assert!((z[5] - 0.3).abs() < 1e-15);
        assert!(map.constraint_vector(&z).unwrap()[0].abs() < 1e-15);
        assert_eq!(map.bounds().lower[5], 0.0);
    }

    #[test]
    fn rejects_mismatched_constraints() {
        let model = passive();
        let clearance_eq = QueryConstraint::equality(Quantity::FootClearance, 0.0);
        assert!(HomotopyMap::new(&model, vec![clearance_eq], &upright(0.5, 0)).is_err());
        let param = QueryConstraint::equality(Quantity::Parameter, 0.0);
        assert!(HomotopyMap::new(&model, vec![param], &upright(0.5, 0)).is_err());
    }

    fn swinging() -> Trajectory {
        let c = GaitPoint::new(
            RobotState::from_slices(&[0.2, -0.2], &[-1.0, -1.0]),
            0.7,
            DVector::zeros(0),
        );
        hybrid::trajectory(&passive(), &c, &FlowOptions::default()).unwrap()
    }

    #[test]
    fn penalty_vanishes_for_nonnegative_functions() {
        let traj = swinging();
        assert_eq!(integral_penalty(&traj, |x| x.q[0].abs()).unwrap(), 0.0);
    }

    #[test]
    fn penalty_is_linear_in_violation_depth() {
        let traj = swinging();
        let one = integral_penalty(&traj, |x| x.q[0] - 0.1).unwrap();
        let two = integral_penalty(&traj, |x| 2.0 * (x.q[0] - 0.1)).unwrap();
        assert!(one < 0.0);
        assert!((two - 2.0 * one).abs() < 1e-9);
    }

    #[test]
    fn penalty_matches_dense_sampling() {
        let traj = swinging();
        let g = |x: &RobotState| x.q[0] - 0.1;
        let n = 200_000;
        let dt = traj.duration() / n as f64;
        let dense: f64 = (0..n)
            .map(|i| g(&traj.state_at((i as f64 + 0.5) * dt)).min(0.0) * dt)
            .sum();
        let quad = integral_penalty(&traj, g).unwrap();
        assert!((quad - dense).abs() < 1e-8, "{quad} vs {dense}");
    }

    #[test]
    fn query_file_parses() {
        let text = r#"
            [[constraint]]
            quantity = "slope"
            kind = "equality"
            target = 0.0

            [[constraint]]
            quantity = "foot_clearance"
            kind = "integral"

            [options]
            max_iterations = 40
        "#;
        let q = GaitQuery::from_toml(text).unwrap();
        assert_eq!(q.constraints.len(), 2);
        assert_eq!(q.constraints[1].kind, ConstraintKind::Integral);
        assert_eq!(q.options.max_iterations, 40);
        assert_eq!(q.options.alpha, 1e-4);
        assert!(GaitQuery::from_toml("[options]\nalpha = 0.1\n").is_err());
        assert!(GaitQuery::from_toml(
            "[[constraint]]\nquantity = \"slope\"\nkind = \"equality\"\n[options]\nbeta = 2.0\n"
        )
        .is_err());
    }
}
