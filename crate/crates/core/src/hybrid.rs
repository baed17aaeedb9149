//! Hybrid flow and periodicity map.
//!
//! A gait candidate `c = (x0, τ, μ)` starts at the pre-impact state `x0`,
//! applies the impact map, and integrates the constrained dynamics for `τ`
//! seconds. The periodicity residual compares the end state with the
//! relabelled start: `P(c) = φ_μ^τ(x0) − F x0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::ResidualMap;
use crate::dynamics::{DynamicsEvaluation, HybridModel, ModelDims, RobotState, StepContext};
use crate::error::{Error, Result};
use crate::linalg::{self, FullSvd};
use crate::ode::{self, DenseSolution, OdeOptions};

/// A point of the state-time-control space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitPoint {
    pub x0: RobotState,
    pub tau: f64,
    pub mu: DVector<f64>,
}

impl GaitPoint {
    pub fn new(x0: RobotState, tau: f64, mu: DVector<f64>) -> Self {
        Self { x0, tau, mu }
    }

    /// Flattened `[q; q̇; τ; μ]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let x = self.x0.to_vector();
        let n2 = x.len();
        let mut v = DVector::zeros(n2 + 1 + self.mu.len());
        v.rows_mut(0, n2).copy_from(&x);
        v[n2] = self.tau;
        v.rows_mut(n2 + 1, self.mu.len()).copy_from(&self.mu);
        v
    }

    pub fn from_vector(v: &DVector<f64>, dims: &ModelDims) -> Result<Self> {
        if v.len() != dims.space_dim() {
            return Err(Error::InvalidInput(format!(
                "point has length {}, space has dimension {}",
                v.len(),
                dims.space_dim()
            )));
        }
        let n2 = 2 * dims.n;
        Ok(Self {
            x0: RobotState::from_vector(&v.rows(0, n2).into_owned()),
            tau: v[n2],
            mu: v.rows(n2 + 1, dims.k).into_owned(),
        })
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        self.x0.validate(dims.n)?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidInput(format!(
                "step duration {} must be positive",
                self.tau
            )));
        }
        if self.mu.len() != dims.k || self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "parameter vector must be finite with length {}",
                dims.k
            )));
        }
        Ok(())
    }
}

/// Index of `τ` in the flattened point.
pub fn tau_index(dims: &ModelDims) -> usize {
    2 * dims.n
}

/// Integration tolerances and the relative finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub ode: OdeOptions,
    pub fd_step: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            fd_step: 1e-6,
        }
    }
}

/// One integrated step with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub gait: GaitPoint,
    pub x_plus: RobotState,
    pub solution: DenseSolution,
}

impl Trajectory {
    pub fn end_state(&self) -> RobotState {
        RobotState::from_vector(self.solution.final_state())
    }

    pub fn state_at(&self, t: f64) -> RobotState {
        RobotState::from_vector(&self.solution.eval(t))
    }

    pub fn duration(&self) -> f64 {
        self.solution.t_end()
    }

    /// Accelerations, constraint forces and inputs along the trajectory.
    pub fn dynamics_at(
        &self,
        model: &(impl HybridModel + ?Sized),
        t: f64,
    ) -> Result<DynamicsEvaluation> {
        let x = self.state_at(t);
        let ctx = StepContext {
            t,
            tau: self.gait.tau,
            mu: &self.gait.mu,
            x0: &self.gait.x0,
            x_plus: &self.x_plus,
        };
        model.dynamics(&x, &ctx)
    }
}

fn post_impact(model: &(impl HybridModel + ?Sized), c: &GaitPoint) -> Result<RobotState> {
    let imp = model.impact(&c.x0, &c.mu)?;
    Ok(RobotState::new(c.x0.q.clone(), imp.qdot_plus))
}

fn integrate_step(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    c.validate(&model.dims())?;
    let x_plus = post_impact(model, c)?;
    let n = model.dims().n;
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = RobotState::from_vector(y);
        let ctx = StepContext {
            t,
            tau: c.tau,
            mu: &c.mu,
            x0: &c.x0,
            x_plus: &x_plus,
        };
        let eval = model.dynamics(&x, &ctx)?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&x.qdot);
        out.rows_mut(n, n).copy_from(&eval.qddot);
        Ok(out)
    };
    let solution = ode::integrate(rhs, 0.0, &x_plus.to_vector(), t_end, &opts.ode)?;
    Ok(Trajectory {
        gait: c.clone(),
        x_plus,
        solution,
    })
}

/// Impact followed by `τ` seconds of continuous flow.
pub fn flow(model: &(impl HybridModel + ?Sized), c: &GaitPoint) -> Result<RobotState> {
    flow_with(model, c, &FlowOptions::default())
}

pub fn flow_with(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    opts: &FlowOptions,
) -> Result<RobotState> {
    Ok(integrate_step(model, c, c.tau, opts)?.end_state())
}

/// Dense trajectory of one step.
pub fn trajectory(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    integrate_step(model, c, c.tau, opts)
}

/// Apply the left/right relabelling.
pub fn flip(model: &(impl HybridModel + ?Sized), x: &RobotState) -> RobotState {
    RobotState::from_vector(&(model.flip_matrix() * x.to_vector()))
}

/// `P(c) = φ(x0) − F x0`.
pub fn periodicity(model: &(impl HybridModel + ?Sized), c: &GaitPoint) -> Result<DVector<f64>> {
    periodicity_with(model, c, &FlowOptions::default())
}

pub fn periodicity_with(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    opts: &FlowOptions,
) -> Result<DVector<f64>> {
    let end = flow_with(model, c, opts)?.to_vector();
    Ok(end - model.flip_matrix() * c.x0.to_vector())
}

fn vector_field_at(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    t: f64,
    c: &GaitPoint,
    x_plus: &RobotState,
) -> Result<DVector<f64>> {
    let ctx = StepContext {
        t,
        tau: c.tau,
        mu: &c.mu,
        x0: &c.x0,
        x_plus,
    };
    let eval = model.dynamics(x, &ctx)?;
    let n = x.dof();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&x.qdot);
    out.rows_mut(n, n).copy_from(&eval.qddot);
    Ok(out)
}

fn fd_step(rel: f64, value: f64) -> f64 {
    rel * value.abs().max(1.0)
}

/// Residual and `2n × (2n+1+k)` Jacobian of the periodicity map.
///
/// State and parameter columns use central differences of the whole hybrid
/// flow. The `τ` column is the vector field at the end state; when the
/// model's vector field itself depends on `τ` (phase-based controllers) the
/// parametric part is added by a central difference with the integration
/// horizon held fixed.
pub fn periodicity_and_jacobian(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    opts: &FlowOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dims = model.dims();
    let base = trajectory(model, c, opts)?;
    let end = base.end_state();
    let flip = model.flip_matrix();
    let residual = end.to_vector() - &flip * c.x0.to_vector();
    let v = c.to_vector();
    let ti = tau_index(&dims);
    let dim = dims.space_dim();

    let columns: Vec<DVector<f64>> = (0..dim)
        .into_par_iter()
        .map(|i| -> Result<DVector<f64>> {
            if i == ti {
                let mut col = vector_field_at(model, &end, c.tau, c, &base.x_plus)?;
                if model.uses_step_context() {
                    let h = fd_step(opts.fd_step, c.tau);
                    let mut plus = c.clone();
                    plus.tau += h;
                    let mut minus = c.clone();
                    minus.tau -= h;
                    let ep = integrate_step(model, &plus, c.tau, opts)?
                        .end_state()
                        .to_vector();
                    let em = integrate_step(model, &minus, c.tau, opts)?
                        .end_state()
                        .to_vector();
                    col += (ep - em) / (2.0 * h);
                }
                return Ok(col);
            }
            let h = fd_step(opts.fd_step, v[i]);
            let mut vp = v.clone();
            vp[i] += h;
            let mut vm = v.clone();
            vm[i] -= h;
            let rp = periodicity_with(model, &GaitPoint::from_vector(&vp, &dims)?, opts)?;
            let rm = periodicity_with(model, &GaitPoint::from_vector(&vm, &dims)?, opts)?;
            Ok((rp - rm) / (2.0 * h))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((residual, DMatrix::from_columns(&columns)))
}

/// Jacobian of the periodicity map by finite differences.
pub fn jacobian(model: &(impl HybridModel + ?Sized), c: &GaitPoint) -> Result<DMatrix<f64>> {
    Ok(periodicity_and_jacobian(model, c, &FlowOptions::default())?.1)
}

/// Central-difference Jacobian of `g` at `x`, columns evaluated in order.
fn fd_matrix<G>(g: G, x: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(rel, x[i]);
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        cols.push((g(&xp)? - g(&xm)?) / (2.0 * h));
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(g(x)?.len(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Derivative of `x ↦ (q, Δ(x; μ))`, the full-state impact map, by central
/// differences.
pub fn impact_state_jacobian(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    mu: &DVector<f64>,
    opts: &FlowOptions,
) -> Result<DMatrix<f64>> {
    let map = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let xs = RobotState::from_vector(v);
        let imp = model.impact(&xs, mu)?;
        Ok(RobotState::new(xs.q, imp.qdot_plus).to_vector())
    };
    fd_matrix(map, &x.to_vector(), opts.fd_step)
}

/// Periodicity Jacobian from the variational equations of the continuous
/// flow composed with the derivative of the impact map.
///
/// Independent of [`periodicity_and_jacobian`]: no difference of whole
/// flows is taken, only of the vector field and of the algebraic impact.
/// Requires a vector field that does not depend on the step context.
pub fn variational_jacobian(
    model: &(impl HybridModel + ?Sized),
    c: &GaitPoint,
    opts: &FlowOptions,
) -> Result<DMatrix<f64>> {
    if model.uses_step_context() {
        return Err(Error::InvalidInput(
            "variational Jacobian needs a context-free vector field".into(),
        ));
    }
    let dims = model.dims();
    c.validate(&dims)?;
    let n = dims.n;
    let n2 = 2 * n;
    let k = dims.k;
    let rel = opts.fd_step;

    let impact_map = |x: &DVector<f64>, mu: &DVector<f64>| -> Result<DVector<f64>> {
        let xs = RobotState::from_vector(x);
        let imp = model.impact(&xs, mu)?;
        Ok(RobotState::new(xs.q, imp.qdot_plus).to_vector())
    };
    let x0v = c.x0.to_vector();
    let d_impact_x = fd_matrix(|x| impact_map(x, &c.mu), &x0v, rel)?;
    let d_impact_mu = fd_matrix(|m| impact_map(&x0v, m), &c.mu, rel)?;
    let x_plus = post_impact(model, c)?;

    let field = |t: f64, x: &DVector<f64>, mu: &DVector<f64>| -> Result<DVector<f64>> {
        let g = GaitPoint {
            x0: c.x0.clone(),
            tau: c.tau,
            mu: mu.clone(),
        };
        vector_field_at(model, &RobotState::from_vector(x), t, &g, &x_plus)
    };

    let aug_len = n2 + n2 * n2 + n2 * k;
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = y.rows(0, n2).into_owned();
        let phi = DMatrix::from_column_slice(n2, n2, y.rows(n2, n2 * n2).as_slice());
        let psi = DMatrix::from_column_slice(n2, k, y.rows(n2 + n2 * n2, n2 * k).as_slice());
        let fx = field(t, &x, &c.mu)?;
        let a = fd_matrix(|xx| field(t, xx, &c.mu), &x, rel)?;
        let fmu = fd_matrix(|m| field(t, &x, m), &c.mu, rel)?;
        let dphi = &a * phi;
        let dpsi = &a * psi + fmu;
        let mut out = DVector::zeros(aug_len);
        out.rows_mut(0, n2).copy_from(&fx);
        out.rows_mut(n2, n2 * n2)
            .copy_from(&DVector::from_column_slice(dphi.as_slice()));
        out.rows_mut(n2 + n2 * n2, n2 * k)
            .copy_from(&DVector::from_column_slice(dpsi.as_slice()));
        Ok(out)
    };
    let mut y0 = DVector::zeros(aug_len);
    y0.rows_mut(0, n2).copy_from(&x_plus.to_vector());
    let eye = DMatrix::<f64>::identity(n2, n2);
    y0.rows_mut(n2, n2 * n2)
        .copy_from(&DVector::from_column_slice(eye.as_slice()));
    let sol = ode::integrate(rhs, 0.0, &y0, c.tau, &opts.ode)?;
    let y = sol.final_state();
    let end = RobotState::from_vector(&y.rows(0, n2).into_owned());
    let phi = DMatrix::from_column_slice(n2, n2, y.rows(n2, n2 * n2).as_slice());
    let psi = DMatrix::from_column_slice(n2, k, y.rows(n2 + n2 * n2, n2 * k).as_slice());

    let mut jac = DMatrix::zeros(n2, dims.space_dim());
    jac.view_mut((0, 0), (n2, n2))
        .copy_from(&(&phi * d_impact_x - model.flip_matrix()));
    jac.set_column(n2, &vector_field_at(model, &end, c.tau, c, &x_plus)?);
    if k > 0 {
        jac.view_mut((0, n2 + 1), (n2, k))
            .copy_from(&(&phi * d_impact_mu + psi));
    }
    Ok(jac)
}

/// Square block `∂P/∂x0`.
pub fn state_block(jac: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    jac.view((0, 0), (2 * n, 2 * n)).into_owned()
}

/// Orthonormal basis of the null space of a continuation map's Jacobian at
/// `c`; its columns are tangent directions of the solution manifold.
pub fn tangent_basis(map: &(impl ResidualMap + ?Sized), c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let jac = map.jacobian(c)?;
    let basis = FullSvd::new(&jac).null_space(linalg::NULL_CUTOFF);
    if basis.ncols() == 0 {
        return Err(Error::NoTangent);
    }
    Ok(basis)
}
