//! Constrained continuous dynamics and plastic impacts for rigid-body bipeds.
//!
//! Models supply the Lagrangian terms (`M`, `b`, constraint Jacobians, input
//! transmission) through [`HybridModel`]; this module assembles and solves
//! the stacked linear systems
//!
//! ```text
//! [ M   -Jpᵀ  -B ] [ q̈ ]   [ -b          ]
//! [ Jp   0     0 ] [ λ  ] = [ -J̇p q̇      ]
//! [ Jv   0     0 ] [ u  ]   [ VHC target  ]
//! ```
//!
//! and
//!
//! ```text
//! [ M   -Jιᵀ ] [ q̇⁺ ]   [ M q̇ ]
//! [ Jι   0   ] [ ι   ] = [ 0   ]
//! ```
//!
//! with a Moore-Penrose pseudoinverse and an explicit rank check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Configuration and velocity of a biped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn from_slices(q: &[f64], qdot: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
            qdot: DVector::from_column_slice(qdot),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            qdot: DVector::zeros(n),
        }
    }

    /// Stacked `[q; q̇]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.q);
        v.rows_mut(n, n).copy_from(&self.qdot);
        v
    }

    /// Inverse of [`RobotState::to_vector`]; `v` must have even length.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() / 2;
        Self {
            q: v.rows(0, n).into_owned(),
            qdot: v.rows(n, n).into_owned(),
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.q.len() != n || self.qdot.len() != n {
            return Err(Error::InvalidInput(format!(
                "state has dimensions ({}, {}), model expects {n}",
                self.q.len(),
                self.qdot.len()
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidInput("state has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Dimension bookkeeping of a hybrid model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Degrees of freedom carried in the state.
    pub n: usize,
    /// Physical holonomic constraints (explicit or eliminated by coordinates).
    pub n_p: usize,
    /// Virtual holonomic constraints.
    pub n_v: usize,
    /// Actuators.
    pub n_u: usize,
    /// Control/design parameters in `μ`.
    pub k: usize,
}

impl ModelDims {
    /// Dimension of the state-time-control space.
    pub fn space_dim(&self) -> usize {
        2 * self.n + 1 + self.k
    }
}

/// Everything a model may need to evaluate its vector field during one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Time since the impact that started the step.
    pub t: f64,
    /// Step duration.
    pub tau: f64,
    pub mu: &'a DVector<f64>,
    /// Pre-impact state that started the step.
    pub x0: &'a RobotState,
    /// Post-impact state at `t = 0⁺`.
    pub x_plus: &'a RobotState,
}

/// Constraint rows `J q̈ = rhs`.
#[derive(Debug, Clone)]
pub struct ConstraintRows {
    pub jacobian: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl ConstraintRows {
    pub fn empty(n: usize) -> Self {
        Self {
            jacobian: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }
}

/// Solution of the stacked continuous-dynamics system.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEvaluation {
    pub qddot: DVector<f64>,
    /// Physical constraint forces.
    pub lambda: DVector<f64>,
    /// Control inputs.
    pub u: DVector<f64>,
}

/// Solution of the impulse-momentum system.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactEvaluation {
    pub qdot_plus: DVector<f64>,
    pub impulse: DVector<f64>,
}

/// A time-phased Bézier virtual constraint `q_i(t) − b(t/τ, a) = 0`
/// stabilised by `v = (kd/ε) ḣ + (kp/ε²) h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VhcSpec {
    pub joint_index: usize,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub kp: f64,
    pub kd: f64,
    pub epsilon: f64,
}

impl VhcSpec {
    pub fn new(
        joint_index: usize,
        coefficients: Vec<f64>,
        kp: f64,
        kd: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let spec = Self {
            joint_index,
            degree: coefficients.len().saturating_sub(1),
            coefficients,
            kp,
            kd,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::InvalidInput(
                "Bézier degree must be at least 1".into(),
            ));
        }
        if self.coefficients.len() != self.degree + 1 {
            return Err(Error::InvalidInput(format!(
                "degree {} needs {} coefficients, got {}",
                self.degree,
                self.degree + 1,
                self.coefficients.len()
            )));
        }
        if !(self.epsilon > 0.0) || !(self.kp > 0.0) || !(self.kd > 0.0) {
            return Err(Error::InvalidInput(
                "VHC gains and epsilon must be positive".into(),
            ));
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite Bézier coefficient".into()));
        }
        Ok(())
    }

    /// Constraint error `h`, its rate `ḣ`, and the row `J_v q̈ = rhs` that
    /// enforces `ḧ = −v`.
    pub fn constraint_row(
        &self,
        x: &RobotState,
        t: f64,
        tau: f64,
        n: usize,
    ) -> Result<(f64, f64, DVector<f64>, f64)> {
        let theta = (t / tau).clamp(0.0, 1.0);
        let (b, db, ddb) = bezier_eval(self, theta)?;
        let i = self.joint_index;
        let h = x.q[i] - b;
        let hdot = x.qdot[i] - db / tau;
        let v = self.kd / self.epsilon * hdot + self.kp / (self.epsilon * self.epsilon) * h;
        let mut row = DVector::zeros(n);
        row[i] = 1.0;
        Ok((h, hdot, row, ddb / (tau * tau) - v))
    }
}

/// Bernstein-basis polynomial, its first and second derivatives at `theta`,
/// evaluated by de Casteljau's algorithm on the control polygon and its
/// difference polygons.
pub fn bezier_eval(spec: &VhcSpec, theta: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidInput(format!("phase {theta} outside [0, 1]")));
    }
    let a = &spec.coefficients;
    if a.is_empty() {
        return Err(Error::InvalidInput("Bézier without coefficients".into()));
    }
    let d = a.len() - 1;
    let value = de_casteljau(a, theta);
    let first = if d >= 1 {
        let diff: Vec<f64> = a.windows(2).map(|w| d as f64 * (w[1] - w[0])).collect();
        de_casteljau(&diff, theta)
    } else {
        0.0
    };
    let second = if d >= 2 {
        let diff: Vec<f64> = a
            .windows(3)
            .map(|w| (d * (d - 1)) as f64 * (w[2] - 2.0 * w[1] + w[0]))
            .collect();
        de_casteljau(&diff, theta)
    } else {
        0.0
    };
    Ok((value, first, second))
}

fn de_casteljau(points: &[f64], t: f64) -> f64 {
    let mut work = points.to_vec();
    let n = work.len();
    for level in 1..n {
        for i in 0..n - level {
            work[i] = (1.0 - t) * work[i] + t * work[i + 1];
        }
    }
    work[0]
}

/// Biped model interface: Lagrangian terms, constraints, impact and flip.
///
/// All methods must be pure; models are shared between concurrent tracers.
pub trait HybridModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> String;

    fn dims(&self) -> ModelDims;

    fn mass_matrix(&self, q: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64>;

    /// Centrifugal, Coriolis and gravitational terms.
    fn bias_forces(&self, q: &DVector<f64>, qdot: &DVector<f64>, mu: &DVector<f64>)
        -> DVector<f64>;

    fn potential_energy(&self, q: &DVector<f64>, mu: &DVector<f64>) -> f64;

    /// Physical constraints resolved by the stacked solve. Constraints that
    /// the coordinates eliminate are not listed here.
    fn physical_constraints(&self, _q: &DVector<f64>, _qdot: &DVector<f64>) -> ConstraintRows {
        ConstraintRows::empty(self.dims().n)
    }

    /// Transmission matrix `B_v(q)`, `n × n_u`.
    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dims().n, self.dims().n_u)
    }

    /// Open-loop inputs. `None` means the inputs are unknowns of the
    /// stacked system (solved together with the virtual constraints).
    fn prescribed_inputs(&self, _x: &RobotState, _ctx: &StepContext) -> Option<DVector<f64>> {
        None
    }

    fn virtual_constraints(&self, _x: &RobotState, _ctx: &StepContext) -> Result<ConstraintRows> {
        Ok(ConstraintRows::empty(self.dims().n))
    }

    /// Accelerations, constraint forces and inputs at `x`.
    fn dynamics(&self, x: &RobotState, ctx: &StepContext) -> Result<DynamicsEvaluation> {
        solve_constrained(self, x, ctx)
    }

    /// Jacobian mapping velocities to the velocities of the contacts that
    /// are established at impact.
    fn impact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;

    fn impact(&self, x: &RobotState, mu: &DVector<f64>) -> Result<ImpactEvaluation> {
        let m = self.mass_matrix(&x.q, mu);
        let j = self.impact_jacobian(&x.q);
        solve_impact(&m, &j, &x.qdot)
    }

    /// Signed permutation relabelling left and right, `2n × 2n`.
    fn flip_matrix(&self) -> DMatrix<f64>;

    /// Equilibria that are fixed by the flip (seeds for equilibrium gaits).
    fn equilibria(&self) -> Vec<RobotState>;

    /// True when the vector field depends on `τ` or on the pre-impact state
    /// beyond the initial condition (e.g. virtual constraints whose Bézier
    /// boundary coefficients are written in terms of `x0` and `τ`).
    fn uses_step_context(&self) -> bool {
        false
    }

    /// Walking-surface angle implied by a pre-impact state.
    fn slope(&self, _x0: &RobotState) -> Option<f64> {
        None
    }

    /// Distance between the feet at a pre-impact state.
    fn step_length(&self, _x0: &RobotState) -> Option<f64> {
        None
    }

    /// Signed height of the swing foot above the walking surface implied by
    /// the gait's pre-impact state `x0`.
    fn swing_foot_height(&self, _x: &RobotState, _x0: &RobotState) -> Option<f64> {
        None
    }

    /// Contact force component normal to the walking surface implied by
    /// `x0`; positive when the robot pushes on the surface.
    fn normal_contact_force(
        &self,
        _x: &RobotState,
        _eval: &DynamicsEvaluation,
        _x0: &RobotState,
    ) -> Option<f64> {
        None
    }
}

/// Generic solve of the stacked continuous-dynamics system.
pub fn solve_constrained<M: HybridModel + ?Sized>(
    model: &M,
    x: &RobotState,
    ctx: &StepContext,
) -> Result<DynamicsEvaluation> {
    let n = x.dof();
    let mass = model.mass_matrix(&x.q, ctx.mu);
    let mut rhs_dyn = -model.bias_forces(&x.q, &x.qdot, ctx.mu);
    let b_v = model.actuation_matrix(&x.q);
    let prescribed = model.prescribed_inputs(x, ctx);
    if let Some(u) = &prescribed {
        rhs_dyn += &b_v * u;
    }
    let phc = model.physical_constraints(&x.q, &x.qdot);
    let vhc = model.virtual_constraints(x, ctx)?;
    let n_p = phc.len();
    let n_v = vhc.len();
    let n_u_unknown = if prescribed.is_some() { 0 } else { b_v.ncols() };

    if n_p == 0 && n_v == 0 && n_u_unknown == 0 {
        if let Some(chol) = mass.clone().cholesky() {
            let qddot = chol.solve(&rhs_dyn);
            return Ok(DynamicsEvaluation {
                qddot,
                lambda: DVector::zeros(0),
                u: prescribed.unwrap_or_else(|| DVector::zeros(0)),
            });
        }
    }

    let rows = n + n_p + n_v;
    let cols = n + n_p + n_u_unknown;
    let mut a = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    a.view_mut((0, 0), (n, n)).copy_from(&mass);
    if n_p > 0 {
        a.view_mut((0, n), (n, n_p))
            .copy_from(&(-phc.jacobian.transpose()));
        a.view_mut((n, 0), (n_p, n)).copy_from(&phc.jacobian);
        rhs.rows_mut(n, n_p).copy_from(&phc.rhs);
    }
    if n_u_unknown > 0 {
        a.view_mut((0, n + n_p), (n, n_u_unknown))
            .copy_from(&(-&b_v));
    }
    if n_v > 0 {
        a.view_mut((n + n_p, 0), (n_v, n)).copy_from(&vhc.jacobian);
        rhs.rows_mut(n + n_p, n_v).copy_from(&vhc.rhs);
    }
    rhs.rows_mut(0, n).copy_from(&rhs_dyn);

    let (sol, rank) = linalg::pinv_solve(&a, &rhs);
    if rank < rows {
        return Err(Error::SingularDynamics {
            rank,
            required: rows,
            time: None,
        });
    }
    let u = match prescribed {
        Some(u) => u,
        None => sol.rows(n + n_p, n_u_unknown).into_owned(),
    };
    Ok(DynamicsEvaluation {
        qddot: sol.rows(0, n).into_owned(),
        lambda: sol.rows(n, n_p).into_owned(),
        u,
    })
}

/// Plastic impact: post-impact velocity and impulses from the
/// impulse-momentum equations with zero post-impact contact velocity.
pub fn solve_impact(
    mass: &DMatrix<f64>,
    j_iota: &DMatrix<f64>,
    qdot: &DVector<f64>,
) -> Result<ImpactEvaluation> {
    let n = mass.nrows();
    let ni = j_iota.nrows();
    let (_, jrank) = linalg::pinv(j_iota);
    if jrank < ni {
        return Err(Error::SingularImpact {
            rank: jrank,
            required: ni,
        });
    }
    let mut a = DMatrix::zeros(n + ni, n + ni);
    a.view_mut((0, 0), (n, n)).copy_from(mass);
    a.view_mut((0, n), (n, ni))
        .copy_from(&(-j_iota.transpose()));
    a.view_mut((n, 0), (ni, n)).copy_from(j_iota);
    let mut rhs = DVector::zeros(n + ni);
    rhs.rows_mut(0, n).copy_from(&(mass * qdot));
    let (sol, rank) = linalg::pinv_solve(&a, &rhs);
    if rank < n + ni {
        return Err(Error::SingularImpact {
            rank: rank.saturating_sub(n),
            required: ni,
        });
    }
    Ok(ImpactEvaluation {
        qdot_plus: sol.rows(0, n).into_owned(),
        impulse: sol.rows(n, ni).into_owned(),
    })
}

fn check_params(model: &(impl HybridModel + ?Sized), mu: &DVector<f64>) -> Result<()> {
    if mu.len() != model.dims().k {
        return Err(Error::InvalidInput(format!(
            "parameter vector has length {}, model expects {}",
            mu.len(),
            model.dims().k
        )));
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite parameter".into()));
    }
    Ok(())
}

/// Mass matrix at `q`.
pub fn mass_matrix(
    model: &(impl HybridModel + ?Sized),
    q: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.dims().n;
    if q.len() != n || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "configuration must be finite with length n".into(),
        ));
    }
    check_params(model, mu)?;
    Ok(model.mass_matrix(q, mu))
}

pub fn bias_forces(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    x.validate(model.dims().n)?;
    check_params(model, mu)?;
    Ok(model.bias_forces(&x.q, &x.qdot, mu))
}

pub fn constrained_accel(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    ctx: &StepContext,
) -> Result<DynamicsEvaluation> {
    x.validate(model.dims().n)?;
    check_params(model, ctx.mu)?;
    model.dynamics(x, ctx)
}

pub fn impact(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    mu: &DVector<f64>,
) -> Result<ImpactEvaluation> {
    x.validate(model.dims().n)?;
    check_params(model, mu)?;
    model.impact(x, mu)
}

/// Kinetic plus potential energy.
pub fn total_energy(model: &(impl HybridModel + ?Sized), x: &RobotState, mu: &DVector<f64>) -> f64 {
    kinetic_energy(model, x, mu) + model.potential_energy(&x.q, mu)
}

pub fn kinetic_energy(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    mu: &DVector<f64>,
) -> f64 {
    0.5 * x.qdot.dot(&(model.mass_matrix(&x.q, mu) * &x.qdot))
}

/// Vector field `f(x) = (q̇, q̈)` as a stacked vector.
pub fn vector_field(
    model: &(impl HybridModel + ?Sized),
    x: &RobotState,
    ctx: &StepContext,
) -> Result<DVector<f64>> {
    let eval = model.dynamics(x, ctx)?;
    let n = x.dof();
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&x.qdot);
    out.rows_mut(n, n).copy_from(&eval.qddot);
    Ok(out)
}
