//! Compass gait whose swing leg is driven by a hip-torque virtual
//! constraint `q_w(t) = b(t/τ, a)`.
//!
//! The four boundary coefficients of the Bézier are written in terms of the
//! gait point: `a₀, a₁` match the post-impact swing position and velocity,
//! `a_{d−1}, a_d` match the swing position and velocity the flip demands at
//! `t = τ`. The `d − 3` interior coefficients are offsets (the entries of `μ`)
//! from the midpoint of `a₁` and `a_{d−1}`, so `μ = 0` keeps both equilibria
//! stationary for every `τ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::compass::{
    compass_impact, foot_jacobian, hip_transmission, leg_swap, surface_angle, CompassGait,
    CompassParams, FLOW_STANCE, FLOW_SWING,
};
use crate::dynamics::{
    solve_constrained, ConstraintRows, DynamicsEvaluation, HybridModel, ImpactEvaluation,
    ModelDims, RobotState, StepContext, VhcSpec,
};
use crate::error::{Error, Result};

/// Bézier degree and stabilising gains of the swing-leg constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VhcGains {
    pub degree: usize,
    pub kp: f64,
    pub kd: f64,
    pub epsilon: f64,
}

impl Default for VhcGains {
    fn default() -> Self {
        Self {
            degree: 4,
            kp: 1.0,
            kd: 2.0,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompassGaitVhc {
    passive: CompassGait,
    pub gains: VhcGains,
}

impl CompassGaitVhc {
    pub fn new(params: CompassParams, gains: VhcGains) -> Result<Self> {
        if gains.degree < 3 {
            return Err(Error::InvalidInput(
                "virtual-constraint degree must be at least 3 (four boundary coefficients)".into(),
            ));
        }
        let model = Self {
            passive: CompassGait::passive(params)?,
            gains,
        };
        model.spec(vec![0.0; gains.degree + 1])?;
        Ok(model)
    }

    pub fn params(&self) -> &CompassParams {
        &self.passive.params
    }

    fn spec(&self, coefficients: Vec<f64>) -> Result<VhcSpec> {
        VhcSpec::new(
            FLOW_SWING,
            coefficients,
            self.gains.kp,
            self.gains.kd,
            self.gains.epsilon,
        )
    }

    /// Bézier coefficients for one step.
    pub fn coefficients(&self, ctx: &StepContext) -> Vec<f64> {
        let d = self.gains.degree;
        let df = d as f64;
        let w = FLOW_SWING;
        // The flip swaps the legs, so the swing target at `τ` is leg
        // `FLOW_STANCE` of `x0`.
        let a0 = ctx.x_plus.q[w];
        let a1 = a0 + ctx.tau * ctx.x_plus.qdot[w] / df;
        let ad = ctx.x0.q[FLOW_STANCE];
        let ad1 = ad - ctx.tau * ctx.x0.qdot[FLOW_STANCE] / df;
        let mid = 0.5 * (a1 + ad1);
        let mut a = vec![0.0; d + 1];
        a[0] = a0;
        a[1] = a1;
        a[d - 1] = ad1;
        a[d] = ad;
        for (aj, m) in a[2..d - 1].iter_mut().zip(ctx.mu.iter()) {
            *aj = mid + m;
        }
        a
    }
}

impl HybridModel for CompassGaitVhc {
    fn name(&self) -> String {
        format!(
            "compass-gait (swing-leg virtual constraint, degree {})",
            self.gains.degree
        )
    }

    fn dims(&self) -> ModelDims {
        ModelDims {
            n: 2,
            n_p: 2,
            n_v: 1,
            n_u: 1,
            k: self.gains.degree - 3,
        }
    }

    fn mass_matrix(&self, q: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        self.passive.mass_matrix(q, mu)
    }

    fn bias_forces(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DVector<f64> {
        self.passive.bias_forces(q, qdot, mu)
    }

    fn potential_energy(&self, q: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        self.passive.potential_energy(q, mu)
    }

    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        hip_transmission()
    }

    fn virtual_constraints(&self, x: &RobotState, ctx: &StepContext) -> Result<ConstraintRows> {
        let spec = self.spec(self.coefficients(ctx))?;
        let (_, _, row, rhs) = spec.constraint_row(x, ctx.t, ctx.tau, 2)?;
        Ok(ConstraintRows {
            jacobian: DMatrix::from_row_slice(1, 2, row.as_slice()),
            rhs: DVector::from_element(1, rhs),
        })
    }

    fn dynamics(&self, x: &RobotState, ctx: &StepContext) -> Result<DynamicsEvaluation> {
        let mut eval = solve_constrained(self, x, ctx)?;
        let f = self.passive.pivot_force(x, &eval.qddot);
        eval.lambda = DVector::from_vec(vec![f.x, f.y]);
        Ok(eval)
    }

    fn impact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        foot_jacobian(self.params(), q, FLOW_STANCE)
            .columns(2, 2)
            .into_owned()
    }

    fn impact(&self, x: &RobotState, _mu: &DVector<f64>) -> Result<ImpactEvaluation> {
        compass_impact(self.params(), x)
    }

    fn flip_matrix(&self) -> DMatrix<f64> {
        leg_swap(2, &[(0, 1)])
    }

    fn equilibria(&self) -> Vec<RobotState> {
        self.passive.equilibria()
    }

    fn uses_step_context(&self) -> bool {
        true
    }

    fn slope(&self, x0: &RobotState) -> Option<f64> {
        Some(surface_angle(x0))
    }

    fn step_length(&self, x0: &RobotState) -> Option<f64> {
        self.passive.step_length(x0)
    }

    fn swing_foot_height(&self, x: &RobotState, x0: &RobotState) -> Option<f64> {
        self.passive.swing_foot_height(x, x0)
    }

    fn normal_contact_force(
        &self,
        x: &RobotState,
        eval: &DynamicsEvaluation,
        x0: &RobotState,
    ) -> Option<f64> {
        self.passive.normal_contact_force(x, eval, x0)
    }
}
