//! Planar compass-gait biped: two identical legs joined at a point-mass hip.
//!
//! Leg angles are absolute, measured from the upward vertical, so that the
//! unit vector from foot to hip along leg `i` is `e(q_i) = (−sin q_i, cos q_i)`.
//! During a step the stance leg is leg [`FLOW_STANCE`] (pinned at the origin)
//! and the swing leg is leg [`FLOW_SWING`]. The pre-impact state `x0` of a gait
//! is the relabelled end of the previous step, so in `x0` the roles are
//! reversed: leg [`FLOW_SWING`] is on the ground and leg [`FLOW_STANCE`] lands.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    solve_constrained, solve_impact, ConstraintRows, DynamicsEvaluation, HybridModel,
    ImpactEvaluation, ModelDims, RobotState, StepContext,
};
use crate::error::{Error, Result};

/// Leg that is pinned to the ground while the flow runs.
pub const FLOW_STANCE: usize = 1;
/// Leg that swings while the flow runs.
pub const FLOW_SWING: usize = 0;

/// Masses (kg), lengths (m) and gravity (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompassParams {
    /// Leg point mass.
    pub m: f64,
    /// Hip point mass.
    pub m_h: f64,
    /// Foot to leg mass.
    pub a: f64,
    /// Leg mass to hip.
    pub b: f64,
    pub g: f64,
}

impl Default for CompassParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            m_h: 2.0,
            a: 0.5,
            b: 0.5,
            g: 9.81,
        }
    }
}

impl CompassParams {
    pub fn leg_length(&self) -> f64 {
        self.a + self.b
    }

    pub fn total_mass(&self) -> f64 {
        self.m_h + 2.0 * self.m
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.m, self.m_h, self.a, self.b, self.g]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "compass-gait masses, lengths and gravity must be positive".into(),
            ))
        }
    }

    /// Gravity moment coefficient of the stance leg.
    fn stance_gravity(&self) -> f64 {
        self.g * (self.m * self.a + (self.m_h + self.m) * self.leg_length())
    }
}

/// Prescribed hip torque `u = torque_scale · μ₀ · sin(ω t)` acting on the
/// swing leg, with the reaction on the stance leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HipActuation {
    pub omega: f64,
    pub torque_scale: f64,
}

impl HipActuation {
    /// One torque period per second, normalised by `m a²`.
    pub fn for_params(p: &CompassParams) -> Self {
        Self {
            omega: 2.0 * PI,
            torque_scale: p.m * p.a * p.a,
        }
    }

    pub fn torque(&self, mu0: f64, t: f64) -> f64 {
        self.torque_scale * mu0 * (self.omega * t).sin()
    }
}

pub(crate) fn e(q: f64) -> Vector2<f64> {
    Vector2::new(-q.sin(), q.cos())
}

pub(crate) fn c(q: f64) -> Vector2<f64> {
    Vector2::new(q.cos(), q.sin())
}

/// Hip-torque transmission on `(q1, q2)`: `+u` on the swing leg, `−u` on
/// the stance leg.
pub(crate) fn hip_transmission() -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2, 1);
    b[(FLOW_SWING, 0)] = 1.0;
    b[(FLOW_STANCE, 0)] = -1.0;
    b
}

/// Mass matrix in hip-position-plus-angles coordinates `(x_h, y_h, q1, q2)`.
pub(crate) fn floating_mass(p: &CompassParams, q1: f64, q2: f64) -> DMatrix<f64> {
    let mt = p.total_mass();
    let mb = p.m * p.b;
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 0)] = mt;
    m[(1, 1)] = mt;
    for (col, q) in [(2, q1), (3, q2)] {
        let ci = c(q) * mb;
        m[(0, col)] = ci.x;
        m[(col, 0)] = ci.x;
        m[(1, col)] = ci.y;
        m[(col, 1)] = ci.y;
        m[(col, col)] = mb * p.b;
    }
    m
}

/// Jacobian of the foot of leg `leg` in `(x_h, y_h, q1, q2)` coordinates.
pub(crate) fn foot_jacobian(p: &CompassParams, q: &DVector<f64>, leg: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2, 4);
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    let col = c(q[leg]) * p.leg_length();
    j[(0, 2 + leg)] = col.x;
    j[(1, 2 + leg)] = col.y;
    j
}

/// Plastic impact of leg [`FLOW_STANCE`] while leg [`FLOW_SWING`] is the
/// pivot, solved in hip coordinates and projected back to angles.
pub(crate) fn compass_impact(p: &CompassParams, x: &RobotState) -> Result<ImpactEvaluation> {
    let l = p.leg_length();
    let pivot = FLOW_SWING;
    let hip_vel = -c(x.q[pivot]) * (l * x.qdot[pivot]);
    let mass = floating_mass(p, x.q[0], x.q[1]);
    let j = foot_jacobian(p, &x.q, FLOW_STANCE);
    let v = DVector::from_vec(vec![hip_vel.x, hip_vel.y, x.qdot[0], x.qdot[1]]);
    let full = solve_impact(&mass, &j, &v)?;
    Ok(ImpactEvaluation {
        qdot_plus: full.qdot_plus.rows(2, 2).into_owned(),
        impulse: full.impulse,
    })
}

/// Surface angle through the pre-impact feet: the mean leg angle. Zero at
/// the upright equilibrium and `π` (a ceiling) at the hanging one.
pub fn surface_angle(x0: &RobotState) -> f64 {
    0.5 * (x0.q[0] + x0.q[1])
}

/// Compass gait in minimal (leg angle) coordinates; the stance-foot pin is
/// eliminated by the coordinates and its reaction is reported in `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompassGait {
    pub params: CompassParams,
    pub actuation: Option<HipActuation>,
}

impl CompassGait {
    pub fn passive(params: CompassParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            actuation: None,
        })
    }

    pub fn actuated(params: CompassParams, actuation: HipActuation) -> Result<Self> {
        params.validate()?;
        if !actuation.omega.is_finite() || !actuation.torque_scale.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite actuation parameters".into(),
            ));
        }
        Ok(Self {
            params,
            actuation: Some(actuation),
        })
    }

    /// Pivot reaction force from the accelerations: total momentum rate
    /// plus weight.
    pub fn pivot_force(&self, x: &RobotState, qddot: &DVector<f64>) -> Vector2<f64> {
        let p = &self.params;
        let l = p.leg_length();
        let acc = |q: f64, qd: f64, qdd: f64| -c(q) * qdd - e(q) * (qd * qd);
        let (s, w) = (FLOW_STANCE, FLOW_SWING);
        let acc_s = acc(x.q[s], x.qdot[s], qddot[s]);
        let acc_w = acc(x.q[w], x.qdot[w], qddot[w]);
        acc_s * (p.m * p.a + p.m_h * l + p.m * l) - acc_w * (p.m * p.b)
            + Vector2::new(0.0, p.total_mass() * p.g)
    }
}

impl HybridModel for CompassGait {
    fn name(&self) -> String {
        if self.actuation.is_some() {
            "compass-gait (hip-actuated)".into()
        } else {
            "compass-gait (passive)".into()
        }
    }

    fn dims(&self) -> ModelDims {
        let act = usize::from(self.actuation.is_some());
        ModelDims {
            n: 2,
            n_p: 2,
            n_v: 0,
            n_u: act,
            k: act,
        }
    }

    fn mass_matrix(&self, q: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let l = p.leg_length();
        let (s, w) = (FLOW_STANCE, FLOW_SWING);
        let mut m = DMatrix::zeros(2, 2);
        m[(s, s)] = p.m * p.a * p.a + (p.m_h + p.m) * l * l;
        m[(w, w)] = p.m * p.b * p.b;
        let off = -p.m * l * p.b * (q[s] - q[w]).cos();
        m[(s, w)] = off;
        m[(w, s)] = off;
        m
    }

    fn bias_forces(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        _mu: &DVector<f64>,
    ) -> DVector<f64> {
        let p = &self.params;
        let l = p.leg_length();
        let (s, w) = (FLOW_STANCE, FLOW_SWING);
        let k = p.m * l * p.b * (q[s] - q[w]).sin();
        let mut b = DVector::zeros(2);
        b[s] = -k * qdot[w] * qdot[w] - p.stance_gravity() * q[s].sin();
        b[w] = k * qdot[s] * qdot[s] + p.g * p.m * p.b * q[w].sin();
        b
    }

    fn potential_energy(&self, q: &DVector<f64>, _mu: &DVector<f64>) -> f64 {
        let p = &self.params;
        p.stance_gravity() * q[FLOW_STANCE].cos() - p.g * p.m * p.b * q[FLOW_SWING].cos()
    }

    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        match self.actuation {
            Some(_) => hip_transmission(),
            None => DMatrix::zeros(2, 0),
        }
    }

    fn prescribed_inputs(&self, _x: &RobotState, ctx: &StepContext) -> Option<DVector<f64>> {
        let act = self.actuation?;
        Some(DVector::from_element(1, act.torque(ctx.mu[0], ctx.t)))
    }

    fn dynamics(&self, x: &RobotState, ctx: &StepContext) -> Result<DynamicsEvaluation> {
        let mut eval = solve_constrained(self, x, ctx)?;
        let f = self.pivot_force(x, &eval.qddot);
        eval.lambda = DVector::from_vec(vec![f.x, f.y]);
        Ok(eval)
    }

    fn impact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        foot_jacobian(&self.params, q, FLOW_STANCE)
            .columns(2, 2)
            .into_owned()
    }

    fn impact(&self, x: &RobotState, _mu: &DVector<f64>) -> Result<ImpactEvaluation> {
        compass_impact(&self.params, x)
    }

    fn flip_matrix(&self) -> DMatrix<f64> {
        leg_swap(2, &[(0, 1)])
    }

    fn equilibria(&self) -> Vec<RobotState> {
        vec![
            RobotState::zeros(2),
            RobotState::from_slices(&[PI, PI], &[0.0, 0.0]),
        ]
    }

    fn slope(&self, x0: &RobotState) -> Option<f64> {
        Some(surface_angle(x0))
    }

    fn step_length(&self, x0: &RobotState) -> Option<f64> {
        Some(2.0 * self.params.leg_length() * (0.5 * (x0.q[0] - x0.q[1])).sin().abs())
    }

    fn swing_foot_height(&self, x: &RobotState, x0: &RobotState) -> Option<f64> {
        let sigma = surface_angle(x0);
        let l = self.params.leg_length();
        Some(l * ((x.q[FLOW_STANCE] - sigma).cos() - (x.q[FLOW_SWING] - sigma).cos()))
    }

    fn normal_contact_force(
        &self,
        _x: &RobotState,
        eval: &DynamicsEvaluation,
        x0: &RobotState,
    ) -> Option<f64> {
        let n = e(surface_angle(x0));
        Some(eval.lambda[0] * n.x + eval.lambda[1] * n.y)
    }
}

/// Signed permutation on `[q; q̇]` exchanging the listed coordinate pairs.
pub(crate) fn leg_swap(n: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    for &(i, j) in pairs {
        perm.swap(i, j);
    }
    let mut f = DMatrix::zeros(2 * n, 2 * n);
    for (i, &j) in perm.iter().enumerate() {
        f[(i, j)] = 1.0;
        f[(n + i, n + j)] = 1.0;
    }
    f
}

/// Compass gait in hip-plus-angles coordinates `(x_h, y_h, q1, q2)` with
/// the stance-foot pin enforced as an explicit holonomic constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct CompassGaitContact {
    pub params: CompassParams,
    pub actuation: Option<HipActuation>,
}

impl CompassGaitContact {
    pub fn new(params: CompassParams, actuation: Option<HipActuation>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, actuation })
    }

    /// Floating-base state consistent with a minimal state whose stance foot
    /// sits at the origin.
    pub fn lift(&self, x: &RobotState) -> RobotState {
        let l = self.params.leg_length();
        let s = FLOW_STANCE;
        let hip = e(x.q[s]) * l;
        let hip_vel = -c(x.q[s]) * (l * x.qdot[s]);
        RobotState::from_slices(
            &[hip.x, hip.y, x.q[0], x.q[1]],
            &[hip_vel.x, hip_vel.y, x.qdot[0], x.qdot[1]],
        )
    }
}

impl HybridModel for CompassGaitContact {
    fn name(&self) -> String {
        "compass-gait (floating base)".into()
    }

    fn dims(&self) -> ModelDims {
        let act = usize::from(self.actuation.is_some());
        ModelDims {
            n: 4,
            n_p: 2,
            n_v: 0,
            n_u: act,
            k: act,
        }
    }

    fn mass_matrix(&self, q: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        floating_mass(&self.params, q[2], q[3])
    }

    fn bias_forces(
        &self,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
        _mu: &DVector<f64>,
    ) -> DVector<f64> {
        let p = &self.params;
        let mb = p.m * p.b;
        let mut b = DVector::zeros(4);
        for (col, (qi, qdi)) in [(2, (q[2], qdot[2])), (3, (q[3], qdot[3]))] {
            let cen = e(qi) * (mb * qdi * qdi);
            b[0] += cen.x;
            b[1] += cen.y;
            b[col] = mb * p.g * qi.sin();
        }
        b[1] += p.total_mass() * p.g;
        b
    }

    fn potential_energy(&self, q: &DVector<f64>, _mu: &DVector<f64>) -> f64 {
        let p = &self.params;
        p.g * (p.total_mass() * q[1] - p.m * p.b * (q[2].cos() + q[3].cos()))
    }

    fn physical_constraints(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> ConstraintRows {
        let s = FLOW_STANCE;
        let l = self.params.leg_length();
        let drift = e(q[2 + s]) * (l * qdot[2 + s] * qdot[2 + s]);
        ConstraintRows {
            jacobian: foot_jacobian(&self.params, &q.rows(2, 2).into_owned(), s),
            rhs: DVector::from_vec(vec![-drift.x, -drift.y]),
        }
    }

    fn actuation_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        match self.actuation {
            Some(_) => {
                let mut b = DMatrix::zeros(4, 1);
                b.view_mut((2, 0), (2, 1)).copy_from(&hip_transmission());
                b
            }
            None => DMatrix::zeros(4, 0),
        }
    }

    fn prescribed_inputs(&self, _x: &RobotState, ctx: &StepContext) -> Option<DVector<f64>> {
        let act = self.actuation?;
        Some(DVector::from_element(1, act.torque(ctx.mu[0], ctx.t)))
    }

    fn impact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        foot_jacobian(&self.params, &q.rows(2, 2).into_owned(), FLOW_STANCE)
    }

    fn flip_matrix(&self) -> DMatrix<f64> {
        leg_swap(4, &[(2, 3)])
    }

    fn equilibria(&self) -> Vec<RobotState> {
        let l = self.params.leg_length();
        vec![
            RobotState::from_slices(&[0.0, l, 0.0, 0.0], &[0.0; 4]),
            RobotState::from_slices(&[0.0, -l, PI, PI], &[0.0; 4]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{kinetic_energy, total_energy};

    fn ctx_eval<M: HybridModel>(
        model: &M,
        x: &RobotState,
        mu: &DVector<f64>,
    ) -> DynamicsEvaluation {
        let ctx = StepContext {
            t: 0.1,
            tau: 1.0,
            mu,
            x0: x,
            x_plus: x,
        };
        model.dynamics(x, &ctx).unwrap()
    }

    fn sample_states() -> Vec<RobotState> {
        vec![
            RobotState::from_slices(&[0.3, -0.2], &[0.5, -1.1]),
            RobotState::from_slices(&[-0.7, 0.4], &[-2.0, 0.3]),
            RobotState::from_slices(&[2.9, 3.3], &[0.1, 0.9]),
        ]
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite() {
        let m = CompassGait::passive(CompassParams::default()).unwrap();
        for x in sample_states() {
            let mm = m.mass_matrix(&x.q, &DVector::zeros(0));
            assert_eq!(mm[(0, 1)], mm[(1, 0)]);
            assert!(mm.clone().cholesky().is_some());
        }
    }

    #[test]
    fn minimal_and_floating_forms_agree() {
        let p = CompassParams::default();
        let min = CompassGait::passive(p).unwrap();
        let full = CompassGaitContact::new(p, None).unwrap();
        let mu = DVector::zeros(0);
        for x in sample_states() {
            let a = ctx_eval(&min, &x, &mu);
            let b = ctx_eval(&full, &full.lift(&x), &mu);
            assert!((a.qddot[0] - b.qddot[2]).abs() < 1e-11);
            assert!((a.qddot[1] - b.qddot[3]).abs() < 1e-11);
            assert!((&a.lambda - &b.lambda).norm() < 1e-10);
        }
    }

    #[test]
    fn actuated_forms_agree() {
        let p = CompassParams::default();
        let act = HipActuation::for_params(&p);
        let min = CompassGait::actuated(p, act).unwrap();
        let full = CompassGaitContact::new(p, Some(act)).unwrap();
        let mu = DVector::from_element(1, 3.0);
        for x in sample_states() {
            let a = ctx_eval(&min, &x, &mu);
            let b = ctx_eval(&full, &full.lift(&x), &mu);
            assert!((a.qddot[0] - b.qddot[2]).abs() < 1e-11);
            assert!((a.qddot[1] - b.qddot[3]).abs() < 1e-11);
            assert_eq!(a.u, b.u);
        }
    }

    #[test]
    fn potential_energy_matches_floating_form() {
        let p = CompassParams::default();
        let min = CompassGait::passive(p).unwrap();
        let full = CompassGaitContact::new(p, None).unwrap();
        let mu = DVector::zeros(0);
        for x in sample_states() {
            let lifted = full.lift(&x);
            let e_min = total_energy(&min, &x, &mu);
            let e_full = total_energy(&full, &lifted, &mu);
            assert!(
                (kinetic_energy(&min, &x, &mu) - kinetic_energy(&full, &lifted, &mu)).abs() < 1e-12
            );
            assert!((e_min - e_full).abs() < 1e-12, "{e_min} vs {e_full}");
        }
    }

    #[test]
    fn upright_equilibrium_reaction_is_weight() {
        let m = CompassGait::passive(CompassParams::default()).unwrap();
        let x = RobotState::zeros(2);
        let eval = ctx_eval(&m, &x, &DVector::zeros(0));
        assert_eq!(eval.qddot.norm(), 0.0);
        assert!((eval.lambda[1] - 4.0 * 9.81).abs() < 1e-12);
        assert!(eval.lambda[0].abs() < 1e-12);
    }

    #[test]
    fn impact_pins_landing_foot_and_dissipates() {
        let p = CompassParams::default();
        let m = CompassGait::passive(p).unwrap();
        let mu = DVector::zeros(0);
        let x = RobotState::from_slices(&[0.25, -0.25], &[-1.2, -0.6]);
        let r = m.impact(&x, &mu).unwrap();
        let after = RobotState::new(x.q.clone(), r.qdot_plus.clone());
        // Pre-impact pivot is the flow-swing leg; after impact the other foot is the pivot.
        let full = CompassGaitContact::new(p, None).unwrap();
        let lifted = full.lift(&after);
        let j = foot_jacobian(&p, &after.q, FLOW_STANCE);
        assert!((j * &lifted.qdot).norm() < 1e-12);
        let pre = RobotState::new(x.q.clone(), x.qdot.clone());
        let mut pre_full = full.lift(&pre);
        let hip_vel = -c(x.q[FLOW_SWING]) * (p.leg_length() * x.qdot[FLOW_SWING]);
        pre_full.qdot[0] = hip_vel.x;
        pre_full.qdot[1] = hip_vel.y;
        assert!(kinetic_energy(&full, &lifted, &mu) <= kinetic_energy(&full, &pre_full, &mu));
    }

    #[test]
    fn flip_is_an_involution() {
        let m = CompassGait::passive(CompassParams::default()).unwrap();
        let f = m.flip_matrix();
        assert_eq!(&f * &f, DMatrix::identity(4, 4));
    }

    #[test]
    fn swing_foot_touches_surface_before_impact() {
        let m = CompassGait::passive(CompassParams::default()).unwrap();
        let x0 = RobotState::from_slices(&[0.3, -0.1], &[0.0, 0.0]);
        assert!((m.slope(&x0).unwrap() - 0.1).abs() < 1e-15);
        assert!(m.swing_foot_height(&x0, &x0).unwrap().abs() < 1e-15);
        let mid = RobotState::from_slices(&[0.1, 0.1], &[0.0, 0.0]);
        assert!(m.swing_foot_height(&mid, &x0).unwrap().abs() < 1e-15);
        let lifted = RobotState::from_slices(&[0.3, 0.1], &[0.0, 0.0]);
        assert!(m.swing_foot_height(&lifted, &x0).unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let p = CompassParams {
            m: -1.0,
            ..CompassParams::default()
        };
        assert!(CompassGait::passive(p).is_err());
    }
}
