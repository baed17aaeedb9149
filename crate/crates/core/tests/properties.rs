use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use gaitcont::continuation::{
    cm_curve, projected_newton, scan_singular, CorrectorOptions, CurveOptions, FamilyOptions,
    MapKind,
};
use gaitcont::dynamics::{bezier_eval, kinetic_energy, total_energy, VhcSpec};
use gaitcont::hybrid::{self, variational_jacobian, FlowOptions};
use gaitcont::models::compass::{CompassGait, CompassParams};
use gaitcont::{
    build_family, ContinuationMap, GaitPoint, HybridModel, ResidualMap, Result, RobotState,
};

fn passive() -> CompassGait {
    CompassGait::passive(CompassParams::default()).unwrap()
}

fn state() -> impl Strategy<Value = RobotState> {
    (-1.2..1.2f64, -1.2..1.2f64, -3.0..3.0f64, -3.0..3.0f64)
        .prop_map(|(a, b, c, d)| RobotState::from_slices(&[a, b], &[c, d]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flip_is_an_involution(x in state()) {
        let m = passive();
        let once = hybrid::flip(&m, &x);
        prop_assert_eq!(hybrid::flip(&m, &once), x);
    }

    #[test]
    fn impact_never_adds_energy(x in state()) {
        let m = passive();
        let mu = DVector::zeros(0);
        let imp = m.impact(&x, &mu);
        prop_assume!(imp.is_ok());
        let after = RobotState::new(x.q.clone(), imp.unwrap().qdot_plus);
        // `x` has leg 0 pivoting; the flow's mass matrix pivots on leg 1.
        let before = kinetic_energy(&m, &hybrid::flip(&m, &x), &mu);
        prop_assert!(kinetic_energy(&m, &after, &mu) <= before * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn mass_matrix_is_spd(x in state()) {
        let mm = passive().mass_matrix(&x.q, &DVector::zeros(0));
        prop_assert!((&mm - mm.transpose()).norm() <= 1e-14 * mm.norm());
        prop_assert!(mm.cholesky().is_some());
    }

    #[test]
    fn bezier_endpoints_and_derivative(coeffs in prop::collection::vec(-2.0..2.0f64, 4..9), theta in 0.01..0.99f64) {
        let d = coeffs.len() - 1;
        let spec = VhcSpec::new(0, coeffs.clone(), 1.0, 2.0, 0.1).unwrap();
        let (b0, db0, _) = bezier_eval(&spec, 0.0).unwrap();
        let (b1, db1, _) = bezier_eval(&spec, 1.0).unwrap();
        prop_assert_eq!(b0, coeffs[0]);
        prop_assert_eq!(b1, coeffs[d]);
        prop_assert!((db0 - d as f64 * (coeffs[1] - coeffs[0])).abs() < 1e-12);
        prop_assert!((db1 - d as f64 * (coeffs[d] - coeffs[d - 1])).abs() < 1e-12);
        let h = 1e-6;
        let (bp, _, _) = bezier_eval(&spec, theta + h).unwrap();
        let (bm, _, _) = bezier_eval(&spec, theta - h).unwrap();
        let (_, db, _) = bezier_eval(&spec, theta).unwrap();
        prop_assert!((db - (bp - bm) / (2.0 * h)).abs() < 1e-7);
    }

    #[test]
    fn gait_point_vector_round_trip(x in state(), tau in 0.1..2.0f64) {
        let m = passive();
        let c = GaitPoint::new(x, tau, DVector::zeros(0));
        prop_assert_eq!(GaitPoint::from_vector(&c.to_vector(), &m.dims()).unwrap(), c);
    }
}

#[test]
fn equilibria_are_gaits_for_every_duration() {
    let m = passive();
    for x in m.equilibria() {
        for i in 0..20 {
            let tau = 0.1 + 0.1 * i as f64;
            let c = GaitPoint::new(x.clone(), tau, DVector::zeros(0));
            let r = hybrid::periodicity(&m, &c).unwrap().norm();
            assert!(r < 1e-10, "τ = {tau}: ‖P‖ = {r}");
        }
    }
}

#[test]
fn jacobian_matches_directional_differences() {
    let m = passive();
    let c = GaitPoint::new(
        RobotState::from_slices(&[0.25, -0.2], &[-1.1, -0.6]),
        0.55,
        DVector::zeros(0),
    );
    let jac: DMatrix<f64> = hybrid::jacobian(&m, &c).unwrap();
    let v = DVector::from_vec(vec![0.3, -0.5, 0.2, 0.7, -0.4]);
    let v = &v / v.norm();
    let eps = 1e-5;
    let dims = m.dims();
    let shifted = |s: f64| -> DVector<f64> {
        let p = GaitPoint::from_vector(&(c.to_vector() + &v * s), &dims).unwrap();
        hybrid::periodicity(&m, &p).unwrap()
    };
    let fd: DVector<f64> = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
    let jv: DVector<f64> = &jac * &v;
    let err = (jv - fd).norm();
    assert!(err < 1e-5, "directional error {err}");
}

#[test]
fn variational_jacobian_agrees_with_differences() {
    let m = passive();
    let c = GaitPoint::new(
        RobotState::from_slices(&[0.15, -0.12], &[-0.8, -0.9]),
        0.7,
        DVector::zeros(0),
    );
    let opts = FlowOptions::default();
    let fd = hybrid::jacobian(&m, &c).unwrap();
    let var = variational_jacobian(&m, &c, &opts).unwrap();
    let err = (&fd - &var).abs().max();
    assert!(err < 1e-4, "max entry difference {err}");
}

#[test]
fn passive_flow_conserves_energy() {
    let m = passive();
    let mu = DVector::zeros(0);
    let c = GaitPoint::new(
        RobotState::from_slices(&[0.2, -0.2], &[-1.0, -0.5]),
        0.8,
        mu.clone(),
    );
    let traj = hybrid::trajectory(&m, &c, &FlowOptions::default()).unwrap();
    let e0 = total_energy(&m, &traj.x_plus, &mu);
    assert!(traj.solution.states.len() > 20);
    let drift = traj
        .solution
        .states
        .iter()
        .map(|v| total_energy(&m, &RobotState::from_vector(v), &mu) - e0)
        .fold(0.0f64, |a, d| a.max(d.abs()));
    assert!(drift < 1e-8, "energy drift {drift}");
}

struct Circle;

impl ResidualMap for Circle {
    fn domain_dim(&self) -> usize {
        2
    }
    fn residual(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, c.norm_squared() - 1.0))
    }
    fn jacobian(&self, c: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(1, 2, &[2.0 * c[0], 2.0 * c[1]]))
    }
}

#[test]
fn circle_stays_on_circle_for_a_thousand_steps() {
    let curve = cm_curve(
        &Circle,
        &DVector::from_vec(vec![1.0, 0.0]),
        &DVector::from_vec(vec![0.0, 1.0]),
        1001,
        0.05,
        &CurveOptions::default(),
    )
    .unwrap();
    assert!(curve.complete);
    let worst = curve
        .points
        .iter()
        .map(|p| (p.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "off-circle error {worst}");
    // Counter-clockwise throughout: the angle never moves backwards.
    for w in curve.points.windows(2) {
        assert!(w[0][0] * w[1][1] - w[0][1] * w[1][0] > 0.0);
    }
}

fn short_family(count: usize) -> gaitcont::continuation::GaitFamily {
    let m = passive();
    let opts = FamilyOptions {
        count,
        ..FamilyOptions::default()
    };
    build_family(&m, &RobotState::zeros(2), &DVector::zeros(0), &opts).unwrap()
}

#[test]
fn branches_are_gaits_with_changing_slope() {
    let m = passive();
    let family = short_family(30);
    assert_eq!(family.branches.len(), 4);
    for b in &family.branches {
        assert!(b.complete, "{:?}", b.diagnostic);
        assert_eq!(b.gaits.len(), 30);
        for g in &b.gaits {
            assert!(hybrid::periodicity(&m, g).unwrap().norm() < 1e-8);
        }
        let slopes: Vec<f64> = b.gaits.iter().map(|g| m.slope(&g.x0).unwrap()).collect();
        // Symmetric seeds leave the slope quadratic in arclength, so the
        // first steps are small but must still grow away from level ground.
        assert!(slopes[1..].iter().all(|s| s.abs() > 1e-10));
        for w in slopes.windows(2) {
            assert!(w[1].abs() > w[0].abs());
        }
        // A leading step of `h = 1/20` changes the slope by less than `h`.
        for w in slopes.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.05);
        }
    }
}

#[test]
fn mirrored_gaits_repolish() {
    let m = passive();
    let family = short_family(20);
    let map = ContinuationMap::new(&m, MapKind::Periodicity).unwrap();
    for b in &family.branches {
        let g = b.gaits.last().unwrap();
        let x = RobotState::new(-&g.x0.q, -&g.x0.qdot);
        let mirrored = GaitPoint::new(x, g.tau, g.mu.clone());
        let r =
            projected_newton(&map, &mirrored.to_vector(), &CorrectorOptions::default()).unwrap();
        assert!(r.residual_norm < 1e-8);
        let back = GaitPoint::from_vector(&r.point, &m.dims()).unwrap();
        assert!((m.slope(&back.x0).unwrap() + m.slope(&g.x0).unwrap()).abs() < 1e-3);
    }
}

#[test]
fn scans_and_families_are_deterministic() {
    let m = passive();
    let a = scan_singular(
        &m,
        &RobotState::zeros(2),
        &DVector::zeros(0),
        (0.1, 1.0),
        100,
    )
    .unwrap();
    let b = scan_singular(
        &m,
        &RobotState::zeros(2),
        &DVector::zeros(0),
        (0.1, 1.0),
        100,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(short_family(8), short_family(8));
}

#[test]
fn hanging_equilibrium_scan_reports_its_roots() {
    let m = passive();
    let hanging = m.equilibria().into_iter().nth(1).unwrap();
    let scan = scan_singular(&m, &hanging, &DVector::zeros(0), (0.1, 1.0), 100).unwrap();
    for root in &scan.roots {
        assert!(root.indicator.abs() < 1e-10 || root.null_dim >= 1);
        assert!((root.tangent.norm() - 1.0).abs() < 1e-12);
    }
}
