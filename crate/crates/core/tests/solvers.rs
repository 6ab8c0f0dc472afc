mod common;

use common::{fine_quad, gauss, iid, rad};
use proptest::prelude::*;
use tensorinfo::solvers::{
    self, enumerate_gamma2, enumerate_gamma3, inf_sup2, inf_sup_aux3, rs_free_energy2, rs_free_energy3,
    se_residual, se_step2,
};
use tensorinfo::{Basin, Method, ModelParams, Order, OverlapPoint, Prior, QuadratureConfig, SolverConfig, ThresholdResult, TransitionKind};

// Independent high-precision fixed points (300-node quadrature, scalar root finding).
const RAD2_L2: (f64, f64) = (0.6184475093488229, -0.0825706174109544);
const RAD2_L3: (f64, f64) = (0.8302320034826304, -0.35913454472682815);
const RAD3_L6: (f64, f64) = (0.9740637845249844, -0.9848250582848026);
const RAD3_L6_UNSTABLE: (f64, f64) = (0.2042305120613662, 0.010295496520673547);
// Potential crossing of the gaussian tensor branches, from a dense sweep.
const GAUSS3_LAMBDA_OPT: f64 = 4.367330221857034;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn contains(set: &tensorinfo::CriticalPointSet, target: &OverlapPoint, tol: f64) -> bool {
    set.points.iter().any(|c| c.point.distance(target) <= tol)
}

#[test]
fn se_step_examples() {
    let p = gauss(Order::Two, 4.0);
    let z = se_step2(&p, &OverlapPoint::new2(0.0, 0.0)).unwrap();
    assert_eq!((z.m_u, z.m_v), (0.0, 0.0));
    let a = se_step2(&p, &OverlapPoint::new2(0.75, 0.75)).unwrap();
    assert!((a.m_u - 0.75).abs() < 1e-14 && (a.m_v - 0.75).abs() < 1e-14);
    let b = se_step2(&p, &OverlapPoint::new2(1.0, 1.0)).unwrap();
    assert!((b.m_u - 0.8).abs() < 1e-14 && (b.m_v - 0.8).abs() < 1e-14);
}

#[test]
fn gamma2_sets() {
    let below = enumerate_gamma2(&gauss(Order::Two, 0.5), &cfg()).unwrap();
    assert_eq!(below.len(), 1);
    assert!(contains(&below, &OverlapPoint::new2(0.0, 0.0), 0.0));
    let above = enumerate_gamma2(&gauss(Order::Two, 4.0), &cfg()).unwrap();
    assert_eq!(above.len(), 2);
    assert!(contains(&above, &OverlapPoint::new2(0.75, 0.75), 1e-9));
    let zero = enumerate_gamma2(&rad(Order::Two, 0.0), &cfg()).unwrap();
    assert_eq!(zero.len(), 1);
}

#[test]
fn gamma3_sets() {
    let at4 = enumerate_gamma3(&gauss(Order::Three, 4.0), &cfg()).unwrap();
    assert!(contains(&at4, &OverlapPoint::new3(0.0, 0.0, 0.0), 0.0));
    // Double root: the residual is quadratic in the distance, so the point is only known to ~sqrt(tol).
    assert!(contains(&at4, &OverlapPoint::new3(0.5, 0.5, 0.5), 1e-4));
    let at3 = enumerate_gamma3(&gauss(Order::Three, 3.0), &cfg()).unwrap();
    assert_eq!(at3.len(), 1);
    assert!(!at3.has_nontrivial());
}

#[test]
fn residuals_are_reverified() {
    for p in [rad(Order::Two, 2.5), gauss(Order::Two, 4.0), rad(Order::Three, 6.0)] {
        let c = cfg();
        for pt in solvers::enumerate_gamma_any(&p, &c).unwrap().points {
            assert!(se_residual(&p, &pt.point).unwrap() <= c.tol);
            assert_eq!(pt.basin, Basin::of(&pt.point));
        }
    }
}

#[test]
fn zero_snr_results() {
    for p in [rad(Order::Two, 0.0), gauss(Order::Two, 0.0)] {
        let r = rs_free_energy2(&p, &cfg()).unwrap();
        assert_eq!(r.free_energy, 0.0);
        assert_eq!(r.minimizer.coords(), vec![0.0, 0.0]);
        assert_eq!(inf_sup2(&p, &cfg()).unwrap().free_energy, 0.0);
    }
    let p = rad(Order::Three, 0.0);
    assert_eq!(rs_free_energy3(&p, &cfg()).unwrap().free_energy, 0.0);
    assert_eq!(inf_sup_aux3(&p, &cfg()).unwrap().free_energy, 0.0);
}

#[test]
fn gaussian_matrix() {
    let p = gauss(Order::Two, 4.0);
    let r = rs_free_energy2(&p, &cfg()).unwrap();
    assert!((r.free_energy + 0.4887056388801094).abs() < 1e-12);
    assert!((r.mutual_info_per_n - 1.5112943611198906).abs() < 1e-12);
    assert!(r.minimizer.distance(&OverlapPoint::new2(0.75, 0.75)) < 1e-9);
    assert_eq!(r.method, Method::GammaInf);
    let s = inf_sup2(&p, &cfg()).unwrap();
    assert!((s.free_energy - r.free_energy).abs() <= 1e-6);
    assert_eq!(rs_free_energy2(&gauss(Order::Two, 0.5), &cfg()).unwrap().free_energy, 0.0);
}

#[test]
fn rademacher_matrix_frozen() {
    let c = cfg();
    for (l, (m, f)) in [(2.0, RAD2_L2), (3.0, RAD2_L3)] {
        let p = iid(Order::Two, l, &Prior::rademacher(), fine_quad());
        let r = rs_free_energy2(&p, &c).unwrap();
        assert!((r.free_energy - f).abs() < 1e-10, "{l}: {}", r.free_energy);
        assert!(r.minimizer.distance(&OverlapPoint::new2(m, m)) < 1e-8);
        let s = inf_sup2(&p, &c).unwrap();
        assert!((s.free_energy - f).abs() <= 1e-6);
    }
}

#[test]
fn rademacher_tensor_frozen() {
    let c = cfg();
    let p = iid(Order::Three, 6.0, &Prior::rademacher(), fine_quad());
    let set = enumerate_gamma3(&p, &c).unwrap();
    let (m, f) = RAD3_L6;
    let (mu, fu) = RAD3_L6_UNSTABLE;
    assert!(contains(&set, &OverlapPoint::new3(m, m, m), 1e-8));
    assert!(contains(&set, &OverlapPoint::new3(mu, mu, mu), 1e-8));
    let unstable = set
        .points
        .iter()
        .find(|c| c.point.distance(&OverlapPoint::new3(mu, mu, mu)) < 1e-8)
        .unwrap();
    assert!((unstable.potential - fu).abs() < 1e-10);
    let r = rs_free_energy3(&p, &c).unwrap();
    assert!((r.free_energy - f).abs() < 1e-10);
    let s = inf_sup_aux3(&p, &c).unwrap();
    assert!((s.free_energy - f).abs() <= 1e-6);
    assert_eq!(s.method, Method::AuxInfSup);
}

#[test]
fn gaussian_tensor_agreement() {
    let p = gauss(Order::Three, 4.0);
    let a = rs_free_energy3(&p, &cfg()).unwrap();
    let b = inf_sup_aux3(&p, &cfg()).unwrap();
    assert!((a.free_energy - b.free_energy).abs() <= 1e-6);
}

#[test]
fn thresholds() {
    let c = cfg();
    let t = solvers::find_lambda_opt(&gauss(Order::Two, 1.0), 0.5, 2.0, &c).unwrap();
    assert!((t.lambda_opt().unwrap() - 1.0).abs() <= 1e-3);
    assert!(matches!(t, ThresholdResult::Found { kind: TransitionKind::Continuous, .. }));

    let g = Prior::gaussian(1.0).unwrap();
    let p = ModelParams::new(Order::Two, 1.0, &[1.0, 4.0], &[g.clone(), g.clone()], QuadratureConfig::default()).unwrap();
    let t = solvers::find_lambda_opt(&p, 0.25, 1.0, &c).unwrap();
    assert!((t.lambda_opt().unwrap() - 0.5).abs() <= 1e-3);

    let t = solvers::find_lambda_opt(&gauss(Order::Three, 1.0), 3.0, 6.0, &c).unwrap();
    let e = t.lambda_emergence().unwrap();
    assert!((e - 4.0).abs() <= 1e-3);
    let o = t.lambda_opt().unwrap();
    assert!(o > e);
    assert!((o - GAUSS3_LAMBDA_OPT).abs() <= 1e-3);
    assert!(matches!(t, ThresholdResult::Found { kind: TransitionKind::FirstOrder, .. }));

    let none = solvers::find_lambda_opt(&gauss(Order::Two, 1.0), 0.1, 0.8, &c).unwrap();
    assert!(matches!(none, ThresholdResult::NoTransition { .. }));
}

#[test]
fn sweep_transition() {
    let c = cfg();
    let p = gauss(Order::Two, 0.0);
    let grid: Vec<f64> = (0..=30).map(|i| 0.5 + 0.05 * i as f64).collect();
    let rows = solvers::sweep(&p, &grid, &c).unwrap();
    assert!(rows.windows(2).all(|w| w[0].lambda < w[1].lambda));
    let t = solvers::locate_transition(&p, &rows, &c).unwrap();
    assert!((t.lambda_opt().unwrap() - 1.0).abs() <= 1e-3);
    assert_eq!(rows, solvers::sweep(&p, &grid, &c).unwrap());
}

#[test]
fn damping_invariance() {
    let undamped = SolverConfig { damping: 0.0, ..cfg() };
    for p in [rad(Order::Two, 1.5), rad(Order::Two, 3.0), gauss(Order::Two, 4.0), rad(Order::Three, 6.0)] {
        let a = solvers::rs_free_energy(&p, &cfg()).unwrap();
        let b = solvers::rs_free_energy(&p, &undamped).unwrap();
        assert!((a.free_energy - b.free_energy).abs() <= 1e-8);
        assert!(a.minimizer.distance(&b.minimizer) <= 1e-8);
    }
}

#[test]
fn config_validation() {
    assert!(SolverConfig { damping: 1.0, ..cfg() }.validate().is_err());
    assert!(SolverConfig { tol: 0.0, ..cfg() }.validate().is_err());
    assert!(SolverConfig { init_grid: vec![], ..cfg() }.validate().is_err());
    let text = r#"{"damping": 0.3}"#;
    let c: SolverConfig = serde_json::from_str(text).unwrap();
    assert_eq!(c.damping, 0.3);
    assert_eq!(c.tol, cfg().tol);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matrix_formulas_agree(l in 0.0f64..6.0, au in 0.5f64..2.0, av in 0.5f64..2.0, s in 0.2f64..1.0) {
        let pr = Prior::sparse_rademacher(s).unwrap();
        let p = ModelParams::new(Order::Two, l, &[au, av], &[pr.clone(), pr], QuadratureConfig::default()).unwrap();
        let a = rs_free_energy2(&p, &cfg()).unwrap();
        let b = inf_sup2(&p, &cfg()).unwrap();
        prop_assert!((a.free_energy - b.free_energy).abs() <= 1e-6);
        prop_assert!(a.free_energy <= 1e-15);
        for c in enumerate_gamma2(&p, &cfg()).unwrap().points {
            prop_assert!(c.potential >= a.free_energy);
        }
    }
}
