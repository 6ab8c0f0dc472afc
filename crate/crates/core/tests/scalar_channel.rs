mod common;

use common::{fine_quad, quantized_gaussian};
use proptest::prelude::*;
use tensorinfo::{Error, Prior, QuadratureConfig, ScalarChannel};

// Frozen from an independent 300-node Gauss-Hermite evaluation.
const F_RAD_1: f64 = -0.16316917965316824;
const Q_RAD_4: f64 = 0.9314025912099664;
// 1e7-sample Monte Carlo estimate of 1/2 - E ln cosh(1 + Z) and its standard error.
const F_RAD_1_MC: (f64, f64) = (-0.163167349, 0.000204);

fn rad() -> ScalarChannel {
    ScalarChannel::with_default_quadrature(Prior::rademacher()).unwrap()
}

fn gauss(rho: f64) -> ScalarChannel {
    ScalarChannel::with_default_quadrature(Prior::gaussian(rho).unwrap()).unwrap()
}

#[test]
fn zero_snr() {
    for p in [Prior::rademacher(), Prior::sparse_rademacher(0.25).unwrap(), Prior::gaussian(2.0).unwrap()] {
        let c = ScalarChannel::with_default_quadrature(p.clone()).unwrap();
        let m = c.moments(0.0).unwrap();
        assert_eq!(m.free_energy, 0.0);
        assert_eq!(m.overlap, 0.0);
        assert_eq!(m.mutual_info, 0.0);
        assert!((m.mmse - p.second_moment()).abs() < 1e-15);
    }
}

#[test]
fn gaussian_closed_forms() {
    let g = gauss(1.0);
    assert!((g.free_energy(1.0).unwrap() - (0.5 * 2f64.ln() - 0.5)).abs() < 1e-14);
    assert!((g.overlap(1.0).unwrap() - 0.5).abs() < 1e-14);
    assert!((g.mmse(1.0).unwrap() - 0.5).abs() < 1e-14);
    assert!((g.mutual_info(3.0).unwrap() - 2f64.ln()).abs() < 1e-14);
}

#[test]
fn quantized_gaussian_matches_closed_form_at_unit_snr() {
    let q = ScalarChannel::with_default_quadrature(quantized_gaussian(1.0, 2001, 10.0)).unwrap();
    let f = q.free_energy(1.0).unwrap();
    assert!((f - (0.5 * 2f64.ln() - 0.5)).abs() < 1e-6, "{f}");
}

#[test]
fn rademacher_values() {
    let fine = ScalarChannel::new(Prior::rademacher(), fine_quad()).unwrap();
    assert!((fine.free_energy(1.0).unwrap() - F_RAD_1).abs() < 1e-12);
    assert!((fine.overlap(4.0).unwrap() - Q_RAD_4).abs() < 1e-11);
    let f = rad().free_energy(1.0).unwrap();
    assert!((f - F_RAD_1_MC.0).abs() <= 3.0 * F_RAD_1_MC.1);
    assert!((f - F_RAD_1).abs() < 1e-9);
}

#[test]
fn perfect_recovery_limit() {
    let r = rad();
    let m = r.moments(1e4).unwrap();
    assert!((m.overlap - 1.0).abs() < 1e-3);
    assert!(m.mmse < 1e-3);
    assert!((m.mutual_info - 2f64.ln()).abs() < 1e-3);
}

#[test]
fn invalid_inputs() {
    let r = rad();
    assert!(matches!(r.free_energy(-1.0), Err(Error::Domain(_))));
    assert!(matches!(r.overlap(f64::NAN), Err(Error::Domain(_))));
    let bad = QuadratureConfig {
        hermite_nodes: 0,
        log_domain: true,
    };
    assert!(ScalarChannel::new(Prior::rademacher(), bad).is_err());
}

#[test]
fn self_check_is_quiet_on_smooth_cases() {
    let e = rad().evaluate_checked(2.0).unwrap();
    assert!(e.accuracy_warning.is_none());
    assert!((e.overlap + e.mmse - 1.0).abs() < 1e-14);
}

#[test]
fn concavity_on_uniform_grid() {
    for c in [rad(), ScalarChannel::with_default_quadrature(Prior::sparse_rademacher(0.25).unwrap()).unwrap()] {
        let f: Vec<f64> = (0..=200).map(|i| c.free_energy(0.05 * i as f64).unwrap()).collect();
        for w in f.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-8);
        }
    }
}

fn channels() -> Vec<ScalarChannel> {
    vec![
        rad(),
        ScalarChannel::with_default_quadrature(Prior::sparse_rademacher(0.25).unwrap()).unwrap(),
        ScalarChannel::with_default_quadrature(Prior::discrete(&[(-1.0, 0.3), (0.5, 0.2), (2.0, 0.5)]).unwrap())
            .unwrap(),
    ]
}

fn fine_channels() -> Vec<ScalarChannel> {
    let q = QuadratureConfig {
        hermite_nodes: 401,
        log_domain: true,
    };
    channels()
        .into_iter()
        .map(|c| ScalarChannel::new(c.prior().clone(), q).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn derivative_consistency(e in -3.0f64..(20f64.log10()), which in 0usize..3) {
        let m = 10f64.powf(e);
        let c = &channels()[which];
        let h = 1e-4 * m.max(1.0);
        let fd = (c.free_energy(m + h).unwrap() - c.free_energy(m - h).unwrap()) / (2.0 * h);
        prop_assert!((c.overlap(m).unwrap() + 2.0 * fd).abs() <= 1e-5);
    }

    #[test]
    fn monotone_in_snr(a in 0.0f64..20.0, d in 1e-3f64..5.0, which in 0usize..3) {
        let c = &channels()[which];
        let (x, y) = (c.moments(a).unwrap(), c.moments(a + d).unwrap());
        prop_assert!(y.free_energy <= x.free_energy + 1e-10);
        prop_assert!(y.overlap >= x.overlap - 1e-8);
    }

    // The tanh integrand steepens with m; 127 nodes leave ~1e-6 here, 401 reach 1e-9.
    #[test]
    fn nishimori_and_range(m in 0.0f64..30.0, which in 0usize..3) {
        let c = &fine_channels()[which];
        let r = c.moments(m).unwrap();
        prop_assert!((r.overlap - r.overlap_replica).abs() <= 1e-8);
        if c.prior().mean() == 0.0 {
            prop_assert!(r.overlap >= -1e-12 && r.overlap <= c.rho() + 1e-12);
        }
    }

    #[test]
    fn gaussian_closed_form(m in 0.0f64..10.0, rho in 0.2f64..3.0) {
        let c = gauss(rho);
        let exact = 0.5 * (1.0 + m * rho).ln() - 0.5 * m * rho;
        prop_assert!((c.free_energy(m).unwrap() - exact).abs() <= 1e-12);
        prop_assert!((c.overlap(m).unwrap() - m * rho * rho / (1.0 + m * rho)).abs() <= 1e-12);
    }
}

#[test]
fn quantized_gaussian_over_snr_range() {
    let q = ScalarChannel::with_default_quadrature(quantized_gaussian(1.0, 2001, 10.0)).unwrap();
    for i in 0..=10 {
        let m = i as f64;
        let exact = 0.5 * (1.0 + m).ln() - 0.5 * m;
        assert!((q.free_energy(m).unwrap() - exact).abs() <= 1e-5, "m = {m}");
    }
}
