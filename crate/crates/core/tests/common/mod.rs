#![allow(dead_code)]

use tensorinfo::{ModelParams, Order, Prior, QuadratureConfig};

/// Gaussian of variance `rho` on an odd, mirror-symmetric lattice of `atoms`
/// points spanning `±width` standard deviations.
pub fn quantized_gaussian(rho: f64, atoms: usize, width: f64) -> Prior {
    assert!(atoms % 2 == 1, "odd atom count keeps the origin on the lattice");
    let half = atoms / 2;
    let step = width / half as f64;
    let dens: Vec<f64> = (0..=half).map(|k| (-0.5 * (k as f64 * step).powi(2)).exp()).collect();
    let total = dens[0] + 2.0 * dens[1..].iter().sum::<f64>();
    let sd = rho.sqrt();
    let mut pairs = vec![(0.0, dens[0] / total)];
    for (k, d) in dens.iter().enumerate().skip(1) {
        let x = k as f64 * step * sd;
        pairs.push((x, d / total));
        pairs.push((-x, d / total));
    }
    Prior::discrete(&pairs).expect("quantised gaussian")
}

/// Quadrature accurate enough to compare against frozen high-precision values.
pub fn fine_quad() -> QuadratureConfig {
    QuadratureConfig {
        hermite_nodes: 301,
        log_domain: true,
    }
}

pub fn iid(order: Order, lambda: f64, prior: &Prior, quad: QuadratureConfig) -> ModelParams {
    let k = order.factors();
    ModelParams::new(order, lambda, &vec![1.0; k], &vec![prior.clone(); k], quad).expect("valid params")
}

pub fn gauss(order: Order, lambda: f64) -> ModelParams {
    iid(order, lambda, &Prior::gaussian(1.0).unwrap(), QuadratureConfig::default())
}

pub fn rad(order: Order, lambda: f64) -> ModelParams {
    iid(order, lambda, &Prior::rademacher(), QuadratureConfig::default())
}
