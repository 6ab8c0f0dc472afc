//! Replica-symmetric potentials for the order-2 and order-3 problems.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::Prior;
use crate::scalar_channel::{QuadratureConfig, ScalarChannel};
use crate::solvers::{self, SolverConfig};

// Relative slack allowed when checking that a point lies in its box.
const BOX_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Order {
    Two,
    Three,
}

impl From<Order> for u32 {
    fn from(o: Order) -> u32 {
        o.factors() as u32
    }
}

impl TryFrom<u32> for Order {
    type Error = Error;
    fn try_from(k: u32) -> Result<Order> {
        Order::from_int(k)
    }
}

impl Order {
    pub fn factors(self) -> usize {
        match self {
            Order::Two => 2,
            Order::Three => 3,
        }
    }

    pub fn from_int(k: u32) -> Result<Self> {
        match k {
            2 => Ok(Order::Two),
            3 => Ok(Order::Three),
            _ => Err(Error::Config(format!("order must be 2 or 3, got {k}"))),
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factors())
    }
}

/// Trial overlaps `(m_u, m_v)` or `(m_u, m_v, m_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub m_u: f64,
    pub m_v: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m_w: Option<f64>,
}

impl OverlapPoint {
    pub fn new2(m_u: f64, m_v: f64) -> Self {
        OverlapPoint { m_u, m_v, m_w: None }
    }

    pub fn new3(m_u: f64, m_v: f64, m_w: f64) -> Self {
        OverlapPoint {
            m_u,
            m_v,
            m_w: Some(m_w),
        }
    }

    pub fn from_slice(c: &[f64]) -> Self {
        match c.len() {
            2 => OverlapPoint::new2(c[0], c[1]),
            3 => OverlapPoint::new3(c[0], c[1], c[2]),
            k => panic!("overlap point needs 2 or 3 coordinates, got {k}"),
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        match self.m_w {
            Some(w) => vec![self.m_u, self.m_v, w],
            None => vec![self.m_u, self.m_v],
        }
    }

    pub fn max_coord(&self) -> f64 {
        self.coords().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_coord(&self) -> f64 {
        self.coords().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Max-norm distance.
    pub fn distance(&self, other: &OverlapPoint) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Auxiliary pair `(m_w, m_uv)` of the layered order-3 formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxPoint {
    pub m_w: f64,
    pub m_uv: f64,
}

/// Order, snr, aspect ratios and one scalar channel per factor.
#[derive(Clone, Debug)]
pub struct ModelParams {
    order: Order,
    lambda: f64,
    alphas: Vec<f64>,
    channels: Vec<ScalarChannel>,
}

impl ModelParams {
    pub fn new(
        order: Order,
        lambda: f64,
        alphas: &[f64],
        priors: &[Prior],
        quad: QuadratureConfig,
    ) -> Result<Self> {
        let k = order.factors();
        if alphas.len() != k || priors.len() != k {
            return Err(Error::Config(format!(
                "order {order} needs {k} aspect ratios and {k} priors, got {} and {}",
                alphas.len(),
                priors.len()
            )));
        }
        let channels = priors
            .iter()
            .map(|p| ScalarChannel::new(p.clone(), quad))
            .collect::<Result<Vec<_>>>()?;
        ModelParams::from_channels(order, lambda, alphas, channels)
    }

    pub fn from_channels(
        order: Order,
        lambda: f64,
        alphas: &[f64],
        channels: Vec<ScalarChannel>,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        for (i, &a) in alphas.iter().enumerate() {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!("alphas[{i}] must be positive, got {a}")));
            }
        }
        if alphas.len() != order.factors() || channels.len() != order.factors() {
            return Err(Error::Config("factor count does not match order".into()));
        }
        Ok(ModelParams {
            order,
            lambda,
            alphas: alphas.to_vec(),
            channels,
        })
    }

    /// Order-2 model with default quadrature.
    pub fn matrix(lambda: f64, alphas: [f64; 2], priors: [Prior; 2]) -> Result<Self> {
        ModelParams::new(Order::Two, lambda, &alphas, &priors, QuadratureConfig::default())
    }

    /// Order-3 model with default quadrature.
    pub fn tensor(lambda: f64, alphas: [f64; 3], priors: [Prior; 3]) -> Result<Self> {
        ModelParams::new(Order::Three, lambda, &alphas, &priors, QuadratureConfig::default())
    }

    /// Same model at another snr; channels are shared.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(ModelParams {
            lambda,
            ..self.clone()
        })
    }

    /// The order-2 model on the `u`, `v` factors at snr `lambda`.
    pub fn matrix_part(&self, lambda: f64) -> Result<Self> {
        ModelParams::from_channels(
            Order::Two,
            lambda,
            &self.alphas[..2],
            self.channels[..2].to_vec(),
        )
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn channel(&self, i: usize) -> &ScalarChannel {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[ScalarChannel] {
        &self.channels
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.channels[i].rho()
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.rho()).collect()
    }

    pub fn all_zero_mean(&self) -> bool {
        self.channels.iter().all(|c| c.prior().mean() == 0.0)
    }

    fn expect_order(&self, order: Order) -> Result<()> {
        if self.order != order {
            return Err(Error::Config(format!(
                "operation needs an order-{order} model, got order {}",
                self.order
            )));
        }
        Ok(())
    }

    fn check_box(&self, name: &str, m: f64, hi: f64) -> Result<()> {
        let slack = BOX_SLACK * hi.max(1.0);
        if !m.is_finite() || m < -slack || m > hi + slack {
            return Err(Error::domain(format!("{name} = {m} lies outside [0, {hi}]")));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

fn clamp01(m: f64, hi: f64) -> f64 {
    m.clamp(0.0, hi)
}

/// `(λ/2) α_u α_v m_u m_v + α_u f~_u(λ α_v m_v) + α_v f~_v(λ α_u m_u)`.
pub fn f_pot2(p: &ModelParams, m_u: f64, m_v: f64) -> Result<f64> {
    p.expect_order(Order::Two)?;
    p.check_box("m_u", m_u, p.rho(0))?;
    p.check_box("m_v", m_v, p.rho(1))?;
    let (m_u, m_v) = (clamp01(m_u, p.rho(0)), clamp01(m_v, p.rho(1)));
    let (l, au, av) = (p.lambda, p.alphas[0], p.alphas[1]);
    Ok(0.5 * l * au * av * m_u * m_v
        + au * p.channels[0].free_energy(l * av * m_v)?
        + av * p.channels[1].free_energy(l * au * m_u)?)
}

/// `λ α_u α_v α_w m_u m_v m_w + Σ α f~(·)`; the trilinear coefficient is `λ`.
pub fn f_pot3(p: &ModelParams, m_u: f64, m_v: f64, m_w: f64) -> Result<f64> {
    p.expect_order(Order::Three)?;
    p.check_box("m_u", m_u, p.rho(0))?;
    p.check_box("m_v", m_v, p.rho(1))?;
    p.check_box("m_w", m_w, p.rho(2))?;
    let (m_u, m_v, m_w) = (
        clamp01(m_u, p.rho(0)),
        clamp01(m_v, p.rho(1)),
        clamp01(m_w, p.rho(2)),
    );
    let l = p.lambda;
    let (au, av, aw) = (p.alphas[0], p.alphas[1], p.alphas[2]);
    Ok(l * au * av * aw * m_u * m_v * m_w
        + au * p.channels[0].free_energy(l * av * aw * m_v * m_w)?
        + av * p.channels[1].free_energy(l * au * aw * m_u * m_w)?
        + aw * p.channels[2].free_energy(l * au * av * m_u * m_v)?)
}

/// Potential at an overlap point of either order.
pub fn f_pot(p: &ModelParams, pt: &OverlapPoint) -> Result<f64> {
    match (p.order, pt.m_w) {
        (Order::Two, None) => f_pot2(p, pt.m_u, pt.m_v),
        (Order::Three, Some(w)) => f_pot3(p, pt.m_u, pt.m_v, w),
        _ => Err(Error::Config("overlap point does not match model order".into())),
    }
}

/// `∂ f_pot2 / ∂ m_v = (λ/2) α_u α_v [m_u - q_u(λ α_v m_v)]`.
pub fn dpot2_dmv(p: &ModelParams, m_u: f64, m_v: f64) -> f64 {
    let (l, au, av) = (p.lambda, p.alphas[0], p.alphas[1]);
    0.5 * l * au * av * (m_u - p.channels[0].overlap_clamped(l * av * m_v))
}

/// Free energy to mutual information per `n`.
pub fn mutual_info_from_f(p: &ModelParams, f: f64) -> f64 {
    let prod: f64 = p
        .alphas
        .iter()
        .zip(&p.channels)
        .map(|(a, c)| a * c.rho())
        .product();
    f + 0.5 * p.lambda * prod
}

/// Inner order-2 value at one effective snr.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerValue {
    pub value: f64,
    pub m_u: f64,
    pub m_v: f64,
}

/// The auxiliary order-3 potential
/// `(λ/2) α_u α_v α_w m_uv m_w + α_w f~_w(λ α_u α_v m_uv) + F2(λ α_w m_w)`,
/// where `F2(s)` is the order-2 inf-sup at snr `s`. `F2` values are cached
/// by effective snr.
pub struct AuxPotential {
    params: ModelParams,
    cfg: SolverConfig,
    cache: Mutex<HashMap<u64, InnerValue>>,
}

impl AuxPotential {
    pub fn new(params: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        params.expect_order(Order::Three)?;
        cfg.validate()?;
        Ok(AuxPotential {
            params: params.clone(),
            cfg: cfg.clone(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `inf_{m_u} sup_{m_v} f_pot2` at effective snr `s`.
    pub fn inner(&self, s: f64) -> Result<InnerValue> {
        let key = s.to_bits();
        if let Some(v) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(*v);
        }
        let p2 = self.params.matrix_part(s)?;
        let r = solvers::inf_sup2(&p2, &self.cfg).map_err(|e| match e {
            Error::Solver {
                message,
                worst_residual,
            } => Error::Solver {
                message: format!("inner inf-sup at effective snr {s}: {message}"),
                worst_residual,
            },
            other => other,
        })?;
        let v = InnerValue {
            value: r.free_energy,
            m_u: r.minimizer.m_u,
            m_v: r.minimizer.m_v,
        };
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, v);
        Ok(v)
    }

    /// The part of `f_aux3` that depends on `m_uv`.
    pub fn outer_part(&self, m_w: f64, m_uv: f64) -> Result<f64> {
        let p = &self.params;
        let (l, a) = (p.lambda, &p.alphas);
        Ok(0.5 * l * a[0] * a[1] * a[2] * m_uv * m_w
            + a[2] * p.channels[2].free_energy(l * a[0] * a[1] * m_uv)?)
    }

    pub fn eval(&self, m_w: f64, m_uv: f64) -> Result<f64> {
        let p = &self.params;
        p.check_box("m_w", m_w, p.rho(2))?;
        p.check_box("m_uv", m_uv, p.rho(0) * p.rho(1))?;
        let m_w = clamp01(m_w, p.rho(2));
        let m_uv = clamp01(m_uv, p.rho(0) * p.rho(1));
        let inner = self.inner(p.lambda * p.alphas[2] * m_w)?;
        Ok(self.outer_part(m_w, m_uv)? + inner.value)
    }

    /// `∂ f_aux3 / ∂ m_uv`.
    pub fn d_muv(&self, m_w: f64, m_uv: f64) -> f64 {
        let p = &self.params;
        let (l, a) = (p.lambda, &p.alphas);
        0.5 * l * a[0] * a[1] * a[2]
            * (m_w - p.channels[2].overlap_clamped(l * a[0] * a[1] * m_uv))
    }
}

/// One-off evaluation of the auxiliary potential.
pub fn f_aux3(p: &ModelParams, m_w: f64, m_uv: f64, cfg: &SolverConfig) -> Result<f64> {
    AuxPotential::new(p, cfg)?.eval(m_w, m_uv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss2(l: f64) -> ModelParams {
        let g = Prior::gaussian(1.0).unwrap();
        ModelParams::matrix(l, [1.0, 1.0], [g.clone(), g]).unwrap()
    }

    fn gauss3(l: f64) -> ModelParams {
        let g = Prior::gaussian(1.0).unwrap();
        ModelParams::tensor(l, [1.0, 1.0, 1.0], [g.clone(), g.clone(), g]).unwrap()
    }

    #[test]
    fn pot2_hand_values() {
        let p = gauss2(4.0);
        assert_eq!(f_pot2(&p, 0.0, 0.0).unwrap(), 0.0);
        let v = f_pot2(&p, 0.75, 0.75).unwrap();
        assert!((v - (2.0 * 2f64.ln() - 15.0 / 8.0)).abs() < 1e-14);
        assert_eq!(f_pot2(&gauss2(0.0), 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pot3_hand_values() {
        let p = gauss3(4.0);
        assert_eq!(f_pot3(&p, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let v = f_pot3(&p, 0.5, 0.5, 0.5).unwrap();
        assert!((v - (0.5 + 3.0 * (0.5 * 2f64.ln() - 0.5))).abs() < 1e-14);
        let r = Prior::rademacher();
        let p0 = ModelParams::tensor(0.0, [1.0; 3], [r.clone(), r.clone(), r]).unwrap();
        assert_eq!(f_pot3(&p0, 0.3, 0.9, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn out_of_box_is_domain_error() {
        let p = gauss2(1.0);
        assert!(matches!(f_pot2(&p, 1.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f_pot2(&p, -0.1, 0.0), Err(Error::Domain(_))));
        assert!(f_pot3(&p, 0.1, 0.1, 0.1).is_err());
    }

    #[test]
    fn mutual_info_conversion() {
        assert!((mutual_info_from_f(&gauss2(4.0), -0.4887061) - 1.5112939).abs() < 1e-12);
        assert_eq!(mutual_info_from_f(&gauss2(0.0), 0.0), 0.0);
        assert!((mutual_info_from_f(&gauss3(2.0), -1.0)).abs() < 1e-15);
    }

    #[test]
    fn aux_at_origin_is_zero() {
        let p = gauss3(4.0);
        assert_eq!(f_aux3(&p, 0.0, 0.0, &SolverConfig::default()).unwrap(), 0.0);
        let r = Prior::rademacher();
        let p0 = ModelParams::tensor(0.0, [1.0; 3], [r.clone(), r.clone(), r]).unwrap();
        assert_eq!(f_aux3(&p0, 0.4, 0.7, &SolverConfig::default()).unwrap(), 0.0);
    }
}
