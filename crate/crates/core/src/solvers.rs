//! Fixed-point enumeration, variational formulas and threshold search.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{
    dpot2_dmv, f_pot, f_pot2, mutual_info_from_f, AuxPoint, AuxPotential, ModelParams, Order,
    OverlapPoint,
};

/// Coordinates above this are treated as nonzero when labelling basins.
pub const BASIN_DELTA: f64 = 1e-6;
/// Minimizer jump that marks a first-order transition.
pub const JUMP_DELTA: f64 = 1e-3;
/// Final bracket width of the threshold bisections.
pub const LAMBDA_WIDTH: f64 = 1e-4;

const TIE_REL: f64 = 1e-12;
const POLISH_START: f64 = 1e-3;
const NEWTON_STEPS: usize = 60;
const BISECT_STEPS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starts per coordinate; a single entry applies to every coordinate.
    pub init_grid: Vec<usize>,
    pub dedup_tol: f64,
    pub grid_refine_levels: usize,
    /// Points of the coarse outer scan in the inf-sup solvers.
    pub outer_grid: usize,
    /// Finish converging iterates with Newton steps.
    pub newton_polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 20_000,
            init_grid: vec![9],
            dedup_tol: 1e-7,
            grid_refine_levels: 40,
            outer_grid: 201,
            newton_polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.damping) {
            return bad(format!("damping must lie in [0, 1), got {}", self.damping));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.tol < self.dedup_tol) {
            return bad(format!(
                "tol ({}) must be below dedup_tol ({})",
                self.tol, self.dedup_tol
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if self.init_grid.is_empty() || self.init_grid.len() > 3 {
            return bad("init_grid needs one entry or one per coordinate".into());
        }
        if self.init_grid.iter().any(|&g| g < 2) {
            return bad("init_grid counts must be at least 2".into());
        }
        if self.grid_refine_levels == 0 {
            return bad("grid_refine_levels must be positive".into());
        }
        if self.outer_grid < 3 {
            return bad("outer_grid must be at least 3".into());
        }
        Ok(())
    }

    fn grid_for(&self, dim: usize) -> Result<Vec<usize>> {
        match self.init_grid.len() {
            1 => Ok(vec![self.init_grid[0]; dim]),
            n if n == dim => Ok(self.init_grid.clone()),
            n => Err(Error::Config(format!(
                "init_grid has {n} entries for a {dim}-coordinate problem"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    Informative,
    Uninformative,
    Other,
}

impl Basin {
    pub fn of(pt: &OverlapPoint) -> Basin {
        let c = pt.coords();
        if c.iter().all(|&x| x <= BASIN_DELTA) {
            Basin::Uninformative
        } else if c.iter().all(|&x| x > BASIN_DELTA) {
            Basin::Informative
        } else {
            Basin::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Basin::Informative => "informative",
            Basin::Uninformative => "uninformative",
            Basin::Other => "other",
        }
    }
}

impl fmt::Display for Basin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gamma-inf")]
    GammaInf,
    #[serde(rename = "inf-sup")]
    InfSup,
    #[serde(rename = "aux-inf-sup")]
    AuxInfSup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: OverlapPoint,
    pub potential: f64,
    pub residual: f64,
    pub basin: Basin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointSet {
    pub points: Vec<CriticalPoint>,
    /// Starts abandoned without reaching `tol`; a branch may be missing when nonzero.
    #[serde(default)]
    pub unconverged: usize,
    /// Largest residual among the abandoned starts.
    #[serde(default)]
    pub worst_residual: f64,
}

impl CriticalPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_nontrivial(&self) -> bool {
        self.points.iter().any(|c| c.point.max_coord() > BASIN_DELTA)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RSResult {
    pub lambda: f64,
    pub free_energy: f64,
    pub mutual_info_per_n: f64,
    pub minimizer: OverlapPoint,
    pub branch: Basin,
    pub method: Method,
    /// Another candidate matched the optimum within round-off.
    pub tie: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aux: Option<AuxPoint>,
}

// ---------------------------------------------------------------------------
// State-evolution map

fn se_map(p: &ModelParams, m: &[f64]) -> Vec<f64> {
    let l = p.lambda();
    let a = p.alphas();
    let r = p.rhos();
    let c: Vec<f64> = m.iter().zip(&r).map(|(x, hi)| x.clamp(0.0, *hi)).collect();
    let q = |i: usize, snr: f64| p.channel(i).overlap_clamped(snr).clamp(0.0, r[i]);
    match p.order() {
        Order::Two => vec![q(0, l * a[1] * c[1]), q(1, l * a[0] * c[0])],
        Order::Three => vec![
            q(0, l * a[1] * a[2] * c[1] * c[2]),
            q(1, l * a[0] * a[2] * c[0] * c[2]),
            q(2, l * a[0] * a[1] * c[0] * c[1]),
        ],
    }
}

fn residual_of(p: &ModelParams, m: &[f64]) -> f64 {
    let t = se_map(p, m);
    t.iter()
        .zip(m)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, |acc, d| if d.is_nan() { f64::NAN } else { acc.max(d) })
}

fn check_point(p: &ModelParams, pt: &OverlapPoint, order: Order) -> Result<()> {
    if p.order() != order {
        return Err(Error::Config(format!(
            "expected an order-{order} model, got order {}",
            p.order()
        )));
    }
    let c = pt.coords();
    if c.len() != order.factors() {
        return Err(Error::Config("overlap point does not match model order".into()));
    }
    for (i, (&x, hi)) in c.iter().zip(p.rhos()).enumerate() {
        if !x.is_finite() || x < -1e-12 * hi.max(1.0) || x > hi * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::domain(format!(
                "coordinate {i} = {x} lies outside [0, {hi}]"
            )));
        }
    }
    Ok(())
}

/// One state-evolution step `(q_u(λ α_v m_v), q_v(λ α_u m_u))`.
pub fn se_step2(p: &ModelParams, pt: &OverlapPoint) -> Result<OverlapPoint> {
    check_point(p, pt, Order::Two)?;
    Ok(OverlapPoint::from_slice(&se_map(p, &pt.coords())))
}

/// One order-3 state-evolution step.
pub fn se_step3(p: &ModelParams, pt: &OverlapPoint) -> Result<OverlapPoint> {
    check_point(p, pt, Order::Three)?;
    Ok(OverlapPoint::from_slice(&se_map(p, &pt.coords())))
}

/// Max-norm fixed-point residual `|se_step(m) - m|`.
pub fn se_residual(p: &ModelParams, pt: &OverlapPoint) -> Result<f64> {
    check_point(p, pt, p.order())?;
    Ok(residual_of(p, &pt.coords()))
}

// ---------------------------------------------------------------------------
// Enumeration

enum StartOutcome {
    Converged(Vec<f64>),
    Failed(f64),
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

// Newton on F(m) = T(m) - m. Keeps stepping past `tol` so that iterates
// approaching the same root from different starts coincide to round-off.
fn newton_polish(p: &ModelParams, m0: &[f64], rho: &[f64]) -> Option<(Vec<f64>, f64)> {
    let d = m0.len();
    let f_of = |m: &[f64]| -> Vec<f64> {
        se_map(p, m).iter().zip(m).map(|(t, x)| t - x).collect()
    };
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut m = m0.to_vec();
    let mut f = f_of(&m);
    let mut best = (m.clone(), norm(&f));
    for _ in 0..NEWTON_STEPS {
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let h = 1e-6 * rho[j].max(1e-3);
            let (lo, hi) = if m[j] - h < 0.0 {
                (m[j], m[j] + h)
            } else if m[j] + h > rho[j] {
                (m[j] - h, m[j])
            } else {
                (m[j] - h, m[j] + h)
            };
            let mut a = m.clone();
            let mut b = m.clone();
            a[j] = lo;
            b[j] = hi;
            let (fa, fb) = (f_of(&a), f_of(&b));
            for i in 0..d {
                jac[i][j] = (fb[i] - fa[i]) / (hi - lo);
            }
        }
        let step = solve_linear(jac, f.iter().map(|x| -x).collect())?;
        let mut next: Vec<f64> = m.iter().zip(&step).map(|(x, s)| x + s).collect();
        for (x, hi) in next.iter_mut().zip(rho) {
            *x = x.clamp(0.0, *hi);
        }
        let moved = norm(&next.iter().zip(&m).map(|(a, b)| a - b).collect::<Vec<_>>());
        m = next;
        f = f_of(&m);
        let r = norm(&f);
        if !r.is_finite() {
            return None;
        }
        if r <= best.1 {
            best = (m.clone(), r);
        }
        if moved <= 1e-15 * (1.0 + norm(&m)) || r == 0.0 {
            break;
        }
    }
    Some(best)
}

fn run_start(p: &ModelParams, start: &[f64], cfg: &SolverConfig) -> StartOutcome {
    let rho = p.rhos();
    let theta = cfg.damping;
    let mut m = start.to_vec();
    let mut best_r = f64::INFINITY;
    let mut last_polish_r = f64::INFINITY;
    let mut window_start_best = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let t = se_map(p, &m);
        let r = t
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if !r.is_finite() {
            return StartOutcome::Failed(f64::INFINITY);
        }
        best_r = best_r.min(r);
        if cfg.newton_polish && r < POLISH_START && r <= 0.5 * last_polish_r {
            last_polish_r = r;
            if let Some((x, rx)) = newton_polish(p, &m, &rho) {
                if rx <= cfg.tol {
                    return StartOutcome::Converged(x);
                }
            }
        }
        if r <= cfg.tol {
            return StartOutcome::Converged(m);
        }
        // Stagnation far from any fixed point, e.g. a period-2 orbit at zero damping.
        if it % 200 == 0 {
            if it > 0 && r > POLISH_START && best_r >= 0.9 * window_start_best {
                return StartOutcome::Failed(best_r);
            }
            window_start_best = best_r;
        }
        for ((x, tx), hi) in m.iter_mut().zip(&t).zip(&rho) {
            *x = ((1.0 - theta) * tx + theta * *x).clamp(0.0, *hi);
        }
    }
    StartOutcome::Failed(best_r)
}

fn starts(rho: &[f64], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for (hi, &g) in rho.iter().zip(counts) {
        let mut next = Vec::with_capacity(out.len() * g);
        for prefix in &out {
            for i in 0..g {
                let mut v = prefix.clone();
                v.push(hi * i as f64 / (g - 1) as f64);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn enumerate_gamma(p: &ModelParams, cfg: &SolverConfig) -> Result<CriticalPointSet> {
    cfg.validate()?;
    let dim = p.order().factors();
    let rho = p.rhos();
    let grid = starts(&rho, &cfg.grid_for(dim)?);
    let outcomes: Vec<StartOutcome> = grid.par_iter().map(|s| run_start(p, s, cfg)).collect();

    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut worst = 0.0f64;
    let mut unconverged = 0;
    for o in outcomes {
        match o {
            StartOutcome::Converged(x) => {
                // Re-verify independently of the iteration.
                let r = residual_of(p, &x);
                if r <= cfg.tol {
                    found.push((x, r));
                } else {
                    worst = worst.max(r);
                    unconverged += 1;
                }
            }
            StartOutcome::Failed(r) => {
                worst = worst.max(r);
                unconverged += 1;
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Solver {
            message: format!(
                "no initialisation converged within {} iterations at lambda = {}",
                cfg.max_iter,
                p.lambda()
            ),
            worst_residual: worst,
        });
    }

    let mut uniq: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, r) in found {
        let hit = uniq.iter_mut().find(|(y, _)| {
            x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < cfg.dedup_tol
        });
        match hit {
            Some(slot) => {
                if r < slot.1 {
                    *slot = (x, r);
                }
            }
            None => uniq.push((x, r)),
        }
    }
    uniq.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let points = uniq
        .into_iter()
        .map(|(x, r)| {
            let point = OverlapPoint::from_slice(&x);
            Ok(CriticalPoint {
                potential: f_pot(p, &point)?,
                residual: r,
                basin: Basin::of(&point),
                point,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriticalPointSet {
        points,
        unconverged,
        worst_residual: worst,
    })
}

/// Fixed points of the order-2 state-evolution map, by damped multi-start iteration.
pub fn enumerate_gamma2(p: &ModelParams, cfg: &SolverConfig) -> Result<CriticalPointSet> {
    check_point(p, &OverlapPoint::new2(0.0, 0.0), Order::Two)?;
    enumerate_gamma(p, cfg)
}

pub fn enumerate_gamma3(p: &ModelParams, cfg: &SolverConfig) -> Result<CriticalPointSet> {
    check_point(p, &OverlapPoint::new3(0.0, 0.0, 0.0), Order::Three)?;
    enumerate_gamma(p, cfg)
}

fn select_min(p: &ModelParams, set: &CriticalPointSet, method: Method) -> RSResult {
    let mut best = &set.points[0];
    for c in &set.points[1..] {
        let scale = best.potential.abs().max(1.0);
        let lower = c.potential < best.potential - TIE_REL * scale;
        let tied_larger = (c.potential - best.potential).abs() <= TIE_REL * scale && c.point.m_u > best.point.m_u;
        if lower || tied_larger {
            best = c;
        }
    }
    let scale = best.potential.abs().max(1.0);
    let tie = set.points.iter().any(|c| {
        !std::ptr::eq(c, best) && (c.potential - best.potential).abs() <= TIE_REL * scale
    });
    RSResult {
        lambda: p.lambda(),
        free_energy: best.potential,
        mutual_info_per_n: mutual_info_from_f(p, best.potential),
        minimizer: best.point,
        branch: best.basin,
        method,
        tie,
        aux: None,
    }
}

/// Replica-symmetric free energy as the minimum of the potential over the critical set.
pub fn rs_free_energy2(p: &ModelParams, cfg: &SolverConfig) -> Result<RSResult> {
    Ok(select_min(p, &enumerate_gamma2(p, cfg)?, Method::GammaInf))
}

pub fn rs_free_energy3(p: &ModelParams, cfg: &SolverConfig) -> Result<RSResult> {
    Ok(select_min(p, &enumerate_gamma3(p, cfg)?, Method::GammaInf))
}

/// Order-dispatching variant of the critical-set formula.
pub fn rs_free_energy(p: &ModelParams, cfg: &SolverConfig) -> Result<RSResult> {
    match p.order() {
        Order::Two => rs_free_energy2(p, cfg),
        Order::Three => rs_free_energy3(p, cfg),
    }
}

pub fn enumerate_gamma_any(p: &ModelParams, cfg: &SolverConfig) -> Result<CriticalPointSet> {
    match p.order() {
        Order::Two => enumerate_gamma2(p, cfg),
        Order::Three => enumerate_gamma3(p, cfg),
    }
}

// ---------------------------------------------------------------------------
// Inf-sup formulas

/// Maximiser of a concave function on `[0, hi]` given its decreasing derivative.
fn concave_argmax(hi: f64, d: impl Fn(f64) -> f64) -> f64 {
    if d(0.0) <= 0.0 {
        return 0.0;
    }
    if d(hi) >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..BISECT_STEPS {
        let c = 0.5 * (a + b);
        if c <= a || c >= b {
            break;
        }
        if d(c) > 0.0 {
            a = c;
        } else {
            b = c;
        }
    }
    0.5 * (a + b)
}

/// Grid scan plus dyadic refinement of a one-dimensional minimum on `[0, hi]`.
/// Returns `(argmin, value)`.
fn refined_min(
    hi: f64,
    cfg: &SolverConfig,
    h: impl Fn(f64) -> Result<f64> + Sync,
) -> Result<(f64, f64)> {
    if hi == 0.0 {
        return Ok((0.0, h(0.0)?));
    }
    let n = cfg.outer_grid;
    let xs: Vec<f64> = (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect();
    let vals = xs.par_iter().map(|&x| h(x)).collect::<Result<Vec<f64>>>()?;

    let mut cands: Vec<usize> = (0..n)
        .filter(|&i| {
            (i == 0 || vals[i] <= vals[i - 1]) && (i + 1 == n || vals[i] <= vals[i + 1])
        })
        .collect();
    cands.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    cands.truncate(3);

    let cell = hi / (n - 1) as f64;
    let refined = cands
        .par_iter()
        .map(|&i| {
            let (mut x, mut v) = (xs[i], vals[i]);
            let mut step = cell;
            for _ in 0..cfg.grid_refine_levels {
                step *= 0.5;
                for y in [x - step, x + step] {
                    if (0.0..=hi).contains(&y) {
                        let vy = h(y)?;
                        if vy < v {
                            x = y;
                            v = vy;
                        }
                    }
                }
            }
            Ok((x, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(refined
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b }))
}

fn sup_over_mv(p: &ModelParams, m_u: f64) -> Result<(f64, f64)> {
    let m_v = concave_argmax(p.rho(1), |mv| dpot2_dmv(p, m_u, mv));
    Ok((m_v, f_pot2(p, m_u, m_v)?))
}

/// `inf_{m_u} sup_{m_v} f_pot2`.
pub fn inf_sup2(p: &ModelParams, cfg: &SolverConfig) -> Result<RSResult> {
    cfg.validate()?;
    check_point(p, &OverlapPoint::new2(0.0, 0.0), Order::Two)?;
    let (m_u, value) = refined_min(p.rho(0), cfg, |mu| Ok(sup_over_mv(p, mu)?.1))?;
    if !value.is_finite() {
        return Err(Error::Solver {
            message: "inf-sup outer scan produced no finite value".into(),
            worst_residual: f64::NAN,
        });
    }
    let (m_v, _) = sup_over_mv(p, m_u)?;
    let minimizer = OverlapPoint::new2(m_u, m_v);
    Ok(RSResult {
        lambda: p.lambda(),
        free_energy: value,
        mutual_info_per_n: mutual_info_from_f(p, value),
        minimizer,
        branch: Basin::of(&minimizer),
        method: Method::InfSup,
        tie: false,
        aux: None,
    })
}

/// `inf_{m_w} sup_{m_uv} f_aux3`, with the inner order-2 problem solved by [`inf_sup2`].
pub fn inf_sup_aux3(p: &ModelParams, cfg: &SolverConfig) -> Result<RSResult> {
    cfg.validate()?;
    check_point(p, &OverlapPoint::new3(0.0, 0.0, 0.0), Order::Three)?;
    let aux = AuxPotential::new(p, cfg)?;
    let uv_hi = p.rho(0) * p.rho(1);
    let sup_uv = |m_w: f64| -> Result<(f64, f64)> {
        let m_uv = concave_argmax(uv_hi, |x| aux.d_muv(m_w, x));
        Ok((m_uv, aux.eval(m_w, m_uv)?))
    };
    let (m_w, value) = refined_min(p.rho(2), cfg, |mw| Ok(sup_uv(mw)?.1))?;
    if !value.is_finite() {
        return Err(Error::Solver {
            message: "auxiliary inf-sup produced no finite value".into(),
            worst_residual: f64::NAN,
        });
    }
    let (m_uv, _) = sup_uv(m_w)?;
    let inner = aux.inner(p.lambda() * p.alphas()[2] * m_w)?;
    let minimizer = OverlapPoint::new3(inner.m_u, inner.m_v, m_w);
    Ok(RSResult {
        lambda: p.lambda(),
        free_energy: value,
        mutual_info_per_n: mutual_info_from_f(p, value),
        minimizer,
        branch: Basin::of(&minimizer),
        method: Method::AuxInfSup,
        tie: false,
        aux: Some(AuxPoint { m_w, m_uv }),
    })
}

// ---------------------------------------------------------------------------
// Thresholds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionKind {
    Continuous,
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ThresholdResult {
    Found {
        lambda_opt: f64,
        kind: TransitionKind,
        /// `None` when nontrivial critical points already exist at the lower end.
        lambda_emergence: Option<f64>,
        /// Size of the minimizer change across the final bracket.
        jump: f64,
    },
    NoTransition {
        lambda_lo: f64,
        lambda_hi: f64,
        /// Where the nontrivial branch appears, if it does in range.
        lambda_emergence: Option<f64>,
    },
}

impl ThresholdResult {
    pub fn lambda_opt(&self) -> Option<f64> {
        match self {
            ThresholdResult::Found { lambda_opt, .. } => Some(*lambda_opt),
            ThresholdResult::NoTransition { .. } => None,
        }
    }

    pub fn lambda_emergence(&self) -> Option<f64> {
        match self {
            ThresholdResult::Found {
                lambda_emergence, ..
            }
            | ThresholdResult::NoTransition {
                lambda_emergence, ..
            } => *lambda_emergence,
        }
    }
}

fn bisect_flag(
    lo: f64,
    hi: f64,
    mut flag: impl FnMut(f64) -> Result<bool>,
) -> Result<(f64, f64)> {
    let (mut a, mut b) = (lo, hi);
    while b - a > LAMBDA_WIDTH {
        let c = 0.5 * (a + b);
        if flag(c)? {
            b = c;
        } else {
            a = c;
        }
    }
    Ok((a, b))
}

fn nontrivial_at(p: &ModelParams, l: f64, cfg: &SolverConfig) -> Result<bool> {
    Ok(enumerate_gamma_any(&p.with_lambda(l)?, cfg)?.has_nontrivial())
}

/// Smallest snr in `[lo, hi]` with a nontrivial critical point, by bisection.
/// `None` when such points exist at `lo` already or nowhere up to `hi`.
pub fn find_emergence(p: &ModelParams, lo: f64, hi: f64, cfg: &SolverConfig) -> Result<Option<f64>> {
    if nontrivial_at(p, lo, cfg)? || !nontrivial_at(p, hi, cfg)? {
        return Ok(None);
    }
    let (a, b) = bisect_flag(lo, hi, |l| nontrivial_at(p, l, cfg))?;
    Ok(Some(0.5 * (a + b)))
}

/// Locates the information-theoretic threshold and the spinodal in `[lo, hi]`.
pub fn find_lambda_opt(
    p: &ModelParams,
    lo: f64,
    hi: f64,
    cfg: &SolverConfig,
) -> Result<ThresholdResult> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(Error::Config(format!(
            "threshold search needs 0 <= lambda_lo < lambda_hi, got [{lo}, {hi}]"
        )));
    }
    if !p.all_zero_mean() {
        return Err(Error::Config(
            "threshold search needs zero-mean priors".into(),
        ));
    }
    cfg.validate()?;

    let emergence = find_emergence(p, lo, hi, cfg)?;

    let rs_at = |l: f64| rs_free_energy(&p.with_lambda(l)?, cfg);
    let informative = |r: &RSResult| r.minimizer.max_coord() > BASIN_DELTA;
    let r_lo = rs_at(lo)?;
    let r_hi = rs_at(hi)?;
    if informative(&r_lo) || !informative(&r_hi) {
        return Ok(ThresholdResult::NoTransition {
            lambda_lo: lo,
            lambda_hi: hi,
            lambda_emergence: emergence,
        });
    }
    let (a, b) = bisect_flag(lo, hi, |l| Ok(informative(&rs_at(l)?)))?;
    let jump = rs_at(a)?.minimizer.distance(&rs_at(b)?.minimizer);
    let kind = if jump > JUMP_DELTA {
        TransitionKind::FirstOrder
    } else {
        TransitionKind::Continuous
    };
    Ok(ThresholdResult::Found {
        lambda_opt: 0.5 * (a + b),
        kind,
        lambda_emergence: emergence,
        jump,
    })
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub f_rs: f64,
    pub mi_per_n: f64,
    pub minimizer: OverlapPoint,
    pub branch: Basin,
    pub gamma_count: usize,
    /// Some critical point has a coordinate above [`BASIN_DELTA`].
    pub nontrivial: bool,
}

/// Critical-set formula on a list of snr values.
pub fn sweep(p: &ModelParams, lambdas: &[f64], cfg: &SolverConfig) -> Result<Vec<SweepRow>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let q = p.with_lambda(l)?;
            let set = enumerate_gamma_any(&q, cfg)?;
            let r = select_min(&q, &set, Method::GammaInf);
            Ok(SweepRow {
                lambda: l,
                f_rs: r.free_energy,
                mi_per_n: r.mutual_info_per_n,
                minimizer: r.minimizer,
                branch: r.branch,
                gamma_count: set.len(),
                nontrivial: set.has_nontrivial(),
            })
        })
        .collect()
}

/// First pair of consecutive rows where the minimizer turns nontrivial.
pub fn transition_bracket(rows: &[SweepRow]) -> Option<(f64, f64)> {
    rows.windows(2).find_map(|w| {
        let before = w[0].minimizer.max_coord() > BASIN_DELTA;
        let after = w[1].minimizer.max_coord() > BASIN_DELTA;
        (!before && after).then_some((w[0].lambda, w[1].lambda))
    })
}

/// Threshold search seeded by the brackets visible in a sweep.
pub fn locate_transition(
    p: &ModelParams,
    rows: &[SweepRow],
    cfg: &SolverConfig,
) -> Result<ThresholdResult> {
    let (lo, hi) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.lambda, b.lambda),
        _ => return Err(Error::Config("empty sweep".into())),
    };
    let emergence = match rows.windows(2).find(|w| !w[0].nontrivial && w[1].nontrivial) {
        Some(w) if !rows[0].nontrivial => find_emergence(p, w[0].lambda, w[1].lambda, cfg)?,
        _ => None,
    };
    match transition_bracket(rows) {
        None => Ok(ThresholdResult::NoTransition {
            lambda_lo: lo,
            lambda_hi: hi,
            lambda_emergence: emergence,
        }),
        Some((a, b)) => match find_lambda_opt(p, a, b, cfg)? {
            ThresholdResult::Found {
                lambda_opt,
                kind,
                jump,
                ..
            } => Ok(ThresholdResult::Found {
                lambda_opt,
                kind,
                lambda_emergence: emergence,
                jump,
            }),
            other => Ok(other),
        },
    }
}
