//! Numerical checks of the sup-inf exchange identities used to pass between
//! the critical-set and inf-sup forms of the free energy.
//!
//! All functions live on `[0, B]` and are extended affinely beyond `B` with
//! slope `f'(B)`, which keeps them convex, non-decreasing and Lipschitz on the
//! whole half-line.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::potentials::{ModelParams, Order};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const GOLDEN_STEPS: usize = 80;
const BISECT_STEPS: usize = 64;
const PRECONDITION_POINTS: usize = 401;
const ROOT_ACCEPT: f64 = 1e-8;
const OPT_TIE: f64 = 1e-10;

/// A real function on `[0, B]` with an optional analytic derivative.
#[derive(Clone)]
pub struct ScalarFunction {
    eval: RealFn,
    deriv: Option<RealFn>,
    domain_max: f64,
    label: String,
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFunction")
            .field("label", &self.label)
            .field("domain_max", &self.domain_max)
            .field("analytic_derivative", &self.deriv.is_some())
            .finish()
    }
}

impl ScalarFunction {
    pub fn new(
        label: impl Into<String>,
        domain_max: f64,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(domain_max.is_finite() && domain_max >= 0.0) {
            return Err(Error::Config(format!(
                "function domain bound must be finite and non-negative, got {domain_max}"
            )));
        }
        Ok(ScalarFunction {
            eval: Arc::new(eval),
            deriv: None,
            domain_max,
            label: label.into(),
        })
    }

    pub fn with_derivative(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.deriv = Some(Arc::new(d));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domain_max(&self) -> f64 {
        self.domain_max
    }

    /// Value with affine extension beyond the domain.
    pub fn value(&self, x: f64) -> f64 {
        let b = self.domain_max;
        if x <= b {
            (self.eval)(x.max(0.0))
        } else {
            (self.eval)(b) + self.lipschitz() * (x - b)
        }
    }

    /// Right derivative on `[0, B)`, left derivative at `B`, constant beyond.
    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.domain_max);
        if let Some(d) = &self.deriv {
            return d(x);
        }
        let f = &self.eval;
        let h = 1e-5 * self.domain_max.max(1.0);
        if x + 2.0 * h <= self.domain_max && x - h < 0.0 {
            (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)
        } else if x + h > self.domain_max && x - 2.0 * h >= 0.0 {
            (3.0 * f(x) - 4.0 * f(x - h) + f(x - 2.0 * h)) / (2.0 * h)
        } else if x - h >= 0.0 {
            (f(x + h) - f(x - h)) / (2.0 * h)
        } else {
            // Tiny domain: the raw evaluator is trusted slightly past B.
            (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.derivative(self.domain_max)
    }

    /// `sup_{x >= 0} x y - f(x)` and its maximiser, for `y` in `[0, lipschitz]`.
    pub fn conjugate(&self, y: f64) -> (f64, f64) {
        let b = self.domain_max;
        let obj = |x: f64| x * y - self.value(x);
        if b == 0.0 {
            return (obj(0.0), 0.0);
        }
        let x = if self.deriv.is_some() {
            let d = |x: f64| y - self.derivative(x);
            if d(0.0) <= 0.0 {
                0.0
            } else if d(b) >= 0.0 {
                b
            } else {
                let (mut lo, mut hi) = (0.0, b);
                for _ in 0..BISECT_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if d(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        } else {
            golden_max(0.0, b, &obj).0
        };
        (obj(x), x)
    }
}

// ---------------------------------------------------------------------------
// One-dimensional maximisation

fn golden_max(a: f64, b: f64, h: &impl Fn(f64) -> f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    for _ in 0..GOLDEN_STEPS {
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = h(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = h(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Grid scan on `[lo, hi]` plus golden refinement around the best local maxima.
/// Returns every refined candidate, best first.
fn grid_sup_all(
    lo: f64,
    hi: f64,
    n: usize,
    refine: usize,
    h: &(impl Fn(f64) -> f64 + Sync),
) -> Vec<(f64, f64)> {
    grid_sup_scan(lo, hi, n, refine, h, h)
}

/// As [`grid_sup_all`], scanning with a cheap `scan` and refining with `h`.
fn grid_sup_scan(
    lo: f64,
    hi: f64,
    n: usize,
    refine: usize,
    scan: &(impl Fn(f64) -> f64 + Sync),
    h: &(impl Fn(f64) -> f64 + Sync),
) -> Vec<(f64, f64)> {
    if !(hi > lo) {
        return vec![(lo, h(lo))];
    }
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vs: Vec<f64> = if n >= 256 {
        xs.par_iter().map(|&x| scan(x)).collect()
    } else {
        xs.iter().map(|&x| scan(x)).collect()
    };
    let mut cands: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || vs[i] >= vs[i - 1]) && (i + 1 == n || vs[i] >= vs[i + 1]))
        .collect();
    cands.sort_by(|&a, &b| vs[b].total_cmp(&vs[a]).then(a.cmp(&b)));
    cands.truncate(refine.max(1));
    let mut out: Vec<(f64, f64)> = cands
        .into_iter()
        .map(|i| {
            let a = xs[i.saturating_sub(1)];
            let b = xs[(i + 1).min(n - 1)];
            let r = golden_max(a, b, h);
            let at_node = h(xs[i]);
            if r.1 >= at_node {
                r
            } else {
                (xs[i], at_node)
            }
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    out
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub inputs: Value,
    pub values: BTreeMap<String, f64>,
    pub gaps: BTreeMap<String, f64>,
    pub pass: bool,
    pub status: LemmaStatus,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl LemmaReport {
    fn new(lemma: &str, inputs: Value) -> Self {
        LemmaReport {
            lemma: lemma.into(),
            inputs,
            values: BTreeMap::new(),
            gaps: BTreeMap::new(),
            pass: false,
            status: LemmaStatus::Fail,
            notes: Vec::new(),
        }
    }

    fn not_applicable(mut self, why: String) -> Self {
        self.status = LemmaStatus::NotApplicable;
        self.pass = false;
        self.notes.push(why);
        self
    }

    fn finish(mut self, ok: bool) -> Self {
        self.pass = ok;
        self.status = if ok { LemmaStatus::Pass } else { LemmaStatus::Fail };
        self
    }
}

/// Grid sizes and tolerance for the lemma checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LemmaOptions {
    pub grid_n: usize,
    /// Points per axis of the two-dimensional triple search.
    pub grid2d_n: usize,
    /// Local maxima refined after each scan.
    pub refine_top: usize,
    pub tol: f64,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        LemmaOptions {
            grid_n: 2001,
            grid2d_n: 401,
            refine_top: 3,
            tol: 1e-5,
        }
    }
}

impl LemmaOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 3 || self.grid2d_n < 3 {
            return Err(Error::Config("lemma grids need at least 3 points".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("lemma tolerance must be positive".into()));
        }
        Ok(())
    }
}

fn inputs_of(fs: &[&ScalarFunction]) -> Value {
    Value::Array(
        fs.iter()
            .map(|f| json!({"label": f.label, "domain_max": f.domain_max}))
            .collect(),
    )
}

/// Numeric convexity and monotonicity test; `Err` carries the reason.
pub fn check_admissible(f: &ScalarFunction, strict: bool) -> std::result::Result<(), String> {
    let b = f.domain_max;
    if b == 0.0 {
        let v = f.value(0.0);
        return if v.is_finite() {
            Ok(())
        } else {
            Err(format!("{} is not finite at 0", f.label))
        };
    }
    let xs = linspace(0.0, b, PRECONDITION_POINTS);
    let vs: Vec<f64> = xs.iter().map(|&x| f.value(x)).collect();
    let ds: Vec<f64> = xs.iter().map(|&x| f.derivative(x)).collect();
    if vs.iter().chain(&ds).any(|v| !v.is_finite()) {
        return Err(format!("{} is not finite on [0, {b}]", f.label));
    }
    let scale = vs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let eps = 1e-12 * scale;
    if vs.windows(2).any(|w| w[1] - w[0] < -eps) || ds[0] < -1e-9 {
        return Err(format!("{} is not non-decreasing", f.label));
    }
    if vs.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] < -eps) {
        return Err(format!("{} is not convex", f.label));
    }
    let dscale = ds.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if strict && (ds.windows(2).any(|w| w[1] - w[0] < -1e-9 * dscale) || ds[ds.len() - 1] <= ds[0]) {
        return Err(format!("{} is not strictly convex", f.label));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Two-function exchange identity

/// Fixed couples `q1 = g'(q2)`, `q2 = f'(q1)` with `q2` in `[0, L_f]`.
fn fixed_couples(f: &ScalarFunction, g: &ScalarFunction, n: usize) -> Vec<(f64, f64)> {
    let lf = f.lipschitz();
    let r = |q2: f64| f.derivative(g.derivative(q2)) - q2;
    let xs = linspace(0.0, lf, n);
    let rs: Vec<f64> = xs.iter().map(|&x| r(x)).collect();
    let mut roots = Vec::new();
    for i in 0..xs.len() {
        if rs[i].abs() <= ROOT_ACCEPT {
            roots.push(xs[i]);
        }
        if i + 1 < xs.len() && rs[i] * rs[i + 1] < 0.0 {
            let (mut a, mut b, ra) = (xs[i], xs[i + 1], rs[i]);
            for _ in 0..BISECT_STEPS {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if r(m) * ra > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let m = 0.5 * (a + b);
            if r(m).abs() <= ROOT_ACCEPT {
                roots.push(m);
            }
        }
    }
    roots.into_iter().map(|q2| (g.derivative(q2), q2)).collect()
}

fn psi(f: &ScalarFunction, g: &ScalarFunction, q1: f64, q2: f64) -> f64 {
    f.value(q1) + g.value(q2) - q1 * q2
}

/// Compares `sup_{q1} inf_{q2} psi`, `sup_{q2} inf_{q1} psi` and the best fixed
/// couple, for `psi(q1, q2) = f(q1) + g(q2) - q1 q2`.
pub fn verify_sup_inf(f: &ScalarFunction, g: &ScalarFunction, opts: &LemmaOptions) -> Result<LemmaReport> {
    opts.validate()?;
    let report = LemmaReport::new("sup_inf", inputs_of(&[f, g]));
    for (h, strict) in [(f, false), (g, true)] {
        if let Err(why) = check_admissible(h, strict) {
            return Ok(report.not_applicable(why));
        }
    }
    let (lf, lg) = (f.lipschitz(), g.lipschitz());
    let n = opts.grid_n;

    // inf over q2 of g(q2) - q1 q2 is -g*(q1); finite only for q1 <= L_g.
    let a_all = grid_sup_all(0.0, lg, n, opts.refine_top, &|q1| f.value(q1) - g.conjugate(q1).0);
    let b_all = grid_sup_all(0.0, lf, n, opts.refine_top, &|q2| g.value(q2) - f.conjugate(q2).0);
    let (qa, va) = a_all[0];
    let (qb, vb) = b_all[0];
    let couples = fixed_couples(f, g, n);
    let vc = couples
        .iter()
        .map(|&(q1, q2)| psi(f, g, q1, q2))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut report = report;
    report.values.insert("sup_q1_inf_q2".into(), va);
    report.values.insert("sup_q2_inf_q1".into(), vb);
    report.values.insert("sup_fixed_couples".into(), vc);
    report.gaps.insert("a_b".into(), (va - vb).abs());
    report.gaps.insert("a_c".into(), (va - vc).abs());
    report.gaps.insert("b_c".into(), (vb - vc).abs());
    if couples.is_empty() {
        report.notes.push("no fixed couple located".into());
    }

    // Optimal couples of the two nested problems, completed by stationarity.
    let couple_a = (qa, f.derivative(qa));
    let couple_b = (g.derivative(qb), qb);
    let close = |x: (f64, f64), y: (f64, f64)| {
        let s = 1.0 + x.0.abs().max(x.1.abs());
        (x.0 - y.0).abs().max((x.1 - y.1).abs()) <= 1e-4 * s
    };
    let near_opt = |c: &(f64, f64)| (psi(f, g, c.0, c.1) - vc).abs() <= opts.tol;
    let agree = couples
        .iter()
        .filter(|c| near_opt(c))
        .any(|&c| close(c, couple_a))
        && couples.iter().filter(|c| near_opt(c)).any(|&c| close(c, couple_b));
    report.values.insert("couple_a_q1".into(), couple_a.0);
    report.values.insert("couple_a_q2".into(), couple_a.1);
    report.values.insert("couple_b_q1".into(), couple_b.0);
    report.values.insert("couple_b_q2".into(), couple_b.1);
    report.values.insert("couples_agree".into(), if agree { 1.0 } else { 0.0 });

    let ok = !couples.is_empty() && report.gaps.values().all(|&g| g <= opts.tol);
    Ok(report.finish(ok))
}

// ---------------------------------------------------------------------------
// Envelope

/// `phi(t) = sup_{q1} inf_{q2} f(t q1) + g(t q2) - t q1 q2`.
pub struct Envelope<'a> {
    f: &'a ScalarFunction,
    g: &'a ScalarFunction,
    opts: LemmaOptions,
    grid: Vec<f64>,
    gstar: Vec<f64>,
}

impl<'a> Envelope<'a> {
    pub fn new(f: &'a ScalarFunction, g: &'a ScalarFunction, opts: &LemmaOptions) -> Self {
        let grid = linspace(0.0, g.lipschitz(), opts.grid_n);
        let gstar = grid.par_iter().map(|&y| g.conjugate(y).0).collect();
        Envelope {
            f,
            g,
            opts: opts.clone(),
            grid,
            gstar,
        }
    }

    /// Value and the optimal `q1` candidates (within round-off of the best).
    pub fn eval_with_args(&self, t: f64) -> (f64, Vec<f64>) {
        if t == 0.0 {
            return (self.f.value(0.0) + self.g.value(0.0), vec![self.g.derivative(0.0)]);
        }
        let obj = |q1: f64| self.f.value(t * q1) - self.g.conjugate(q1).0;
        let n = self.grid.len();
        if n == 1 {
            return (obj(self.grid[0]), vec![self.grid[0]]);
        }
        let vs: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.gstar)
            .map(|(&q, &gs)| self.f.value(t * q) - gs)
            .collect();
        let mut cands: Vec<usize> = (0..n)
            .filter(|&i| (i == 0 || vs[i] >= vs[i - 1]) && (i + 1 == n || vs[i] >= vs[i + 1]))
            .collect();
        cands.sort_by(|&a, &b| vs[b].total_cmp(&vs[a]).then(a.cmp(&b)));
        cands.truncate(self.opts.refine_top.max(1));
        let refined: Vec<(f64, f64)> = cands
            .into_iter()
            .map(|i| {
                let r = golden_max(self.grid[i.saturating_sub(1)], self.grid[(i + 1).min(n - 1)], &obj);
                if r.1 >= vs[i] {
                    r
                } else {
                    (self.grid[i], vs[i])
                }
            })
            .collect();
        let best = refined.iter().fold(f64::NEG_INFINITY, |a, r| a.max(r.1));
        let args = refined
            .iter()
            .filter(|r| best - r.1 <= OPT_TIE * best.abs().max(1.0))
            .map(|r| r.0)
            .collect();
        (best, args)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_args(t).0
    }

    /// Grid maximum without refinement.
    pub fn eval_coarse(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.f.value(0.0) + self.g.value(0.0);
        }
        self.grid
            .iter()
            .zip(&self.gstar)
            .map(|(&q, &gs)| self.f.value(t * q) - gs)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub t: f64,
    pub value: f64,
    /// `None` at `t = 0`.
    pub left_derivative: Option<f64>,
    pub right_derivative: f64,
    pub product_min: f64,
    pub product_max: f64,
    pub report: LemmaReport,
}

/// Value and one-sided derivatives of the envelope, compared with the
/// extreme products `q1* q2*` over optimal couples.
pub fn envelope_phi(
    f: &ScalarFunction,
    g: &ScalarFunction,
    t: f64,
    opts: &LemmaOptions,
) -> Result<EnvelopeResult> {
    opts.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("envelope needs t >= 0, got {t}")));
    }
    let mut report = LemmaReport::new("envelope", json!({"functions": inputs_of(&[f, g]), "t": t}));
    for h in [f, g] {
        if let Err(why) = check_admissible(h, true) {
            return Ok(EnvelopeResult {
                t,
                value: f64::NAN,
                left_derivative: None,
                right_derivative: f64::NAN,
                product_min: f64::NAN,
                product_max: f64::NAN,
                report: report.not_applicable(why),
            });
        }
    }
    let env = Envelope::new(f, g, opts);
    let (value, args) = env.eval_with_args(t);
    let h = 1e-5 * t.max(1.0);
    let right = (-3.0 * value + 4.0 * env.eval(t + h) - env.eval(t + 2.0 * h)) / (2.0 * h);
    let left = (t >= 2.0 * h)
        .then(|| (3.0 * value - 4.0 * env.eval(t - h) + env.eval(t - 2.0 * h)) / (2.0 * h));

    let products: Vec<f64> = if t == 0.0 {
        vec![f.derivative(0.0) * g.derivative(0.0)]
    } else {
        args.iter().map(|&q1| q1 * f.derivative(t * q1)).collect()
    };
    let pmin = products.iter().cloned().fold(f64::INFINITY, f64::min);
    let pmax = products.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    report.values.insert("phi".into(), value);
    report.values.insert("right_derivative".into(), right);
    report.values.insert("product_max".into(), pmax);
    report.gaps.insert("right".into(), (right - pmax).abs());
    if let Some(l) = left {
        report.values.insert("left_derivative".into(), l);
        report.values.insert("product_min".into(), pmin);
        report.gaps.insert("left".into(), (l - pmin).abs());
    }
    let ok = report.gaps.values().all(|&g| g <= opts.tol);
    Ok(EnvelopeResult {
        t,
        value,
        left_derivative: left,
        right_derivative: right,
        product_min: pmin,
        product_max: pmax,
        report: report.finish(ok),
    })
}

// ---------------------------------------------------------------------------
// Three-function identity

fn triples(
    f1: &ScalarFunction,
    f2: &ScalarFunction,
    f3: &ScalarFunction,
    n: usize,
) -> Vec<[f64; 3]> {
    let (l1, l3) = (f1.lipschitz(), f3.lipschitz());
    let res = |q1: f64, q3: f64| {
        let q2 = f2.derivative(q1 * q3);
        (f1.derivative(q2 * q3) - q1, f3.derivative(q1 * q2) - q3)
    };
    let g1 = linspace(0.0, l1, n);
    let g3 = linspace(0.0, l3, n);
    let table: Vec<Vec<(f64, f64)>> = g1
        .par_iter()
        .map(|&a| g3.iter().map(|&c| res(a, c)).collect())
        .collect();

    let mut seeds: Vec<(f64, f64)> = Vec::new();
    for i in 0..g1.len() {
        for k in 0..g3.len() {
            let (r1, r2) = table[i][k];
            if r1.abs().max(r2.abs()) <= ROOT_ACCEPT {
                seeds.push((g1[i], g3[k]));
                continue;
            }
            if i + 1 < g1.len() && k + 1 < g3.len() {
                let corners = [table[i][k], table[i + 1][k], table[i][k + 1], table[i + 1][k + 1]];
                let spans = |sel: fn(&(f64, f64)) -> f64| {
                    let lo = corners.iter().map(sel).fold(f64::INFINITY, f64::min);
                    let hi = corners.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
                    lo <= 0.0 && hi >= 0.0
                };
                if spans(|c| c.0) && spans(|c| c.1) {
                    seeds.push((0.5 * (g1[i] + g1[i + 1]), 0.5 * (g3[k] + g3[k + 1])));
                }
            }
        }
    }

    let polished: Vec<Option<[f64; 3]>> = seeds
        .par_iter()
        .map(|&(a, c)| {
            let (mut q1, mut q3) = (a, c);
            for _ in 0..60 {
                let (r1, r2) = res(q1, q3);
                if r1.abs().max(r2.abs()) <= 1e-14 {
                    break;
                }
                let h1 = 1e-7 * l1.max(1e-3);
                let h3 = 1e-7 * l3.max(1e-3);
                let s1 = if q1 + h1 > l1 { -h1 } else { h1 };
                let s3 = if q3 + h3 > l3 { -h3 } else { h3 };
                let (a1, a2) = res(q1 + s1, q3);
                let (b1, b2) = res(q1, q3 + s3);
                let (j11, j21) = ((a1 - r1) / s1, (a2 - r2) / s1);
                let (j12, j22) = ((b1 - r1) / s3, (b2 - r2) / s3);
                let det = j11 * j22 - j12 * j21;
                if det.abs() < 1e-300 || !det.is_finite() {
                    break;
                }
                let d1 = (r1 * j22 - r2 * j12) / det;
                let d3 = (r2 * j11 - r1 * j21) / det;
                let n1 = (q1 - d1).clamp(0.0, l1);
                let n3 = (q3 - d3).clamp(0.0, l3);
                let (m1, m2) = res(n1, n3);
                if m1.abs().max(m2.abs()) > r1.abs().max(r2.abs()) {
                    break;
                }
                q1 = n1;
                q3 = n3;
            }
            let (r1, r2) = res(q1, q3);
            (r1.abs().max(r2.abs()) <= ROOT_ACCEPT).then(|| [q1, f2.derivative(q1 * q3), q3])
        })
        .collect();

    let mut out: Vec<[f64; 3]> = Vec::new();
    for t in polished.into_iter().flatten() {
        if !out
            .iter()
            .any(|u| (0..3).all(|j| (u[j] - t[j]).abs() <= 1e-7 * (1.0 + t[j].abs())))
        {
            out.push(t);
        }
    }
    out
}

/// Compares the nested sup-inf form with the best triple of fixed points.
pub fn verify_se_equivalence(
    f1: &ScalarFunction,
    f2: &ScalarFunction,
    f3: &ScalarFunction,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    opts.validate()?;
    let report = LemmaReport::new("se_equivalence", inputs_of(&[f1, f2, f3]));
    for h in [f1, f2, f3] {
        if let Err(why) = check_admissible(h, true) {
            return Ok(report.not_applicable(why));
        }
    }
    // phi built from (f, g) = (f2, f1): f2 carries q1 q3, f1 carries q2 q3.
    let env = Envelope::new(f2, f1, opts);
    let (q3_star, lhs) = grid_sup_scan(
        0.0,
        f3.lipschitz(),
        opts.grid_n,
        opts.refine_top,
        &|q3| env.eval_coarse(q3) - f3.conjugate(q3).0,
        &|q3| env.eval(q3) - f3.conjugate(q3).0,
    )[0];
    let found = triples(f1, f2, f3, opts.grid2d_n);
    let value = |t: &[f64; 3]| {
        let [q1, q2, q3] = *t;
        f1.value(q2 * q3) + f2.value(q1 * q3) + f3.value(q1 * q2) - 2.0 * q1 * q2 * q3
    };
    let best = found
        .iter()
        .map(|t| (value(t), *t))
        .fold((f64::NEG_INFINITY, [f64::NAN; 3]), |a, c| if c.0 > a.0 { c } else { a });

    let mut report = report;
    report.values.insert("lhs".into(), lhs);
    report.values.insert("rhs".into(), best.0);
    report.values.insert("lhs_q3".into(), q3_star);
    report.values.insert("rhs_q1".into(), best.1[0]);
    report.values.insert("rhs_q2".into(), best.1[1]);
    report.values.insert("rhs_q3".into(), best.1[2]);
    report.values.insert("triples".into(), found.len() as f64);
    report.gaps.insert("lhs_rhs".into(), (lhs - best.0).abs());
    if found.is_empty() {
        report.notes.push("no fixed triple located".into());
    }
    let ok = !found.is_empty() && (lhs - best.0).abs() <= opts.tol;
    Ok(report.finish(ok))
}

// ---------------------------------------------------------------------------
// Function families

/// `x^2 / 2 + b x` on `[0, bound]`.
pub fn quadratic(bound: f64, linear: f64) -> Result<ScalarFunction> {
    Ok(ScalarFunction::new(format!("x^2/2 + {linear} x"), bound, move |x| 0.5 * x * x + linear * x)?
        .with_derivative(move |x| x + linear))
}

/// `sum_k c_k (sqrt(1 + (a_k x)^2) - shift)` on `[0, bound]`.
pub fn sqrt_mixture(bound: f64, terms: &[(f64, f64)], shift: f64) -> Result<ScalarFunction> {
    let t = terms.to_vec();
    let t2 = terms.to_vec();
    let label = format!("sqrt mixture {terms:?} shift {shift}");
    Ok(ScalarFunction::new(label, bound, move |x| {
        t.iter().map(|&(c, a)| c * ((1.0 + (a * x).powi(2)).sqrt() - shift)).sum()
    })?
    .with_derivative(move |x| {
        t2.iter()
            .map(|&(c, a)| c * a * a * x / (1.0 + (a * x).powi(2)).sqrt())
            .sum()
    }))
}

/// Random positive mixture of one to three `sqrt(1 + (a x)^2)` terms.
pub fn random_sqrt_terms<R: Rng + ?Sized>(rng: &mut R) -> Vec<(f64, f64)> {
    let k = rng.random_range(1..=3);
    (0..k)
        .map(|_| (rng.random_range(0.3..1.5), rng.random_range(0.5..2.5)))
        .collect()
}

fn slope_bound(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|&(c, a)| c * a).sum()
}

/// Random admissible pair with a box wide enough that the lemma never leaves it.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> Result<(ScalarFunction, ScalarFunction)> {
    let (tf, tg) = (random_sqrt_terms(rng), random_sqrt_terms(rng));
    let b = slope_bound(&tf).max(slope_bound(&tg)) + 1.0;
    Ok((sqrt_mixture(b, &tf, 0.0)?, sqrt_mixture(b, &tg, 0.0)?))
}

/// Random admissible triple; the box covers products of two slopes.
pub fn random_triple<R: Rng + ?Sized>(
    rng: &mut R,
) -> Result<(ScalarFunction, ScalarFunction, ScalarFunction)> {
    let ts = [random_sqrt_terms(rng), random_sqrt_terms(rng), random_sqrt_terms(rng)];
    let l = ts.iter().map(|t| slope_bound(t)).fold(0.0, f64::max);
    let b = l * l + 1.0;
    Ok((
        sqrt_mixture(b, &ts[0], 0.0)?,
        sqrt_mixture(b, &ts[1], 0.0)?,
        sqrt_mixture(b, &ts[2], 0.0)?,
    ))
}

/// Convex transforms of an order-2 model: with `q1 = c m_u`, `q2 = c m_v` and
/// `c^2 = λ α_u α_v / 2`, `-inf sup f_pot2 = sup_{q1} inf_{q2} psi(f, g)`.
pub fn matrix_transforms(p: &ModelParams) -> Result<(ScalarFunction, ScalarFunction)> {
    if p.order() != Order::Two {
        return Err(Error::Config("matrix transforms need an order-2 model".into()));
    }
    let (l, a) = (p.lambda(), p.alphas().to_vec());
    if l == 0.0 {
        return Err(Error::Config("transforms need lambda > 0".into()));
    }
    let c = (0.5 * l * a[0] * a[1]).sqrt();
    let make = |own: usize, other: usize, label: &str| -> Result<ScalarFunction> {
        // f(q) = -α_other f~_other(s q), s = λ α_own / c
        let s = l * a[own] / c;
        let w = a[other];
        let ch = p.channel(other).clone();
        let ch2 = ch.clone();
        Ok(ScalarFunction::new(label, c * p.rho(own), move |x| {
            -w * ch.free_energy(s * x).unwrap_or(f64::NAN)
        })?
        .with_derivative(move |x| 0.5 * w * s * ch2.overlap_clamped(s * x)))
    };
    Ok((make(0, 1, "matrix f")?, make(1, 0, "matrix g")?))
}

/// Convex transforms of an order-3 model with `q_i = c m_i`, `2 c^3 = λ α_u α_v α_w`.
pub fn tensor_transforms(
    p: &ModelParams,
) -> Result<(ScalarFunction, ScalarFunction, ScalarFunction)> {
    if p.order() != Order::Three {
        return Err(Error::Config("tensor transforms need an order-3 model".into()));
    }
    let (l, a) = (p.lambda(), p.alphas().to_vec());
    if l == 0.0 {
        return Err(Error::Config("transforms need lambda > 0".into()));
    }
    let c = (0.5 * l * a[0] * a[1] * a[2]).cbrt();
    let make = |i: usize| -> Result<ScalarFunction> {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let s = l * a[j] * a[k] / (c * c);
        let w = a[i];
        let ch = p.channel(i).clone();
        let ch2 = ch.clone();
        let bound = c * c * p.rho(j) * p.rho(k);
        Ok(ScalarFunction::new(format!("tensor f{}", i + 1), bound, move |x| {
            -w * ch.free_energy(s * x).unwrap_or(f64::NAN)
        })?
        .with_derivative(move |x| 0.5 * w * s * ch2.overlap_clamped(s * x)))
    };
    Ok((make(0)?, make(1)?, make(2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_extension_and_conjugate() {
        let f = quadratic(2.0, 0.0).unwrap();
        assert_eq!(f.value(3.0), 2.0 + 2.0);
        assert_eq!(f.lipschitz(), 2.0);
        let (v, x) = f.conjugate(1.5);
        assert!((v - 1.125).abs() < 1e-12 && (x - 1.5).abs() < 1e-12);
        let fd = ScalarFunction::new("sq", 2.0, |x| 0.5 * x * x).unwrap();
        assert!((fd.derivative(1.0) - 1.0).abs() < 1e-8);
        assert!((fd.derivative(0.0)).abs() < 1e-8);
        assert!((fd.derivative(2.0) - 2.0).abs() < 1e-8);
        let (v2, _) = fd.conjugate(1.5);
        assert!((v2 - 1.125).abs() < 1e-10);
    }

    #[test]
    fn golden_finds_interior_max() {
        let (x, v) = golden_max(0.0, 3.0, &|x: f64| -(x - 1.3).powi(2));
        assert!((x - 1.3).abs() < 1e-7 && v.abs() < 1e-14);
    }

    #[test]
    fn admissibility() {
        assert!(check_admissible(&quadratic(2.0, 0.0).unwrap(), true).is_ok());
        let lin = ScalarFunction::new("lin", 1.0, |x| x).unwrap();
        assert!(check_admissible(&lin, false).is_ok());
        assert!(check_admissible(&lin, true).is_err());
        let dec = ScalarFunction::new("dec", 1.0, |x| -x).unwrap();
        assert!(check_admissible(&dec, false).is_err());
        let conc = ScalarFunction::new("conc", 1.0, |x: f64| x.sqrt()).unwrap();
        assert!(check_admissible(&conc, false).is_err());
    }
}
