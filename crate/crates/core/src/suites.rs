//! Batteries of invariant checks behind `tensorinfo verify`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::oracle::{self, Disorder, OracleParams};
use crate::potentials::{ModelParams, Order};
use crate::priors::Prior;
use crate::scalar_channel::{QuadratureConfig, ScalarChannel};
use crate::solvers::{self, SolverConfig, ThresholdResult, TransitionKind};
use crate::variational::{self, LemmaOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lemmas,
    Theorems,
    Oracle,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub pass: bool,
    pub details: Value,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub fast: bool,
    pub seed: u64,
    pub solver: SolverConfig,
    pub quad: QuadratureConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            fast: false,
            seed: 1,
            solver: SolverConfig::default(),
            quad: QuadratureConfig::default(),
        }
    }
}

fn check(suite: Suite, name: impl Into<String>, pass: bool, details: Value) -> Check {
    Check {
        suite,
        name: name.into(),
        pass,
        details,
    }
}

fn families() -> Vec<(&'static str, Prior)> {
    vec![
        ("gaussian", Prior::gaussian(1.0).expect("unit variance")),
        ("rademacher", Prior::rademacher()),
        ("sparse_rademacher_0.25", Prior::sparse_rademacher(0.25).expect("valid sparsity")),
    ]
}

pub fn run(suite: Suite, opts: &SuiteOptions) -> Result<Vec<Check>> {
    match suite {
        Suite::Lemmas => lemmas(opts),
        Suite::Theorems => theorems(opts),
        Suite::Oracle => oracle_suite(opts),
    }
}

fn lemmas(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let s = Suite::Lemmas;
    let lo = LemmaOptions {
        grid_n: if opts.fast { 801 } else { 2001 },
        ..LemmaOptions::default()
    };
    let mut out = Vec::new();
    let as_check = |name: &str, r: &variational::LemmaReport| {
        check(s, name, r.pass, serde_json::to_value(r).unwrap_or(Value::Null))
    };

    let q0 = variational::quadratic(2.0, 0.0)?;
    let q1 = variational::quadratic(2.0, 1.0)?;
    out.push(as_check("sup_inf/quadratics", &variational::verify_sup_inf(&q0, &q0, &lo)?));
    out.push(as_check("sup_inf/shifted_quadratic", &variational::verify_sup_inf(&q0, &q1, &lo)?));
    let rad = Prior::rademacher();
    let p2 = ModelParams::new(Order::Two, 2.0, &[1.0, 1.0], &[rad.clone(), rad.clone()], opts.quad)?;
    let (f, g) = variational::matrix_transforms(&p2)?;
    out.push(as_check("sup_inf/rademacher_matrix", &variational::verify_sup_inf(&f, &g, &lo)?));

    let sq = variational::sqrt_mixture(3.0, &[(1.0, 1.0)], 1.0)?;
    for (name, a, b, t) in [
        ("envelope/quadratics_t0.5", &q0, &q0, 0.5),
        ("envelope/sqrt_t2", &sq, &sq, 2.0),
        ("envelope/sqrt_t0", &sq, &sq, 0.0),
    ] {
        out.push(as_check(name, &variational::envelope_phi(a, b, t, &lo)?.report));
    }

    let s2 = variational::sqrt_mixture(2.0, &[(1.0, 1.0)], 0.0)?;
    out.push(as_check(
        "se_equivalence/sqrt",
        &variational::verify_se_equivalence(&s2, &s2, &s2, &lo)?,
    ));
    let s0 = variational::sqrt_mixture(0.0, &[(1.0, 1.0)], 0.0)?;
    out.push(as_check(
        "se_equivalence/degenerate_box",
        &variational::verify_se_equivalence(&s0, &s0, &s0, &lo)?,
    ));
    if !opts.fast {
        let p3 = ModelParams::new(Order::Three, 6.0, &[1.0; 3], &[rad.clone(), rad.clone(), rad], opts.quad)?;
        let (f1, f2, f3) = variational::tensor_transforms(&p3)?;
        out.push(as_check(
            "se_equivalence/rademacher_tensor",
            &variational::verify_se_equivalence(&f1, &f2, &f3, &lo)?,
        ));
    }

    let trials = if opts.fast { 10 } else { 100 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut fails = [0usize; 3];
    let mut worst = [0.0f64; 3];
    let mut phis: Vec<f64> = Vec::new();
    for _ in 0..trials {
        let (f, g) = variational::random_pair(&mut rng)?;
        let r = variational::verify_sup_inf(&f, &g, &lo)?;
        fails[0] += usize::from(!r.pass);
        worst[0] = worst[0].max(r.gaps.values().cloned().fold(0.0, f64::max));
        let t = rand::Rng::random_range(&mut rng, 0.0..3.0);
        let e = variational::envelope_phi(&f, &g, t, &lo)?;
        fails[1] += usize::from(!e.report.pass);
        worst[1] = worst[1].max(e.report.gaps.values().cloned().fold(0.0, f64::max));
        if phis.is_empty() {
            let env = variational::Envelope::new(&f, &g, &lo);
            phis = (0..=20).map(|i| env.eval(0.15 * i as f64)).collect();
        }
        let (a, b, c) = variational::random_triple(&mut rng)?;
        let r = variational::verify_se_equivalence(&a, &b, &c, &lo)?;
        fails[2] += usize::from(!r.pass);
        worst[2] = worst[2].max(r.gaps.values().cloned().fold(0.0, f64::max));
    }
    for (i, name) in ["sup_inf/random", "envelope/random", "se_equivalence/random"].iter().enumerate() {
        out.push(check(
            s,
            *name,
            fails[i] == 0,
            json!({"trials": trials, "failures": fails[i], "worst_gap": worst[i], "seed": opts.seed}),
        ));
    }
    let d1_ok = phis.windows(2).all(|w| w[1] - w[0] >= -lo.tol);
    let d2_ok = phis.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -lo.tol);
    out.push(check(s, "envelope/monotone_convex", d1_ok && d2_ok, json!({"phi": phis})));
    Ok(out)
}

fn theorems(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let s = Suite::Theorems;
    let cfg = &opts.solver;
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for (name, pr) in families() {
        for l in [0.5, 1.5, 3.0, 6.0] {
            let p = ModelParams::new(Order::Two, l, &[1.0, 1.0], &[pr.clone(), pr.clone()], opts.quad)?;
            let a = solvers::rs_free_energy2(&p, cfg)?;
            let b = solvers::inf_sup2(&p, cfg)?;
            let gap = (a.free_energy - b.free_energy).abs();
            worst = worst.max(gap);
            cases.push(json!({"prior": name, "lambda": l, "gamma_inf": a.free_energy, "inf_sup": b.free_energy, "gap": gap}));
        }
    }
    out.push(check(s, "matrix_formula_equality", worst <= 1e-6, json!({"max_gap": worst, "cases": cases})));

    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    let lambdas: &[f64] = if opts.fast { &[4.0, 6.0] } else { &[2.0, 4.0, 6.0] };
    for (name, pr) in families().into_iter().take(2) {
        for &l in lambdas {
            let p = ModelParams::new(Order::Three, l, &[1.0; 3], &[pr.clone(), pr.clone(), pr.clone()], opts.quad)?;
            let a = solvers::rs_free_energy3(&p, cfg)?;
            let b = solvers::inf_sup_aux3(&p, cfg)?;
            let gap = (a.free_energy - b.free_energy).abs();
            worst = worst.max(gap);
            cases.push(json!({"prior": name, "lambda": l, "gamma_inf": a.free_energy, "aux_inf_sup": b.free_energy, "gap": gap}));
        }
    }
    out.push(check(s, "tensor_formula_agreement", worst <= 1e-6, json!({"max_gap": worst, "cases": cases})));

    let g = Prior::gaussian(1.0)?;
    let thr = |alphas: &[f64], order: Order, lo: f64, hi: f64| -> Result<ThresholdResult> {
        let pr = vec![g.clone(); order.factors()];
        let p = ModelParams::new(order, 1.0, alphas, &pr, opts.quad)?;
        solvers::find_lambda_opt(&p, lo, hi, cfg)
    };
    let t1 = thr(&[1.0, 1.0], Order::Two, 0.5, 2.0)?;
    let ok1 = t1.lambda_opt().is_some_and(|l| (l - 1.0).abs() <= 1e-3)
        && matches!(t1, ThresholdResult::Found { kind: TransitionKind::Continuous, .. });
    out.push(check(s, "threshold/gaussian_matrix", ok1, serde_json::to_value(&t1).unwrap_or(Value::Null)));
    let t2 = thr(&[1.0, 4.0], Order::Two, 0.25, 1.0)?;
    let ok2 = t2.lambda_opt().is_some_and(|l| (l - 0.5).abs() <= 1e-3);
    out.push(check(s, "threshold/gaussian_matrix_aspect", ok2, serde_json::to_value(&t2).unwrap_or(Value::Null)));
    let t3 = thr(&[1.0; 3], Order::Three, 3.0, 6.0)?;
    let ok3 = t3.lambda_emergence().is_some_and(|l| (l - 4.0).abs() <= 1e-3)
        && t3.lambda_opt().zip(t3.lambda_emergence()).is_some_and(|(o, e)| o > e)
        && matches!(t3, ThresholdResult::Found { kind: TransitionKind::FirstOrder, .. });
    out.push(check(s, "threshold/gaussian_tensor", ok3, serde_json::to_value(&t3).unwrap_or(Value::Null)));

    // Damping invariance.
    let mut worst = 0.0f64;
    for l in [1.5, 3.0] {
        let p = ModelParams::new(Order::Two, l, &[1.0, 1.0], &[Prior::rademacher(), Prior::rademacher()], opts.quad)?;
        let undamped = SolverConfig { damping: 0.0, ..cfg.clone() };
        let a = solvers::rs_free_energy2(&p, cfg)?;
        let b = solvers::rs_free_energy2(&p, &undamped)?;
        worst = worst.max((a.free_energy - b.free_energy).abs()).max(a.minimizer.distance(&b.minimizer));
    }
    out.push(check(s, "damping_invariance", worst <= 1e-8, json!({"max_difference": worst})));

    // Sweeps: monotone mutual information, concave free energy.
    let step: f64 = if opts.fast { 0.25 } else { 0.05 };
    let count = (6.0 / step).round() as usize;
    let grid: Vec<f64> = (0..=count).map(|i| i as f64 * step).collect();
    let rad = Prior::rademacher();
    for order in [Order::Two, Order::Three] {
        let pr = vec![rad.clone(); order.factors()];
        let alphas = vec![1.0; order.factors()];
        let p = ModelParams::new(order, 0.0, &alphas, &pr, opts.quad)?;
        let rows = solvers::sweep(&p, &grid, cfg)?;
        let mono = rows.windows(2).map(|w| w[0].mi_per_n - w[1].mi_per_n).fold(f64::NEG_INFINITY, f64::max);
        let conc = rows
            .windows(3)
            .map(|w| w[2].f_rs - 2.0 * w[1].f_rs + w[0].f_rs)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = mono <= 1e-9 && conc <= 1e-6 && rows[0].mi_per_n == 0.0;
        out.push(check(
            s,
            format!("sweep/rademacher_order{order}"),
            ok,
            json!({"max_mi_decrease": mono, "max_second_difference": conc, "mi_at_zero": rows[0].mi_per_n, "rows": rows.len()}),
        ));
    }
    Ok(out)
}

fn oracle_suite(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let s = Suite::Oracle;
    let cfg = &opts.solver;
    let rad = Prior::rademacher();
    let chan = ScalarChannel::new(rad.clone(), opts.quad)?;
    let mut out = Vec::new();

    let m_one = if opts.fast { 20_000 } else { 100_000 };
    for order in [Order::Two, Order::Three] {
        let mut cases = Vec::new();
        let mut ok = true;
        for l in [0.5, 1.0, 2.0, 4.0] {
            let e = oracle::exact_estimate(&OracleParams::iid(order, 1, l, &rad, m_one, opts.seed)?)?;
            let f = chan.free_energy(l)?;
            let pass = (e.mean_f - f).abs() <= 3.0 * e.stderr;
            ok &= pass;
            cases.push(json!({"lambda": l, "mean_f": e.mean_f, "stderr": e.stderr, "scalar": f, "pass": pass}));
        }
        out.push(check(s, format!("n1_identity/order{order}"), ok, json!({"M": m_one, "cases": cases})));
    }

    let (ns, m): (&[usize], usize) = if opts.fast { (&[2, 4], 50) } else { (&[2, 4, 6, 8], 200) };
    let p2 = ModelParams::new(Order::Two, 3.0, &[1.0, 1.0], &[rad.clone(), rad.clone()], opts.quad)?;
    let rs = solvers::rs_free_energy2(&p2, cfg)?.free_energy;
    let ests = ns
        .iter()
        .map(|&n| oracle::exact_estimate(&OracleParams::iid(Order::Two, n, 3.0, &rad, m, opts.seed)?))
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<f64> = ests.iter().map(|e| (e.mean_f - rs).abs()).collect();
    let trend = ests
        .windows(2)
        .zip(gaps.windows(2))
        .all(|(e, g)| g[1] <= g[0] + 2.0 * (e[0].stderr.powi(2) + e[1].stderr.powi(2)).sqrt());
    let last = ests.last().expect("non-empty n list");
    let budget = gaps[gaps.len() - 1] <= 3.0 * last.stderr + 2.0 / last.n as f64;
    out.push(check(
        s,
        "convergence/rademacher_matrix",
        trend && budget,
        json!({"rs": rs, "n": ns, "mean_f": ests.iter().map(|e| e.mean_f).collect::<Vec<_>>(),
               "stderr": ests.iter().map(|e| e.stderr).collect::<Vec<_>>(), "gaps": gaps}),
    ));

    let n3 = if opts.fast { 3 } else { 4 };
    let p3 = ModelParams::new(Order::Three, 6.0, &[1.0; 3], &[rad.clone(), rad.clone(), rad.clone()], opts.quad)?;
    let rs3 = solvers::rs_free_energy3(&p3, cfg)?.free_energy;
    let e3 = oracle::exact_free_energy3(&OracleParams::iid(Order::Three, n3, 6.0, &rad, m, opts.seed)?)?;
    let gap3 = (e3.mean_f - rs3).abs();
    out.push(check(
        s,
        "finite_size/rademacher_tensor",
        gap3 <= 3.0 * e3.stderr + 3.0 / n3 as f64,
        json!({"rs": rs3, "mean_f": e3.mean_f, "stderr": e3.stderr, "n": n3, "gap": gap3}),
    ));

    // Gauge symmetry, exact per sample at order 2.
    let gp = OracleParams::iid(Order::Two, 3, 2.0, &rad, 1, opts.seed)?;
    let mut gauge_ok = true;
    for i in 0..10 {
        let d = Disorder::for_index(&gp, i);
        let a = oracle::exact_sample(&gp, &d)?;
        let b = oracle::exact_sample(&gp, &d.gauge_flip())?;
        gauge_ok &= a.free_energy == b.free_energy;
    }
    out.push(check(s, "gauge_symmetry", gauge_ok, json!({"samples": 10})));

    // Two routes to the replica overlap, per sample.
    let np = OracleParams::iid(Order::Two, 2, 3.0, &rad, 1, opts.seed)?;
    let mut worst = 0.0f64;
    for i in 0..10 {
        let d = Disorder::for_index(&np, i);
        let a = oracle::exact_sample(&np, &d)?.replica_sq_overlap;
        let b = oracle::replica_overlap_by_pairs(&np, &d)?;
        worst = worst.max((a - b).abs());
    }
    out.push(check(s, "nishimori/replica_routes", worst <= 1e-10, json!({"max_difference": worst})));

    let e = oracle::exact_estimate(&OracleParams::iid(Order::Two, 4, 3.0, &rad, m, opts.seed)?)?;
    let diff = (e.sq_overlap_planted - e.sq_overlap_replica).abs();
    let err = (e.sq_overlap_planted_stderr.powi(2) + e.sq_overlap_replica_stderr.powi(2)).sqrt();
    out.push(check(
        s,
        "nishimori/planted_vs_replica",
        diff <= 3.0 * err,
        json!({"planted": e.sq_overlap_planted, "replica": e.sq_overlap_replica, "combined_stderr": err}),
    ));
    Ok(out)
}
