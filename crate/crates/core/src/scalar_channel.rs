//! The scalar Gaussian channel `Y = sqrt(m) X + Z`.
//!
//! `free_energy(m)` returns `-E ln sum_x P(x) exp(-m x^2/2 + x (m X + sqrt(m) Z))`.
//! Expectations over `Z` use Gauss-Hermite quadrature; discrete priors are
//! summed exactly in the log domain. Gaussian priors use closed forms.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussHermite;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{Prior, PriorKind};

pub const MIN_HERMITE_NODES: usize = 21;
/// Agreement required between the main rule and the coarse self-check rule.
pub const SELF_CHECK_TOL: f64 = 1e-7;

// Nodes whose normalised weight falls below this are dropped.
const NODE_WEIGHT_FLOOR: f64 = 1e-25;
// Priors with at least this many atoms use the factorised kernel.
const FACTORISED_MIN_ATOMS: usize = 24;
// Below this the factorised sum has lost too much range and is redone directly.
const UNDERFLOW_GUARD: f64 = 1e-280;
const SEGMENT: usize = 64;
const BLOCK: usize = 8;
// Largest exponent for which the factored segment scale stays in range.
const LIFT_LIMIT: f64 = 600.0;
// Segments bounded below the top bound by more than this are skipped. The
// skipped mass is at most exp(-PRUNE_GAP) per segment relative to the top
// bound; the retained sum must exceed SKIP_MASS_FLOOR per skipped segment.
const PRUNE_GAP: f64 = 60.0;
const SKIP_MASS_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub hermite_nodes: usize,
    pub log_domain: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            hermite_nodes: 127,
            log_domain: true,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hermite_nodes < MIN_HERMITE_NODES {
            return Err(Error::Config(format!(
                "hermite_nodes must be at least {MIN_HERMITE_NODES}, got {}",
                self.hermite_nodes
            )));
        }
        Ok(())
    }
}

/// Gauss-Hermite rule for a standard normal variable.
#[derive(Debug)]
struct HermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn hermite_rule(n: usize) -> Arc<HermiteRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<HermiteRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(n)
        .or_insert_with(|| {
            let rule = GaussHermite::new(NonZeroUsize::new(n).expect("n > 0"));
            let norm = std::f64::consts::PI.sqrt();
            let mut pairs: Vec<(f64, f64)> = rule
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / norm))
                .filter(|&(_, w)| w > NODE_WEIGHT_FLOOR)
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(HermiteRule {
                nodes: pairs.iter().map(|p| p.0).collect(),
                weights: pairs.iter().map(|p| p.1).collect(),
            })
        })
        .clone()
}

/// All channel quantities at one snr.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMoments {
    pub m: f64,
    /// `f~(m)`
    pub free_energy: f64,
    /// `I(X; Y) = f~(m) + m rho / 2`
    pub mutual_info: f64,
    /// `E[<x> X]`
    pub overlap: f64,
    /// `E[<x>^2]`, equal to `overlap` by the Nishimori identity
    pub overlap_replica: f64,
    /// `rho - overlap`
    pub mmse: f64,
}

/// Channel evaluation with the quadrature self-check attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEvaluation {
    pub m: f64,
    pub f_tilde: f64,
    pub overlap: f64,
    pub mmse: f64,
    pub scalar_mi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_warning: Option<String>,
}

#[derive(Debug)]
struct DiscreteKernel {
    x: Vec<f64>,
    lnp: Vec<f64>,
    // (atom index, weight) pairs for the outer expectation over X
    outer: Vec<(usize, f64)>,
}

#[derive(Debug)]
enum Kernel {
    Gaussian { rho: f64 },
    Discrete(DiscreteKernel),
}

/// Scalar channel for one prior. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct ScalarChannel {
    prior: Prior,
    quad: QuadratureConfig,
    rule: Arc<HermiteRule>,
    check_rule: Arc<HermiteRule>,
    kernel: Arc<Kernel>,
}

#[derive(Clone, Copy, Default)]
struct Accum {
    lse: f64,
    cross: f64,
    square: f64,
}

impl ScalarChannel {
    pub fn new(prior: Prior, quad: QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let kernel = match prior.kind() {
            PriorKind::Gaussian => Kernel::Gaussian {
                rho: prior.second_moment(),
            },
            PriorKind::Discrete => {
                let atoms = prior.atoms();
                let x: Vec<f64> = atoms.iter().map(|a| a.location).collect();
                let lnp: Vec<f64> = atoms.iter().map(|a| a.weight.ln()).collect();
                let outer = if prior.is_symmetric() {
                    // (X, Z) and (-X, -Z) give mirrored posteriors
                    atoms
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| a.location >= 0.0)
                        .map(|(i, a)| {
                            let w = if a.location > 0.0 { 2.0 * a.weight } else { a.weight };
                            (i, w)
                        })
                        .collect()
                } else {
                    atoms.iter().enumerate().map(|(i, a)| (i, a.weight)).collect()
                };
                Kernel::Discrete(DiscreteKernel {
                    x,
                    lnp,
                    outer,
                })
            }
        };
        let check_nodes = ((quad.hermite_nodes - 1) / 2).max(11);
        Ok(ScalarChannel {
            rule: hermite_rule(quad.hermite_nodes),
            check_rule: hermite_rule(check_nodes),
            prior,
            quad,
            kernel: Arc::new(kernel),
        })
    }

    pub fn with_default_quadrature(prior: Prior) -> Result<Self> {
        ScalarChannel::new(prior, QuadratureConfig::default())
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        self.quad
    }

    pub fn rho(&self) -> f64 {
        self.prior.second_moment()
    }

    fn check_m(m: f64) -> Result<()> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::domain(format!(
                "snr m must be finite and non-negative, got {m}"
            )));
        }
        Ok(())
    }

    /// `f~(m)`.
    pub fn free_energy(&self, m: f64) -> Result<f64> {
        Self::check_m(m)?;
        let mi = self.mutual_info_raw(m, &self.rule)?;
        Ok(mi - 0.5 * m * self.rho())
    }

    /// `I(X; sqrt(m) X + Z)`.
    pub fn mutual_info(&self, m: f64) -> Result<f64> {
        Self::check_m(m)?;
        self.mutual_info_raw(m, &self.rule)
    }

    /// `E[<x> X]`.
    pub fn overlap(&self, m: f64) -> Result<f64> {
        Self::check_m(m)?;
        Ok(self.moments_raw(m, &self.rule)?.overlap)
    }

    pub fn mmse(&self, m: f64) -> Result<f64> {
        Ok(self.rho() - self.overlap(m)?)
    }

    /// All channel quantities from a single pass.
    pub fn moments(&self, m: f64) -> Result<ChannelMoments> {
        Self::check_m(m)?;
        self.moments_raw(m, &self.rule)
    }

    /// Overlap for solver loops. Negative or non-finite `m` is clamped to zero.
    pub fn overlap_clamped(&self, m: f64) -> f64 {
        let m = if m.is_finite() && m > 0.0 { m } else { 0.0 };
        match self.moments_raw(m, &self.rule) {
            Ok(c) => c.overlap,
            Err(_) => f64::NAN,
        }
    }

    /// Evaluation with a coarser rule run alongside; a warning is attached
    /// when the two disagree by more than `SELF_CHECK_TOL`.
    pub fn evaluate_checked(&self, m: f64) -> Result<ScalarEvaluation> {
        Self::check_m(m)?;
        let fine = self.moments_raw(m, &self.rule)?;
        let mut warning = None;
        if let Kernel::Discrete(_) = *self.kernel {
            let coarse = self.moments_raw(m, &self.check_rule)?;
            let diff = (fine.free_energy - coarse.free_energy)
                .abs()
                .max((fine.overlap - coarse.overlap).abs());
            if diff > SELF_CHECK_TOL {
                warning = Some(format!(
                    "quadrature with {} and {} nodes disagrees by {diff:.3e}",
                    self.quad.hermite_nodes,
                    (self.quad.hermite_nodes - 1) / 2
                ));
            }
        }
        Ok(ScalarEvaluation {
            m,
            f_tilde: fine.free_energy,
            overlap: fine.overlap,
            mmse: fine.mmse,
            scalar_mi: fine.mutual_info,
            accuracy_warning: warning,
        })
    }

    fn mutual_info_raw(&self, m: f64, rule: &HermiteRule) -> Result<f64> {
        match &*self.kernel {
            Kernel::Gaussian { rho } => Ok(0.5 * (m * rho).ln_1p()),
            Kernel::Discrete(k) => {
                if m == 0.0 {
                    return Ok(0.0);
                }
                let acc = self.discrete_pass(k, m, rule, false)?;
                Ok(-acc.lse)
            }
        }
    }

    fn moments_raw(&self, m: f64, rule: &HermiteRule) -> Result<ChannelMoments> {
        let rho = self.rho();
        let (mi, q, q_rep) = match &*self.kernel {
            Kernel::Gaussian { rho } => {
                let q = m * rho * rho / (1.0 + m * rho);
                (0.5 * (m * rho).ln_1p(), q, q)
            }
            Kernel::Discrete(k) => {
                if m == 0.0 {
                    let mu = self.prior.mean();
                    (0.0, mu * mu, mu * mu)
                } else {
                    let acc = self.discrete_pass(k, m, rule, true)?;
                    (-acc.lse, acc.cross, acc.square)
                }
            }
        };
        Ok(ChannelMoments {
            m,
            free_energy: mi - 0.5 * m * rho,
            mutual_info: mi,
            overlap: q,
            overlap_replica: q_rep,
            mmse: rho - q,
        })
    }

    fn discrete_pass(
        &self,
        k: &DiscreteKernel,
        m: f64,
        rule: &HermiteRule,
        want_mean: bool,
    ) -> Result<Accum> {
        let acc = if !self.quad.log_domain {
            naive_pass(k, m, rule, want_mean)
        } else if k.x.len() >= FACTORISED_MIN_ATOMS {
            factorised_pass(k, m, rule, want_mean)
        } else {
            direct_pass(k, m, rule, want_mean)
        };
        if !(acc.lse.is_finite() && acc.cross.is_finite() && acc.square.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite channel sum at m = {m}; enable log-domain summation"
            )));
        }
        Ok(acc)
    }
}

// Exponent of atom l given X and b = sqrt(m) z:
//   t_l = ln p_l - (m/2)(x_l - X)^2 + b x_l
// The channel log-partition is (m/2) X^2 + LSE_l t_l; the first term is folded
// into the `- m rho / 2` of the free energy.

fn direct_pass(k: &DiscreteKernel, m: f64, rule: &HermiteRule, want_mean: bool) -> Accum {
    let sm = m.sqrt();
    let n = k.x.len();
    let mut a = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut acc = Accum::default();
    for &(ix, wx) in &k.outer {
        let xx = k.x[ix];
        for l in 0..n {
            let d = k.x[l] - xx;
            a[l] = k.lnp[l] - 0.5 * m * d * d;
        }
        for (&z, &wz) in rule.nodes.iter().zip(&rule.weights) {
            let b = sm * z;
            let mut mx = f64::NEG_INFINITY;
            for l in 0..n {
                t[l] = a[l] + b * k.x[l];
                mx = mx.max(t[l]);
            }
            let mut s = 0.0;
            let mut sx = 0.0;
            for l in 0..n {
                let e = (t[l] - mx).exp();
                s += e;
                sx += e * k.x[l];
            }
            let w = wx * wz;
            acc.lse += w * (mx + s.ln());
            if want_mean {
                let mean = sx / s;
                acc.cross += w * mean * xx;
                acc.square += w * mean * mean;
            }
        }
    }
    acc
}

fn naive_pass(k: &DiscreteKernel, m: f64, rule: &HermiteRule, want_mean: bool) -> Accum {
    let sm = m.sqrt();
    let mut acc = Accum::default();
    for &(ix, wx) in &k.outer {
        let xx = k.x[ix];
        for (&z, &wz) in rule.nodes.iter().zip(&rule.weights) {
            let y = m * xx + sm * z;
            let mut s = 0.0;
            let mut sx = 0.0;
            for l in 0..k.x.len() {
                let x = k.x[l];
                let e = (k.lnp[l] - 0.5 * m * x * x + x * y).exp();
                s += e;
                sx += e * x;
            }
            let w = wx * wz;
            acc.lse += w * (s.ln() - 0.5 * m * xx * xx);
            if want_mean {
                let mean = sx / s;
                acc.cross += w * mean * xx;
                acc.square += w * mean * mean;
            }
        }
    }
    acc
}

/// Splits `exp(t_l)` segment-wise as
/// `exp(a_l(X) - s_Xg) * exp(b x_l - s_bg) * exp(s_Xg + s_bg)`
/// so that the inner sums become dot products, evaluated for a block of
/// outer atoms at a time. Segments whose bound lies far below the largest
/// bound for every atom of the block are skipped; when the retained mass is
/// too small to make that safe, the pair is redone with a direct log-sum-exp.
fn factorised_pass(k: &DiscreteKernel, m: f64, rule: &HermiteRule, want_mean: bool) -> Accum {
    let sm = m.sqrt();
    let n = k.x.len();
    let nz = rule.nodes.len();
    let segs: Vec<(usize, usize)> = (0..n)
        .step_by(SEGMENT)
        .map(|s| (s, (s + SEGMENT).min(n)))
        .collect();
    let ns = segs.len();

    let mut e_rows = vec![0.0; nz * n];
    let mut ex_rows = if want_mean { vec![0.0; nz * n] } else { Vec::new() };
    let mut node_shift = vec![0.0; nz * ns];
    for j in 0..nz {
        let b = sm * rule.nodes[j];
        let row = &mut e_rows[j * n..(j + 1) * n];
        for (g, &(lo, hi)) in segs.iter().enumerate() {
            let s = (b * k.x[lo]).max(b * k.x[hi - 1]);
            node_shift[j * ns + g] = s;
            for l in lo..hi {
                row[l] = (b * k.x[l] - s).exp();
            }
        }
        if want_mean {
            let xrow = &mut ex_rows[j * n..(j + 1) * n];
            for l in 0..n {
                xrow[l] = row[l] * k.x[l];
            }
        }
    }

    let mut a = vec![0.0; BLOCK * n];
    let mut ea = vec![0.0; BLOCK * n];
    let mut t = vec![0.0; n];
    let mut atom_shift = vec![0.0; BLOCK * ns];
    let mut bound = vec![0.0; BLOCK * ns];
    let mut atom_top = [0.0; BLOCK];
    let mut atom_rel = vec![0.0; BLOCK * ns];
    let mut node_top = vec![f64::NEG_INFINITY; nz];
    let mut node_rel = vec![0.0; nz * ns];
    for j in 0..nz {
        for g in 0..ns {
            node_top[j] = node_top[j].max(node_shift[j * ns + g]);
        }
        for g in 0..ns {
            node_rel[j * ns + g] = (node_shift[j * ns + g] - node_top[j]).exp();
        }
    }
    let mut acc = Accum::default();
    for block in k.outer.chunks(BLOCK) {
        // pad short blocks with zero-weight copies of the last atom
        let mut members = [(block[0].0, 0.0); BLOCK];
        for (i, slot) in members.iter_mut().enumerate() {
            *slot = match block.get(i) {
                Some(&p) => p,
                None => (block[block.len() - 1].0, 0.0),
            };
        }
        for (r, &(ix, _)) in members.iter().enumerate() {
            let xx = k.x[ix];
            let ar = &mut a[r * n..(r + 1) * n];
            for l in 0..n {
                let d = k.x[l] - xx;
                ar[l] = k.lnp[l] - 0.5 * m * d * d;
            }
            for (g, &(lo, hi)) in segs.iter().enumerate() {
                let s = ar[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                atom_shift[r * ns + g] = s;
                for l in lo..hi {
                    ea[r * n + l] = (ar[l] - s).exp();
                }
            }
            let shifts = &atom_shift[r * ns..(r + 1) * ns];
            atom_top[r] = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for g in 0..ns {
                atom_rel[r * ns + g] = (shifts[g] - atom_top[r]).exp();
            }
        }
        for j in 0..nz {
            let mut top = [f64::NEG_INFINITY; BLOCK];
            for r in 0..BLOCK {
                for g in 0..ns {
                    let v = atom_shift[r * ns + g] + node_shift[j * ns + g];
                    bound[r * ns + g] = v;
                    top[r] = top[r].max(v);
                }
            }
            let mut lift = [0.0; BLOCK];
            let mut lift_exp = [0.0; BLOCK];
            for r in 0..BLOCK {
                lift[r] = atom_top[r] + node_top[j] - top[r];
                if lift[r] < LIFT_LIMIT {
                    lift_exp[r] = lift[r].exp();
                }
            }
            let row = &e_rows[j * n..(j + 1) * n];
            let mut s = [0.0; BLOCK];
            let mut sx = [0.0; BLOCK];
            let mut skipped = 0usize;
            for (g, &(lo, hi)) in segs.iter().enumerate() {
                let needed = (0..BLOCK).any(|r| bound[r * ns + g] >= top[r] - PRUNE_GAP);
                if !needed {
                    skipped += 1;
                    continue;
                }
                let d = dot_block(&ea, n, lo, hi, row);
                let dx = if want_mean {
                    dot_block(&ea, n, lo, hi, &ex_rows[j * n..(j + 1) * n])
                } else {
                    [0.0; BLOCK]
                };
                for r in 0..BLOCK {
                    // exp(bound - top) from precomputed factors unless the
                    // factorisation would underflow
                    let scale = if lift[r] < LIFT_LIMIT {
                        atom_rel[r * ns + g] * node_rel[j * ns + g] * lift_exp[r]
                    } else {
                        (bound[r * ns + g] - top[r]).exp()
                    };
                    s[r] += scale * d[r];
                    sx[r] += scale * dx[r];
                }
            }
            for (r, &(ix, wx)) in members.iter().enumerate() {
                if wx == 0.0 {
                    continue;
                }
                let xx = k.x[ix];
                let w = wx * rule.weights[j];
                let safe = s[r] > UNDERFLOW_GUARD && s[r] > skipped as f64 * SKIP_MASS_FLOOR;
                let (lse, mean) = if safe {
                    (top[r] + s[r].ln(), sx[r] / s[r])
                } else {
                    lse_direct(&a[r * n..(r + 1) * n], &k.x, sm * rule.nodes[j], &mut t)
                };
                acc.lse += w * lse;
                if want_mean {
                    acc.cross += w * mean * xx;
                    acc.square += w * mean * mean;
                }
            }
        }
    }
    acc
}

fn lse_direct(a: &[f64], x: &[f64], b: f64, t: &mut [f64]) -> (f64, f64) {
    let mut mx = f64::NEG_INFINITY;
    for l in 0..a.len() {
        t[l] = a[l] + b * x[l];
        mx = mx.max(t[l]);
    }
    let mut s = 0.0;
    let mut sx = 0.0;
    for l in 0..a.len() {
        let e = (t[l] - mx).exp();
        s += e;
        sx += e * x[l];
    }
    (mx + s.ln(), sx / s)
}

/// Dot products of `row[lo..hi]` with the same range of each of the
/// `BLOCK` rows stored contiguously in `mat` (row length `n`).
#[inline]
fn dot_block(mat: &[f64], n: usize, lo: usize, hi: usize, row: &[f64]) -> [f64; BLOCK] {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { dot_block_avx2(mat, n, lo, hi, row) };
        }
    }
    dot_block_portable(mat, n, lo, hi, row)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_block_avx2(mat: &[f64], n: usize, lo: usize, hi: usize, row: &[f64]) -> [f64; BLOCK] {
    use std::arch::x86_64::*;
    assert!(hi <= n && row.len() >= hi && mat.len() >= BLOCK * n);
    let len = hi - lo;
    let quads = len / 4;
    let rp = row.as_ptr().add(lo);
    let mp = mat.as_ptr().add(lo);
    let mut acc = [_mm256_setzero_pd(); BLOCK];
    for c in 0..quads {
        let v = _mm256_loadu_pd(rp.add(4 * c));
        for (r, a) in acc.iter_mut().enumerate() {
            let x = _mm256_loadu_pd(mp.add(r * n + 4 * c));
            *a = _mm256_fmadd_pd(x, v, *a);
        }
    }
    let mut out = [0.0; BLOCK];
    for r in 0..BLOCK {
        let mut lanes = [0.0; 4];
        _mm256_storeu_pd(lanes.as_mut_ptr(), acc[r]);
        let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        for i in 4 * quads..len {
            s += mat[r * n + lo + i] * row[lo + i];
        }
        out[r] = s;
    }
    out
}

fn dot_block_portable(mat: &[f64], n: usize, lo: usize, hi: usize, row: &[f64]) -> [f64; BLOCK] {
    let row = &row[lo..hi];
    std::array::from_fn(|r| {
        let a = &mat[r * n + lo..r * n + hi];
        let mut acc = [0.0f64; 4];
        let ca = a.chunks_exact(4);
        let cb = row.chunks_exact(4);
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            for q in 0..4 {
                acc[q] += x[q] * y[q];
            }
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (x, y) in ra.iter().zip(rb) {
            s += x * y;
        }
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rad() -> ScalarChannel {
        ScalarChannel::with_default_quadrature(Prior::rademacher()).unwrap()
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let r = hermite_rule(127);
        let m0: f64 = r.weights.iter().sum();
        let m2: f64 = r.nodes.iter().zip(&r.weights).map(|(z, w)| w * z * z).sum();
        let m4: f64 = r.nodes.iter().zip(&r.weights).map(|(z, w)| w * z.powi(4)).sum();
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_snr() {
        let c = rad();
        assert_eq!(c.free_energy(0.0).unwrap(), 0.0);
        assert_eq!(c.overlap(0.0).unwrap(), 0.0);
        let shifted = ScalarChannel::with_default_quadrature(
            Prior::discrete(&[(0.0, 0.5), (1.0, 0.5)]).unwrap(),
        )
        .unwrap();
        assert!((shifted.overlap(0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negative_snr_is_a_domain_error() {
        assert!(matches!(rad().free_energy(-1.0), Err(Error::Domain(_))));
        assert!(matches!(rad().overlap(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_closed_form() {
        let c = ScalarChannel::with_default_quadrature(Prior::gaussian(1.0).unwrap()).unwrap();
        let f = c.free_energy(1.0).unwrap();
        assert!((f - (0.5 * 2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((c.overlap(1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_domain_and_naive_agree_at_moderate_snr() {
        let p = Prior::sparse_rademacher(0.25).unwrap();
        let a = ScalarChannel::with_default_quadrature(p.clone()).unwrap();
        let b = ScalarChannel::new(
            p,
            QuadratureConfig {
                hermite_nodes: 127,
                log_domain: false,
            },
        )
        .unwrap();
        for m in [0.1, 1.0, 5.0] {
            let d = a.free_energy(m).unwrap() - b.free_energy(m).unwrap();
            assert!(d.abs() < 1e-12, "m={m} d={d}");
        }
    }

    #[test]
    fn symmetric_halving_matches_full_sum() {
        // a prior that is symmetric up to a 1e-14 perturbation takes the full path
        let sym = Prior::discrete(&[(-1.0, 0.3), (0.0, 0.4), (1.0, 0.3)]).unwrap();
        let asym =
            Prior::discrete(&[(-1.0, 0.3 + 1e-14), (0.0, 0.4 - 1e-14), (1.0, 0.3)]).unwrap();
        assert!(sym.is_symmetric() && !asym.is_symmetric());
        let a = ScalarChannel::with_default_quadrature(sym).unwrap();
        let b = ScalarChannel::with_default_quadrature(asym).unwrap();
        for m in [0.3, 2.0, 20.0] {
            let (x, y) = (a.moments(m).unwrap(), b.moments(m).unwrap());
            assert!((x.free_energy - y.free_energy).abs() < 1e-12);
            assert!((x.overlap - y.overlap).abs() < 1e-12);
        }
    }

    #[test]
    fn factorised_kernel_matches_direct_kernel() {
        let atoms: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = -2.0 + 0.1 * i as f64 + 0.013 * (i % 3) as f64;
                (x, 1.0 + (i % 5) as f64)
            })
            .collect();
        let tot: f64 = atoms.iter().map(|a| a.1).sum();
        let atoms: Vec<(f64, f64)> = atoms.iter().map(|&(x, w)| (x, w / tot)).collect();
        let c = ScalarChannel::with_default_quadrature(Prior::discrete(&atoms).unwrap()).unwrap();
        let Kernel::Discrete(k) = &*c.kernel else { unreachable!() };
        for m in [0.05, 1.0, 30.0, 3000.0] {
            let f = factorised_pass(k, m, &c.rule, true);
            let d = direct_pass(k, m, &c.rule, true);
            assert!((f.lse - d.lse).abs() < 1e-11 * (1.0 + d.lse.abs()), "m={m}");
            assert!((f.cross - d.cross).abs() < 1e-11, "m={m}");
            assert!((f.square - d.square).abs() < 1e-11, "m={m}");
        }
    }
}
