//! Exact finite-size free energies and overlaps by enumerating the posterior.
//!
//! Aspect ratios are pinned to one, so every factor has `n` entries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Order;
use crate::priors::Prior;

/// Upper bound on the number of enumerated configurations.
pub const ENUMERATION_LIMIT: u64 = 1 << 25;
// Guard for the explicit two-replica sum used in identity checks.
const PAIR_LIMIT: u64 = 1 << 22;

#[derive(Clone, Debug)]
pub struct OracleParams {
    pub order: Order,
    pub n: usize,
    pub lambda: f64,
    pub priors: Vec<Prior>,
    pub samples: usize,
    pub seed: u64,
}

impl OracleParams {
    pub fn new(
        order: Order,
        n: usize,
        lambda: f64,
        priors: Vec<Prior>,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let p = OracleParams {
            order,
            n,
            lambda,
            priors,
            samples,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same prior on every factor.
    pub fn iid(order: Order, n: usize, lambda: f64, prior: &Prior, samples: usize, seed: u64) -> Result<Self> {
        OracleParams::new(order, n, lambda, vec![prior.clone(); order.factors()], samples, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("oracle needs n >= 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("oracle needs at least one disorder sample".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.priors.len() != self.order.factors() {
            return Err(Error::Config(format!(
                "order {} needs {} priors, got {}",
                self.order,
                self.order.factors(),
                self.priors.len()
            )));
        }
        if let Some(p) = self.priors.iter().find(|p| !p.is_discrete()) {
            return Err(Error::UnsupportedPrior(format!(
                "the exact oracle enumerates discrete priors only, got {}",
                serde_json::to_string(&p.descriptor()).unwrap_or_default()
            )));
        }
        let configs = self.configuration_count();
        if configs > ENUMERATION_LIMIT as f64 {
            return Err(Error::EnumerationTooLarge {
                configs,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    pub fn configuration_count(&self) -> f64 {
        self.priors
            .iter()
            .map(|p| (p.atoms().len() as f64).powi(self.n as i32))
            .product()
    }
}

/// Planted factors and Gaussian noise for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Disorder {
    pub factors: Vec<Vec<f64>>,
    /// Row-major noise array with `n^order` entries.
    pub noise: Vec<f64>,
}

impl Disorder {
    pub fn sample<R: rand::Rng + ?Sized>(p: &OracleParams, rng: &mut R) -> Disorder {
        let factors = p
            .priors
            .iter()
            .map(|pr| (0..p.n).map(|_| pr.sample(rng)).collect())
            .collect();
        let len = p.n.pow(p.order.factors() as u32);
        let noise = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        Disorder { factors, noise }
    }

    /// Disorder of sample `index`, seeded with `seed + index`.
    pub fn for_index(p: &OracleParams, index: usize) -> Disorder {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(index as u64));
        Disorder::sample(p, &mut rng)
    }

    /// All planted vectors negated; for odd order the noise is negated too so
    /// that the model maps to itself under `x -> -x` on every factor.
    pub fn gauge_flip(&self) -> Disorder {
        let factors = self
            .factors
            .iter()
            .map(|f| f.iter().map(|x| -x).collect())
            .collect();
        let odd = self.factors.len() % 2 == 1;
        let noise = if odd {
            self.noise.iter().map(|z| -z).collect()
        } else {
            self.noise.clone()
        };
        Disorder { factors, noise }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `λ Σ_ij [(u_i v_j)^2/(2n) - u_i v_j U_i V_j/n] - sqrt(λ/n) Σ_ij u_i v_j Z_ij`.
pub fn hamiltonian2(u: &[f64], v: &[f64], d: &Disorder, lambda: f64) -> Result<f64> {
    let n = u.len();
    if v.len() != n || d.factors.len() != 2 || d.factors.iter().any(|f| f.len() != n) || d.noise.len() != n * n {
        return Err(Error::Config("hamiltonian2: inconsistent dimensions".into()));
    }
    let nf = n as f64;
    let (uu, vv) = (dot(u, u), dot(v, v));
    let signal = dot(u, &d.factors[0]) * dot(v, &d.factors[1]);
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            z += u[i] * v[j] * d.noise[i * n + j];
        }
    }
    Ok(lambda * (uu * vv / (2.0 * nf) - signal / nf) - (lambda / nf).sqrt() * z)
}

/// Order-3 analogue with `1/n^2` couplings and noise scaled by `sqrt(λ)/n`.
pub fn hamiltonian3(u: &[f64], v: &[f64], w: &[f64], d: &Disorder, lambda: f64) -> Result<f64> {
    let n = u.len();
    if v.len() != n
        || w.len() != n
        || d.factors.len() != 3
        || d.factors.iter().any(|f| f.len() != n)
        || d.noise.len() != n * n * n
    {
        return Err(Error::Config("hamiltonian3: inconsistent dimensions".into()));
    }
    let n2 = (n * n) as f64;
    let norms = dot(u, u) * dot(v, v) * dot(w, w);
    let signal = dot(u, &d.factors[0]) * dot(v, &d.factors[1]) * dot(w, &d.factors[2]);
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                z += u[i] * v[j] * w[k] * d.noise[(i * n + j) * n + k];
            }
        }
    }
    Ok(lambda * (norms / (2.0 * n2) - signal / n2) - lambda.sqrt() / n as f64 * z)
}

/// All configurations of one factor.
struct Configs {
    logp: Vec<f64>,
    vals: Vec<f64>,
    norm2: Vec<f64>,
    n: usize,
}

impl Configs {
    fn new(prior: &Prior, n: usize) -> Configs {
        let atoms = prior.atoms();
        let k = atoms.len();
        let count = k.pow(n as u32);
        let mut logp = Vec::with_capacity(count);
        let mut vals = Vec::with_capacity(count * n);
        let mut norm2 = Vec::with_capacity(count);
        let mut idx = vec![0usize; n];
        for _ in 0..count {
            let mut lp = 0.0;
            let mut nn = 0.0;
            for &a in &idx {
                let at = atoms[a];
                lp += at.weight.ln();
                nn += at.location * at.location;
                vals.push(at.location);
            }
            logp.push(lp);
            norm2.push(nn);
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < k {
                    break;
                }
                *slot = 0;
            }
        }
        Configs { logp, vals, norm2, n }
    }

    fn len(&self) -> usize {
        self.logp.len()
    }

    fn row(&self, a: usize) -> &[f64] {
        &self.vals[a * self.n..(a + 1) * self.n]
    }
}

/// Posterior averages for one disorder sample.
///
/// With sign-symmetric priors the posterior is invariant under flipping an
/// even number of factors (any pair of them at order 3), so `<Q_f>` vanishes
/// identically. `overlaps` holds the gauge-fixed `<Q_f prod_{g != f} sgn Q_g>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub free_energy: f64,
    /// Gauge-fixed overlap per factor.
    pub overlaps: Vec<f64>,
    /// `<Q_f>` with `Q_f = x . X / n`.
    pub raw_overlaps: Vec<f64>,
    /// `<Q_u^2>` for the first factor.
    pub planted_sq_overlap: f64,
    /// `<(u . u')^2> / n^2` for two independent replicas, as `sum_ij <u_i u_j>^2 / n^2`.
    pub replica_sq_overlap: f64,
    pub log_partition: f64,
}

// Running log-sum-exp with weighted statistics.
struct Acc {
    max: f64,
    sum: f64,
    stats: Vec<f64>,
}

impl Acc {
    fn new(k: usize) -> Acc {
        Acc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            stats: vec![0.0; k],
        }
    }

    fn merge(&mut self, m: f64, s: f64, stats: &[f64]) {
        if s == 0.0 {
            return;
        }
        if m > self.max {
            let r = (self.max - m).exp();
            self.sum *= r;
            self.stats.iter_mut().for_each(|x| *x *= r);
            self.max = m;
        }
        let r = (m - self.max).exp();
        self.sum += s * r;
        for (x, y) in self.stats.iter_mut().zip(stats) {
            *x += y * r;
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact posterior averages for a single disorder sample.
pub fn exact_sample(p: &OracleParams, d: &Disorder) -> Result<SampleResult> {
    p.validate()?;
    let configs: Vec<Configs> = p.priors.iter().map(|pr| Configs::new(pr, p.n)).collect();
    exact_sample_with(p, &configs, d)
}

// Stats layout: [gauge-fixed Q_f; k] [Q_f; k] [Q_u^2] [<u_i u_j>; n*n]
fn exact_sample_with(p: &OracleParams, cs: &[Configs], d: &Disorder) -> Result<SampleResult> {
    let n = p.n;
    let k = p.order.factors();
    if d.factors.len() != k || d.factors.iter().any(|f| f.len() != n) || d.noise.len() != n.pow(k as u32) {
        return Err(Error::Config("disorder does not match oracle parameters".into()));
    }
    let nf = n as f64;
    let l = p.lambda;
    let (gf, raw, sq, uu) = (0, k, 2 * k, 2 * k + 1);
    let width = uu + n * n;
    let mut acc = Acc::new(width);
    // Overlaps Q = x . X / n per configuration.
    let qs: Vec<Vec<f64>> = cs
        .iter()
        .zip(&d.factors)
        .map(|(c, x)| (0..c.len()).map(|a| dot(c.row(a), x) / nf).collect())
        .collect();

    let inner = cs.last().expect("at least two factors");
    let inner_q = &qs[k - 1];
    let mut terms = vec![0.0; inner.len()];
    let mut block = vec![0.0; width];

    // One block per configuration of the outer factors: quadratic coefficient
    // `a`, signal coefficient `x`, field `c` on the inner factor.
    let mut run_block = |outer: &[usize], logp: f64, a: f64, x: f64, c: &[f64], acc: &mut Acc| {
        let mut m = f64::NEG_INFINITY;
        for (b, t) in terms.iter_mut().enumerate() {
            let w = inner.row(b);
            *t = logp + inner.logp[b] - a * inner.norm2[b] + x * nf * inner_q[b] + dot(w, c);
            m = m.max(*t);
        }
        let (mut s, mut s_sign, mut s_q) = (0.0, 0.0, 0.0);
        for (t, &q) in terms.iter().zip(inner_q) {
            let e = (t - m).exp();
            s += e;
            s_sign += e * sgn(q);
            s_q += e * q;
        }
        let outer_q: Vec<f64> = outer.iter().enumerate().map(|(f, &i)| qs[f][i]).collect();
        let outer_sign: f64 = outer_q.iter().map(|&q| sgn(q)).product();
        for (f, &q) in outer_q.iter().enumerate() {
            let others: f64 = outer_q
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .map(|(_, &v)| sgn(v))
                .product();
            block[gf + f] = q * others * s_sign;
            block[raw + f] = s * q;
        }
        block[gf + k - 1] = outer_sign * s_q;
        block[raw + k - 1] = s_q;
        block[sq] = s * outer_q[0] * outer_q[0];
        let u = cs[0].row(outer[0]);
        for i in 0..n {
            for j in 0..n {
                block[uu + i * n + j] = s * u[i] * u[j];
            }
        }
        acc.merge(m, s, &block);
    };

    match p.order {
        Order::Two => {
            let scale = (l / nf).sqrt();
            let mut field = vec![0.0; n];
            for a in 0..cs[0].len() {
                let u = cs[0].row(a);
                for (j, fj) in field.iter_mut().enumerate() {
                    *fj = scale * (0..n).map(|i| u[i] * d.noise[i * n + j]).sum::<f64>();
                }
                let qa = l * cs[0].norm2[a] / (2.0 * nf);
                let xa = l * qs[0][a];
                run_block(&[a], cs[0].logp[a], qa, xa, &field, &mut acc);
            }
        }
        Order::Three => {
            let n2 = nf * nf;
            let scale = l.sqrt() / nf;
            let mut dmat = vec![0.0; n * n];
            let mut field = vec![0.0; n];
            for a in 0..cs[0].len() {
                let u = cs[0].row(a);
                for (jk, slot) in dmat.iter_mut().enumerate() {
                    *slot = (0..n).map(|i| u[i] * d.noise[i * n * n + jk]).sum();
                }
                for b in 0..cs[1].len() {
                    let v = cs[1].row(b);
                    for (kk, fk) in field.iter_mut().enumerate() {
                        *fk = scale * (0..n).map(|j| v[j] * dmat[j * n + kk]).sum::<f64>();
                    }
                    let qab = l * cs[0].norm2[a] * cs[1].norm2[b] / (2.0 * n2);
                    let xab = l * qs[0][a] * qs[1][b];
                    run_block(&[a, b], cs[0].logp[a] + cs[1].logp[b], qab, xab, &field, &mut acc);
                }
            }
        }
    }

    let z = acc.sum;
    let log_z = acc.max + z.ln();
    let free_energy = if l == 0.0 { 0.0 } else { -log_z / nf };
    let replica_sq = acc.stats[uu..].iter().map(|m| (m / z).powi(2)).sum::<f64>() / (nf * nf);
    Ok(SampleResult {
        free_energy,
        overlaps: acc.stats[gf..gf + k].iter().map(|v| v / z).collect(),
        raw_overlaps: acc.stats[raw..raw + k].iter().map(|v| v / z).collect(),
        planted_sq_overlap: acc.stats[sq] / z,
        replica_sq_overlap: replica_sq,
        log_partition: log_z,
    })
}

/// `<(u . u')^2> / n^2` by an explicit sum over pairs of independent
/// replicas. Only for small systems.
pub fn replica_overlap_by_pairs(p: &OracleParams, d: &Disorder) -> Result<f64> {
    p.validate()?;
    let total = p.configuration_count();
    if total * total > PAIR_LIMIT as f64 {
        return Err(Error::EnumerationTooLarge {
            configs: total * total,
            limit: PAIR_LIMIT,
        });
    }
    let cs: Vec<Configs> = p.priors.iter().map(|pr| Configs::new(pr, p.n)).collect();
    let k = p.order.factors();
    // Joint configurations as index tuples with their log posterior weight.
    let mut joint: Vec<(usize, f64)> = Vec::new();
    let mut idx = vec![0usize; k];
    loop {
        let fs: Vec<&[f64]> = (0..k).map(|f| cs[f].row(idx[f])).collect();
        let h = match p.order {
            Order::Two => hamiltonian2(fs[0], fs[1], d, p.lambda)?,
            Order::Three => hamiltonian3(fs[0], fs[1], fs[2], d, p.lambda)?,
        };
        let lp: f64 = (0..k).map(|f| cs[f].logp[idx[f]]).sum();
        joint.push((idx[0], lp - h));
        let mut f = k;
        loop {
            if f == 0 {
                break;
            }
            f -= 1;
            idx[f] += 1;
            if idx[f] < cs[f].len() {
                break;
            }
            idx[f] = 0;
        }
        if idx.iter().all(|&i| i == 0) {
            break;
        }
    }
    let m = joint.iter().map(|j| j.1).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = joint.iter().map(|j| (j.1 - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut num = 0.0;
    for (a, wa) in joint.iter().zip(&w) {
        for (b, wb) in joint.iter().zip(&w) {
            num += wa * wb * dot(cs[0].row(a.0), cs[0].row(b.0)).powi(2);
        }
    }
    Ok(num / (z * z) / (p.n * p.n) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub order: Order,
    pub n: usize,
    pub lambda: f64,
    #[serde(rename = "M")]
    pub samples: usize,
    pub seed: u64,
    pub mean_f: f64,
    pub stderr: f64,
    /// Gauge-fixed overlap per factor.
    pub overlaps: Vec<f64>,
    pub overlap_stderr: Vec<f64>,
    /// Mean of `<Q_f>`; zero for sign-symmetric priors.
    pub raw_overlaps: Vec<f64>,
    /// `E <Q_u^2>` against the planted vector.
    pub sq_overlap_planted: f64,
    pub sq_overlap_planted_stderr: f64,
    /// `E <(u . u')^2> / n^2` between replicas.
    pub sq_overlap_replica: f64,
    pub sq_overlap_replica_stderr: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Per-sample results in sample order.
pub fn exact_samples(p: &OracleParams) -> Result<Vec<SampleResult>> {
    p.validate()?;
    let configs: Vec<Configs> = p.priors.iter().map(|pr| Configs::new(pr, p.n)).collect();
    (0..p.samples)
        .into_par_iter()
        .map(|i| exact_sample_with(p, &configs, &Disorder::for_index(p, i)))
        .collect()
}

/// Disorder-averaged free energy and overlaps.
pub fn exact_estimate(p: &OracleParams) -> Result<OracleEstimate> {
    let rows = exact_samples(p)?;
    let fs: Vec<f64> = rows.iter().map(|r| r.free_energy).collect();
    let (mean_f, stderr) = mean_and_stderr(&fs);
    let k = p.order.factors();
    let mut overlaps = Vec::with_capacity(k);
    let mut overlap_stderr = Vec::with_capacity(k);
    let mut raw_overlaps = Vec::with_capacity(k);
    for f in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r.overlaps[f]).collect();
        let (m, s) = mean_and_stderr(&col);
        overlaps.push(m);
        overlap_stderr.push(s);
        let raw: Vec<f64> = rows.iter().map(|r| r.raw_overlaps[f]).collect();
        raw_overlaps.push(mean_and_stderr(&raw).0);
    }
    let planted: Vec<f64> = rows.iter().map(|r| r.planted_sq_overlap).collect();
    let replica: Vec<f64> = rows.iter().map(|r| r.replica_sq_overlap).collect();
    let (sq_p, sq_p_err) = mean_and_stderr(&planted);
    let (sq_r, sq_r_err) = mean_and_stderr(&replica);
    Ok(OracleEstimate {
        order: p.order,
        n: p.n,
        lambda: p.lambda,
        samples: p.samples,
        seed: p.seed,
        mean_f: if p.lambda == 0.0 { 0.0 } else { mean_f },
        stderr: if p.lambda == 0.0 { 0.0 } else { stderr },
        overlaps,
        overlap_stderr,
        raw_overlaps,
        sq_overlap_planted: sq_p,
        sq_overlap_planted_stderr: sq_p_err,
        sq_overlap_replica: sq_r,
        sq_overlap_replica_stderr: sq_r_err,
    })
}

fn expect(p: &OracleParams, order: Order) -> Result<()> {
    if p.order != order {
        return Err(Error::Config(format!(
            "expected order {order} oracle parameters, got order {}",
            p.order
        )));
    }
    Ok(())
}

pub fn exact_free_energy2(p: &OracleParams) -> Result<OracleEstimate> {
    expect(p, Order::Two)?;
    exact_estimate(p)
}

pub fn exact_overlaps2(p: &OracleParams) -> Result<OracleEstimate> {
    expect(p, Order::Two)?;
    exact_estimate(p)
}

pub fn exact_free_energy3(p: &OracleParams) -> Result<OracleEstimate> {
    expect(p, Order::Three)?;
    exact_estimate(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamiltonian_hand_values() {
        let d = Disorder {
            factors: vec![vec![1.0], vec![1.0]],
            noise: vec![0.0],
        };
        assert_eq!(hamiltonian2(&[1.0], &[1.0], &d, 2.0).unwrap(), -1.0);
        assert_eq!(hamiltonian2(&[1.0], &[-1.0], &d, 0.0).unwrap(), 0.0);
        let d3 = Disorder {
            factors: vec![vec![1.0], vec![1.0], vec![1.0]],
            noise: vec![0.0],
        };
        assert_eq!(hamiltonian3(&[1.0], &[1.0], &[1.0], &d3, 2.0).unwrap(), -1.0);
        assert!(hamiltonian2(&[1.0, 1.0], &[1.0], &d, 1.0).is_err());
    }

    #[test]
    fn enumeration_matches_direct_hamiltonian() {
        let r = Prior::rademacher();
        let p = OracleParams::iid(Order::Two, 2, 1.7, &r, 1, 3).unwrap();
        let d = Disorder::for_index(&p, 0);
        let fast = exact_sample(&p, &d).unwrap();
        let mut terms = Vec::new();
        for a in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            for b in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
                terms.push(4f64.recip().ln() * 2.0 - hamiltonian2(&a, &b, &d, 1.7).unwrap());
            }
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lz = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        assert!((fast.log_partition - lz).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let r = Prior::rademacher();
        assert!(matches!(
            OracleParams::iid(Order::Two, 13, 1.0, &r, 1, 0),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(matches!(
            OracleParams::iid(Order::Two, 2, 1.0, &Prior::gaussian(1.0).unwrap(), 1, 0),
            Err(Error::UnsupportedPrior(_))
        ));
        assert!(OracleParams::iid(Order::Three, 8, 1.0, &r, 1, 0).is_ok());
    }

    #[test]
    fn single_sample_has_zero_stderr() {
        let r = Prior::rademacher();
        let p = OracleParams::iid(Order::Two, 2, 1.0, &r, 1, 9).unwrap();
        let e = exact_estimate(&p).unwrap();
        assert_eq!(e.stderr, 0.0);
    }
}
