//! Prior distributions on the real line.
//!
//! Two shapes are supported: finitely supported (discrete) priors given as
//! weighted atoms, and centred Gaussians. Everything downstream only needs the
//! atoms (or the variance), the second moment and a bound on the support.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible support bound for discrete priors.
pub const MAX_SUPPORT_BOUND: f64 = 1e3;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Discrete,
    Gaussian,
}

/// A validated prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    kind: PriorKind,
    atoms: Vec<Atom>,
    variance: f64,
    mean: f64,
    second_moment: f64,
    support_bound: f64,
    symmetric: bool,
}

/// JSON form of a prior, as accepted by the CLI and config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDescriptor {
    Discrete { atoms: Vec<[f64; 2]> },
    Gaussian { variance: f64 },
    Rademacher,
    SparseRademacher { s: f64 },
}

impl Prior {
    /// Discrete prior from `(location, weight)` pairs.
    ///
    /// Weights must be non-negative and sum to one within `1e-12`; they are
    /// renormalised afterwards. Zero-weight atoms are dropped.
    pub fn discrete(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::prior("atoms", "at least one atom is required"));
        }
        let mut total = 0.0;
        for (i, &(x, p)) in pairs.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::prior(format!("atoms[{i}].location"), "must be finite"));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::prior(
                    format!("atoms[{i}].weight"),
                    format!("must be a finite non-negative number, got {p}"),
                ));
            }
            total += p;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::prior(
                "atoms",
                format!("weights sum to {total:.17}, expected 1 within {WEIGHT_SUM_TOL:e}"),
            ));
        }
        let mut atoms: Vec<Atom> = pairs
            .iter()
            .filter(|&&(_, p)| p > 0.0)
            .map(|&(location, p)| Atom {
                location,
                weight: p / total,
            })
            .collect();
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        for w in atoms.windows(2) {
            if w[0].location == w[1].location {
                return Err(Error::prior(
                    "atoms",
                    format!("duplicate location {}", w[0].location),
                ));
            }
        }
        let support_bound = atoms.iter().map(|a| a.location.abs()).fold(0.0, f64::max);
        if support_bound > MAX_SUPPORT_BOUND {
            return Err(Error::prior(
                "atoms",
                format!("support bound {support_bound} exceeds {MAX_SUPPORT_BOUND}"),
            ));
        }
        let mean = atoms.iter().map(|a| a.weight * a.location).sum();
        let second_moment = atoms
            .iter()
            .map(|a| a.weight * a.location * a.location)
            .sum();
        let symmetric = is_mirror_symmetric(&atoms);
        Ok(Prior {
            kind: PriorKind::Discrete,
            atoms,
            variance: second_moment - mean * mean,
            mean,
            second_moment,
            support_bound,
            symmetric,
        })
    }

    /// Centred Gaussian with the given variance.
    pub fn gaussian(variance: f64) -> Result<Self> {
        if !variance.is_finite() || variance <= 0.0 {
            return Err(Error::prior(
                "variance",
                format!("must be finite and positive, got {variance}"),
            ));
        }
        Ok(Prior {
            kind: PriorKind::Gaussian,
            atoms: Vec::new(),
            variance,
            mean: 0.0,
            second_moment: variance,
            support_bound: f64::INFINITY,
            symmetric: true,
        })
    }

    /// Uniform on `{-1, +1}`.
    pub fn rademacher() -> Self {
        Prior::discrete(&[(-1.0, 0.5), (1.0, 0.5)]).expect("valid rademacher prior")
    }

    /// `±1/sqrt(s)` with probability `s/2` each and `0` otherwise.
    pub fn sparse_rademacher(s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::prior("s", format!("must lie in (0, 1], got {s}")));
        }
        let a = 1.0 / s.sqrt();
        Prior::discrete(&[(-a, s / 2.0), (0.0, 1.0 - s), (a, s / 2.0)])
    }

    pub fn from_descriptor(d: &PriorDescriptor) -> Result<Self> {
        match d {
            PriorDescriptor::Discrete { atoms } => {
                let pairs: Vec<(f64, f64)> = atoms.iter().map(|a| (a[0], a[1])).collect();
                Prior::discrete(&pairs)
            }
            PriorDescriptor::Gaussian { variance } => Prior::gaussian(*variance),
            PriorDescriptor::Rademacher => Ok(Prior::rademacher()),
            PriorDescriptor::SparseRademacher { s } => Prior::sparse_rademacher(*s),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: PriorDescriptor = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "prior descriptor".into(),
            source,
        })?;
        Prior::from_descriptor(&d)
    }

    /// Reads a JSON descriptor from a file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let d: PriorDescriptor = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        Prior::from_descriptor(&d)
    }

    /// Parses the shorthand forms `rademacher`, `gaussian:<variance>`,
    /// `sparse_rademacher:<s>`, `file:<path>` or an inline JSON descriptor.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.starts_with('{') {
            return Prior::from_json(spec);
        }
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        let number = |field: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::prior(field, "missing value"))?;
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::prior(field, format!("cannot parse '{a}' as a number")))
        };
        match head {
            "rademacher" if arg.is_none() => Ok(Prior::rademacher()),
            "gaussian" => Prior::gaussian(if arg.is_some() { number("variance")? } else { 1.0 }),
            "sparse_rademacher" => Prior::sparse_rademacher(number("s")?),
            "file" => Prior::from_file(Path::new(arg.unwrap_or(""))),
            _ => Err(Error::prior("prior", format!("unrecognised prior '{spec}'"))),
        }
    }

    pub fn descriptor(&self) -> PriorDescriptor {
        match self.kind {
            PriorKind::Gaussian => PriorDescriptor::Gaussian {
                variance: self.variance,
            },
            PriorKind::Discrete => PriorDescriptor::Discrete {
                atoms: self.atoms.iter().map(|a| [a.location, a.weight]).collect(),
            },
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// Atoms sorted by location; empty for Gaussian priors.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Variance of a Gaussian prior, `None` for discrete priors.
    pub fn variance(&self) -> Option<f64> {
        (self.kind == PriorKind::Gaussian).then_some(self.variance)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `rho = E[X^2]`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// `max |x|` over the support (infinite for Gaussian priors).
    pub fn support_bound(&self) -> f64 {
        self.support_bound
    }

    /// True if the law of `X` equals the law of `-X`.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == PriorKind::Discrete
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            PriorKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * self.variance.sqrt()
            }
            PriorKind::Discrete => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in &self.atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.location;
                    }
                }
                self.atoms[self.atoms.len() - 1].location
            }
        }
    }
}

fn is_mirror_symmetric(atoms: &[Atom]) -> bool {
    let k = atoms.len();
    (0..k).all(|i| {
        let (a, b) = (atoms[i], atoms[k - 1 - i]);
        a.location == -b.location && (a.weight - b.weight).abs() <= 1e-15
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sparse_rademacher_moments() {
        let p = Prior::sparse_rademacher(0.25).unwrap();
        assert_eq!(p.atoms().len(), 3);
        assert!((p.second_moment() - 1.0).abs() < 1e-15);
        assert!((p.support_bound() - 2.0).abs() < 1e-15);
        assert!(p.is_symmetric());
        assert_eq!(p.mean(), 0.0);
    }

    #[test]
    fn weight_sum_is_checked() {
        let err = Prior::discrete(&[(1.0, 0.5), (0.0, 0.4)]).unwrap_err();
        assert!(err.to_string().contains("atoms"));
        assert!(Prior::discrete(&[(1.0, 1.0 + 5e-13)]).is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Prior::discrete(&[(1.0, -0.1), (0.0, 1.1)]).is_err());
        assert!(Prior::discrete(&[(1.0, 0.5), (1.0, 0.5)]).is_err());
        assert!(Prior::discrete(&[(2e3, 1.0)]).is_err());
        assert!(Prior::gaussian(0.0).is_err());
        assert!(Prior::sparse_rademacher(1.5).is_err());
        assert!(Prior::parse("laplace:1").is_err());
    }

    #[test]
    fn shorthand_and_json_agree() {
        let a = Prior::parse("sparse_rademacher:0.5").unwrap();
        let b = Prior::parse(r#"{"kind":"sparse_rademacher","s":0.5}"#).unwrap();
        assert_eq!(a, b);
        let g = Prior::parse("gaussian:2.5").unwrap();
        assert_eq!(g.variance(), Some(2.5));
        let d = Prior::parse(r#"{"kind":"discrete","atoms":[[0,0.5],[1,0.5]]}"#).unwrap();
        assert!((d.mean() - 0.5).abs() < 1e-15);
        assert!(!d.is_symmetric());
        let round = Prior::from_descriptor(&d.descriptor()).unwrap();
        assert_eq!(round, d);
    }

    #[test]
    fn missing_file_names_path() {
        let err = Prior::parse("file:/nonexistent/prior.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/prior.json"));
    }

    #[test]
    fn sampling_matches_moments() {
        let p = Prior::sparse_rademacher(0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let m2: f64 = (0..n).map(|_| p.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        // var(X^2) = E X^4 - 1 = 3, so the standard error is about 0.004
        assert!((m2 - 1.0).abs() < 0.02, "{m2}");
    }
}
