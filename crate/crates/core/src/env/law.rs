//! Laws of a single site variable and their exact moment algebra.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// First two moments of the odds ratio `rho = (1 - omega) / omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct LawMoments<T> {
    pub m1: T,
    pub m2: T,
}

/// Closed-form annealed quantities that follow from `(m1, m2)` alone.
///
/// `a` denotes the quenched expected crossing time of one site, which obeys
/// `a = 1 + rho + rho * a'` with `a'` the crossing time of the site to the left,
/// independent of `rho` under an i.i.d. law.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForms<T> {
    pub speed: T,
    pub mean_crossing: T,
    pub crossing_mean_sq: T,
    pub crossing_mean_var: T,
    pub crossing_second_moment: T,
    pub mean_crossing_var: T,
    pub sigma1_sq: T,
    pub sigma2_sq: T,
}

impl<T: Scalar> LawMoments<T> {
    fn lit(k: i32) -> T {
        T::from_i32(k).expect("small integer literal")
    }

    pub fn speed(&self) -> T {
        let one = T::one();
        (one.clone() - self.m1.clone()) / (one + self.m1.clone())
    }

    pub fn mean_crossing(&self) -> T {
        let one = T::one();
        (one.clone() + self.m1.clone()) / (one - self.m1.clone())
    }

    /// Every closed form, assuming `m2 < 1` (checked by callers that build laws).
    pub fn closed_forms(&self) -> ClosedForms<T> {
        let one = T::one();
        let two = Self::lit(2);
        let m1 = self.m1.clone();
        let m2 = self.m2.clone();
        let speed = self.speed();
        let a = self.mean_crossing();
        let a2 = (one.clone()
            + two.clone() * m1.clone()
            + m2.clone()
            + two.clone() * (m1.clone() + m2.clone()) * a.clone())
            / (one.clone() - m2.clone());
        let var_a = a2.clone() - a.clone() * a.clone();
        // E s = 1 + 3 m1 + 2 m2 + 4 (m1 + m2) E a + 2 m2 E a^2, divided by 1 - m1.
        let s = (one.clone()
            + Self::lit(3) * m1.clone()
            + two.clone() * m2.clone()
            + Self::lit(4) * (m1.clone() + m2.clone()) * a.clone()
            + two * m2 * a2.clone())
            / (one - m1);
        let mean_var = s.clone() - a2.clone();
        let v3 = speed.clone() * speed.clone() * speed.clone();
        ClosedForms {
            sigma1_sq: v3 * mean_var.clone(),
            sigma2_sq: speed.clone() * speed.clone() * var_a.clone(),
            speed,
            mean_crossing: a,
            crossing_mean_sq: a2,
            crossing_mean_var: var_a,
            crossing_second_moment: s,
            mean_crossing_var: mean_var,
        }
    }
}

/// A finitely supported law for `omega_0`, generic over the field type.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw<T> {
    pub atoms: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> DiscreteLaw<T> {
    pub fn moments(&self) -> LawMoments<T> {
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for (w, p) in self.weights.iter().zip(&self.atoms) {
            let rho = (T::one() - p.clone()) / p.clone();
            m1 = m1 + w.clone() * rho.clone();
            m2 = m2 + w.clone() * rho.clone() * rho;
        }
        LawMoments { m1, m2 }
    }
}

/// Kind of environment law, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    TwoPoint { atoms: [f64; 2], weights: [f64; 2] },
    FiniteDiscrete { atoms: Vec<f64>, weights: Vec<f64> },
    UniformInterval { bounds: [f64; 2] },
}

/// Serialized form of an environment law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpecConfig {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default)]
    pub kappa: Option<f64>,
}

/// A validated i.i.d. environment law with its exact rho moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvSpecConfig", into = "EnvSpecConfig")]
pub struct EnvSpec {
    kind: EnvKind,
    kappa: f64,
    moments: LawMoments<f64>,
}

impl TryFrom<EnvSpecConfig> for EnvSpec {
    type Error = Error;

    fn try_from(c: EnvSpecConfig) -> Result<Self> {
        EnvSpec::new(c.kind, c.kappa)
    }
}

impl From<EnvSpec> for EnvSpecConfig {
    fn from(s: EnvSpec) -> Self {
        EnvSpecConfig {
            kind: s.kind,
            kappa: Some(s.kappa),
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidSpec("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

impl EnvSpec {
    /// Validates ellipticity and `E[rho^2] < 1`.
    ///
    /// When `kappa` is absent the largest admissible value is used.
    pub fn new(kind: EnvKind, kappa: Option<f64>) -> Result<Self> {
        let (lo, hi) = match &kind {
            EnvKind::TwoPoint { atoms, weights } => {
                check_weights(weights)?;
                (atoms[0].min(atoms[1]), atoms[0].max(atoms[1]))
            }
            EnvKind::FiniteDiscrete { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    return Err(Error::InvalidSpec(
                        "atoms and weights must be nonempty and of equal length".into(),
                    ));
                }
                check_weights(weights)?;
                let lo = atoms.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = atoms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            EnvKind::UniformInterval { bounds } => {
                if !(bounds[0] < bounds[1]) {
                    return Err(Error::InvalidSpec("interval bounds must satisfy a < b".into()));
                }
                (bounds[0], bounds[1])
            }
        };
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "site probabilities must lie strictly inside (0, 1), got [{lo}, {hi}]"
            )));
        }
        let widest = lo.min(1.0 - hi);
        let kappa = kappa.unwrap_or(widest);
        if !(kappa > 0.0 && kappa < 0.5) {
            return Err(Error::InvalidSpec(format!("kappa = {kappa} not in (0, 1/2)")));
        }
        if lo < kappa - 1e-15 || hi > 1.0 - kappa + 1e-15 {
            return Err(Error::InvalidSpec(format!(
                "support [{lo}, {hi}] leaves [kappa, 1 - kappa] = [{kappa}, {}]",
                1.0 - kappa
            )));
        }
        let moments = match &kind {
            EnvKind::TwoPoint { atoms, weights } => DiscreteLaw {
                atoms: atoms.to_vec(),
                weights: weights.to_vec(),
            }
            .moments(),
            EnvKind::FiniteDiscrete { atoms, weights } => DiscreteLaw {
                atoms: atoms.clone(),
                weights: weights.clone(),
            }
            .moments(),
            EnvKind::UniformInterval { bounds: [a, b] } => {
                // rho = 1/omega - 1 integrated against d omega / (b - a).
                let len = b - a;
                let log_ratio = (b / a).ln();
                let m1 = log_ratio / len - 1.0;
                let m2 = (1.0 / a - 1.0 / b - 2.0 * log_ratio) / len + 1.0;
                LawMoments { m1, m2 }
            }
        };
        if moments.m2 >= 1.0 {
            return Err(Error::NotDiffusive { m2: moments.m2 });
        }
        Ok(Self {
            kind,
            kappa,
            moments,
        })
    }

    pub fn two_point(p: f64, q: f64, weight_p: f64) -> Result<Self> {
        Self::new(
            EnvKind::TwoPoint {
                atoms: [p, q],
                weights: [weight_p, 1.0 - weight_p],
            },
            None,
        )
    }

    pub fn constant(p: f64) -> Result<Self> {
        Self::new(
            EnvKind::FiniteDiscrete {
                atoms: vec![p],
                weights: vec![1.0],
            },
            None,
        )
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(EnvKind::UniformInterval { bounds: [a, b] }, None)
    }

    pub fn kind(&self) -> &EnvKind {
        &self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn moments(&self) -> &LawMoments<f64> {
        &self.moments
    }

    pub fn closed_forms(&self) -> ClosedForms<f64> {
        self.moments.closed_forms()
    }

    /// True when the law is a point mass (sigma_2 = 0).
    pub fn is_degenerate(&self) -> bool {
        match &self.kind {
            EnvKind::TwoPoint { atoms, weights } => {
                atoms[0] == atoms[1] || weights.iter().any(|w| *w == 0.0)
            }
            EnvKind::FiniteDiscrete { atoms, weights } => {
                let first = atoms
                    .iter()
                    .zip(weights)
                    .find(|(_, w)| **w > 0.0)
                    .map(|(a, _)| *a);
                atoms
                    .iter()
                    .zip(weights)
                    .all(|(a, w)| *w == 0.0 || Some(*a) == first)
            }
            EnvKind::UniformInterval { .. } => false,
        }
    }

    /// Exact rational version of a discrete law; `None` for the interval kind.
    pub fn exact_law(&self) -> Option<DiscreteLaw<Rational64>> {
        let conv = |x: &f64| Rational64::approximate_float(*x);
        let (atoms, weights): (Vec<f64>, Vec<f64>) = match &self.kind {
            EnvKind::TwoPoint { atoms, weights } => (atoms.to_vec(), weights.to_vec()),
            EnvKind::FiniteDiscrete { atoms, weights } => (atoms.clone(), weights.clone()),
            EnvKind::UniformInterval { .. } => return None,
        };
        Some(DiscreteLaw {
            atoms: atoms.iter().map(conv).collect::<Option<_>>()?,
            weights: weights.iter().map(conv).collect::<Option<_>>()?,
        })
    }

    /// Sites excluded at a window edge so that recursion seeding errors have decayed.
    pub fn burn_in(&self) -> usize {
        let m1 = self.moments.m1;
        let from_decay = if m1 > 0.0 && m1 < 1.0 {
            (50.0 / m1.ln().abs()).ceil() as usize
        } else {
            0
        };
        from_decay.max(200)
    }

    /// Draw `omega` from a uniform variate `u` in [0, 1).
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.kind {
            EnvKind::TwoPoint { atoms, weights } => {
                if u < weights[0] {
                    atoms[0]
                } else {
                    atoms[1]
                }
            }
            EnvKind::FiniteDiscrete { atoms, weights } => {
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *a;
                    }
                }
                *atoms.last().expect("nonempty atoms")
            }
            EnvKind::UniformInterval { bounds: [a, b] } => a + (b - a) * u,
        }
    }

    /// The reference law of the acceptance suite: omega in {0.9, 0.6} with equal weights.
    pub fn reference() -> Self {
        Self::two_point(0.9, 0.6, 0.5).expect("reference law is valid")
    }
}
