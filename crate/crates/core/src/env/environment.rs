use serde::{Deserialize, Serialize};

use super::law::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Closed integer interval of lattice sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn covers(&self, other: &Window) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn require(&self, need: &Window) -> Result<()> {
        if self.covers(need) {
            Ok(())
        } else {
            Err(Error::WindowTooSmall {
                lo: self.lo,
                hi: self.hi,
                need_lo: need.lo,
                need_hi: need.hi,
            })
        }
    }

    pub fn expand(&self, left: i64, right: i64) -> Window {
        Window {
            lo: self.lo - left,
            hi: self.hi + right,
        }
    }

    #[inline]
    pub fn index(&self, x: i64) -> usize {
        debug_assert!(self.contains(x));
        (x - self.lo) as usize
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

/// A realized environment on a finite window.
///
/// `omega_x` depends only on `(seed, x)`, so nested windows drawn with the same
/// seed agree on their overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    window: Window,
    omega: Vec<f64>,
    spec: EnvSpec,
    seed: u64,
}

impl Environment {
    pub fn sample(spec: &EnvSpec, window: Window, seed: u64) -> Self {
        let omega = window
            .sites()
            .map(|x| {
                let bits = rng::stream_key(seed, &[domain::ENVIRONMENT, rng::signed_tag(x)]);
                spec.quantile(rng::unit_f64(bits))
            })
            .collect();
        Self {
            window,
            omega,
            spec: spec.clone(),
            seed,
        }
    }

    /// Window covering `span` plus burn-in margins on both sides.
    pub fn sample_for_span(spec: &EnvSpec, span: Window, seed: u64) -> Self {
        let m = spec.burn_in() as i64;
        Self::sample(spec, span.expand(m, m), seed)
    }

    /// Builds an environment from explicit values; each must respect the law's ellipticity.
    pub fn from_values(spec: &EnvSpec, lo: i64, omega: Vec<f64>, seed: u64) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidArgument("empty environment".into()));
        }
        let k = spec.kappa();
        if let Some((i, w)) = omega
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= k - 1e-15 && **w <= 1.0 - k + 1e-15))
        {
            return Err(Error::InvalidSpec(format!(
                "omega at site {} = {w} outside [kappa, 1 - kappa]",
                lo + i as i64
            )));
        }
        let window = Window::new(lo, lo + omega.len() as i64 - 1)?;
        Ok(Self {
            window,
            omega,
            spec: spec.clone(),
            seed,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn omega_slice(&self) -> &[f64] {
        &self.omega
    }

    #[inline]
    pub fn omega(&self, x: i64) -> f64 {
        self.omega[self.window.index(x)]
    }

    #[inline]
    pub fn rho(&self, x: i64) -> f64 {
        let w = self.omega(x);
        (1.0 - w) / w
    }

    pub fn get(&self, x: i64) -> Result<f64> {
        if self.window.contains(x) {
            Ok(self.omega(x))
        } else {
            Err(Error::OutsideWindow {
                site: x,
                lo: self.window.lo,
                hi: self.window.hi,
            })
        }
    }

    /// True when all sites carry the same value.
    pub fn is_constant(&self) -> bool {
        self.omega.iter().all(|w| *w == self.omega[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_is_constant() {
        let s = EnvSpec::constant(0.75).unwrap();
        let e = Environment::sample(&s, Window::new(-50, 50).unwrap(), 3);
        assert!(e.omega_slice().iter().all(|w| *w == 0.75));
        assert!(e.is_constant());
    }

    #[test]
    fn deterministic_and_nested() {
        let s = EnvSpec::reference();
        let a = Environment::sample(&s, Window::new(-100, 100).unwrap(), 9);
        let b = Environment::sample(&s, Window::new(-100, 100).unwrap(), 9);
        assert_eq!(a, b);
        let c = Environment::sample(&s, Window::new(-20, 300).unwrap(), 9);
        for x in -20..=100 {
            assert_eq!(a.omega(x), c.omega(x));
        }
        let d = Environment::sample(&s, Window::new(-100, 100).unwrap(), 10);
        assert_ne!(a.omega_slice(), d.omega_slice());
    }

    #[test]
    fn atom_frequencies() {
        let s = EnvSpec::reference();
        let n = 1_000_000;
        let e = Environment::sample(&s, Window::new(0, n - 1).unwrap(), 11);
        let k = e.omega_slice().iter().filter(|w| **w == 0.9).count() as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((k / n as f64 - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn rejects_inelliptic_values() {
        let s = EnvSpec::reference();
        assert!(Environment::from_values(&s, 0, vec![0.9, 0.95], 0).is_err());
        assert!(Environment::from_values(&s, 0, vec![0.9, 0.6, 0.75], 0).is_ok());
    }

    #[test]
    fn window_checks() {
        assert!(Window::new(3, 2).is_err());
        let w = Window::new(-5, 5).unwrap();
        assert_eq!(w.len(), 11);
        assert!(w.require(&Window { lo: -5, hi: 6 }).is_err());
        assert!(w.require(&Window { lo: -4, hi: 5 }).is_ok());
    }
}
