//! Deterministic functionals of a realized environment.
//!
//! All profiles are computed once and cached. Recursions that run left to
//! right (crossing-time moments) are seeded at the left edge with annealed
//! values; the seeding error contracts by a factor `rho_x` per site, so the
//! first `burn_in` sites are excluded from reads. The stationary density
//! series runs to the right and is excluded on the right margin symmetrically.

use serde::Serialize;

use super::environment::{Environment, Window};
use crate::error::{Error, Result};
use crate::scalar::CompensatedSum;

/// Relative size of the last retained term of the density series.
pub const DENSITY_SERIES_TOL: f64 = 1e-12;
/// Hard depth limit of the density series.
pub const DENSITY_SERIES_MAX_DEPTH: usize = 10_000;

/// Diagnostics about the finite-window approximations.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BoundaryBias {
    pub burn_in: usize,
    /// Product of `rho` over the left margin: the factor by which the seeding
    /// error has contracted where reads begin.
    pub seed_contraction: f64,
    /// Sites whose density series hit the depth limit.
    pub density_depth_limited: usize,
    /// Sites whose density series reached the window edge and were closed with
    /// the annealed remainder.
    pub density_edge_closed: usize,
}

#[derive(Debug, Clone)]
pub struct QuenchedFunctionals {
    window: Window,
    usable: Window,
    speed: f64,
    mean_crossing: f64,
    /// Quenched mean crossing time of site x (from x to x+1).
    a: Vec<f64>,
    /// Quenched second moment of the same crossing time.
    s: Vec<f64>,
    h: Vec<f64>,
    f: Vec<f64>,
    boundary: BoundaryBias,
}

impl QuenchedFunctionals {
    /// Computes every profile. The window must contain the origin (the corrector
    /// is anchored there) and be longer than twice the burn-in.
    pub fn compute(env: &Environment) -> Result<Self> {
        let spec = env.spec();
        let window = env.window();
        let burn_in = spec.burn_in();
        let margin = burn_in as i64;
        if window.len() <= 2 * burn_in || !window.contains(0) {
            return Err(Error::WindowTooSmall {
                lo: window.lo,
                hi: window.hi,
                need_lo: window.lo.min(-1 - margin),
                need_hi: window.hi.max(1 + margin).max(window.lo + 2 * margin),
            });
        }
        let usable = Window {
            lo: window.lo + margin,
            hi: window.hi - margin,
        };
        let cf = spec.closed_forms();
        let speed = cf.speed;
        let mean_crossing = cf.mean_crossing;
        let omega = env.omega_slice();
        let rho: Vec<f64> = omega.iter().map(|w| (1.0 - w) / w).collect();
        let n = omega.len();

        let mut a = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut prev_a = mean_crossing;
        let mut prev_s = cf.crossing_second_moment;
        for (i, (&r, &w)) in rho.iter().zip(omega).enumerate() {
            let ax = 1.0 + r + r * prev_a;
            // T = 1 w.p. omega, else 1 + T' + T'' with T' the crossing of x-1
            // and T'' a fresh crossing of x, all independent.
            let sx = 1.0 / w + r * (prev_s + 2.0 * prev_a + 2.0 * ax + 2.0 * prev_a * ax);
            if !(ax.is_finite() && sx.is_finite()) {
                return Err(Error::NonFinite {
                    what: "crossing-time moments",
                    site: window.lo + i as i64,
                });
            }
            a.push(ax);
            s.push(sx);
            prev_a = ax;
            prev_s = sx;
        }

        let seed_contraction = rho[..burn_in].iter().product::<f64>();

        // Corrector anchored at the origin.
        let origin = window.index(0);
        let mut h = vec![0.0; n];
        let mut acc = CompensatedSum::<f64>::new();
        for i in origin..n - 1 {
            acc.add(speed * (a[i] - mean_crossing));
            h[i + 1] = acc.value();
        }
        let mut acc = CompensatedSum::<f64>::new();
        for i in (0..origin).rev() {
            acc.add(-speed * (a[i] - mean_crossing));
            h[i] = acc.value();
        }

        // f(theta^x omega) = v / omega_x * (1 + sum_i prod_{j=1..i} rho_{x+j}).
        let tail_mean = spec.moments().m1 / (1.0 - spec.moments().m1);
        let mut depth_limited = 0;
        let mut edge_closed = 0;
        let mut f = Vec::with_capacity(n);
        for i in 0..n {
            let mut total = CompensatedSum::<f64>::new();
            total.add(1.0);
            let mut prod = 1.0;
            let mut depth = 0;
            loop {
                let j = i + depth + 1;
                if j >= n {
                    total.add(prod * tail_mean);
                    edge_closed += 1;
                    break;
                }
                prod *= rho[j];
                total.add(prod);
                depth += 1;
                if prod < DENSITY_SERIES_TOL * total.value() {
                    break;
                }
                if depth >= DENSITY_SERIES_MAX_DEPTH {
                    depth_limited += 1;
                    break;
                }
            }
            f.push(speed / omega[i] * total.value());
        }

        Ok(Self {
            window,
            usable,
            speed,
            mean_crossing,
            a,
            s,
            h,
            f,
            boundary: BoundaryBias {
                burn_in,
                seed_contraction,
                density_depth_limited: depth_limited,
                density_edge_closed: edge_closed,
            },
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Sites whose profiles are free of edge effects.
    pub fn usable(&self) -> Window {
        self.usable
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn mean_crossing(&self) -> f64 {
        self.mean_crossing
    }

    pub fn boundary(&self) -> &BoundaryBias {
        &self.boundary
    }

    fn check(&self, x: i64) -> Result<usize> {
        if self.usable.contains(x) {
            Ok(self.window.index(x))
        } else {
            Err(Error::OutsideWindow {
                site: x,
                lo: self.usable.lo,
                hi: self.usable.hi,
            })
        }
    }

    /// Quenched mean crossing time from `x` to `x + 1`.
    pub fn mean_crossing_at(&self, x: i64) -> Result<f64> {
        Ok(self.a[self.check(x)?])
    }

    pub fn crossing_var_at(&self, x: i64) -> Result<f64> {
        let i = self.check(x)?;
        Ok(self.s[i] - self.a[i] * self.a[i])
    }

    pub fn h(&self, x: i64) -> Result<f64> {
        Ok(self.h[self.check(x)?])
    }

    pub fn density(&self, x: i64) -> Result<f64> {
        Ok(self.f[self.check(x)?])
    }

    /// `Z_{nt} = h(floor(n t v_P))`.
    pub fn z(&self, n: u64, t: f64) -> Result<f64> {
        self.h(front_index(n, t, self.speed))
    }

    /// Raw profiles over the whole window, including the margins.
    pub fn mean_crossing_profile(&self) -> &[f64] {
        &self.a
    }

    pub fn second_moment_profile(&self) -> &[f64] {
        &self.s
    }

    pub fn corrector_profile(&self) -> &[f64] {
        &self.h
    }

    pub fn density_profile(&self) -> &[f64] {
        &self.f
    }

    /// Crossing-time variances over the usable window.
    pub fn crossing_var_usable(&self) -> Vec<f64> {
        self.usable
            .sites()
            .map(|x| {
                let i = self.window.index(x);
                self.s[i] - self.a[i] * self.a[i]
            })
            .collect()
    }

    /// `max_{1 <= k <= n} |h(k)|`.
    pub fn sup_abs_h(&self, n: i64) -> Result<f64> {
        self.check(n)?;
        Ok((1..=n)
            .map(|k| self.h[self.window.index(k)].abs())
            .fold(0.0, f64::max))
    }
}

/// `floor(n t v)` as a lattice index.
pub fn front_index(n: u64, t: f64, speed: f64) -> i64 {
    (n as f64 * t * speed).floor() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::EnvSpec;
    use rand::{Rng, SeedableRng};

    fn env(spec: &EnvSpec, lo: i64, hi: i64, seed: u64) -> Environment {
        Environment::sample(spec, Window::new(lo, hi).unwrap(), seed)
    }

    #[test]
    fn constant_environment_profiles() {
        for (p, a, var) in [(0.75, 2.0, 6.0), (0.9, 1.25, 0.703125)] {
            let spec = EnvSpec::constant(p).unwrap();
            let q = QuenchedFunctionals::compute(&env(&spec, -600, 600, 1)).unwrap();
            for x in q.usable().sites() {
                assert!((q.mean_crossing_at(x).unwrap() - a).abs() < 1e-12);
                assert!((q.crossing_var_at(x).unwrap() - var).abs() < 1e-9);
                assert!(q.h(x).unwrap().abs() < 1e-9);
                assert!((q.density(x).unwrap() - 1.0).abs() < 1e-10);
            }
            assert_eq!(q.z(1000, 0.5).unwrap(), q.h(front_index(1000, 0.5, 2.0 * p - 1.0)).unwrap());
        }
    }

    #[test]
    fn recursion_and_telescoping_identities() {
        let spec = EnvSpec::reference();
        let e = env(&spec, -2000, 2000, 5);
        let q = QuenchedFunctionals::compute(&e).unwrap();
        let v = q.speed();
        let et = q.mean_crossing();
        let u = q.usable();
        for x in u.lo + 1..=u.hi {
            let rho = e.rho(x);
            let lhs = q.mean_crossing_at(x).unwrap();
            let rhs = 1.0 + rho + rho * q.mean_crossing_at(x - 1).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * lhs);
            assert!(q.crossing_var_at(x).unwrap() >= 0.0);
            assert!(q.density(x).unwrap() > 0.0);
        }
        for x in 0..u.hi {
            let d = q.h(x + 1).unwrap() - q.h(x).unwrap() - v * (q.mean_crossing_at(x).unwrap() - et);
            assert!(d.abs() < 1e-9);
        }
        for x in u.lo + 1..0 {
            let d = q.h(x).unwrap() - q.h(x - 1).unwrap() - v * (q.mean_crossing_at(x - 1).unwrap() - et);
            assert!(d.abs() < 1e-9);
        }
        assert_eq!(q.h(0).unwrap(), 0.0);
        assert!(q.boundary().seed_contraction < 1e-12);
    }

    #[test]
    fn outside_usable_window_is_an_error() {
        let spec = EnvSpec::reference();
        let q = QuenchedFunctionals::compute(&env(&spec, -500, 500, 2)).unwrap();
        assert!(q.h(499).is_err());
        assert!(q.z(10_000, 1.0).is_err());
        assert!(QuenchedFunctionals::compute(&env(&spec, 10, 2000, 2)).is_err());
    }

    #[test]
    fn deterministic() {
        let spec = EnvSpec::reference();
        let a = QuenchedFunctionals::compute(&env(&spec, -800, 800, 4)).unwrap();
        let b = QuenchedFunctionals::compute(&env(&spec, -800, 800, 4)).unwrap();
        assert_eq!(a.corrector_profile(), b.corrector_profile());
        assert_eq!(a.density_profile(), b.density_profile());
        assert_eq!(a.second_moment_profile(), b.second_moment_profile());
    }

    /// Monte Carlo oracle for the crossing-time variance recursion: simulate
    /// crossings of one site of a fixed 50-site environment.
    #[test]
    fn crossing_variance_matches_simulation() {
        let spec = EnvSpec::reference();
        let e = env(&spec, -400, 450, 17);
        let q = QuenchedFunctionals::compute(&e).unwrap();
        let target = 25;
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(99);
        let trials = 100_000;
        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut x = target;
            let mut steps: u64 = 0;
            while x <= target {
                assert!(x >= e.window().lo);
                if rng.random::<f64>() < e.omega(x) {
                    x += 1;
                } else {
                    x -= 1;
                }
                steps += 1;
            }
            times.push(steps as f64);
        }
        let n = trials as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = times.iter().map(|t| (t - mean).powi(4)).sum::<f64>() / n;
        let se_mean = (var / n).sqrt();
        let se_var = ((m4 - var * var) / n).sqrt();
        let a = q.mean_crossing_at(target).unwrap();
        let v = q.crossing_var_at(target).unwrap();
        assert!((mean - a).abs() < 4.0 * se_mean, "mean {mean} vs {a}");
        assert!((var - v).abs() < 4.0 * se_var, "var {var} vs {v} (se {se_var})");
    }

    #[test]
    fn site_averages_match_annealed_values() {
        let spec = EnvSpec::reference();
        let cf = spec.closed_forms();
        let q = QuenchedFunctionals::compute(&env(&spec, -500_000, 500_000, 23)).unwrap();
        let u = q.usable();
        let a: Vec<f64> = u.sites().map(|x| q.mean_crossing_at(x).unwrap()).collect();
        let f: Vec<f64> = u.sites().map(|x| q.density(x).unwrap()).collect();
        let (ma, sa) = batch_mean(&a, 1000);
        let (mf, sf) = batch_mean(&f, 1000);
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        assert!((ma - 25.0 / 11.0).abs() < 4.0 * sa, "{ma} +- {sa}");
        // Radon-Nikodym density of the environment seen from the walker: mean one.
        assert!((mf - 1.0).abs() < 4.0 * sf, "{mf} +- {sf}");
        assert!((va - cf.crossing_mean_var).abs() < 0.02 * cf.crossing_mean_var);
    }

    fn batch_mean(xs: &[f64], batch: usize) -> (f64, f64) {
        let means: Vec<f64> = xs
            .chunks_exact(batch)
            .map(|c| c.iter().sum::<f64>() / batch as f64)
            .collect();
        let k = means.len() as f64;
        let m = means.iter().sum::<f64>() / k;
        let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
        (m, (v / k).sqrt())
    }

    #[test]
    fn density_is_random_in_random_environment() {
        let spec = EnvSpec::reference();
        let q = QuenchedFunctionals::compute(&env(&spec, -1000, 1000, 8)).unwrap();
        let u = q.usable();
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(1);
        let xs: Vec<i64> = (0..10).map(|_| rng.random_range(u.lo..=u.hi)).collect();
        let vals: Vec<f64> = xs.iter().map(|x| q.density(*x).unwrap()).collect();
        assert!(vals.iter().any(|v| (v - vals[0]).abs() > 1e-6));
    }
}
