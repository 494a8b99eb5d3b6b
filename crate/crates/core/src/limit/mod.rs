//! Limit objects of the centered current: `Psi`, the covariance kernel `Gamma`
//! in closed and integral form, its conditional form given `Z`, and the
//! averaged fBM special case.

mod bvn;
pub mod quad;

use std::f64::consts::PI;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;

pub use bvn::bvn_cdf;

use crate::env::TheoryParams;
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::stats;

#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Psi_{alpha^2}(x) = alpha^2 phi_{alpha^2}(x) - x Phi_{alpha^2}(-x)`; the
/// negative part of `x` at `alpha^2 = 0`.
pub fn psi(alpha_sq: f64, x: f64) -> f64 {
    debug_assert!(alpha_sq >= 0.0);
    if alpha_sq == 0.0 {
        return (-x).max(0.0);
    }
    let a = alpha_sq.sqrt();
    a * std_normal_pdf(x / a) - x * std_normal_cdf(-x / a)
}

/// `d/dx Psi_{alpha^2}(x) = -Phi_{alpha^2}(-x)`.
pub fn psi_derivative(alpha_sq: f64, x: f64) -> f64 {
    if alpha_sq == 0.0 {
        return if x < 0.0 { -1.0 } else { 0.0 };
    }
    -std_normal_cdf(-x / alpha_sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub mu: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl LimitParams {
    pub fn new(mu: f64, sigma0_sq: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        let p = Self {
            mu,
            sigma0_sq,
            sigma1_sq,
            sigma2_sq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma1_sq > 0.0
            && self.mu >= 0.0
            && self.sigma0_sq >= 0.0
            && self.sigma2_sq >= 0.0
            && [self.mu, self.sigma0_sq, self.sigma1_sq, self.sigma2_sq]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid limit parameters {self:?}")))
        }
    }
}

impl From<&TheoryParams> for LimitParams {
    fn from(t: &TheoryParams) -> Self {
        Self {
            mu: t.mu,
            sigma0_sq: t.sigma0_sq,
            sigma1_sq: t.sigma1_sq,
            sigma2_sq: t.sigma2_sq,
        }
    }
}

/// A space-time point `(t, r)`: time fraction and scaled spatial offset.
pub type Point = (f64, f64);

pub fn gamma_closed(p: &LimitParams, (s, q): Point, (t, r): Point) -> f64 {
    let s1 = p.sigma1_sq;
    p.mu * (psi(s1 * (s + t), q - r) - psi(s1 * (s - t).abs(), q - r))
        + p.sigma0_sq * (psi(s1 * s, -q) + psi(s1 * t, r) - psi(s1 * (s + t), r - q))
}

/// Covariance matrix of `Gamma` over a list of points.
pub fn gamma_matrix(p: &LimitParams, points: &[Point]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| points.iter().map(|b| gamma_closed(p, *a, *b)).collect())
        .collect()
}

/// Default cutoff beyond which the Brownian integrands are below double precision.
pub fn default_cutoff(p: &LimitParams, (s, q): Point, (t, r): Point) -> f64 {
    q.abs().max(r.abs()) + 8.0 * (p.sigma1_sq * s.max(t)).sqrt().max(0.125)
}

/// `P[B_var <= x]`, with the degenerate `var = 0` case an indicator.
fn below(var: f64, x: f64) -> f64 {
    if var == 0.0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        std_normal_cdf(x / var.sqrt())
    }
}

/// `P[B_s <= a, B_t <= b]` for a Brownian motion with variance rate `rate`.
fn joint_below(rate: f64, s: f64, a: f64, t: f64, b: f64) -> f64 {
    if s == 0.0 || t == 0.0 {
        return below(rate * s, a) * below(rate * t, b);
    }
    let r = s.min(t) / (s * t).sqrt();
    bvn_cdf(a / (rate * s).sqrt(), b / (rate * t).sqrt(), r)
}

/// Integral form of `Gamma` truncated to `[-cutoff, cutoff]` (the `sigma0`
/// half-line integrals to `[0, cutoff]` and `[-cutoff, 0]`). With `cutoff =
/// None` the default cutoff makes the truncation error negligible.
pub fn gamma_integral(p: &LimitParams, (s, q): Point, (t, r): Point, cutoff: Option<f64>, tol: f64) -> Result<f64> {
    let c = cutoff.unwrap_or_else(|| default_cutoff(p, (s, q), (t, r)));
    let rate = p.sigma1_sq;
    let breaks = [0.0, q, r];
    let mu_part = if p.mu == 0.0 {
        0.0
    } else {
        quad::integrate(
            |x| {
                let ps = below(rate * s, q - x);
                let pt = below(rate * t, r - x);
                // P[B_s <= a, B_t > b] = P[B_s <= a] - P[B_s <= a, B_t <= b]
                let joint = ps - joint_below(rate, s, q - x, t, r - x);
                ps * (1.0 - pt) - joint
            },
            -c,
            c,
            &breaks,
            tol / 3.0,
        )?
    };
    let s0_part = if p.sigma0_sq == 0.0 {
        0.0
    } else {
        let right = quad::integrate(
            |x| below(rate * s, q - x) * below(rate * t, r - x),
            0.0,
            c,
            &breaks,
            tol / 3.0,
        )?;
        let left = quad::integrate(
            |x| (1.0 - below(rate * s, q - x)) * (1.0 - below(rate * t, r - x)),
            -c,
            0.0,
            &breaks,
            tol / 3.0,
        )?;
        right + left
    };
    Ok(p.mu * mu_part + p.sigma0_sq * s0_part)
}

/// Covariance of the limit `V` given `Z`: `Gamma` at spatially shifted points,
/// `z[i]` being `Z(t_i)`.
pub fn conditional_cov_v(p: &LimitParams, z: &[f64], points: &[Point]) -> Result<Vec<Vec<f64>>> {
    if z.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} Z values for {} points",
            z.len(),
            points.len()
        )));
    }
    let shifted: Vec<Point> = points.iter().zip(z).map(|(&(t, r), z)| (t, r + z)).collect();
    Ok(gamma_matrix(p, &shifted))
}

/// Brownian path `Z = sigma2 W` observed at sorted times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZPathSample {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ZPathSample {
    pub fn sample<R: rand::Rng + ?Sized>(sigma2_sq: f64, times: &[f64], rng: &mut R) -> Result<Self> {
        if times.iter().any(|t| *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("Z path times must be sorted and nonnegative".into()));
        }
        let sd = sigma2_sq.sqrt();
        let mut prev_t = 0.0;
        let mut z = 0.0;
        let mut values = Vec::with_capacity(times.len());
        for &t in times {
            let g: f64 = StandardNormal.sample(rng);
            z += sd * (t - prev_t).sqrt() * g;
            prev_t = t;
            values.push(z);
        }
        Ok(Self {
            times: times.to_vec(),
            values,
        })
    }

    /// Value at one of the sampled times.
    pub fn at(&self, t: f64) -> Option<f64> {
        if t == 0.0 {
            return Some(0.0);
        }
        self.times.iter().position(|s| *s == t).map(|i| self.values[i])
    }
}

/// `mu sqrt(sigma1^2 + sigma2^2) / sqrt(2 pi) (sqrt s + sqrt t - sqrt|s - t|)`,
/// valid only when `mu = sigma0^2`.
pub fn averaged_cov_fbm(p: &LimitParams, s: f64, t: f64) -> Result<f64> {
    if (p.mu - p.sigma0_sq).abs() > 1e-12 * p.mu.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "fBM covariance needs mu = sigma0^2, got {} and {}",
            p.mu, p.sigma0_sq
        )));
    }
    if s < 0.0 || t < 0.0 {
        return Err(Error::InvalidArgument("negative time".into()));
    }
    Ok(p.mu * (p.sigma1_sq + p.sigma2_sq).sqrt() / (2.0 * PI).sqrt()
        * (s.sqrt() + t.sqrt() - (s - t).abs().sqrt()))
}

/// Moments of the limit `V(t, r)` under the averaged law, where `V` is a
/// Gaussian variance mixture over `Z(t) ~ N(0, sigma2^2 t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureMoments {
    pub draws: usize,
    pub variance: f64,
    pub variance_se: f64,
    /// Excess kurtosis of the sampled `V` values.
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
    /// `3 Var(c) / E(c)^2` with `c` the conditional variance; the same
    /// quantity without the Gaussian sampling noise.
    pub conditional_kurtosis: f64,
    pub conditional_kurtosis_se: f64,
}

pub const MIN_MIXTURE_DRAWS: usize = 10_000;

pub fn mixture_moments_v(p: &LimitParams, t: f64, r: f64, draws: usize, seed: u64) -> Result<MixtureMoments> {
    if draws < MIN_MIXTURE_DRAWS {
        return Err(Error::InsufficientSamples {
            need: MIN_MIXTURE_DRAWS,
            got: draws,
        });
    }
    let mut rng = rng::stream(seed, &[domain::LIMIT]);
    let zsd = (p.sigma2_sq * t).sqrt();
    let mut cond = Vec::with_capacity(draws);
    let mut vs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let g: f64 = StandardNormal.sample(&mut rng);
        let z = zsd * g;
        let c = gamma_closed(p, (t, r + z), (t, r + z)).max(0.0);
        let e: f64 = StandardNormal.sample(&mut rng);
        cond.push(c);
        vs.push(c.sqrt() * e);
    }
    let sq: Vec<f64> = vs.iter().map(|v| v * v).collect();
    let (variance, variance_se) = stats::mean_se(&sq)?;
    let (excess_kurtosis, kurtosis_se) = stats::excess_kurtosis_jackknife(&vs)?;
    let (cond_k, cond_se) = conditional_kurtosis(&cond)?;
    Ok(MixtureMoments {
        draws,
        variance,
        variance_se,
        excess_kurtosis,
        kurtosis_se,
        conditional_kurtosis: cond_k,
        conditional_kurtosis_se: cond_se,
    })
}

/// `3 Var(c) / E(c)^2` with a delta-method standard error.
pub fn conditional_kurtosis(c: &[f64]) -> Result<(f64, f64)> {
    let n = c.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let nf = n as f64;
    let m1 = c.iter().sum::<f64>() / nf;
    let m2 = c.iter().map(|x| x * x).sum::<f64>() / nf;
    if m1 <= 0.0 {
        return Err(Error::Degenerate("zero conditional variance".into()));
    }
    let var = c.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / nf;
    let k = 3.0 * var / (m1 * m1);
    // gradient of 3 m2 / m1^2 in (m1, m2)
    let g1 = -6.0 * m2 / m1.powi(3);
    let g2 = 3.0 / (m1 * m1);
    let lin: Vec<f64> = c.iter().map(|x| g1 * x + g2 * x * x).collect();
    let (_, se) = stats::mean_se(&lin)?;
    Ok((k, se))
}

/// Writes `alpha_sq, x, psi` rows.
pub fn write_psi_csv<W: Write>(out: W, alphas_sq: &[f64], xs: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha_sq", "x", "psi"]).map_err(csv_err)?;
    for &a in alphas_sq {
        for &x in xs {
            w.serialize((a, x, psi(a, x))).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `i, j, s, q, t, r, gamma` rows for every ordered pair of points.
pub fn write_gamma_csv<W: Write>(out: W, p: &LimitParams, points: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "s", "q", "t", "r", "gamma"]).map_err(csv_err)?;
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate() {
            w.serialize((i, j, a.0, a.1, b.0, b.1, gamma_closed(p, *a, *b)))
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    fn kumar() -> LimitParams {
        LimitParams::new(1.0, 0.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, -2.0), 2.0);
        assert_eq!(psi(0.0, 3.0), 0.0);
        assert!((psi(1.0, 0.0) - 0.398942280401432677).abs() < 1e-15);
        for x in [-3.0, -1.0, -0.01, 0.0, 0.5, 3.0] {
            assert!((psi(1e-8, x) - (-x).max(0.0)).abs() < 1e-3);
        }
    }

    #[test]
    fn gamma_values() {
        let g = gamma_closed(&kumar(), (1.0, 0.0), (1.0, 0.0));
        assert!((g - 1.0 / PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_closed(&kumar(), (0.0, 0.4), (2.0, -1.0)), 0.0);
        let full = LimitParams::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let g = gamma_closed(&full, (1.0, 0.0), (1.0, 0.0));
        assert!((g - 2.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((averaged_cov_fbm(&full, 1.0, 1.0).unwrap() - g).abs() < 1e-15);
    }

    #[test]
    fn gamma_integral_matches_closed() {
        let p = LimitParams::new(0.5, 2.0, 1.0, 0.0).unwrap();
        for (a, b) in [((1.0, 0.0), (1.0, 0.0)), ((0.5, -0.3), (2.0, 0.7)), ((0.0, 0.4), (1.0, 0.2)), ((1.5, 1.0), (1.5, -1.0))] {
            let i = gamma_integral(&p, a, b, None, 1e-10).unwrap();
            let c = gamma_closed(&p, a, b);
            assert!((i - c).abs() < 1e-8, "{a:?} {b:?}: {i} vs {c}");
        }
    }

    #[test]
    fn gamma_integral_linearity() {
        let a = (1.0, 0.2);
        let b = (0.7, -0.4);
        let mu_only = LimitParams::new(2.0, 0.0, 1.0, 0.0).unwrap();
        let s0_only = LimitParams::new(0.0, 2.0, 1.0, 0.0).unwrap();
        let both = LimitParams::new(2.0, 2.0, 1.0, 0.0).unwrap();
        let sum = gamma_integral(&mu_only, a, b, None, 1e-11).unwrap() + gamma_integral(&s0_only, a, b, None, 1e-11).unwrap();
        assert!((sum - gamma_integral(&both, a, b, None, 1e-11).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn fbm_rejects_mismatch() {
        assert!(averaged_cov_fbm(&kumar(), 1.0, 1.0).is_err());
    }

    #[test]
    fn conditional_cov_special_cases() {
        let p = LimitParams::new(1.0, 0.0, 1.0, 0.5).unwrap();
        let pts = [(1.0, 0.0), (1.0, 0.5), (2.0, -0.5)];
        let plain = gamma_matrix(&p, &pts);
        assert_eq!(conditional_cov_v(&p, &[0.0; 3], &pts).unwrap(), plain);
        // equal times without sigma0: independent of a common shift
        let z = conditional_cov_v(&p, &[0.8, 0.8, -0.3], &pts).unwrap();
        assert!((z[0][1] - plain[0][1]).abs() < 1e-14);
        let q = LimitParams::new(1.3, 1.3, 0.8, 0.5).unwrap();
        let (s, t, zs, zt) = (0.6, 1.4, 0.3, -0.2);
        let m = conditional_cov_v(&q, &[zs, zt], &[(s, 0.0), (t, 0.0)]).unwrap();
        let want = q.mu * (psi(0.8 * s, -zs) + psi(0.8 * t, zt) - psi(0.8 * (t - s), zt - zs));
        assert!((m[0][1] - want).abs() < 1e-14);
    }

    #[test]
    fn averaging_identity() {
        let p = LimitParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let times = [1.0, 2.0];
        let mut rng = rng::stream(11, &[domain::LIMIT]);
        let mut vals = vec![Vec::new(); 3];
        for _ in 0..100_000 {
            let z = ZPathSample::sample(p.sigma2_sq, &times, &mut rng).unwrap();
            let m = conditional_cov_v(&p, &z.values, &[(1.0, 0.0), (2.0, 0.0)]).unwrap();
            vals[0].push(m[0][0]);
            vals[1].push(m[0][1]);
            vals[2].push(m[1][1]);
        }
        for (v, (s, t)) in vals.iter().zip([(1.0, 1.0), (1.0, 2.0), (2.0, 2.0)]) {
            let (m, se) = stats::mean_se(v).unwrap();
            let want = averaged_cov_fbm(&p, s, t).unwrap();
            assert!((m - want).abs() < 4.0 * se, "({s},{t}): {m} +- {se} vs {want}");
        }
    }

    #[test]
    fn z_path_increments() {
        let mut rng = rng::stream(12, &[domain::LIMIT]);
        let mut inc = Vec::new();
        for _ in 0..20_000 {
            let z = ZPathSample::sample(2.0, &[0.5, 1.5], &mut rng).unwrap();
            inc.push((z.values[1] - z.values[0]).powi(2));
        }
        let (m, se) = stats::mean_se(&inc).unwrap();
        assert!((m - 2.0).abs() < 4.0 * se);
        assert!(ZPathSample::sample(1.0, &[1.0, 0.5], &mut rng).is_err());
    }

    #[test]
    fn mixture_kurtosis() {
        let unmixed = LimitParams::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let m = mixture_moments_v(&unmixed, 1.0, 0.0, 200_000, 1).unwrap();
        assert!(m.excess_kurtosis.abs() < 4.0 * m.kurtosis_se);
        assert!(m.conditional_kurtosis.abs() < 1e-9);
        let no_sigma0 = LimitParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let m = mixture_moments_v(&no_sigma0, 1.0, 0.0, 200_000, 2).unwrap();
        assert!(m.excess_kurtosis.abs() < 4.0 * m.kurtosis_se);
        assert!(m.conditional_kurtosis.abs() < 1e-12);
        let mixed = LimitParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let m = mixture_moments_v(&mixed, 1.0, 0.0, 1_000_000, 3).unwrap();
        assert!(m.conditional_kurtosis > 4.0 * m.conditional_kurtosis_se);
        assert!(m.excess_kurtosis > 0.0);
    }

    #[test]
    fn csv_tables() {
        let mut buf = Vec::new();
        write_psi_csv(&mut buf, &[0.0, 1.0], &[-1.0, 0.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        let mut buf = Vec::new();
        write_gamma_csv(&mut buf, &kumar(), &[(1.0, 0.0), (2.0, 0.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    proptest! {
        #[test]
        fn psi_reflection(a in 0.0f64..9.0, x in -20.0f64..20.0) {
            prop_assert!((psi(a, -x) - psi(a, x) - x).abs() <= 1e-12 * (1.0 + x.abs()));
        }

        #[test]
        fn psi_derivative_matches(a in 0.05f64..9.0, x in -5.0f64..5.0) {
            let h = 1e-5;
            let fd = (psi(a, x + h) - psi(a, x - h)) / (2.0 * h);
            prop_assert!((fd - psi_derivative(a, x)).abs() < 1e-6);
        }

        #[test]
        fn psi_increasing_in_alpha(a in 0.0f64..4.0, d in 0.01f64..4.0, x in -5.0f64..5.0) {
            prop_assert!(psi(a + d, x) >= psi(a, x) - 1e-15);
        }

        #[test]
        fn gamma_symmetric_psd(
            pts in proptest::collection::vec((0.0f64..3.0, -2.0f64..2.0), 1..=8),
            mu in 0.0f64..2.0,
            s0 in 0.0f64..2.0,
            s1 in 0.1f64..3.0,
        ) {
            let p = LimitParams::new(mu, s0, s1, 0.0).unwrap();
            let m = gamma_matrix(&p, &pts);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert!((m[i][j] - m[j][i]).abs() < 1e-14);
                }
            }
            prop_assert!(min_eigenvalue(&m) >= -1e-9);
        }
    }
}
