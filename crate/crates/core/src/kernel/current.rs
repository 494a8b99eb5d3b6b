use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{floor_cut, joint_tail_field, tail_field, Side, SiteField};
use crate::env::{EnvSpec, Environment, InitMode, QuenchedFunctionals, Window};
use crate::error::{Error, Result};
use crate::limit::Point;
use crate::scalar::CompensatedSum;

/// Front position of one grid point: particles are counted against
/// `level = n t v + r sqrt(n) - shift` at step `floor(n t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cutoff {
    pub t: f64,
    pub r: f64,
    pub steps: u64,
    pub level: f64,
    pub shift: f64,
}

impl Cutoff {
    pub fn new(n: u64, (t, r): Point, speed: f64, shift: f64) -> Self {
        let nf = n as f64;
        Self {
            t,
            r,
            steps: (nf * t).floor() as u64,
            level: nf * t * speed + r * nf.sqrt() - shift,
            shift,
        }
    }

    /// Unshifted fronts for every grid point.
    pub fn grid(n: u64, points: &[Point], speed: f64) -> Vec<Self> {
        points.iter().map(|p| Self::new(n, *p, speed, 0.0)).collect()
    }

    /// Fronts shifted by `Z_{nt}`, as used for the shifted current.
    pub fn shifted_grid(n: u64, points: &[Point], q: &QuenchedFunctionals) -> Result<Vec<Self>> {
        points
            .iter()
            .map(|p| Ok(Self::new(n, *p, q.speed(), q.z(n, p.0)?)))
            .collect()
    }

    /// Start site whose particles are centred on the front.
    fn centre(&self, speed: f64) -> f64 {
        self.level - speed * self.steps as f64
    }
}

/// Quenched mean and variance of the initial occupation at each site.
#[derive(Debug, Clone, Copy)]
pub struct Occupation<'a> {
    pub init: InitMode,
    pub functionals: Option<&'a QuenchedFunctionals>,
}

impl<'a> Occupation<'a> {
    pub fn new(init: InitMode, functionals: Option<&'a QuenchedFunctionals>) -> Result<Self> {
        init.validate()?;
        if init.needs_density() && functionals.is_none() {
            return Err(Error::InvalidArgument("quenched-Poisson occupation needs the density profile".into()));
        }
        Ok(Self { init, functionals })
    }

    fn density(&self, x: i64) -> Result<f64> {
        match (self.init.needs_density(), self.functionals) {
            (true, Some(q)) => q.density(x),
            _ => Ok(1.0),
        }
    }

    pub fn mean(&self, x: i64) -> Result<f64> {
        Ok(self.init.site_mean(self.density(x)?))
    }

    pub fn var(&self, x: i64) -> Result<f64> {
        Ok(self.init.site_var(self.density(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentOptions {
    /// Start sites within `spread` diffusive widths of the front are kept.
    pub spread: f64,
    /// Bound on the discarded contribution, in particles. The left-edge term
    /// is `1 - P`, so roundoff puts a floor near `steps * 1e-13`.
    pub threshold: f64,
    /// Number of times the start range may be widened by half.
    pub max_widen: u32,
}

impl Default for CurrentOptions {
    fn default() -> Self {
        Self {
            spread: 9.5,
            threshold: 1e-6,
            max_widen: 6,
        }
    }
}

/// Start sites retained for a set of fronts: every site between the origin and
/// the front centres, plus `spread` diffusive widths on both sides.
pub fn start_window(spec: &EnvSpec, cutoffs: &[Cutoff], spread: f64) -> Result<Window> {
    if cutoffs.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let cf = spec.closed_forms();
    let width_rate = (cf.sigma1_sq + cf.sigma2_sq).sqrt();
    let n_max = cutoffs.iter().map(|c| c.steps).max().unwrap_or(0) as f64;
    let w = (spread * width_rate * n_max.sqrt()).ceil() + 2.0;
    let lo = cutoffs.iter().map(|c| c.centre(cf.speed)).fold(0.0, f64::min) - w;
    let hi = cutoffs.iter().map(|c| c.centre(cf.speed)).fold(0.0, f64::max) + w;
    Window::new(lo.floor() as i64, hi.ceil() as i64)
}

/// Span to sample for a grid, leaving room for one widening of the start range.
pub fn suggested_span(spec: &EnvSpec, cutoffs: &[Cutoff], opts: &CurrentOptions) -> Result<Window> {
    Ok(required_span(start_window(spec, cutoffs, 1.5 * opts.spread)?, cutoffs))
}

/// Sites the environment must cover (before burn-in margins) for a start window.
pub fn required_span(starts: Window, cutoffs: &[Cutoff]) -> Window {
    let n = cutoffs.iter().map(|c| c.steps).max().unwrap_or(0) as i64;
    starts.expand(n, n)
}

/// Exact quenched moments of the current on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentMoments {
    pub n: u64,
    pub cutoffs: Vec<Cutoff>,
    pub starts: Window,
    /// `E_omega Y_n(t, r)` per grid point.
    pub mean: Vec<f64>,
    /// Quenched covariance of `n^{-1/4} V_n`; empty when only means were asked for.
    pub cov: Vec<Vec<f64>>,
    /// Bound on the contribution of starts outside `starts`.
    pub truncation_tail: f64,
}

impl CurrentMoments {
    pub fn points(&self) -> Vec<Point> {
        self.cutoffs.iter().map(|c| (c.t, c.r)).collect()
    }
}

struct Prepared {
    starts: Window,
    fields: Vec<SiteField<f64>>,
    means: Vec<f64>,
    vars: Vec<f64>,
    tail: f64,
}

fn prepare(env: &Environment, occ: &Occupation, cutoffs: &[Cutoff], opts: &CurrentOptions) -> Result<Prepared> {
    let mut spread = opts.spread;
    let mut attempt = 0;
    loop {
        let starts = start_window(env.spec(), cutoffs, spread)?;
        env.window().require(&required_span(starts, cutoffs))?;
        let fields: Vec<SiteField<f64>> = cutoffs
            .par_iter()
            .map(|c| tail_field(env, c.steps, c.level, starts))
            .collect::<Result<_>>()?;
        let means: Vec<f64> = starts.sites().map(|m| occ.mean(m)).collect::<Result<_>>()?;
        let vars: Vec<f64> = starts.sites().map(|m| occ.var(m)).collect::<Result<_>>()?;
        let weight = max_weight(occ, required_span(starts, cutoffs))?;
        let tail = cutoffs
            .iter()
            .zip(&fields)
            .map(|(c, f)| truncation_bound(c, f, starts) * weight)
            .fold(0.0, f64::max);
        if tail <= opts.threshold || attempt >= opts.max_widen {
            return Ok(Prepared {
                starts,
                fields,
                means,
                vars,
                tail,
            });
        }
        attempt += 1;
        spread *= 1.5;
    }
}

/// Largest `mean + var` of the occupation over the readable part of `span`.
fn max_weight(occ: &Occupation, span: Window) -> Result<f64> {
    let readable = match occ.functionals {
        Some(q) if occ.init.needs_density() => {
            let u = q.usable();
            Window::new(span.lo.max(u.lo), span.hi.min(u.hi))?
        }
        _ => span,
    };
    let mut best: f64 = 0.0;
    for x in readable.sites() {
        best = best.max(occ.mean(x)? + occ.var(x)?);
    }
    Ok(best)
}

/// Count-weighted tail mass of the starts beyond the window. The tail field is
/// nonincreasing along starts of equal parity (two such walks cannot cross
/// without meeting) and exactly 0 or 1 outside the light cone.
fn truncation_bound(c: &Cutoff, f: &SiteField<f64>, starts: Window) -> f64 {
    let k = floor_cut(c.level);
    let n = c.steps as i64;
    let right_count = (k + n - starts.hi).max(0) as f64;
    let left_count = (starts.lo - (k - n)).max(0) as f64;
    let right = f.at(starts.hi).max(f.at(starts.hi - 1));
    let left = (1.0 - f.at(starts.lo)).max(1.0 - f.at(starts.lo + 1));
    right * right_count + left * left_count
}

fn mean_from(prep: &Prepared) -> Vec<f64> {
    prep.fields
        .iter()
        .map(|f| {
            let mut acc = CompensatedSum::<f64>::new();
            for (i, m) in prep.starts.sites().enumerate() {
                let p = f.at(m);
                if m > 0 {
                    acc.add(prep.means[i] * p);
                } else {
                    acc.add(-prep.means[i] * (1.0 - p));
                }
            }
            acc.value()
        })
        .collect()
}

/// `E_omega Y_n(t, r) = sum_{m > 0} mean(m) P(X^m <= c) - sum_{m <= 0} mean(m) P(X^m > c)`.
pub fn quenched_mean_current(
    env: &Environment,
    occ: &Occupation,
    n: u64,
    cutoffs: &[Cutoff],
    opts: &CurrentOptions,
) -> Result<CurrentMoments> {
    let prep = prepare(env, occ, cutoffs, opts)?;
    Ok(CurrentMoments {
        n,
        cutoffs: cutoffs.to_vec(),
        starts: prep.starts,
        mean: mean_from(&prep),
        cov: Vec::new(),
        truncation_tail: prep.tail,
    })
}

/// Exact quenched means and covariance matrix of `n^{-1/4} V_n` over the grid.
/// Sites are independent under the quenched law; each contributes the
/// covariance of a random sum of indicators.
pub fn quenched_current_moments(
    env: &Environment,
    occ: &Occupation,
    n: u64,
    cutoffs: &[Cutoff],
    opts: &CurrentOptions,
) -> Result<CurrentMoments> {
    let prep = prepare(env, occ, cutoffs, opts)?;
    let k = cutoffs.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let starts = prep.starts;
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = if cutoffs[i].steps <= cutoffs[j].steps { (i, j) } else { (j, i) };
            let joint = if i == j {
                None
            } else {
                Some(joint_tail_field::<f64>(
                    env,
                    cutoffs[a].steps,
                    cutoffs[a].level,
                    cutoffs[b].steps,
                    cutoffs[b].level,
                    Side::Le,
                    starts,
                )?)
            };
            let (fi, fj) = (&prep.fields[i], &prep.fields[j]);
            let mut acc = CompensatedSum::<f64>::new();
            for (s, m) in starts.sites().enumerate() {
                let (pi, pj) = (fi.at(m), fj.at(m));
                let pij = joint.as_ref().map_or(pi, |f| f.at(m));
                let indicator_cov = pij - pi * pj;
                let count_term = if m > 0 { pi * pj } else { (1.0 - pi) * (1.0 - pj) };
                acc.add(prep.means[s] * indicator_cov + prep.vars[s] * count_term);
            }
            Ok(acc.value() / (n as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let mut cov = vec![vec![0.0; k]; k];
    for (&(i, j), v) in pairs.iter().zip(entries) {
        cov[i][j] = v;
        cov[j][i] = v;
    }
    Ok(CurrentMoments {
        n,
        cutoffs: cutoffs.to_vec(),
        starts,
        mean: mean_from(&prep),
        cov,
        truncation_tail: prep.tail,
    })
}

/// `omega_x (1 + h(x+1) - h(x)) + (1 - omega_x)(-1 + h(x-1) - h(x)) - v`: the
/// drift of `X_n - n v + h(X_n)` at `x`.
pub fn martingale_defect(env: &Environment, q: &QuenchedFunctionals, x: i64) -> Result<f64> {
    let w = env.get(x)?;
    let (hm, h0, hp) = (q.h(x - 1)?, q.h(x)?, q.h(x + 1)?);
    Ok(w * (1.0 + hp - h0) + (1.0 - w) * (-1.0 + hm - h0) - q.speed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_symmetric, min_eigenvalue};
    use crate::limit::{gamma_closed, LimitParams};

    fn constant_env(p: f64, half: i64) -> Environment {
        Environment::sample(&EnvSpec::constant(p).unwrap(), Window::new(-half, half).unwrap(), 0)
    }

    #[test]
    fn time_zero_counts_starts() {
        let env = constant_env(0.75, 400);
        let occ = Occupation::new(InitMode::Deterministic { k: 1 }, None).unwrap();
        let cut = Cutoff::grid(100, &[(0.0, 0.5), (0.0, -0.5)], 0.5);
        let m = quenched_mean_current(&env, &occ, 100, &cut, &CurrentOptions::default()).unwrap();
        assert_eq!(m.mean, vec![5.0, -5.0]);
        assert!(m.truncation_tail <= 1e-12);
    }

    #[test]
    fn constant_environment_mean_shrinks() {
        let env = constant_env(0.75, 10_000);
        let occ = Occupation::new(InitMode::Deterministic { k: 1 }, None).unwrap();
        // fractional fronts, so the lattice rounding is visible
        let pts = [(0.7, 0.33), (0.5, 0.55), (1.0, -1.01)];
        let dev = |n: u64| {
            let cut = Cutoff::grid(n, &pts, 0.5);
            let m = quenched_mean_current(&env, &occ, n, &cut, &CurrentOptions::default()).unwrap();
            m.mean
                .iter()
                .zip(&pts)
                .map(|(y, (_, r))| (y - r * (n as f64).sqrt()).abs() / (n as f64).sqrt())
                .fold(0.0, f64::max)
        };
        let (small, large) = (dev(400), dev(6400));
        assert!(large < small && large < 0.01, "{small} -> {large}");
    }

    #[test]
    fn deterministic_variance_is_binomial() {
        let env = Environment::sample(&EnvSpec::reference(), Window::new(-900, 900).unwrap(), 5);
        let occ = Occupation::new(InitMode::Deterministic { k: 2 }, None).unwrap();
        let n = 100;
        let cut = Cutoff::grid(n, &[(1.0, 0.3)], 0.44);
        let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default()).unwrap();
        let f = tail_field::<f64>(&env, cut[0].steps, cut[0].level, m.starts).unwrap();
        let want: f64 = f.iter().map(|(_, p)| 2.0 * p * (1.0 - p)).sum::<f64>() / 10.0;
        assert!((m.cov[0][0] - want).abs() < 1e-12);
    }

    #[test]
    fn kumar_variance_close_to_gamma() {
        let env = constant_env(0.75, 6000);
        let occ = Occupation::new(InitMode::Deterministic { k: 1 }, None).unwrap();
        let n = 2500;
        let cut = Cutoff::grid(n, &[(1.0, 0.0)], 0.5);
        let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default()).unwrap();
        let p = LimitParams::new(1.0, 0.0, 0.75, 0.0).unwrap();
        let g = gamma_closed(&p, (1.0, 0.0), (1.0, 0.0));
        assert!((m.cov[0][0] / g - 1.0).abs() < 0.05, "{} vs {g}", m.cov[0][0]);
    }

    #[test]
    fn covariance_symmetric_psd() {
        let spec = EnvSpec::reference();
        let env = Environment::sample_for_span(&spec, Window::new(-2500, 2500).unwrap(), 8);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.5 }, Some(&q)).unwrap();
        let n = 400;
        let cut = Cutoff::grid(n, &[(1.0, 0.0), (0.5, 0.5), (1.5, -0.5), (1.0, 1.0)], q.speed());
        let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default()).unwrap();
        assert!(is_symmetric(&m.cov, 0.0));
        assert!(min_eigenvalue(&m.cov) >= -1e-9);
        assert!(m.truncation_tail <= CurrentOptions::default().threshold);
    }

    #[test]
    fn small_window_rejected() {
        let env = constant_env(0.75, 200);
        let occ = Occupation::new(InitMode::Deterministic { k: 1 }, None).unwrap();
        let cut = Cutoff::grid(400, &[(1.0, 0.0)], 0.5);
        assert!(matches!(
            quenched_mean_current(&env, &occ, 400, &cut, &CurrentOptions::default()),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn defect_vanishes() {
        let spec = EnvSpec::reference();
        let env = Environment::sample_for_span(&spec, Window::new(-500, 500).unwrap(), 3);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        for x in -490..490 {
            assert!(martingale_defect(&env, &q, x).unwrap().abs() < 1e-10);
        }
        let env = constant_env(0.75, 600);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        assert!(martingale_defect(&env, &q, 0).unwrap().abs() < 1e-15);
    }
}
