//! Independent walkers under a fixed environment: initial configurations,
//! forward simulation and the current observables measured from it.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Environment, InitMode, Window};
use crate::error::{Error, Result};
use crate::kernel::{floor_cut, Cutoff, Occupation};
use crate::limit::Point;
use crate::rng::{self, domain, Stream};

/// Occupation numbers over a window together with the law that generated them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConfig {
    pub mode: InitMode,
    pub window: Window,
    pub counts: Vec<u32>,
}

impl InitialConfig {
    pub fn get(&self, x: i64) -> u32 {
        if self.window.contains(x) {
            self.counts[self.window.index(x)]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| *c as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, u32)> + '_ {
        self.window.sites().zip(self.counts.iter().copied())
    }
}

fn poisson(mean: f64, rng: &mut Stream) -> Result<u32> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidArgument(format!("Poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u32)
}

/// Draws `eta_0` over `window`; every site has its own stream keyed by
/// `(seed, replica, site)`.
pub fn sample_initial(occ: &Occupation, window: Window, seed: u64, replica: u64) -> Result<InitialConfig> {
    let counts = window
        .sites()
        .map(|x| match occ.init {
            InitMode::Deterministic { k } => Ok(k),
            _ => {
                let mut r = rng::stream(seed, &[domain::INITIAL, replica, rng::signed_tag(x)]);
                poisson(occ.mean(x)?, &mut r)
            }
        })
        .collect::<Result<_>>()?;
    Ok(InitialConfig {
        mode: occ.init,
        window,
        counts,
    })
}

/// Right-step thresholds for `next_u64() < threshold` comparisons.
#[derive(Debug, Clone)]
pub struct StepTable {
    window: Window,
    thresholds: Vec<u64>,
}

impl StepTable {
    pub fn new(env: &Environment) -> Self {
        Self {
            window: env.window(),
            thresholds: env.omega_slice().iter().map(|w| rng::bernoulli_threshold(*w)).collect(),
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Runs one walk from `start`, writing its position at each checkpoint.
    /// The caller guarantees the walk cannot leave the window.
    #[inline]
    pub fn walk(&self, start: i64, checkpoints: &[u64], rng: &mut Stream, out: &mut [i64]) {
        let mut i = (start - self.window.lo) as usize;
        let mut done = 0u64;
        for (slot, &c) in out.iter_mut().zip(checkpoints) {
            for _ in done..c {
                if rng.next_u64() < self.thresholds[i] {
                    i += 1;
                } else {
                    i -= 1;
                }
            }
            done = c;
            *slot = self.window.lo + i as i64;
        }
    }
}

/// Positions of every particle at every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Walks {
    pub checkpoints: Vec<u64>,
    /// Start site of each particle.
    pub start: Vec<i64>,
    /// Particle-major positions: `pos[p * checkpoints.len() + c]`.
    pub pos: Vec<i64>,
}

impl Walks {
    pub fn particles(&self) -> usize {
        self.start.len()
    }

    pub fn checkpoint_index(&self, steps: u64) -> Result<usize> {
        self.checkpoints
            .iter()
            .position(|c| *c == steps)
            .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint at step {steps}")))
    }

    pub fn position(&self, particle: usize, checkpoint: usize) -> i64 {
        self.pos[particle * self.checkpoints.len() + checkpoint]
    }

    /// `sum_{m > 0} #{X^m_N <= level} - sum_{m <= 0} #{X^m_N > level}`.
    pub fn current(&self, steps: u64, level: f64) -> Result<i64> {
        let c = self.checkpoint_index(steps)?;
        let k = floor_cut(level);
        let mut y = 0i64;
        for p in 0..self.particles() {
            let x = self.position(p, c);
            if self.start[p] > 0 {
                y += (x <= k) as i64;
            } else {
                y -= (x > k) as i64;
            }
        }
        Ok(y)
    }
}

/// Simulates every particle of `init` to each checkpoint. Particle `index` at
/// `site` uses the stream keyed by `(seed, replica, site, index)`, so results do
/// not depend on scheduling.
pub fn simulate_walks(env: &Environment, init: &InitialConfig, checkpoints: &[u64], seed: u64, replica: u64) -> Result<Walks> {
    simulate_with(&StepTable::new(env), init, checkpoints, seed, replica)
}

pub fn simulate_with(table: &StepTable, init: &InitialConfig, checkpoints: &[u64], seed: u64, replica: u64) -> Result<Walks> {
    if checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("checkpoints must be sorted".into()));
    }
    let reach = checkpoints.last().copied().unwrap_or(0) as i64;
    table.window.require(&init.window.expand(reach, reach))?;
    let k = checkpoints.len();
    let per_site: Vec<(Vec<i64>, Vec<i64>)> = init
        .window
        .sites()
        .zip(&init.counts)
        .collect::<Vec<_>>()
        .par_iter()
        .with_min_len(64)
        .map(|&(x, &count)| {
            let mut pos = vec![0i64; count as usize * k];
            for (j, out) in pos.chunks_exact_mut(k.max(1)).enumerate().take(count as usize) {
                let mut r = rng::stream(seed, &[domain::WALK, replica, rng::signed_tag(x), j as u64]);
                table.walk(x, checkpoints, &mut r, &mut out[..k]);
            }
            (vec![x; count as usize], pos)
        })
        .collect();
    let mut start = Vec::with_capacity(init.total() as usize);
    let mut pos = Vec::with_capacity(init.total() as usize * k);
    for (s, p) in per_site {
        start.extend(s);
        pos.extend(p);
    }
    Ok(Walks {
        checkpoints: checkpoints.to_vec(),
        start,
        pos,
    })
}

/// Advances every particle `steps` steps and returns the new occupation over
/// the original window widened by `steps`.
pub fn evolve_config(env: &Environment, config: &InitialConfig, steps: u64, seed: u64, replica: u64) -> Result<InitialConfig> {
    let walks = simulate_walks(env, config, &[steps], seed, replica)?;
    let s = steps as i64;
    let window = config.window.expand(s, s);
    let mut counts = vec![0u32; window.len()];
    for &x in &walks.pos {
        counts[window.index(x)] += 1;
    }
    Ok(InitialConfig {
        mode: config.mode,
        window,
        counts,
    })
}

/// One replica's measurements on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentObservation {
    pub environment: u64,
    pub n: u64,
    pub replica: u64,
    pub seed: u64,
    pub grid: Vec<Point>,
    #[serde(rename = "Y")]
    pub y: Vec<i64>,
    /// `Y` minus its exact quenched mean.
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    #[serde(rename = "Yq")]
    pub yq: Vec<i64>,
    #[serde(rename = "Z_over_sqrt_n")]
    pub z_over_sqrt_n: Vec<f64>,
}

impl CurrentObservation {
    /// Measures `Y` at `cutoffs` and `Y^(q)` at `shifted` (same grid order);
    /// `quenched_mean` is the exact `E_omega Y` at `cutoffs`.
    pub fn measure(
        walks: &Walks,
        n: u64,
        cutoffs: &[Cutoff],
        shifted: &[Cutoff],
        quenched_mean: &[f64],
        (environment, replica, seed): (u64, u64, u64),
    ) -> Result<Self> {
        if shifted.len() != cutoffs.len() || quenched_mean.len() != cutoffs.len() {
            return Err(Error::InvalidArgument("grid length mismatch".into()));
        }
        let y: Vec<i64> = cutoffs.iter().map(|c| walks.current(c.steps, c.level)).collect::<Result<_>>()?;
        let yq: Vec<i64> = shifted.iter().map(|c| walks.current(c.steps, c.level)).collect::<Result<_>>()?;
        Ok(Self {
            environment,
            n,
            replica,
            seed,
            grid: cutoffs.iter().map(|c| (c.t, c.r)).collect(),
            v: y.iter().zip(quenched_mean).map(|(y, m)| *y as f64 - m).collect(),
            y,
            yq,
            z_over_sqrt_n: shifted.iter().map(|c| c.shift / (n as f64).sqrt()).collect(),
        })
    }

    /// Appends one JSON line per grid point.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            environment: u64,
            n: u64,
            replica: u64,
            seed: u64,
            t: f64,
            r: f64,
            #[serde(rename = "Y")]
            y: i64,
            #[serde(rename = "V")]
            v: f64,
            #[serde(rename = "Yq")]
            yq: i64,
            #[serde(rename = "Z_over_sqrt_n")]
            z: f64,
        }
        for i in 0..self.grid.len() {
            let row = Row {
                environment: self.environment,
                n: self.n,
                replica: self.replica,
                seed: self.seed,
                t: self.grid[i].0,
                r: self.grid[i].1,
                y: self.y[i],
                v: self.v[i],
                yq: self.yq[i],
                z: self.z_over_sqrt_n[i],
            };
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSpec, QuenchedFunctionals};
    use crate::kernel::{quenched_current_moments, CurrentOptions};
    use crate::stats::{self, estimate_cov};

    fn constant(p: f64, half: i64) -> Environment {
        Environment::sample(&EnvSpec::constant(p).unwrap(), Window::new(-half, half).unwrap(), 0)
    }

    fn ones(window: Window) -> InitialConfig {
        InitialConfig {
            mode: InitMode::Deterministic { k: 1 },
            window,
            counts: vec![1; window.len()],
        }
    }

    #[test]
    fn deterministic_initial() {
        let occ = Occupation::new(InitMode::Deterministic { k: 1 }, None).unwrap();
        let c = sample_initial(&occ, Window::new(-5, 5).unwrap(), 1, 0).unwrap();
        assert!(c.counts.iter().all(|k| *k == 1));
        assert!(Occupation::new(InitMode::AnnealedPoisson { mu: -1.0 }, None).is_err());
    }

    #[test]
    fn annealed_poisson_moments() {
        let occ = Occupation::new(InitMode::AnnealedPoisson { mu: 2.0 }, None).unwrap();
        let c = sample_initial(&occ, Window::new(0, 999_999).unwrap(), 3, 0).unwrap();
        let xs: Vec<f64> = c.counts.iter().map(|k| *k as f64).collect();
        let (m, se) = stats::mean_se(&xs).unwrap();
        assert!((m - 2.0).abs() < 4.0 * se);
        let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let (v, se) = stats::mean_se(&sq).unwrap();
        assert!((v - 2.0).abs() < 4.0 * se);
    }

    #[test]
    fn quenched_poisson_site_means() {
        let spec = EnvSpec::reference();
        let env = Environment::sample_for_span(&spec, Window::new(-10, 10).unwrap(), 2);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.5 }, Some(&q)).unwrap();
        let probes = Window::new(-2, 2).unwrap();
        for x in probes.sites() {
            let draws: Vec<f64> = (0..10_000)
                .map(|rep| sample_initial(&occ, Window::new(x, x).unwrap(), 9, rep).unwrap().counts[0] as f64)
                .collect();
            let (m, se) = stats::mean_se(&draws).unwrap();
            assert!((m - 1.5 * q.density(x).unwrap()).abs() < 4.0 * se);
        }
    }

    #[test]
    fn one_step_frequency() {
        let env = Environment::sample(&EnvSpec::reference(), Window::new(-5, 5).unwrap(), 4);
        let table = StepTable::new(&env);
        let mut hits = 0;
        let draws = 100_000;
        for j in 0..draws {
            let mut r = rng::stream(1, &[j]);
            let mut out = [0];
            table.walk(0, &[1], &mut r, &mut out);
            hits += (out[0] == 1) as u32;
        }
        let p = env.omega(0);
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn classical_drift_and_variance() {
        let n = 10_000u64;
        let env = constant(0.75, n as i64 + 1);
        let init = InitialConfig {
            mode: InitMode::Deterministic { k: 2000 },
            window: Window::new(0, 0).unwrap(),
            counts: vec![2000],
        };
        let w = simulate_walks(&env, &init, &[n], 5, 0).unwrap();
        let d: Vec<f64> = w.pos.iter().map(|x| *x as f64).collect();
        let (m, se) = stats::mean_se(&d).unwrap();
        assert!((m - 0.5 * n as f64).abs() < 4.0 * se);
        let sq: Vec<f64> = d.iter().map(|x| (x - 0.5 * n as f64).powi(2) / n as f64).collect();
        let (v, se) = stats::mean_se(&sq).unwrap();
        assert!((v - 0.75).abs() < 4.0 * se, "{v} +- {se}");
    }

    #[test]
    fn walks_leaving_window_rejected() {
        let env = constant(0.75, 50);
        assert!(simulate_walks(&env, &ones(Window::new(-10, 10).unwrap()), &[45], 1, 0).is_err());
        assert!(simulate_walks(&env, &ones(Window::new(-10, 10).unwrap()), &[5, 3], 1, 0).is_err());
    }

    #[test]
    fn current_at_time_zero() {
        let env = constant(0.75, 50);
        let w = simulate_walks(&env, &ones(Window::new(-20, 20).unwrap()), &[0, 4], 1, 0).unwrap();
        assert_eq!(w.current(0, 5.0).unwrap(), 5);
        assert_eq!(w.current(0, -5.0).unwrap(), -5);
        let ys: Vec<i64> = (-20..=20).map(|l| w.current(4, l as f64 * 0.5).unwrap()).collect();
        assert!(ys.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn shifted_equals_plain_in_constant_environment() {
        let env = constant(0.75, 900);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        let n = 100;
        let pts = [(0.0, 0.5), (1.0, 0.3), (0.5, -0.4)];
        let plain = Cutoff::grid(n, &pts, q.speed());
        let shifted = Cutoff::shifted_grid(n, &pts, &q).unwrap();
        let w = simulate_walks(&env, &ones(Window::new(-200, 200).unwrap()), &[0, 50, 100], 3, 0).unwrap();
        let obs = CurrentObservation::measure(&w, n, &plain, &shifted, &[0.0; 3], (0, 0, 3)).unwrap();
        assert_eq!(obs.y, obs.yq);
        let mut buf = Vec::new();
        obs.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn determinism_across_workers() {
        let env = Environment::sample(&EnvSpec::reference(), Window::new(-400, 400).unwrap(), 1);
        let init = ones(Window::new(-100, 100).unwrap());
        let a = simulate_walks(&env, &init, &[10, 200], 7, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_walks(&env, &init, &[10, 200], 7, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn evolve_conserves_particles() {
        let env = Environment::sample(&EnvSpec::reference(), Window::new(-400, 400).unwrap(), 1);
        let occ = Occupation::new(InitMode::AnnealedPoisson { mu: 1.0 }, None).unwrap();
        let c = sample_initial(&occ, Window::new(-50, 50).unwrap(), 2, 0).unwrap();
        let e = evolve_config(&env, &c, 100, 2, 0).unwrap();
        assert_eq!(c.total(), e.total());
        let empty = InitialConfig {
            mode: c.mode,
            window: c.window,
            counts: vec![0; c.window.len()],
        };
        assert_eq!(evolve_config(&env, &empty, 10, 2, 0).unwrap().total(), 0);
        let one = InitialConfig {
            mode: c.mode,
            window: Window::new(0, 0).unwrap(),
            counts: vec![1],
        };
        let moved = evolve_config(&env, &one, 1, 2, 0).unwrap();
        assert_eq!(moved.get(1) + moved.get(-1), 1);
    }

    #[test]
    fn quenched_independence_of_blocks() {
        // contributions of disjoint start blocks are uncorrelated under fixed omega
        let env = Environment::sample(&EnvSpec::reference(), Window::new(-300, 300).unwrap(), 6);
        let occ = Occupation::new(InitMode::AnnealedPoisson { mu: 1.0 }, None).unwrap();
        let rows: Vec<Vec<f64>> = (0..4000)
            .map(|rep| {
                let left = sample_initial(&occ, Window::new(-40, 0).unwrap(), 1, rep).unwrap();
                let right = sample_initial(&occ, Window::new(1, 40).unwrap(), 1, rep).unwrap();
                let a = simulate_walks(&env, &left, &[60], 1, rep).unwrap();
                let b = simulate_walks(&env, &right, &[60], 1, rep).unwrap();
                vec![a.current(60, 26.0).unwrap() as f64, b.current(60, 26.0).unwrap() as f64]
            })
            .collect();
        let est = estimate_cov(&rows).unwrap();
        assert!(est.cov[0][1].abs() < 4.0 * est.se[0][1]);
    }

    #[test]
    fn replica_mean_and_cov_match_exact() {
        let spec = EnvSpec::reference();
        let env = Environment::sample_for_span(&spec, Window::new(-300, 300).unwrap(), 12);
        let q = QuenchedFunctionals::compute(&env).unwrap();
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q)).unwrap();
        let n = 100;
        let cut = Cutoff::grid(n, &[(1.0, 0.0), (0.5, 0.5)], q.speed());
        let exact = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default()).unwrap();
        let table = StepTable::new(&env);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|rep| {
                let init = sample_initial(&occ, exact.starts, 21, rep).unwrap();
                let w = simulate_with(&table, &init, &[50, 100], 21, rep).unwrap();
                cut.iter()
                    .map(|c| w.current(c.steps, c.level).unwrap() as f64)
                    .collect()
            })
            .collect();
        for i in 0..2 {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let (m, se) = stats::mean_se(&col).unwrap();
            assert!((m - exact.mean[i]).abs() < 4.0 * se, "mean {i}: {m} +- {se} vs {}", exact.mean[i]);
        }
        let est = estimate_cov(&rows).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let scaled = est.cov[i][j] / 10.0;
                assert!((scaled - exact.cov[i][j]).abs() < 4.0 * est.se[i][j] / 10.0);
            }
        }
    }
}
