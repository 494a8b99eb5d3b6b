//! The acceptance suite: one named check per criterion, each a pure function
//! of its sizes and a seed.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{theory_params, EnvSpec, Environment, InitMode, QuenchedFunctionals, TheoryOptions, TheoryParams, Window};
use crate::error::{Error, Result};
use crate::kernel::oracle::{dyadic_env, enumerated_joint_tail, enumerated_tail};
use crate::kernel::{
    joint_tail_field, quenched_current_moments, quenched_mean_current, suggested_span, tail_field, CurrentOptions, Cutoff,
    Occupation, Side,
};
use crate::limit::{self, gamma_closed, gamma_integral, gamma_matrix, psi, psi_derivative, LimitParams, Point};
use crate::rng::{self, domain};
use crate::sim::{sample_initial, simulate_with, InitialConfig, StepTable};
use crate::stats::{self, count_gof, estimate_cov, mean_se, scaling_fit, tolerance_check, Verdict};

/// Problem sizes of every check. The defaults are the acceptance sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySizes {
    /// Standard-error multiple of every tolerance check.
    pub k: f64,
    pub gamma_tol: f64,
    pub walk_n: u64,
    pub walk_count: usize,
    pub variance_n: u64,
    pub variance_envs: usize,
    pub variance_walks: usize,
    pub theory_sites: usize,
    pub mean_envs: usize,
    pub mean_sizes: Vec<u64>,
    pub mean_bound: f64,
    pub kumar_n: u64,
    pub kumar_replicas: usize,
    pub quenched_n: u64,
    pub quenched_envs: usize,
    pub quenched_tol: f64,
    pub independence_envs: usize,
    pub stationarity_steps: u64,
    pub stationarity_replicas: usize,
    pub corrector_n: i64,
    pub corrector_envs: usize,
    pub fbm_n: u64,
    pub fbm_envs: usize,
    pub mixture_draws: usize,
    pub kurtosis_n: u64,
    pub kurtosis_envs: usize,
    pub brute_envs: usize,
    pub brute_max_steps: u32,
    pub brute_n: u64,
    pub brute_replicas: usize,
    pub scaling_envs: usize,
    pub scaling_sizes: Vec<i64>,
}

impl Default for VerifySizes {
    fn default() -> Self {
        Self {
            k: stats::DEFAULT_SE_MULTIPLE,
            gamma_tol: 1e-6,
            walk_n: 10_000,
            walk_count: 10_000,
            variance_n: 5000,
            variance_envs: 200,
            variance_walks: 200,
            theory_sites: 1_000_000,
            mean_envs: 20,
            mean_sizes: vec![400, 1600, 6400],
            mean_bound: 0.1,
            kumar_n: 2500,
            kumar_replicas: 2000,
            quenched_n: 10_000,
            quenched_envs: 10,
            quenched_tol: 0.15,
            independence_envs: 500,
            stationarity_steps: 500,
            stationarity_replicas: 10_000,
            corrector_n: 10_000,
            corrector_envs: 1000,
            fbm_n: 6400,
            fbm_envs: 300,
            mixture_draws: 200_000,
            kurtosis_n: 6400,
            kurtosis_envs: 300,
            brute_envs: 25,
            brute_max_steps: 12,
            brute_n: 100,
            brute_replicas: 20_000,
            scaling_envs: 200,
            scaling_sizes: vec![100, 1000, 10_000],
        }
    }
}

impl VerifySizes {
    /// Small sizes for exercising the pipeline; verdicts are not meaningful.
    pub fn smoke() -> Self {
        Self {
            walk_n: 400,
            walk_count: 200,
            variance_n: 200,
            variance_envs: 30,
            variance_walks: 20,
            theory_sites: 20_000,
            mean_envs: 3,
            mean_sizes: vec![25, 100, 400],
            kumar_n: 100,
            kumar_replicas: 60,
            quenched_n: 400,
            quenched_envs: 2,
            independence_envs: 40,
            stationarity_steps: 40,
            stationarity_replicas: 200,
            corrector_n: 400,
            corrector_envs: 40,
            fbm_n: 200,
            fbm_envs: 30,
            mixture_draws: limit::MIN_MIXTURE_DRAWS,
            kurtosis_n: 200,
            kurtosis_envs: 30,
            brute_envs: 3,
            brute_max_steps: 8,
            brute_n: 25,
            brute_replicas: 60,
            scaling_envs: 10,
            scaling_sizes: vec![10, 100, 1000],
            ..Self::default()
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: String,
    pub title: String,
    pub verdict: Verdict,
    pub summary: String,
    pub metrics: BTreeMap<String, f64>,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<6} {}  {}: {}", self.id, self.verdict, self.title, self.summary)
    }
}

/// Context shared by all checks.
#[derive(Debug, Clone)]
pub struct Verifier {
    pub sizes: VerifySizes,
    pub seed: u64,
    pub spec: EnvSpec,
}

pub const CHECK_IDS: [&str; 14] = [
    "AC-1", "AC-2", "AC-3", "AC-4", "AC-5", "AC-6", "AC-7", "AC-8", "AC-9", "AC-10", "AC-11", "AC-12", "AC-13", "AC-14",
];

fn check_index(id: &str) -> Result<usize> {
    CHECK_IDS
        .iter()
        .position(|c| *c == id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown acceptance check {id}")))
}

struct Builder {
    metrics: BTreeMap<String, f64>,
    verdict: Verdict,
    notes: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Self {
            metrics: BTreeMap::new(),
            verdict: Verdict::Pass,
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn require(&mut self, ok: bool) {
        self.verdict = self.verdict.and(Verdict::from_bool(ok));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn finish(self, id: &str, title: &str) -> CheckOutcome {
        CheckOutcome {
            id: id.into(),
            title: title.into(),
            verdict: self.verdict,
            summary: self.notes.join("; "),
            metrics: self.metrics,
        }
    }
}

fn fmt_g(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn pairs_upper(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect()
}

/// Grid shared by the quenched covariance checks.
const COV_POINTS: [Point; 3] = [(0.5, 0.0), (1.0, 0.0), (1.0, 1.0)];

/// Environment sampled to hold the exact-moment computation of `cutoffs`.
fn env_for(spec: &EnvSpec, cutoffs: &[Cutoff], seed: u64) -> Result<Environment> {
    let span = suggested_span(spec, cutoffs, &CurrentOptions::default())?;
    Ok(Environment::sample_for_span(spec, span.expand(1, 1), seed))
}

impl Verifier {
    pub fn new(sizes: VerifySizes, seed: u64) -> Self {
        Self {
            sizes,
            seed,
            spec: EnvSpec::reference(),
        }
    }

    fn task_seed(&self, id: &str, tags: &[u64]) -> u64 {
        let mut t = vec![domain::TASK, check_index(id).unwrap_or(usize::MAX) as u64];
        t.extend_from_slice(tags);
        rng::stream_key(self.seed, &t)
    }

    fn theory(&self, spec: &EnvSpec, init: InitMode, id: &str) -> Result<TheoryParams> {
        theory_params(
            spec,
            init,
            TheoryOptions {
                sites: self.sizes.theory_sites,
                seed: self.task_seed(id, &[u64::MAX]),
                batch: (self.sizes.theory_sites / 1000).max(10),
            },
        )
    }

    pub fn run(&self, id: &str) -> Result<CheckOutcome> {
        match id {
            "AC-1" => self.gamma_representations(),
            "AC-2" => self.psi_identities(),
            "AC-3" => self.classical_walk(),
            "AC-4" => self.averaged_variance(),
            "AC-5" => self.quenched_mean(),
            "AC-6" => self.kumar_covariance(),
            "AC-7" => self.quenched_covariance(),
            "AC-8" => self.shifted_independence(),
            "AC-9" => self.stationarity(),
            "AC-10" => self.corrector_variance(),
            "AC-11" => self.fbm_covariance(),
            "AC-12" => self.non_gaussianity(),
            "AC-13" => self.brute_force(),
            "AC-14" => self.corrector_scaling(),
            other => Err(Error::InvalidArgument(format!("unknown acceptance check {other}"))),
        }
    }

    fn gamma_representations(&self) -> Result<CheckOutcome> {
        let levels = [0.5, 1.0, 2.0];
        let mut grid = Vec::new();
        for t in [0.25, 0.5, 1.0, 2.0] {
            for r in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                grid.push((t, r));
            }
        }
        let mut params = Vec::new();
        for mu in levels {
            for s0 in levels {
                for s1 in levels {
                    params.push(LimitParams::new(mu, s0, s1 * s1, 0.0)?);
                }
            }
        }
        let tol = self.sizes.gamma_tol;
        let worst = params
            .par_iter()
            .map(|p| {
                let mut worst: f64 = 0.0;
                for (i, a) in grid.iter().enumerate() {
                    for b in &grid[i..] {
                        let d = (gamma_closed(p, *a, *b) - gamma_integral(p, *a, *b, None, tol * 1e-3)?).abs();
                        worst = worst.max(d);
                    }
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let mut b = Builder::new();
        b.metric("max_abs_diff", worst);
        b.require(worst <= tol);
        b.note(format!(
            "max |closed - integral| = {} over {} points x {} parameter sets (tol {})",
            fmt_g(worst),
            grid.len(),
            params.len(),
            fmt_g(tol)
        ));
        Ok(b.finish("AC-1", "Gamma closed form vs integral form"))
    }

    fn psi_identities(&self) -> Result<CheckOutcome> {
        let xs: Vec<f64> = (-60..=60).map(|i| i as f64 * 0.05).collect();
        let mut reflection: f64 = 0.0;
        for a in [1e-4, 0.1, 0.5, 1.0, 2.0, 10.0] {
            for &x in &xs {
                reflection = reflection.max((psi(a, -x) - psi(a, x) - x).abs());
            }
        }
        let degenerate = xs
            .iter()
            .map(|&x| (psi(1e-8, x) - (-x).max(0.0)).abs())
            .fold(0.0, f64::max);
        let h = 1e-4;
        let mut derivative: f64 = 0.0;
        for a in [0.25, 0.5, 1.0, 2.0, 4.0] {
            for &x in &xs {
                let fd = (psi(a, x + h) - psi(a, x - h)) / (2.0 * h);
                derivative = derivative.max((fd - psi_derivative(a, x)).abs());
            }
        }
        let mut b = Builder::new();
        b.metric("reflection", reflection);
        b.metric("degenerate", degenerate);
        b.metric("derivative", derivative);
        b.require(reflection <= 1e-12 && degenerate <= 1e-3 && derivative <= 1e-6);
        b.note(format!(
            "reflection {} (<=1e-12), |psi_1e-8 - x^-| {} (<=1e-3), derivative {} (<=1e-6)",
            fmt_g(reflection),
            fmt_g(degenerate),
            fmt_g(derivative)
        ));
        Ok(b.finish("AC-2", "Psi identities"))
    }

    fn classical_walk(&self) -> Result<CheckOutcome> {
        let n = self.sizes.walk_n;
        let spec = EnvSpec::constant(0.75)?;
        let half = n as i64 + 1;
        let env = Environment::sample(&spec, Window::new(-half, half)?, 0);
        let table = StepTable::new(&env);
        let seed = self.task_seed("AC-3", &[]);
        let ends: Vec<f64> = (0..self.sizes.walk_count as u64)
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(seed, &[domain::WALK, j]);
                let mut out = [0];
                table.walk(0, &[n], &mut r, &mut out);
                out[0] as f64
            })
            .collect();
        let nf = n as f64;
        let (m, m_se) = mean_se(&ends)?;
        let sq: Vec<f64> = ends.iter().map(|x| (x - 0.5 * nf).powi(2) / nf).collect();
        let (v, v_se) = mean_se(&sq)?;
        let drift = tolerance_check(m, m_se, 0.5 * nf, self.sizes.k);
        let var = tolerance_check(v, v_se, 0.75, self.sizes.k);
        let mut b = Builder::new();
        b.metric("mean", m);
        b.metric("mean_z", drift.z);
        b.metric("var_over_n", v);
        b.metric("var_z", var.z);
        b.require(drift.verdict.passed() && var.verdict.passed());
        b.note(format!(
            "E X_n = {} (target {}, z {}); Var/n = {} (target 0.75, z {})",
            fmt_g(m),
            fmt_g(0.5 * nf),
            fmt_g(drift.z),
            fmt_g(v),
            fmt_g(var.z)
        ));
        Ok(b.finish("AC-3", "constant environment drift and variance"))
    }

    fn averaged_variance(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n = s.variance_n;
        let theory = self.theory(&self.spec, InitMode::Deterministic { k: 1 }, "AC-4")?;
        let seed = self.task_seed("AC-4", &[]);
        let half = n as i64;
        let per_env: Vec<f64> = (0..s.variance_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = Environment::sample(&self.spec, Window::new(-half, half)?, rng::stream_key(seed, &[e]));
                let table = StepTable::new(&env);
                let mut acc = 0.0;
                for j in 0..s.variance_walks as u64 {
                    let mut r = rng::stream(seed, &[domain::WALK, e, j]);
                    let mut out = [0];
                    table.walk(0, &[n], &mut r, &mut out);
                    acc += (out[0] as f64 - n as f64 * theory.speed).powi(2) / n as f64;
                }
                Ok(acc / s.variance_walks as f64)
            })
            .collect::<Result<_>>()?;
        // environments are the independent units
        let (est, se) = mean_se(&per_env)?;
        let target = theory.sigma1_sq + theory.sigma2_sq;
        let se_all = (se * se + theory.sigma1_sq_se.powi(2)).sqrt();
        let c = tolerance_check(est, se_all, target, s.k);
        let mut b = Builder::new();
        b.metric("estimate", est);
        b.metric("se", se_all);
        b.metric("target", target);
        b.metric("z", c.z);
        b.require(c.verdict.passed());
        b.note(format!(
            "E(X_n - n v)^2 / n = {} +- {} vs sigma1^2 + sigma2^2 = {} + {} (z {})",
            fmt_g(est),
            fmt_g(se_all),
            fmt_g(theory.sigma1_sq),
            fmt_g(theory.sigma2_sq),
            fmt_g(c.z)
        ));
        Ok(b.finish("AC-4", "averaged diffusivity"))
    }

    fn quenched_mean(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let init = InitMode::Deterministic { k: 1 };
        let mu = 1.0;
        let mut points = Vec::new();
        for t in [0.25, 0.5, 0.75, 1.0] {
            for r in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                points.push((t, r));
            }
        }
        let n_max = *s.mean_sizes.iter().max().ok_or_else(|| Error::Config("empty mean_sizes".into()))?;
        let seed = self.task_seed("AC-5", &[]);
        let speed = self.spec.closed_forms().speed;
        let sups: Vec<Vec<f64>> = (0..s.mean_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = env_for(&self.spec, &Cutoff::grid(n_max, &points, speed), rng::stream_key(seed, &[e]))?;
                let q = QuenchedFunctionals::compute(&env)?;
                let occ = Occupation::new(init, None)?;
                s.mean_sizes
                    .iter()
                    .map(|&n| {
                        let cut = Cutoff::grid(n, &points, q.speed());
                        let m = quenched_mean_current(&env, &occ, n, &cut, &CurrentOptions::default())?;
                        let rn = (n as f64).sqrt();
                        let mut sup: f64 = 0.0;
                        for (c, y) in cut.iter().zip(&m.mean) {
                            let z = q.z(n, c.t)?;
                            sup = sup.max((y - mu * c.r * rn - mu * z).abs() / rn);
                        }
                        Ok(sup)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let medians: Vec<f64> = (0..s.mean_sizes.len())
            .map(|i| median(sups.iter().map(|v| v[i]).collect()))
            .collect();
        let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
        let last = *medians.last().unwrap_or(&f64::NAN);
        let mut b = Builder::new();
        for (n, m) in s.mean_sizes.iter().zip(&medians) {
            b.metric(format!("median_sup_n{n}"), *m);
        }
        b.require(decreasing && last <= s.mean_bound);
        b.note(format!(
            "median sup |E Y - mu r sqrt(n) - mu Z| / sqrt(n) over n = {:?}: [{}] (decreasing, last <= {})",
            s.mean_sizes,
            medians.iter().map(|m| fmt_g(*m)).collect::<Vec<_>>().join(", "),
            fmt_g(s.mean_bound)
        ));
        Ok(b.finish("AC-5", "quenched mean of the current"))
    }

    fn kumar_covariance(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n = s.kumar_n;
        let spec = EnvSpec::constant(0.75)?;
        let init = InitMode::AnnealedPoisson { mu: 1.0 };
        let cf = spec.closed_forms();
        let p = LimitParams::new(1.0, 1.0, cf.sigma1_sq, 0.0)?;
        let cut = Cutoff::grid(n, &COV_POINTS, cf.speed);
        let env = Environment::sample(&spec, suggested_span(&spec, &cut, &CurrentOptions::default())?, 0);
        let occ = Occupation::new(init, None)?;
        let exact = quenched_mean_current(&env, &occ, n, &cut, &CurrentOptions::default())?;
        let table = StepTable::new(&env);
        let seed = self.task_seed("AC-6", &[]);
        let checkpoints = checkpoints_of(&cut);
        let scale = (n as f64).powf(-0.25);
        let rows: Vec<Vec<f64>> = (0..s.kumar_replicas as u64)
            .into_par_iter()
            .map(|rep| {
                let init = sample_initial(&occ, exact.starts, seed, rep)?;
                let w = simulate_with(&table, &init, &checkpoints, seed, rep)?;
                cut.iter()
                    .zip(&exact.mean)
                    .map(|(c, m)| Ok((w.current(c.steps, c.level)? as f64 - m) * scale))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let est = estimate_cov(&rows)?;
        let target = gamma_matrix(&p, &COV_POINTS);
        self.cov_outcome("AC-6", "replica covariance, constant environment", &est, &target)
    }

    fn cov_outcome(&self, id: &str, title: &str, est: &stats::CovEstimate, target: &[Vec<f64>]) -> Result<CheckOutcome> {
        let pairs = pairs_upper(target.len());
        let labels: Vec<String> = pairs.iter().map(|(i, j)| format!("{i}{j}")).collect();
        let reports = stats::cov_reports(est, &pairs, &labels, |i, j| target[i][j], self.sizes.k);
        let mut b = Builder::new();
        let mut worst: f64 = 0.0;
        for r in &reports {
            b.metric(format!("cov_{}", r.label), r.check.estimate);
            b.metric(format!("z_{}", r.label), r.check.z);
            b.require(r.check.verdict.passed());
            worst = worst.max(r.check.z.abs());
        }
        b.note(format!(
            "{} entries over {} replicas, max |z| = {} (k {})",
            reports.len(),
            est.replicas,
            fmt_g(worst),
            self.sizes.k
        ));
        Ok(b.finish(id, title))
    }

    /// Quenched-Poisson exact covariance for one environment, plus its
    /// functionals and limit parameters.
    fn quenched_case(&self, n: u64, env_seed: u64, shifted: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let speed = self.spec.closed_forms().speed;
        let env = env_for(&self.spec, &Cutoff::grid(n, &COV_POINTS, speed), env_seed)?;
        let q = QuenchedFunctionals::compute(&env)?;
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q))?;
        let cut = if shifted {
            Cutoff::shifted_grid(n, &COV_POINTS, &q)?
        } else {
            Cutoff::grid(n, &COV_POINTS, q.speed())
        };
        let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default())?;
        let rn = (n as f64).sqrt();
        let z = COV_POINTS.iter().map(|p| Ok(q.z(n, p.0)? / rn)).collect::<Result<_>>()?;
        Ok((m.cov, z))
    }

    fn relative_deviations(exact: &[Vec<f64>], target: &[Vec<f64>]) -> Vec<f64> {
        pairs_upper(exact.len())
            .iter()
            .map(|&(i, j)| ((exact[i][j] - target[i][j]) / target[i][j]).abs())
            .collect()
    }

    fn quenched_params(&self, id: &str) -> Result<LimitParams> {
        let th = self.theory(&self.spec, InitMode::QuenchedPoisson { mu: 1.0 }, id)?;
        LimitParams::new(th.mu, th.sigma0_sq, th.sigma1_sq, th.sigma2_sq)
    }

    fn quenched_covariance(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let p = self.quenched_params("AC-7")?;
        let seed = self.task_seed("AC-7", &[]);
        let devs: Vec<f64> = (0..s.quenched_envs as u64)
            .into_par_iter()
            .map(|e| {
                let (cov, z) = self.quenched_case(s.quenched_n, rng::stream_key(seed, &[e]), false)?;
                let target = limit::conditional_cov_v(&p, &z, &COV_POINTS)?;
                Ok(median(Self::relative_deviations(&cov, &target)))
            })
            .collect::<Result<_>>()?;
        let worst = devs.iter().copied().fold(0.0, f64::max);
        let mut b = Builder::new();
        for (e, d) in devs.iter().enumerate() {
            b.metric(format!("median_rel_dev_env{e}"), *d);
        }
        b.require(worst <= s.quenched_tol);
        b.note(format!(
            "median relative deviation from shifted Gamma per environment: max {} over {} environments (tol {})",
            fmt_g(worst),
            devs.len(),
            fmt_g(s.quenched_tol)
        ));
        Ok(b.finish("AC-7", "exact quenched covariance vs shifted Gamma"))
    }

    fn shifted_independence(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let p = self.quenched_params("AC-8")?;
        let target = gamma_matrix(&p, &COV_POINTS);
        let seed = self.task_seed("AC-8", &[]);
        let devs: Vec<f64> = (0..s.quenched_envs as u64)
            .into_par_iter()
            .map(|e| {
                let (cov, _) = self.quenched_case(s.quenched_n, rng::stream_key(seed, &[e]), true)?;
                Ok(median(Self::relative_deviations(&cov, &target)))
            })
            .collect::<Result<_>>()?;
        let worst = devs.iter().copied().fold(0.0, f64::max);

        let n = s.quenched_n;
        let point = [(1.0, 0.0)];
        let speed = self.spec.closed_forms().speed;
        let scale = (n as f64).powf(-0.25);
        let rn = (n as f64).sqrt();
        let rows: Vec<Vec<f64>> = (0..s.independence_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env_seed = rng::stream_key(seed, &[1, e]);
                let env = env_for(&self.spec, &Cutoff::grid(n, &point, speed), env_seed)?;
                let q = QuenchedFunctionals::compute(&env)?;
                let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q))?;
                let cut = Cutoff::shifted_grid(n, &point, &q)?;
                let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default())?;
                let init = sample_initial(&occ, m.starts, env_seed, 0)?;
                let w = simulate_with(&StepTable::new(&env), &init, &[cut[0].steps], env_seed, 0)?;
                let v = (w.current(cut[0].steps, cut[0].level)? as f64 - m.mean[0]) * scale;
                let z = q.z(n, 1.0)? / rn;
                Ok(vec![v, z, m.cov[0][0], z * z])
            })
            .collect::<Result<_>>()?;
        let est = estimate_cov(&rows)?;
        // informational: the quenched variance of V^q should not track Z either
        let var_corr = est.correlation(2, 3);
        let c = tolerance_check(est.cov[0][1], est.se[0][1], 0.0, s.k);
        let corr = est.correlation(0, 1);
        let mut b = Builder::new();
        b.metric("max_median_rel_dev", worst);
        b.metric("corr_vq_z", corr);
        b.metric("cov_vq_z_z", c.z);
        b.metric("corr_quenched_var_z_sq", var_corr);
        b.require(worst <= s.quenched_tol && c.verdict.passed());
        b.note(format!(
            "shifted covariance vs unshifted Gamma: max median rel dev {} (tol {}); corr(V^q, Z) = {} over {} environments (cov z {}); corr(Var_omega V^q, Z^2) = {}",
            fmt_g(worst),
            fmt_g(s.quenched_tol),
            fmt_g(corr),
            est.replicas,
            fmt_g(c.z),
            fmt_g(var_corr)
        ));
        Ok(b.finish("AC-8", "shifted current independent of Z"))
    }

    fn stationarity(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let steps = s.stationarity_steps;
        let reach = steps as i64;
        let probes: Vec<i64> = (-2..=2).collect();
        let seed = self.task_seed("AC-9", &[]);
        let starts = Window::new(probes[0] - reach, probes[probes.len() - 1] + reach)?;
        let env = Environment::sample_for_span(&self.spec, starts.expand(reach, reach), seed);
        let q = QuenchedFunctionals::compute(&env)?;
        let mu = 1.0;
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu }, Some(&q))?;
        let table = StepTable::new(&env);
        let counts: Vec<Vec<u64>> = (0..s.stationarity_replicas as u64)
            .into_par_iter()
            .map(|rep| {
                let init: InitialConfig = sample_initial(&occ, starts, seed, rep)?;
                let w = simulate_with(&table, &init, &[steps], seed, rep)?;
                let mut c = vec![0u64; probes.len()];
                for &x in &w.pos {
                    if let Some(i) = probes.iter().position(|p| *p == x) {
                        c[i] += 1;
                    }
                }
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let mut b = Builder::new();
        let mut parts = Vec::new();
        for (i, &x) in probes.iter().enumerate() {
            let lambda = mu * q.density(x)?;
            let samples: Vec<u64> = counts.iter().map(|c| c[i]).collect();
            let pois = statrs::distribution::Poisson::new(lambda).map_err(|e| Error::Degenerate(e.to_string()))?;
            let g = count_gof(&samples, |k| statrs::distribution::Discrete::pmf(&pois, k), s.k)?;
            b.metric(format!("p_value_site{x}"), g.p_value);
            b.require(g.verdict.passed());
            parts.push(format!("x={x} lambda {} p {}", fmt_g(lambda), fmt_g(g.p_value)));
        }
        b.note(format!("chi-square vs Poisson(mu f_x) after {steps} steps: {}", parts.join(", ")));
        Ok(b.finish("AC-9", "stationarity of the quenched Poisson measure"))
    }

    fn corrector_variance(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n = s.corrector_n;
        let cf = self.spec.closed_forms();
        let seed = self.task_seed("AC-10", &[]);
        let vals: Vec<f64> = (0..s.corrector_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = Environment::sample_for_span(&self.spec, Window::new(0, n)?, rng::stream_key(seed, &[e]));
                let q = QuenchedFunctionals::compute(&env)?;
                Ok(q.h(n)?.powi(2) / n as f64)
            })
            .collect::<Result<_>>()?;
        let (est, se) = mean_se(&vals)?;
        let target = cf.speed * cf.crossing_mean_var;
        let c = tolerance_check(est, se, target, s.k);
        let mut b = Builder::new();
        b.metric("estimate", est);
        b.metric("target", target);
        b.metric("z", c.z);
        b.require(c.verdict.passed());
        b.note(format!(
            "E h(n)^2 / n = {} +- {} vs v Var(E_omega T_1) = {} (z {})",
            fmt_g(est),
            fmt_g(se),
            fmt_g(target),
            fmt_g(c.z)
        ));
        Ok(b.finish("AC-10", "corrector variance"))
    }

    fn fbm_covariance(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n = s.fbm_n;
        let th = self.theory(&self.spec, InitMode::QuenchedPoisson { mu: 1.0 }, "AC-11")?;
        let p = LimitParams::new(th.mu, th.sigma0_sq, th.sigma1_sq, th.sigma2_sq)?;
        let points = [(1.0, 0.0), (2.0, 0.0)];
        let speed = th.speed;
        let seed = self.task_seed("AC-11", &[]);
        // Rao-Blackwellized: per environment, the exact quenched covariance
        let covs: Vec<Vec<Vec<f64>>> = (0..s.fbm_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = env_for(&self.spec, &Cutoff::grid(n, &points, speed), rng::stream_key(seed, &[e]))?;
                let q = QuenchedFunctionals::compute(&env)?;
                let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q))?;
                let cut = Cutoff::grid(n, &points, q.speed());
                Ok(quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default())?.cov)
            })
            .collect::<Result<_>>()?;
        let mut b = Builder::new();
        let mut parts = Vec::new();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let xs: Vec<f64> = covs.iter().map(|c| c[i][j]).collect();
            let (est, se) = mean_se(&xs)?;
            let (s_, t_) = (points[i].0, points[j].0);
            let target = limit::averaged_cov_fbm(&p, s_, t_)?;
            // propagate the uncertainty of mu_eff and sigma1^2 into the target
            let rel_mu = th.mean_density_se / th.mean_density;
            let rel_s = 0.5 * th.sigma1_sq_se / (th.sigma1_sq + th.sigma2_sq);
            let target_se = target * (rel_mu * rel_mu + rel_s * rel_s).sqrt();
            let c = tolerance_check(est, (se * se + target_se * target_se).sqrt(), target, s.k);
            let label = format!("{s_}_{t_}");
            b.metric(format!("cov_{label}"), est);
            b.metric(format!("target_{label}"), target);
            b.metric(format!("z_{label}"), c.z);
            b.require(c.verdict.passed());
            parts.push(format!("({s_},{t_}) {} vs {} (z {})", fmt_g(est), fmt_g(target), fmt_g(c.z)));
        }
        b.note(format!("E_P Cov_omega over {} environments: {}", covs.len(), parts.join(", ")));
        Ok(b.finish("AC-11", "averaged covariance is fBM(1/4)"))
    }

    fn non_gaussianity(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n = s.kurtosis_n;
        let p = self.quenched_params("AC-12")?;
        let seed = self.task_seed("AC-12", &[]);
        let mix = limit::mixture_moments_v(&p, 1.0, 0.0, s.mixture_draws, seed)?;
        let point = [(1.0, 0.0)];
        let speed = self.spec.closed_forms().speed;
        // quenched Poisson: Y is a difference of independent Poissons, so its
        // quenched cumulants of order 2 and 4 both equal the variance
        let kappa: Vec<f64> = (0..s.kurtosis_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = env_for(&self.spec, &Cutoff::grid(n, &point, speed), rng::stream_key(seed, &[e]))?;
                let q = QuenchedFunctionals::compute(&env)?;
                let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q))?;
                let cut = Cutoff::grid(n, &point, q.speed());
                let m = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default())?;
                Ok(m.cov[0][0] * (n as f64).sqrt())
            })
            .collect::<Result<_>>()?;
        let (k, k_se) = averaged_kurtosis(&kappa)?;
        let mut b = Builder::new();
        b.metric("mixture_kurtosis", mix.conditional_kurtosis);
        b.metric("mixture_kurtosis_se", mix.conditional_kurtosis_se);
        b.metric("mixture_sampled_kurtosis", mix.excess_kurtosis);
        b.metric("finite_n_kurtosis", k);
        b.metric("finite_n_kurtosis_se", k_se);
        b.require(mix.conditional_kurtosis >= s.k * mix.conditional_kurtosis_se && k > 0.0);
        b.note(format!(
            "limit mixture excess kurtosis {} +- {} (sampled {} +- {}); finite-n averaged kurtosis {} +- {} over {} environments",
            fmt_g(mix.conditional_kurtosis),
            fmt_g(mix.conditional_kurtosis_se),
            fmt_g(mix.excess_kurtosis),
            fmt_g(mix.kurtosis_se),
            fmt_g(k),
            fmt_g(k_se),
            kappa.len()
        ));
        Ok(b.finish("AC-12", "averaged law is not Gaussian"))
    }

    fn brute_force(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let seed = self.task_seed("AC-13", &[]);
        let max = s.brute_max_steps;
        let mismatches: usize = (0..s.brute_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = dyadic_env(-40, 40, rng::stream_key(seed, &[e]))?;
                let mut r = rng::stream(seed, &[1, e]);
                let starts = Window::new(-5, 5)?;
                let mut bad = 0;
                for _ in 0..4 {
                    use rand::Rng;
                    let n2: u32 = r.random_range(0..=max);
                    let n1: u32 = r.random_range(0..=n2);
                    let c1 = r.random_range(-10.0..10.0);
                    let c2 = r.random_range(-10.0..10.0);
                    let single = tail_field::<f64>(&env, n2 as u64, c2, starts)?;
                    let joint = joint_tail_field::<f64>(&env, n1 as u64, c1, n2 as u64, c2, Side::Le, starts)?;
                    for m in starts.sites() {
                        bad += (single.at(m) != enumerated_tail(&env, m, n2, c2)?) as usize;
                        bad += (joint.at(m) != enumerated_joint_tail(&env, m, n1, c1, n2, c2)?) as usize;
                    }
                }
                Ok(bad)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();

        let n = s.brute_n;
        let speed = self.spec.closed_forms().speed;
        let env = env_for(&self.spec, &Cutoff::grid(n, &COV_POINTS, speed), seed)?;
        let q = QuenchedFunctionals::compute(&env)?;
        let occ = Occupation::new(InitMode::QuenchedPoisson { mu: 1.0 }, Some(&q))?;
        let cut = Cutoff::grid(n, &COV_POINTS, q.speed());
        let exact = quenched_current_moments(&env, &occ, n, &cut, &CurrentOptions::default())?;
        let table = StepTable::new(&env);
        let checkpoints = checkpoints_of(&cut);
        let scale = (n as f64).powf(-0.25);
        let rows: Vec<Vec<f64>> = (0..s.brute_replicas as u64)
            .into_par_iter()
            .map(|rep| {
                let init = sample_initial(&occ, exact.starts, seed, rep)?;
                let w = simulate_with(&table, &init, &checkpoints, seed, rep)?;
                cut.iter()
                    .zip(&exact.mean)
                    .map(|(c, m)| Ok((w.current(c.steps, c.level)? as f64 - m) * scale))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let est = estimate_cov(&rows)?;
        let mut out = self.cov_outcome("AC-13", "", &est, &exact.cov)?;
        out.metrics.insert("enumeration_mismatches".into(), mismatches as f64);
        if mismatches > 0 {
            out.verdict = Verdict::Fail;
        }
        out.title = "brute-force oracles".into();
        out.summary = format!(
            "{} enumeration mismatches over {} environments (N <= {max}); exact vs replica covariance: {}",
            mismatches, s.brute_envs, out.summary
        );
        Ok(out)
    }

    fn corrector_scaling(&self) -> Result<CheckOutcome> {
        let s = &self.sizes;
        let n_max = *s.scaling_sizes.iter().max().ok_or_else(|| Error::Config("empty scaling_sizes".into()))?;
        let seed = self.task_seed("AC-14", &[]);
        let sups: Vec<Vec<f64>> = (0..s.scaling_envs as u64)
            .into_par_iter()
            .map(|e| {
                let env = Environment::sample_for_span(&self.spec, Window::new(0, n_max)?, rng::stream_key(seed, &[e]));
                let q = QuenchedFunctionals::compute(&env)?;
                s.scaling_sizes.iter().map(|&n| q.sup_abs_h(n)).collect()
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<(f64, f64)> = s
            .scaling_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (n as f64, median(sups.iter().map(|v| v[i]).collect())))
            .collect();
        let fit = scaling_fit(&pairs)?;
        let mut b = Builder::new();
        b.metric("slope", fit.slope);
        b.metric("slope_se", fit.slope_se);
        b.require((fit.slope - 0.5).abs() <= 0.1);
        b.note(format!(
            "log-log slope of median sup|h| = {} (target 0.5 +- 0.1); medians [{}]",
            fmt_g(fit.slope),
            fit.stats.iter().map(|m| fmt_g(*m)).collect::<Vec<_>>().join(", ")
        ));
        Ok(b.finish("AC-14", "corrector growth"))
    }
}

fn checkpoints_of(cut: &[Cutoff]) -> Vec<u64> {
    let mut c: Vec<u64> = cut.iter().map(|c| c.steps).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Excess kurtosis of a centred mixture whose components have second and
/// fourth cumulants both equal to `kappa`, with a jackknife standard error
/// over the components.
pub fn averaged_kurtosis(kappa: &[f64]) -> Result<(f64, f64)> {
    let m = kappa.len();
    if m < stats::MIN_REPLICAS {
        return Err(Error::InsufficientSamples {
            need: stats::MIN_REPLICAS,
            got: m,
        });
    }
    let stat = |s1: f64, s2: f64, k: f64| {
        let e1 = s1 / k;
        let e2 = s2 / k;
        (e1 + 3.0 * e2) / (e1 * e1) - 3.0
    };
    let s1: f64 = kappa.iter().sum();
    let s2: f64 = kappa.iter().map(|x| x * x).sum();
    let mf = m as f64;
    let full = stat(s1, s2, mf);
    let loo: Vec<f64> = kappa.iter().map(|x| stat(s1 - x, s2 - x * x, mf - 1.0)).collect();
    let mean_loo = loo.iter().sum::<f64>() / mf;
    let var = loo.iter().map(|v| (v - mean_loo).powi(2)).sum::<f64>() * (mf - 1.0) / mf;
    Ok((full, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_unique_and_dispatched() {
        let v = Verifier::new(VerifySizes::smoke(), 1);
        for (i, id) in CHECK_IDS.iter().enumerate() {
            assert_eq!(check_index(id).unwrap(), i);
        }
        assert!(v.run("AC-99").is_err());
    }

    #[test]
    fn kurtosis_of_constant_components() {
        // a single Poisson(k): excess kurtosis 1/k
        let (k, se) = averaged_kurtosis(&[4.0; 40]).unwrap();
        assert!((k - 0.25).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sizes_roundtrip_toml() {
        let s = VerifySizes::smoke();
        let text = toml::to_string(&s).unwrap();
        let back: VerifySizes = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
        let partial: VerifySizes = toml::from_str("walk_n = 7").unwrap();
        assert_eq!(partial.walk_n, 7);
        assert_eq!(partial.kumar_n, VerifySizes::default().kumar_n);
        assert!(toml::from_str::<VerifySizes>("bogus = 1").is_err());
    }
}
