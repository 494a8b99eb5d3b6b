//! The four runner commands. Each writes its artifacts under the output
//! directory and returns a manifest describing them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::verify::{CheckOutcome, Verifier};
use crate::env::{persist, theory_params, Environment, QuenchedFunctionals, TheoryOptions, TheoryParams, Window};
use crate::error::{Error, Result};
use crate::kernel::{quenched_current_moments, suggested_span, CurrentMoments, Cutoff, Occupation};
use crate::limit::{self, LimitParams};
use crate::rng::{self, domain};
use crate::sim::{sample_initial, simulate_with, CurrentObservation, StepTable};
use crate::stats::{estimate_cov, Verdict, MIN_REPLICAS};

/// Provenance of one command invocation. Timings are kept here and nowhere else.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub workers: usize,
    pub task_seeds: BTreeMap<String, u64>,
    pub timings_ms: BTreeMap<String, f64>,
    pub artifacts: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct Recorder {
    out: PathBuf,
    manifest: RunManifest,
}

impl Recorder {
    fn new(command: &str, config: &ExperimentConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                config_sha256: config.hash()?,
                code_version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                workers: rayon::current_num_threads(),
                task_seeds: BTreeMap::new(),
                timings_ms: BTreeMap::new(),
                artifacts: Vec::new(),
            },
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.artifacts.push(PathBuf::from(name));
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.manifest
            .timings_ms
            .insert(name.into(), t.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.manifest.artifacts.push(PathBuf::from(MANIFEST_FILE));
        let path = self.out.join(MANIFEST_FILE);
        fs::write(path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(self.manifest)
    }
}

fn environment_seed(config: &ExperimentConfig, e: usize) -> u64 {
    rng::stream_key(config.seed, &[domain::ENVIRONMENT, e as u64])
}

fn max_size(config: &ExperimentConfig) -> u64 {
    config.run.sizes.iter().copied().max().unwrap_or(1)
}

/// Environment `e` of a run, sampled over the span every configured size needs.
pub fn run_environment(config: &ExperimentConfig, e: usize) -> Result<Environment> {
    let speed = config.env.closed_forms().speed;
    let cut = Cutoff::grid(max_size(config), &config.run.grid, speed);
    let span = suggested_span(&config.env, &cut, &config.options)?;
    Ok(Environment::sample_for_span(&config.env, span.expand(1, 1), environment_seed(config, e)))
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub speed: f64,
    pub mean_crossing: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub sigma1_sq_se: f64,
    pub sigma1_sq_closed: f64,
    pub sigma2_sq: f64,
    pub mu: f64,
    pub params: TheoryParams,
}

pub fn cmd_theory(config: &ExperimentConfig, out: &Path) -> Result<(TheoryReport, RunManifest)> {
    let mut rec = Recorder::new("theory", config, out)?;
    let seed = rng::stream_key(config.seed, &[domain::TASK, 0]);
    rec.manifest.task_seeds.insert("theory_sites".into(), seed);
    let params = rec.timed("theory_params", |_| {
        theory_params(
            &config.env,
            config.init,
            TheoryOptions {
                sites: config.run.theory_sites,
                seed,
                batch: (config.run.theory_sites / 1000).max(10),
            },
        )
    })?;
    let cf = config.env.closed_forms();
    let report = TheoryReport {
        speed: params.speed,
        mean_crossing: params.mean_crossing,
        sigma0_sq: params.sigma0_sq,
        sigma1_sq: params.sigma1_sq,
        sigma1_sq_se: params.sigma1_sq_se,
        sigma1_sq_closed: cf.sigma1_sq,
        sigma2_sq: params.sigma2_sq,
        mu: params.mu,
        params: params.clone(),
    };
    rec.write_json("theory.json", &report)?;
    let (lo, hi, count) = config.run.psi_range;
    let xs: Vec<f64> = (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect();
    let w = rec.create("psi.csv")?;
    limit::write_psi_csv(w, &config.run.psi_alphas, &xs)?;
    let p = LimitParams::from(&params);
    let w = rec.create("gamma.csv")?;
    limit::write_gamma_csv(w, &p, &config.run.grid)?;
    Ok((report, rec.finish()?))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvSummary {
    pub environment: usize,
    pub seed: u64,
    pub window: Window,
    pub usable: Window,
    pub sup_abs_h: f64,
    pub z: Vec<(u64, f64)>,
}

pub fn cmd_env(config: &ExperimentConfig, out: &Path) -> Result<(Vec<EnvSummary>, RunManifest)> {
    let mut rec = Recorder::new("env", config, out)?;
    let mut summaries = Vec::new();
    for e in 0..config.run.environments {
        let env = rec.timed(&format!("env_{e}"), |_| run_environment(config, e))?;
        let q = QuenchedFunctionals::compute(&env)?;
        rec.manifest.task_seeds.insert(format!("env_{e}"), env.seed());
        let stem = format!("env_{e}");
        persist::save(&env, &out.join(&stem))?;
        rec.manifest.artifacts.push(PathBuf::from(format!("{stem}.bin")));
        rec.manifest.artifacts.push(PathBuf::from(format!("{stem}.json")));
        let mut w = csv::Writer::from_writer(rec.create(&format!("{stem}_profile.csv"))?);
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["x", "omega", "mean_crossing", "h", "density"]).map_err(csv_err)?;
        let usable = q.usable();
        let mut sup: f64 = 0.0;
        for x in usable.sites() {
            let h = q.h(x)?;
            sup = sup.max(h.abs());
            w.serialize((x, env.omega(x), q.mean_crossing_at(x)?, h, q.density(x)?))
                .map_err(csv_err)?;
        }
        w.flush()?;
        let z = config
            .run
            .sizes
            .iter()
            .map(|&n| Ok((n, q.z(n, 1.0)?)))
            .collect::<Result<_>>()?;
        summaries.push(EnvSummary {
            environment: e,
            seed: env.seed(),
            window: env.window(),
            usable,
            sup_abs_h: sup,
            z,
        });
    }
    rec.write_json("env_summary.json", &summaries)?;
    Ok((summaries, rec.finish()?))
}

/// Exact quenched moments next to the replica estimate, per environment and size.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub environment: usize,
    pub n: u64,
    pub replicas: usize,
    pub exact: CurrentMoments,
    /// Replica covariance of `n^{-1/4} V`, when there are enough replicas.
    pub empirical_cov: Option<Vec<Vec<f64>>>,
    pub empirical_cov_se: Option<Vec<Vec<f64>>>,
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<(Vec<SimulationSummary>, RunManifest)> {
    let mut rec = Recorder::new("simulate", config, out)?;
    let mut summaries = Vec::new();
    for e in 0..config.run.environments {
        let env = run_environment(config, e)?;
        let q = QuenchedFunctionals::compute(&env)?;
        let occ = Occupation::new(config.init, Some(&q))?;
        let table = StepTable::new(&env);
        for &n in &config.run.sizes {
            let task = format!("env_{e}_n{n}");
            let seed = rng::stream_key(config.seed, &[domain::REPLICA, e as u64, n]);
            rec.manifest.task_seeds.insert(task.clone(), seed);
            let summary = rec.timed(&task, |rec| {
                let cut = Cutoff::grid(n, &config.run.grid, q.speed());
                let shifted = Cutoff::shifted_grid(n, &config.run.grid, &q)?;
                let exact = quenched_current_moments(&env, &occ, n, &cut, &config.options)?;
                let mut checkpoints: Vec<u64> = cut.iter().chain(&shifted).map(|c| c.steps).collect();
                checkpoints.sort_unstable();
                checkpoints.dedup();
                let obs: Vec<CurrentObservation> = (0..config.run.replicas as u64)
                    .into_par_iter()
                    .map(|r| {
                        let init = sample_initial(&occ, exact.starts, seed, r)?;
                        let w = simulate_with(&table, &init, &checkpoints, seed, r)?;
                        CurrentObservation::measure(&w, n, &cut, &shifted, &exact.mean, (e as u64, r, seed))
                    })
                    .collect::<Result<_>>()?;
                let mut log = rec.create(&format!("replicas_{task}.jsonl"))?;
                for o in &obs {
                    o.write_jsonl(&mut log)?;
                }
                log.flush()?;
                let (empirical_cov, empirical_cov_se) = if obs.len() >= MIN_REPLICAS {
                    let scale = (n as f64).powf(-0.25);
                    let rows: Vec<Vec<f64>> = obs.iter().map(|o| o.v.iter().map(|v| v * scale).collect()).collect();
                    let est = estimate_cov(&rows)?;
                    (Some(est.cov), Some(est.se))
                } else {
                    (None, None)
                };
                Ok(SimulationSummary {
                    environment: e,
                    n,
                    replicas: obs.len(),
                    exact,
                    empirical_cov,
                    empirical_cov_se,
                })
            })?;
            summaries.push(summary);
        }
    }
    rec.write_json("moments.json", &summaries)?;
    Ok((summaries, rec.finish()?))
}

/// The acceptance report. It holds no timings, so identical configurations
/// produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config_sha256: String,
    pub seed: u64,
    pub verdict: Verdict,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.verdict.passed()).count();
        s.push_str(&format!("overall {}: {} of {} checks failed\n", self.verdict, failed, self.checks.len()));
        s
    }
}

pub const REPORT_JSON: &str = "verify_report.json";
pub const REPORT_TEXT: &str = "verify_report.txt";

pub fn cmd_verify(config: &ExperimentConfig, out: &Path) -> Result<(VerifyReport, RunManifest)> {
    let mut rec = Recorder::new("verify", config, out)?;
    let verifier = Verifier::new(config.verify.resolved_sizes()?, config.seed);
    let mut checks = Vec::new();
    for id in config.verify.resolved_checks() {
        let outcome = rec.timed(&id, |_| verifier.run(&id))?;
        checks.push(outcome);
    }
    let verdict = checks.iter().fold(Verdict::Pass, |v, c| v.and(c.verdict));
    let report = VerifyReport {
        config_sha256: rec.manifest.config_sha256.clone(),
        seed: config.seed,
        verdict,
        checks,
    };
    rec.write_json(REPORT_JSON, &report)?;
    let mut w = rec.create(REPORT_TEXT)?;
    w.write_all(report.table().as_bytes())?;
    w.flush()?;
    Ok((report, rec.finish()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    fn small(spec: EnvSpec) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.env = spec;
        c.run.sizes = vec![50];
        c.run.environments = 1;
        c.run.replicas = 40;
        c.run.theory_sites = 20_000;
        c
    }

    #[test]
    fn theory_constant_environment() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = cmd_theory(&small(EnvSpec::constant(0.75).unwrap()), dir.path()).unwrap();
        assert!((r.speed - 0.5).abs() < 1e-15);
        assert!((r.sigma1_sq - 0.75).abs() < 1e-9);
        assert_eq!(r.sigma2_sq, 0.0);
        for a in &m.artifacts {
            assert!(dir.path().join(a).exists(), "{a:?}");
        }
    }

    #[test]
    fn env_constant_has_zero_corrector() {
        let dir = tempfile::tempdir().unwrap();
        let (s, _) = cmd_env(&small(EnvSpec::constant(0.75).unwrap()), dir.path()).unwrap();
        assert_eq!(s[0].sup_abs_h, 0.0);
        let back = persist::load(&dir.path().join("env_0")).unwrap();
        assert_eq!(back.window(), s[0].window);
    }

    #[test]
    fn simulate_writes_logs() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(EnvSpec::reference());
        let (s, m) = cmd_simulate(&c, dir.path()).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].empirical_cov.is_some());
        let log = fs::read_to_string(dir.path().join("replicas_env_0_n50.jsonl")).unwrap();
        assert_eq!(log.lines().count(), c.run.replicas * c.run.grid.len());
        assert!(m.timings_ms.contains_key("env_0_n50"));
    }
}
