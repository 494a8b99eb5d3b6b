use serde::{Deserialize, Serialize};

use super::environment::{Environment, Window};
use super::functionals::QuenchedFunctionals;
use super::law::EnvSpec;
use crate::error::{Error, Result};
use crate::stats::batch_mean;

/// How initial occupation numbers are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum InitMode {
    /// `eta_0(x) = k` at every site.
    Deterministic { k: u32 },
    /// i.i.d. Poisson(mu), independent of the environment.
    AnnealedPoisson { mu: f64 },
    /// Given omega, independent Poisson(mu f(theta^x omega)): stationary for the walks.
    QuenchedPoisson { mu: f64 },
}

impl InitMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitMode::AnnealedPoisson { mu } | InitMode::QuenchedPoisson { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                Err(Error::InvalidArgument(format!("negative or non-finite density {mu}")))
            }
            _ => Ok(()),
        }
    }

    /// Quenched mean occupation at a site with density multiplier `f`.
    #[inline]
    pub fn site_mean(&self, f: f64) -> f64 {
        match *self {
            InitMode::Deterministic { k } => k as f64,
            InitMode::AnnealedPoisson { mu } => mu,
            InitMode::QuenchedPoisson { mu } => mu * f,
        }
    }

    /// Quenched variance of the occupation at a site with density multiplier `f`.
    #[inline]
    pub fn site_var(&self, f: f64) -> f64 {
        match *self {
            InitMode::Deterministic { .. } => 0.0,
            InitMode::AnnealedPoisson { mu } => mu,
            InitMode::QuenchedPoisson { mu } => mu * f,
        }
    }

    pub fn needs_density(&self) -> bool {
        matches!(self, InitMode::QuenchedPoisson { .. })
    }
}

/// Limit parameters of the model for a given law and initial mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryParams {
    pub speed: f64,
    pub mean_crossing: f64,
    /// Mean density `E_P E_omega eta_0(0)`.
    pub mu: f64,
    /// `E_P Var_omega eta_0(0)`.
    pub sigma0_sq: f64,
    /// `v^3 E_P Var_omega T_1`, site-averaged over a sampled environment.
    pub sigma1_sq: f64,
    pub sigma1_sq_se: f64,
    /// `v^2 Var(E_omega T_1)`, closed form.
    pub sigma2_sq: f64,
    /// Site average of the density multiplier `f`.
    pub mean_density: f64,
    pub mean_density_se: f64,
    pub sites: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TheoryOptions {
    pub sites: usize,
    pub seed: u64,
    pub batch: usize,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            sites: 1_000_000,
            seed: 0x7e0,
            batch: 1000,
        }
    }
}

pub fn theory_params(spec: &EnvSpec, init: InitMode, opts: TheoryOptions) -> Result<TheoryParams> {
    init.validate()?;
    if opts.sites < 2 * opts.batch {
        return Err(Error::InsufficientSamples {
            need: 2 * opts.batch,
            got: opts.sites,
        });
    }
    let cf = spec.closed_forms();
    let half = (opts.sites / 2) as i64;
    let span = Window::new(-half, opts.sites as i64 - half - 1)?;
    let env = Environment::sample_for_span(spec, span, opts.seed);
    let q = QuenchedFunctionals::compute(&env)?;
    let vars: Vec<f64> = span.sites().map(|x| q.crossing_var_at(x)).collect::<Result<_>>()?;
    let dens: Vec<f64> = span.sites().map(|x| q.density(x)).collect::<Result<_>>()?;
    let (mean_var, se_var) = batch_mean(&vars, opts.batch)?;
    let (mean_f, se_f) = batch_mean(&dens, opts.batch)?;
    let v3 = cf.speed.powi(3);
    let (mu, sigma0_sq) = match init {
        InitMode::Deterministic { k } => (k as f64, 0.0),
        InitMode::AnnealedPoisson { mu } => (mu, mu),
        InitMode::QuenchedPoisson { mu } => (mu * mean_f, mu * mean_f),
    };
    Ok(TheoryParams {
        speed: cf.speed,
        mean_crossing: cf.mean_crossing,
        mu,
        sigma0_sq,
        sigma1_sq: v3 * mean_var,
        sigma1_sq_se: v3 * se_var,
        sigma2_sq: if spec.is_degenerate() { 0.0 } else { cf.sigma2_sq },
        mean_density: mean_f,
        mean_density_se: se_f,
        sites: opts.sites,
    })
}
