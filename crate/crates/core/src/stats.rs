//! Estimators and tolerance checks that turn finite samples into verdicts.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::limit::std_normal_cdf;

/// Default tolerance in standard errors.
pub const DEFAULT_SE_MULTIPLE: f64 = 4.0;
/// Minimum replicas for a covariance estimate.
pub const MIN_REPLICAS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn and(self, other: Verdict) -> Verdict {
        Verdict::from_bool(self.passed() && other.passed())
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

/// A target compared with an estimate at `k` standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToleranceCheck {
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub k: f64,
    pub z: f64,
    pub verdict: Verdict,
}

pub fn tolerance_check(estimate: f64, se: f64, target: f64, k: f64) -> ToleranceCheck {
    let diff = estimate - target;
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY * diff.signum()
    };
    let ok = estimate.is_finite() && se.is_finite() && diff.abs() <= k * se;
    ToleranceCheck {
        estimate,
        se,
        target,
        k,
        z,
        verdict: Verdict::from_bool(ok),
    }
}

pub fn mean_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, (v / n).sqrt()))
}

/// Mean with a batch-means standard error, for autocorrelated sequences.
pub fn batch_mean(xs: &[f64], batch: usize) -> Result<(f64, f64)> {
    if batch == 0 || xs.len() < 2 * batch {
        return Err(Error::InsufficientSamples {
            need: 2 * batch.max(1),
            got: xs.len(),
        });
    }
    let means: Vec<f64> = xs
        .chunks_exact(batch)
        .map(|c| c.iter().sum::<f64>() / batch as f64)
        .collect();
    let (_, se) = mean_se(&means)?;
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    Ok((m, se))
}

/// Sample covariance with jackknife standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovEstimate {
    pub replicas: usize,
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

impl CovEstimate {
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[i][j] / (self.cov[i][i] * self.cov[j][j]).sqrt()
    }
}

/// `rows[r][i]` is variable `i` of replica `r`.
pub fn estimate_cov(rows: &[Vec<f64>]) -> Result<CovEstimate> {
    let n = rows.len();
    if n < MIN_REPLICAS {
        return Err(Error::InsufficientSamples {
            need: MIN_REPLICAS,
            got: n,
        });
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Degenerate("ragged or empty replica matrix".into()));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("non-finite replica value".into()));
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..p)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / nf)
        .collect();
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    let mut se = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let sx: f64 = centered.iter().map(|r| r[i]).sum();
            let sy: f64 = centered.iter().map(|r| r[j]).sum();
            let sxy: f64 = centered.iter().map(|r| r[i] * r[j]).sum();
            let full = (sxy - sx * sy / nf) / (nf - 1.0);
            // leave-one-out estimates from updated power sums
            let m = nf - 1.0;
            let loo: Vec<f64> = centered
                .iter()
                .map(|r| {
                    let (x, y) = (r[i], r[j]);
                    ((sxy - x * y) - (sx - x) * (sy - y) / m) / (m - 1.0)
                })
                .collect();
            let lbar = loo.iter().sum::<f64>() / nf;
            let var = (nf - 1.0) / nf * loo.iter().map(|l| (l - lbar).powi(2)).sum::<f64>();
            cov[i][j] = full;
            cov[j][i] = full;
            se[i][j] = var.sqrt();
            se[j][i] = var.sqrt();
        }
    }
    Ok(CovEstimate {
        replicas: n,
        cov,
        se,
    })
}

/// One estimated covariance entry paired with its theoretical target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovReport {
    pub pair: (usize, usize),
    pub label: String,
    pub check: ToleranceCheck,
}

pub fn cov_reports(
    est: &CovEstimate,
    pairs: &[(usize, usize)],
    labels: &[String],
    target: impl Fn(usize, usize) -> f64,
    k: f64,
) -> Vec<CovReport> {
    pairs
        .iter()
        .zip(labels)
        .map(|(&(i, j), label)| CovReport {
            pair: (i, j),
            label: label.clone(),
            check: tolerance_check(est.cov[i][j], est.se[i][j], target(i, j), k),
        })
        .collect()
}

/// Sample skewness and excess kurtosis with large-sample standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityReport {
    pub n: usize,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
    pub verdict: Verdict,
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m, m2 / n, m3 / n, m4 / n)
}

pub fn moment_normality(xs: &[f64], k: f64) -> Result<NormalityReport> {
    let n = xs.len();
    if n < 100 {
        return Err(Error::InsufficientSamples { need: 100, got: n });
    }
    let (_, m2, m3, m4) = central_moments(xs);
    if m2 <= 0.0 {
        return Err(Error::Degenerate("zero variance sample".into()));
    }
    let nf = n as f64;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let skew_se = (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt();
    let kurt_se = 2.0 * skew_se * ((nf * nf - 1.0) / ((nf - 3.0) * (nf + 5.0))).sqrt();
    Ok(NormalityReport {
        n,
        skewness: skew,
        skewness_se: skew_se,
        excess_kurtosis: kurt,
        kurtosis_se: kurt_se,
        verdict: Verdict::from_bool(skew.abs() <= k * skew_se && kurt.abs() <= k * kurt_se),
    })
}

/// Excess kurtosis `m4 / m2^2 - 3` with a jackknife standard error.
pub fn excess_kurtosis_jackknife(xs: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len();
    if n < MIN_REPLICAS {
        return Err(Error::InsufficientSamples {
            need: MIN_REPLICAS,
            got: n,
        });
    }
    let (m, _, _, _) = central_moments(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let s: [f64; 5] = std::array::from_fn(|p| d.iter().map(|x| x.powi(p as i32)).sum());
    let kurt_from = |s: &[f64; 5]| {
        let n = s[0];
        let mu = s[1] / n;
        let c2 = s[2] / n - mu * mu;
        let c4 = s[4] / n - 4.0 * mu * s[3] / n + 6.0 * mu * mu * s[2] / n - 3.0 * mu.powi(4);
        c4 / (c2 * c2) - 3.0
    };
    let full = kurt_from(&s);
    let loo: Vec<f64> = d
        .iter()
        .map(|x| {
            let t: [f64; 5] = std::array::from_fn(|p| s[p] - x.powi(p as i32));
            kurt_from(&t)
        })
        .collect();
    let nf = n as f64;
    let lbar = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|l| (l - lbar).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}

/// Ordinary least squares fit of `log(stat)` against `log(size)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub sizes: Vec<f64>,
    pub stats: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
}

pub fn scaling_fit(pairs: &[(f64, f64)]) -> Result<ScalingFit> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientSamples {
            need: 3,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(n, s)| !(*n > 0.0 && *s > 0.0)) {
        return Err(Error::Degenerate("scaling fit needs positive sizes and statistics".into()));
    }
    let xs: Vec<f64> = pairs.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, s)| s.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all sizes equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(ScalingFit {
        sizes: pairs.iter().map(|p| p.0).collect(),
        stats: pairs.iter().map(|p| p.1).collect(),
        slope,
        slope_se: (rss / (k - 2.0) / sxx).sqrt(),
        intercept,
    })
}

/// Pearson chi-square goodness of fit of integer counts against a pmf.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub samples: usize,
    pub bins: usize,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Upper-tail p-value equivalent to `k` standard errors of a normal.
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Bins with expected count below 5 are pooled into the adjacent tail bins.
pub fn count_gof(samples: &[u64], pmf: impl Fn(u64) -> f64, k: f64) -> Result<GofReport> {
    let n = samples.len();
    if n < 50 {
        return Err(Error::InsufficientSamples { need: 50, got: n });
    }
    let max = *samples.iter().max().expect("nonempty");
    let mut observed = vec![0u64; max as usize + 1];
    for &s in samples {
        observed[s as usize] += 1;
    }
    let nf = n as f64;
    // Values 0..=max; the last bin absorbs the upper tail mass.
    let mut expected: Vec<f64> = (0..=max).map(|v| nf * pmf(v)).collect();
    let head: f64 = expected.iter().sum();
    *expected.last_mut().expect("nonempty") += (nf - head).max(0.0);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += *o as f64;
        e_acc += e;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => bins.push((o_acc, e_acc)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::Degenerate("fewer than two usable bins".into()));
    }
    let chi: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p_value = 1.0 - dist.cdf(chi);
    let threshold = 2.0 * (1.0 - std_normal_cdf(k));
    Ok(GofReport {
        samples: n,
        bins: bins.len(),
        chi_square: chi,
        dof,
        p_value,
        threshold,
        verdict: Verdict::from_bool(p_value >= threshold),
    })
}
