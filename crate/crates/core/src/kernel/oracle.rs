//! Exhaustive path enumeration, for checking the propagators on tiny inputs.

use crate::env::{EnvKind, EnvSpec, Environment, Window};
use crate::error::{Error, Result};

/// Longest horizon accepted by [`enumerate_paths`].
pub const MAX_ENUMERATION_STEPS: u32 = 20;

/// Law whose atoms are multiples of 1/8: every path probability and every
/// partial sum over at most 12 steps is exact in `f64`.
pub fn dyadic_spec() -> EnvSpec {
    EnvSpec::new(
        EnvKind::FiniteDiscrete {
            atoms: vec![0.375, 0.5, 0.625, 0.75, 0.875],
            weights: vec![0.2; 5],
        },
        Some(0.125),
    )
    .expect("valid dyadic law")
}

pub fn dyadic_env(lo: i64, hi: i64, seed: u64) -> Result<Environment> {
    Ok(Environment::sample(&dyadic_spec(), Window::new(lo, hi)?, seed))
}

/// `(X_{n1}, X_{n2}, probability)` for each of the `2^{n2}` paths from `m`.
pub fn enumerate_paths(env: &Environment, m: i64, n1: u32, n2: u32) -> Result<Vec<(i64, i64, f64)>> {
    if n1 > n2 || n2 > MAX_ENUMERATION_STEPS {
        return Err(Error::InvalidArgument(format!("enumeration needs n1 <= n2 <= {MAX_ENUMERATION_STEPS}")));
    }
    env.window().require(&Window::new(m - n2 as i64, m + n2 as i64)?)?;
    let mut out = Vec::with_capacity(1 << n2);
    for path in 0u32..(1 << n2) {
        let (mut x, mut p, mut x1) = (m, 1.0, m);
        for k in 0..n2 {
            if k == n1 {
                x1 = x;
            }
            let w = env.omega(x);
            if path >> k & 1 == 1 {
                p *= w;
                x += 1;
            } else {
                p *= 1.0 - w;
                x -= 1;
            }
        }
        if n1 == n2 {
            x1 = x;
        }
        out.push((x1, x, p));
    }
    Ok(out)
}

/// `P_omega(X^m_{n1} <= c1, X^m_{n2} <= c2)` by enumeration; `n1 = n2` with
/// `c1 = +inf` gives the single tail.
pub fn enumerated_joint_tail(env: &Environment, m: i64, n1: u32, c1: f64, n2: u32, c2: f64) -> Result<f64> {
    Ok(enumerate_paths(env, m, n1, n2)?
        .iter()
        .filter(|(a, b, _)| *a as f64 <= c1 && *b as f64 <= c2)
        .map(|p| p.2)
        .sum())
}

pub fn enumerated_tail(env: &Environment, m: i64, n: u32, c: f64) -> Result<f64> {
    enumerated_joint_tail(env, m, n, f64::INFINITY, n, c)
}
