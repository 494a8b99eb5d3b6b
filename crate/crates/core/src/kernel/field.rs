use std::io::Write;

use serde::Serialize;

use crate::env::{Environment, Window};
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real};

/// Values indexed by lattice site over a window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteField<F> {
    window: Window,
    values: Vec<F>,
}

impl<F: Real> SiteField<F> {
    pub fn new(window: Window, values: Vec<F>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a window of {} sites",
                values.len(),
                window.len()
            )));
        }
        Ok(Self { window, values })
    }

    pub fn from_fn(window: Window, f: impl Fn(i64) -> F) -> Self {
        Self {
            window,
            values: window.sites().map(f).collect(),
        }
    }

    pub fn point_mass(x: i64) -> Self {
        Self {
            window: Window { lo: x, hi: x },
            values: vec![F::one()],
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn get(&self, x: i64) -> Option<F> {
        self.window.contains(x).then(|| self.values[self.window.index(x)])
    }

    /// Value at `x`; panics outside the window.
    pub fn at(&self, x: i64) -> F {
        self.get(x)
            .unwrap_or_else(|| panic!("site {x} outside field window [{}, {}]", self.window.lo, self.window.hi))
    }

    pub fn total(&self) -> F {
        self.values.iter().copied().collect::<CompensatedSum<F>>().value()
    }

    /// `sum_x self(x) g(x)` over the common window.
    pub fn pair(&self, g: &SiteField<F>) -> F {
        let mut acc = CompensatedSum::new();
        for x in self.window.sites().filter(|x| g.window.contains(*x)) {
            acc.add(self.at(x) * g.at(x));
        }
        acc.value()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, F)> + '_ {
        self.window.sites().zip(self.values.iter().copied())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["site", "value"]).map_err(err)?;
        for (x, v) in self.iter() {
            w.serialize((x, v.to_f64().unwrap_or(f64::NAN))).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lattice index of the largest integer position `<= c`.
#[inline]
pub fn floor_cut(c: f64) -> i64 {
    c.floor() as i64
}

/// Which side of a cutoff an indicator selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `x <= c`
    Le,
    /// `x > c`
    Gt,
}

/// Exact `steps`-fold forward push-forward of a distribution.
pub fn evolve_pmf<F: Real>(env: &Environment, pmf: &SiteField<F>, steps: u64) -> Result<SiteField<F>> {
    let s = steps as i64;
    env.window().require(&pmf.window.expand(s, s))?;
    let mut lo = pmf.window.lo;
    let mut cur = pmf.values.clone();
    let mut next = Vec::with_capacity(cur.len() + 2 * steps as usize);
    for _ in 0..steps {
        next.clear();
        next.resize(cur.len() + 2, F::zero());
        for (i, &p) in cur.iter().enumerate() {
            if p == F::zero() {
                continue;
            }
            let w = F::lit(env.omega(lo + i as i64));
            // next[i] is site lo + i - 1
            next[i + 2] = next[i + 2] + w * p;
            next[i] = next[i] + (F::one() - w) * p;
        }
        lo -= 1;
        std::mem::swap(&mut cur, &mut next);
    }
    SiteField::new(Window::new(lo, lo + cur.len() as i64 - 1)?, cur)
}

/// One backward application per step, `g'(x) = E_omega[g(X_1) | X_0 = x]`, of a
/// field given on a window; the result shrinks by one site per side per step.
pub fn evolve_backward<F: Real>(env: &Environment, g: &SiteField<F>, steps: u64) -> Result<SiteField<F>> {
    let s = steps as i64;
    if g.window.len() as i64 <= 2 * s {
        return Err(Error::InvalidArgument(format!(
            "{} backward steps consume the whole {}-site field",
            steps,
            g.window.len()
        )));
    }
    env.window().require(&g.window)?;
    let mut lo = g.window.lo;
    let mut cur = g.values.clone();
    for _ in 0..steps {
        let next: Vec<F> = (1..cur.len() - 1)
            .map(|i| {
                let w = F::lit(env.omega(lo + i as i64));
                cur[i - 1] + w * (cur[i + 1] - cur[i - 1])
            })
            .collect();
        lo += 1;
        cur = next;
    }
    SiteField::new(Window::new(lo, lo + cur.len() as i64 - 1)?, cur)
}

/// A field that is constant to the left and to the right of an explicitly
/// stored stretch. Entries are stored for `lo ..= lo + len - 1`; sites below
/// carry `left`, sites above carry `right`.
#[derive(Debug, Clone)]
pub(crate) struct PlateauField<F> {
    lo: i64,
    values: Vec<F>,
    left: F,
    right: F,
}

impl<F: Real> PlateauField<F> {
    pub(crate) fn indicator(cutoff: f64, side: Side) -> Self {
        let k = floor_cut(cutoff);
        let (left, right) = match side {
            Side::Le => (F::one(), F::zero()),
            Side::Gt => (F::zero(), F::one()),
        };
        Self {
            lo: k + 1,
            values: Vec::new(),
            left,
            right,
        }
    }

    #[inline]
    pub(crate) fn get(&self, x: i64) -> F {
        if x < self.lo {
            self.left
        } else {
            self.values.get((x - self.lo) as usize).copied().unwrap_or(self.right)
        }
    }

    /// Multiplies by `1{x <= cutoff}`.
    pub(crate) fn mask_le(&mut self, cutoff: f64) {
        let k = floor_cut(cutoff);
        let lo = self.lo.min(k + 1);
        self.values = (lo..=k).map(|x| self.get(x)).collect();
        self.lo = lo;
        self.right = F::zero();
        self.trim();
    }

    fn trim(&mut self) {
        let lead = self.values.iter().take_while(|v| **v == self.left).count();
        if lead > 0 {
            self.values.drain(..lead);
            self.lo += lead as i64;
        }
        while self.values.last() == Some(&self.right) {
            self.values.pop();
        }
    }

    /// One backward step, evaluating only sites inside `keep`; sites outside it
    /// cannot influence the final read and are left as plateau values.
    pub(crate) fn step(&mut self, env: &Environment, keep: Window, flush: F, scratch: &mut Vec<F>) {
        let lo = (self.lo - 1).max(keep.lo);
        let hi = (self.lo + self.values.len() as i64).min(keep.hi);
        if lo > hi {
            return;
        }
        scratch.clear();
        let omega = &env.omega_slice()[env.window().index(lo)..=env.window().index(hi)];
        scratch.extend(omega.iter().zip(lo..=hi).map(|(&w, x)| {
            let a = self.get(x - 1);
            let b = self.get(x + 1);
            let v = a + F::lit(w) * (b - a);
            if v.abs() < flush {
                F::zero()
            } else {
                v
            }
        }));
        // Sites outside `keep` may now be stale; they are never read again.
        self.lo = lo;
        std::mem::swap(&mut self.values, scratch);
        self.trim();
    }

}

/// Values `|v| < flush` are set to zero so the right plateau stays exact.
pub(crate) fn flush_threshold<F: Real>() -> F {
    F::min_positive_value() * F::lit(1e8)
}

/// Runs `steps` backward steps so that the result is exact on `target`.
pub(crate) fn backward_to<F: Real>(env: &Environment, field: &mut PlateauField<F>, steps: u64, target: Window) {
    let flush = flush_threshold::<F>();
    let mut scratch = Vec::new();
    for done in 1..=steps {
        let remaining = (steps - done) as i64;
        field.step(env, target.expand(remaining, remaining), flush, &mut scratch);
    }
}

fn check_cone(env: &Environment, starts: Window, steps: u64) -> Result<()> {
    let s = steps as i64;
    env.window().require(&starts.expand(s, s))
}

fn read<F: Real>(field: &PlateauField<F>, starts: Window) -> SiteField<F> {
    SiteField::from_fn(starts, |m| field.get(m))
}

/// `m -> P_omega(X^m_N <= cutoff)` (or `> cutoff`) for every start `m` in `starts`.
pub fn tail_field_side<F: Real>(env: &Environment, steps: u64, cutoff: f64, side: Side, starts: Window) -> Result<SiteField<F>> {
    check_cone(env, starts, steps)?;
    let mut field = PlateauField::indicator(cutoff, side);
    backward_to(env, &mut field, steps, starts);
    Ok(read(&field, starts))
}

/// `m -> P_omega(X^m_N <= cutoff)` for every start `m` in `starts`.
pub fn tail_field<F: Real>(env: &Environment, steps: u64, cutoff: f64, starts: Window) -> Result<SiteField<F>> {
    tail_field_side(env, steps, cutoff, Side::Le, starts)
}

/// `m -> P_omega(X^m_{N1} <= c1, X^m_{N2} side c2)` for `N1 <= N2`.
pub fn joint_tail_field<F: Real>(
    env: &Environment,
    n1: u64,
    c1: f64,
    n2: u64,
    c2: f64,
    side: Side,
    starts: Window,
) -> Result<SiteField<F>> {
    if n1 > n2 {
        return Err(Error::InvalidArgument(format!("joint tail needs N1 <= N2, got {n1} > {n2}")));
    }
    check_cone(env, starts, n2)?;
    if n1 == n2 {
        return match side {
            Side::Le => tail_field(env, n1, c1.min(c2), starts),
            Side::Gt => {
                if floor_cut(c2) >= floor_cut(c1) {
                    Ok(SiteField::from_fn(starts, |_| F::zero()))
                } else {
                    // P(c2 < X <= c1) = P(X <= c1) - P(X <= c2)
                    let a = tail_field::<F>(env, n1, c1, starts)?;
                    let b = tail_field::<F>(env, n1, c2, starts)?;
                    Ok(SiteField::from_fn(starts, |m| a.at(m) - b.at(m)))
                }
            }
        };
    }
    let mut field = PlateauField::indicator(c2, side);
    let n1i = n1 as i64;
    backward_to(env, &mut field, n2 - n1, starts.expand(n1i, n1i));
    field.mask_le(c1);
    backward_to(env, &mut field, n1, starts);
    Ok(read(&field, starts))
}
