//! Fixed points of the fluid limit and the performance measures they imply.
//!
//! For `μ2 < λ < μ1` the *queueing* fixed point puts a type-II job at every
//! server and has `q̄_i1 = r^((d^i - 1)/(d - 1))` with `r = (λ-μ2)/(μ1-μ2)`.
//! When the primary selection is large enough (`d >= d1*`) two more fixed
//! points exist with no queues at all; they are the roots in `(0,1)` of
//! `f(x) = a x^d - x + λ/μ1`, `a = λ(1/μ2 - 1/μ1)`, with `x = 1 - q00` the
//! busy fraction.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::FluidState;

/// Bisection tolerance on the busy fraction.
pub const ROOT_TOL: f64 = 1e-12;
/// Series are cut once a term falls below this.
pub const SERIES_TOL: f64 = 1e-16;
/// `|α+|` below which the stability verdict is withheld.
pub const EIGEN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("parameters outside the domain: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl Rates {
    pub fn new(lambda: f64, mu1: f64, mu2: f64) -> Result<Self, FixedPointError> {
        let ok = [lambda, mu1, mu2].iter().all(|x| x.is_finite()) && lambda >= 0.0 && mu1 > mu2 && mu2 > 0.0;
        if !ok {
            return Err(FixedPointError::Domain(format!(
                "need lambda >= 0 and mu1 > mu2 > 0, got lambda={lambda} mu1={mu1} mu2={mu2}"
            )));
        }
        Ok(Self { lambda, mu1, mu2 })
    }

    /// `a = λ(1/μ2 - 1/μ1)`.
    pub fn a(&self) -> f64 {
        self.lambda * (1.0 / self.mu2 - 1.0 / self.mu1)
    }

    /// `r = (λ-μ2)/(μ1-μ2)`.
    pub fn r(&self) -> f64 {
        (self.lambda - self.mu2) / (self.mu1 - self.mu2)
    }

    fn require_queueing_regime(&self) -> Result<(), FixedPointError> {
        if self.mu2 < self.lambda && self.lambda < self.mu1 {
            Ok(())
        } else {
            Err(FixedPointError::Domain(format!(
                "need mu2 < lambda < mu1, got lambda={} mu1={} mu2={}",
                self.lambda, self.mu1, self.mu2
            )))
        }
    }
}

/// `(d^i - 1)/(d - 1)`, or `i` for `d = 1`.
fn level_exponent(d: u32, i: usize) -> f64 {
    if d == 1 {
        i as f64
    } else {
        (f64::from(d).powi(i as i32) - 1.0) / f64::from(d - 1)
    }
}

/// Cumulative fractions `q̄*_i1` for `i = 0..=i_max`; `q̄*_i0 = 0` for
/// `i >= 1` and `q̄*_00 = 0`.
pub fn queueing_fixed_point(d1: u32, rates: Rates, i_max: usize) -> Result<Vec<f64>, FixedPointError> {
    rates.require_queueing_regime()?;
    if d1 == 0 {
        return Err(FixedPointError::Domain("d1 must be at least 1".into()));
    }
    let r = rates.r();
    Ok((0..=i_max).map(|i| r.powf(level_exponent(d1, i))).collect())
}

/// The queueing fixed point as a fluid state.
pub fn queueing_state(d1: u32, rates: Rates, i_max: usize) -> Result<FluidState, FixedPointError> {
    let col = queueing_fixed_point(d1, rates, i_max)?;
    Ok(FluidState { qbar: col.into_iter().map(|v| [0.0, v]).collect() })
}

/// Smallest `d >= 2` with `d a > 1` and `(1 - 1/d) μ1/λ > (d a)^(1/(d-1))`.
pub fn d1_star(rates: Rates) -> Result<u32, FixedPointError> {
    rates.require_queueing_regime()?;
    let a = rates.a();
    (2u32..=1_000_000)
        .find(|&d| {
            let da = f64::from(d) * a;
            da > 1.0 && (1.0 - 1.0 / f64::from(d)) * rates.mu1 / rates.lambda > da.powf(1.0 / f64::from(d - 1))
        })
        .ok_or_else(|| FixedPointError::Domain("no admissible d1 below 10^6".into()))
}

/// Minimiser `x̃ = (1/(d a))^(1/(d-1))` of `f` for `d >= 2`.
pub fn x_tilde(d1: u32, rates: Rates) -> Option<f64> {
    (d1 >= 2 && rates.a() > 0.0).then(|| (1.0 / (f64::from(d1) * rates.a())).powf(1.0 / f64::from(d1 - 1)))
}

fn poly(d1: u32, rates: Rates, x: f64) -> f64 {
    rates.a() * x.powi(d1 as i32) - x + rates.lambda / rates.mu1
}

fn bisect(d1: u32, rates: Rates, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo_pos = poly(d1, rates, lo) > 0.0;
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if (poly(d1, rates, mid) > 0.0) == f_lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Inconclusive,
}

/// A fixed point with `q00 + q01 + q10 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoQueueingPoint {
    /// Busy fraction `1 - q00`.
    pub x: f64,
    pub q00: f64,
    pub q01: f64,
    pub q10: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub stability: Stability,
    /// Double root where `f` touches zero at `x̃`.
    pub degenerate: bool,
}

impl NoQueueingPoint {
    fn from_root(d1: u32, rates: Rates, x: f64, degenerate: bool) -> Self {
        let xd = x.powi(d1 as i32);
        let q00 = 1.0 - x;
        let (alpha_minus, alpha_plus, stability) = local_stability(q00, d1, rates);
        Self {
            x,
            q00,
            q01: rates.lambda / rates.mu2 * xd,
            q10: rates.lambda / rates.mu1 * (1.0 - xd),
            alpha_minus,
            alpha_plus,
            stability,
            degenerate,
        }
    }

    /// Embeds the point as a fluid state with `i_max` levels.
    pub fn to_state(&self, i_max: usize) -> FluidState {
        let mut qbar = vec![[0.0; 2]; i_max.max(1) + 1];
        qbar[0] = [self.q00 + self.q10, self.q01];
        qbar[1][0] = self.q10;
        FluidState { qbar }
    }
}

/// Roots of `f` in `(0, 1)` converted into fixed points, ordered by
/// increasing busy fraction.
pub fn no_queueing_fixed_points(d1: u32, rates: Rates) -> Result<Vec<NoQueueingPoint>, FixedPointError> {
    if d1 == 0 {
        return Err(FixedPointError::Domain("d1 must be at least 1".into()));
    }
    let f0 = poly(d1, rates, 0.0);
    let f1 = poly(d1, rates, 1.0);
    if d1 == 1 {
        // linear: f(x) = (a - 1) x + λ/μ1
        if f1 < 0.0 {
            let x = f0 / (1.0 - rates.a());
            return Ok(vec![NoQueueingPoint::from_root(1, rates, x, false)]);
        }
        return Ok(Vec::new());
    }
    if f1 < 0.0 {
        // one sign change on (0, 1) for λ < μ2
        let hi = x_tilde(d1, rates).map_or(1.0, |xt| xt.min(1.0));
        return Ok(vec![NoQueueingPoint::from_root(d1, rates, bisect(d1, rates, 0.0, hi), false)]);
    }
    let Some(xt) = x_tilde(d1, rates) else { return Ok(Vec::new()) };
    if xt >= 1.0 {
        return Ok(Vec::new());
    }
    let fm = poly(d1, rates, xt);
    if fm.abs() < 1e-15 {
        Ok(vec![NoQueueingPoint::from_root(d1, rates, xt, true)])
    } else if fm > 0.0 {
        Ok(Vec::new())
    } else {
        Ok(vec![
            NoQueueingPoint::from_root(d1, rates, bisect(d1, rates, 0.0, xt), false),
            NoQueueingPoint::from_root(d1, rates, bisect(d1, rates, xt, 1.0), false),
        ])
    }
}

/// Eigenvalues `α± = ½[-(μ1+μ2) ± √((μ1-μ2)² + 4λd(μ1-μ2)(1-q00)^(d-1))]`
/// of the linearisation around a no-queueing fixed point.
pub fn local_stability(q00: f64, d1: u32, rates: Rates) -> (f64, f64, Stability) {
    let (mu1, mu2) = (rates.mu1, rates.mu2);
    let disc = (mu1 - mu2).powi(2)
        + 4.0 * rates.lambda * f64::from(d1) * (mu1 - mu2) * (1.0 - q00).powi(d1 as i32 - 1);
    let root = disc.sqrt();
    let (minus, plus) = (0.5 * (-(mu1 + mu2) - root), 0.5 * (-(mu1 + mu2) + root));
    let verdict = if plus.abs() < EIGEN_TOL {
        Stability::Inconclusive
    } else if plus < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    };
    (minus, plus, verdict)
}

fn series(term: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for i in 1.. {
        let t = term(i);
        sum += t;
        if t < SERIES_TOL || i > 100_000 {
            break;
        }
    }
    sum
}

/// Stationary performance measures at the queueing fixed point, with the
/// JSQ(d1) and random-assignment benchmarks at load `λ/μ1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub lambda: f64,
    pub lambda_tilde: f64,
    /// Fraction of arrivals that take an idle server as type II.
    pub switch_fraction: f64,
    pub eq_cm: f64,
    pub eq_jsq: f64,
    pub eq_ra: f64,
    pub eq_i: f64,
    pub eq_ii: f64,
    pub ew: f64,
    pub ew_i: f64,
    pub ew_ii: f64,
    pub ew_jsq: f64,
    pub ew_ra: f64,
    pub var_cm: f64,
    pub var_jsq: f64,
    pub var_ra: f64,
}

pub fn metrics(d1: u32, rates: Rates) -> Result<Metrics, FixedPointError> {
    rates.require_queueing_regime()?;
    if d1 == 0 {
        return Err(FixedPointError::Domain("d1 must be at least 1".into()));
    }
    let Rates { lambda, mu1, mu2 } = rates;
    let r = rates.r();
    let rho = lambda / mu1;
    let q01 = (mu1 - lambda) / (mu1 - mu2);
    let lambda_tilde = lambda - mu2 * q01;

    // q̄_i1 at the fixed point and q̄_i under JSQ(d1)
    let cm = |i: usize| r.powf(level_exponent(d1, i));
    let jsq = |i: usize| rho.powf(level_exponent(d1, i));
    let eq_cm = series(cm);
    let eq_jsq = series(|i| jsq(i + 1));
    let eq_ra = rho * rho / (1.0 - rho);
    let eq_i = series(|i| cm(i + 1));
    let eq_ii = r;

    let second_cm = series(|i| (2 * i - 1) as f64 * cm(i));
    let second_jsq = series(|i| (2 * i - 1) as f64 * jsq(i + 1));
    Ok(Metrics {
        lambda,
        lambda_tilde,
        switch_fraction: (lambda - lambda_tilde) / lambda,
        eq_cm,
        eq_jsq,
        eq_ra,
        eq_i,
        eq_ii,
        ew: (lambda_tilde / lambda) * (eq_i / lambda_tilde) + ((lambda - lambda_tilde) / lambda) * (eq_ii / (lambda - lambda_tilde)),
        ew_i: eq_i / lambda_tilde,
        ew_ii: eq_ii / (lambda - lambda_tilde),
        ew_jsq: eq_jsq / lambda,
        ew_ra: eq_ra / lambda,
        var_cm: second_cm - eq_cm * eq_cm,
        var_jsq: second_jsq - eq_jsq * eq_jsq,
        var_ra: rho * rho * (1.0 + rho - rho * rho) / (1.0 - rho).powi(2),
    })
}

/// JSON report with keys `queueing_fp`, `no_queueing_fps`, `d1_star`,
/// `metrics`. Parts that do not apply to the given rates are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub d1: u32,
    pub rates: Rates,
    pub queueing_fp: Option<Vec<f64>>,
    pub no_queueing_fps: Vec<NoQueueingPoint>,
    pub x_tilde: Option<f64>,
    pub d1_star: Option<u32>,
    pub metrics: Option<Metrics>,
}

pub fn report(d1: u32, rates: Rates, i_max: usize) -> Result<FixedPointReport, FixedPointError> {
    Ok(FixedPointReport {
        d1,
        rates,
        queueing_fp: queueing_fixed_point(d1, rates, i_max).ok(),
        no_queueing_fps: no_queueing_fixed_points(d1, rates)?,
        x_tilde: x_tilde(d1, rates),
        d1_star: d1_star(rates).ok(),
        metrics: metrics(d1, rates).ok(),
    })
}

/// Metrics over a grid of arrival rates.
pub fn lambda_sweep(d1: u32, mu1: f64, mu2: f64, lambdas: &[f64]) -> Result<Vec<Metrics>, FixedPointError> {
    lambdas.iter().map(|&l| metrics(d1, Rates::new(l, mu1, mu2)?)).collect()
}

/// Writes `lambda,EQ_cm,EQ_jsq,EQ_ra,EW_I,EW_II,EW_ra,EW_jsq`.
pub fn write_sweep_csv<W: Write>(rows: &[Metrics], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "EQ_cm", "EQ_jsq", "EQ_ra", "EW_I", "EW_II", "EW_ra", "EW_jsq"])?;
    for m in rows {
        w.write_record(
            [m.lambda, m.eq_cm, m.eq_jsq, m.eq_ra, m.ew_i, m.ew_ii, m.ew_ra, m.ew_jsq].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}
