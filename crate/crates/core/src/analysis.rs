//! Lasota–Yorke constants, their empirical verification, and decay of
//! correlations measured on the grid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::fmt17;
use crate::gridfn::{variation_default, GridError, GridFunction};
use crate::map_model::{slope_condition, PiecewiseMap};
use crate::transfer::{invariant_density, ulam_matrix, FpOperator, TransferError, UlamOperator};

/// Initial radius cap for the admissibility search.
pub const START_A: f64 = 0.125;
/// Smallest radius cap tried by [`shrink_a_until_admissible`].
pub const MIN_A: f64 = 1.0 / 65536.0;
/// Correlations at or below this are treated as exact zeros.
pub const NOISE_FLOOR: f64 = 1e-14;
/// Cells with invariant density below this make `P_μ` undefined.
pub const H_FLOOR: f64 = 1e-8;
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error(
        "slope condition fails: 1/s^(1/p) + 1/s = {value} >= 1 (s = {s}, p = {p}); \
         alpha stays above this value for every radius cap A"
    )]
    Inadmissible { value: f64, s: f64, p: f64 },
    #[error("alpha = {alpha} >= 1 even at A = {a}")]
    NotAdmissibleAtMinA { alpha: f64, a: f64 },
    #[error("the transfer matrix has {0} closed classes, so the invariant measure is not unique")]
    AmbiguousMeasure(usize),
    #[error("invariant density falls below {floor} on {cells} cells")]
    DegenerateDensity { floor: f64, cells: usize },
    #[error("only {0} correlation values exceed the noise floor; at least 4 are needed for a rate")]
    InsufficientTail(usize),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Map data entering the constants: Hölder constant `M`, minimal slope `s`,
/// branch count `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapBounds {
    pub m: f64,
    pub s: f64,
    pub q: usize,
}

impl MapBounds {
    pub fn of(map: &PiecewiseMap) -> Self {
        MapBounds { m: map.holder_max(), s: map.min_slope_global(), q: map.branch_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyConstants {
    pub bounds: MapBounds,
    pub p: f64,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Equicontinuity constant used for `t > 1`, if supplied.
    pub l: Option<f64>,
    pub k: Option<f64>,
    pub c: Option<f64>,
    pub slope_condition_value: f64,
    pub admissible: bool,
}

/// Lasota–Yorke constants from the bounds alone.
///
/// `t = 1` gives the constants for `BV_{1,1/p}`; `1 < t <= p` gives those for
/// `BV_{t,1/p}`, whose `K` needs the equicontinuity constant `l`.
pub fn ly_constants(bounds: MapBounds, p: f64, t: f64, a: f64, l: Option<f64>) -> Result<LyConstants, AnalysisError> {
    let MapBounds { m, s, q } = bounds;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(AnalysisError::Parameters(format!("p must be a finite number >= 1, got {p}")));
    }
    if !(t >= 1.0 && t <= p) {
        return Err(AnalysisError::Parameters(format!("t must satisfy 1 <= t <= p, got t = {t}, p = {p}")));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(AnalysisError::Parameters(format!("A must lie in (0, 1], got {a}")));
    }
    if s.is_nan() || s <= 1.0 {
        return Err(AnalysisError::Parameters(format!("minimal slope must exceed 1, got {s}")));
    }
    let (slope_condition_value, _) = slope_condition(s, p).map_err(|e| AnalysisError::Parameters(e.to_string()))?;
    let b = a;
    let ip = 1.0 / p;
    let two_ip = 2f64.powf(ip);
    let d = m * a.powf(ip) / s.powf(1.0 + ip);
    let (alpha, beta) = if t == 1.0 {
        let alpha = two_ip * d * (1.0 + d) / s.powf(ip) + (1.0 + d) / s.powf(ip) + (1.0 + d) / s;
        let beta = two_ip * m * (1.0 + d) / s.powf(1.0 + ip) + ((1.0 + d) / s) * a.powf(1.0 - ip) / b;
        (alpha, beta)
    } else {
        let qf = q as f64;
        let e = 1.0 + ip - 1.0 / t;
        let alpha = two_ip * qf * d * (1.0 + d) / s.powf(e) + 2.0 * qf * (1.0 + d) / s.powf(e) + 2.0 * qf * (1.0 + d) / s;
        let beta = two_ip * qf * m * (1.0 + d) / s.powf(1.0 + e) + 2.0 * qf * (1.0 + d) / (s * b.powf(ip));
        (alpha, beta)
    };
    let k = if t == 1.0 { Some(1.0 - alpha + beta) } else { l.map(|l| 1.0 - alpha + beta + l) };
    let admissible = alpha < 1.0;
    let c = if admissible { k.map(|k| 1.0 + k / (1.0 - alpha)) } else { None };
    Ok(LyConstants {
        bounds,
        p,
        t,
        a,
        b,
        d,
        alpha,
        beta,
        l: if t == 1.0 { None } else { l },
        k,
        c,
        slope_condition_value,
        admissible,
    })
}

pub fn ly_constants_for_map(
    map: &PiecewiseMap,
    p: f64,
    t: f64,
    a: f64,
    l: Option<f64>,
) -> Result<LyConstants, AnalysisError> {
    ly_constants(MapBounds::of(map), p, t, a, l)
}

/// Halves `A` from [`START_A`] until `alpha < 1`.
pub fn shrink_a_until_admissible(map: &PiecewiseMap, p: f64) -> Result<LyConstants, AnalysisError> {
    shrink_bounds_until_admissible(MapBounds::of(map), p)
}

pub fn shrink_bounds_until_admissible(bounds: MapBounds, p: f64) -> Result<LyConstants, AnalysisError> {
    let (value, ok) = slope_condition(bounds.s, p).map_err(|e| AnalysisError::Parameters(e.to_string()))?;
    if !ok {
        return Err(AnalysisError::Inadmissible { value, s: bounds.s, p });
    }
    let mut a = START_A;
    loop {
        let c = ly_constants(bounds, p, 1.0, a, None)?;
        if c.admissible {
            return Ok(c);
        }
        if a / 2.0 < MIN_A {
            return Err(AnalysisError::NotAdmissibleAtMinA { alpha: c.alpha, a });
        }
        a /= 2.0;
    }
}

pub const LY_CSV_HEADER: &str = "p,t,A,B,D,alpha,beta,K,C,slope_condition_value,admissible";

impl LyConstants {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt17(self.p),
            fmt17(self.t),
            fmt17(self.a),
            fmt17(self.b),
            fmt17(self.d),
            fmt17(self.alpha),
            fmt17(self.beta),
            opt(self.k),
            opt(self.c),
            fmt17(self.slope_condition_value),
            self.admissible
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{LY_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    Trigonometric,
    Step,
}

/// Random test function number `trial` of a seeded suite: even trials are
/// trigonometric polynomials of degree at most 8, odd trials step functions
/// with at most 8 jumps.
pub fn test_function(n: usize, seed: u64, trial: usize) -> Result<(TestFunctionKind, GridFunction), GridError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    if trial.is_multiple_of(2) {
        let degree = rng.random_range(1..=8usize);
        let c0: f64 = rng.random_range(-1.0..1.0);
        let coeffs: Vec<(f64, f64)> =
            (0..degree).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let f = GridFunction::from_fn(n, |x| {
            Ok(c0
                + coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let w = 2.0 * PI * (k + 1) as f64 * x;
                        a * w.cos() + b * w.sin()
                    })
                    .sum::<f64>())
        })?;
        Ok((TestFunctionKind::Trigonometric, f))
    } else {
        let jumps = rng.random_range(1..=8usize);
        let mut cuts: Vec<f64> = (0..jumps).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        let levels: Vec<f64> = (0..=jumps).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) / n as f64;
                levels[cuts.partition_point(|&c| c <= x)]
            })
            .collect();
        Ok((TestFunctionKind::Step, GridFunction::new(values)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyTrial {
    pub trial: usize,
    pub kind: TestFunctionKind,
    pub var_f: f64,
    pub l1_f: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyVerification {
    pub constants: LyConstants,
    pub n: usize,
    pub seed: u64,
    pub trials: Vec<LyTrial>,
    pub violations: usize,
}

/// Checks `var(P f) <= alpha·var(f) + beta·‖f‖_1` on seeded random test
/// functions, allowing grid slack `10/n·(1 + var f)`.
///
/// The inequality is checked with the constants at `(p, A)` whether or not
/// they are admissible.
pub fn ly_verify(
    map: &PiecewiseMap,
    p: f64,
    a: f64,
    trials: usize,
    n: usize,
    seed: u64,
) -> Result<LyVerification, AnalysisError> {
    let constants = ly_constants_for_map(map, p, 1.0, a, None)?;
    let op = FpOperator::new(map, n)?;
    let results: Vec<LyTrial> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (kind, f) = test_function(n, seed, trial)?;
            Ok(check_ly(&op, &constants, &f, trial, kind))
        })
        .collect::<Result<_, GridError>>()?;
    let violations = results.iter().filter(|t| t.violated).count();
    Ok(LyVerification { constants, n, seed, trials: results, violations })
}

/// One LY check for a given `f`.
pub fn check_ly(op: &FpOperator, c: &LyConstants, f: &GridFunction, trial: usize, kind: TestFunctionKind) -> LyTrial {
    let var_f = variation_default(f, 1.0, c.p, c.a).variation;
    let l1_f = f.lq_norm(1.0);
    let lhs = variation_default(&op.apply(f), 1.0, c.p, c.a).variation;
    let rhs = c.alpha * var_f + c.beta * l1_f;
    let slack = 10.0 / f.n() as f64 * (1.0 + var_f);
    LyTrial { trial, kind, var_f, l1_f, lhs, rhs, margin: rhs - lhs, slack, violated: lhs > rhs + slack }
}

/// Non-rigorous estimate of the equicontinuity constant: the largest
/// `‖P^k f‖_t / ‖f‖_t` over `iterations` iterates of a seeded suite of
/// nonnegative test functions.
pub fn empirical_equicontinuity(
    map: &PiecewiseMap,
    t: f64,
    n: usize,
    trials: usize,
    iterations: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let op = FpOperator::new(map, n)?;
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (_, f) = test_function(n, seed, trial)?;
            // P is positive, so nonnegative inputs keep the ratio meaningful
            let f = f.map(|v| v.abs() + 0.05);
            let base = f.lq_norm(t);
            let mut g = f;
            let mut worst: f64 = 1.0;
            for _ in 0..iterations {
                g = op.apply(&g);
                worst = worst.max(g.lq_norm(t) / base);
            }
            Ok(worst)
        })
        .collect::<Result<_, GridError>>()?;
    Ok(ratios.into_iter().fold(1.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Lebesgue,
    Invariant,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSeries {
    pub kind: CorrelationKind,
    pub n_values: Vec<usize>,
    pub c_values: Vec<f64>,
    pub fitted_rate: Option<f64>,
    pub fit_quality: Option<f64>,
}

impl CorrelationSeries {
    fn new(kind: CorrelationKind, c_values: Vec<f64>) -> Self {
        let n_values: Vec<usize> = (0..c_values.len()).collect();
        let fit = fit_decay_rate(&n_values, &c_values).ok();
        CorrelationSeries {
            kind,
            n_values,
            c_values,
            fitted_rate: fit.map(|f| f.0),
            fit_quality: fit.map(|f| f.1),
        }
    }

    /// CSV with header `N,C`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,C\n");
        for (n, c) in self.n_values.iter().zip(&self.c_values) {
            let _ = writeln!(out, "{n},{}", fmt17(*c));
        }
        out
    }
}

/// Least-squares slope of `ln C` against `N` over the longest run of
/// consecutive values above [`NOISE_FLOOR`] (the later run on ties).
/// Returns `(exp(slope), R²)`.
pub fn fit_decay_rate(n_values: &[usize], c_values: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let mut best = (0usize, 0usize);
    let mut start = None;
    for (i, &c) in c_values.iter().enumerate() {
        if c > NOISE_FLOOR && c.is_finite() {
            let s = *start.get_or_insert(i);
            if i + 1 - s >= best.1 - best.0 {
                best = (s, i + 1);
            }
        } else {
            start = None;
        }
    }
    let len = best.1 - best.0;
    if len < 4 {
        return Err(AnalysisError::InsufficientTail(len));
    }
    let xs: Vec<f64> = n_values[best.0..best.1].iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = c_values[best.0..best.1].iter().map(|c| c.ln()).collect();
    let k = len as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((slope.exp(), r2))
}

fn unique_density(op: &UlamOperator) -> Result<GridFunction, AnalysisError> {
    let classes = op.closed_class_count();
    if classes > 1 {
        return Err(AnalysisError::AmbiguousMeasure(classes));
    }
    Ok(match invariant_density(op, 1e-14, 20_000) {
        Ok(h) => h,
        // periodic chains need the lazy iteration inside the spectral routine
        Err(TransferError::NoConvergence { .. }) => crate::transfer::spectrum(op, 2)?.invariant_density,
        Err(e) => return Err(e.into()),
    })
}

/// `C_m(N) = |∫ P^N f · g dm - m(f)·μ(g)|` for `N = 0..=n_max`.
///
/// `P` acts through the Ulam matrix, which preserves integrals exactly, so
/// the product term cancels to rounding for mean-preserving pairs.
pub fn correlation_lebesgue(
    map: &PiecewiseMap,
    f: &Expr,
    g: &Expr,
    n_max: usize,
    n: usize,
) -> Result<CorrelationSeries, AnalysisError> {
    let op = ulam_matrix(map, n)?;
    let h = unique_density(&op)?;
    let fg = GridFunction::project(f, n)?;
    let gg = GridFunction::project(g, n)?;
    let product = fg.integral() * gg.inner(&h);
    let mut values = Vec::with_capacity(n_max + 1);
    let mut it = fg.into_values();
    for k in 0..=n_max {
        if k > 0 {
            it = op.push_forward(&it);
        }
        values.push((mean_product(&it, gg.values()) - product).abs());
    }
    Ok(CorrelationSeries::new(CorrelationKind::Lebesgue, values))
}

/// `C_μ(N) = |∫ P_μ^N f · g dμ - μ(f)·μ(g)|` with `P_μ f = P(f h)/h`.
pub fn correlation_invariant(
    map: &PiecewiseMap,
    f: &Expr,
    g: &Expr,
    n_max: usize,
    n: usize,
) -> Result<CorrelationSeries, AnalysisError> {
    let op = ulam_matrix(map, n)?;
    let h = unique_density(&op)?;
    let low = h.values().iter().filter(|&&v| v < H_FLOOR).count();
    if low > 0 {
        return Err(AnalysisError::DegenerateDensity { floor: H_FLOOR, cells: low });
    }
    let fg = GridFunction::project(f, n)?;
    let gg = GridFunction::project(g, n)?;
    let hv = h.values();
    let gh: Vec<f64> = gg.values().iter().zip(hv).map(|(a, b)| a * b).collect();
    let product = fg.inner(&h) * gg.inner(&h);
    let mut values = Vec::with_capacity(n_max + 1);
    let mut it = fg.into_values();
    for k in 0..=n_max {
        if k > 0 {
            let weighted: Vec<f64> = it.iter().zip(hv).map(|(a, b)| a * b).collect();
            it = op.push_forward(&weighted).iter().zip(hv).map(|(a, b)| a / b).collect();
        }
        values.push((mean_product(&it, &gh) - product).abs());
    }
    Ok(CorrelationSeries::new(CorrelationKind::Invariant, values))
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}
