//! Piecewise-constant functions on a uniform partition of `[0, 1]` and the
//! oscillation-based generalized variations built on them.
//!
//! Cell `k` of an `n`-cell grid is `[k/n, (k+1)/n)` with midpoint
//! `c_k = (k + 1/2)/n`. Neighbourhoods are resolved on midpoints: cell `j`
//! belongs to the radius-`r` neighbourhood of cell `k` iff `|c_j - c_k| <= r`,
//! which for `r = w/n` is a window of `w` cells on either side.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};

/// Ratio of consecutive radii in the default geometric radius grid.
pub const RADIUS_RATIO: f64 = 1.2;
/// Default radius cap.
pub const DEFAULT_A: f64 = 0.125;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least 2 cells, got {0}")]
    TooSmall(usize),
    #[error("non-finite value in cell {0}")]
    NonFinite(usize),
    #[error("evaluation failed in cell {cell} at x = {x}: {source}")]
    Eval {
        cell: usize,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error("malformed grid CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

// Three-point Gauss–Legendre rule on [-1, 1].
const GAUSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() < 2 {
            return Err(GridError::TooSmall(values.len()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(k));
        }
        Ok(GridFunction { values })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self, GridError> {
        Self::new(vec![c; n])
    }

    /// Cell averages of `f`, each computed by 3-point Gauss–Legendre.
    pub fn from_fn<F>(n: usize, f: F) -> Result<Self, GridError>
    where
        F: Fn(f64) -> Result<f64, EvalError>,
    {
        if n < 2 {
            return Err(GridError::TooSmall(n));
        }
        let h = 1.0 / n as f64;
        let values = (0..n)
            .map(|k| {
                let c = (k as f64 + 0.5) * h;
                let mut acc = 0.0;
                for (node, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                    let x = c + 0.5 * h * node;
                    acc += w * f(x).map_err(|source| GridError::Eval { cell: k, x, source })?;
                }
                Ok(0.5 * acc)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(values)
    }

    /// Projects an expression onto `n` cells.
    pub fn project(e: &Expr, n: usize) -> Result<Self, GridError> {
        Self::from_fn(n, |x| e.eval(x))
    }

    /// Indicator of `[a, b]`, exact cell averages.
    pub fn indicator(n: usize, a: f64, b: f64) -> Result<Self, GridError> {
        Self::new(
            (0..n)
                .map(|k| {
                    let lo = k as f64 / n as f64;
                    let hi = (k + 1) as f64 / n as f64;
                    ((hi.min(b) - lo.max(a)).max(0.0)) * n as f64
                })
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.n() as f64
    }

    /// Cell containing `x`, with `x = 1` assigned to the last cell.
    pub fn cell_of(&self, x: f64) -> usize {
        cell_index(x, self.n())
    }

    pub fn at(&self, x: f64) -> f64 {
        self.values[self.cell_of(x)]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// `L^q` norm; `q = f64::INFINITY` gives the sup norm.
    pub fn lq_norm(&self, q: f64) -> f64 {
        lq_norm_of(&self.values, q)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert_eq!(self.n(), other.n(), "grid sizes differ");
        GridFunction { values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// `∫ f g dm`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.n(), other.n(), "grid sizes differ");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / self.n() as f64
    }

    /// CSV with header `cell_index,midpoint,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_index,midpoint,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{}", crate::fmt17(self.midpoint(k)), crate::fmt17(*v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, GridError> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != "cell_index,midpoint,value" {
                    return Err(GridError::Csv { line: 1, message: "unexpected header".into() });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |message: &str| GridError::Csv { line: i + 1, message: message.to_string() };
            if fields.len() != 3 {
                return Err(bad("expected 3 fields"));
            }
            let k: usize = fields[0].trim().parse().map_err(|_| bad("bad cell index"))?;
            if k != values.len() {
                return Err(bad("cell indices must be consecutive from 0"));
            }
            values.push(fields[2].trim().parse::<f64>().map_err(|_| bad("bad value"))?);
        }
        Self::new(values)
    }
}

pub(crate) fn cell_index(x: f64, n: usize) -> usize {
    let k = (x * n as f64).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

fn lq_norm_of(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if q.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let n = values.len() as f64;
    if q == 1.0 {
        return values.iter().map(|v| v.abs()).sum::<f64>() / n;
    }
    (values.iter().map(|v| v.abs().powf(q)).sum::<f64>() / n).powf(1.0 / q)
}

/// Number of neighbouring cells on each side whose midpoints lie within
/// distance `r` on an `n`-cell grid.
pub fn window_half_width(r: f64, n: usize) -> usize {
    let w = r * n as f64;
    // absorb rounding so that r = w/n resolves to exactly w cells
    (w + 1e-9 * w.max(1.0)).floor().max(0.0) as usize
}

/// Sliding-window `max - min` over windows `[k - w, k + w]` clipped to the grid,
/// using monotone deques.
pub fn sliding_range(values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut next = 0usize;
    for k in 0..n {
        let right = (k + w).min(n - 1);
        while next <= right {
            let v = values[next];
            while maxq.back().is_some_and(|&j| values[j] <= v) {
                maxq.pop_back();
            }
            maxq.push_back(next);
            while minq.back().is_some_and(|&j| values[j] >= v) {
                minq.pop_back();
            }
            minq.push_back(next);
            next += 1;
        }
        let left = k.saturating_sub(w);
        while maxq.front().is_some_and(|&j| j < left) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j < left) {
            minq.pop_front();
        }
        out.push(values[maxq[0]] - values[minq[0]]);
    }
    out
}

/// `osc(f, r, ·)` as a grid function.
pub fn osc_profile(f: &GridFunction, r: f64) -> GridFunction {
    GridFunction { values: sliding_range(&f.values, window_half_width(r, f.n())) }
}

/// `osc(f, r, x)` at an arbitrary point: range of `f` over cells whose
/// midpoints lie within `r` of `x`.
pub fn osc_at(f: &GridFunction, r: f64, x: f64) -> f64 {
    let n = f.n();
    let nf = n as f64;
    // midpoints c_j = (j + 1/2)/n with |c_j - x| <= r
    let lo = ((x - r) * nf - 0.5 - 1e-9).ceil().max(0.0) as usize;
    let hi_f = ((x + r) * nf - 0.5 + 1e-9).floor();
    if hi_f < 0.0 {
        return 0.0;
    }
    let hi = (hi_f as usize).min(n - 1);
    if lo > hi {
        return 0.0;
    }
    let slice = &f.values[lo..=hi];
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// `osc_q(f, r) = ‖osc(f, r, ·)‖_q`.
pub fn osc_q(f: &GridFunction, r: f64, lq: f64) -> f64 {
    osc_profile(f, r).lq_norm(lq)
}

/// Geometric radius grid from `1/n` to `a` with `count` points.
pub fn radius_grid(n: usize, a: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let start = (1.0 / n as f64).min(a);
    if start >= a {
        return vec![a];
    }
    let ratio = (a / start).powf(1.0 / (count - 1) as f64);
    let mut radii: Vec<f64> = (0..count).map(|k| start * ratio.powi(k as i32)).collect();
    radii[count - 1] = a;
    radii
}

/// Number of radii giving a ratio of about [`RADIUS_RATIO`] between `1/n` and `a`.
pub fn default_radii_count(n: usize, a: f64) -> usize {
    let span = (a * n as f64).max(1.0);
    ((span.ln() / RADIUS_RATIO.ln()).ceil() as usize + 1).max(4)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    pub lq_exponent: f64,
    pub p: f64,
    pub a: f64,
    pub radii: Vec<f64>,
    /// `osc_q(f, r) / r^{1/p}` for every radius.
    pub ratios: Vec<f64>,
    pub variation: f64,
    pub lq_norm: f64,
    pub bv_norm: f64,
    pub argmax_radius: f64,
}

/// `var_{q,1/p}(f)`: the supremum over `0 < r <= A` of `osc_q(f, r)/r^{1/p}`,
/// approximated by a maximum over a geometric radius grid.
pub fn variation(f: &GridFunction, lq: f64, p: f64, a: f64, radii_count: usize) -> VariationReport {
    let radii = radius_grid(f.n(), a, radii_count);
    let ratios: Vec<f64> = radii.par_iter().map(|&r| osc_q(f, r, lq) / r.powf(1.0 / p)).collect();
    let (mut best, mut arg) = (0.0, radii[0]);
    for (&r, &v) in radii.iter().zip(&ratios) {
        if v > best {
            best = v;
            arg = r;
        }
    }
    let lq_norm = f.lq_norm(lq);
    VariationReport {
        lq_exponent: lq,
        p,
        a,
        radii,
        ratios,
        variation: best,
        lq_norm,
        bv_norm: best + lq_norm,
        argmax_radius: arg,
    }
}

/// [`variation`] with the default radius grid.
pub fn variation_default(f: &GridFunction, lq: f64, p: f64, a: f64) -> VariationReport {
    variation(f, lq, p, a, default_radii_count(f.n(), a))
}

/// Brute-force `O(n·w)` oscillation profile, for cross-checking.
pub fn osc_profile_brute(f: &GridFunction, r: f64) -> GridFunction {
    let n = f.n();
    let w = window_half_width(r, n);
    let values = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(w);
            let hi = (k + w).min(n - 1);
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            for &v in &f.values[lo..=hi] {
                max = max.max(v);
                min = min.min(v);
            }
            max - min
        })
        .collect();
    GridFunction { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use proptest::prelude::*;

    fn brute_window(values: &[f64], n: usize, r: f64) -> Vec<f64> {
        // Independent oracle: compare midpoints directly.
        let c = |k: usize| (k as f64 + 0.5) / n as f64;
        (0..n)
            .map(|k| {
                let inside: Vec<f64> =
                    (0..n).filter(|&j| (c(j) - c(k)).abs() <= r + 1e-12).map(|j| values[j]).collect();
                let max = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = inside.iter().cloned().fold(f64::INFINITY, f64::min);
                max - min
            })
            .collect()
    }

    #[test]
    fn project_examples() {
        assert!(GridFunction::project(&parse("1").unwrap(), 8).unwrap().values().iter().all(|&v| v == 1.0));
        let f = GridFunction::project(&parse("x").unwrap(), 4).unwrap();
        for (v, want) in f.values().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((v - want).abs() <= 1e-15);
        }
        let f = GridFunction::project(&parse("x^2").unwrap(), 2).unwrap();
        assert!((f.values()[0] - 1.0 / 12.0).abs() < 1e-12);
        assert!((f.values()[1] - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn project_reports_evaluation_errors() {
        let err = GridFunction::project(&parse("log(x - 0.5)").unwrap(), 4).unwrap_err();
        assert!(matches!(err, GridError::Eval { cell: 0, .. }));
        assert!(matches!(GridFunction::new(vec![1.0]), Err(GridError::TooSmall(1))));
        assert!(matches!(GridFunction::new(vec![1.0, f64::NAN]), Err(GridError::NonFinite(1))));
    }

    #[test]
    fn osc_constant_is_zero() {
        let f = GridFunction::constant(32, 2.5).unwrap();
        assert!(osc_profile(&f, 0.2).values().iter().all(|&v| v == 0.0));
        assert_eq!(osc_q(&f, 0.1, 1.0), 0.0);
        assert_eq!(osc_q(&f, 0.1, f64::INFINITY), 0.0);
    }

    #[test]
    fn osc_of_step() {
        let n = 64;
        let f = GridFunction::indicator(n, 0.0, 0.5).unwrap();
        let prof = osc_profile(&f, 1.0 / 16.0);
        for k in 0..n {
            let near = ((k as f64 + 0.5) / n as f64 - 0.5).abs() <= 1.0 / 16.0;
            assert_eq!(prof.values()[k], if near { 1.0 } else { 0.0 }, "cell {k}");
        }
        assert_eq!(osc_q(&f, 0.3, f64::INFINITY), 1.0);
        // osc_1 ≈ 2r
        let r = 0.05;
        let n = 4096;
        let f = GridFunction::indicator(n, 0.0, 0.5).unwrap();
        assert!((osc_q(&f, r, 1.0) - 2.0 * r).abs() <= 2.0 / n as f64);
    }

    #[test]
    fn osc_of_identity_tapers_at_ends() {
        let n = 256;
        let f = GridFunction::project(&parse("x").unwrap(), n).unwrap();
        let r = 0.1;
        let prof = osc_profile(&f, r);
        let brute = brute_window(f.values(), n, r);
        assert_eq!(prof.values(), &brute[..]);
        let mid = prof.values()[n / 2];
        assert!((mid - 2.0 * r).abs() < 2.0 / n as f64);
        assert!((prof.values()[0] - r).abs() < 2.0 / n as f64);
    }

    #[test]
    fn window_width_resolves_exact_multiples() {
        assert_eq!(window_half_width(1.0 / 16.0, 64), 4);
        assert_eq!(window_half_width(0.1, 10), 1);
        assert_eq!(window_half_width(0.3, 10), 3);
        assert_eq!(window_half_width(0.0999, 10), 0);
    }

    #[test]
    fn variation_constant() {
        let f = GridFunction::constant(128, -3.0).unwrap();
        let r = variation(&f, 1.0, 1.0, 0.25, 10);
        assert_eq!(r.variation, 0.0);
        assert_eq!(r.bv_norm, 3.0);
        assert!(r.radii.contains(&r.argmax_radius));
    }

    #[test]
    fn variation_of_step_is_two() {
        let f = GridFunction::indicator(1024, 0.0, 0.5).unwrap();
        let r = variation_default(&f, 1.0, 1.0, 0.25);
        assert!((r.variation - 2.0).abs() <= 0.1, "{}", r.variation);
        assert_eq!(r.bv_norm, r.variation + r.lq_norm);
    }

    #[test]
    fn variation_of_identity() {
        // osc_1(x, r) = 2r - r^2 so the ratio 2 - r peaks at the smallest radius.
        let f = GridFunction::project(&parse("x").unwrap(), 1024).unwrap();
        let r = variation_default(&f, 1.0, 1.0, 0.25);
        assert!((r.variation - 2.0).abs() <= 0.1, "{}", r.variation);
        assert_eq!(r.argmax_radius, r.radii[0]);
    }

    #[test]
    fn radius_grid_shape() {
        let g = radius_grid(1024, 0.25, default_radii_count(1024, 0.25));
        assert_eq!(g[0], 1.0 / 1024.0);
        assert_eq!(*g.last().unwrap(), 0.25);
        for w in g.windows(2) {
            assert!(w[1] / w[0] <= RADIUS_RATIO + 1e-12);
        }
        assert_eq!(radius_grid(4, 0.1, 5), vec![0.1]);
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let f = GridFunction::project(&parse("sin(3*x) + 1/3").unwrap(), 17).unwrap();
        let csv = f.to_csv();
        let back = GridFunction::from_csv(&csv).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_csv(), csv);
        assert!(GridFunction::from_csv("bad\n0,0.5,1\n").is_err());
        assert!(GridFunction::from_csv("cell_index,midpoint,value\n1,0.5,1\n").is_err());
    }

    #[test]
    fn osc_at_matches_profile_on_midpoints() {
        let f = GridFunction::project(&parse("sin(7*x)").unwrap(), 100).unwrap();
        let prof = osc_profile(&f, 0.037);
        for k in 0..100 {
            assert_eq!(osc_at(&f, 0.037, f.midpoint(k)), prof.values()[k]);
        }
    }

    fn step_values() -> impl Strategy<Value = Vec<f64>> {
        (8usize..200).prop_flat_map(|n| proptest::collection::vec(-5.0f64..5.0, n))
    }

    proptest! {
        #[test]
        fn sliding_window_equals_brute_force(values in step_values(), r in 0.0f64..1.2) {
            let n = values.len();
            let f = GridFunction::new(values.clone()).unwrap();
            let fast = osc_profile(&f, r);
            let brute = osc_profile_brute(&f, r);
            prop_assert_eq!(fast.values(), brute.values());
            let aligned = window_half_width(r, n) as f64 / n as f64;
            let oracle = brute_window(&values, n, aligned);
            prop_assert_eq!(fast.values(), &oracle[..]);
        }

        #[test]
        fn osc_monotone_in_radius(values in step_values(), r1 in 0.0f64..0.5, dr in 0.0f64..0.5) {
            let f = GridFunction::new(values).unwrap();
            let a = osc_profile(&f, r1);
            let b = osc_profile(&f, r1 + dr);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(x <= y);
            }
            prop_assert!(osc_q(&f, r1, 1.0) <= osc_q(&f, r1 + dr, 1.0));
            prop_assert!(osc_q(&f, r1, 2.5) <= osc_q(&f, r1 + dr, 2.5) + 1e-12);
        }
    }
}
