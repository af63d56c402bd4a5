//! Piecewise expanding interval maps with Hölder-continuous derivative.
//!
//! A [`PiecewiseMap`] is a finite list of monotone branches tiling `[0, 1]`.
//! Each branch is defined by a formula on the closure of its domain, so its
//! value and derivative at a shared breakpoint are the one-sided limits from
//! inside that branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};

/// Default tolerance for [`Branch::inverse`].
pub const INVERSE_TOL: f64 = 1e-12;
/// Safety factor applied to a sampled minimum slope when none is declared.
pub const SLOPE_SAFETY: f64 = 0.999;
/// Samples per branch used when slopes or Hölder constants must be estimated
/// at construction time.
pub const CONSTRUCTION_SAMPLES: usize = 2048;
/// Tolerance used for breakpoint tiling and image containment.
pub const GEOM_TOL: f64 = 1e-9;

const HOLDER_SEED: u64 = 0x5e_ed0f_401d;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid interval [{lo}, {hi}]")]
    BadInterval { lo: f64, hi: f64 },
    #[error("branches do not tile [0, 1]: {0}")]
    Tiling(String),
    #[error("holder exponent must lie in (0, 1], got {0}")]
    Exponent(f64),
    #[error("branch {branch}: {source}")]
    Parse {
        branch: usize,
        #[source]
        source: ParseError,
    },
    #[error("branch {branch}: evaluation failed at x = {x}: {source}")]
    Eval {
        branch: usize,
        x: f64,
        #[source]
        source: EvalError,
    },
    #[error("branch {branch} is not strictly monotone (derivative vanishes or changes sign)")]
    NotMonotone { branch: usize },
    #[error("y = {y} lies outside the branch image [{lo}, {hi}]")]
    OutOfImage { y: f64, lo: f64, hi: f64 },
    #[error("root finder failed to converge for y = {y}")]
    NoConvergence { y: f64 },
    #[error("slope condition requires p >= 1 and s > 1 (p = {p}, s = {s})")]
    SlopeArgs { p: f64, s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MapError> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi || lo < -GEOM_TOL || hi > 1.0 + GEOM_TOL {
            return Err(MapError::BadInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        y >= self.lo - tol && y <= self.hi + tol
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// User-facing description of one branch, as read from a map config.
#[derive(Debug, Clone)]
pub struct BranchSpec {
    pub lo: f64,
    pub hi: f64,
    pub formula: String,
    pub min_slope: Option<f64>,
    pub holder_constant: Option<f64>,
}

impl BranchSpec {
    pub fn new(lo: f64, hi: f64, formula: &str) -> Self {
        BranchSpec { lo, hi, formula: formula.to_string(), min_slope: None, holder_constant: None }
    }

    pub fn with_min_slope(mut self, s: f64) -> Self {
        self.min_slope = Some(s);
        self
    }

    pub fn with_holder_constant(mut self, m: f64) -> Self {
        self.holder_constant = Some(m);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub domain: Interval,
    pub formula: Expr,
    pub source: String,
    /// `+1` for increasing branches, `-1` for decreasing ones.
    pub monotone_sign: i8,
    /// Lower bound on `|τ_i'|` used by the analysis (s_i).
    pub min_slope: f64,
    /// Whether `min_slope` was supplied by the user.
    pub min_slope_declared: bool,
    /// Sampled minimum of `|τ_i'|` over the domain closure.
    pub sampled_min_slope: f64,
    /// Hölder constant of `τ_i'` (M_i).
    pub holder_constant: f64,
    pub holder_declared: bool,
    /// Image `τ_i(I_i)`, ordered.
    pub image: Interval,
}

impl Branch {
    pub fn value(&self, x: f64) -> Result<f64, EvalError> {
        self.formula.eval(x)
    }

    pub fn value_and_slope(&self, x: f64) -> Result<(f64, f64), EvalError> {
        self.formula.eval_with_derivative(x)
    }

    /// Solves `τ_i(x) = y` for `x` in the domain closure.
    ///
    /// Newton steps are taken from the current iterate and replaced by a
    /// bisection step whenever they leave the bracket, so convergence follows
    /// from monotonicity alone.
    pub fn inverse(&self, y: f64, tol: f64) -> Result<f64, MapError> {
        if !self.image.contains(y, tol) {
            return Err(MapError::OutOfImage { y, lo: self.image.lo, hi: self.image.hi });
        }
        let y = y.clamp(self.image.lo, self.image.hi);
        let sign = f64::from(self.monotone_sign);
        // g(x) = sign * (τ(x) - y) is increasing.
        let g = |x: f64| -> Result<(f64, f64), MapError> {
            let (v, d) = self
                .value_and_slope(x)
                .map_err(|source| MapError::Eval { branch: usize::MAX, x, source })?;
            Ok((sign * (v - y), sign * d))
        };
        let (mut lo, mut hi) = (self.domain.lo, self.domain.hi);
        let (glo, _) = g(lo)?;
        if glo.abs() <= tol {
            return Ok(lo);
        }
        let (ghi, _) = g(hi)?;
        if ghi.abs() <= tol {
            return Ok(hi);
        }
        // Linear interpolation of the endpoint values is an exact first guess
        // for affine branches.
        let mut x = if ghi > glo { lo + (hi - lo) * (-glo) / (ghi - glo) } else { self.domain.midpoint() };
        x = x.clamp(lo, hi);
        for _ in 0..200 {
            let (gx, dx) = g(x)?;
            if gx.abs() <= tol {
                return Ok(x);
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - gx / dx;
            x = if dx > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                let (gx, _) = g(x)?;
                if gx.abs() <= 2.0 * tol {
                    return Ok(x);
                }
                break;
            }
        }
        Err(MapError::NoConvergence { y })
    }
}

/// A piecewise expanding map of `[0, 1]` (the class T_{1+ε}).
#[derive(Debug, Clone)]
pub struct PiecewiseMap {
    pub branches: Vec<Branch>,
    /// Hölder exponent ε of the branch derivatives.
    pub holder_exponent: f64,
}

fn sample_points(domain: Interval, samples: usize) -> impl Iterator<Item = f64> {
    let samples = samples.max(2);
    (0..samples).map(move |k| {
        if k + 1 == samples {
            domain.hi
        } else {
            domain.lo + domain.len() * (k as f64) / ((samples - 1) as f64)
        }
    })
}

impl PiecewiseMap {
    /// Builds a map from branch descriptions. Branches must tile `[0, 1]`
    /// (in any order; they are sorted by left endpoint). Undeclared slopes and
    /// Hölder constants are estimated by sampling.
    pub fn new(specs: Vec<BranchSpec>, holder_exponent: f64) -> Result<Self, MapError> {
        if !(holder_exponent > 0.0 && holder_exponent <= 1.0) {
            return Err(MapError::Exponent(holder_exponent));
        }
        let mut specs = specs;
        specs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        check_tiling(&specs)?;

        let mut branches = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            branches.push(build_branch(i, spec)?);
        }
        let mut map = PiecewiseMap { branches, holder_exponent };
        let estimates = map.estimate_holder_constants(CONSTRUCTION_SAMPLES)?;
        for (b, m) in map.branches.iter_mut().zip(estimates) {
            if !b.holder_declared {
                b.holder_constant = m;
            }
        }
        Ok(map)
    }

    /// Shorthand for maps whose branches carry only formulas.
    pub fn from_formulas(branches: &[(f64, f64, &str)], holder_exponent: f64) -> Result<Self, MapError> {
        Self::new(branches.iter().map(|&(lo, hi, f)| BranchSpec::new(lo, hi, f)).collect(), holder_exponent)
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// The exponent `p = 1/ε`.
    pub fn p(&self) -> f64 {
        1.0 / self.holder_exponent
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![self.branches[0].domain.lo];
        out.extend(self.branches.iter().map(|b| b.domain.hi));
        out
    }

    /// `s = min_i s_i`.
    pub fn min_slope_global(&self) -> f64 {
        self.branches.iter().map(|b| b.min_slope).fold(f64::INFINITY, f64::min)
    }

    /// `M = max_i M_i`.
    pub fn holder_max(&self) -> f64 {
        self.branches.iter().map(|b| b.holder_constant).fold(0.0, f64::max)
    }

    /// Index of the branch whose domain closure contains `x` (the left one at
    /// a shared breakpoint).
    pub fn branch_at(&self, x: f64) -> usize {
        self.branches.iter().position(|b| x <= b.domain.hi).unwrap_or(self.branches.len() - 1)
    }

    /// Evaluates `τ(x)`.
    pub fn apply(&self, x: f64) -> Result<f64, EvalError> {
        self.branches[self.branch_at(x)].value(x)
    }

    /// Samples `|τ'|`, monotonicity and the image of every branch.
    pub fn validate(&self, samples_per_branch: usize) -> Result<ValidationReport, MapError> {
        let samples = samples_per_branch.max(2);
        let mut reports = Vec::with_capacity(self.branches.len());
        for (i, b) in self.branches.iter().enumerate() {
            let mut min_abs = f64::INFINITY;
            let mut sign_ok = true;
            let mut img_lo = f64::INFINITY;
            let mut img_hi = f64::NEG_INFINITY;
            for x in sample_points(b.domain, samples) {
                let (v, d) = b.value_and_slope(x).map_err(|source| MapError::Eval { branch: i, x, source })?;
                min_abs = min_abs.min(d.abs());
                if d == 0.0 || d.signum() as i8 != b.monotone_sign {
                    sign_ok = false;
                }
                img_lo = img_lo.min(v);
                img_hi = img_hi.max(v);
            }
            let mut violations = Vec::new();
            if b.min_slope <= 1.0 {
                violations.push(Violation::SlopeNotExpanding { min_slope: b.min_slope });
            }
            if min_abs <= 1.0 {
                violations.push(Violation::SlopeNotExpanding { min_slope: min_abs });
            }
            if min_abs < b.min_slope * (1.0 - 1e-12) {
                violations.push(Violation::SlopeBelowDeclared { declared: b.min_slope, observed: min_abs });
            }
            if !sign_ok {
                violations.push(Violation::NotMonotone);
            }
            if img_lo < -GEOM_TOL || img_hi > 1.0 + GEOM_TOL {
                violations.push(Violation::ImageOutsideUnit { lo: img_lo, hi: img_hi });
            }
            reports.push(BranchReport {
                branch: i,
                observed_min_slope: min_abs,
                declared_min_slope: if b.min_slope_declared { Some(b.min_slope) } else { None },
                computed_min_slope: SLOPE_SAFETY * b.sampled_min_slope,
                sign_consistent: sign_ok,
                observed_image: (img_lo, img_hi),
                violations,
            });
        }
        let accepted = reports.iter().all(|r| r.violations.is_empty());
        Ok(ValidationReport { branches: reports, accepted })
    }

    /// Estimates the Hölder constant `M_i` of each branch derivative.
    ///
    /// The sample set for a given `pairs_per_branch` contains the adjacent
    /// pairs of every dyadic grid up to level `⌊log2 pairs⌋` plus the first
    /// `pairs_per_branch` pairs of a fixed seeded stream, stratified over 16
    /// subintervals. Larger counts therefore use supersets of smaller ones.
    pub fn estimate_holder_constants(&self, pairs_per_branch: usize) -> Result<Vec<f64>, MapError> {
        let eps = self.holder_exponent;
        self.branches
            .iter()
            .enumerate()
            .map(|(i, b)| estimate_branch_holder(i, b, eps, pairs_per_branch))
            .collect()
    }

    /// Returns `(1/s^{1/p} + 1/s, holds)` for the global minimal slope.
    pub fn check_slope_condition(&self, p: f64) -> Result<(f64, bool), MapError> {
        slope_condition(self.min_slope_global(), p)
    }
}

/// `1/s^{1/p} + 1/s` and whether it is strictly below one.
pub fn slope_condition(s: f64, p: f64) -> Result<(f64, bool), MapError> {
    if !(p >= 1.0 && s > 1.0) {
        return Err(MapError::SlopeArgs { p, s });
    }
    let value = s.powf(-1.0 / p) + 1.0 / s;
    Ok((value, value < 1.0))
}

fn check_tiling(specs: &[BranchSpec]) -> Result<(), MapError> {
    if specs.is_empty() {
        return Err(MapError::Tiling("no branches".into()));
    }
    for s in specs {
        Interval::new(s.lo, s.hi)?;
    }
    if specs[0].lo.abs() > GEOM_TOL {
        return Err(MapError::Tiling(format!("first branch starts at {}", specs[0].lo)));
    }
    let last = specs[specs.len() - 1].hi;
    if (last - 1.0).abs() > GEOM_TOL {
        return Err(MapError::Tiling(format!("last branch ends at {last}")));
    }
    for w in specs.windows(2) {
        if (w[0].hi - w[1].lo).abs() > GEOM_TOL {
            return Err(MapError::Tiling(format!("gap or overlap between {} and {}", w[0].hi, w[1].lo)));
        }
    }
    Ok(())
}

fn build_branch(i: usize, spec: &BranchSpec) -> Result<Branch, MapError> {
    let formula = expr::parse(&spec.formula).map_err(|source| MapError::Parse { branch: i, source })?;
    let domain = Interval::new(spec.lo.max(0.0), spec.hi.min(1.0))?;
    let eval = |x: f64| formula.eval_with_derivative(x).map_err(|source| MapError::Eval { branch: i, x, source });

    let mut sampled_min = f64::INFINITY;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for x in sample_points(domain, CONSTRUCTION_SAMPLES) {
        let (_, d) = eval(x)?;
        sampled_min = sampled_min.min(d.abs());
        if d > 0.0 {
            pos += 1;
        } else if d < 0.0 {
            neg += 1;
        }
    }
    let monotone_sign = match (pos, neg) {
        (_, 0) if pos > 0 => 1,
        (0, _) if neg > 0 => -1,
        _ => return Err(MapError::NotMonotone { branch: i }),
    };
    let (a, _) = eval(domain.lo)?;
    let (b, _) = eval(domain.hi)?;
    let (img_lo, img_hi) = if monotone_sign > 0 { (a, b) } else { (b, a) };
    if img_lo >= img_hi {
        return Err(MapError::NotMonotone { branch: i });
    }
    let image = Interval { lo: img_lo, hi: img_hi };

    let (min_slope, declared) = match spec.min_slope {
        Some(s) => (s, true),
        None => (SLOPE_SAFETY * sampled_min, false),
    };
    Ok(Branch {
        domain,
        formula,
        source: spec.formula.clone(),
        monotone_sign,
        min_slope,
        min_slope_declared: declared,
        sampled_min_slope: sampled_min,
        holder_constant: spec.holder_constant.unwrap_or(0.0),
        holder_declared: spec.holder_constant.is_some(),
        image,
    })
}

fn estimate_branch_holder(i: usize, b: &Branch, eps: f64, pairs: usize) -> Result<f64, MapError> {
    let slope = |x: f64| {
        b.value_and_slope(x).map(|(_, d)| d).map_err(|source| MapError::Eval { branch: i, x, source })
    };
    let (lo, len) = (b.domain.lo, b.domain.len());
    let mut best: f64 = 0.0;
    let mut consider = |x: f64, y: f64, dx: f64, dy: f64| {
        let gap = (x - y).abs();
        if gap > 0.0 {
            best = best.max((dx - dy).abs() / gap.powf(eps));
        }
    };

    // Adjacent pairs on every dyadic level.
    let levels = (pairs.max(2) as f64).log2().floor() as u32;
    let finest = 1usize << levels;
    let grid: Vec<(f64, f64)> = (0..=finest)
        .map(|k| {
            let x = if k == finest { b.domain.hi } else { lo + len * k as f64 / finest as f64 };
            slope(x).map(|d| (x, d))
        })
        .collect::<Result<_, _>>()?;
    for level in 1..=levels {
        let stride = finest >> level;
        for k in (0..finest).step_by(stride) {
            let (x, dx) = grid[k];
            let (y, dy) = grid[k + stride];
            consider(x, y, dx, dy);
        }
    }

    // Stratified random pairs at log-uniform separations.
    let mut rng = ChaCha8Rng::seed_from_u64(HOLDER_SEED ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    const STRATA: usize = 16;
    for k in 0..pairs {
        let stratum = (k % STRATA) as f64;
        let x = lo + len * (stratum + rng.random::<f64>()) / STRATA as f64;
        let scale = len * 10f64.powf(-6.0 * rng.random::<f64>());
        let y = (x + if rng.random::<bool>() { scale } else { -scale }).clamp(lo, b.domain.hi);
        consider(x, y, slope(x)?, slope(y)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    SlopeNotExpanding { min_slope: f64 },
    SlopeBelowDeclared { declared: f64, observed: f64 },
    NotMonotone,
    ImageOutsideUnit { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    pub branch: usize,
    pub observed_min_slope: f64,
    pub declared_min_slope: Option<f64>,
    pub computed_min_slope: f64,
    pub sign_consistent: bool,
    pub observed_image: (f64, f64),
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub branches: Vec<BranchReport>,
    pub accepted: bool,
}

impl ValidationReport {
    pub fn observed_min_slope(&self) -> f64 {
        self.branches.iter().map(|b| b.observed_min_slope).fold(f64::INFINITY, f64::min)
    }
}

/// Maps used throughout tests and examples.
pub mod catalog {
    use super::{BranchSpec, MapError, PiecewiseMap};

    /// Affine branches with their exact slope declared.
    fn affine(branches: &[(f64, f64, &str)], slope: f64) -> PiecewiseMap {
        let specs = branches.iter().map(|&(lo, hi, f)| BranchSpec::new(lo, hi, f).with_min_slope(slope)).collect();
        PiecewiseMap::new(specs, 1.0).expect("catalog maps tile [0, 1]")
    }

    pub fn doubling() -> PiecewiseMap {
        affine(&[(0.0, 0.5, "2*x"), (0.5, 1.0, "2*x-1")], 2.0)
    }

    pub fn tripling() -> PiecewiseMap {
        PiecewiseMap::new(
            vec![
                BranchSpec::new(0.0, 1.0 / 3.0, "3*x").with_min_slope(3.0),
                BranchSpec::new(1.0 / 3.0, 2.0 / 3.0, "3*x-1").with_min_slope(3.0),
                BranchSpec::new(2.0 / 3.0, 1.0, "3*x-2").with_min_slope(3.0),
            ],
            1.0,
        )
        .expect("tripling map")
    }

    pub fn tent() -> PiecewiseMap {
        affine(&[(0.0, 0.5, "2*x"), (0.5, 1.0, "2-2*x")], 2.0)
    }

    /// Markov map with branches `3x/2` on `[0, 2/3]` and `2x - 4/3` on `[2/3, 1]`.
    pub fn markov() -> PiecewiseMap {
        PiecewiseMap::new(
            vec![
                BranchSpec::new(0.0, 2.0 / 3.0, "3*x/2").with_min_slope(1.5),
                BranchSpec::new(2.0 / 3.0, 1.0, "2*x-4/3").with_min_slope(2.0),
            ],
            1.0,
        )
        .expect("markov map")
    }

    /// Two disjoint doubling maps on `[0, 1/2]` and `[1/2, 1]`.
    pub fn two_component() -> PiecewiseMap {
        affine(&[(0.0, 0.25, "2*x"), (0.25, 0.5, "2*x-1/2"), (0.5, 0.75, "2*x-1/2"), (0.75, 1.0, "2*x-1")], 2.0)
    }

    /// The four-branch map `x -> 4x mod 1`.
    pub fn quadrupling() -> PiecewiseMap {
        affine(&[(0.0, 0.25, "4*x"), (0.25, 0.5, "4*x-1"), (0.5, 0.75, "4*x-2"), (0.75, 1.0, "4*x-3")], 4.0)
    }

    /// Three full nonlinear branches `2.5u + 1.5u^2`, `u = x - k/3`, with
    /// `|τ'| ∈ [2.5, 3.5]` and `τ''= 3`.
    pub fn nonlinear(holder_exponent: f64) -> Result<PiecewiseMap, MapError> {
        PiecewiseMap::from_formulas(
            &[
                (0.0, 1.0 / 3.0, "2.5*x + 1.5*x^2"),
                (1.0 / 3.0, 2.0 / 3.0, "2.5*(x - 1/3) + 1.5*(x - 1/3)^2"),
                (2.0 / 3.0, 1.0, "2.5*(x - 2/3) + 1.5*(x - 2/3)^2"),
            ],
            holder_exponent,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;

    #[test]
    fn tripling_accepted_with_slope_three() {
        let report = tripling().validate(100).unwrap();
        assert!(report.accepted);
        assert!((report.observed_min_slope() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contracting_branch_rejected() {
        let map = PiecewiseMap::from_formulas(&[(0.0, 1.0, "0.5*x")], 1.0).unwrap();
        let report = map.validate(100).unwrap();
        assert!(!report.accepted);
        assert!((report.observed_min_slope() - 0.5).abs() < 1e-15);
        assert!(report.branches[0]
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SlopeNotExpanding { .. })));
    }

    #[test]
    fn markov_accepted_with_slope_one_and_a_half() {
        let report = markov().validate(100).unwrap();
        assert!(report.accepted);
        assert_eq!(report.observed_min_slope(), 1.5);
        assert_eq!(markov().min_slope_global(), 1.5);
    }

    #[test]
    fn declared_slope_above_observed_is_flagged() {
        let map = PiecewiseMap::new(vec![BranchSpec::new(0.0, 1.0, "2*x - x^2/4").with_min_slope(2.0)], 1.0);
        // image [0, 1.75] leaves [0,1] as well
        let report = map.unwrap().validate(50).unwrap();
        let v = &report.branches[0].violations;
        assert!(v.iter().any(|v| matches!(v, Violation::SlopeBelowDeclared { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::ImageOutsideUnit { .. })));
    }

    #[test]
    fn computed_slope_uses_safety_factor() {
        let map = PiecewiseMap::from_formulas(&[(0.0, 0.5, "2*x"), (0.5, 1.0, "2*x-1")], 1.0).unwrap();
        assert!((map.branches[0].min_slope - 2.0 * SLOPE_SAFETY).abs() < 1e-15);
        let r = map.validate(10).unwrap();
        assert_eq!(r.branches[0].declared_min_slope, None);
        assert!((r.branches[0].computed_min_slope - 2.0 * SLOPE_SAFETY).abs() < 1e-15);
    }

    #[test]
    fn tiling_errors() {
        assert!(matches!(
            PiecewiseMap::from_formulas(&[(0.0, 0.4, "2*x"), (0.5, 1.0, "2*x-1")], 1.0),
            Err(MapError::Tiling(_))
        ));
        assert!(matches!(
            PiecewiseMap::from_formulas(&[(0.1, 1.0, "2*x")], 1.0),
            Err(MapError::Tiling(_))
        ));
        assert!(matches!(PiecewiseMap::from_formulas(&[(0.0, 1.0, "2*x")], 0.0), Err(MapError::Exponent(_))));
        assert!(matches!(
            PiecewiseMap::from_formulas(&[(0.0, 1.0, "2*y")], 1.0),
            Err(MapError::Parse { branch: 0, .. })
        ));
        assert!(matches!(
            PiecewiseMap::from_formulas(&[(0.0, 1.0, "(x-0.5)^2")], 1.0),
            Err(MapError::NotMonotone { branch: 0 })
        ));
        assert!(matches!(
            PiecewiseMap::from_formulas(&[(0.0, 1.0, "log(x)")], 1.0),
            Err(MapError::Eval { branch: 0, .. })
        ));
    }

    #[test]
    fn branches_are_sorted_and_breakpoints_reported() {
        let map = PiecewiseMap::from_formulas(&[(0.5, 1.0, "2*x-1"), (0.0, 0.5, "2*x")], 1.0).unwrap();
        assert_eq!(map.breakpoints(), vec![0.0, 0.5, 1.0]);
        assert_eq!(map.branch_count(), 2);
        assert_eq!(map.branches[1].image, Interval { lo: 0.0, hi: 1.0 });
        let tent = tent();
        assert_eq!(tent.branches[1].monotone_sign, -1);
        assert_eq!(tent.branches[1].image, Interval { lo: 0.0, hi: 1.0 });
    }

    #[test]
    fn holder_linear_is_zero() {
        assert_eq!(tripling().estimate_holder_constants(64).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn holder_lipschitz_derivative() {
        // τ' = 1 + 2x is exactly 2-Lipschitz; every sampled pair gives 2.
        let map = PiecewiseMap::from_formulas(&[(0.0, 0.25, "x + x^2"), (0.25, 1.0, "4*x/3 - 1/3")], 1.0).unwrap();
        let m = map.estimate_holder_constants(256).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-6, "{}", m[0]);
    }

    #[test]
    fn holder_square_root_derivative() {
        // τ' = 2 + sqrt(x), |sqrt x - sqrt y| <= |x - y|^{1/2}, tight at y = 0.
        let map = PiecewiseMap::from_formulas(
            &[(0.0, 0.25, "2*x + 2/3*x^1.5"), (0.25, 1.0, "x")],
            0.5,
        );
        // the second branch is not expanding but estimation does not care
        let m = map.unwrap().estimate_holder_constants(1024).unwrap();
        assert!(m[0] <= 1.0 + 1e-12 && m[0] > 0.999, "{}", m[0]);
    }

    #[test]
    fn holder_monotone_in_pair_count() {
        let map = nonlinear(0.5).unwrap();
        let mut prev = vec![0.0; 2];
        for pairs in [10, 20, 40, 80, 160, 320] {
            let m = map.estimate_holder_constants(pairs).unwrap();
            for (a, b) in m.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = m;
        }
    }

    #[test]
    fn slope_condition_examples() {
        let (v, ok) = slope_condition(3.0, 1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15 && ok);
        let (v, ok) = slope_condition(2.0, 1.0).unwrap();
        assert_eq!(v, 1.0);
        assert!(!ok);
        let (v, ok) = slope_condition(2.62, 2.0).unwrap();
        assert!((v - 0.9995).abs() < 1e-4 && ok, "{v}");
        assert!(slope_condition(0.9, 1.0).is_err());
        assert!(slope_condition(3.0, 0.5).is_err());
    }

    #[test]
    fn slope_threshold_for_p_two() {
        // u + u^2 = 1 with u = s^{-1/2}  =>  u = (sqrt 5 - 1)/2, s* = u^{-2}
        let u = (5f64.sqrt() - 1.0) / 2.0;
        let s_star = 1.0 / (u * u);
        assert!((s_star - 2.618).abs() < 1e-3);
        let (v, _) = slope_condition(s_star, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!(!slope_condition(s_star * 0.999, 2.0).unwrap().1);
        assert!(slope_condition(s_star * 1.001, 2.0).unwrap().1);
    }

    #[test]
    fn inverse_examples() {
        let d = doubling();
        assert_eq!(d.branches[0].inverse(0.5, INVERSE_TOL).unwrap(), 0.25);
        let m = markov();
        let x = m.branches[1].inverse(0.0, INVERSE_TOL).unwrap();
        assert!((x - 2.0 / 3.0).abs() < 1e-12);
        let t = tripling();
        assert!(matches!(t.branches[0].inverse(1.2, INVERSE_TOL), Err(MapError::OutOfImage { .. })));
    }

    #[test]
    fn inverse_of_decreasing_nonlinear_branch() {
        let map = PiecewiseMap::from_formulas(&[(0.0, 0.5, "2*x"), (0.5, 1.0, "1 - (2*x - 1)^1.5")], 1.0);
        let map = map.unwrap();
        let b = &map.branches[1];
        for &y in &[0.0, 0.1, 0.37, 0.9, 1.0] {
            let x = b.inverse(y, INVERSE_TOL).unwrap();
            assert!((b.value(x).unwrap() - y).abs() <= 2.0 * INVERSE_TOL);
        }
    }
}
