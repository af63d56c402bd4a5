//! Lorenz trajectories, their "next maximum of z" return map, and a
//! two-branch polynomial model of that map.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::config::{BranchConfig, MapConfig, SCHEMA_VERSION};
use crate::expr::{parse, Expr};
use crate::fmt17;

/// Fits whose RMS residual exceeds this are rejected as a model mismatch.
pub const MISMATCH_RMS: f64 = 0.05;
pub const MIN_FIT_PAIRS: usize = 100;
pub const MIN_BRANCH_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum LorenzError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory left every bounded region at t = {t}")]
    BlowUp { t: f64 },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("maxima span a degenerate range [{0}, {0}]")]
    DegenerateRange(f64),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("two-branch model does not fit: residual RMS {rms} on branch {branch} exceeds {MISMATCH_RMS}")]
    ModelMismatch { branch: usize, rms: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub dt: f64,
    pub t_max: f64,
    pub transient: f64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        LorenzConfig {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            x0: 1.0,
            y0: 1.0,
            z0: 1.0,
            dt: 0.001,
            t_max: 2000.0,
            transient: 50.0,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<(), LorenzError> {
        let all = [self.sigma, self.rho, self.beta, self.x0, self.y0, self.z0, self.dt, self.t_max, self.transient];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(LorenzError::Config("all parameters must be finite".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(LorenzError::Config(format!("dt must lie in (0, 0.01], got {}", self.dt)));
        }
        if self.transient < 0.0 || self.t_max <= self.transient {
            return Err(LorenzError::Config(format!(
                "need 0 <= transient < t_max, got transient = {}, t_max = {}",
                self.transient, self.t_max
            )));
        }
        Ok(())
    }

    fn field(&self, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        [self.sigma * (y - x), x * (self.rho - z) - y, x * y - self.beta * z]
    }
}

fn axpy(s: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2]]
}

/// Samples recorded after the transient.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV `t,x,y,z`, keeping every `stride`-th sample.
    pub fn to_csv(&self, stride: usize) -> String {
        let mut out = String::from("t,x,y,z\n");
        for k in (0..self.len()).step_by(stride.max(1)) {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt17(self.t[k]),
                fmt17(self.x[k]),
                fmt17(self.y[k]),
                fmt17(self.z[k])
            );
        }
        out
    }
}

/// Fixed-step classical RK4.
pub fn integrate(cfg: &LorenzConfig) -> Result<Trajectory, LorenzError> {
    cfg.validate()?;
    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let first = (cfg.transient / cfg.dt).ceil() as usize;
    let kept = steps + 1 - first.min(steps + 1);
    let mut traj =
        Trajectory { t: Vec::with_capacity(kept), x: Vec::with_capacity(kept), y: Vec::with_capacity(kept), z: Vec::with_capacity(kept) };
    let h = cfg.dt;
    let mut s = [cfg.x0, cfg.y0, cfg.z0];
    for k in 0..=steps {
        if k >= first {
            traj.t.push(k as f64 * h);
            traj.x.push(s[0]);
            traj.y.push(s[1]);
            traj.z.push(s[2]);
        }
        if k == steps {
            break;
        }
        let k1 = cfg.field(s);
        let k2 = cfg.field(axpy(s, 0.5 * h, k1));
        let k3 = cfg.field(axpy(s, 0.5 * h, k2));
        let k4 = cfg.field(axpy(s, h, k3));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if s.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(LorenzError::BlowUp { t: (k + 1) as f64 * h });
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Maximum {
    pub t: f64,
    pub z: f64,
}

/// Local maxima `z_{k-1} < z_k >= z_{k+1}` refined by the parabola through the
/// three samples. `t` must be uniformly spaced.
pub fn extract_z_maxima(t: &[f64], z: &[f64]) -> Result<Vec<Maximum>, LorenzError> {
    if z.len() < 3 || t.len() != z.len() {
        return Err(LorenzError::Insufficient(format!("need at least 3 samples, got {}", z.len())));
    }
    let mut out = Vec::new();
    for k in 1..z.len() - 1 {
        let (a, b, c) = (z[k - 1], z[k], z[k + 1]);
        if a < b && b >= c {
            let curv = a - 2.0 * b + c;
            let max = if curv < 0.0 {
                let h = t[k + 1] - t[k];
                let u = (a - c) / (2.0 * curv);
                Maximum { t: t[k] - u * h, z: b - (c - a).powi(2) / (8.0 * curv) }
            } else {
                Maximum { t: t[k], z: b }
            };
            out.push(max);
        }
    }
    if out.len() < 2 {
        return Err(LorenzError::Insufficient(format!("found {} local maxima of z, need at least 2", out.len())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnMapData {
    pub maxima: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
    pub normalized_pairs: Vec<(f64, f64)>,
    pub z_min: f64,
    pub z_max: f64,
    /// Abscissa of the highest normalized ordinate.
    pub cusp_estimate: f64,
}

impl ReturnMapData {
    pub fn normalize(&self, z: f64) -> f64 {
        (z - self.z_min) / (self.z_max - self.z_min)
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.z_min + u * (self.z_max - self.z_min)
    }

    /// Fraction of consecutive (sorted by abscissa) points that break the
    /// expected monotonicity, on the left and on the right of the cusp.
    pub fn monotonicity_violations(&self) -> (f64, f64) {
        let mut left: Vec<(f64, f64)> = self.normalized_pairs.iter().copied().filter(|p| p.0 < self.cusp_estimate).collect();
        let mut right: Vec<(f64, f64)> =
            self.normalized_pairs.iter().copied().filter(|p| p.0 > self.cusp_estimate).collect();
        let frac = |pts: &mut Vec<(f64, f64)>, increasing: bool| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.len() < 2 {
                return 0.0;
            }
            let bad = pts.windows(2).filter(|w| if increasing { w[1].1 < w[0].1 } else { w[1].1 > w[0].1 }).count();
            bad as f64 / (pts.len() - 1) as f64
        };
        (frac(&mut left, true), frac(&mut right, false))
    }

    /// CSV `z_k,z_next` in original units.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z_k,z_next\n");
        for &(a, b) in &self.pairs {
            let _ = writeln!(out, "{},{}", fmt17(a), fmt17(b));
        }
        out
    }
}

pub fn build_return_map(maxima: &[f64]) -> Result<ReturnMapData, LorenzError> {
    if maxima.len() < 3 {
        return Err(LorenzError::Insufficient(format!("need at least 3 maxima, got {}", maxima.len())));
    }
    let z_min = maxima.iter().cloned().fold(f64::INFINITY, f64::min);
    let z_max = maxima.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if z_max <= z_min {
        return Err(LorenzError::DegenerateRange(z_min));
    }
    let scale = |z: f64| ((z - z_min) / (z_max - z_min)).clamp(0.0, 1.0);
    let pairs: Vec<(f64, f64)> = maxima.windows(2).map(|w| (w[0], w[1])).collect();
    let normalized_pairs: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (scale(a), scale(b))).collect();
    let cusp_estimate = normalized_pairs.iter().fold((f64::NAN, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { *p } else { best }).0;
    Ok(ReturnMapData { maxima: maxima.to_vec(), pairs, normalized_pairs, z_min, z_max, cusp_estimate })
}

/// Trajectory, maxima and return map in one call.
pub fn return_map_from_config(cfg: &LorenzConfig) -> Result<(Trajectory, ReturnMapData), LorenzError> {
    let traj = integrate(cfg)?;
    let maxima = extract_z_maxima(&traj.t, &traj.z)?;
    let data = build_return_map(&maxima.iter().map(|m| m.z).collect::<Vec<_>>())?;
    Ok((traj, data))
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchFit {
    pub lo: f64,
    pub hi: f64,
    /// Coefficients of the polynomial in `x - center`, lowest degree first.
    pub coefficients: Vec<f64>,
    pub center: f64,
    pub formula: String,
    pub points: usize,
    pub residual_rms: f64,
    pub min_abs_slope: f64,
    /// `min |fit'|` over the middle 80% of the branch domain.
    pub central_min_abs_slope: f64,
    /// Heuristic Hölder exponent of the derivative, from the data alone.
    pub holder_exponent_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseFit {
    pub degree: usize,
    pub cusp: f64,
    pub branches: Vec<BranchFit>,
}

impl PiecewiseFit {
    /// A map configuration for the fitted model. The exponent is the smallest
    /// branch estimate clamped to `[0.05, 1]`, or 1 without estimates.
    pub fn to_config(&self) -> MapConfig {
        let eps = self
            .branches
            .iter()
            .filter_map(|b| b.holder_exponent_estimate)
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))))
            .map_or(1.0, |e| e.clamp(0.05, 1.0));
        MapConfig {
            v: SCHEMA_VERSION,
            epsilon: eps,
            branches: self
                .branches
                .iter()
                .map(|b| BranchConfig { lo: b.lo, hi: b.hi, formula: b.formula.clone(), min_slope: None, holder_constant: None })
                .collect(),
        }
    }

    pub fn branch_exprs(&self) -> Vec<Expr> {
        self.branches.iter().map(|b| parse(&b.formula).expect("fitted formulas parse")).collect()
    }
}

fn poly_formula(coeffs: &[f64], center: f64) -> String {
    let u = format!("(x - {center:?})");
    let mut s = format!("{:?}", coeffs[coeffs.len() - 1]);
    for c in coeffs[..coeffs.len() - 1].iter().rev() {
        s = format!("{c:?} + {u}*({s})");
    }
    s
}

fn poly_eval(coeffs: &[f64], u: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in coeffs.iter().rev() {
        d = d * u + v;
        v = v * u + c;
    }
    (v, d)
}

/// Least-squares polynomial of `degree` through `pts` in powers of `x - center`.
fn least_squares(pts: &[(f64, f64)], degree: usize, center: f64) -> Result<Vec<f64>, LorenzError> {
    let a = DMatrix::from_fn(pts.len(), degree + 1, |i, j| (pts[i].0 - center).powi(j as i32));
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-13).map_err(|e| LorenzError::Fit(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

/// Hölder exponent of the derivative from data alone: resample the sorted
/// points on a uniform grid by linear interpolation, take one-step difference
/// quotients, and regress `log max |D(x + h) - D(x)|` on `log h` over dyadic
/// lags `h`.
pub fn holder_exponent_estimate(pts: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = pts.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let levels = ((sorted.len() / 2) as f64).log2().floor() as i32;
    if levels < 5 {
        return None;
    }
    let g = 1usize << levels;
    let delta = (hi - lo) / g as f64;
    let interp = |x: f64| {
        let k = sorted.partition_point(|p| p.0 < x);
        if k == 0 {
            sorted[0].1
        } else if k >= sorted.len() {
            sorted[sorted.len() - 1].1
        } else {
            let (a, b) = (sorted[k - 1], sorted[k]);
            if b.0 > a.0 {
                a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
            } else {
                a.1
            }
        }
    };
    let ys: Vec<f64> = (0..=g).map(|i| interp(lo + i as f64 * delta)).collect();
    let d: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]) / delta).collect();
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    for j in 0..(levels - 2) {
        let lag = 1usize << j;
        let worst = (0..d.len() - lag).map(|i| (d[i + lag] - d[i]).abs()).fold(0.0, f64::max);
        if worst > 0.0 {
            xs.push((lag as f64 * delta).ln());
            ls.push(worst.ln());
        }
    }
    if xs.len() < 3 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ls.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Two polynomial branches of `degree`, split at the cusp estimate.
/// Domain bounds and normalized points of one branch.
type Side = (f64, f64, Vec<(f64, f64)>);

pub fn fit_piecewise(data: &ReturnMapData, degree: usize) -> Result<PiecewiseFit, LorenzError> {
    if !(1..=6).contains(&degree) {
        return Err(LorenzError::Fit(format!("degree must lie in 1..=6, got {degree}")));
    }
    let pts = &data.normalized_pairs;
    if pts.len() < MIN_FIT_PAIRS {
        return Err(LorenzError::Insufficient(format!("need at least {MIN_FIT_PAIRS} pairs, got {}", pts.len())));
    }
    let c = data.cusp_estimate;
    let sides: [Side; 2] = [
        (0.0, c, pts.iter().copied().filter(|p| p.0 <= c).collect()),
        (c, 1.0, pts.iter().copied().filter(|p| p.0 > c).collect()),
    ];
    let mut branches = Vec::with_capacity(2);
    for (i, (lo, hi, side)) in sides.into_iter().enumerate() {
        if side.len() < MIN_BRANCH_POINTS {
            return Err(LorenzError::Fit(format!(
                "branch {i} on [{lo}, {hi}] has {} points, need at least {MIN_BRANCH_POINTS}",
                side.len()
            )));
        }
        let center = 0.5 * (lo + hi);
        let coeffs = least_squares(&side, degree, center)?;
        let rms = (side.iter().map(|p| (poly_eval(&coeffs, p.0 - center).0 - p.1).powi(2)).sum::<f64>()
            / side.len() as f64)
            .sqrt();
        if rms > MISMATCH_RMS {
            return Err(LorenzError::ModelMismatch { branch: i, rms });
        }
        let slope_min = |a: f64, b: f64| {
            (0..=1000)
                .map(|k| poly_eval(&coeffs, a + (b - a) * k as f64 / 1000.0 - center).1.abs())
                .fold(f64::INFINITY, f64::min)
        };
        let w = hi - lo;
        branches.push(BranchFit {
            lo,
            hi,
            formula: poly_formula(&coeffs, center),
            center,
            points: side.len(),
            residual_rms: rms,
            min_abs_slope: slope_min(lo, hi),
            central_min_abs_slope: slope_min(lo + 0.1 * w, hi - 0.1 * w),
            holder_exponent_estimate: holder_exponent_estimate(&side, lo, hi),
            coefficients: coeffs,
        });
    }
    Ok(PiecewiseFit { degree, cusp: c, branches })
}
