#![allow(dead_code)]

use fpop::gridfn::GridFunction;
use fpop::map_model::{catalog, PiecewiseMap, INVERSE_TOL};
use rand::Rng;

pub fn maps() -> Vec<(&'static str, PiecewiseMap)> {
    vec![
        ("doubling", catalog::doubling()),
        ("tripling", catalog::tripling()),
        ("tent", catalog::tent()),
        ("markov", catalog::markov()),
        ("quadrupling", catalog::quadrupling()),
        ("nonlinear", catalog::nonlinear(1.0).unwrap()),
    ]
}

/// Step function on `n` cells with 1 to 8 jumps at random cell edges.
pub fn random_step(rng: &mut impl Rng, n: usize) -> GridFunction {
    let jumps = rng.random_range(1..=8usize);
    let mut cuts: Vec<usize> = (0..jumps).map(|_| rng.random_range(1..n)).collect();
    cuts.sort_unstable();
    let levels: Vec<f64> = (0..=jumps).map(|_| rng.random_range(-2.0..2.0)).collect();
    let values = (0..n).map(|k| levels[cuts.partition_point(|&c| c <= k)]).collect();
    GridFunction::new(values).unwrap()
}

/// Range of the step function `f` over the cells containing points of `[lo, hi]`.
pub fn step_range(f: &GridFunction, lo: f64, hi: f64) -> f64 {
    let n = f.n() as f64;
    let first = ((lo * n).floor().max(0.0)) as usize;
    let last = ((hi * n).floor() as usize + 1).min(f.n()).max(first + 1);
    let slice = &f.values()[first..last];
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Largest excess of `osc(f∘τ_i⁻¹, r, y)` over `osc(f, r/s_i, τ_i⁻¹y)` across
/// the grid midpoints `y` of the branch image. The left side samples
/// `f∘τ_i⁻¹` at the image midpoints; the right side is the exact range of
/// the step function over the branch domain.
pub fn composition_excess(map: &PiecewiseMap, branch: usize, f: &GridFunction, r: f64) -> f64 {
    let b = &map.branches[branch];
    let n = f.n();
    let s = b.min_slope;
    let ys: Vec<f64> =
        (0..n).map(|k| (k as f64 + 0.5) / n as f64).filter(|&y| y >= b.image.lo && y <= b.image.hi).collect();
    let pre: Vec<f64> = ys.iter().map(|&y| b.inverse(y, INVERSE_TOL).unwrap()).collect();
    let g: Vec<f64> = pre.iter().map(|&x| f.at(x)).collect();
    let mut worst = f64::NEG_INFINITY;
    for (j, &y) in ys.iter().enumerate() {
        let window = ys.iter().zip(&g).filter(|(yk, _)| (*yk - y).abs() <= r).map(|(_, v)| *v);
        let (lo, hi) = window.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| (a.min(v), c.max(v)));
        let lhs = hi - lo;
        let x = pre[j];
        // widen by the inversion tolerance so rounding cannot exclude a sampled preimage
        let rad = r / s + 1e-9;
        let rhs = step_range(f, (x - rad).max(b.domain.lo), (x + rad).min(b.domain.hi));
        worst = worst.max(lhs - rhs);
    }
    worst
}
