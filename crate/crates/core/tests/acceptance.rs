//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use fpop::analysis::{correlation_invariant, correlation_lebesgue, ly_constants_for_map, ly_verify};
use fpop::expr::parse;
use fpop::gridfn::{osc_profile, variation_default, GridFunction};
use fpop::lorenz::{fit_piecewise, return_map_from_config, LorenzConfig};
use fpop::map_model::{catalog, slope_condition};
use fpop::transfer::{invariant_density, iterate_norm_series, spectrum, ulam_matrix};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, title: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = body();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
    println!(
        "criterion {id} {}: {title}: {}; {timing}{}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        if in_time { "" } else { " (over time limit)" }
    );
    pass
}

fn slope_gate() -> Outcome {
    let (tri, tri_ok) = catalog::tripling().check_slope_condition(1.0).unwrap();
    let (dbl, dbl_ok) = catalog::doubling().check_slope_condition(1.0).unwrap();
    let (thr, _) = slope_condition(2.618, 2.0).unwrap();
    let pass = (tri - 2.0 / 3.0).abs() < 1e-12 && tri_ok && (dbl - 1.0).abs() < 1e-12 && !dbl_ok && (thr - 1.0).abs() < 1e-3;
    Outcome { pass, detail: format!("tripling {tri} ({tri_ok}), doubling {dbl} ({dbl_ok}), s=2.618 p=2 gives {thr}") }
}

fn ly_constants_tripling() -> Outcome {
    let c = ly_constants_for_map(&catalog::tripling(), 1.0, 1.0, 0.125, None).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let (k, cc) = (c.k.unwrap_or(f64::NAN), c.c.unwrap_or(f64::NAN));
    let pass = c.d == 0.0 && close(c.alpha, 2.0 / 3.0) && close(c.beta, 8.0 / 3.0) && close(k, 3.0) && close(cc, 10.0);
    Outcome { pass, detail: format!("D={} alpha={} beta={} K={k} C={cc}", c.d, c.alpha, c.beta) }
}

fn empirical_ly() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, map) in [("tripling", catalog::tripling()), ("markov", catalog::markov())] {
        let v = ly_verify(&map, 1.0, 0.125, 100, 4096, 20_240_917).unwrap();
        pass &= v.violations == 0 && v.trials.len() == 100;
        let worst = v.trials.iter().map(|t| t.margin + t.slack).fold(f64::INFINITY, f64::min);
        parts.push(format!("{name}: {} violations of 100, smallest margin+slack {worst:.3e}", v.violations));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn invariant_densities() -> Outcome {
    let h3 = invariant_density(&ulam_matrix(&catalog::tripling(), 243).unwrap(), 1e-14, 100_000).unwrap();
    let e3 = h3.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let hm = invariant_density(&ulam_matrix(&catalog::markov(), 300).unwrap(), 1e-14, 100_000).unwrap();
    // oracle from the 2x2 balance system of the two Markov intervals
    let em = (0..300)
        .map(|k| (hm.values()[k] - if k < 200 { 9.0 / 8.0 } else { 0.75 }).abs())
        .fold(0.0, f64::max);
    Outcome { pass: e3 < 1e-10 && em < 1e-8, detail: format!("tripling sup error {e3:.3e}, markov sup error {em:.3e}") }
}

fn spectral_structure() -> Outcome {
    let op = ulam_matrix(&catalog::doubling(), 64).unwrap();
    let report = spectrum(&op, 64).unwrap();
    let oracle = op.to_dense().complex_eigenvalues();
    let computed: Vec<Complex<f64>> = report.eigenvalues.iter().map(|&(re, im)| Complex::new(re, im)).collect();
    let nearest = |set: &[Complex<f64>], z: Complex<f64>| set.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
    let agree = oracle.iter().all(|&z| nearest(&computed, z) < 1e-8);
    let mut found = Vec::new();
    let mut includes = true;
    for target in [1.0, 0.5, 0.25, 0.125] {
        let d = nearest(&computed, Complex::new(target, 0.0));
        includes &= d < 1e-8;
        found.push(format!("{target}: {d:.2e}"));
    }
    let two = spectrum(&ulam_matrix(&catalog::two_component(), 64).unwrap(), 8).unwrap();
    let pass = agree && includes && two.unit_multiplicity == 2;
    Outcome {
        pass,
        detail: format!(
            "solver agrees with dense oracle: {agree}; distance to nearest eigenvalue {}; |lambda_2| = {:.3e}; two-component unit multiplicity {}",
            found.join(", "),
            report.second_modulus().unwrap_or(0.0),
            two.unit_multiplicity
        ),
    }
}

fn iterate_boundedness() -> Outcome {
    let map = catalog::tripling();
    let f = GridFunction::indicator(2187, 0.0, 0.5).unwrap();
    let s = iterate_norm_series(&map, &f, 1.0, 0.125, 30).unwrap();
    let bound = s.bound.unwrap_or(f64::NAN);
    let pass = (bound - 5.0).abs() < 1e-12
        && s.n0.is_some_and(|n0| s.norms[n0..].iter().all(|&v| v <= bound))
        && s.norms.len() == 31;
    let max_after = s.n0.map(|n0| s.norms[n0..].iter().copied().fold(0.0, f64::max));
    Outcome { pass, detail: format!("bound {bound}, n0 = {:?}, largest norm from n0 on {max_after:?}", s.n0) }
}

fn correlation_decay() -> Outcome {
    let map = catalog::tripling();
    let x = parse("x").unwrap();
    let n = 2187;
    let cm = correlation_lebesgue(&map, &x, &x, 20, n).unwrap();
    let cmu = correlation_invariant(&map, &x, &x, 20, n).unwrap();
    let rate = cm.fitted_rate.unwrap_or(f64::NAN);
    let r2 = cm.fit_quality.unwrap_or(f64::NAN);
    let lambda2 = spectrum(&ulam_matrix(&map, n).unwrap(), 4).unwrap().second_modulus().unwrap_or(0.0);
    let diff = cm.c_values.iter().zip(&cmu.c_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let in_range = rate > 0.28 && rate < 0.38 && r2 > 0.98;
    let consistent = (rate - lambda2).abs() <= 0.05;
    Outcome {
        pass: in_range && consistent && diff <= 1e-10,
        detail: format!(
            "fitted_rate {rate:.4}, R^2 {r2:.5} (in range: {in_range}); |lambda_2| of the Ulam matrix {lambda2:.3e} (consistent within 0.05: {consistent}); max |C_mu - C_m| {diff:.2e}"
        ),
    }
}

fn oscillation_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let n = 512;
    let mut mismatches = 0;
    for _ in 0..50 {
        let f = common::random_step(&mut rng, n);
        let r: f64 = rng.random_range(0.0..0.3);
        let fast = osc_profile(&f, r);
        // independent scan over every pair of midpoints within distance r
        for k in 0..n {
            let ck = (k as f64 + 0.5) / n as f64;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..n {
                if ((j as f64 + 0.5) / n as f64 - ck).abs() <= r {
                    lo = lo.min(f.values()[j]);
                    hi = hi.max(f.values()[j]);
                }
            }
            if fast.values()[k] != hi - lo {
                mismatches += 1;
            }
        }
    }
    let var = variation_default(&GridFunction::indicator(1024, 0.0, 0.5).unwrap(), 1.0, 1.0, 0.125).variation;
    let maps = common::maps();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (_, map) = &maps[rng.random_range(0..maps.len())];
        let branch = rng.random_range(0..map.branch_count());
        let f = common::random_step(&mut rng, n);
        let r = rng.random_range(0.001..0.2);
        worst = worst.max(common::composition_excess(map, branch, &f, r));
    }
    let pass = mismatches == 0 && (var - 2.0).abs() <= 0.1 && worst <= 2.0 / n as f64;
    Outcome {
        pass,
        detail: format!(
            "sliding vs brute mismatches {mismatches}; var_(1,1)(indicator) = {var:.4}; largest composition excess {worst:.2e}"
        ),
    }
}

fn lorenz_pipeline() -> Outcome {
    let cfg = LorenzConfig::default();
    let (_, data) = return_map_from_config(&cfg).unwrap();
    let (left, right) = data.monotonicity_violations();
    let fit = fit_piecewise(&data, 3);
    let slopes: Vec<f64> = fit.as_ref().map(|f| f.branches.iter().map(|b| b.central_min_abs_slope).collect()).unwrap_or_default();
    let pass = data.pairs.len() >= 500
        && left <= 0.05
        && right <= 0.05
        && slopes.len() == 2
        && slopes.iter().all(|&s| s > 1.0);
    Outcome {
        pass,
        detail: format!(
            "{} pairs, monotonicity violations {left:.4} / {right:.4}, central slopes {slopes:?}{}",
            data.pairs.len(),
            fit.err().map(|e| format!(", fit error: {e}")).unwrap_or_default()
        ),
    }
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        check(1, "slope-condition gate", s(1), slope_gate),
        check(2, "LY constants of the tripling map", s(1), ly_constants_tripling),
        check(3, "empirical LY inequality", s(60), empirical_ly),
        check(4, "invariant densities", s(10), invariant_densities),
        check(5, "spectral structure", s(10), spectral_structure),
        check(6, "iterate boundedness", s(30), iterate_boundedness),
        check(7, "correlation decay", s(60), correlation_decay),
        check(8, "oscillation machinery", s(30), oscillation_machinery),
        check(9, "Lorenz pipeline", s(120), lorenz_pipeline),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed} of {} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
