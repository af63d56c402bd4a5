mod common;

use fpop::gridfn::{osc_profile, GridFunction};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn step_function(seed: u64, n: usize) -> GridFunction {
    common::random_step(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition_with_an_inverse_branch_shrinks_radii(
        seed in any::<u64>(),
        map_index in 0usize..6,
        branch_pick in 0usize..4,
        r in 0.001f64..0.2,
    ) {
        let (name, map) = common::maps().swap_remove(map_index);
        let branch = branch_pick % map.branch_count();
        let f = step_function(seed, 512);
        let excess = common::composition_excess(&map, branch, &f, r);
        prop_assert!(excess <= 1e-12, "{name} branch {branch}: excess {excess}");
    }

    #[test]
    fn sup_on_an_interval_is_bounded_by_local_oscillation(
        seed in any::<u64>(),
        start in 0usize..400,
        len in 1usize..112,
    ) {
        let n = 512;
        let f = step_function(seed, n);
        let b = len as f64 / n as f64;
        let osc = osc_profile(&f, b);
        let cells = start..start + len;
        let sup = cells.clone().map(|k| f.values()[k].abs()).fold(0.0, f64::max);
        let osc_mean = cells.clone().map(|k| osc.values()[k]).sum::<f64>() / n as f64 / b;
        let abs_mean = cells.map(|k| f.values()[k].abs()).sum::<f64>() / n as f64 / b;
        prop_assert!(sup <= osc_mean + abs_mean + 1e-12, "{sup} > {osc_mean} + {abs_mean}");
    }

    #[test]
    fn lq_on_a_subinterval_is_bounded_by_local_oscillation(
        seed in any::<u64>(),
        start in 0usize..400,
        len in 1usize..112,
        sub in (0.0f64..1.0, 0.0f64..1.0),
        q in 1.01f64..6.0,
    ) {
        let n = 512;
        let nf = n as f64;
        let f = step_function(seed, n);
        let b = len as f64 / nf;
        let osc = osc_profile(&f, b);
        let (u, v) = if sub.0 <= sub.1 { sub } else { (sub.1, sub.0) };
        let j0 = start + (u * len as f64) as usize;
        let j1 = (start + (v * len as f64).ceil() as usize).clamp(j0 + 1, start + len);
        let lq = |vals: &mut dyn Iterator<Item = f64>| (vals.map(|x| x.abs().powf(q)).sum::<f64>() / nf).powf(1.0 / q);
        let lhs = lq(&mut (j0..j1).map(|k| f.values()[k]));
        let osc_y = lq(&mut (start..start + len).map(|k| osc.values()[k]));
        let f_y = lq(&mut (start..start + len).map(|k| f.values()[k]));
        let ratio = (j1 - j0) as f64 / nf / b;
        let rhs = ratio.powf(1.0 / q) * (osc_y + f_y);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
    }
}
