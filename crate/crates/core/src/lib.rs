//! Frobenius–Perron operators of piecewise expanding interval maps.
//!
//! The crate covers the whole pipeline: parsing branch formulas, validating
//! maps, representing densities on uniform grids, generalized (oscillation
//! based) variations, Lasota–Yorke constants, Ulam discretizations with their
//! spectra, decay of correlations, and extraction of a Lorenz return map.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod expr;
pub mod gridfn;
pub mod lorenz;
pub mod map_model;
pub mod svg;
pub mod transfer;

/// Formats a float with 17 significant digits: positional notation for
/// `1e-5 <= |x| < 1e16`, scientific otherwise. `0` prints as `0`.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if (1e-5..1e16).contains(&a) {
        // exponent after rounding to 17 significant digits
        let sci = format!("{a:.16e}");
        let exp: i32 = sci.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
        let decimals = (16 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt17;

    #[test]
    fn fmt17_examples() {
        assert_eq!(fmt17(2.0 / 3.0), "0.66666666666666663");
        assert_eq!(fmt17(1.0), "1.0000000000000000");
        assert_eq!(fmt17(0.0), "0");
        assert_eq!(fmt17(-0.125), "-0.12500000000000000");
        assert_eq!(fmt17(1e-20), "9.9999999999999995e-21");
        assert_eq!(fmt17(2.5e17), "2.5000000000000000e17");
        assert_eq!(fmt17(9.999999999999999e-6), "9.9999999999999991e-6");
        for x in [1.0 / 3.0, 1.23456789, 12345.678, 1e-5, 0.1 + 0.2, 1e15 + 0.3] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }
}
