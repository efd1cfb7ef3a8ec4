//! Bessel function of the first kind, order one.
//!
//! Rational approximations after Hart et al. (as tabulated in Numerical
//! Recipes, `bessj1`); absolute error below 1e-8 over the real line.

pub fn j1(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        let num = x
            * (72362614232.0
                + y * (-7895059235.0
                    + y * (242396853.1
                        + y * (-2972611.439 + y * (15704.48260 + y * (-30.16036606))))));
        let den = 144725228442.0
            + y * (2300535178.0
                + y * (18583304.74 + y * (99447.43394 + y * (376.9991397 + y))));
        num / den
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 2.356194491;
        let p = 1.0
            + y * (0.183105e-2
                + y * (-0.3516396496e-4 + y * (0.2457520174e-5 + y * (-0.240337019e-6))));
        let q = 0.04687499995
            + y * (-0.2002690873e-3
                + y * (0.8449199096e-5 + y * (-0.88228987e-6 + y * 0.105787412e-6)));
        let ans = (std::f64::consts::FRAC_2_PI / ax).sqrt() * (xx.cos() * p - z * xx.sin() * q);
        if x < 0.0 {
            -ans
        } else {
            ans
        }
    }
}

/// `2 J1(2 pi r) / (2 pi r)` scaled so that the unit disc transform is
/// `jinc(r) = J1(2 pi r) / r`, with the limit `pi` at zero.
pub fn disc_transform(r: f64) -> f64 {
    if r.abs() < 1e-9 {
        std::f64::consts::PI
    } else {
        j1(2.0 * std::f64::consts::PI * r) / r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Power series sum_k (-1)^k (x/2)^(2k+1) / (k! (k+1)!).
    fn j1_series(x: f64) -> f64 {
        let mut term = x / 2.0;
        let mut sum = term;
        for k in 1..60 {
            term *= -(x * x / 4.0) / (k as f64 * (k + 1) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn matches_power_series() {
        for i in 0..200 {
            let x = -12.0 + i as f64 * 0.121;
            assert!((j1(x) - j1_series(x)).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn disc_transform_limit() {
        assert!((disc_transform(1e-6) - std::f64::consts::PI).abs() < 1e-6);
        assert_eq!(disc_transform(0.0), std::f64::consts::PI);
    }
}
