//! Small statistics helpers shared by estimators and probes.

/// Sample mean and standard error (`sample std / sqrt(n)`, Bessel-corrected).
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `ln y` against `ln x`, ignoring non-positive values.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in points {
        if *x > 0.0 && *y > 0.0 {
            xs.push(x.ln());
            ys.push(y.ln());
        }
    }
    linear_fit(&xs, &ys).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        // var = 5/3, se = sqrt(5/12)
        assert_relative_eq!(se, (5.0f64 / 12.0).sqrt(), epsilon = 1e-12);
        assert_eq!(mean_se(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn loglog_recovers_power() {
        let pts: Vec<(f64, f64)> =
            (1..6).map(|i| (i as f64, 3.0 * (i as f64).powf(1.7))).collect();
        let s = loglog_slope(&pts).unwrap();
        assert_relative_eq!(s, 1.7, epsilon = 1e-10);
    }
}
