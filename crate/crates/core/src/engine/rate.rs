use crate::error::{Error, Result};

/// Least-squares line through `(ln n, ln value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    pub points: usize,
}

impl RateFit {
    /// Decay too fast for a power law over the window to describe (slope ≤ −2).
    pub fn is_super_polynomial(&self) -> bool {
        self.slope <= -2.0
    }

    pub fn flag(&self) -> &'static str {
        if self.is_super_polynomial() { "super-polynomial" } else { "power-law" }
    }

    pub const CSV_HEADER: &'static str = "series,slope,intercept,r_squared,n_lo,n_hi,flag";

    pub fn csv_row(&self, series: &str) -> String {
        format!(
            "{series},{:.16e},{:.16e},{:.16e},{},{},{}",
            self.slope,
            self.intercept,
            self.r_squared,
            self.n_lo,
            self.n_hi,
            self.flag()
        )
    }
}

/// Minimum number of checkpoints inside the fit window.
pub const MIN_FIT_POINTS: usize = 5;

/// Fits `ln value ≈ intercept + slope · ln n` over checkpoints with `n ∈ [window.0, window.1]`.
pub fn fit_rate(checkpoints: &[usize], values: &[f64], window: (usize, usize)) -> Result<RateFit> {
    if checkpoints.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: checkpoints.len(), got: values.len() });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lo = usize::MAX;
    let mut hi = 0;
    for (i, (&n, &v)) in checkpoints.iter().zip(values).enumerate() {
        if n < window.0 || n > window.1 || n == 0 {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveValue { index: i, value: v });
        }
        xs.push((n as f64).ln());
        ys.push(v.ln());
        lo = lo.min(n);
        hi = hi.max(n);
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints { needed: MIN_FIT_POINTS, found: xs.len() });
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    // rounding in the mean leaves syy ≈ 1e-30 for constant data
    let flat = syy <= 1e-24 * k * (1.0 + my * my);
    let r_squared = if flat { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept, r_squared, n_lo: lo, n_hi: hi, points: xs.len() })
}

/// Window covering the last decade below `horizon`: `[horizon / 10, horizon]`.
pub fn last_decade(horizon: usize) -> (usize, usize) {
    (horizon / 10, horizon)
}

/// Window covering the final `fraction` of the decades between `lo` and `hi` on a log scale.
pub fn log_window(lo: usize, hi: usize, fraction: f64) -> (usize, usize) {
    let l = (lo.max(1) as f64).ln();
    let h = (hi.max(1) as f64).ln();
    let start = (h - fraction.clamp(0.0, 1.0) * (h - l)).exp();
    (start.round() as usize, hi)
}

/// About `count` log-spaced integers between `lo` and `hi` inclusive, rounded and deduplicated.
pub fn log_checkpoints(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let lo = lo.max(1).min(hi.max(1));
    let hi = hi.max(1);
    if count <= 1 || lo == hi {
        return vec![hi];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    out[0] = lo;
    *out.last_mut().unwrap() = hi;
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<usize> {
        log_checkpoints(10, 10_000, 30)
    }

    #[test]
    fn exact_power_laws() {
        let ns = grid();
        for (c, p) in [(4.0, -1.0), (2.5, -2.0 / 3.0), (0.1, -0.5)] {
            let vals: Vec<f64> = ns.iter().map(|&n| c * (n as f64).powf(p)).collect();
            let fit = fit_rate(&ns, &vals, (10, 10_000)).unwrap();
            assert!((fit.slope - p).abs() < 1e-9, "{fit:?}");
            assert!((fit.intercept - f64::ln(c)).abs() < 1e-8);
            assert!(fit.r_squared > 1.0 - 1e-12);
        }
    }

    #[test]
    fn constant_values() {
        let ns = grid();
        let fit = fit_rate(&ns, &vec![3.0; ns.len()], (10, 10_000)).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn errors() {
        let ns = grid();
        let vals = vec![1.0; ns.len()];
        assert!(matches!(fit_rate(&ns, &vals, (9000, 10_000)), Err(Error::InsufficientPoints { .. })));
        let mut bad = vals.clone();
        bad[20] = 0.0;
        assert!(matches!(fit_rate(&ns, &bad, (10, 10_000)), Err(Error::NonPositiveValue { index: 20, .. })));
    }

    #[test]
    fn checkpoints_are_distinct_and_span_range() {
        let cps = log_checkpoints(1, 20, 30);
        assert!(cps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cps[0], 1);
        assert_eq!(*cps.last().unwrap(), 20);
        let cps = log_checkpoints(100, 200_000, 30);
        assert_eq!(cps.len(), 30);
        assert_eq!(last_decade(200_000), (20_000, 200_000));
    }

    #[test]
    fn log_window_fraction() {
        assert_eq!(log_window(100, 100_000, 1.0 / 3.0), (10_000, 100_000));
    }
}
