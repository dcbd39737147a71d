use crate::error::{Error, Result};

/// Step sizes `α_n = α0 / (n+1)^a` and `β_n = β0 / (n+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    alpha0: f64,
    beta0: f64,
    exponent_a: f64,
}

/// Constant in `α_n ≤ c1 · α_{n+1}`.
pub const C1: f64 = 2.0;

impl StepSchedule {
    /// `alpha0, beta0 > 0` and `exponent_a ∈ (0.5, 1]`.
    ///
    /// Gains above one are accepted: the noiseless-slow instantiations need `β0 ≥ 8` and
    /// `α0 ≥ β0 / C` for their `O(1/n)` rate.
    pub fn new(alpha0: f64, beta0: f64, exponent_a: f64) -> Result<Self> {
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(Error::param("alpha0", format!("{alpha0} is not positive")));
        }
        if !(beta0.is_finite() && beta0 > 0.0) {
            return Err(Error::param("beta0", format!("{beta0} is not positive")));
        }
        if !(exponent_a > 0.5 && exponent_a <= 1.0) {
            return Err(Error::param("exponent_a", format!("{exponent_a} not in (0.5, 1]")));
        }
        Ok(Self { alpha0, beta0, exponent_a })
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
    pub fn beta0(&self) -> f64 {
        self.beta0
    }
    pub fn exponent_a(&self) -> f64 {
        self.exponent_a
    }

    #[inline]
    pub fn alpha(&self, n: usize) -> f64 {
        let k = (n + 1) as f64;
        if self.exponent_a == 1.0 {
            self.alpha0 / k
        } else {
            self.alpha0 / k.powf(self.exponent_a)
        }
    }

    #[inline]
    pub fn beta(&self, n: usize) -> f64 {
        self.beta0 / (n + 1) as f64
    }

    /// `γ_n = β_n / α_n`.
    pub fn gamma(&self, n: usize) -> f64 {
        self.beta(n) / self.alpha(n)
    }

    /// `c2 = 2 / min(α0, β0)`.
    pub fn c2(&self) -> f64 {
        2.0 / self.alpha0.min(self.beta0)
    }

    /// Verifies the step-size bounds for `n ∈ [0, n_max]`: monotonicity, `x_n ≤ c1 x_{n+1}`,
    /// `x_n − x_{n+1} ≤ c2 x_{n+1}²` for both sequences, and monotone `γ_n`.
    /// Returns the first failing `(n, description)`.
    pub fn check_bounds(&self, n_max: usize) -> std::result::Result<(), (usize, &'static str)> {
        let c2 = self.c2();
        let mut a = self.alpha(0);
        let mut b = self.beta(0);
        let mut g = b / a;
        for n in 0..n_max {
            let a1 = self.alpha(n + 1);
            let b1 = self.beta(n + 1);
            let g1 = b1 / a1;
            // relative slack for rounding in the last bit
            let eps = 1e-12;
            if a1 > a * (1.0 + eps) || b1 > b * (1.0 + eps) {
                return Err((n, "non-increasing"));
            }
            if a > C1 * a1 * (1.0 + eps) || b > C1 * b1 * (1.0 + eps) {
                return Err((n, "c1 ratio bound"));
            }
            if a - a1 > c2 * a1 * a1 * (1.0 + eps) || b - b1 > c2 * b1 * b1 * (1.0 + eps) {
                return Err((n, "c2 difference bound"));
            }
            if g1 > g * (1.0 + eps) {
                return Err((n, "gamma non-increasing"));
            }
            a = a1;
            b = b1;
            g = g1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_parameters() {
        assert!(StepSchedule::new(0.5, 0.5, 0.4).is_err());
        assert!(StepSchedule::new(0.5, 0.5, 0.5).is_err());
        assert!(StepSchedule::new(0.0, 0.5, 0.7).is_err());
        assert!(StepSchedule::new(0.5, -1.0, 0.7).is_err());
        assert!(StepSchedule::new(0.5, 0.5, 1.0).is_ok());
        let err = StepSchedule::new(0.5, 0.5, 0.4).unwrap_err();
        assert!(err.to_string().contains("exponent_a"));
    }

    #[test]
    fn values() {
        let s = StepSchedule::new(0.5, 0.25, 1.0).unwrap();
        assert_eq!(s.alpha(0), 0.5);
        assert_eq!(s.alpha(1), 0.25);
        assert_eq!(s.beta(3), 0.0625);
        let s = StepSchedule::new(1.0, 1.0, 2.0 / 3.0).unwrap();
        assert!((s.alpha(7) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gamma_vanishes_when_a_below_one() {
        let s = StepSchedule::new(0.5, 0.5, 2.0 / 3.0).unwrap();
        assert!(s.gamma(1_000_000) < 0.011);
        assert!(s.gamma(10) > s.gamma(1000));
    }

    #[test]
    fn bounds_hold_on_a_few_schedules() {
        for &(a0, b0, a) in &[(0.5, 0.5, 2.0 / 3.0), (0.9, 0.1, 0.51), (0.3, 0.7, 1.0), (20.0, 8.0, 1.0)] {
            let s = StepSchedule::new(a0, b0, a).unwrap();
            assert_eq!(s.check_bounds(100_000), Ok(()));
        }
    }
}
