//! Small summary statistics used by reports and acceptance checks.

/// One-sided 95% normal quantile.
pub const Z_ONE_SIDED_95: f64 = 1.645;

/// Two-sided 95% normal quantile.
pub const Z_TWO_SIDED_95: f64 = 1.96;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Half-width `1.96·s/√n` of the 95% confidence interval of the mean.
pub fn ci95(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    Z_TWO_SIDED_95 * sample_std(values) / (values.len() as f64).sqrt()
}

/// Paired comparison of `a` against `b` over matched episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Paired {
    pub mean_diff: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Paired {
    pub fn new(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let std_err = if d.is_empty() { 0.0 } else { sample_std(&d) / (d.len() as f64).sqrt() };
        Self { mean_diff: mean(&d), std_err, n: d.len() }
    }

    /// Lower end of the one-sided 95% interval for `mean(a - b)`.
    pub fn lower95(&self) -> f64 {
        self.mean_diff - Z_ONE_SIDED_95 * self.std_err
    }

    /// `a ≥ b` holds at one-sided 95% confidence.
    pub fn a_at_least_b(&self) -> bool {
        self.lower95() >= 0.0
    }

    /// `a ≥ b` is not rejected at one-sided 95% confidence.
    pub fn a_not_below_b(&self) -> bool {
        self.mean_diff + Z_ONE_SIDED_95 * self.std_err >= 0.0
    }
}

/// Normal-approximation z score of `successes` out of `trials` against rate `p0`.
pub fn binomial_z(successes: usize, trials: usize, p0: f64) -> f64 {
    let n = trials as f64;
    (successes as f64 - n * p0) / (n * p0 * (1.0 - p0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_have_zero_ci() {
        assert_eq!(ci95(&[1.0; 10]), 0.0);
        assert_eq!(ci95(&[0.3]), 0.0);
        assert_eq!(ci95(&[]), 0.0);
    }

    #[test]
    fn ci_by_hand() {
        // mean 2, sample variance 1 (values 1,2,3)
        let v = [1.0, 2.0, 3.0];
        assert!((sample_std(&v) - 1.0).abs() < 1e-15);
        assert!((ci95(&v) - 1.96 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn paired_difference() {
        let p = Paired::new(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        assert_eq!(p.mean_diff, 1.0);
        assert_eq!(p.std_err, 0.0);
        assert!(p.a_at_least_b());
        let q = Paired::new(&[0.0, 1.0], &[1.0, 0.0]);
        assert_eq!(q.mean_diff, 0.0);
        assert!(!q.a_at_least_b());
        assert!(q.a_not_below_b());
    }

    #[test]
    fn binomial_z_centered_at_rate() {
        assert_eq!(binomial_z(20, 100, 0.2), 0.0);
        assert!((binomial_z(28, 100, 0.2) - 2.0).abs() < 1e-12);
    }
}
