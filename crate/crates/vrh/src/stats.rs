//! Small statistics helpers shared by the estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Streaming mean/variance/kurtosis accumulator (Welford-style updates for
/// central moments up to order four).
#[derive(Debug, Clone, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2 / (self.n as f64 - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    /// Excess kurtosis m4/m2^2 - 3 (population form).
    pub fn excess_kurtosis(&self) -> f64 {
        if self.n < 4 || self.m2 == 0.0 {
            return f64::NAN;
        }
        let n = self.n as f64;
        n * self.m4 / (self.m2 * self.m2) - 3.0
    }

    /// Standard error of the excess kurtosis under approximate normality,
    /// sqrt(24/n).
    pub fn kurtosis_se(&self) -> f64 {
        (24.0 / self.n as f64).sqrt()
    }
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut m = Moments::default();
    for &x in xs {
        m.push(x);
    }
    (m.mean(), m.se())
}

/// Weighted least-squares line fit y = intercept + slope * x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

/// Fits a straight line by weighted least squares. Weights are inverse
/// variances of y; pass all-ones for an ordinary fit. Requires at least two
/// distinct x values.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return None;
    }
    let xb = x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() / sw;
    let yb = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(xi, wi)| wi * (xi - xb) * (xi - xb)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| wi * (xi - xb) * (yi - yb))
        .sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let fit = intercept + slope * x[i];
        ss_res += w[i] * (y[i] - fit) * (y[i] - fit);
        ss_tot += w[i] * (y[i] - yb) * (y[i] - yb);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    // Standard errors under unit-variance-per-unit-weight; rescale by the
    // residual mean square so ordinary fits behave as usual.
    let dof = (n as f64 - 2.0).max(1.0);
    let sigma2 = ss_res / dof;
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / sw + xb * xb / sxx)).sqrt();
    Some(LineFit { intercept, slope, r_squared, slope_se, intercept_se, n })
}

/// Percentile bootstrap confidence interval for the mean of `samples`.
pub fn bootstrap_mean_ci(
    samples: &[f64],
    n_resamples: usize,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    assert!(!samples.is_empty());
    let n = samples.len();
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..n {
                s += samples[rng.gen_range(0..n)];
            }
            s / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * n_resamples as f64) as usize).min(n_resamples - 1);
    let hi = (((1.0 - alpha) * n_resamples as f64) as usize).min(n_resamples - 1);
    (means[lo], means[hi])
}
