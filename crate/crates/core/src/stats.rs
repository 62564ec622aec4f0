/// Welford (count, mean, M2) accumulator with an associative merge.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = Self::new();
        for &v in values {
            s.push(v);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Mean and standard error of a slice.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let s = RunningStats::from_slice(values);
    (s.mean(), s.se())
}

/// Ordinary least squares slope of y against x, with the standard error of
/// the slope estimate.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (x.len() as i64 - 2).max(1) as f64;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let slope_se = (sse / dof / sxx).sqrt();
    (slope, slope_se)
}

/// Empirical quantile (linear interpolation) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn merge_matches_sequential() {
        let a: Vec<f64> = (0..57).map(|i| (i as f64 * 0.731).sin()).collect();
        let b: Vec<f64> = (0..43).map(|i| (i as f64 * 1.37).cos()).collect();
        let mut whole = RunningStats::new();
        for v in a.iter().chain(&b) {
            whole.push(*v);
        }
        let mut merged = RunningStats::from_slice(&a);
        merged.merge(&RunningStats::from_slice(&b));
        assert_abs_diff_eq!(whole.mean(), merged.mean(), epsilon = 1e-12);
        assert_abs_diff_eq!(whole.variance(), merged.variance(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_order_insensitive(
            a in proptest::collection::vec(-1e3f64..1e3, 1..40),
            b in proptest::collection::vec(-1e3f64..1e3, 1..40),
        ) {
            let mut ab = RunningStats::from_slice(&a);
            ab.merge(&RunningStats::from_slice(&b));
            let mut ba = RunningStats::from_slice(&b);
            ba.merge(&RunningStats::from_slice(&a));
            prop_assert!((ab.mean() - ba.mean()).abs() < 1e-9);
            prop_assert!((ab.variance() - ba.variance()).abs() < 1e-7);
        }
    }

    #[test]
    fn slope_of_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let (slope, se) = ols_slope(&x, &y);
        assert_abs_diff_eq!(slope, 3.0, epsilon = 1e-12);
        assert!(se < 1e-10);
    }

    #[test]
    fn quantile_bounds() {
        let v = vec![3.0, 1.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
        assert_eq!(median(&v), 2.0);
    }
}
