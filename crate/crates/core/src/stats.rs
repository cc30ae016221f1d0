//! Sample statistics, least squares, bootstrap and Kolmogorov-Smirnov distances.

use rand::Rng;

use crate::rng;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (0 for fewer than two points).
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Median of a non-empty sample.
pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac > 0.0 && i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Ordinary least squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean squared residual.
    pub rms_residual: f64,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    LineFit {
        slope,
        intercept,
        rms_residual: (ss / x.len() as f64).sqrt(),
    }
}

/// Bootstrap distribution of a statistic over resampled replica indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Bootstrap {
    pub values: Vec<f64>,
}

impl Bootstrap {
    /// `resamples` draws of `stat` on `n` indices sampled with replacement.
    pub fn run<F>(n: usize, resamples: usize, seed: u64, mut stat: F) -> Self
    where
        F: FnMut(&[usize]) -> f64,
    {
        let values = bootstrap_indices(n, resamples, seed)
            .iter()
            .map(|idx| stat(idx))
            .collect();
        Bootstrap { values }
    }

    pub fn std_dev(&self) -> f64 {
        std_dev(&self.values)
    }

    /// Percentile interval at coverage `level`.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let a = 0.5 * (1.0 - level);
        (quantile(&self.values, a), quantile(&self.values, 1.0 - a))
    }
}

/// Index vectors of `resamples` bootstrap draws of size `n`.
pub fn bootstrap_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::stream(seed, rng::tag::BOOTSTRAP, n as u64);
    (0..resamples)
        .map(|_| (0..n).map(|_| r.random_range(0..n)).collect())
        .collect()
}

/// `sup |F_n - F|` for a continuous reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// `sup |F_n - G_m|` between two empirical distributions.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}
