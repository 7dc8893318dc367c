//! Order statistics and small regressions used to summarise replicates.

use serde::{Deserialize, Serialize};

use crate::error::{ExpError, ExpResult};

/// Linear-interpolation quantile (the "type 7" rule) of the finite entries of
/// `values`. `None` when no entry is finite.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    /// Quartiles of the finite entries; all `NaN` if there are none.
    pub fn of(values: &[f64]) -> Quartiles {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.is_empty() {
            return Quartiles {
                q25: f64::NAN,
                median: f64::NAN,
                q75: f64::NAN,
            };
        }
        sorted.sort_by(f64::total_cmp);
        Quartiles {
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
        }
    }
}

/// Median and interquartile range of a statistic along a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSeries {
    pub x_values: Vec<f64>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// Replicate mean, kept for statistics stated in expectation.
    pub mean: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl QuantileSeries {
    /// `samples[i]` holds the replicate values at `x_values[i]`.
    pub fn from_samples(x_values: Vec<f64>, samples: &[Vec<f64>], replicates: usize, seed: u64) -> QuantileSeries {
        assert_eq!(x_values.len(), samples.len(), "one sample set per grid point");
        let mut out = QuantileSeries {
            x_values,
            median: Vec::with_capacity(samples.len()),
            q25: Vec::with_capacity(samples.len()),
            q75: Vec::with_capacity(samples.len()),
            mean: Vec::with_capacity(samples.len()),
            replicates,
            seed,
        };
        for s in samples {
            let q = Quartiles::of(s);
            out.q25.push(q.q25);
            out.median.push(q.median);
            out.q75.push(q.q75);
            out.mean.push(mean(s));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.x_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_values.is_empty()
    }

    /// Least-squares slope of `log(median)` against `log(x)`.
    pub fn loglog_slope(&self) -> ExpResult<f64> {
        loglog_slope(&self.x_values, &self.median)
    }
}

/// Mean of the finite entries, `NaN` if there are none.
pub fn mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> ExpResult<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(ExpError::Invalid(format!(
            "slope needs two equally long series with >= 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) || !sxy.is_finite() {
        return Err(ExpError::Invalid("slope is undefined for constant or non-finite x".into()));
    }
    Ok(sxy / sxx)
}

pub fn loglog_slope(x: &[f64], y: &[f64]) -> ExpResult<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(ExpError::Invalid("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ls_slope(&lx, &ly)
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. `NaN` when either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
