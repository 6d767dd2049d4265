//! Non-learning comparison fillers: linear, local and batch polynomial,
//! moving average, natural cubic spline, and a local-level Kalman smoother.
//!
//! Every filler returns a series with no missing samples and leaves the
//! observed samples untouched. Fewer than two observed samples is an error.

use serde::{Deserialize, Serialize};

use crate::error::{GapFillError, Result};
use crate::linalg::{polyfit, polyval};
use crate::series::TimeSeries;

/// Prior variance of the initial level; large enough to act as diffuse.
const KALMAN_DIFFUSE_VAR: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillerConfig {
    pub poly_degree: usize,
    /// Number of observed samples used by each local polynomial; odd.
    pub sg_window: usize,
    pub ma_window: usize,
    pub kalman_process_var: f64,
    pub kalman_obs_var: f64,
}

impl Default for FillerConfig {
    fn default() -> Self {
        Self { poly_degree: 2, sg_window: 9, ma_window: 5, kalman_process_var: 1e-2, kalman_obs_var: 1e-1 }
    }
}

impl FillerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sg_window.is_multiple_of(2) || self.sg_window <= self.poly_degree {
            return Err(GapFillError::InvalidConfig(format!(
                "sg_window must be odd and greater than poly_degree (got {} and {})",
                self.sg_window, self.poly_degree
            )));
        }
        if self.ma_window == 0 {
            return Err(GapFillError::InvalidConfig("ma_window must be positive".into()));
        }
        if !(self.kalman_process_var > 0.0 && self.kalman_obs_var > 0.0)
            || !self.kalman_process_var.is_finite()
            || !self.kalman_obs_var.is_finite()
        {
            return Err(GapFillError::InvalidConfig("Kalman variances must be positive".into()));
        }
        Ok(())
    }
}

fn check_usable(series: &TimeSeries, config: &FillerConfig, min_observed: usize) -> Result<()> {
    config.validate()?;
    let observed = series.observed_count();
    if observed < min_observed {
        return Err(GapFillError::InsufficientData(format!(
            "{observed} observed samples, need at least {min_observed}"
        )));
    }
    Ok(())
}

fn observed_indices(series: &TimeSeries) -> Vec<usize> {
    series.observed().map(|(i, _)| i).collect()
}

/// A single observation is enough: it is extended as a constant.
pub fn fill_linear(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 1)?;
    series.with_values(linear_interpolate(series.values()))
}

/// Linear interpolation between observed neighbours with constant extension
/// past the first and last observation. Requires at least one observed value.
pub(crate) fn linear_interpolate(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    let mut prev: Option<usize> = None;
    let mut i = 0;
    while i < out.len() {
        if !out[i].is_nan() {
            prev = Some(i);
            i += 1;
            continue;
        }
        let next = (i..out.len()).find(|&j| !values[j].is_nan());
        let end = next.unwrap_or(out.len());
        for (j, slot) in out.iter_mut().enumerate().take(end).skip(i) {
            *slot = match (prev, next) {
                (Some(l), Some(r)) => {
                    let frac = (j - l) as f64 / (r - l) as f64;
                    values[l] + (values[r] - values[l]) * frac
                }
                (Some(l), None) => values[l],
                (None, Some(r)) => values[r],
                (None, None) => f64::NAN,
            };
        }
        i = end;
    }
    out
}

/// One least-squares polynomial per missing sample, fit to the nearest
/// `sg_window` observed samples (ties go to the earlier index).
pub fn fill_poly_local(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 2)?;
    let obs = observed_indices(series);
    let values = series.values();
    let mut out = values.to_vec();
    let take = config.sg_window.min(obs.len());
    let mut xs = Vec::with_capacity(take);
    let mut ys = Vec::with_capacity(take);
    for i in (0..values.len()).filter(|&i| values[i].is_nan()) {
        let split = obs.partition_point(|&o| o < i);
        let (mut lo, mut hi) = (split, split);
        xs.clear();
        ys.clear();
        while xs.len() < take {
            let left = (lo > 0).then(|| i - obs[lo - 1]);
            let right = (hi < obs.len()).then(|| obs[hi] - i);
            let pick = match (left, right) {
                (Some(l), Some(r)) if l <= r => {
                    lo -= 1;
                    obs[lo]
                }
                (Some(_), None) => {
                    lo -= 1;
                    obs[lo]
                }
                (_, Some(_)) => {
                    hi += 1;
                    obs[hi - 1]
                }
                (None, None) => break,
            };
            xs.push(pick as f64 - i as f64);
            ys.push(values[pick]);
        }
        let scale = xs.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        xs.iter_mut().for_each(|x| *x /= scale);
        let degree = config.poly_degree.min(xs.len() - 1);
        let coef = polyfit(&xs, &ys, degree)?;
        out[i] = coef[0];
    }
    series.with_values(out)
}

/// One global least-squares polynomial over all observed samples, with the
/// index axis rescaled to [-1, 1].
pub fn fill_poly_batch(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 2)?;
    let n = series.len();
    let scale = |i: usize| 2.0 * i as f64 / (n - 1) as f64 - 1.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = series.observed().map(|(i, v)| (scale(i), v)).unzip();
    let degree = config.poly_degree.min(xs.len() - 1);
    let coef = polyfit(&xs, &ys, degree)?;
    let out = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v.is_nan() { polyval(&coef, scale(i)) } else { v })
        .collect();
    series.with_values(out)
}

/// Two-pass moving average. Each missing sample takes the mean of up to
/// `ma_window` available values on each side (observed, or filled earlier in
/// the same pass), scanning left-to-right and then right-to-left; the two
/// passes are averaged.
pub fn fill_moving_average(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 2)?;
    let values = series.values();
    let missing: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_nan()).collect();
    let forward = ma_pass(values, config.ma_window, missing.iter().copied());
    let backward = ma_pass(values, config.ma_window, missing.iter().rev().copied());
    let out = values
        .iter()
        .enumerate()
        .map(|(i, &v)| if v.is_nan() { 0.5 * (forward[i] + backward[i]) } else { v })
        .collect();
    series.with_values(out)
}

fn ma_pass(values: &[f64], k: usize, order: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut work = values.to_vec();
    for i in order {
        let mut sum = 0.0;
        let mut count = 0usize;
        let left = work[..i].iter().rev().filter(|v| !v.is_nan()).take(k);
        for v in left {
            sum += v;
            count += 1;
        }
        let right = work[i + 1..].iter().filter(|v| !v.is_nan()).take(k);
        for v in right {
            sum += v;
            count += 1;
        }
        work[i] = sum / count as f64;
    }
    work
}

/// Natural cubic spline through the observed samples. Outside the knot range
/// the spline is continued linearly with its end slope.
pub fn fill_spline(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 3)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = series.observed().map(|(i, v)| (i as f64, v)).unzip();
    let spline = NaturalCubicSpline::new(xs, ys);
    let out =
        series.values().iter().enumerate().map(|(i, &v)| if v.is_nan() { spline.eval(i as f64) } else { v }).collect();
    series.with_values(out)
}

pub(crate) struct NaturalCubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// Knots must be strictly increasing, at least three of them.
    pub(crate) fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n >= 3 {
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            let mut sol = vec![0.0; k];
            sol[k - 1] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                sol[j] = (rhs[j] - h[j + 1] * sol[j + 1]) / diag[j];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        Self { x, y, m }
    }

    pub(crate) fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let (x, y, m) = (&self.x, &self.y, &self.m);
        if t <= x[0] {
            let h = x[1] - x[0];
            let slope = (y[1] - y[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0;
            return y[0] + slope * (t - x[0]);
        }
        if t >= x[n - 1] {
            let h = x[n - 1] - x[n - 2];
            let slope = (y[n - 1] - y[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
            return y[n - 1] + slope * (t - x[n - 1]);
        }
        let seg = x.partition_point(|&k| k <= t).saturating_sub(1).min(n - 2);
        let h = x[seg + 1] - x[seg];
        let a = (x[seg + 1] - t) / h;
        let b = (t - x[seg]) / h;
        a * y[seg] + b * y[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
    }
}

/// Local-level (random walk plus noise) Kalman filter with a fixed-interval
/// Rauch-Tung-Striebel smoother; missing samples take the smoothed level.
/// One observation suffices; it is then continued as a constant.
pub fn fill_kalman(series: &TimeSeries, config: &FillerConfig) -> Result<TimeSeries> {
    check_usable(series, config, 1)?;
    let smoothed = kalman_smooth(series.values(), config.kalman_process_var, config.kalman_obs_var);
    let out = series.values().iter().zip(&smoothed).map(|(&v, &s)| if v.is_nan() { s } else { v }).collect();
    series.with_values(out)
}

pub(crate) fn kalman_smooth(values: &[f64], q: f64, r: f64) -> Vec<f64> {
    let n = values.len();
    let first = values.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
    let mut pred_mean = vec![0.0; n];
    let mut pred_var = vec![0.0; n];
    let mut filt_mean = vec![0.0; n];
    let mut filt_var = vec![0.0; n];
    let (mut a, mut p) = (first, KALMAN_DIFFUSE_VAR);
    for t in 0..n {
        if t > 0 {
            p += q;
        }
        pred_mean[t] = a;
        pred_var[t] = p;
        let y = values[t];
        if !y.is_nan() {
            let gain = p / (p + r);
            a += gain * (y - a);
            p *= 1.0 - gain;
        }
        filt_mean[t] = a;
        filt_var[t] = p;
    }
    let mut smooth = filt_mean.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let j = filt_var[t] / pred_var[t + 1];
        smooth[t] = filt_mean[t] + j * (smooth[t + 1] - pred_mean[t + 1]);
    }
    smooth
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: f64 = f64::NAN;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec()).unwrap()
    }

    fn cfg() -> FillerConfig {
        FillerConfig::default()
    }

    #[test]
    fn linear_examples() {
        assert_eq!(fill_linear(&ts(&[1.0, M, 3.0]), &cfg()).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(fill_linear(&ts(&[0.0, M, M, 3.0]), &cfg()).unwrap().values(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(fill_linear(&ts(&[M, 5.0, M, 5.0]), &cfg()).unwrap().values(), &[5.0; 4]);
    }

    #[test]
    fn insufficient_data() {
        for f in [fill_poly_local, fill_poly_batch, fill_moving_average] {
            assert!(matches!(f(&ts(&[M, 5.0, M]), &cfg()), Err(GapFillError::InsufficientData(_))));
        }
        for f in [fill_linear, fill_kalman] {
            assert_eq!(f(&ts(&[M, 5.0, M]), &cfg()).unwrap().values(), &[5.0; 3]);
        }
        assert!(fill_spline(&ts(&[1.0, M, 2.0]), &cfg()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = FillerConfig { sg_window: 8, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = FillerConfig { sg_window: 3, poly_degree: 3, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = FillerConfig { kalman_obs_var: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn poly_local_parabola() {
        let mut v: Vec<f64> = (0..10).map(|t| (t * t) as f64).collect();
        v[3] = M;
        let c = FillerConfig { poly_degree: 2, sg_window: 5, ..cfg() };
        let out = fill_poly_local(&ts(&v), &c).unwrap();
        assert!((out.values()[3] - 9.0).abs() < 1e-8);
    }

    #[test]
    fn poly_batch_degree_zero_is_mean() {
        let c = FillerConfig { poly_degree: 0, sg_window: 1, ..cfg() };
        let out = fill_poly_batch(&ts(&[1.0, M, 2.0, 6.0]), &c).unwrap();
        assert!((out.values()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn moving_average_examples() {
        let c = FillerConfig { ma_window: 1, ..cfg() };
        assert_eq!(fill_moving_average(&ts(&[1.0, M, 3.0]), &c).unwrap().values(), &[1.0, 2.0, 3.0]);
        let out = fill_moving_average(&ts(&[4.0, M, M, 4.0, M]), &cfg()).unwrap();
        assert!(out.values().iter().all(|v| *v == 4.0));
    }

    #[test]
    fn spline_extends_linearly() {
        let out = fill_spline(&ts(&[M, 1.0, 2.0, 3.0, M]), &cfg()).unwrap();
        assert!((out.values()[0] - 0.0).abs() < 1e-12);
        assert!((out.values()[4] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kalman_constant_and_single_observation() {
        let out = fill_kalman(&ts(&[5.0, 5.0, M, 5.0, 5.0]), &cfg()).unwrap();
        assert!((out.values()[2] - 5.0).abs() < 1e-8);
        let smoothed = kalman_smooth(&[3.0, M, M, M], 1e-2, 1e-1);
        assert!(smoothed.iter().all(|v| *v == 3.0));
    }
}
