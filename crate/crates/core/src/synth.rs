//! Synthetic two-regime series and gap injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GapFillError, Result};
use crate::lag::default_window;
use crate::series::TimeSeries;

const PLACEMENT_ATTEMPTS: usize = 100_000;

/// `V = sin(t) + N(μ, σ²) + cos(t·T)`, with `T = T1` up to the break point
/// and `T2` after it; `t = index · t_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub length: usize,
    pub t1: f64,
    pub t2: f64,
    /// Last index of the first regime.
    pub break_point: usize,
    pub noise_mean: f64,
    pub noise_var: f64,
    pub rng_seed: u64,
    pub t_step: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::with_length(5000)
    }
}

impl SyntheticSpec {
    /// Defaults for a series of `length` samples; the break sits mid-series.
    pub fn with_length(length: usize) -> Self {
        Self {
            length,
            t1: 1.0,
            t2: 2.5,
            break_point: length / 2,
            noise_mean: 0.0,
            noise_var: 0.01,
            rng_seed: 42,
            t_step: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 || self.break_point == 0 || self.break_point >= self.length {
            return Err(GapFillError::InvalidConfig(format!(
                "break point must satisfy 0 < {} < {}",
                self.break_point, self.length
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) || !self.noise_mean.is_finite() {
            return Err(GapFillError::InvalidConfig("noise variance must be finite and >= 0".into()));
        }
        if !(self.t_step > 0.0 && self.t_step.is_finite()) {
            return Err(GapFillError::InvalidConfig("t_step must be positive".into()));
        }
        Ok(())
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = Normal::new(0.0, spec.noise_var.sqrt()).map_err(|e| GapFillError::InvalidConfig(e.to_string()))?;
    let values = (0..spec.length)
        .map(|i| {
            let t = i as f64 * spec.t_step;
            let period = if i <= spec.break_point { spec.t1 } else { spec.t2 };
            let g = spec.noise_mean + noise.sample(&mut rng);
            t.sin() + g + (t * period).cos()
        })
        .collect();
    TimeSeries::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub total_fraction: f64,
    pub segment_min: usize,
    pub segment_max: usize,
    /// `None` means `round(n / 4.18)`; `Some(0)` disables the long gap.
    pub long_gap_length: Option<usize>,
    /// `None` means `n / 2`.
    pub long_gap_center: Option<usize>,
    /// `None` means the default lag window for `n`.
    pub protected_margin: Option<usize>,
    pub rng_seed: u64,
}

impl Default for GapSpec {
    fn default() -> Self {
        Self {
            total_fraction: 0.30,
            segment_min: 5,
            segment_max: 60,
            long_gap_length: None,
            long_gap_center: None,
            protected_margin: None,
            rng_seed: 42,
        }
    }
}

/// Gap layout resolved against a concrete series length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedGapSpec {
    pub long_gap_start: usize,
    pub long_gap_length: usize,
    pub margin: usize,
    pub min_missing: usize,
    pub max_missing: usize,
}

impl GapSpec {
    pub fn resolve(&self, n: usize) -> Result<ResolvedGapSpec> {
        if !(self.total_fraction > 0.0 && self.total_fraction < 0.9) {
            return Err(GapFillError::InvalidConfig("total_fraction must lie in (0, 0.9)".into()));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(GapFillError::InvalidConfig("segment length range is empty".into()));
        }
        let long = self.long_gap_length.unwrap_or_else(|| (n as f64 / 4.18).round() as usize);
        let center = self.long_gap_center.unwrap_or(n / 2);
        let margin = self.protected_margin.unwrap_or_else(|| default_window(n));
        let start = center.saturating_sub(long / 2);
        if long > 0 && (start < margin || start + long + margin > n) {
            return Err(GapFillError::InvalidConfig(format!(
                "long gap of {long} at {center} does not fit inside margins of {margin}"
            )));
        }
        let target = self.total_fraction * n as f64;
        Ok(ResolvedGapSpec {
            long_gap_start: start,
            long_gap_length: long,
            margin,
            min_missing: (0.98 * target).ceil() as usize,
            max_missing: (1.02 * target).floor() as usize,
        })
    }
}

/// Removes the long central gap, then random segments until the removed
/// count reaches the target band. Returns the gapped series and the mask of
/// removed indices.
pub fn inject_gaps(series: &TimeSeries, spec: &GapSpec) -> Result<(TimeSeries, Vec<bool>)> {
    let n = series.len();
    let r = spec.resolve(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut mask = vec![false; n];
    let blocked = |mask: &[bool], start: usize, len: usize| {
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(n);
        (lo..hi).any(|i| mask[i] || series.is_missing(i))
    };
    if r.long_gap_length > 0 {
        if blocked(&mask, r.long_gap_start, r.long_gap_length) {
            return Err(GapFillError::InfeasibleGapSpec("long gap overlaps missing data".into()));
        }
        mask[r.long_gap_start..r.long_gap_start + r.long_gap_length].iter_mut().for_each(|m| *m = true);
    }
    let mut total = r.long_gap_length;
    let mut attempts = 0;
    while total < r.min_missing {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(GapFillError::InfeasibleGapSpec(format!(
                "placed {total} of at least {} missing samples",
                r.min_missing
            )));
        }
        let (lo, hi) = if total + spec.segment_max < r.min_missing {
            (spec.segment_min, spec.segment_max)
        } else {
            let lo = spec.segment_min.max(r.min_missing - total);
            let hi = spec.segment_max.min(r.max_missing.saturating_sub(total));
            if lo > hi {
                return Err(GapFillError::InfeasibleGapSpec("target band narrower than the segment range".into()));
            }
            (lo, hi)
        };
        let len = rng.random_range(lo..=hi);
        if r.margin + len + r.margin > n {
            continue;
        }
        let start = rng.random_range(r.margin..=n - r.margin - len);
        if blocked(&mask, start, len) {
            continue;
        }
        mask[start..start + len].iter_mut().for_each(|m| *m = true);
        total += len;
    }
    let values = series.values().iter().zip(&mask).map(|(&v, &m)| if m { f64::NAN } else { v }).collect();
    Ok((series.with_values(values)?, mask))
}

/// Mask as a 0/1 series sharing the source's index column.
pub fn mask_series(mask: &[bool], origin: i64) -> Result<TimeSeries> {
    TimeSeries::with_origin(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(), origin)
}

pub fn mask_from_series(series: &TimeSeries) -> Result<Vec<bool>> {
    series
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            _ => Err(GapFillError::Parse { line: i + 1, message: format!("mask value must be 0 or 1, got {v}") }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_values() {
        let spec = SyntheticSpec { noise_var: 0.0, t1: 1.0, t2: 2.0, ..SyntheticSpec::with_length(1000) };
        let s = generate(&spec).unwrap();
        assert_eq!(s.values()[0], 1.0);
        for (i, v) in s.values().iter().enumerate().take(spec.break_point + 1) {
            let t = i as f64 * 0.01;
            // black_box keeps the oracle from fusing into sincos
            assert_eq!(*v, t.sin() + 0.0 + std::hint::black_box(t).cos(), "i={i}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SyntheticSpec { break_point: 0, ..Default::default() }).is_err());
        assert!(generate(&SyntheticSpec { noise_var: -1.0, ..Default::default() }).is_err());
        assert!(GapSpec { total_fraction: 0.95, ..Default::default() }.resolve(5000).is_err());
        assert!(GapSpec { long_gap_length: Some(4900), ..Default::default() }.resolve(5000).is_err());
    }

    #[test]
    fn mask_series_round_trip() {
        let mask = vec![true, false, false, true];
        assert_eq!(mask_from_series(&mask_series(&mask, 0).unwrap()).unwrap(), mask);
        assert!(mask_from_series(&TimeSeries::new(vec![0.5]).unwrap()).is_err());
    }
}
