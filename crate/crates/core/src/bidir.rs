//! Bi-directional gap filling.
//!
//! One genome is fit twice: as a forward model on the series and as a
//! backward model on the index-reversed series. Each gap receives a forward
//! forecast seeded by its pre-gap window and a backward forecast seeded by its
//! post-gap window, and the two are merged position by position by an
//! ensemble combiner. Gaps whose context is too short for one direction use
//! the other; gaps with neither fall back to linear interpolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::linear_interpolate;
use crate::error::{GapFillError, Result};
use crate::evo::{run_search, EvoConfig};
use crate::lag::{default_window, forecast_recursive, LagMatrix, Predictor};
use crate::linalg::{fit_line, lstsq_min_norm};
use crate::parallel;
use crate::pipeline::{fit_on_lags, fit_pipeline, FittedPipeline, Pipeline, DEFAULT_RIDGE_LAMBDA};
use crate::series::{extract_context, scan_gaps, GapSegment, TimeSeries};

/// Relative-position bins of the learned combiner.
const LEARNED_BINS: usize = 10;
const LEARNED_MIN_SAMPLES: usize = 5;

pub const PSEUDO_GAP_MIN: usize = 5;
pub const PSEUDO_GAP_MAX: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapFillPolicy {
    /// Model lag window.
    pub w: usize,
    /// Longest pre-gap context used.
    pub w1: usize,
    /// Longest post-gap context used.
    pub w2: usize,
    /// Shortest observed run a direction may forecast from.
    pub min_window: usize,
}

impl GapFillPolicy {
    pub fn new(w: usize) -> Self {
        Self { w, w1: w, w2: w, min_window: (w / 2).max(3) }
    }

    pub fn for_length(len: usize) -> Self {
        Self::new(default_window(len))
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.w1 == 0 || self.w2 == 0 {
            return Err(GapFillError::InvalidConfig("windows must be positive".into()));
        }
        if self.min_window < 3 {
            return Err(GapFillError::InvalidConfig("min_window must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerMode {
    #[default]
    LinearRamp,
    LearnedBlend,
}

/// Per relative-position bin affine map `c0 + cf·fwd + cb·bwd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedBlend {
    pub bins: Vec<Option<[f64; 3]>>,
}

/// The ensemble that merges forward and backward forecasts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EnsembleCombiner {
    #[default]
    LinearRamp,
    Learned(LearnedBlend),
}

/// Forward weight at position `j` of a gap of length `n`.
pub fn ramp_weight(j: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        1.0 - j as f64 / (n - 1) as f64
    }
}

fn relative_position(j: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        j as f64 / (n - 1) as f64
    }
}

fn clamp_between(v: f64, a: f64, b: f64) -> f64 {
    v.clamp(a.min(b), a.max(b))
}

/// Merges forward and backward forecasts position by position. The result
/// always lies between the two inputs.
pub fn combine(forward: &[f64], backward: &[f64], combiner: &EnsembleCombiner) -> Result<Vec<f64>> {
    if forward.len() != backward.len() {
        return Err(GapFillError::LengthMismatch { expected: forward.len(), got: backward.len() });
    }
    if forward.is_empty() {
        return Err(GapFillError::Precondition("cannot combine empty forecasts".into()));
    }
    let n = forward.len();
    Ok(forward
        .iter()
        .zip(backward)
        .enumerate()
        .map(|(j, (&f, &b))| {
            let ramp = || {
                let a = ramp_weight(j, n);
                clamp_between(a * f + (1.0 - a) * b, f, b)
            };
            match combiner {
                EnsembleCombiner::LinearRamp => ramp(),
                EnsembleCombiner::Learned(blend) => {
                    let bin = ((relative_position(j, n) * LEARNED_BINS as f64) as usize).min(LEARNED_BINS - 1);
                    match blend.bins.get(bin).copied().flatten() {
                        Some([c0, cf, cb]) => {
                            let v = c0 + cf * f + cb * b;
                            if v.is_finite() {
                                clamp_between(v, f, b)
                            } else {
                                ramp()
                            }
                        }
                        None => ramp(),
                    }
                }
            }
        })
        .collect())
}

/// One genome fit forward on the series and backward on its reversal.
#[derive(Debug, Clone)]
pub struct DirectionalModels {
    pub forward: FittedPipeline,
    pub backward: Option<FittedPipeline>,
}

impl DirectionalModels {
    pub fn fit(genome: &Pipeline, series: &TimeSeries, w: usize) -> Result<Self> {
        let forward = fit_pipeline(genome, series, w)?;
        let backward = fit_pipeline(genome, &series.reversed(), w)?;
        Ok(Self { forward, backward: Some(backward) })
    }

    pub fn fit_forward(genome: &Pipeline, series: &TimeSeries, w: usize) -> Result<Self> {
        Ok(Self { forward: fit_pipeline(genome, series, w)?, backward: None })
    }

    /// Fits on prebuilt forward and reversed lag matrices of a validated genome.
    pub(crate) fn fit_lags(genome: &Pipeline, forward: &LagMatrix, backward: &LagMatrix) -> Result<Self> {
        Ok(Self { forward: fit_on_lags(genome, forward)?, backward: Some(fit_on_lags(genome, backward)?) })
    }
}

/// Left-pads a short window to `w` samples by extending its least-squares line.
fn pad_window(window: &[f64], w: usize) -> Vec<f64> {
    if window.len() >= w {
        return window[window.len() - w..].to_vec();
    }
    let xs: Vec<f64> = (0..window.len()).map(|i| i as f64).collect();
    let (intercept, slope) = fit_line(&xs, window);
    let missing = w - window.len();
    let mut out: Vec<f64> = (0..missing).map(|k| intercept + slope * (k as f64 - missing as f64)).collect();
    out.extend_from_slice(window);
    out
}

fn forecast_from(model: &FittedPipeline, context: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let seed = pad_window(context, model.window());
    let out = forecast_recursive(model, &seed, horizon)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(GapFillError::NonFinite("recursive forecast".into()));
    }
    Ok(out)
}

/// Forecast of the gap from its pre-gap window.
pub fn fill_forward_only(
    series: &TimeSeries,
    gap: GapSegment,
    model: &FittedPipeline,
    policy: &GapFillPolicy,
) -> Result<Vec<f64>> {
    let ctx = extract_context(series, gap, policy.w1, policy.w2);
    if ctx.pre_window.len() < policy.min_window {
        return Err(GapFillError::InsufficientPreHistory {
            available: ctx.pre_window.len(),
            required: policy.min_window,
        });
    }
    forecast_from(model, &ctx.pre_window, gap.length)
}

/// Forecast of the gap from its post-gap window by a model fit on the
/// reversed series; returned in natural time order.
pub fn fill_backward_only(
    series: &TimeSeries,
    gap: GapSegment,
    backward_model: &FittedPipeline,
    policy: &GapFillPolicy,
) -> Result<Vec<f64>> {
    let ctx = extract_context(series, gap, policy.w1, policy.w2);
    if ctx.post_window.len() < policy.min_window {
        return Err(GapFillError::InsufficientPostHistory {
            available: ctx.post_window.len(),
            required: policy.min_window,
        });
    }
    let reversed: Vec<f64> = ctx.post_window.iter().rev().copied().collect();
    let mut out = forecast_from(backward_model, &reversed, gap.length)?;
    out.reverse();
    Ok(out)
}

/// Which path produced a gap's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRoute {
    Bidirectional,
    ForwardOnly,
    BackwardOnly,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RouteCounts {
    pub bidirectional: usize,
    pub forward_only: usize,
    pub backward_only: usize,
    pub linear: usize,
}

impl RouteCounts {
    fn add(&mut self, route: FillRoute) {
        match route {
            FillRoute::Bidirectional => self.bidirectional += 1,
            FillRoute::ForwardOnly => self.forward_only += 1,
            FillRoute::BackwardOnly => self.backward_only += 1,
            FillRoute::Linear => self.linear += 1,
        }
    }
}

/// Fills one gap from the original (unfilled) context.
pub fn fill_gap(
    series: &TimeSeries,
    gap: GapSegment,
    models: &DirectionalModels,
    policy: &GapFillPolicy,
    combiner: &EnsembleCombiner,
) -> (Vec<f64>, FillRoute) {
    let forward = fill_forward_only(series, gap, &models.forward, policy).ok();
    let backward = models.backward.as_ref().and_then(|m| fill_backward_only(series, gap, m, policy).ok());
    match (forward, backward) {
        (Some(f), Some(b)) => match combine(&f, &b, combiner) {
            Ok(v) => (v, FillRoute::Bidirectional),
            Err(_) => (f, FillRoute::ForwardOnly),
        },
        (Some(f), None) => (f, FillRoute::ForwardOnly),
        (None, Some(b)) => (b, FillRoute::BackwardOnly),
        (None, None) => (linear_gap(series, gap), FillRoute::Linear),
    }
}

fn linear_gap(series: &TimeSeries, gap: GapSegment) -> Vec<f64> {
    let v = series.values();
    let left = gap.start.checked_sub(1).map(|i| v[i]).filter(|x| !x.is_nan());
    let right = v.get(gap.end()).copied().filter(|x| !x.is_nan());
    let mut local = Vec::with_capacity(gap.length + 2);
    local.push(left.unwrap_or(f64::NAN));
    local.extend(std::iter::repeat_n(f64::NAN, gap.length));
    local.push(right.unwrap_or(f64::NAN));
    if left.is_none() && right.is_none() {
        return linear_interpolate(v)[gap.indices()].to_vec();
    }
    linear_interpolate(&local)[1..=gap.length].to_vec()
}

/// Fills every gap with the given models; gaps are independent and use only
/// originally observed samples as context.
pub fn fill_with_models(
    series: &TimeSeries,
    models: &DirectionalModels,
    policy: &GapFillPolicy,
    combiner: &EnsembleCombiner,
) -> Result<(TimeSeries, RouteCounts)> {
    let gaps = scan_gaps(series);
    let fills = parallel::map(&gaps, |&gap| fill_gap(series, gap, models, policy, combiner));
    let mut values = series.values().to_vec();
    let mut routes = RouteCounts::default();
    for (gap, (fill, route)) in gaps.iter().zip(fills) {
        values[gap.indices()].copy_from_slice(&fill);
        routes.add(route);
    }
    Ok((series.with_values(values)?, routes))
}

/// Deterministic pseudo-gaps covering about `fraction` of the observed
/// samples. Each segment lies strictly inside an observed run, so it stays a
/// separate gap.
pub fn pseudo_gaps(series: &TimeSeries, fraction: f64, seed: u64) -> Vec<GapSegment> {
    let observed = series.observed_count();
    let target = (fraction * observed as f64).round() as usize;
    let mut mask: Vec<bool> = series.values().iter().map(|v| v.is_nan()).collect();
    let n = mask.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed = Vec::new();
    let mut total = 0usize;
    let mut attempts = 0usize;
    while total < target && attempts < 200 * (target / PSEUDO_GAP_MIN + 1) && n > PSEUDO_GAP_MIN + 2 {
        attempts += 1;
        let len = rng.random_range(PSEUDO_GAP_MIN..=PSEUDO_GAP_MAX).min(n - 2);
        if n < len + 2 {
            continue;
        }
        let start = rng.random_range(1..=n - len - 1);
        if mask[start - 1..start + len + 1].iter().any(|&m| m) {
            continue;
        }
        mask[start..start + len].iter_mut().for_each(|m| *m = true);
        placed.push(GapSegment::new(start, len));
        total += len;
    }
    placed.sort_by_key(|g| g.start);
    placed
}

/// Copy of `series` with `gaps` masked out.
pub fn mask_segments(series: &TimeSeries, gaps: &[GapSegment]) -> Result<TimeSeries> {
    let mut values = series.values().to_vec();
    for g in gaps {
        values[g.indices()].iter_mut().for_each(|v| *v = f64::NAN);
    }
    series.with_values(values)
}

/// Fits the per-position affine combiner on pseudo-gaps.
pub fn train_learned_blend(
    series: &TimeSeries,
    genome: &Pipeline,
    policy: &GapFillPolicy,
    fraction: f64,
    seed: u64,
) -> Result<LearnedBlend> {
    let holdout = pseudo_gaps(series, fraction, seed);
    let masked = mask_segments(series, &holdout)?;
    let models = DirectionalModels::fit(genome, &masked, policy.w)?;
    let per_gap = parallel::map(&holdout, |&gap| {
        let f = fill_forward_only(&masked, gap, &models.forward, policy).ok()?;
        let b = fill_backward_only(&masked, gap, models.backward.as_ref()?, policy).ok()?;
        Some((gap, f, b))
    });
    let mut samples: Vec<Vec<[f64; 4]>> = vec![Vec::new(); LEARNED_BINS];
    for (gap, f, b) in per_gap.into_iter().flatten() {
        for j in 0..gap.length {
            let bin = ((relative_position(j, gap.length) * LEARNED_BINS as f64) as usize).min(LEARNED_BINS - 1);
            samples[bin].push([1.0, f[j], b[j], series.values()[gap.start + j]]);
        }
    }
    let bins = samples
        .iter()
        .map(|rows| {
            if rows.len() < LEARNED_MIN_SAMPLES {
                return None;
            }
            let x = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
            let y = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r[3]));
            let c = lstsq_min_norm(&x, &y).ok()?;
            let coef = [c[0], c[1], c[2]];
            coef.iter().all(|v| v.is_finite()).then_some(coef)
        })
        .collect();
    Ok(LearnedBlend { bins })
}

/// Where the fill genome comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    SingleRidge,
    AutoMl(EvoConfig),
    Fixed(Pipeline),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Bidirectional,
    ForwardOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FillOptions {
    pub policy: Option<GapFillPolicy>,
    pub combiner: CombinerMode,
    pub source: ModelSource,
    pub direction: Direction,
    /// Seed for the learned combiner's pseudo-gaps.
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl Default for FillOptions {
    fn default() -> Self {
        Self {
            policy: None,
            combiner: CombinerMode::LinearRamp,
            source: ModelSource::SingleRidge,
            direction: Direction::Bidirectional,
            seed: 42,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FillOutcome {
    pub series: TimeSeries,
    pub genome: Option<Pipeline>,
    pub trace: Vec<f64>,
    pub routes: RouteCounts,
}

/// Model-based gap filling: scan gaps, fit the genome once on the observed
/// data, then fill each gap from its original context.
pub fn fill_series(series: &TimeSeries, options: &FillOptions) -> Result<FillOutcome> {
    let gaps = scan_gaps(series);
    if gaps.is_empty() {
        return Ok(FillOutcome {
            series: series.clone(),
            genome: None,
            trace: Vec::new(),
            routes: RouteCounts::default(),
        });
    }
    let policy = options.policy.unwrap_or_else(|| GapFillPolicy::for_length(series.len()));
    policy.validate()?;
    let observed = series.observed_count();
    if observed < policy.min_window {
        return Err(GapFillError::SeriesUnusable { observed, required: policy.min_window });
    }
    let (genome, trace) = match &options.source {
        ModelSource::SingleRidge => (Pipeline::ridge(DEFAULT_RIDGE_LAMBDA), Vec::new()),
        ModelSource::Fixed(p) => (p.clone(), Vec::new()),
        ModelSource::AutoMl(config) => {
            let result = run_search(series, policy.w, config)?;
            (result.best, result.trace)
        }
    };
    let models = match options.direction {
        Direction::Bidirectional => DirectionalModels::fit(&genome, series, policy.w)?,
        Direction::ForwardOnly => DirectionalModels::fit_forward(&genome, series, policy.w)?,
    };
    let combiner = match (options.combiner, options.direction) {
        (CombinerMode::LearnedBlend, Direction::Bidirectional) => EnsembleCombiner::Learned(train_learned_blend(
            series,
            &genome,
            &policy,
            options.holdout_fraction,
            options.seed,
        )?),
        _ => EnsembleCombiner::LinearRamp,
    };
    let (filled, routes) = fill_with_models(series, &models, &policy, &combiner)?;
    Ok(FillOutcome { series: filled, genome: Some(genome), trace, routes })
}

/// Bi-directional fill with the given policy, combiner and model source.
pub fn fill_bidirectional(
    series: &TimeSeries,
    policy: &GapFillPolicy,
    combiner: CombinerMode,
    source: ModelSource,
) -> Result<TimeSeries> {
    let options = FillOptions { policy: Some(*policy), combiner, source, ..FillOptions::default() };
    Ok(fill_series(series, &options)?.series)
}
