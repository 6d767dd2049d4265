//! Restoration accuracy and forecast-impact scoring.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{self, FillerConfig};
use crate::bidir::{fill_series, CombinerMode, Direction, FillOptions, GapFillPolicy, ModelSource};
use crate::error::{GapFillError, Result};
use crate::evo::EvoConfig;
use crate::parallel;
use crate::pipeline::{fit_pipeline, forecast_pipeline, Pipeline};
use crate::series::{scan_gaps, TimeSeries};
use crate::synth::{generate, inject_gaps, GapSpec, SyntheticSpec};

pub const MAPE_EPSILON: f64 = 1e-9;
pub const DEFAULT_TAIL: usize = 400;
/// Lag window of the synthetic protocol. A 100-sample window spans a sixth
/// of the slow sine period and cannot separate the two regimes.
pub const SYNTH_WINDOW: usize = 200;

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64)
}

/// MAPE in percent with the count of excluded near-zero actuals.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<(f64, usize)> {
    check_pair(actual, predicted)?;
    let (sum, used) = actual
        .iter()
        .zip(predicted)
        .filter(|(a, _)| a.abs() > MAPE_EPSILON)
        .fold((0.0, 0usize), |(s, c), (a, p)| (s + (a - p).abs() / a.abs(), c + 1));
    if used == 0 {
        return Err(GapFillError::InsufficientData("every actual value is near zero".into()));
    }
    Ok((100.0 * sum / used as f64, actual.len() - used))
}

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.is_empty() {
        return Err(GapFillError::EmptyInput);
    }
    if actual.len() != predicted.len() {
        return Err(GapFillError::LengthMismatch { expected: actual.len(), got: predicted.len() });
    }
    Ok(())
}

/// The nine compared fill methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Linear,
    PolyLocal,
    PolyBatch,
    MovingAverage,
    Spline,
    Kalman,
    RidgeForward,
    RidgeBidir,
    AutomlBidir,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Linear,
        Method::PolyLocal,
        Method::PolyBatch,
        Method::MovingAverage,
        Method::Spline,
        Method::Kalman,
        Method::RidgeForward,
        Method::RidgeBidir,
        Method::AutomlBidir,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::PolyLocal => "poly-local",
            Method::PolyBatch => "poly-batch",
            Method::MovingAverage => "moving-average",
            Method::Spline => "spline",
            Method::Kalman => "kalman",
            Method::RidgeForward => "ridge-forward",
            Method::RidgeBidir => "ridge-bidir",
            Method::AutomlBidir => "automl-bidir",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GapFillError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GapFillError::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// Settings shared by every method in a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodConfig {
    pub filler: FillerConfig,
    pub policy: Option<GapFillPolicy>,
    pub combiner: CombinerMode,
    pub evo: EvoConfig,
    /// Overrides the genome of the model-based methods.
    pub pipeline: Option<Pipeline>,
    pub seed: u64,
}

impl MethodConfig {
    fn fill_options(&self, source: ModelSource, direction: Direction) -> FillOptions {
        let source = match (&self.pipeline, source) {
            (Some(p), ModelSource::SingleRidge) => ModelSource::Fixed(p.clone()),
            (_, s) => s,
        };
        FillOptions {
            policy: self.policy,
            combiner: self.combiner,
            source,
            direction,
            seed: self.seed,
            ..FillOptions::default()
        }
    }
}

pub fn run_method(method: Method, series: &TimeSeries, config: &MethodConfig) -> Result<TimeSeries> {
    let f = &config.filler;
    match method {
        Method::Linear => baseline::fill_linear(series, f),
        Method::PolyLocal => baseline::fill_poly_local(series, f),
        Method::PolyBatch => baseline::fill_poly_batch(series, f),
        Method::MovingAverage => baseline::fill_moving_average(series, f),
        Method::Spline => baseline::fill_spline(series, f),
        Method::Kalman => baseline::fill_kalman(series, f),
        Method::RidgeForward => {
            Ok(fill_series(series, &config.fill_options(ModelSource::SingleRidge, Direction::ForwardOnly))?.series)
        }
        Method::RidgeBidir => {
            Ok(fill_series(series, &config.fill_options(ModelSource::SingleRidge, Direction::Bidirectional))?.series)
        }
        Method::AutomlBidir => {
            let source = match &config.pipeline {
                Some(p) => ModelSource::Fixed(p.clone()),
                None => ModelSource::AutoMl(config.evo),
            };
            Ok(fill_series(series, &config.fill_options(source, Direction::Bidirectional))?.series)
        }
    }
}

/// Anything that can restore a gapped series; lets callers benchmark their
/// own fillers next to the built-in methods.
pub trait GapFiller: Sync {
    fn name(&self) -> String;
    fn fill(&self, series: &TimeSeries) -> Result<TimeSeries>;
}

pub struct MethodFiller {
    pub method: Method,
    pub config: MethodConfig,
}

impl GapFiller for MethodFiller {
    fn name(&self) -> String {
        self.method.name().to_string()
    }

    fn fill(&self, series: &TimeSeries) -> Result<TimeSeries> {
        run_method(self.method, series, &self.config)
    }
}

pub fn method_fillers(methods: &[Method], config: &MethodConfig) -> Vec<MethodFiller> {
    methods.iter().map(|&method| MethodFiller { method, config: config.clone() }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub forecast_mape: Option<f64>,
    pub deviation: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ReportRow {
    fn failed(method: String, err: &GapFillError) -> Self {
        Self {
            method,
            mae: None,
            mape: None,
            mape_excluded: 0,
            forecast_mape: None,
            deviation: None,
            status: format!("failed: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub row: ReportRow,
    pub restored: Option<TimeSeries>,
}

fn check_mask(clean: &TimeSeries, gapped: &TimeSeries, mask: &[bool]) -> Result<()> {
    if clean.len() != gapped.len() {
        return Err(GapFillError::LengthMismatch { expected: clean.len(), got: gapped.len() });
    }
    if mask.len() != gapped.len() {
        return Err(GapFillError::LengthMismatch { expected: gapped.len(), got: mask.len() });
    }
    if !clean.is_complete() {
        return Err(GapFillError::InvalidSeries("clean series has missing values".into()));
    }
    if let Some(i) = (0..mask.len()).find(|&i| mask[i] != gapped.is_missing(i)) {
        return Err(GapFillError::InvalidSeries(format!("mask disagrees with gapped series at index {i}")));
    }
    if !mask.iter().any(|&m| m) {
        return Err(GapFillError::InvalidSeries("mask selects no samples".into()));
    }
    Ok(())
}

/// Scores each filler over the masked indices only. Failures become rows;
/// rows are sorted by MAE with failed rows last.
pub fn run_restoration_benchmark(
    clean: &TimeSeries,
    gapped: &TimeSeries,
    mask: &[bool],
    fillers: &[&dyn GapFiller],
) -> Result<Vec<Restoration>> {
    check_mask(clean, gapped, mask)?;
    let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let actual: Vec<f64> = masked.iter().map(|&i| clean.values()[i]).collect();
    let mut out = parallel::map(fillers, |filler| {
        let name = filler.name();
        let scored = filler.fill(gapped).and_then(|restored| {
            if restored.len() != clean.len() {
                return Err(GapFillError::LengthMismatch { expected: clean.len(), got: restored.len() });
            }
            let predicted: Vec<f64> = masked.iter().map(|&i| restored.values()[i]).collect();
            if predicted.iter().any(|v| !v.is_finite()) {
                return Err(GapFillError::NonFinite(format!("{name} left non-finite values in the gaps")));
            }
            let m = mae(&actual, &predicted)?;
            let (p, excluded) = mape(&actual, &predicted)?;
            Ok((m, p, excluded, restored))
        });
        match scored {
            Ok((m, p, excluded, restored)) => Restoration {
                row: ReportRow {
                    method: name,
                    mae: Some(m),
                    mape: Some(p),
                    mape_excluded: excluded,
                    forecast_mape: None,
                    deviation: None,
                    status: "ok".into(),
                },
                restored: Some(restored),
            },
            Err(e) => Restoration { row: ReportRow::failed(name, &e), restored: None },
        }
    });
    out.sort_by(|a, b| match (a.row.mae, b.row.mae) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(out)
}

/// Held-out tail length: 400, scaled down proportionally below 2000 samples.
pub fn default_tail(n: usize) -> usize {
    if n >= 2000 {
        DEFAULT_TAIL
    } else {
        ((0.064 * n as f64).round() as usize).max(1)
    }
}

/// MAPE of the trend/residual chain (lag window `w`) trained on `series`
/// minus its tail, forecasting the tail of `clean`.
pub fn forecast_mape(clean: &TimeSeries, series: &TimeSeries, tail: usize, w: usize) -> Result<f64> {
    let n = clean.len();
    if series.len() != n {
        return Err(GapFillError::LengthMismatch { expected: n, got: series.len() });
    }
    if tail == 0 || 2 * tail >= n {
        return Err(GapFillError::Precondition(format!("tail {tail} must be positive and below half of {n}")));
    }
    let train_len = n - tail;
    let train = TimeSeries::with_origin(series.values()[..train_len].to_vec(), series.origin())?;
    let fitted = fit_pipeline(&Pipeline::trend_residual_chain(), &train, w)?;
    let seed = &train.values()[train_len - w..];
    if seed.iter().any(|v| v.is_nan()) {
        return Err(GapFillError::InsufficientPreHistory { available: 0, required: w });
    }
    let forecast = forecast_pipeline(&fitted, seed, tail)?;
    Ok(mape(&clean.values()[train_len..], &forecast)?.0)
}

/// `Ok((mape, deviation))` or the reason the forecast failed.
pub type VariantOutcome = std::result::Result<(f64, f64), String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastImpact {
    pub original_mape: f64,
    /// Per method in input order.
    pub variants: Vec<(String, VariantOutcome)>,
}

pub fn run_forecast_impact(
    clean: &TimeSeries,
    variants: &[(String, TimeSeries)],
    tail: usize,
    w: usize,
) -> Result<ForecastImpact> {
    let original_mape = forecast_mape(clean, clean, tail, w)?;
    let variants = parallel::map(variants, |(name, series)| {
        let r = forecast_mape(clean, series, tail, w).map(|m| (m, m - original_mape)).map_err(|e| e.to_string());
        (name.clone(), r)
    });
    Ok(ForecastImpact { original_mape, variants })
}

/// A complete benchmark case: ground truth, gapped series and mask.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub clean: TimeSeries,
    pub gapped: TimeSeries,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSeeds {
    pub noise: u64,
    pub gaps: u64,
    pub search: u64,
}

impl CaseSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self { noise: seed, gaps: seed.wrapping_add(1_000_003), search: seed }
    }
}

/// The default synthetic case for one seed.
pub fn synthetic_case(seed: u64, length: usize) -> Result<BenchCase> {
    let seeds = CaseSeeds::from_seed(seed);
    let clean = generate(&SyntheticSpec { rng_seed: seeds.noise, ..SyntheticSpec::with_length(length) })?;
    let (gapped, mask) = inject_gaps(&clean, &GapSpec { rng_seed: seeds.gaps, ..GapSpec::default() })?;
    Ok(BenchCase { clean, gapped, mask })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub original_forecast_mape: Option<f64>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seeds: Vec<u64>,
    pub series_length: usize,
    pub tail: usize,
    pub filler: FillerConfig,
    pub evo: EvoConfig,
    pub policy: GapFillPolicy,
    pub combiner: CombinerMode,
    pub synthetic: Option<SyntheticSpec>,
    pub gaps: Option<GapSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: RunMetadata,
    pub runs: Vec<SeedReport>,
}

/// One case's report together with the restored series behind it.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub case: BenchCase,
    pub report: SeedReport,
    pub restored: Vec<(String, TimeSeries)>,
}

/// Runs both protocols on one case. The clean series itself is reported as
/// the `original` row with zero deviation.
pub fn benchmark_case(
    case: &BenchCase,
    seed: u64,
    fillers: &[&dyn GapFiller],
    tail: usize,
    w: usize,
) -> Result<(SeedReport, Vec<(String, TimeSeries)>)> {
    let restorations = run_restoration_benchmark(&case.clean, &case.gapped, &case.mask, fillers)?;
    let variants: Vec<(String, TimeSeries)> =
        restorations.iter().filter_map(|r| r.restored.as_ref().map(|s| (r.row.method.clone(), s.clone()))).collect();
    let (original, impact) = match run_forecast_impact(&case.clean, &variants, tail, w) {
        Ok(impact) => (Some(impact.original_mape), impact.variants),
        Err(e) => (None, variants.iter().map(|(n, _)| (n.clone(), Err(e.to_string()))).collect()),
    };
    let mut rows: Vec<ReportRow> = restorations.into_iter().map(|r| r.row).collect();
    for row in &mut rows {
        if let Some((_, r)) = impact.iter().find(|(n, _)| *n == row.method) {
            match r {
                Ok((m, d)) => {
                    row.forecast_mape = Some(*m);
                    row.deviation = Some(*d);
                }
                Err(e) => row.status = format!("forecast failed: {e}"),
            }
        }
    }
    if let Some(m) = original {
        rows.push(ReportRow {
            method: "original".into(),
            mae: None,
            mape: None,
            mape_excluded: 0,
            forecast_mape: Some(m),
            deviation: Some(0.0),
            status: "ok".into(),
        });
    }
    Ok((SeedReport { seed, original_forecast_mape: original, rows }, variants))
}

/// The synthetic benchmark over consecutive seeds `seed..seed + count`.
pub fn run_synthetic_benchmark(
    seed: u64,
    count: usize,
    length: usize,
    methods: &[Method],
    config: &MethodConfig,
) -> Result<BenchmarkReport> {
    Ok(run_synthetic_cases(seed, count, length, methods, config)?.0)
}

/// [`run_synthetic_benchmark`], also returning every case and its restorations.
pub fn run_synthetic_cases(
    seed: u64,
    count: usize,
    length: usize,
    methods: &[Method],
    config: &MethodConfig,
) -> Result<(BenchmarkReport, Vec<CaseRun>)> {
    let tail = default_tail(length);
    let policy = config.policy.unwrap_or_else(|| GapFillPolicy::new(SYNTH_WINDOW.min(length / 10).max(3)));
    let config = &MethodConfig { policy: Some(policy), ..config.clone() };
    let mut runs = Vec::with_capacity(count);
    let seeds: Vec<u64> = (0..count as u64).map(|i| seed.wrapping_add(i)).collect();
    for &s in &seeds {
        let case = synthetic_case(s, length)?;
        let cfg = MethodConfig {
            evo: EvoConfig { rng_seed: CaseSeeds::from_seed(s).search, ..config.evo },
            seed: s,
            ..config.clone()
        };
        let fillers = method_fillers(methods, &cfg);
        let refs: Vec<&dyn GapFiller> = fillers.iter().map(|f| f as &dyn GapFiller).collect();
        let (report, restored) = benchmark_case(&case, s, &refs, tail, policy.w)?;
        runs.push(CaseRun { case, report, restored });
    }
    let report = BenchmarkReport {
        metadata: RunMetadata {
            seeds,
            series_length: length,
            tail,
            filler: config.filler,
            evo: config.evo,
            policy,
            combiner: config.combiner,
            synthetic: Some(SyntheticSpec { rng_seed: seed, ..SyntheticSpec::with_length(length) }),
            gaps: Some(GapSpec { rng_seed: CaseSeeds::from_seed(seed).gaps, ..GapSpec::default() }),
        },
        runs: runs.iter().map(|r| r.report.clone()).collect(),
    };
    Ok((report, runs))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl BenchmarkReport {
    /// `method,mae,mape,forecast_mape,deviation,status`, one block per seed.
    /// With several seeds a `seed` column is prepended.
    pub fn to_csv(&self, aggregate: bool) -> String {
        let multi = self.runs.len() > 1;
        let mut out = String::new();
        if multi {
            out.push_str("seed,");
        }
        out.push_str("method,mae,mape,forecast_mape,deviation,status\n");
        for run in &self.runs {
            for r in &run.rows {
                if multi {
                    let _ = write!(out, "{},", run.seed);
                }
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    csv_field(&r.method),
                    cell(r.mae),
                    cell(r.mape),
                    cell(r.forecast_mape),
                    cell(r.deviation),
                    csv_field(&r.status)
                );
            }
        }
        if aggregate {
            for row in self.aggregate() {
                if multi {
                    out.push_str("all,");
                }
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    csv_field(&row.method),
                    cell(row.mae),
                    cell(row.mape),
                    cell(row.forecast_mape),
                    cell(row.deviation),
                    row.status
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `<method>:mean` and `<method>:std` rows over successful runs, with
    /// each seed weighted equally.
    pub fn aggregate(&self) -> Vec<ReportRow> {
        let mut names: Vec<&str> = Vec::new();
        for run in &self.runs {
            for r in &run.rows {
                if !names.contains(&r.method.as_str()) {
                    names.push(&r.method);
                }
            }
        }
        let mut out = Vec::new();
        for name in names {
            let rows: Vec<&ReportRow> =
                self.runs.iter().flat_map(|run| run.rows.iter()).filter(|r| r.method == name && r.is_ok()).collect();
            let stat = |f: fn(&ReportRow) -> Option<f64>| {
                let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                mean_std(&vals)
            };
            let (mae, mape, fm, dev) =
                (stat(|r| r.mae), stat(|r| r.mape), stat(|r| r.forecast_mape), stat(|r| r.deviation));
            for (suffix, pick) in [("mean", 0usize), ("std", 1)] {
                let get = |s: Option<(f64, f64)>| s.map(|(m, sd)| if pick == 0 { m } else { sd });
                out.push(ReportRow {
                    method: format!("{name}:{suffix}"),
                    mae: get(mae),
                    mape: get(mape),
                    mape_excluded: 0,
                    forecast_mape: get(fm),
                    deviation: get(dev),
                    status: format!("n={}", rows.len()),
                });
            }
        }
        out
    }
}

/// Per-gap fill traces for plotting: `method,gap_start,index,actual,filled`.
pub fn plot_data(case: &BenchCase, restored: &[(String, TimeSeries)]) -> String {
    let gaps = scan_gaps(&case.gapped);
    let mut out = String::from("method,gap_start,index,actual,filled\n");
    for (name, series) in restored {
        for gap in &gaps {
            for i in gap.indices() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    csv_field(name),
                    case.gapped.origin() + gap.start as i64,
                    case.gapped.origin() + i as i64,
                    case.clean.values()[i],
                    series.values()[i]
                );
            }
        }
    }
    out
}
