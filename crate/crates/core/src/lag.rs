//! Lag embedding and the atomic regressors used as pipeline nodes.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapFillError, Result};
use crate::linalg::cholesky_solve;
use crate::series::TimeSeries;

const LASSO_TOL: f64 = 1e-6;
const LASSO_MAX_SWEEPS: usize = 1_000;

/// Window length used when the caller does not choose one.
pub fn default_window(len: usize) -> usize {
    if len > 1000 {
        100
    } else {
        (len / 10).max(3)
    }
}

/// Supervised `(window → next value)` pairs, stored row-major.
///
/// The matrix is immutable, so the centered Gram statistics used by the
/// linear models are computed once and shared by every fit on it.
#[derive(Clone)]
pub struct LagMatrix {
    features: Vec<f64>,
    targets: Vec<f64>,
    width: usize,
    stats: OnceLock<Arc<Standardized>>,
    derived: [OnceLock<Arc<LagMatrix>>; 2],
    norms: OnceLock<Arc<Vec<(f64, usize)>>>,
    knn_in_sample: Arc<Mutex<HashMap<usize, Arc<Vec<f64>>>>>,
}

impl PartialEq for LagMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.targets == other.targets && self.features == other.features
    }
}

impl fmt::Debug for LagMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagMatrix").field("rows", &self.rows()).field("width", &self.width).finish_non_exhaustive()
    }
}

impl LagMatrix {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || features.len() != targets.len() * width {
            return Err(GapFillError::LengthMismatch { expected: targets.len() * width, got: features.len() });
        }
        Ok(Self {
            features,
            targets,
            width,
            stats: OnceLock::new(),
            derived: Default::default(),
            norms: OnceLock::new(),
            knn_in_sample: Default::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.width)
    }

    /// Matrix derived from this one, built once per `slot`.
    pub(crate) fn derived(&self, slot: usize, build: impl FnOnce(&Self) -> Result<Self>) -> Result<Arc<Self>> {
        if let Some(m) = self.derived[slot].get() {
            return Ok(m.clone());
        }
        let m = Arc::new(build(self)?);
        Ok(self.derived[slot].get_or_init(|| m).clone())
    }

    /// knn predictions for every row, shared by all fits with the same `k`.
    fn knn_in_sample(&self, k: usize) -> Arc<Vec<f64>> {
        if let Some(p) = self.knn_in_sample.lock().expect("cache lock").get(&k) {
            return p.clone();
        }
        let preds = Arc::new(self.iter_rows().map(|r| knn_mean(self, r, k)).collect::<Vec<f64>>());
        self.knn_in_sample.lock().expect("cache lock").entry(k).or_insert(preds).clone()
    }

    /// `(euclidean norm, row)` for every row, ascending.
    fn norms(&self) -> &[(f64, usize)] {
        self.norms.get_or_init(|| {
            let mut v: Vec<(f64, usize)> =
                self.iter_rows().enumerate().map(|(i, r)| (r.iter().map(|x| x * x).sum::<f64>().sqrt(), i)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite rows"));
            Arc::new(v)
        })
    }

    fn standardized(&self) -> &Standardized {
        self.stats.get_or_init(|| Arc::new(standardize(self)))
    }
}

/// One row per index `i >= w` whose samples `[i - w, i]` are all observed.
pub fn build_lag_matrix(series: &TimeSeries, w: usize) -> Result<LagMatrix> {
    if w == 0 {
        return Err(GapFillError::InvalidConfig("window must be positive".into()));
    }
    if series.len() <= w {
        return Err(GapFillError::InsufficientContiguousData { window: w });
    }
    let values = series.values();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut run = 0usize;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            run = 0;
            continue;
        }
        run += 1;
        if run > w {
            features.extend_from_slice(&values[i - w..i]);
            targets.push(*v);
        }
    }
    if targets.is_empty() {
        return Err(GapFillError::InsufficientContiguousData { window: w });
    }
    LagMatrix::new(features, targets, w)
}

/// Anything that maps a fixed-length window to a one-step prediction.
pub trait Predictor {
    fn window(&self) -> usize;
    fn predict(&self, window: &[f64]) -> Result<f64>;
}

/// Iterated one-step forecasting: each prediction is appended to the window.
pub fn forecast_recursive<P: Predictor + ?Sized>(model: &P, seed_window: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(GapFillError::Precondition("horizon must be positive".into()));
    }
    let w = model.window();
    if seed_window.len() != w {
        return Err(GapFillError::LengthMismatch { expected: w, got: seed_window.len() });
    }
    let mut buffer = Vec::with_capacity(w + horizon);
    buffer.extend_from_slice(seed_window);
    for step in 0..horizon {
        let next = model.predict(&buffer[step..step + w])?;
        buffer.push(next);
    }
    Ok(buffer.split_off(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    Knn { k: usize },
}

impl ModelKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelKind::Ridge { lambda } | ModelKind::Lasso { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(GapFillError::InvalidConfig(format!("penalty must be finite and >= 0, got {lambda}")))
            }
            ModelKind::Knn { k: 0 } => Err(GapFillError::InvalidConfig("k must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ModelState {
    Linear {
        coefficients: Vec<f64>,
        intercept: f64,
        /// Coefficients on the standardized features, the scale the penalty acts on.
        standardized: Vec<f64>,
    },
    Knn {
        data: LagMatrix,
    },
}

/// Ridge, lasso or k-nearest-neighbours regressor over a fixed-width input.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicModel {
    kind: ModelKind,
    width: usize,
    state: Option<ModelState>,
}

impl AtomicModel {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, width: 0, state: None }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    /// Returns a fitted copy of this model.
    pub fn fit(&self, data: &LagMatrix) -> Result<AtomicModel> {
        self.kind.validate()?;
        if data.rows() == 0 {
            return Err(GapFillError::InsufficientData("no training rows".into()));
        }
        let state = match self.kind {
            ModelKind::Ridge { lambda } => fit_linear(data, |s| solve_ridge(s, lambda))?,
            ModelKind::Lasso { lambda } => fit_linear(data, |s| solve_lasso(s, lambda))?,
            ModelKind::Knn { .. } => ModelState::Knn { data: data.clone() },
        };
        Ok(AtomicModel { kind: self.kind, width: data.width(), state: Some(state) })
    }

    /// Original-unit coefficients and intercept of a fitted linear model.
    pub fn linear_parts(&self) -> Option<(&[f64], f64)> {
        match &self.state {
            Some(ModelState::Linear { coefficients, intercept, .. }) => Some((coefficients, *intercept)),
            _ => None,
        }
    }

    pub fn standardized_coefficients(&self) -> Option<&[f64]> {
        match &self.state {
            Some(ModelState::Linear { standardized, .. }) => Some(standardized),
            _ => None,
        }
    }

    /// Builds a fitted linear model directly from coefficients.
    pub fn from_linear(kind: ModelKind, coefficients: Vec<f64>, intercept: f64) -> Self {
        let width = coefficients.len();
        Self {
            kind,
            width,
            state: Some(ModelState::Linear { standardized: coefficients.clone(), coefficients, intercept }),
        }
    }
}

impl AtomicModel {
    /// Predictions for every row of the matrix the model was fitted on.
    pub(crate) fn predict_training(&self, train: &LagMatrix) -> Result<Vec<f64>> {
        match (&self.state, self.kind) {
            (Some(ModelState::Knn { .. }), ModelKind::Knn { k }) => Ok(train.knn_in_sample(k).to_vec()),
            _ => train.iter_rows().map(|r| self.predict(r)).collect(),
        }
    }
}

impl Predictor for AtomicModel {
    fn window(&self) -> usize {
        self.width
    }

    fn predict(&self, window: &[f64]) -> Result<f64> {
        let state = self.state.as_ref().ok_or(GapFillError::NotFitted)?;
        if window.len() != self.width {
            return Err(GapFillError::LengthMismatch { expected: self.width, got: window.len() });
        }
        if window.iter().any(|v| v.is_nan()) {
            return Err(GapFillError::Precondition("prediction window contains missing values".into()));
        }
        Ok(match state {
            ModelState::Linear { coefficients, intercept, .. } => {
                intercept + coefficients.iter().zip(window).map(|(c, x)| c * x).sum::<f64>()
            }
            ModelState::Knn { data } => {
                let k = match self.kind {
                    ModelKind::Knn { k } => k,
                    _ => unreachable!("knn state with linear kind"),
                };
                knn_mean(data, window, k)
            }
        })
    }
}

/// Mean target of the `k` rows nearest to `window`, ranked by
/// `(distance, row)`.
///
/// Rows are visited in order of how close their norm is to the window's
/// norm. By the triangle inequality `(|a| - |b|)^2` bounds the squared
/// distance from below, so the scan stops once that bound exceeds the k-th
/// best distance on both sides.
fn knn_mean(data: &LagMatrix, window: &[f64], k: usize) -> f64 {
    let k = k.min(data.rows());
    let norms = data.norms();
    let q = window.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut hi = norms.partition_point(|&(nm, _)| nm < q);
    let mut lo = hi;
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    loop {
        let below = lo.checked_sub(1).map(|j| q - norms[j].0);
        let above = norms.get(hi).map(|&(nm, _)| nm - q);
        let (gap, j) = match (below, above) {
            (Some(b), Some(a)) if b <= a => (b, lo - 1),
            (_, Some(a)) => (a, hi),
            (Some(b), None) => (b, lo - 1),
            (None, None) => break,
        };
        let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
        // slack keeps rounding in the bound from cutting off a tie
        if gap * gap > bound * (1.0 + 1e-9) + 1e-300 {
            break;
        }
        if j == hi {
            hi += 1;
        } else {
            lo -= 1;
        }
        let i = norms[j].1;
        let mut d = 0.0;
        for (a, b) in data.row(i).iter().zip(window) {
            d += (a - b) * (a - b);
            if d > bound {
                break;
            }
        }
        if d > bound || (best.len() == k && (d, i) > best[k - 1]) {
            continue;
        }
        let pos = best.partition_point(|&e| e < (d, i));
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best.iter().map(|&(_, i)| data.targets()[i]).sum::<f64>() / k as f64
}

/// Centered and scaled copy of the training problem.
struct Standardized {
    gram: Vec<f64>,
    cross: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    target_mean: f64,
}

fn standardize(data: &LagMatrix) -> Standardized {
    let (n, p) = (data.rows(), data.width());
    let nf = n as f64;
    let mut means = vec![0.0; p];
    for row in data.iter_rows() {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    let target_mean = data.targets().iter().sum::<f64>() / nf;

    let z = DMatrix::from_fn(n, p, |r, c| data.row(r)[c] - means[c]);
    let yc = DVector::from_iterator(n, data.targets().iter().map(|y| y - target_mean));
    let gram = z.tr_mul(&z);
    let cross = z.tr_mul(&yc);
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let sd = (gram[(j, j)] / nf).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let cross = (0..p).map(|j| cross[j] / scales[j]).collect();
    // symmetric, so row-major and column-major layouts coincide
    let gram = (0..p * p).map(|i| gram[(i / p, i % p)] / (scales[i / p] * scales[i % p])).collect();
    Standardized { gram, cross, means, scales, target_mean }
}

fn fit_linear(data: &LagMatrix, solve: impl Fn(&Standardized) -> Result<Vec<f64>>) -> Result<ModelState> {
    let s = data.standardized();
    let standardized = solve(s)?;
    let coefficients: Vec<f64> = standardized.iter().zip(&s.scales).map(|(b, sd)| b / sd).collect();
    let intercept = s.target_mean - coefficients.iter().zip(&s.means).map(|(c, m)| c * m).sum::<f64>();
    if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
        return Err(GapFillError::NonFinite("linear model coefficients".into()));
    }
    Ok(ModelState::Linear { coefficients, intercept, standardized })
}

/// Minimises `‖y − Zβ‖² + λ‖β‖²` through the normal equations.
fn solve_ridge(s: &Standardized, lambda: f64) -> Result<Vec<f64>> {
    let p = s.cross.len();
    let mut a = s.gram.clone();
    for j in 0..p {
        a[j * p + j] += lambda;
    }
    cholesky_solve(&a, &s.cross)
}

/// Minimises `‖y − Zβ‖² + λ‖β‖₁` by cyclic coordinate descent on the Gram
/// matrix, warm-started from the ridge solution with the same penalty.
/// Sweeps alternate between the active set and a full pass; the run stops
/// when a full pass moves no coefficient by more than the tolerance.
fn solve_lasso(s: &Standardized, lambda: f64) -> Result<Vec<f64>> {
    let p = s.cross.len();
    let beta = solve_ridge(s, lambda.max(1e-9)).unwrap_or_else(|_| vec![0.0; p]);
    let g_beta = (0..p).map(|j| (0..p).map(|k| s.gram[j * p + k] * beta[k]).sum()).collect();
    let mut state = LassoState { beta, g_beta };
    let threshold = 0.5 * lambda;
    let all: Vec<usize> = (0..p).collect();
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        if state.sweep(s, &all, threshold) < LASSO_TOL {
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| state.beta[j] != 0.0).collect();
        while sweeps < LASSO_MAX_SWEEPS {
            sweeps += 1;
            if state.sweep(s, &active, threshold) < LASSO_TOL {
                break;
            }
        }
    }
    Ok(state.beta)
}

struct LassoState {
    beta: Vec<f64>,
    /// Gram matrix times `beta`, kept in step with every update.
    g_beta: Vec<f64>,
}

impl LassoState {
    fn sweep(&mut self, s: &Standardized, coords: &[usize], threshold: f64) -> f64 {
        let p = s.cross.len();
        let g = &s.gram;
        let mut max_delta = 0.0_f64;
        for &j in coords {
            let gjj = g[j * p + j];
            if gjj <= 0.0 {
                continue;
            }
            let rho = s.cross[j] - self.g_beta[j] + gjj * self.beta[j];
            let updated = soft_threshold(rho, threshold) / gjj;
            let delta = updated - self.beta[j];
            if delta != 0.0 {
                self.beta[j] = updated;
                for (gb, gk) in self.g_beta.iter_mut().zip(&g[j * p..(j + 1) * p]) {
                    *gb += gk * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    match x.partial_cmp(&0.0) {
        Some(Ordering::Greater) => (x - t).max(0.0),
        Some(Ordering::Less) => (x + t).min(0.0),
        _ => 0.0,
    }
}
