//! Composite models: a DAG of regressors, series transforms and linear blends.
//!
//! Node semantics, for a lag window `x` of length `w` followed by target `y`:
//!
//! * a model node with no parents regresses `y` on `x`;
//! * `trend_extract` / `residual_extract` are sources that transform a window
//!   (centered moving average with a shrinking edge, or the window minus it);
//!   a model node under a transform regresses the transform of `[x, y]` at its
//!   last position on the transform of `x`, so trend and residual are
//!   forecast separately and sum back to `y`;
//! * a model node with model parents regresses `y` on the parents' predictions
//!   (stacking, fit on in-sample predictions);
//! * `linear_blend` fits least-squares weights plus intercept on its parents'
//!   predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapFillError, Result, StructureError};
use crate::lag::{build_lag_matrix, forecast_recursive, AtomicModel, LagMatrix, ModelKind, Predictor};
use crate::linalg::lstsq_min_norm;
use crate::series::TimeSeries;

pub type NodeId = u32;

/// Upper bound on pipeline size.
pub const MAX_NODES: usize = 12;

/// Default ridge penalty (on standardized lag features).
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operation {
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    Knn { k: usize },
    TrendExtract,
    ResidualExtract,
    LinearBlend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperationClass {
    Model,
    Transform,
    Blend,
}

impl Operation {
    pub fn class(&self) -> OperationClass {
        match self {
            Operation::Ridge { .. } | Operation::Lasso { .. } | Operation::Knn { .. } => OperationClass::Model,
            Operation::TrendExtract | Operation::ResidualExtract => OperationClass::Transform,
            Operation::LinearBlend => OperationClass::Blend,
        }
    }

    pub fn model_kind(&self) -> Option<ModelKind> {
        match *self {
            Operation::Ridge { lambda } => Some(ModelKind::Ridge { lambda }),
            Operation::Lasso { lambda } => Some(ModelKind::Lasso { lambda }),
            Operation::Knn { k } => Some(ModelKind::Knn { k }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operation::Ridge { .. } => "ridge",
            Operation::Lasso { .. } => "lasso",
            Operation::Knn { .. } => "knn",
            Operation::TrendExtract => "trend_extract",
            Operation::ResidualExtract => "residual_extract",
            Operation::LinearBlend => "linear_blend",
        }
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        match *self {
            Operation::Ridge { lambda } | Operation::Lasso { lambda } => {
                map.insert("lambda".to_string(), lambda);
            }
            Operation::Knn { k } => {
                map.insert("k".to_string(), k as f64);
            }
            _ => {}
        }
        map
    }

    fn from_parts(name: &str, hp: &BTreeMap<String, f64>) -> std::result::Result<Self, String> {
        let lambda = || hp.get("lambda").copied().ok_or_else(|| format!("{name} needs lambda"));
        Ok(match name {
            "ridge" => Operation::Ridge { lambda: lambda()? },
            "lasso" => Operation::Lasso { lambda: lambda()? },
            "knn" => {
                let k = hp.get("k").copied().ok_or("knn needs k")?;
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(format!("knn k must be a positive integer, got {k}"));
                }
                Operation::Knn { k: k as usize }
            }
            "trend_extract" => Operation::TrendExtract,
            "residual_extract" => Operation::ResidualExtract,
            "linear_blend" => Operation::LinearBlend,
            other => return Err(format!("unknown operation {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NodeRepr", into = "NodeRepr")]
pub struct PipelineNode {
    pub id: NodeId,
    pub operation: Operation,
    pub parents: Vec<NodeId>,
}

#[derive(Serialize, Deserialize)]
struct NodeRepr {
    id: NodeId,
    operation: String,
    #[serde(default)]
    hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    parents: Vec<NodeId>,
}

impl TryFrom<NodeRepr> for PipelineNode {
    type Error = String;

    fn try_from(r: NodeRepr) -> std::result::Result<Self, String> {
        Ok(PipelineNode {
            id: r.id,
            operation: Operation::from_parts(&r.operation, &r.hyperparameters)?,
            parents: r.parents,
        })
    }
}

impl From<PipelineNode> for NodeRepr {
    fn from(n: PipelineNode) -> Self {
        NodeRepr {
            id: n.id,
            operation: n.operation.name().to_string(),
            hyperparameters: n.operation.hyperparameters(),
            parents: n.parents,
        }
    }
}

impl PipelineNode {
    pub fn new(id: NodeId, operation: Operation, parents: Vec<NodeId>) -> Self {
        Self { id, operation, parents }
    }
}

/// A composite model graph with a single sink `root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub nodes: Vec<PipelineNode>,
    pub root: NodeId,
}

impl Pipeline {
    pub fn new(nodes: Vec<PipelineNode>, root: NodeId) -> Self {
        Self { nodes, root }
    }

    /// One model node.
    pub fn single(operation: Operation) -> Self {
        Self { nodes: vec![PipelineNode::new(0, operation, vec![])], root: 0 }
    }

    pub fn ridge(lambda: f64) -> Self {
        Self::single(Operation::Ridge { lambda })
    }

    /// Trend and residual forecast separately by ridge models and merged by
    /// a linear blend.
    pub fn trend_residual_chain() -> Self {
        let ridge = Operation::Ridge { lambda: DEFAULT_RIDGE_LAMBDA };
        Self {
            nodes: vec![
                PipelineNode::new(0, Operation::TrendExtract, vec![]),
                PipelineNode::new(1, Operation::ResidualExtract, vec![]),
                PipelineNode::new(2, ridge, vec![0]),
                PipelineNode::new(3, ridge, vec![1]),
                PipelineNode::new(4, Operation::LinearBlend, vec![2, 3]),
            ],
            root: 4,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: NodeId) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn next_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    /// Ids of nodes that list `id` as a parent.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.parents.contains(&id)).map(|n| n.id).collect()
    }

    /// `id` together with every node upstream of it.
    pub fn ancestors_inclusive(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if seen.insert(cur) {
                if let Some(node) = self.node(cur) {
                    stack.extend(node.parents.iter().copied());
                }
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<(), StructureError> {
        self.validate_with_max(MAX_NODES)
    }

    pub fn validate_with_max(&self, max_nodes: usize) -> Result<(), StructureError> {
        if self.nodes.is_empty() {
            return Err(StructureError::Empty);
        }
        if self.nodes.len() > max_nodes {
            return Err(StructureError::TooManyNodes { count: self.nodes.len(), max: max_nodes });
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(StructureError::DuplicateId(n.id));
            }
        }
        for n in &self.nodes {
            let mut seen = BTreeSet::new();
            for &p in &n.parents {
                if !ids.contains(&p) {
                    return Err(StructureError::UnknownParent { node: n.id, parent: p });
                }
                if !seen.insert(p) {
                    return Err(StructureError::DuplicateParent { node: n.id, parent: p });
                }
            }
        }
        if !ids.contains(&self.root) {
            return Err(StructureError::UnknownRoot(self.root));
        }
        self.topo_order()?;
        let sinks: Vec<NodeId> =
            self.nodes.iter().filter(|n| !self.nodes.iter().any(|m| m.parents.contains(&n.id))).map(|n| n.id).collect();
        if sinks.len() > 1 {
            return Err(StructureError::MultipleSinks(sinks));
        }
        if sinks[0] != self.root {
            return Err(StructureError::RootNotSink { root: self.root, sink: sinks[0] });
        }
        for n in &self.nodes {
            self.check_arity(n)?;
            let hp_rule = match n.operation {
                Operation::Ridge { lambda } | Operation::Lasso { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                    Some("penalty must be finite and >= 0")
                }
                Operation::Knn { k: 0 } => Some("k must be >= 1"),
                _ => None,
            };
            if let Some(rule) = hp_rule {
                return Err(StructureError::Hyperparameter { node: n.id, rule });
            }
        }
        Ok(())
    }

    fn check_arity(&self, n: &PipelineNode) -> Result<(), StructureError> {
        let class_of = |id: NodeId| self.node(id).map(|p| p.operation.class());
        let transforms = n.parents.iter().filter(|&&p| class_of(p) == Some(OperationClass::Transform)).count();
        let rule = match n.operation.class() {
            OperationClass::Transform if !n.parents.is_empty() => Some("transforms take no parents"),
            OperationClass::Transform if n.id == self.root => Some("a transform cannot be the sink"),
            OperationClass::Blend if n.parents.len() < 2 => Some("linear_blend needs at least 2 parents"),
            OperationClass::Blend if transforms > 0 => Some("linear_blend parents must produce predictions"),
            OperationClass::Model if transforms > 0 && n.parents.len() > 1 => {
                Some("a model under a transform takes exactly one parent")
            }
            _ => None,
        };
        match rule {
            Some(rule) => Err(StructureError::Arity { node: n.id, rule }),
            None => Ok(()),
        }
    }

    /// Node indices in topological order; ties go to the smaller id, so the
    /// order does not depend on how nodes were inserted.
    pub fn topo_order(&self) -> Result<Vec<usize>, StructureError> {
        let index: BTreeMap<NodeId, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut indegree: BTreeMap<NodeId, usize> =
            self.nodes.iter().map(|n| (n.id, n.parents.iter().filter(|p| index.contains_key(p)).count())).collect();
        let mut ready: BTreeSet<NodeId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(index[&id]);
            for child in self.nodes.iter().filter(|c| c.parents.contains(&id)) {
                let d = indegree.get_mut(&child.id).expect("child indexed");
                *d -= 1;
                if *d == 0 {
                    ready.insert(child.id);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree.iter().find(|(_, &d)| d > 0).map(|(&id, _)| id).unwrap_or(self.root);
            return Err(StructureError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Id-independent description of the graph, equal for structurally equal
    /// pipelines.
    pub fn canonical(&self) -> String {
        fn render(p: &Pipeline, id: NodeId, depth: usize) -> String {
            let Some(node) = p.node(id) else { return "?".into() };
            if depth > p.nodes.len() {
                return "<cycle>".into();
            }
            let mut parts: Vec<String> = node.parents.iter().map(|&q| render(p, q, depth + 1)).collect();
            parts.sort();
            let hp: Vec<String> = node.operation.hyperparameters().iter().map(|(k, v)| format!("{k}={v:e}")).collect();
            format!("{}[{}]({})", node.operation.name(), hp.join(","), parts.join(","))
        }
        render(self, self.root, 0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pipeline: Pipeline = serde_json::from_str(text)?;
        pipeline.validate()?;
        Ok(pipeline)
    }
}

/// Shrinking-edge centered moving average with half-width `w / 2`.
pub(crate) fn centered_trend(values: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    let n = values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|p| {
            let lo = p.saturating_sub(half);
            let hi = (p + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

fn apply_transform(op: Operation, values: &[f64], w: usize) -> Vec<f64> {
    let trend = centered_trend(values, w);
    match op {
        Operation::TrendExtract => trend,
        Operation::ResidualExtract => values.iter().zip(&trend).map(|(v, t)| v - t).collect(),
        _ => unreachable!("not a transform"),
    }
}

#[derive(Debug, Clone)]
enum ModelInput {
    Lags,
    Transformed(usize),
    Stacked(Vec<usize>),
}

#[derive(Debug, Clone)]
enum FittedNode {
    Transform(Operation),
    Model { model: AtomicModel, input: ModelInput },
    Blend { parents: Vec<usize>, weights: Vec<f64>, intercept: f64 },
}

/// A pipeline with every node fitted for lag window `w`.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    genome: Pipeline,
    window: usize,
    order: Vec<usize>,
    root: usize,
    nodes: Vec<FittedNode>,
    training: LagMatrix,
    /// Root predictions on the training rows, computed on first use.
    in_sample: OnceLock<Vec<f64>>,
}

enum NodeData {
    Transformed(Arc<LagMatrix>),
    Predictions(Vec<f64>),
}

fn model_input(genome: &Pipeline, node: &PipelineNode) -> ModelInput {
    let idx: Vec<usize> = node.parents.iter().map(|&p| genome.index_of(p).expect("validated")).collect();
    match idx.as_slice() {
        [] => ModelInput::Lags,
        [p] if genome.nodes[*p].operation.class() == OperationClass::Transform => ModelInput::Transformed(*p),
        _ => ModelInput::Stacked(idx),
    }
}

fn stacked_matrix(parents: &[usize], data: &[Option<NodeData>], targets: &[f64]) -> Result<LagMatrix> {
    let cols: Vec<&Vec<f64>> = parents
        .iter()
        .map(|&p| match &data[p] {
            Some(NodeData::Predictions(v)) => v,
            _ => unreachable!("stacked parent must produce predictions"),
        })
        .collect();
    let rows = targets.len();
    let mut features = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        features.extend(cols.iter().map(|c| c[r]));
    }
    LagMatrix::new(features, targets.to_vec(), cols.len())
}

/// Fits every node in topological order on the lag matrix of `series`.
pub fn fit_pipeline(pipeline: &Pipeline, series: &TimeSeries, w: usize) -> Result<FittedPipeline> {
    pipeline.validate()?;
    let base = build_lag_matrix(series, w)?;
    fit_on_lags(pipeline, &base)
}

fn transform_matrix(op: Operation, base: &LagMatrix) -> Result<LagMatrix> {
    let w = base.width();
    let mut features = Vec::with_capacity(base.features().len());
    let mut targets = Vec::with_capacity(base.rows());
    let mut ext = Vec::with_capacity(w + 1);
    for (row, &y) in base.iter_rows().zip(base.targets()) {
        features.extend(apply_transform(op, row, w));
        ext.clear();
        ext.extend_from_slice(row);
        ext.push(y);
        targets.push(*apply_transform(op, &ext, w).last().expect("non-empty"));
    }
    LagMatrix::new(features, targets, w)
}

pub(crate) fn fit_on_lags(pipeline: &Pipeline, base: &LagMatrix) -> Result<FittedPipeline> {
    let order = pipeline.topo_order()?;
    let w = base.width();
    let n = pipeline.nodes.len();
    let mut data: Vec<Option<NodeData>> = (0..n).map(|_| None).collect();
    let mut fitted: Vec<Option<FittedNode>> = vec![None; n];
    let wrap = |id: NodeId| move |e: GapFillError| GapFillError::NodeFit { node: id, source: Box::new(e) };

    let has_children: Vec<bool> = pipeline.nodes.iter().map(|nd| !pipeline.children(nd.id).is_empty()).collect();
    for &i in &order {
        let node = &pipeline.nodes[i];
        match node.operation.class() {
            OperationClass::Transform => {
                let op = node.operation;
                let slot = usize::from(op == Operation::ResidualExtract);
                data[i] = Some(NodeData::Transformed(base.derived(slot, |b| transform_matrix(op, b))?));
                fitted[i] = Some(FittedNode::Transform(node.operation));
            }
            OperationClass::Model => {
                let input = model_input(pipeline, node);
                let stacked;
                let train: &LagMatrix = match &input {
                    ModelInput::Lags => base,
                    ModelInput::Transformed(p) => match &data[*p] {
                        Some(NodeData::Transformed(m)) => m.as_ref(),
                        _ => unreachable!("transform parent fitted first"),
                    },
                    ModelInput::Stacked(ps) => {
                        stacked = stacked_matrix(ps, &data, base.targets())?;
                        &stacked
                    }
                };
                let kind = node.operation.model_kind().expect("model node");
                let model = AtomicModel::new(kind).fit(train).map_err(wrap(node.id))?;
                if has_children[i] {
                    let preds = model.predict_training(train).map_err(wrap(node.id))?;
                    data[i] = Some(NodeData::Predictions(preds));
                }
                fitted[i] = Some(FittedNode::Model { model, input });
            }
            OperationClass::Blend => {
                let parents: Vec<usize> =
                    node.parents.iter().map(|&p| pipeline.index_of(p).expect("validated")).collect();
                let stacked = stacked_matrix(&parents, &data, base.targets())?;
                let k = stacked.width();
                let design =
                    DMatrix::from_fn(stacked.rows(), k + 1, |r, c| if c == 0 { 1.0 } else { stacked.row(r)[c - 1] });
                let coef =
                    lstsq_min_norm(&design, &DVector::from_column_slice(stacked.targets())).map_err(wrap(node.id))?;
                let intercept = coef[0];
                let weights: Vec<f64> = coef.iter().skip(1).copied().collect();
                if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(wrap(node.id)(GapFillError::NonFinite("blend weights".into())));
                }
                if has_children[i] {
                    let preds = stacked
                        .iter_rows()
                        .map(|r| intercept + r.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>())
                        .collect();
                    data[i] = Some(NodeData::Predictions(preds));
                }
                fitted[i] = Some(FittedNode::Blend { parents, weights, intercept });
            }
        }
    }
    let root = pipeline.index_of(pipeline.root).expect("validated");
    Ok(FittedPipeline {
        genome: pipeline.clone(),
        window: w,
        order,
        root,
        nodes: fitted.into_iter().map(|f| f.expect("all nodes fitted")).collect(),
        training: base.clone(),
        in_sample: OnceLock::new(),
    })
}

impl FittedPipeline {
    pub fn genome(&self) -> &Pipeline {
        &self.genome
    }

    /// Root predictions on the training rows.
    pub fn in_sample_predictions(&self) -> &[f64] {
        self.in_sample.get_or_init(|| {
            self.training.iter_rows().map(|r| self.predict(r).expect("training windows are complete")).collect()
        })
    }

    pub fn training_targets(&self) -> &[f64] {
        self.training.targets()
    }

    pub fn in_sample_mae(&self) -> f64 {
        let targets = self.training.targets();
        let preds = self.in_sample_predictions();
        preds.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / targets.len() as f64
    }

    /// The fitted atomic model of node `id`, if it is a model node.
    pub fn model(&self, id: NodeId) -> Option<&AtomicModel> {
        let i = self.genome.index_of(id)?;
        match &self.nodes[i] {
            FittedNode::Model { model, .. } => Some(model),
            _ => None,
        }
    }

    pub fn blend_weights(&self, id: NodeId) -> Option<(&[f64], f64)> {
        let i = self.genome.index_of(id)?;
        match &self.nodes[i] {
            FittedNode::Blend { weights, intercept, .. } => Some((weights, *intercept)),
            _ => None,
        }
    }
}

enum NodeValue {
    Window(Vec<f64>),
    Scalar(f64),
}

impl Predictor for FittedPipeline {
    fn window(&self) -> usize {
        self.window
    }

    fn predict(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.window {
            return Err(GapFillError::LengthMismatch { expected: self.window, got: window.len() });
        }
        let mut values: Vec<Option<NodeValue>> = (0..self.nodes.len()).map(|_| None).collect();
        let scalar = |values: &[Option<NodeValue>], p: usize| match &values[p] {
            Some(NodeValue::Scalar(v)) => *v,
            _ => unreachable!("scalar parent evaluated first"),
        };
        for &i in &self.order {
            let value = match &self.nodes[i] {
                FittedNode::Transform(op) => NodeValue::Window(apply_transform(*op, window, self.window)),
                FittedNode::Model { model, input } => NodeValue::Scalar(match input {
                    ModelInput::Lags => model.predict(window)?,
                    ModelInput::Transformed(p) => match &values[*p] {
                        Some(NodeValue::Window(t)) => model.predict(t)?,
                        _ => unreachable!("transform evaluated first"),
                    },
                    ModelInput::Stacked(ps) => {
                        let feats: Vec<f64> = ps.iter().map(|&p| scalar(&values, p)).collect();
                        model.predict(&feats)?
                    }
                }),
                FittedNode::Blend { parents, weights, intercept } => NodeValue::Scalar(
                    intercept + parents.iter().zip(weights).map(|(&p, w)| w * scalar(&values, p)).sum::<f64>(),
                ),
            };
            values[i] = Some(value);
        }
        Ok(scalar(&values, self.root))
    }
}

/// Recursive multi-step forecast from the pipeline root.
pub fn forecast_pipeline(fitted: &FittedPipeline, seed_window: &[f64], horizon: usize) -> Result<Vec<f64>> {
    forecast_recursive(fitted, seed_window, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: NodeId, op: Operation, parents: &[NodeId]) -> PipelineNode {
        PipelineNode::new(id, op, parents.to_vec())
    }

    const R: Operation = Operation::Ridge { lambda: 1.0 };

    #[test]
    fn validate_examples() {
        assert!(Pipeline::ridge(1.0).validate().is_ok());
        assert!(Pipeline::trend_residual_chain().validate().is_ok());

        let two_sinks = Pipeline::new(vec![node(0, R, &[]), node(1, R, &[0]), node(2, R, &[0])], 1);
        assert!(matches!(two_sinks.validate(), Err(StructureError::MultipleSinks(_))));

        let cycle = Pipeline::new(vec![node(0, R, &[1]), node(1, R, &[0])], 1);
        assert!(matches!(cycle.validate(), Err(StructureError::Cycle(_))));
    }

    #[test]
    fn validate_arity_rules() {
        let lonely_blend = Pipeline::new(vec![node(0, R, &[]), node(1, Operation::LinearBlend, &[0])], 1);
        assert!(matches!(lonely_blend.validate(), Err(StructureError::Arity { node: 1, .. })));

        let transform_sink = Pipeline::single(Operation::TrendExtract);
        assert!(matches!(transform_sink.validate(), Err(StructureError::Arity { node: 0, .. })));

        let blended_transform = Pipeline::new(
            vec![node(0, Operation::TrendExtract, &[]), node(1, R, &[]), node(2, Operation::LinearBlend, &[0, 1])],
            2,
        );
        assert!(blended_transform.validate().is_err());

        let bad_k = Pipeline::single(Operation::Knn { k: 0 });
        assert!(matches!(bad_k.validate(), Err(StructureError::Hyperparameter { .. })));

        let too_big = Pipeline::new((0..13).map(|i| node(i, R, &[])).collect(), 0);
        assert!(matches!(too_big.validate(), Err(StructureError::TooManyNodes { .. })));

        let wrong_root = Pipeline::new(vec![node(0, R, &[]), node(1, R, &[0])], 0);
        assert!(matches!(wrong_root.validate(), Err(StructureError::RootNotSink { .. })));
    }

    #[test]
    fn json_round_trip() {
        let p = Pipeline::trend_residual_chain();
        let text = p.to_json().unwrap();
        assert!(text.contains("\"operation\": \"linear_blend\""));
        assert!(text.contains("\"lambda\": 1.0"));
        assert_eq!(Pipeline::from_json(&text).unwrap(), p);
        assert!(Pipeline::from_json(r#"{"nodes":[{"id":0,"operation":"frobnicate"}],"root":0}"#).is_err());
    }

    #[test]
    fn canonical_ignores_ids() {
        let a = Pipeline::new(
            vec![node(0, R, &[]), node(1, Operation::Knn { k: 3 }, &[]), node(2, Operation::LinearBlend, &[0, 1])],
            2,
        );
        let b = Pipeline::new(
            vec![node(7, Operation::LinearBlend, &[9, 4]), node(4, Operation::Knn { k: 3 }, &[]), node(9, R, &[])],
            7,
        );
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn centered_trend_shrinks_at_edges() {
        let t = centered_trend(&[1.0, 2.0, 3.0, 4.0, 5.0], 2);
        assert_eq!(t, vec![1.5, 2.0, 3.0, 4.0, 4.5]);
    }

    #[test]
    fn blend_of_constant_nodes() {
        // two constant predictors a=2 and b=6 blended half/half
        let a = AtomicModel::from_linear(ModelKind::Ridge { lambda: 0.0 }, vec![0.0, 0.0], 2.0);
        let b = AtomicModel::from_linear(ModelKind::Ridge { lambda: 0.0 }, vec![0.0, 0.0], 6.0);
        let fitted = FittedPipeline {
            genome: Pipeline::new(vec![node(0, R, &[]), node(1, R, &[]), node(2, Operation::LinearBlend, &[0, 1])], 2),
            window: 2,
            order: vec![0, 1, 2],
            root: 2,
            nodes: vec![
                FittedNode::Model { model: a, input: ModelInput::Lags },
                FittedNode::Model { model: b, input: ModelInput::Lags },
                FittedNode::Blend { parents: vec![0, 1], weights: vec![0.5, 0.5], intercept: 0.0 },
            ],
            training: LagMatrix::new(vec![1.0, 1.0], vec![1.0], 2).unwrap(),
            in_sample: OnceLock::new(),
        };
        assert_eq!(forecast_pipeline(&fitted, &[1.0, 1.0], 3).unwrap(), vec![4.0; 3]);
    }
}
