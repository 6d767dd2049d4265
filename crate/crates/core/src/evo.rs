//! Evolutionary structure search over pipelines.
//!
//! Fitness is the MAE of a bi-directional fill on pseudo-gaps carved out of
//! the observed data. The pseudo-gap mask depends only on the configured
//! seed, so fitness is a pure function of the genome and evaluations can run
//! in any order or in parallel without changing the result.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bidir::{fill_gap, mask_segments, pseudo_gaps, DirectionalModels, EnsembleCombiner, GapFillPolicy};
use crate::error::{GapFillError, Result};
use crate::lag::{build_lag_matrix, LagMatrix};
use crate::parallel;
use crate::pipeline::{NodeId, Operation, OperationClass, Pipeline, PipelineNode, DEFAULT_RIDGE_LAMBDA, MAX_NODES};
use crate::series::{GapSegment, TimeSeries};

const VARIATION_RETRIES: usize = 20;
pub const FITNESS_FOLDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elitism_count: usize,
    pub rng_seed: u64,
    pub fitness_holdout_fraction: f64,
    pub max_nodes: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            generations: 15,
            tournament_size: 3,
            mutation_rate: 0.8,
            crossover_rate: 0.5,
            elitism_count: 1,
            rng_seed: 42,
            fitness_holdout_fraction: 0.2,
            max_nodes: MAX_NODES,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GapFillError::InvalidConfig(m.to_string()));
        if self.population_size == 0 {
            return bad("population_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.elitism_count >= self.population_size {
            return bad("elitism_count must be below population_size");
        }
        if self.tournament_size < 2 {
            return bad("tournament_size must be at least 2");
        }
        if !(self.fitness_holdout_fraction > 0.0 && self.fitness_holdout_fraction < 1.0) {
            return bad("fitness_holdout_fraction must lie in (0, 1)");
        }
        if self.max_nodes == 0 || self.max_nodes > MAX_NODES {
            return bad("max_nodes must lie in [1, 12]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Pipeline,
    pub fitness: Option<f64>,
}

/// Pseudo-gap holdout shared by every fitness evaluation of one search.
///
/// The pseudo-gaps are dealt round-robin into folds. Each fold hides only
/// its own segments while the genome is fit, so training keeps enough
/// contiguous runs for long lag windows; the MAE still covers every
/// pseudo-gap.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    folds: Vec<Fold>,
    holdout: Vec<GapSegment>,
    truth: TimeSeries,
    policy: GapFillPolicy,
    max_nodes: usize,
}

#[derive(Debug, Clone)]
struct Fold {
    /// Forward and reversed lag matrices of the masked series; `None` when
    /// the masked series has no complete window.
    lags: Option<(LagMatrix, LagMatrix)>,
    gaps: Vec<GapSegment>,
}

impl FitnessContext {
    pub fn new(series: &TimeSeries, w: usize, config: &EvoConfig) -> Result<Self> {
        Self::with_folds(series, w, config, FITNESS_FOLDS)
    }

    pub fn with_folds(series: &TimeSeries, w: usize, config: &EvoConfig, folds: usize) -> Result<Self> {
        if folds == 0 {
            return Err(GapFillError::InvalidConfig("fitness needs at least one fold".into()));
        }
        let holdout = pseudo_gaps(series, config.fitness_holdout_fraction, config.rng_seed);
        let folds = (0..folds.min(holdout.len().max(1)))
            .map(|f| {
                let gaps: Vec<GapSegment> = holdout.iter().copied().skip(f).step_by(folds).collect();
                let masked = mask_segments(series, &gaps)?;
                let lags =
                    build_lag_matrix(&masked, w).and_then(|fwd| Ok((fwd, build_lag_matrix(&masked.reversed(), w)?)));
                Ok(Fold { lags: lags.ok(), gaps })
            })
            .collect::<Result<_>>()?;
        Ok(Self { folds, holdout, truth: series.clone(), policy: GapFillPolicy::new(w), max_nodes: config.max_nodes })
    }

    pub fn holdout(&self) -> &[GapSegment] {
        &self.holdout
    }

    /// MAE over the masked samples; `+∞` when the genome cannot be fit.
    pub fn evaluate(&self, genome: &Pipeline) -> f64 {
        if self.holdout.is_empty() || genome.validate_with_max(self.max_nodes).is_err() {
            return f64::INFINITY;
        }
        let mut abs_err = 0.0;
        let mut count = 0usize;
        for fold in &self.folds {
            let Some((fwd, bwd)) = &fold.lags else {
                return f64::INFINITY;
            };
            let Ok(models) = DirectionalModels::fit_lags(genome, fwd, bwd) else {
                return f64::INFINITY;
            };
            for &gap in &fold.gaps {
                // context comes from the unmasked series, as for a lone real gap
                let (fill, _) = fill_gap(&self.truth, gap, &models, &self.policy, &EnsembleCombiner::LinearRamp);
                for (j, v) in fill.iter().enumerate() {
                    abs_err += (v - self.truth.values()[gap.start + j]).abs();
                }
                count += gap.length;
            }
        }
        let mae = abs_err / count as f64;
        if mae.is_finite() {
            mae
        } else {
            f64::INFINITY
        }
    }
}

pub fn evaluate_fitness(genome: &Pipeline, series: &TimeSeries, w: usize, config: &EvoConfig) -> f64 {
    match FitnessContext::new(series, w, config) {
        Ok(ctx) => ctx.evaluate(genome),
        Err(_) => f64::INFINITY,
    }
}

fn random_model(rng: &mut impl Rng) -> Operation {
    match rng.random_range(0..3) {
        0 => Operation::Ridge { lambda: 10f64.powf(rng.random_range(-3.0..1.0)) },
        1 => Operation::Lasso { lambda: 10f64.powf(rng.random_range(-3.0..0.0)) },
        _ => Operation::Knn { k: rng.random_range(1..=10) },
    }
}

fn random_transform(rng: &mut impl Rng) -> Operation {
    if rng.random_bool(0.5) {
        Operation::TrendExtract
    } else {
        Operation::ResidualExtract
    }
}

fn random_operation(rng: &mut impl Rng) -> Operation {
    match rng.random_range(0..6) {
        0..=2 => random_model(rng),
        3 | 4 => random_transform(rng),
        _ => Operation::LinearBlend,
    }
}

struct Builder {
    nodes: Vec<PipelineNode>,
}

impl Builder {
    fn add(&mut self, op: Operation, parents: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(PipelineNode::new(id, op, parents));
        id
    }

    /// A primary model, optionally under a transform.
    fn branch(&mut self, rng: &mut impl Rng, transformed: bool) -> NodeId {
        if transformed {
            let t = self.add(random_transform(rng), vec![]);
            self.add(random_model(rng), vec![t])
        } else {
            self.add(random_model(rng), vec![])
        }
    }

    fn finish(self, root: NodeId) -> Pipeline {
        Pipeline::new(self.nodes, root)
    }
}

/// Random multi-node chain with 2–4 nodes.
pub fn random_chain(rng: &mut impl Rng) -> Pipeline {
    let mut b = Builder { nodes: Vec::new() };
    let root = match rng.random_range(0..8) {
        0 => b.branch(rng, true),
        1 => {
            let p = b.branch(rng, false);
            b.add(random_model(rng), vec![p])
        }
        2 => {
            let p = b.branch(rng, true);
            b.add(random_model(rng), vec![p])
        }
        3 => {
            let p = b.branch(rng, false);
            let q = b.add(random_model(rng), vec![p]);
            b.add(random_model(rng), vec![q])
        }
        4 => {
            let p = b.branch(rng, false);
            let q = b.branch(rng, false);
            b.add(Operation::LinearBlend, vec![p, q])
        }
        5 => {
            let p = b.branch(rng, false);
            let q = b.branch(rng, true);
            b.add(Operation::LinearBlend, vec![p, q])
        }
        6 => {
            let parents = (0..3).map(|_| b.branch(rng, false)).collect();
            b.add(Operation::LinearBlend, parents)
        }
        _ => {
            let p = b.branch(rng, false);
            let q = b.branch(rng, false);
            b.add(random_model(rng), vec![p, q])
        }
    };
    b.finish(root)
}

/// Half single-model genomes cycling through the model kinds (defaults
/// first), half random chains.
pub fn initial_population(size: usize, rng: &mut impl Rng) -> Vec<Pipeline> {
    let singles = size.div_ceil(2);
    let mut pop = Vec::with_capacity(size);
    for i in 0..singles {
        let op = match (i % 3, i < 3) {
            (0, true) => Operation::Ridge { lambda: DEFAULT_RIDGE_LAMBDA },
            (1, true) => Operation::Lasso { lambda: 0.01 },
            (2, true) => Operation::Knn { k: 5 },
            (0, false) => Operation::Ridge { lambda: 10f64.powf(rng.random_range(-3.0..1.0)) },
            (1, false) => Operation::Lasso { lambda: 10f64.powf(rng.random_range(-3.0..0.0)) },
            _ => Operation::Knn { k: rng.random_range(1..=10) },
        };
        pop.push(Pipeline::single(op));
    }
    while pop.len() < size {
        pop.push(random_chain(rng));
    }
    pop
}

fn scale_factor(rng: &mut impl Rng) -> f64 {
    let f = rng.random_range(1.0..3.0);
    if rng.random_bool(0.5) {
        f
    } else {
        1.0 / f
    }
}

/// One structural or parametric change; invalid results are re-drawn and
/// the genome is returned unchanged after repeated failure.
pub fn mutate(genome: &Pipeline, rng: &mut impl Rng, max_nodes: usize) -> Pipeline {
    for _ in 0..VARIATION_RETRIES {
        let candidate = match rng.random_range(0..4) {
            0 => swap_operation(genome, rng),
            1 => perturb_hyperparameter(genome, rng),
            2 => add_blend(genome, rng),
            _ => drop_node(genome, rng),
        };
        if let Some(c) = candidate {
            if c.validate_with_max(max_nodes).is_ok() {
                return c;
            }
        }
    }
    genome.clone()
}

fn swap_operation(genome: &Pipeline, rng: &mut impl Rng) -> Option<Pipeline> {
    let mut out = genome.clone();
    let i = rng.random_range(0..out.nodes.len());
    out.nodes[i].operation = random_operation(rng);
    Some(out)
}

fn perturb_hyperparameter(genome: &Pipeline, rng: &mut impl Rng) -> Option<Pipeline> {
    let mut out = genome.clone();
    let tunable: Vec<usize> = (0..out.nodes.len()).filter(|&i| out.nodes[i].operation.model_kind().is_some()).collect();
    let &i = tunable.choose(rng)?;
    out.nodes[i].operation = match out.nodes[i].operation {
        Operation::Ridge { lambda } => Operation::Ridge { lambda: lambda * scale_factor(rng) },
        Operation::Lasso { lambda } => Operation::Lasso { lambda: lambda * scale_factor(rng) },
        Operation::Knn { k } => {
            let k = if rng.random_bool(0.5) { k + 1 } else { k.checked_sub(1)? };
            Operation::Knn { k }
        }
        other => other,
    };
    Some(out)
}

fn add_blend(genome: &Pipeline, rng: &mut impl Rng) -> Option<Pipeline> {
    let others: Vec<NodeId> = genome
        .nodes
        .iter()
        .filter(|n| n.id != genome.root && n.operation.class() != OperationClass::Transform)
        .map(|n| n.id)
        .collect();
    let mut out = genome.clone();
    let id = out.next_id();
    let mut parents = vec![genome.root];
    if let Some(&other) = others.choose(rng) {
        parents.push(other);
    }
    out.nodes.push(PipelineNode::new(id, Operation::LinearBlend, parents));
    out.root = id;
    Some(out)
}

fn drop_node(genome: &Pipeline, rng: &mut impl Rng) -> Option<Pipeline> {
    let candidates: Vec<NodeId> = genome.nodes.iter().map(|n| n.id).filter(|&id| id != genome.root).collect();
    let &victim = candidates.choose(rng)?;
    let victim_parents = genome.node(victim)?.parents.clone();
    let mut out = genome.clone();
    out.nodes.retain(|n| n.id != victim);
    for node in &mut out.nodes {
        if let Some(pos) = node.parents.iter().position(|&p| p == victim) {
            node.parents.remove(pos);
            for &p in &victim_parents {
                if !node.parents.contains(&p) {
                    node.parents.push(p);
                }
            }
        }
    }
    Some(out)
}

/// Replaces a random non-sink subtree of `a` by a random subtree of `b`.
/// Structurally equal parents yield a copy of `a`.
pub fn crossover(a: &Pipeline, b: &Pipeline, rng: &mut impl Rng, max_nodes: usize) -> Pipeline {
    if a.canonical() == b.canonical() {
        return a.clone();
    }
    let non_sink: Vec<NodeId> = a.nodes.iter().map(|n| n.id).filter(|&id| id != a.root).collect();
    if non_sink.is_empty() {
        return a.clone();
    }
    for _ in 0..VARIATION_RETRIES {
        let cut = *non_sink.choose(rng).expect("non-empty");
        let donor_root = b.nodes.choose(rng).expect("non-empty pipeline").id;
        let candidate = splice(a, cut, b, donor_root);
        if candidate.validate_with_max(max_nodes).is_ok() {
            return candidate;
        }
    }
    a.clone()
}

fn splice(a: &Pipeline, cut: NodeId, b: &Pipeline, donor_root: NodeId) -> Pipeline {
    // nodes of `a` still reachable from its root without passing through `cut`
    let mut keep = std::collections::BTreeSet::new();
    let mut stack = vec![a.root];
    while let Some(id) = stack.pop() {
        if id == cut || !keep.insert(id) {
            continue;
        }
        if let Some(n) = a.node(id) {
            stack.extend(n.parents.iter().copied());
        }
    }
    let offset = a.next_id();
    let donor = b.ancestors_inclusive(donor_root);
    let donor_min = donor.iter().copied().min().unwrap_or(0);
    let remap = |id: NodeId| offset + (id - donor_min);
    let mut nodes: Vec<PipelineNode> = a
        .nodes
        .iter()
        .filter(|n| keep.contains(&n.id))
        .map(|n| {
            let parents = n.parents.iter().map(|&p| if p == cut { remap(donor_root) } else { p }).collect();
            PipelineNode::new(n.id, n.operation, parents)
        })
        .collect();
    nodes.extend(
        b.nodes
            .iter()
            .filter(|n| donor.contains(&n.id))
            .map(|n| PipelineNode::new(remap(n.id), n.operation, n.parents.iter().map(|&p| remap(p)).collect())),
    );
    Pipeline::new(nodes, a.root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Pipeline,
    pub best_fitness: f64,
    /// Best fitness seen after each generation.
    pub trace: Vec<f64>,
    /// Distinct genomes evaluated.
    pub evaluations: usize,
}

fn rank(fitness: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&i, &j| fitness[i].total_cmp(&fitness[j]).then(i.cmp(&j)));
    idx
}

fn tournament(fitness: &[f64], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let c = rng.random_range(0..fitness.len());
        if fitness[c].total_cmp(&fitness[best]).then(c.cmp(&best)).is_lt() {
            best = c;
        }
    }
    best
}

/// Runs the generational search and returns the best genome ever evaluated.
pub fn run_search(series: &TimeSeries, w: usize, config: &EvoConfig) -> Result<SearchResult> {
    config.validate()?;
    let ctx = FitnessContext::new(series, w, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut population = initial_population(config.population_size, &mut rng);
    let mut cache = FitnessCache::default();
    let mut fitness = cache.evaluate(&ctx, &population);
    if fitness.iter().all(|f| !f.is_finite()) {
        return Err(GapFillError::NoFeasiblePipeline);
    }
    let first = rank(&fitness)[0];
    let mut best = population[first].clone();
    let mut best_fitness = fitness[first];
    let mut trace = Vec::with_capacity(config.generations);

    for _ in 0..config.generations {
        let order = rank(&fitness);
        let mut next: Vec<Pipeline> = order[..config.elitism_count].iter().map(|&i| population[i].clone()).collect();
        let mut next_fitness: Vec<f64> = order[..config.elitism_count].iter().map(|&i| fitness[i]).collect();
        while next.len() < config.population_size {
            let p1 = tournament(&fitness, config.tournament_size, &mut rng);
            let mut child = if rng.random_bool(config.crossover_rate) {
                let p2 = tournament(&fitness, config.tournament_size, &mut rng);
                crossover(&population[p1], &population[p2], &mut rng, config.max_nodes)
            } else {
                population[p1].clone()
            };
            if rng.random_bool(config.mutation_rate) {
                child = mutate(&child, &mut rng, config.max_nodes);
            }
            next.push(child);
        }
        next_fitness.extend(cache.evaluate(&ctx, &next[config.elitism_count..]));
        population = next;
        fitness = next_fitness;
        let gen_best = rank(&fitness)[0];
        if fitness[gen_best] < best_fitness {
            best_fitness = fitness[gen_best];
            best = population[gen_best].clone();
        }
        trace.push(best_fitness);
    }
    Ok(SearchResult { best, best_fitness, trace, evaluations: cache.entries.len() })
}

/// Fitness is pure, so repeated genomes within one search are looked up by
/// their exact serialized form instead of being refit.
#[derive(Default)]
struct FitnessCache {
    entries: HashMap<String, f64>,
}

impl FitnessCache {
    fn evaluate(&mut self, ctx: &FitnessContext, genomes: &[Pipeline]) -> Vec<f64> {
        let keys: Vec<String> =
            genomes.iter().map(|g| serde_json::to_string(g).expect("pipeline serializes")).collect();
        let mut pending: Vec<(&str, &Pipeline)> = Vec::new();
        for (key, genome) in keys.iter().zip(genomes) {
            if !self.entries.contains_key(key) && !pending.iter().any(|(k, _)| k == key) {
                pending.push((key, genome));
            }
        }
        let scores = parallel::map(&pending, |(_, g)| ctx.evaluate(g));
        for ((key, _), score) in pending.iter().zip(scores) {
            self.entries.insert(key.to_string(), score);
        }
        keys.iter().map(|k| self.entries[k]).collect()
    }
}
