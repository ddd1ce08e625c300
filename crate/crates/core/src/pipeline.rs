//! End-to-end selection runs, ablation switches, and multi-target voting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError, StageContext};
use crate::graph::{
    adaptive_thresholds, build_conflict_graph, knn_search, local_density, normalize_rows,
    ConflictGraph, NormalizedRows,
};
use crate::influence::{
    build_masked_node_embeddings, build_node_embeddings, mutual_subspace, node_weights,
    stacked_saliency, trajectory_influence, ChannelMask, NodeWeights,
};
use crate::matrixio::{CheckpointBundle, DenseMatrix};
use crate::scalar::Scalar;
use crate::synthbench::{degree_balance_by_label, DegreeBalance};
use crate::wis::{greedy_wis, top_k_by_weight, SelectionResult};

/// Selection size, either absolute or as a share of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Absolute budget for a pool of `n`. A fraction rounds half away from
    /// zero and is clamped to `[1, n]`.
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match *self {
            Budget::Count(k) if k >= 1 => Ok(k),
            Budget::Count(_) => Err(SeedError::validation("budget must be at least 1")),
            Budget::Fraction(f) if f > 0.0 && f <= 1.0 => {
                Ok(((f * n as f64).round() as usize).clamp(1, n.max(1)))
            }
            Budget::Fraction(f) => Err(SeedError::validation(format!(
                "budget fraction must lie in (0, 1], got {f}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    Named(String),
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    pub k: usize,
    pub alpha: f64,
    pub tau: f64,
    pub budget: Budget,
    pub target: TargetSelector,
    pub enable_subspace: bool,
    pub enable_local_scaling: bool,
    pub enable_wis: bool,
    pub allow_negative: bool,
    /// Build graph embeddings from the mutual-subspace channels only.
    pub mask_edges: bool,
    /// Reserved for randomized backends; every current stage is exact.
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            k: 20,
            alpha: 0.7,
            tau: 0.5,
            budget: Budget::Fraction(0.1),
            target: TargetSelector::All,
            enable_subspace: true,
            enable_local_scaling: true,
            enable_wis: true,
            allow_negative: false,
            mask_edges: false,
            seed: 0,
            batch_size: 1024,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(SeedError::validation("k must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SeedError::validation(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if !self.tau.is_finite() {
            return Err(SeedError::validation(format!("tau must be finite, got {}", self.tau)));
        }
        if self.batch_size < 1 {
            return Err(SeedError::validation("batch size must be at least 1"));
        }
        self.budget.resolve(1).map(|_| ())
    }

    /// Copy of this config aimed at one named target.
    pub fn for_target(&self, name: &str) -> Self {
        Self {
            target: TargetSelector::Named(name.to_string()),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub channel_count: usize,
    pub retained_count: usize,
    pub fallback: bool,
    /// False when the subspace switch is off and weights use every channel.
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
    pub k_eff: usize,
    pub k_clamped: bool,
    pub zero_norm_rows: usize,
    pub local_scaling: bool,
    pub per_domain: Option<DegreeBalance>,
}

pub const HISTOGRAM_BINS: usize = 32;

/// Node-weight histograms over a shared range, one per channel mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub lo: f64,
    pub hi: f64,
    pub full_mask: Vec<u64>,
    pub mutual_mask: Vec<u64>,
}

impl ScoreHistogram {
    fn new(full: &[f64], mutual: &[f64]) -> Self {
        let (lo, hi) = full
            .iter()
            .chain(mutual)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let count = |ws: &[f64]| {
            let mut bins = vec![0u64; HISTOGRAM_BINS];
            for &w in ws {
                let b = if hi > lo {
                    (((w - lo) / (hi - lo)) * HISTOGRAM_BINS as f64) as usize
                } else {
                    0
                };
                bins[b.min(HISTOGRAM_BINS - 1)] += 1;
            }
            bins
        };
        Self {
            lo,
            hi,
            full_mask: count(full),
            mutual_mask: count(mutual),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub target: String,
    pub selection: SelectionResult,
    pub mask: MaskSummary,
    pub graph_stats: GraphStats,
    pub score_histogram: ScoreHistogram,
    pub config_echo: SeedConfig,
    pub timings: Vec<StageTiming>,
}

/// A run's report together with the intermediate products behind it.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub report: RunReport,
    /// Weights used for selection.
    pub weights: NodeWeights,
    /// Weights under the full channel space.
    pub full_weights: Vec<f64>,
    /// Weights under the mutual subspace, whether or not it was applied.
    pub mutual_weights: Vec<f64>,
    pub mask: ChannelMask,
    pub graph: ConflictGraph,
    pub embeddings: NormalizedRows,
}

struct Clock {
    last: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Conflict graph, the normalized embeddings it was built from, and stats.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: ConflictGraph,
    pub embeddings: NormalizedRows,
    pub stats: GraphStats,
}

/// Build only the conflict graph. A mutual-subspace mask for edge
/// embeddings is computed when `mask_edges` is set and a target is named.
pub fn build_graph<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    config: &SeedConfig,
    labels: Option<&[usize]>,
) -> Result<GraphBuild> {
    config.validate().stage("config")?;
    check_labels(bundle.train_count(), labels)?;
    let mask = match &config.target {
        TargetSelector::Named(name) if config.mask_edges && config.enable_subspace => {
            Some(target_mask(bundle, name)?)
        }
        _ => None,
    };
    graph_stage(bundle, config, mask.as_ref(), labels, &mut Clock::new())
}

fn check_labels(n: usize, labels: Option<&[usize]>) -> Result<()> {
    match labels {
        Some(l) if l.len() != n => Err(SeedError::validation(format!(
            "{} labels for {n} training rows",
            l.len()
        )))
        .stage("config"),
        _ => Ok(()),
    }
}

fn target_mask<T: Scalar>(bundle: &CheckpointBundle<T>, target: &str) -> Result<ChannelMask> {
    if !bundle.has_target(target) {
        return Err(SeedError::UnknownTarget(target.to_string())).stage("config");
    }
    let trains: Vec<&DenseMatrix<T>> = bundle.checkpoints().iter().map(|c| &c.train).collect();
    let targets: Vec<&DenseMatrix<T>> = bundle
        .checkpoints()
        .iter()
        .map(|c| c.target(target).expect("target checked"))
        .collect();
    let st = stacked_saliency(&trains).stage("saliency")?;
    let sg = stacked_saliency(&targets).stage("saliency")?;
    mutual_subspace(&st, &sg).stage("saliency")
}

fn graph_stage<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    config: &SeedConfig,
    mask: Option<&ChannelMask>,
    labels: Option<&[usize]>,
    clock: &mut Clock,
) -> Result<GraphBuild> {
    let n = bundle.train_count();
    let raw = match mask {
        Some(m) if config.mask_edges && config.enable_subspace => build_masked_node_embeddings(bundle, m),
        _ => build_node_embeddings(bundle),
    };
    let embeddings = normalize_rows(&raw);
    drop(raw);
    clock.lap("embeddings");

    let knn = knn_search(&embeddings.matrix, config.k, config.batch_size).stage("knn")?;
    clock.lap("knn");

    let density = local_density(&knn);
    let thresholds = adaptive_thresholds(&density, config.tau, config.alpha).stage("graph")?;
    let graph = build_conflict_graph(&knn, &thresholds, config.enable_local_scaling, config.tau)
        .stage("graph")?;
    clock.lap("graph");

    let stats = GraphStats {
        node_count: n,
        edge_count: graph.edge_count(),
        max_degree: graph.max_degree(),
        mean_degree: graph.mean_degree(),
        k_eff: knn.k_eff,
        k_clamped: knn.k_clamped,
        zero_norm_rows: embeddings.zero_rows.len(),
        local_scaling: config.enable_local_scaling,
        per_domain: labels.map(|l| degree_balance_by_label(&graph, l)),
    };
    Ok(GraphBuild {
        graph,
        embeddings,
        stats,
    })
}

pub fn run_select<T: Scalar>(bundle: &CheckpointBundle<T>, config: &SeedConfig) -> Result<RunReport> {
    run_select_labeled(bundle, config, None).map(|run| run.report)
}

/// Full run; `labels` (one domain id per training row) adds per-domain
/// degree statistics to the report.
pub fn run_select_labeled<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    config: &SeedConfig,
    labels: Option<&[usize]>,
) -> Result<SeedRun> {
    config.validate().stage("config")?;
    let target = match &config.target {
        TargetSelector::Named(name) => name.clone(),
        TargetSelector::All => {
            return Err(SeedError::validation(
                "a single run needs a named target; use voting for all targets",
            ))
            .stage("config")
        }
    };
    let n = bundle.train_count();
    check_labels(n, labels)?;
    let budget = config.budget.resolve(n).stage("config")?;
    let mut clock = Clock::new();

    let mutual = target_mask(bundle, &target)?;
    clock.lap("saliency");

    let full_mask = ChannelMask::full(bundle.channel_count());
    let full_weights = trajectory_influence(bundle, &target, &full_mask)
        .and_then(|inf| node_weights(&inf))
        .stage("influence")?;
    let mutual_weights = if mutual.is_full() {
        full_weights.clone()
    } else {
        trajectory_influence(bundle, &target, &mutual)
            .and_then(|inf| node_weights(&inf))
            .stage("influence")?
    };
    let weights = if config.enable_subspace {
        mutual_weights.clone()
    } else {
        full_weights.clone()
    };
    clock.lap("influence");

    let built = graph_stage(bundle, config, Some(&mutual), labels, &mut clock)?;
    let graph = built.graph;
    let embeddings = built.embeddings;

    let mut selection = if config.enable_wis {
        greedy_wis(&graph, &weights.weights, budget, config.allow_negative)
    } else {
        top_k_by_weight(&weights.weights, budget, config.allow_negative)
    }
    .stage("select")?;
    if !graph.is_independent(&selection.selected) && config.enable_wis {
        return Err(SeedError::Invariant("greedy selection is not independent".into())).stage("select");
    }
    selection.diagnostics.mask_fallback = config.enable_subspace && mutual.fallback();
    selection.diagnostics.zero_norm_rows = embeddings.zero_rows.clone();
    selection.diagnostics.k_clamped = built.stats.k_clamped;
    clock.lap("select");

    let graph_stats = built.stats;
    let report = RunReport {
        target,
        mask: MaskSummary {
            channel_count: bundle.channel_count(),
            retained_count: if config.enable_subspace {
                mutual.retained_count()
            } else {
                bundle.channel_count()
            },
            fallback: mutual.fallback(),
            applied: config.enable_subspace,
        },
        graph_stats,
        score_histogram: ScoreHistogram::new(&full_weights.weights, &mutual_weights.weights),
        config_echo: config.clone(),
        selection,
        timings: clock.timings,
    };
    Ok(SeedRun {
        report,
        weights,
        full_weights: full_weights.weights,
        mutual_weights: mutual_weights.weights,
        mask: mutual,
        graph,
        embeddings,
    })
}

/// Votes per training row across per-target selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub votes: Vec<u32>,
    pub per_target_selected: BTreeMap<String, Vec<usize>>,
    /// Sum over all targets of each row's node weight; breaks vote ties.
    pub weight_sums: Vec<f64>,
    /// Every id, by votes desc, then weight sum desc, then id asc.
    pub ranking: Vec<usize>,
    /// Leading `round(retain_fraction * N)` ids of `ranking`.
    pub retained: Vec<usize>,
}

/// Tally per-target selections and keep the top `retain_fraction` share.
pub fn tally_votes(
    n: usize,
    selections: &[(String, Vec<usize>)],
    weight_sums: &[f64],
    retain_fraction: f64,
) -> Result<VoteTally> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(SeedError::validation(format!(
            "retain fraction must lie in (0, 1], got {retain_fraction}"
        )));
    }
    if weight_sums.len() != n {
        return Err(SeedError::validation(format!("{} weight sums for {n} rows", weight_sums.len())));
    }
    let mut votes = vec![0u32; n];
    let mut per_target_selected = BTreeMap::new();
    for (name, ids) in selections {
        let mut seen = vec![false; n];
        for &i in ids {
            if i >= n {
                return Err(SeedError::validation(format!("selected id {i} out of range for {n} rows")));
            }
            if !seen[i] {
                seen[i] = true;
                votes[i] += 1;
            }
        }
        per_target_selected.insert(name.clone(), ids.clone());
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then_with(|| (weight_sums[b] + 0.0).total_cmp(&(weight_sums[a] + 0.0)))
            .then_with(|| a.cmp(&b))
    });
    let keep = ((retain_fraction * n as f64).round() as usize).clamp(n.min(1), n);
    let retained = ranking[..keep].to_vec();
    Ok(VoteTally {
        votes,
        per_target_selected,
        weight_sums: weight_sums.to_vec(),
        ranking,
        retained,
    })
}

/// One selection per named target with the same config, then a vote.
pub fn run_vote<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    config: &SeedConfig,
    retain_fraction: f64,
) -> Result<VoteTally> {
    let names = bundle.target_names();
    if names.len() < 2 {
        return Err(SeedError::validation(format!(
            "voting needs at least 2 target sets, found {}; run a single selection instead",
            names.len()
        )));
    }
    let runs: Vec<SeedRun> = names
        .par_iter()
        .map(|name| run_select_labeled(bundle, &config.for_target(name), None))
        .collect::<Result<_>>()?;
    let n = bundle.train_count();
    let mut weight_sums = vec![0.0f64; n];
    for run in &runs {
        for (s, w) in weight_sums.iter_mut().zip(&run.weights.weights) {
            *s += w;
        }
    }
    let selections: Vec<(String, Vec<usize>)> = runs
        .into_iter()
        .map(|r| (r.report.target, r.report.selection.selected))
        .collect();
    tally_votes(n, &selections, &weight_sums, retain_fraction).stage("vote")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SeedError::io(format!("create {}", path.display()), e))
}

/// Write `selected.txt`, `report.json`, and `edges.txt` when a graph is given.
pub fn emit_report(report: &RunReport, dir: &Path, graph: Option<&ConflictGraph>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SeedError::io(format!("create {}", dir.display()), e))?;

    let path = dir.join("selected.txt");
    let mut out = create(&path)?;
    for id in &report.selection.selected {
        writeln!(out, "{id}").map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;
    }
    out.flush().map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;

    let path = dir.join("report.json");
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, report)
        .map_err(|e| SeedError::io(format!("write {}", path.display()), e.into()))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;

    if let Some(g) = graph {
        let path = dir.join("edges.txt");
        let out = create(&path)?;
        g.write_edge_list(out)
            .map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;
    }
    Ok(())
}
