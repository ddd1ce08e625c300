//! Budgeted weighted independent set.
//!
//! [`greedy_wis`] pops the heaviest surviving node from a max-heap, keeps it,
//! and marks its neighbors removed; removed entries stay in the heap and are
//! skipped when popped. [`exact_wis`] is a branch-and-bound oracle for small
//! graphs used to check the greedy.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError};
use crate::graph::ConflictGraph;

/// Largest graph accepted by [`exact_wis`].
pub const EXACT_WIS_LIMIT: usize = 30;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionDiagnostics {
    /// The mutual subspace was empty and the full channel space was used.
    pub mask_fallback: bool,
    /// Rows whose embedding had zero norm.
    pub zero_norm_rows: Vec<usize>,
    /// `k` exceeded `N - 1` and was clamped.
    pub k_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Node ids in selection order.
    pub selected: Vec<usize>,
    /// Weight of each selected node, aligned with `selected`.
    pub weights: Vec<f64>,
    pub total_weight: f64,
    /// For each node, the selected node whose pick removed it.
    pub removed_by: Vec<Option<usize>>,
    pub budget: usize,
    pub diagnostics: SelectionDiagnostics,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    fn from_picks(picks: Vec<usize>, weights: &[f64], removed_by: Vec<Option<usize>>, budget: usize) -> Self {
        let selected_weights: Vec<f64> = picks.iter().map(|&v| weights[v]).collect();
        let total_weight = selected_weights.iter().sum();
        Self {
            selected: picks,
            weights: selected_weights,
            total_weight,
            removed_by,
            budget,
            diagnostics: SelectionDiagnostics::default(),
        }
    }
}

/// Heap entry: larger weight first, then smaller id.
#[derive(Debug, Clone, Copy)]
struct Entry {
    weight: f64,
    id: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // adding 0.0 folds -0.0 into +0.0 so the two compare equal
        (self.weight + 0.0)
            .total_cmp(&(other.weight + 0.0))
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn check_inputs(node_count: usize, weights: &[f64], budget: usize) -> Result<()> {
    if budget < 1 {
        return Err(SeedError::validation("budget must be at least 1"));
    }
    if weights.len() != node_count {
        return Err(SeedError::validation(format!(
            "{} weights for {node_count} nodes",
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(SeedError::validation(format!("weight of node {i} is not finite")));
    }
    Ok(())
}

/// Max-weight-first greedy, halting at `budget` picks.
///
/// Unless `allow_negative` is set the greedy also halts once the heaviest
/// surviving node has negative weight.
pub fn greedy_wis(
    graph: &ConflictGraph,
    weights: &[f64],
    budget: usize,
    allow_negative: bool,
) -> Result<SelectionResult> {
    let n = graph.node_count();
    check_inputs(n, weights, budget)?;

    let mut heap: BinaryHeap<Entry> = weights
        .iter()
        .enumerate()
        .map(|(id, &weight)| Entry { weight, id })
        .collect();
    let mut removed = vec![false; n];
    let mut removed_by = vec![None; n];
    let mut picks = Vec::with_capacity(budget.min(n));

    while picks.len() < budget {
        let Some(Entry { weight, id }) = heap.pop() else {
            break;
        };
        if removed[id] {
            continue;
        }
        if weight < 0.0 && !allow_negative {
            break;
        }
        removed[id] = true;
        picks.push(id);
        for &u in graph.neighbors(id) {
            let u = u as usize;
            if !removed[u] {
                removed[u] = true;
                removed_by[u] = Some(id);
            }
        }
    }
    Ok(SelectionResult::from_picks(picks, weights, removed_by, budget))
}

/// The `budget` heaviest nodes ignoring the graph, with the same
/// negative-weight stopping rule as [`greedy_wis`].
pub fn top_k_by_weight(weights: &[f64], budget: usize, allow_negative: bool) -> Result<SelectionResult> {
    let n = weights.len();
    check_inputs(n, weights, budget)?;
    let mut order: Vec<Entry> = weights
        .iter()
        .enumerate()
        .map(|(id, &weight)| Entry { weight, id })
        .collect();
    order.sort_unstable_by(|a, b| b.cmp(a));
    let picks = order
        .into_iter()
        .take_while(|e| allow_negative || e.weight >= 0.0)
        .take(budget)
        .map(|e| e.id)
        .collect();
    Ok(SelectionResult::from_picks(picks, weights, vec![None; n], budget))
}

/// Maximum-weight independent set of size at most `budget`.
///
/// Among optimal sets the lexicographically smallest sorted id list wins.
/// Selected ids are returned in ascending order.
pub fn exact_wis(graph: &ConflictGraph, weights: &[f64], budget: usize) -> Result<SelectionResult> {
    let n = graph.node_count();
    if n > EXACT_WIS_LIMIT {
        return Err(SeedError::SizeGuard {
            nodes: n,
            limit: EXACT_WIS_LIMIT,
        });
    }
    check_inputs(n, weights, budget)?;

    let adjacency: Vec<u32> = (0..n)
        .map(|v| graph.neighbors(v).iter().fold(0u32, |m, &u| m | (1 << u)))
        .collect();
    let mut suffix = vec![0.0f64; n + 1];
    for v in (0..n).rev() {
        suffix[v] = suffix[v + 1] + weights[v].max(0.0);
    }
    let slack = 1e-9 * (weights.iter().map(|w| w.abs()).sum::<f64>() + 1.0);

    let mut search = Search {
        n,
        budget,
        weights,
        adjacency: &adjacency,
        suffix: &suffix,
        slack,
        current: Vec::new(),
        best: Vec::new(),
        best_total: 0.0,
    };
    search.descend(0, 0, 0.0);
    let best = search.best;
    Ok(SelectionResult::from_picks(best, weights, vec![None; n], budget))
}

struct Search<'a> {
    n: usize,
    budget: usize,
    weights: &'a [f64],
    adjacency: &'a [u32],
    suffix: &'a [f64],
    slack: f64,
    current: Vec<usize>,
    best: Vec<usize>,
    best_total: f64,
}

impl Search<'_> {
    fn descend(&mut self, v: usize, blocked: u32, total: f64) {
        if total > self.best_total || (total == self.best_total && self.current < self.best) {
            self.best_total = total;
            self.best.clone_from(&self.current);
        }
        if v == self.n || self.current.len() == self.budget {
            return;
        }
        if total + self.suffix[v] + self.slack < self.best_total {
            return;
        }
        if blocked & (1 << v) == 0 && self.weights[v] >= 0.0 {
            self.current.push(v);
            self.descend(v + 1, blocked | self.adjacency[v], total + self.weights[v]);
            self.current.pop();
        }
        self.descend(v + 1, blocked, total);
    }
}

/// Random graph on `nodes` vertices with independent edges of probability
/// `edge_prob` and weights uniform in `[0, 1)`.
pub fn random_instance<R: Rng>(rng: &mut R, nodes: usize, edge_prob: f64) -> (ConflictGraph, Vec<f64>) {
    let mut pairs = Vec::new();
    for a in 0..nodes {
        for b in a + 1..nodes {
            if rng.gen::<f64>() < edge_prob {
                pairs.push((a, b));
            }
        }
    }
    let weights = (0..nodes).map(|_| rng.gen::<f64>()).collect();
    let graph = ConflictGraph::from_pairs(nodes, &pairs).expect("pairs are in range");
    (graph, weights)
}

/// Greedy-versus-exact results for one edge probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub edge_prob: f64,
    pub trials: usize,
    pub invalid: usize,
    /// Instances where `greedy < exact / (max_degree + 1)` beyond rounding.
    pub bound_violations: usize,
    pub mean_ratio: f64,
    pub min_ratio: f64,
}

/// Compare [`greedy_wis`] against [`exact_wis`] with budget `K = N` on
/// `trials` random graphs per edge probability. Node counts are drawn
/// uniformly from `1..=max_nodes`.
pub fn oracle_check(max_nodes: usize, trials: usize, edge_probs: &[f64], seed: u64) -> Result<Vec<OracleRow>> {
    if !(1..=EXACT_WIS_LIMIT).contains(&max_nodes) {
        return Err(SeedError::validation(format!(
            "node count must lie in 1..={EXACT_WIS_LIMIT}, got {max_nodes}"
        )));
    }
    let mut rows = Vec::with_capacity(edge_probs.len());
    for (pi, &p) in edge_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(SeedError::validation(format!("edge probability {p} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pi as u64);
        let mut row = OracleRow {
            edge_prob: p,
            trials,
            invalid: 0,
            bound_violations: 0,
            mean_ratio: 0.0,
            min_ratio: f64::INFINITY,
        };
        for _ in 0..trials {
            let n = rng.gen_range(1..=max_nodes);
            let (graph, weights) = random_instance(&mut rng, n, p);
            let greedy = greedy_wis(&graph, &weights, n, false)?;
            let exact = exact_wis(&graph, &weights, n)?;
            if !graph.is_independent(&greedy.selected) || greedy.len() > n {
                row.invalid += 1;
            }
            // both totals are sums of the same kind of terms in different
            // orders, so allow rounding-level slack
            let bound = exact.total_weight / (graph.max_degree() + 1) as f64;
            if greedy.total_weight < bound - 1e-12 * exact.total_weight.abs() {
                row.bound_violations += 1;
            }
            let ratio = if exact.total_weight > 0.0 {
                greedy.total_weight / exact.total_weight
            } else {
                1.0
            };
            row.mean_ratio += ratio;
            row.min_ratio = row.min_ratio.min(ratio);
        }
        if trials > 0 {
            row.mean_ratio /= trials as f64;
        } else {
            row.min_ratio = 1.0;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> ConflictGraph {
        ConflictGraph::from_pairs(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn greedy_examples() {
        let tri = ConflictGraph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let r = greedy_wis(&tri, &[3.0, 2.0, 1.0], 3, false).unwrap();
        assert_eq!(r.selected, vec![0]);
        assert_eq!(r.total_weight, 3.0);
        assert_eq!(r.removed_by, vec![None, Some(0), Some(0)]);

        let r = greedy_wis(&path3(), &[2.0, 1.0, 2.0], 3, false).unwrap();
        assert_eq!(r.selected, vec![0, 2]);
        assert_eq!(r.total_weight, 4.0);

        let empty = ConflictGraph::from_pairs(3, &[]).unwrap();
        let r = greedy_wis(&empty, &[5.0, 4.0, 3.0], 2, false).unwrap();
        assert_eq!(r.selected, vec![0, 1]);
        assert_eq!(r.total_weight, 9.0);

        assert!(greedy_wis(&empty, &[5.0, 4.0, 3.0], 0, false).is_err());
        assert!(greedy_wis(&empty, &[5.0, 4.0], 1, false).is_err());
    }

    #[test]
    fn negative_weights_stop_unless_allowed() {
        let empty = ConflictGraph::from_pairs(3, &[]).unwrap();
        let r = greedy_wis(&empty, &[1.0, -1.0, -0.0], 3, false).unwrap();
        assert_eq!(r.selected, vec![0, 2]);
        let r = greedy_wis(&empty, &[1.0, -1.0, -0.0], 3, true).unwrap();
        assert_eq!(r.selected, vec![0, 2, 1]);
        let r = top_k_by_weight(&[1.0, -1.0, 0.5], 3, false).unwrap();
        assert_eq!(r.selected, vec![0, 2]);
    }

    #[test]
    fn signed_zero_ties_by_id() {
        let empty = ConflictGraph::from_pairs(2, &[]).unwrap();
        let r = greedy_wis(&empty, &[-0.0, 0.0], 2, false).unwrap();
        assert_eq!(r.selected, vec![0, 1]);
    }

    #[test]
    fn top_k_ignores_edges_and_breaks_ties_by_id() {
        let r = top_k_by_weight(&[1.0, 3.0, 3.0, 2.0], 3, false).unwrap();
        assert_eq!(r.selected, vec![1, 2, 3]);
    }

    #[test]
    fn exact_examples() {
        let r = exact_wis(&path3(), &[2.0, 1.0, 2.0], 3).unwrap();
        assert_eq!(r.selected, vec![0, 2]);
        assert_eq!(r.total_weight, 4.0);

        let r = exact_wis(&path3(), &[1.0, 3.0, 1.0], 3).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.total_weight, 3.0);

        let one = ConflictGraph::from_pairs(1, &[]).unwrap();
        assert_eq!(exact_wis(&one, &[0.7], 1).unwrap().selected, vec![0]);
    }

    #[test]
    fn exact_respects_budget_and_prefers_smaller_ids() {
        let empty = ConflictGraph::from_pairs(4, &[]).unwrap();
        let r = exact_wis(&empty, &[1.0, 2.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(r.selected, vec![1, 2]);
    }

    #[test]
    fn oracle_rows_report_per_probability() {
        let rows = oracle_check(8, 20, &[0.1, 0.6], 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!((r.invalid, r.bound_violations), (0, 0));
            assert!(r.min_ratio <= r.mean_ratio && r.mean_ratio <= 1.0 + 1e-12);
        }
        assert!(oracle_check(31, 1, &[0.1], 0).is_err());
    }

    #[test]
    fn exact_guards_size() {
        let big = ConflictGraph::from_pairs(31, &[]).unwrap();
        assert!(matches!(
            exact_wis(&big, &[1.0; 31], 31),
            Err(SeedError::SizeGuard { nodes: 31, limit: 30 })
        ));
    }
}
