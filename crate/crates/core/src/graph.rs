//! Sparse conflict graph over training rows.
//!
//! Rows are L2-normalized, each row's exact top-k neighbors by inner product
//! are found in batches, and a candidate pair becomes an edge when its cosine
//! similarity exceeds the larger of the two endpoints' thresholds. A node's
//! threshold is `max(tau, alpha * sigma)`, where `sigma` is the similarity to
//! its k-th neighbor.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Result, SeedError};
use crate::kernel::{dot_block, PackedRows, LANES};
use crate::matrixio::DenseMatrix;
use crate::scalar::Scalar;

/// Unit-norm rows plus the ids of rows that had zero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    pub matrix: DenseMatrix<f64>,
    pub zero_rows: Vec<usize>,
}

pub fn normalize_rows<T: Scalar>(m: &DenseMatrix<T>) -> NormalizedRows {
    let cols = m.cols();
    let mut data = vec![0.0f64; m.rows() * cols];
    let mut zero_rows = Vec::new();
    if cols > 0 {
        let zero: Vec<bool> = data
            .par_chunks_mut(cols)
            .zip(m.as_slice().par_chunks(cols))
            .map(|(out, row)| {
                let mut sq = 0.0f64;
                for v in row {
                    let v = v.widen();
                    sq += v * v;
                }
                let norm = sq.sqrt();
                if norm > 0.0 {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o = v.widen() / norm;
                    }
                    false
                } else {
                    true
                }
            })
            .collect();
        zero_rows = zero
            .iter()
            .enumerate()
            .filter_map(|(i, &z)| z.then_some(i))
            .collect();
    } else {
        zero_rows.extend(0..m.rows());
    }
    NormalizedRows {
        matrix: DenseMatrix::new(m.rows(), cols, data).expect("sized above"),
        zero_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub sim: f64,
}

impl Neighbor {
    /// Higher similarity first, then lower id.
    #[inline]
    fn precedes(&self, other: &Neighbor) -> bool {
        self.sim > other.sim || (self.sim == other.sim && self.id < other.id)
    }
}

/// Per-row neighbor lists sorted by descending similarity, self excluded.
///
/// Rows with zero norm have empty lists and never appear in other lists, so
/// a list can be shorter than `k_eff` when the pool contains zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub k_requested: usize,
    pub k_eff: usize,
    pub k_clamped: bool,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl KnnIndex {
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbor_ids(&self, i: usize) -> Vec<u32> {
        self.neighbors[i].iter().map(|n| n.id).collect()
    }

    pub fn neighbor_sims(&self, i: usize) -> Vec<f64> {
        self.neighbors[i].iter().map(|n| n.sim).collect()
    }
}

/// Database panels per scoring pass, small enough to stay cache resident
/// while each query tile sweeps them.
const DB_CHUNK_PANELS: usize = 16;

/// Exact top-k search by inner product over (already normalized) rows.
///
/// Output does not depend on `batch_size` or the thread count: every
/// similarity is the same sequential sum whichever batch computes it, and
/// the lists are ordered by the total order (sim desc, id asc).
pub fn knn_search(emb: &DenseMatrix<f64>, k: usize, batch_size: usize) -> Result<KnnIndex> {
    let n = emb.rows();
    if n < 2 {
        return Err(SeedError::validation(format!(
            "nearest-neighbor search needs at least 2 rows, got {n}"
        )));
    }
    if k < 1 {
        return Err(SeedError::validation("k must be at least 1"));
    }
    if batch_size < 1 {
        return Err(SeedError::validation("batch size must be at least 1"));
    }
    if n > u32::MAX as usize {
        return Err(SeedError::validation(format!("{n} rows exceed the id range")));
    }
    let k_eff = k.min(n - 1);
    let dim = emb.cols();

    let live: Vec<u32> = (0..n)
        .filter(|&i| emb.row(i).iter().any(|&v| v != 0.0))
        .map(|i| i as u32)
        .collect();
    let db = PackedRows::pack(live.iter().map(|&i| emb.row(i as usize)), live.len(), dim);
    let panel_count = db.panel_count();

    let mut neighbors: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    let lists: Vec<Vec<Vec<Neighbor>>> = live
        .par_chunks(batch_size)
        .map(|batch| {
            let mut queries = Vec::with_capacity(batch.len() * dim);
            for &q in batch {
                queries.extend_from_slice(emb.row(q as usize));
            }
            let mut tops: Vec<Vec<Neighbor>> =
                (0..batch.len()).map(|_| Vec::with_capacity(k_eff + 1)).collect();
            let mut scratch = Vec::new();
            let mut start = 0;
            while start < panel_count {
                let end = (start + DB_CHUNK_PANELS).min(panel_count);
                let width = (end - start) * LANES;
                scratch.clear();
                scratch.resize(batch.len() * width, 0.0);
                dot_block(&queries, &db, start..end, &mut scratch);
                let first = start * LANES;
                let last = (end * LANES).min(live.len());
                for (qi, &q) in batch.iter().enumerate() {
                    let sims = &scratch[qi * width..qi * width + (last - first)];
                    let top = &mut tops[qi];
                    for (&sim, &id) in sims.iter().zip(&live[first..last]) {
                        if id == q {
                            continue;
                        }
                        offer(top, Neighbor { id, sim }, k_eff);
                    }
                }
                start = end;
            }
            tops
        })
        .collect();
    for (batch, tops) in live.chunks(batch_size).zip(lists) {
        for (&q, top) in batch.iter().zip(tops) {
            neighbors[q as usize] = top;
        }
    }
    Ok(KnnIndex {
        k_requested: k,
        k_eff,
        k_clamped: k_eff < k,
        neighbors,
    })
}

#[inline]
fn offer(top: &mut Vec<Neighbor>, cand: Neighbor, k: usize) {
    if top.len() == k {
        if !cand.precedes(&top[k - 1]) {
            return;
        }
        top.pop();
    }
    let pos = top.partition_point(|n| n.precedes(&cand));
    top.insert(pos, cand);
}

/// Similarity of each node to its last listed neighbor (0 for an empty list).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDensity {
    pub sigma: Vec<f64>,
}

pub fn local_density(knn: &KnnIndex) -> LocalDensity {
    LocalDensity {
        sigma: knn
            .neighbors
            .iter()
            .map(|list| list.last().map_or(0.0, |n| n.sim))
            .collect(),
    }
}

/// `tau_i = max(tau, alpha * sigma_i)` with `alpha` strictly inside (0, 1).
pub fn adaptive_thresholds(density: &LocalDensity, tau: f64, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SeedError::validation(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    if !tau.is_finite() {
        return Err(SeedError::validation(format!("tau must be finite, got {tau}")));
    }
    Ok(density.sigma.iter().map(|&s| tau.max(alpha * s)).collect())
}

/// Undirected, unweighted graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictGraph {
    adjacency: Vec<Vec<u32>>,
    /// `(i, j)` with `i < j`, sorted.
    edges: Vec<(u32, u32)>,
    /// Similarity per edge, aligned with `edges`, when built from a kNN index.
    similarities: Option<Vec<f64>>,
    max_degree: usize,
}

impl ConflictGraph {
    /// Graph from an explicit edge list. Duplicate pairs collapse.
    pub fn from_pairs(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a == b {
                return Err(SeedError::validation(format!("self-loop on node {a}")));
            }
            if a >= node_count || b >= node_count {
                return Err(SeedError::validation(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            edges.push((a.min(b) as u32, a.max(b) as u32));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::assemble(node_count, edges, None))
    }

    fn assemble(node_count: usize, edges: Vec<(u32, u32)>, similarities: Option<Vec<f64>>) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            adjacency,
            edges,
            similarities,
            max_degree,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn mean_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.adjacency.len() as f64
        }
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn similarities(&self) -> Option<&[f64]> {
        self.similarities.as_deref()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    /// True when no two ids in `nodes` are adjacent (ids must be in range).
    pub fn is_independent(&self, nodes: &[usize]) -> bool {
        let mut member = vec![false; self.node_count()];
        for &v in nodes {
            member[v] = true;
        }
        nodes
            .iter()
            .all(|&v| self.adjacency[v].iter().all(|&u| !member[u as usize]))
    }

    /// One `i j sim` line per edge with `i < j`; `sim` is omitted for
    /// graphs built from explicit pairs.
    pub fn write_edge_list<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            match &self.similarities {
                Some(s) => writeln!(sink, "{a} {b} {}", s[e])?,
                None => writeln!(sink, "{a} {b}")?,
            }
        }
        sink.flush()
    }
}

/// Edges from the union of directed kNN candidate pairs.
///
/// With local scaling a pair is kept when its similarity is strictly above
/// `max(thresholds[i], thresholds[j])`; otherwise when strictly above `tau`.
pub fn build_conflict_graph(
    knn: &KnnIndex,
    thresholds: &[f64],
    local_scaling: bool,
    tau: f64,
) -> Result<ConflictGraph> {
    let n = knn.node_count();
    if thresholds.len() != n {
        return Err(SeedError::shape(
            "conflict graph",
            format!("{} thresholds for {n} nodes", thresholds.len()),
        ));
    }
    let mut candidates: Vec<(u32, u32, f64)> = knn
        .neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, list)| {
            let i = i as u32;
            list.iter().map(move |nb| (i.min(nb.id), i.max(nb.id), nb.sim))
        })
        .collect();
    candidates.sort_unstable_by_key(|&(a, b, _)| (a, b));
    candidates.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

    let mut edges = Vec::new();
    let mut sims = Vec::new();
    for (a, b, sim) in candidates {
        let bar = if local_scaling {
            thresholds[a as usize].max(thresholds[b as usize])
        } else {
            tau
        };
        if sim > bar {
            edges.push((a, b));
            sims.push(sim);
        }
    }
    Ok(ConflictGraph::assemble(n, edges, Some(sims)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn normalize_examples() {
        let m = DenseMatrix::from_rows(&[vec![3.0f32, 4.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let out = normalize_rows(&m);
        assert_eq!(out.matrix.row(0), &[0.6, 0.8]);
        assert_eq!(out.matrix.row(1), &[0.0, 0.0]);
        assert_eq!(out.matrix.row(2), &[1.0, 0.0]);
        assert_eq!(out.zero_rows, vec![1]);
    }

    #[test]
    fn knn_examples() {
        let m = DenseMatrix::from_rows(&[unit(0.0), unit(10.0), unit(90.0)]).unwrap();
        let knn = knn_search(&m, 1, 2).unwrap();
        assert_eq!(knn.neighbor_ids(0), vec![1]);

        let dup = DenseMatrix::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        let knn = knn_search(&dup, 1, 1).unwrap();
        assert_eq!(knn.neighbor_ids(0), vec![1]);
        assert_eq!(knn.neighbor_ids(1), vec![0]);
        assert!((knn.neighbors[0][0].sim - 1.0).abs() < 1e-12);
        assert_eq!(local_density(&knn).sigma.len(), 2);

        let four = DenseMatrix::from_rows(&[unit(0.0), unit(20.0), unit(50.0), unit(80.0)]).unwrap();
        let knn = knn_search(&four, 5, 3).unwrap();
        assert_eq!(knn.k_eff, 3);
        assert!(knn.k_clamped);
        for i in 0..4 {
            let mut ids = knn.neighbor_ids(i);
            ids.sort_unstable();
            let expect: Vec<u32> = (0..4u32).filter(|&j| j as usize != i).collect();
            assert_eq!(ids, expect);
        }

        let single = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(knn_search(&single, 1, 1).is_err());
    }

    #[test]
    fn ties_prefer_lower_id() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]])
            .unwrap();
        let knn = knn_search(&m, 1, 4).unwrap();
        assert_eq!(knn.neighbor_ids(0), vec![1]);
        assert_eq!(knn.neighbor_ids(3), vec![1]);
    }

    #[test]
    fn zero_rows_have_no_neighbors() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.8, 0.6]]).unwrap();
        let knn = knn_search(&m, 2, 2).unwrap();
        assert!(knn.neighbors[1].is_empty());
        assert_eq!(knn.neighbor_ids(0), vec![2]);
        assert_eq!(local_density(&knn).sigma[1], 0.0);
    }

    #[test]
    fn orthogonal_kth_neighbor_gives_zero_sigma() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let knn = knn_search(&m, 1, 1).unwrap();
        assert_eq!(local_density(&knn).sigma, vec![0.0, 0.0]);
    }

    #[test]
    fn threshold_examples() {
        let d = LocalDensity {
            sigma: vec![0.9, 0.2, 0.0, -0.3],
        };
        let t = adaptive_thresholds(&d, 0.5, 0.7).unwrap();
        assert!((t[0] - 0.63).abs() < 1e-12);
        assert_eq!(&t[1..], &[0.5, 0.5, 0.5]);
        assert!(adaptive_thresholds(&d, 0.5, 1.0).is_err());
        assert!(adaptive_thresholds(&d, 0.5, 0.0).is_err());
    }

    fn knn_of(pairs: &[(u32, u32, f64)], n: usize) -> KnnIndex {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b, sim) in pairs {
            neighbors[a as usize].push(Neighbor { id: b, sim });
        }
        KnnIndex {
            k_requested: 1,
            k_eff: 1,
            k_clamped: false,
            neighbors,
        }
    }

    #[test]
    fn edge_rule_examples() {
        let knn = knn_of(&[(0, 1, 1.0), (1, 0, 1.0)], 2);
        let g = build_conflict_graph(&knn, &[0.63, 0.63], true, 0.5).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);

        let knn = knn_of(&[(0, 1, 0.63)], 2);
        let g = build_conflict_graph(&knn, &[0.63, 0.5], true, 0.5).unwrap();
        assert_eq!(g.edge_count(), 0);

        let knn = knn_of(&[(0, 1, 0.0), (1, 2, 0.0), (2, 0, 0.0)], 3);
        let g = build_conflict_graph(&knn, &[0.1; 3], false, 0.1).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn one_sided_candidates_are_tested() {
        let knn = knn_of(&[(0, 1, 0.9), (1, 2, 0.95), (2, 1, 0.95)], 3);
        let g = build_conflict_graph(&knn, &[0.5; 3], true, 0.5).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.max_degree(), 2);
        assert!(!g.is_independent(&[0, 1]));
        assert!(g.is_independent(&[0, 2]));
        let mut out = Vec::new();
        g.write_edge_list(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 1 0.9\n1 2 0.95\n");
    }

    #[test]
    fn from_pairs_rejects_self_loops() {
        assert!(ConflictGraph::from_pairs(2, &[(1, 1)]).is_err());
        assert!(ConflictGraph::from_pairs(2, &[(0, 2)]).is_err());
        let g = ConflictGraph::from_pairs(3, &[(1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.mean_degree(), 2.0 / 3.0);
    }
}
