//! Trajectory influence restricted to the mutual salient subspace.
//!
//! Influence of a training row on a target row is the learning-rate weighted
//! sum, over checkpoints, of gradient inner products. Channel saliency (mean
//! absolute magnitude) picks the channels that are above average on both the
//! training and the target side; influence for node weights is recomputed on
//! those channels only.

use rayon::prelude::*;

use crate::error::{Result, SeedError};
use crate::kernel::{dot_block, PackedRows, LANES};
use crate::matrixio::{CheckpointBundle, DenseMatrix};
use crate::scalar::Scalar;

/// Mean absolute value of each column.
pub fn channel_saliency<T: Scalar>(g: &DenseMatrix<T>) -> Result<Vec<f64>> {
    stacked_saliency(&[g])
}

/// Column saliency over the rows of several matrices taken together.
///
/// Used to pool a split across checkpoints before thresholding.
pub fn stacked_saliency<T: Scalar>(mats: &[&DenseMatrix<T>]) -> Result<Vec<f64>> {
    let cols = mats
        .first()
        .map(|m| m.cols())
        .ok_or_else(|| SeedError::validation("saliency of an empty matrix list"))?;
    let rows: usize = mats.iter().map(|m| m.rows()).sum();
    if rows == 0 {
        return Err(SeedError::validation("saliency needs at least one row"));
    }
    if let Some(m) = mats.iter().find(|m| m.cols() != cols) {
        return Err(SeedError::shape(
            "saliency",
            format!("column count {} != {cols}", m.cols()),
        ));
    }
    let mut sums = vec![0.0f64; cols];
    for m in mats {
        for row in m.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v.widen().abs();
            }
        }
    }
    let n = rows as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Channel selection; never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    bits: Vec<bool>,
    retained_count: usize,
    fallback: bool,
}

impl ChannelMask {
    pub fn full(channels: usize) -> Self {
        Self {
            bits: vec![true; channels],
            retained_count: channels,
            fallback: false,
        }
    }

    /// Mask from explicit bits. An all-false vector is rejected.
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        let retained_count = bits.iter().filter(|b| **b).count();
        if retained_count == 0 {
            return Err(SeedError::validation("channel mask retains no channel"));
        }
        Ok(Self {
            bits,
            retained_count,
            fallback: false,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn retained_count(&self) -> usize {
        self.retained_count
    }

    pub fn is_full(&self) -> bool {
        self.retained_count == self.bits.len()
    }

    /// True when the mutual subspace was empty and the full space was used.
    pub fn fallback(&self) -> bool {
        self.fallback
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.bits[channel]
    }

    pub fn channels(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(c, &b)| b.then_some(c))
            .collect()
    }
}

/// Channels whose saliency is strictly above its split mean on both sides.
///
/// An empty intersection falls back to the full space with the flag set.
pub fn mutual_subspace(sal_train: &[f64], sal_target: &[f64]) -> Result<ChannelMask> {
    if sal_train.len() != sal_target.len() {
        return Err(SeedError::validation(format!(
            "saliency length mismatch: train {} vs target {}",
            sal_train.len(),
            sal_target.len()
        )));
    }
    if sal_train.is_empty() {
        return Err(SeedError::validation("saliency vectors are empty"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mt, mg) = (mean(sal_train), mean(sal_target));
    let bits: Vec<bool> = sal_train
        .iter()
        .zip(sal_target)
        .map(|(&a, &b)| a > mt && b > mg)
        .collect();
    match ChannelMask::from_bits(bits) {
        Ok(mask) => Ok(mask),
        Err(_) => Ok(ChannelMask {
            fallback: true,
            ..ChannelMask::full(sal_train.len())
        }),
    }
}

/// Learning-rate scaled inner product over the masked channels.
pub fn per_step_influence<T: Scalar>(
    g_train_row: &[T],
    g_target_row: &[T],
    lr: f64,
    mask: &ChannelMask,
) -> Result<f64> {
    if g_train_row.len() != mask.len() || g_target_row.len() != mask.len() {
        return Err(SeedError::shape(
            "per-step influence",
            format!(
                "rows of length {} and {} against a mask of {}",
                g_train_row.len(),
                g_target_row.len(),
                mask.len()
            ),
        ));
    }
    if !(lr > 0.0) {
        return Err(SeedError::validation(format!("learning rate must be positive, got {lr}")));
    }
    let mut acc = 0.0f64;
    for c in 0..mask.len() {
        if mask.bits[c] {
            acc += g_train_row[c].widen() * g_target_row[c].widen();
        }
    }
    Ok(lr * acc)
}

/// Train-by-target influence, row-major, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    values: Vec<f64>,
    train_count: usize,
    target_count: usize,
}

impl InfluenceMatrix {
    pub fn from_values(train_count: usize, target_count: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != train_count * target_count {
            return Err(SeedError::shape(
                "influence matrix",
                format!("{train_count}x{target_count} needs {} values, got {}", train_count * target_count, values.len()),
            ));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeedError::validation(format!(
                "non-finite influence at ({}, {})",
                p / target_count.max(1),
                p % target_count.max(1)
            )));
        }
        Ok(Self {
            values,
            train_count,
            target_count,
        })
    }

    pub fn train_count(&self) -> usize {
        self.train_count
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.target_count + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.target_count..(i + 1) * self.target_count]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

const ROW_CHUNK: usize = 256;

/// `values[i, j] = Σ_t η_t ⟨g_t(i)|mask, g'_t(j)|mask⟩`.
///
/// Each inner product runs left to right over the retained channels and the
/// checkpoint terms are added in checkpoint order, so the result does not
/// depend on the thread count.
pub fn trajectory_influence<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    target_name: &str,
    mask: &ChannelMask,
) -> Result<InfluenceMatrix> {
    if !bundle.has_target(target_name) {
        return Err(SeedError::UnknownTarget(target_name.to_string()));
    }
    if mask.len() != bundle.channel_count() {
        return Err(SeedError::shape(
            "trajectory influence",
            format!("mask covers {} channels, bundle has {}", mask.len(), bundle.channel_count()),
        ));
    }
    let n = bundle.train_count();
    let m = bundle.target_count(target_name).unwrap_or(0);
    let channels = mask.channels();
    let dim = channels.len();
    let mut values = vec![0.0f64; n * m];
    if m == 0 || n == 0 {
        return InfluenceMatrix::from_values(n, m, values);
    }

    for ck in bundle.checkpoints() {
        let lr = ck.learning_rate;
        let target = ck.target(target_name).expect("checked above");
        let compact_targets: Vec<Vec<f64>> =
            target.iter_rows().map(|r| gather(r, &channels)).collect();
        let packed = PackedRows::pack(compact_targets.iter().map(|r| r.as_slice()), m, dim);
        let width = packed.panel_count() * LANES;

        values
            .par_chunks_mut(ROW_CHUNK * m)
            .enumerate()
            .for_each(|(chunk, block)| {
                let start = chunk * ROW_CHUNK;
                let rows = block.len() / m;
                let mut queries = Vec::with_capacity(rows * dim);
                for i in start..start + rows {
                    let r = ck.train.row(i);
                    queries.extend(channels.iter().map(|&c| r[c].widen()));
                }
                let mut dots = vec![0.0f64; rows * width];
                dot_block(&queries, &packed, 0..packed.panel_count(), &mut dots);
                for r in 0..rows {
                    for j in 0..m {
                        block[r * m + j] += lr * dots[r * width + j];
                    }
                }
            });
    }
    InfluenceMatrix::from_values(n, m, values)
}

fn gather<T: Scalar>(row: &[T], channels: &[usize]) -> Vec<f64> {
    channels.iter().map(|&c| row[c].widen()).collect()
}

/// Per-node maximum influence over targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeWeights {
    pub weights: Vec<f64>,
    /// Lowest target index attaining the maximum.
    pub argmax_target: Vec<usize>,
}

impl NodeWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn node_weights(inf: &InfluenceMatrix) -> Result<NodeWeights> {
    if inf.target_count == 0 {
        return Err(SeedError::validation("node weights need at least one target sample"));
    }
    let mut weights = Vec::with_capacity(inf.train_count);
    let mut argmax_target = Vec::with_capacity(inf.train_count);
    for i in 0..inf.train_count {
        let row = inf.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        weights.push(row[best]);
        argmax_target.push(best);
    }
    Ok(NodeWeights {
        weights,
        argmax_target,
    })
}

/// Concatenation over checkpoints of `sqrt(η_t) · g_t(i)`, unnormalized.
///
/// Inner products of these rows are exactly the train-train trajectory
/// influence, which is what the conflict graph thresholds.
pub fn build_node_embeddings<T: Scalar>(bundle: &CheckpointBundle<T>) -> DenseMatrix<f64> {
    build_masked_node_embeddings(bundle, &ChannelMask::full(bundle.channel_count()))
}

/// Embeddings restricted to the channels of `mask`.
pub fn build_masked_node_embeddings<T: Scalar>(
    bundle: &CheckpointBundle<T>,
    mask: &ChannelMask,
) -> DenseMatrix<f64> {
    let channels = mask.channels();
    let n = bundle.train_count();
    let t = bundle.checkpoints().len();
    let width = t * channels.len();
    let mut data = vec![0.0f64; n * width];
    if width > 0 {
        data.par_chunks_mut(width).enumerate().for_each(|(i, out)| {
            for (k, ck) in bundle.checkpoints().iter().enumerate() {
                let scale = ck.learning_rate.sqrt();
                let row = ck.train.row(i);
                let dst = &mut out[k * channels.len()..(k + 1) * channels.len()];
                for (d, &c) in dst.iter_mut().zip(&channels) {
                    *d = scale * row[c].widen();
                }
            }
        });
    }
    DenseMatrix::new(n, width, data).expect("sized above")
}
