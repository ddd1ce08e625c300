//! Seeded synthetic instances with planted quality and uneven density.
//!
//! Channels are split into `S` signal channels and `Q` noise channels. Each
//! noise channel is large on the training side only, large on the target side
//! only, or small on both, so its saliency is high on at most one side.
//! Training rows sit around a per-domain unit direction with a spread set by
//! the domain's concentration `kappa`; a share of rows form a wider halo
//! around the dense core, and a share are near-duplicates of low-quality core
//! rows. High-quality rows get an extra component along the target direction
//! on the signal channels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError};
use crate::graph::ConflictGraph;
use crate::matrixio::{write_bundle, CheckpointBundle, CheckpointGradients, DenseMatrix};
use crate::scalar::dot_widened;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub count: usize,
    /// Concentration around the domain direction; higher is denser.
    pub kappa: f64,
    pub quality_fraction: f64,
}

impl DomainSpec {
    pub fn new(count: usize, kappa: f64, quality_fraction: f64) -> Self {
        Self {
            count,
            kappa,
            quality_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub domains: Vec<DomainSpec>,
    pub channel_count: usize,
    pub signal_channels: usize,
    pub noise_channels: usize,
    /// One checkpoint per entry.
    pub learning_rates: Vec<f64>,
    pub seed: u64,
    pub target_sets: usize,
    pub target_rows: usize,
    /// Amplitude of the planted component on high-quality rows.
    pub signal_amplitude: f64,
    /// Amplitude of the shared direction in target rows.
    pub target_signal: f64,
    /// Per-checkpoint noise relative to the row scale.
    pub checkpoint_noise: f64,
    /// Squared spread around the domain direction is `spread / kappa`.
    pub spread: f64,
    /// Training-side scale of the signal channels.
    pub train_signal_scale: f64,
    /// Target-side scale of the signal channels.
    pub target_signal_scale: f64,
    pub target_noise: f64,
    /// Share of noise channels salient on the training side only; the same
    /// share is salient on the target side only.
    pub unilateral_fraction: f64,
    pub halo_fraction: f64,
    /// Squared-spread multiplier for halo rows.
    pub halo_spread: f64,
    pub duplicate_fraction: f64,
    /// Consecutive duplicates sharing one source row.
    pub duplicate_clump: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::standard(0)
    }
}

impl SynthSpec {
    /// Two 300-row domains (`kappa` 50 and 2), 8 signal and 504 noise
    /// channels, two checkpoints.
    pub fn standard(seed: u64) -> Self {
        Self {
            domains: vec![DomainSpec::new(300, 50.0, 0.15), DomainSpec::new(300, 2.0, 0.15)],
            channel_count: 512,
            signal_channels: 8,
            noise_channels: 504,
            learning_rates: vec![2e-5, 2e-5],
            seed,
            target_sets: 1,
            target_rows: 20,
            signal_amplitude: 0.3,
            target_signal: 2.0,
            checkpoint_noise: 0.05,
            spread: 4.0,
            train_signal_scale: 1.5,
            target_signal_scale: 0.1,
            target_noise: 8.0,
            unilateral_fraction: 0.2,
            halo_fraction: 0.3,
            halo_spread: 24.0,
            duplicate_fraction: 0.2,
            duplicate_clump: 5,
        }
    }

    /// Standard instance with custom domain sizes, concentrations and
    /// quality fractions.
    pub fn two_domain(seed: u64, a: DomainSpec, b: DomainSpec) -> Self {
        Self {
            domains: vec![a, b],
            ..Self::standard(seed)
        }
    }

    pub fn train_count(&self) -> usize {
        self.domains.iter().map(|d| d.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SeedError::validation(m));
        if self.domains.is_empty() {
            return fail("at least one domain is required".into());
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.count < 1 {
                return fail(format!("domain {i} has no rows"));
            }
            if !(d.kappa > 0.0 && d.kappa.is_finite()) {
                return fail(format!("domain {i}: kappa must be positive, got {}", d.kappa));
            }
            if !(0.0..=1.0).contains(&d.quality_fraction) {
                return fail(format!("domain {i}: quality fraction {} outside [0, 1]", d.quality_fraction));
            }
        }
        if self.channel_count != self.signal_channels + self.noise_channels {
            return fail(format!(
                "channel count {} != {} signal + {} noise",
                self.channel_count, self.signal_channels, self.noise_channels
            ));
        }
        if self.channel_count == 0 {
            return fail("at least one channel is required".into());
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0)) {
            return fail("learning rates must be a non-empty list of positive values".into());
        }
        if self.target_sets < 1 || self.target_rows < 1 {
            return fail("at least one target set with one row is required".into());
        }
        for (name, p) in [
            ("unilateral fraction", self.unilateral_fraction * 2.0),
            ("halo fraction", self.halo_fraction),
            ("duplicate fraction", self.duplicate_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} out of range"));
            }
        }
        if self.duplicate_clump < 1 {
            return fail("duplicate clump must be at least 1".into());
        }
        for (name, v) in [
            ("spread", self.spread),
            ("halo spread", self.halo_spread),
            ("checkpoint noise", self.checkpoint_noise),
            ("target noise", self.target_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Planted structure of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub domain_label: Vec<usize>,
    pub is_high_quality: Vec<bool>,
    /// Planted signal strength; 0 for rows without signal.
    pub true_quality_score: Vec<f64>,
    pub is_halo: Vec<bool>,
    pub is_duplicate: Vec<bool>,
    pub domain_count: usize,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.domain_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_label.is_empty()
    }

    pub fn high_quality_count(&self) -> usize {
        self.is_high_quality.iter().filter(|&&h| h).count()
    }
}

const STREAM_CHANNELS: u64 = 0;
const STREAM_DOMAIN: u64 = 1 << 32;
const STREAM_TARGET: u64 = 2 << 32;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct ChannelScales {
    train: Vec<f64>,
    target: Vec<f64>,
    direction: Vec<f64>,
}

fn channel_scales(spec: &SynthSpec) -> ChannelScales {
    let mut rng = stream(spec.seed, STREAM_CHANNELS);
    let (s, q) = (spec.signal_channels, spec.noise_channels);
    let jitter = LogNormal::new(0.0, 0.3).expect("valid parameters");
    let kinds: Vec<f64> = (0..q).map(|_| rng.gen::<f64>()).collect();
    let p = spec.unilateral_fraction;
    let level = |hot: bool| if hot { 3.0 } else { 0.3 };

    let mut train = vec![spec.train_signal_scale; s];
    train.extend(kinds.iter().map(|&k| level(k < p) * jitter.sample(&mut rng)));
    let mut target = vec![spec.target_signal_scale; s];
    target.extend(
        kinds
            .iter()
            .map(|&k| level(k >= p && k < 2.0 * p) * jitter.sample(&mut rng)),
    );
    let rms = (train.iter().map(|l| l * l).sum::<f64>() / train.len() as f64).sqrt();
    train.iter_mut().for_each(|l| *l /= rms);

    let mut direction: Vec<f64> = (0..s).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        direction.iter_mut().for_each(|v| *v /= norm);
    }
    ChannelScales {
        train,
        target,
        direction,
    }
}

struct DomainRows {
    /// `[checkpoint][row * C + c]`
    checkpoints: Vec<Vec<f32>>,
    high_quality: Vec<bool>,
    quality: Vec<f64>,
    halo: Vec<bool>,
    duplicate: Vec<bool>,
}

fn domain_rows(spec: &SynthSpec, d: usize, scales: &ChannelScales) -> DomainRows {
    let dom = &spec.domains[d];
    let c = spec.channel_count;
    let s = spec.signal_channels;
    let mut rng = stream(spec.seed, STREAM_DOMAIN + d as u64);

    let mut mu: Vec<f64> = scales.train.iter().map(|l| normal(&mut rng) * l).collect();
    let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    mu.iter_mut().for_each(|v| *v /= norm);

    let dups = ((spec.duplicate_fraction * dom.count as f64).round() as usize).min(dom.count - 1);
    let base = dom.count - dups;
    let mut rows: Vec<f64> = Vec::with_capacity(dom.count * c);
    let mut high_quality = Vec::with_capacity(dom.count);
    let mut quality = Vec::with_capacity(dom.count);
    let mut halo = Vec::with_capacity(dom.count);
    let mut plain_core = Vec::new();

    for i in 0..base {
        let is_halo = rng.gen::<f64>() < spec.halo_fraction;
        let s2 = spec.spread / dom.kappa * if is_halo { spec.halo_spread } else { 1.0 };
        let mut e: Vec<f64> = (0..c).map(|_| normal(&mut rng)).collect();
        let along: f64 = e.iter().zip(&mu).map(|(a, b)| a * b).sum();
        e.iter_mut().zip(&mu).for_each(|(v, m)| *v -= along * m);
        let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if en > 0.0 { s2.sqrt() / en } else { 0.0 };
        let mut x: Vec<f64> = mu.iter().zip(&e).map(|(m, v)| m + scale * v).collect();

        let hq = rng.gen::<f64>() < dom.quality_fraction;
        let q = if hq { rng.gen_range(0.5..1.5) } else { 0.0 };
        for (xv, u) in x[..s].iter_mut().zip(&scales.direction) {
            *xv += spec.signal_amplitude * q * u;
        }
        rows.extend_from_slice(&x);
        high_quality.push(hq);
        quality.push(q);
        halo.push(is_halo);
        if !hq && !is_halo {
            plain_core.push(i);
        }
    }
    let jitter = 0.02 / (c as f64).sqrt();
    for i in 0..dups {
        let src = if plain_core.is_empty() {
            base - 1
        } else {
            plain_core[(i / spec.duplicate_clump) % plain_core.len()]
        };
        let x: Vec<f64> = (0..c)
            .map(|ch| rows[src * c + ch] + jitter * normal(&mut rng) * scales.train[ch])
            .collect();
        rows.extend_from_slice(&x);
        high_quality.push(false);
        quality.push(0.0);
        halo.push(false);
    }
    let mut duplicate = vec![false; base];
    duplicate.resize(dom.count, true);

    let noise = spec.checkpoint_noise / (c as f64).sqrt();
    let checkpoints = (0..spec.learning_rates.len())
        .map(|_| {
            rows.chunks(c)
                .flat_map(|row| {
                    row.iter()
                        .zip(&scales.train)
                        .map(|(v, l)| (v + noise * normal(&mut rng) * l) as f32)
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    DomainRows {
        checkpoints,
        high_quality,
        quality,
        halo,
        duplicate,
    }
}

fn target_rows(spec: &SynthSpec, b: usize, scales: &ChannelScales) -> Vec<DenseMatrix<f32>> {
    let c = spec.channel_count;
    let m = spec.target_rows;
    let mut rng = stream(spec.seed, STREAM_TARGET + b as u64);
    let spread = spec.target_noise / (c as f64).sqrt();
    let mut base = vec![0.0f64; m * c];
    for row in base.chunks_mut(c) {
        for (ch, v) in row.iter_mut().enumerate() {
            let planted = scales.direction.get(ch).map_or(0.0, |u| spec.target_signal * u);
            *v = planted + spread * normal(&mut rng) * scales.target[ch];
        }
    }
    let noise = spec.checkpoint_noise / (c as f64).sqrt();
    spec.learning_rates
        .iter()
        .map(|_| {
            let data = base
                .chunks(c)
                .flat_map(|row| {
                    row.iter()
                        .zip(&scales.target)
                        .map(|(v, l)| (v + noise * normal(&mut rng) * l) as f32)
                        .collect::<Vec<_>>()
                })
                .collect();
            DenseMatrix::new(m, c, data).expect("sized above")
        })
        .collect()
}

/// Draw a bundle and its ground truth. Identical specs give bitwise
/// identical output regardless of thread count.
pub fn generate(spec: &SynthSpec) -> Result<(CheckpointBundle<f32>, GroundTruth)> {
    spec.validate()?;
    let scales = channel_scales(spec);
    let domains: Vec<DomainRows> = (0..spec.domains.len())
        .into_par_iter()
        .map(|d| domain_rows(spec, d, &scales))
        .collect();
    let targets: Vec<Vec<DenseMatrix<f32>>> = (0..spec.target_sets)
        .into_par_iter()
        .map(|b| target_rows(spec, b, &scales))
        .collect();

    let n = spec.train_count();
    let c = spec.channel_count;
    let checkpoints = spec
        .learning_rates
        .iter()
        .enumerate()
        .map(|(t, &lr)| {
            let mut data = Vec::with_capacity(n * c);
            for dom in &domains {
                data.extend_from_slice(&dom.checkpoints[t]);
            }
            CheckpointGradients {
                step_id: t as i64,
                learning_rate: lr,
                train: DenseMatrix::new(n, c, data).expect("sized above"),
                targets: targets
                    .iter()
                    .enumerate()
                    .map(|(b, per_t)| (format!("target{b}"), per_t[t].clone()))
                    .collect(),
            }
        })
        .collect();
    let bundle = CheckpointBundle::new(checkpoints)?;

    let mut truth = GroundTruth {
        domain_label: Vec::with_capacity(n),
        is_high_quality: Vec::with_capacity(n),
        true_quality_score: Vec::with_capacity(n),
        is_halo: Vec::with_capacity(n),
        is_duplicate: Vec::with_capacity(n),
        domain_count: spec.domains.len(),
    };
    for (d, dom) in domains.into_iter().enumerate() {
        truth.domain_label.extend(std::iter::repeat_n(d, dom.quality.len()));
        truth.is_high_quality.extend(dom.high_quality);
        truth.true_quality_score.extend(dom.quality);
        truth.is_halo.extend(dom.halo);
        truth.is_duplicate.extend(dom.duplicate);
    }
    Ok((bundle, truth))
}

/// Write the bundle, `ground_truth.json`, and `labels.txt` (one domain id
/// per line) into `dir`. Returns the manifest path.
pub fn write_instance(bundle: &CheckpointBundle<f32>, truth: &GroundTruth, dir: &Path) -> Result<PathBuf> {
    let manifest = write_bundle(bundle, dir)?;
    let path = dir.join("ground_truth.json");
    let json = serde_json::to_vec_pretty(truth).map_err(|e| SeedError::io("encode ground truth", e.into()))?;
    fs::write(&path, json).map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;

    let path = dir.join("labels.txt");
    let mut text = String::with_capacity(truth.len() * 2);
    for l in &truth.domain_label {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// Share of planted high-quality rows that were selected (0 when none
    /// were planted).
    pub quality_recall: f64,
    /// Shannon entropy of the selected domain mix over `ln(domain count)`.
    pub domain_entropy: f64,
    /// Spearman correlation between weights and planted quality.
    pub rank_corr: f64,
    /// Mean pairwise cosine among selected rows; 0 without embeddings or
    /// with fewer than two rows.
    pub redundancy: f64,
}

pub fn eval_selection(
    selected: &[usize],
    truth: &GroundTruth,
    weights: &[f64],
    embeddings: Option<&DenseMatrix<f64>>,
) -> Result<SelectionMetrics> {
    if selected.is_empty() {
        return Err(SeedError::validation("cannot evaluate an empty selection"));
    }
    let n = truth.len();
    if let Some(&bad) = selected.iter().find(|&&i| i >= n) {
        return Err(SeedError::validation(format!("selected id {bad} out of range for {n} rows")));
    }
    if weights.len() != n {
        return Err(SeedError::validation(format!("{} weights for {n} rows", weights.len())));
    }

    let planted = truth.high_quality_count();
    let hits = selected.iter().filter(|&&i| truth.is_high_quality[i]).count();
    let quality_recall = if planted == 0 { 0.0 } else { hits as f64 / planted as f64 };

    let domains = truth.domain_count.max(1);
    let mut counts = vec![0usize; domains];
    for &i in selected {
        counts[truth.domain_label[i]] += 1;
    }
    let total = selected.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    let domain_entropy = if domains > 1 { h / (domains as f64).ln() } else { 0.0 };

    let redundancy = match embeddings {
        Some(e) if selected.len() > 1 => {
            let mut sum = 0.0;
            for (a, &i) in selected.iter().enumerate() {
                for &j in &selected[a + 1..] {
                    sum += dot_widened(e.row(i), e.row(j));
                }
            }
            let pairs = selected.len() * (selected.len() - 1) / 2;
            sum / pairs as f64
        }
        _ => 0.0,
    };
    Ok(SelectionMetrics {
        quality_recall,
        domain_entropy,
        rank_corr: spearman(weights, &truth.true_quality_score),
        redundancy,
    })
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDegree {
    pub domain: usize,
    pub count: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeBalance {
    pub per_domain: Vec<DomainDegree>,
    /// `(max mean + 1) / (min mean + 1)` over domains present; 1 when every
    /// mean is 0.
    pub ratio: f64,
}

pub fn degree_balance(graph: &ConflictGraph, truth: &GroundTruth) -> DegreeBalance {
    degree_balance_by_label(graph, &truth.domain_label)
}

/// Per-domain degree statistics for arbitrary integer labels.
pub fn degree_balance_by_label(graph: &ConflictGraph, labels: &[usize]) -> DegreeBalance {
    let domains = labels.iter().max().map_or(0, |m| m + 1);
    let mut count = vec![0usize; domains];
    let mut sum = vec![0usize; domains];
    let mut max = vec![0usize; domains];
    for (i, &l) in labels.iter().enumerate().take(graph.node_count()) {
        let d = graph.degree(i);
        count[l] += 1;
        sum[l] += d;
        max[l] = max[l].max(d);
    }
    let per_domain: Vec<DomainDegree> = (0..domains)
        .filter(|&d| count[d] > 0)
        .map(|d| DomainDegree {
            domain: d,
            count: count[d],
            mean_degree: sum[d] as f64 / count[d] as f64,
            max_degree: max[d],
        })
        .collect();
    let (lo, hi) = per_domain
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.mean_degree), hi.max(d.mean_degree)));
    let ratio = if per_domain.is_empty() || hi == 0.0 {
        1.0
    } else {
        (hi + 1.0) / (lo + 1.0)
    };
    DegreeBalance { per_domain, ratio }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            domains: vec![DomainSpec::new(40, 50.0, 0.2), DomainSpec::new(30, 2.0, 0.2)],
            channel_count: 64,
            signal_channels: 8,
            noise_channels: 56,
            ..SynthSpec::standard(seed)
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let (a, ta) = generate(&small(3)).unwrap();
        let (b, tb) = generate(&small(3)).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.checkpoints().iter().zip(b.checkpoints()) {
            let bits = |m: &DenseMatrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.train), bits(&y.train));
            assert_eq!(bits(x.target("target0").unwrap()), bits(y.target("target0").unwrap()));
        }
        let (c, _) = generate(&small(4)).unwrap();
        assert_ne!(a.checkpoints()[0].train.as_slice(), c.checkpoints()[0].train.as_slice());
    }

    #[test]
    fn shapes_and_labels_follow_spec() {
        let spec = SynthSpec {
            target_sets: 3,
            ..small(1)
        };
        let (bundle, truth) = generate(&spec).unwrap();
        assert_eq!(bundle.train_count(), 70);
        assert_eq!(bundle.channel_count(), 64);
        assert_eq!(bundle.checkpoints().len(), 2);
        assert_eq!(bundle.target_names(), &["target0", "target1", "target2"]);
        assert_eq!(truth.domain_label.iter().filter(|&&d| d == 0).count(), 40);
        assert_eq!(truth.domain_label.iter().filter(|&&d| d == 1).count(), 30);
        assert!(truth
            .is_high_quality
            .iter()
            .zip(&truth.true_quality_score)
            .all(|(&h, &q)| h == (q > 0.0)));
    }

    #[test]
    fn zero_quality_fraction_plants_nothing() {
        let spec = SynthSpec {
            domains: vec![DomainSpec::new(50, 10.0, 0.0)],
            ..small(2)
        };
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.high_quality_count(), 0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small(0);
        s.channel_count = 63;
        assert!(generate(&s).is_err());
        let mut s = small(0);
        s.domains[0].kappa = 0.0;
        assert!(generate(&s).is_err());
        let mut s = small(0);
        s.learning_rates = vec![];
        assert!(generate(&s).is_err());
    }

    fn truth(labels: Vec<usize>, hq: Vec<bool>) -> GroundTruth {
        let n = labels.len();
        let domain_count = labels.iter().max().map_or(0, |m| m + 1);
        GroundTruth {
            true_quality_score: hq.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
            domain_label: labels,
            is_high_quality: hq,
            is_halo: vec![false; n],
            is_duplicate: vec![false; n],
            domain_count,
        }
    }

    #[test]
    fn metric_examples() {
        let t = truth(vec![0, 0, 1, 1], vec![true, false, true, false]);
        let w = [0.9, 0.1, 0.8, 0.2];
        let m = eval_selection(&[0, 2], &t, &w, None).unwrap();
        assert_eq!(m.quality_recall, 1.0);
        assert!((m.domain_entropy - 1.0).abs() < 1e-12);
        assert!(m.rank_corr > 0.8);

        let m = eval_selection(&[0, 1], &t, &w, None).unwrap();
        assert_eq!(m.domain_entropy, 0.0);
        assert_eq!(m.quality_recall, 0.5);
        assert!(eval_selection(&[], &t, &w, None).is_err());
        assert!(eval_selection(&[9], &t, &w, None).is_err());
    }

    #[test]
    fn redundancy_is_mean_pairwise_cosine() {
        let t = truth(vec![0, 0, 0], vec![false; 3]);
        let e = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = eval_selection(&[0, 1, 2], &t, &[0.0; 3], Some(&e)).unwrap();
        assert!((m.redundancy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn degree_balance_examples() {
        let labels = vec![0, 0, 1, 1];
        let empty = ConflictGraph::from_pairs(4, &[]).unwrap();
        assert_eq!(degree_balance_by_label(&empty, &labels).ratio, 1.0);

        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
        let complete = ConflictGraph::from_pairs(4, &pairs).unwrap();
        assert_eq!(degree_balance_by_label(&complete, &labels).ratio, 1.0);

        let one = ConflictGraph::from_pairs(4, &[(0, 1)]).unwrap();
        let b = degree_balance_by_label(&one, &labels);
        assert_eq!(b.ratio, 2.0);
        assert_eq!(b.per_domain[0].max_degree, 1);
    }
}
