//! Drag-driven moving-part segmentation on feature pyramids.
//!
//! Features of foreground pixels are clustered with k-means; the clusters that
//! contain a drag source form the moving-part mask.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drag::{DragSet, GridSize};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, LabelMap};
use crate::invalid;
use crate::Square;
use crate::rng::{domain, stream};

/// Time steps of the hyperparameter sweep.
pub const SWEEP_TIMESTEPS: [usize; 5] = [0, 200, 500, 800, 999];
/// Cluster counts of the hyperparameter sweep.
pub const SWEEP_CLUSTERS: [usize; 4] = [2, 3, 4, 5];
pub const DEFAULT_TIMESTEP: usize = 200;
pub const DEFAULT_CLUSTERS: usize = 4;

/// One block's activations, `height x width x channels` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Per-pixel concatenation of block features at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub t: usize,
    pub block_channels: Vec<usize>,
}

impl FeaturePyramid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>, t: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::Shape(format!("pyramid {height}x{width}x{channels} with {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("feature pyramid contains non-finite values"));
        }
        Ok(Self { height, width, channels, data, t, block_channels: vec![channels] })
    }

    /// Bilinearly resizes every block to `height x width` and concatenates channels.
    pub fn from_blocks(blocks: &[FeatureMap], height: usize, width: usize, t: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid!("feature pyramid needs at least one block"));
        }
        let channels: usize = blocks.iter().map(|b| b.channels).sum();
        let resized: Vec<Vec<f32>> = blocks.iter().map(|b| resize_bilinear(b, height, width)).collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(height * width * channels);
        for p in 0..height * width {
            for (b, r) in blocks.iter().zip(&resized) {
                data.extend_from_slice(&r[p * b.channels..(p + 1) * b.channels]);
            }
        }
        let mut pyr = Self::new(height, width, channels, data, t)?;
        pyr.block_channels = blocks.iter().map(|b| b.channels).collect();
        Ok(pyr)
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Half-pixel-centred bilinear resize with edge clamping.
pub fn resize_bilinear(map: &FeatureMap, height: usize, width: usize) -> Result<Vec<f32>> {
    if map.data.len() != map.height * map.width * map.channels || map.height == 0 || map.width == 0 {
        return Err(Error::Shape("feature map size mismatch".into()));
    }
    let coord = |dst: usize, src_len: usize, dst_len: usize| {
        let x = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = libm::floor(x) as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, x - lo as f64)
    };
    let c = map.channels;
    let mut out = vec![0.0f32; height * width * c];
    for r in 0..height {
        let (r0, r1, fr) = coord(r, map.height, height);
        for col in 0..width {
            let (c0, c1, fc) = coord(col, map.width, width);
            let at = |rr: usize, cc: usize, k: usize| f64::from(map.data[(rr * map.width + cc) * c + k]);
            for k in 0..c {
                let top = at(r0, c0, k) * (1.0 - fc) + at(r0, c1, k) * fc;
                let bottom = at(r1, c0, k) * (1.0 - fc) + at(r1, c1, k) * fc;
                out[(r * width + col) * c + k] = (top * (1.0 - fr) + bottom * fr) as f32;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iterations: 50, restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<f64>,
    pub inertia: f64,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - y).sq()).sum()
}

fn nearest(p: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Seeded k-means++ with Lloyd iterations; the restart with the lowest
/// inertia wins and distance ties go to the lowest cluster index.
pub fn kmeans(points: &[f32], dim: usize, k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Shape("points are not a whole number of vectors".into()));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(invalid!("cluster count {k} must lie in 1..={n}"));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut best: Option<KMeansResult> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = stream(seed, domain::KMEANS, restart as u64);
        let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
        let first = rng.random_range(0..n);
        centroids.extend(pt(first).iter().map(|&v| f64::from(v)));
        let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), &centroids[..dim])).collect();
        for _ in 1..k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    acc += d;
                    if d > 0.0 && u < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let start = centroids.len();
            centroids.extend(pt(pick).iter().map(|&v| f64::from(v)));
            for (i, d) in d2.iter_mut().enumerate() {
                *d = d.min(sq_dist(pt(i), &centroids[start..]));
            }
        }
        let mut assignments = vec![usize::MAX; n];
        for _ in 0..opts.max_iterations.max(1) {
            let mut changed = false;
            for (i, a) in assignments.iter_mut().enumerate() {
                let (j, _) = nearest(pt(i), &centroids, dim);
                if *a != j {
                    *a = j;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &a) in assignments.iter().enumerate() {
                counts[a] += 1;
                for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(pt(i)) {
                    *s += f64::from(v);
                }
            }
            for j in 0..k {
                if counts[j] > 0 {
                    for d in 0..dim {
                        centroids[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                    }
                }
            }
        }
        let inertia = (0..n).map(|i| sq_dist(pt(i), &centroids[assignments[i] * dim..(assignments[i] + 1) * dim])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult { assignments, centroids, inertia });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    /// Cluster per pixel, `-1` outside the foreground.
    pub clusters: Vec<i32>,
    pub n_clusters: usize,
    pub t: usize,
    pub selected: Vec<usize>,
}

/// Clusters foreground pixels and keeps the clusters containing drag sources.
///
/// Drags whose source pixel is background select nothing.
pub fn segment(
    pyramid: &FeaturePyramid,
    drags: &DragSet,
    foreground: &BinaryMask,
    n_clusters: usize,
    seed: u64,
    opts: KMeansOptions,
) -> Result<SegmentationResult> {
    let (h, w) = (pyramid.height, pyramid.width);
    if foreground.height != h || foreground.width != w {
        return Err(Error::Shape("foreground mask and pyramid differ in size".into()));
    }
    let fg: Vec<usize> = (0..h * w).filter(|&i| foreground.data[i]).collect();
    if fg.is_empty() {
        return Err(invalid!("foreground mask is empty"));
    }
    if drags.is_empty() {
        return Err(invalid!("segmentation needs at least one drag"));
    }
    if n_clusters < 2 || n_clusters > fg.len() {
        return Err(invalid!("cluster count {n_clusters} must lie in 2..={}", fg.len()));
    }
    let dim = pyramid.channels;
    let mut points = Vec::with_capacity(fg.len() * dim);
    for &i in &fg {
        points.extend_from_slice(&pyramid.data[i * dim..(i + 1) * dim]);
    }
    if points.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateFeatures("all foreground features are zero; the drag pathway is untrained".into()));
    }
    let km = kmeans(&points, dim, n_clusters, seed, opts)?;
    let mut clusters = vec![-1i32; h * w];
    for (&i, &a) in fg.iter().zip(&km.assignments) {
        clusters[i] = a as i32;
    }
    let size = GridSize::new(h, w);
    let mut selected: Vec<usize> = drags
        .drags()
        .iter()
        .filter_map(|d| d.source.pixel(size))
        .filter_map(|(r, c)| usize::try_from(clusters[r * w + c]).ok())
        .collect();
    selected.sort_unstable();
    selected.dedup();
    let data = clusters.iter().map(|&c| c >= 0 && selected.contains(&(c as usize))).collect();
    Ok(SegmentationResult { mask: BinaryMask::new(h, w, data)?, clusters, n_clusters, t: pyramid.t, selected })
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(invalid!("mask shapes differ"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn miou(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(invalid!("need matching non-empty mask lists, got {} and {}", preds.len(), gts.len()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += iou(p, g)?;
    }
    Ok(total / preds.len() as f64)
}

/// One-hot pyramid over motion groups: channel `group[part]` is 1 on the
/// visible pixels of `part`, background is all zero.
pub fn oracle_pyramid(labels: &LabelMap, group: &[usize], t: usize) -> Result<FeaturePyramid> {
    let groups = group.iter().copied().max().map_or(0, |m| m + 1);
    if groups == 0 {
        return Err(invalid!("oracle needs at least one part"));
    }
    let mut data = vec![0.0f32; labels.height * labels.width * groups];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l > 0 {
            let g = *group.get(usize::from(l) - 1).ok_or_else(|| invalid!("label {l} has no group"))?;
            data[i * groups + g] = 1.0;
        }
    }
    FeaturePyramid::new(labels.height, labels.width, groups, data, t)
}

/// Randomly permutes feature vectors among foreground pixels.
pub fn shuffle_foreground(pyramid: &FeaturePyramid, foreground: &BinaryMask, seed: u64) -> FeaturePyramid {
    let c = pyramid.channels;
    let fg: Vec<usize> = (0..pyramid.height * pyramid.width).filter(|&i| foreground.data[i]).collect();
    let mut perm = fg.clone();
    perm.shuffle(&mut stream(seed, domain::SHUFFLE, 0));
    let mut out = pyramid.clone();
    for (&dst, &src) in fg.iter().zip(&perm) {
        out.data[dst * c..(dst + 1) * c].copy_from_slice(&pyramid.data[src * c..(src + 1) * c]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub t: usize,
    pub n_clusters: usize,
    pub miou: f64,
    /// Same clustering on foreground-shuffled features.
    pub baseline_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub timesteps: Vec<usize>,
    pub clusters: Vec<usize>,
    pub examples: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Checks that `cells` covers the `timesteps x clusters` grid exactly once.
    pub fn new(timesteps: Vec<usize>, clusters: Vec<usize>, examples: usize, cells: Vec<SweepCell>) -> Result<Self> {
        if cells.len() != timesteps.len() * clusters.len() {
            return Err(invalid!("sweep has {} cells for a {}x{} grid", cells.len(), timesteps.len(), clusters.len()));
        }
        for &t in &timesteps {
            for &k in &clusters {
                if cells.iter().filter(|c| c.t == t && c.n_clusters == k).count() != 1 {
                    return Err(invalid!("sweep cell t={t}, N_c={k} missing or repeated"));
                }
            }
        }
        Ok(Self { timesteps, clusters, examples, cells })
    }

    pub fn cell(&self, t: usize, n_clusters: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.t == t && c.n_clusters == n_clusters)
    }

    /// Markdown table with rows `N_c` and columns `t`, mIoU in percent,
    /// followed by the shuffled-feature baseline in the same layout.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (title, pick) in [("Drag features", false), ("Shuffled features", true)] {
            let _ = writeln!(s, "{title}");
            let _ = write!(s, "| N_c |");
            for t in &self.timesteps {
                let _ = write!(s, " t={t} |");
            }
            let _ = write!(s, "\n|---|");
            for _ in &self.timesteps {
                let _ = write!(s, "---|");
            }
            s.push('\n');
            for &k in &self.clusters {
                let _ = write!(s, "| {k} |");
                for &t in &self.timesteps {
                    let c = self.cell(t, k).expect("validated grid");
                    let _ = write!(s, " {:.2} |", 100.0 * if pick { c.baseline_miou } else { c.miou });
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}
