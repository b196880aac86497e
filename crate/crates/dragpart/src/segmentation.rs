//! Moving-part segmentation on generated animations: ground truth, oracle
//! features and the `(t, N_c)` sweep against a shuffled-feature baseline.

use dragpart_core::segment::{miou, oracle_pyramid, segment, shuffle_foreground, FeaturePyramid, SegmentationResult, SweepCell, SweepReport};
use dragpart_core::world::{AnimationRecord, KinematicTree, Palette};
use dragpart_core::{BinaryMask, DragSet, ImageGrid, LabelMap};
use dragpart_diffusion::features::extract_features;
use dragpart_diffusion::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SegmentConfig};
use crate::error::Result;

/// Part-to-group map of an animation: group 0 holds everything that stays
/// still; each outermost moving part opens a new group shared by its subtree.
pub fn motion_groups(tree: &KinematicTree, moving: &[usize]) -> Vec<usize> {
    let mut group = vec![0; tree.len()];
    let mut next = 1;
    for &m in moving {
        if tree.ancestors(m).iter().any(|a| moving.contains(a)) {
            continue;
        }
        for p in tree.subtree(m) {
            group[p] = next;
        }
        next += 1;
    }
    group
}

/// Input, drags and ground truth of one segmentation example.
#[derive(Debug, Clone)]
pub struct SegmentationExample {
    pub id: String,
    pub image: ImageGrid,
    pub labels: LabelMap,
    pub drags: DragSet,
    pub foreground: BinaryMask,
    /// Visible pixels of every motion group that carries a drag.
    pub truth: BinaryMask,
    pub groups: Vec<usize>,
}

impl SegmentationExample {
    /// First frame of `rec` with its drags to the last frame.
    pub fn from_record(rec: &AnimationRecord, capacity: usize) -> Result<Self> {
        let frame = rec.render(0, Palette::Regular)?;
        let last = rec.frames() - 1;
        let drags = rec.drags(0, last, capacity)?;
        let groups = motion_groups(&rec.tree, &rec.spec.moving);
        let size = dragpart_core::GridSize::square(rec.resolution);
        let dragged: Vec<usize> = rec
            .tracks
            .iter()
            .filter(|t| t.points[0].inside(size))
            .map(|t| groups[t.part])
            .collect();
        let parts: Vec<usize> = (0..rec.tree.len()).filter(|&p| groups[p] > 0 && dragged.contains(&groups[p])).collect();
        Ok(Self {
            id: format!("anim_{:04}", rec.index),
            truth: frame.labels.mask_of_any(&parts),
            foreground: frame.labels.foreground(),
            image: frame.image,
            labels: frame.labels,
            drags,
            groups,
        })
    }

    pub fn oracle_pyramid(&self, t: usize) -> Result<FeaturePyramid> {
        Ok(oracle_pyramid(&self.labels, &self.groups, t)?)
    }

    /// Number of motion groups visible in the foreground.
    pub fn visible_groups(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.labels.iter().filter(|&&l| l > 0).map(|&l| self.groups[usize::from(l) - 1]).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Examples from `records` that have at least one drag.
pub fn examples(records: &[AnimationRecord], capacity: usize, limit: usize) -> Result<Vec<SegmentationExample>> {
    let mut out = Vec::new();
    for rec in records {
        if out.len() == limit {
            break;
        }
        let ex = SegmentationExample::from_record(rec, capacity)?;
        if !ex.drags.is_empty() {
            out.push(ex);
        }
    }
    Ok(out)
}

pub fn segment_with(pyramid: &FeaturePyramid, ex: &SegmentationExample, k: usize, seed: u64, cfg: &SegmentConfig) -> Result<SegmentationResult> {
    Ok(segment(pyramid, &ex.drags, &ex.foreground, k, seed, cfg.kmeans)?)
}

/// Segments an arbitrary image with a trained checkpoint.
pub fn segment_image(
    ckpt: &Checkpoint,
    image: &ImageGrid,
    drags: &DragSet,
    foreground: &BinaryMask,
    t: usize,
    clusters: usize,
    seed: u64,
    cfg: &SegmentConfig,
) -> Result<SegmentationResult> {
    let pyramid = extract_features(ckpt, image, drags, t, seed)?;
    Ok(segment(&pyramid, drags, foreground, clusters, seed, cfg.kmeans)?)
}

/// Source of per-example feature pyramids for a sweep.
pub enum Features<'a> {
    /// One-hot motion-group indicators.
    Oracle,
    Trained(&'a Checkpoint),
}

/// Fills every `(t, N_c)` cell with the mIoU of the given features and of the
/// same features shuffled among foreground pixels.
pub fn sweep(features: Features<'_>, examples: &[SegmentationExample], cfg: &SegmentConfig, seed: u64) -> Result<SweepReport> {
    let mut cells = Vec::with_capacity(cfg.timesteps.len() * cfg.cluster_counts.len());
    for &t in &cfg.timesteps {
        let pyramids: Vec<FeaturePyramid> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| match features {
                Features::Oracle => ex.oracle_pyramid(t),
                Features::Trained(ckpt) => Ok(extract_features(ckpt, &ex.image, &ex.drags, t, seed.wrapping_add(i as u64))?),
            })
            .collect::<Result<_>>()?;
        let shuffled: Vec<FeaturePyramid> = pyramids
            .iter()
            .zip(examples)
            .enumerate()
            .map(|(i, (p, ex))| shuffle_foreground(p, &ex.foreground, seed.wrapping_add(i as u64)))
            .collect();
        for &k in &cfg.cluster_counts {
            let (mut preds, mut base, mut truths) = (Vec::new(), Vec::new(), Vec::new());
            for (i, ex) in examples.iter().enumerate() {
                let s = seed.wrapping_add(i as u64);
                preds.push(segment_with(&pyramids[i], ex, k, s, cfg)?.mask);
                base.push(segment_with(&shuffled[i], ex, k, s, cfg)?.mask);
                truths.push(ex.truth.clone());
            }
            cells.push(SweepCell { t, n_clusters: k, miou: miou(&preds, &truths)?, baseline_miou: miou(&base, &truths)? });
            tracing::debug!(t, k, "sweep cell done");
        }
    }
    Ok(SweepReport::new(cfg.timesteps.clone(), cfg.cluster_counts.clone(), examples.len(), cells)?)
}

/// Sweep report plus provenance, as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
    pub mode: String,
    pub report: SweepReport,
    pub table: String,
}

pub fn sweep_examples(cfg: &ExperimentConfig, records: &[AnimationRecord]) -> Result<Vec<SegmentationExample>> {
    examples(records, cfg.dataset.drag_capacity, cfg.segment.examples)
}
