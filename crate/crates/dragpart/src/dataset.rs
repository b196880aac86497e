//! On-disk datasets of articulated-object animations.
//!
//! ```text
//! root/manifest.json
//! root/anim_0000/metadata.json     record, start-to-end drags
//! root/anim_0000/frame_00.png      canonical palette
//! root/anim_0000/random_00.png     per-animation random palette
//! root/anim_0000/mask_00.png       indexed part-label map
//! ```
//!
//! [`validate`] re-runs the consistency oracles over an export.

use std::fs;
use std::path::{Path, PathBuf};

use dragpart_core::world::{generate_animation, AnimationKind, AnimationRecord, AnimationSpec, Archetype, Palette, WorldConfig};
use dragpart_core::{DragSet, GridSize, ImageGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::json_hash;
use crate::imageio;

pub const MANIFEST: &str = "manifest.json";
pub const METADATA: &str = "metadata.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub asset: usize,
    pub archetype: Archetype,
    pub dir: String,
    pub frames: usize,
    pub drags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub config_hash: String,
    pub animations: Vec<ManifestEntry>,
}

/// Per-animation metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(flatten)]
    pub record: AnimationRecord,
    /// Drags from the first to the last frame.
    pub drags: DragSet,
}

pub fn animation_dir(index: usize) -> String {
    format!("anim_{index:04}")
}

pub fn frame_file(prefix: &str, n: usize) -> String {
    format!("{prefix}_{n:02}.png")
}

/// Generates all animations of `config` in memory.
pub fn generate_records(config: &WorldConfig, seed: u64) -> Result<Vec<AnimationRecord>> {
    config.validate()?;
    (0..config.animations())
        .into_par_iter()
        .map(|i| Ok(generate_animation(config, seed, i)?))
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn write_animation(root: &Path, rec: &AnimationRecord, capacity: usize) -> Result<ManifestEntry> {
    let dir = root.join(animation_dir(rec.index));
    fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
    let last = rec.frames() - 1;
    let meta = Metadata { record: rec.clone(), drags: rec.drags(0, last, capacity)? };
    write(&dir.join(METADATA), &serde_json::to_vec_pretty(&meta)?)?;
    for n in 0..rec.frames() {
        let regular = rec.render(n, Palette::Regular)?;
        write(&dir.join(frame_file("frame", n)), &imageio::encode_image(&regular.image)?)?;
        write(&dir.join(frame_file("mask", n)), &imageio::encode_labels(&regular.labels)?)?;
        let random = rec.render(n, Palette::Random)?;
        write(&dir.join(frame_file("random", n)), &imageio::encode_image(&random.image)?)?;
    }
    Ok(ManifestEntry {
        index: rec.index,
        asset: rec.asset,
        archetype: rec.archetype,
        dir: animation_dir(rec.index),
        frames: rec.frames(),
        drags: meta.drags.len(),
    })
}

/// Writes a dataset; the manifest is written last, once every animation is on disk.
pub fn generate(config: &WorldConfig, seed: u64, root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::file(root, e))?;
    let records = generate_records(config, seed)?;
    let animations = records
        .par_iter()
        .map(|rec| write_animation(root, rec, config.drag_capacity))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { format: FORMAT_VERSION, seed, config: config.clone(), config_hash: json_hash(config)?, animations };
    write(&root.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    tracing::info!(animations = manifest.animations.len(), root = %root.display(), "dataset written");
    Ok(manifest)
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let path = root.as_ref().join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::file(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_metadata(root: impl AsRef<Path>, entry: &ManifestEntry) -> Result<Metadata> {
    let path = root.as_ref().join(&entry.dir).join(METADATA);
    let bytes = fs::read(&path).map_err(|e| Error::file(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Manifest and records of a dataset directory.
pub fn load(root: impl AsRef<Path>) -> Result<(Manifest, Vec<AnimationRecord>)> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let records = manifest.animations.iter().map(|e| Ok(read_metadata(root, e)?.record)).collect::<Result<_>>()?;
    Ok((manifest, records))
}

pub fn frame_path(root: impl AsRef<Path>, index: usize, prefix: &str, n: usize) -> PathBuf {
    root.as_ref().join(animation_dir(index)).join(frame_file(prefix, n))
}

/// Outcome of one consistency oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub oracle: String,
    pub passed: bool,
    /// Number of individual assertions evaluated.
    pub evaluated: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub root: String,
    pub checks: Vec<Check>,
    /// Largest drag reprojection error in pixels.
    pub max_reprojection_px: f64,
    /// Largest deviation of a stored articulation from the closed form.
    pub max_schedule_error: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    /// Converts the first failure into an error naming its oracle.
    pub fn into_result(self) -> Result<Self> {
        match self.first_failure() {
            Some(c) => Err(Error::Validation { oracle: c.oracle.clone(), detail: c.detail.clone() }),
            None => Ok(self),
        }
    }
}

#[derive(Default)]
struct Tally {
    evaluated: usize,
    failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.evaluated += 1;
        if !ok && self.failures.len() < 5 {
            self.failures.push(what());
        }
    }

    fn finish(self, oracle: &str) -> Check {
        let passed = self.failures.is_empty();
        let detail = if passed { String::new() } else { self.failures.join("; ") };
        Check { oracle: oracle.into(), passed, evaluated: self.evaluated, detail }
    }
}

/// `A_i(n)` written as `a + (b - a) n / N` for type 2 and `n / N` for type 1.
pub fn closed_form_openness(spec: &AnimationSpec, part: usize, n: usize) -> f64 {
    let t = n as f64 / spec.last_frame as f64;
    match (spec.kind, spec.is_moving(part)) {
        (AnimationKind::Type1, true) => t,
        (AnimationKind::Type1, false) => 0.0,
        (AnimationKind::Type2, true) => spec.a[part] + (spec.b[part] - spec.a[part]) * t,
        (AnimationKind::Type2, false) => spec.c[part],
    }
}

/// Reprojection error of each drag: unproject the source, move it with the
/// forward-kinematics motion of its subpart, project and compare with the
/// termination.
pub fn reprojection_errors(rec: &AnimationRecord, drags: &DragSet) -> Result<Vec<f64>> {
    let last = rec.frames() - 1;
    let (p0, pn) = (rec.poses(0)?, rec.poses(last)?);
    let size = GridSize::square(rec.resolution);
    let visible: Vec<_> = rec.tracks.iter().filter(|t| t.points[0].inside(size)).collect();
    if visible.len() != drags.len() {
        return Err(Error::Validation {
            oracle: "drag_reprojection".into(),
            detail: format!("animation {} stores {} drags for {} visible tracks", rec.index, drags.len(), visible.len()),
        });
    }
    Ok(visible
        .iter()
        .zip(drags.drags())
        .map(|(track, d)| {
            let motion = pn[track.subpart].compose(&p0[track.subpart].inverse());
            let (r, c) = rec.camera.transfer(&motion, d.source.h, d.source.w);
            ((r - d.termination.h).powi(2) + (c - d.termination.w).powi(2)).sqrt()
        })
        .collect())
}

fn read_png(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

struct AnimationChecks {
    regenerated: Tally,
    schedule: Tally,
    endpoints: Tally,
    stationary: Tally,
    reprojection: Tally,
    images: Tally,
    palette: Tally,
    max_reprojection: f64,
    max_schedule: f64,
    random_colors: Vec<Option<[f32; 3]>>,
}

fn check_animation(root: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<AnimationChecks> {
    let meta = read_metadata(root, entry)?;
    let rec = &meta.record;
    let mut out = AnimationChecks {
        regenerated: Tally::default(),
        schedule: Tally::default(),
        endpoints: Tally::default(),
        stationary: Tally::default(),
        reprojection: Tally::default(),
        images: Tally::default(),
        palette: Tally::default(),
        max_reprojection: 0.0,
        max_schedule: 0.0,
        random_colors: vec![None; meta.record.tree.len()],
    };
    let fresh = generate_animation(&manifest.config, manifest.seed, entry.index)?;
    out.regenerated.check(&fresh == rec, || format!("animation {} differs from its regeneration", entry.index));

    let last = rec.frames() - 1;
    let parts = rec.tree.len();
    for n in 0..rec.frames() {
        let state = rec.state(n)?;
        for i in 0..parts {
            let err = (state.values()[i] - closed_form_openness(&rec.spec, i, n)).abs();
            out.max_schedule = out.max_schedule.max(err);
            out.schedule.check(err <= 1e-12, || format!("animation {} part {i} frame {n}: error {err:e}", entry.index));
        }
    }
    if rec.spec.kind == AnimationKind::Type1 {
        let (s0, sn) = (rec.state(0)?, rec.state(last)?);
        for &i in &rec.spec.moving {
            out.endpoints.check(s0.values()[i] == 0.0 && sn.values()[i] == 1.0, || {
                format!("animation {} part {i}: endpoints {} and {}", entry.index, s0.values()[i], sn.values()[i])
            });
        }
    }

    let still: Vec<usize> = (0..parts)
        .filter(|&p| !rec.spec.is_moving(p) && rec.tree.ancestors(p).iter().all(|&q| !rec.spec.is_moving(q)))
        .collect();
    let first = rec.render(0, Palette::Regular)?;
    for n in 0..rec.frames() {
        let regular = rec.render(n, Palette::Regular)?;
        for &p in &still {
            out.stationary.check(regular.masks[p] == first.masks[p], || format!("animation {} part {p} moves at frame {n}", entry.index));
        }
        let stored = imageio::decode_image(&read_png(&frame_path(root, entry.index, "frame", n))?)?;
        out.images.check(stored == imageio::quantized(&regular.image)?, || format!("animation {} frame {n} differs from its render", entry.index));
        let labels = imageio::decode_labels(&read_png(&frame_path(root, entry.index, "mask", n))?)?;
        out.images.check(labels == regular.labels, || format!("animation {} mask {n} differs from its render", entry.index));
        let random = imageio::decode_image(&read_png(&frame_path(root, entry.index, "random", n))?)?;
        out.images.check(random.same_shape(&regular.image), || format!("animation {} random {n} has the wrong size", entry.index));
        // Every part shows one colour across all frames of the random split.
        for p in 0..parts {
            let mut colour: Option<[f32; 3]> = None;
            for (k, &l) in regular.labels.labels.iter().enumerate() {
                if usize::from(l) != p + 1 {
                    continue;
                }
                let (r, c) = (k / random.width(), k % random.width());
                let px = random.pixel(r, c);
                let px = [px[0], px[1], px[2]];
                match colour {
                    None => colour = Some(px),
                    Some(c0) => out.palette.check(c0 == px, || format!("animation {} part {p} has two colours", entry.index)),
                }
            }
            if let Some(c) = colour {
                match out.random_colors[p] {
                    None => out.random_colors[p] = Some(c),
                    Some(seen) => out.palette.check(seen == c, || format!("animation {} part {p} changes colour at frame {n}", entry.index)),
                }
            }
        }
    }

    let size = GridSize::square(rec.resolution);
    for d in meta.drags.drags() {
        out.reprojection.check(d.source.inside(size), || format!("animation {}: drag source outside the image", entry.index));
    }
    for (k, e) in reprojection_errors(rec, &meta.drags)?.into_iter().enumerate() {
        out.max_reprojection = out.max_reprojection.max(e);
        out.reprojection.check(e <= 0.5, || format!("animation {} drag {k}: {e:.3} px", entry.index));
    }
    Ok(out)
}

/// Runs every consistency oracle over a dataset directory. A manifest that
/// cannot be read or does not match its config fails the `manifest` oracle
/// and stops validation.
pub fn validate(root: impl AsRef<Path>) -> Result<ValidationReport> {
    let root = root.as_ref();
    let mut report =
        ValidationReport { root: root.display().to_string(), checks: Vec::new(), max_reprojection_px: 0.0, max_schedule_error: 0.0 };
    let mut tally = Tally::default();
    let manifest = match read_manifest(root) {
        Ok(m) => m,
        Err(e) => {
            tally.check(false, || format!("unreadable manifest: {e}"));
            report.checks.push(tally.finish("manifest"));
            return Ok(report);
        }
    };
    tally.check(manifest.format == FORMAT_VERSION, || format!("format {} is not {FORMAT_VERSION}", manifest.format));
    tally.check(manifest.config.validate().is_ok(), || "invalid world config".into());
    tally.check(json_hash(&manifest.config)? == manifest.config_hash, || "config hash mismatch".into());
    tally.check(manifest.animations.len() == manifest.config.animations(), || {
        format!("{} animations listed, config defines {}", manifest.animations.len(), manifest.config.animations())
    });
    for (i, e) in manifest.animations.iter().enumerate() {
        tally.check(e.index == i && e.dir == animation_dir(i), || format!("entry {i} is out of order"));
        tally.check(e.frames == manifest.config.frames, || format!("entry {i} lists {} frames", e.frames));
        tally.check(root.join(&e.dir).join(METADATA).is_file(), || format!("entry {i} has no metadata"));
    }
    let manifest_check = tally.finish("manifest");
    let ok = manifest_check.passed;
    report.checks.push(manifest_check);
    if !ok {
        return Ok(report);
    }

    let per: Vec<AnimationChecks> =
        manifest.animations.par_iter().map(|e| check_animation(root, &manifest, e)).collect::<Result<_>>()?;
    let names = ["regeneration", "schedule_law", "type1_endpoints", "stationary_parts", "drag_reprojection", "stored_images", "random_palette"];
    let mut merged: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();
    for a in &per {
        report.max_reprojection_px = report.max_reprojection_px.max(a.max_reprojection);
        report.max_schedule_error = report.max_schedule_error.max(a.max_schedule);
        for (m, t) in merged.iter_mut().zip([&a.regenerated, &a.schedule, &a.endpoints, &a.stationary, &a.reprojection, &a.images, &a.palette]) {
            m.evaluated += t.evaluated;
            m.failures.extend(t.failures.iter().take(5usize.saturating_sub(m.failures.len())).cloned());
        }
    }
    // Random palettes are drawn per animation: two animations of one asset must differ.
    let palette = merged.last_mut().expect("seven oracles");
    for w in per.windows(2) {
        if w[0].random_colors.len() == w[1].random_colors.len() && w[0].random_colors.iter().all(Option::is_some) {
            palette.check(w[0].random_colors != w[1].random_colors, || "consecutive animations share a random palette".into());
        }
    }
    report.checks.extend(names.iter().zip(merged).map(|(n, t)| t.finish(n)));
    Ok(report)
}

/// Reads one stored example image.
pub fn read_frame(root: impl AsRef<Path>, index: usize, n: usize, palette: Palette) -> Result<ImageGrid> {
    let prefix = match palette {
        Palette::Regular => "frame",
        Palette::Random => "random",
    };
    imageio::read_image(frame_path(root, index, prefix, n))
}
