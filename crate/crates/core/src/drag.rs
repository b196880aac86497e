//! Drags and the multi-resolution drag encoding.
//!
//! A drag moves a physical point from a `source` pixel (always inside the
//! image) to a `termination` pixel (anywhere). Every drag slot of a
//! [`DragSet`] owns four channels of the encoding: two for the source cell
//! and two for the termination cell. Each pair is `-1` everywhere except at
//! the latent cell holding the point, where it stores the sub-cell offset.
//! Unused slots are all zero, so an empty slot never looks like a drag that
//! sits exactly on a cell corner.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invalid;

/// Continuous `(row, col)` pixel coordinate, serialized as `[h, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelPoint {
    pub h: f64,
    pub w: f64,
}

impl PixelPoint {
    pub const fn new(h: f64, w: f64) -> Self {
        Self { h, w }
    }

    pub fn is_finite(self) -> bool {
        self.h.is_finite() && self.w.is_finite()
    }

    pub fn inside(self, size: GridSize) -> bool {
        self.h >= 0.0 && self.w >= 0.0 && self.h < size.h as f64 && self.w < size.w as f64
    }

    /// Integer pixel containing the point, if inside `size`.
    pub fn pixel(self, size: GridSize) -> Option<(usize, usize)> {
        self.inside(size).then(|| (libm::floor(self.h) as usize, libm::floor(self.w) as usize))
    }
}

impl From<[f64; 2]> for PixelPoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<PixelPoint> for [f64; 2] {
    fn from(p: PixelPoint) -> Self {
        [p.h, p.w]
    }
}

/// `(rows, cols)` of an image or latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSize {
    pub h: usize,
    pub w: usize,
}

impl GridSize {
    pub const fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub const fn square(n: usize) -> Self {
        Self { h: n, w: n }
    }

    pub const fn cells(self) -> usize {
        self.h * self.w
    }

    fn check(self, what: &str) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(invalid!("{what} size must be at least 1x1, got {}x{}", self.h, self.w));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drag {
    pub source: PixelPoint,
    pub termination: PixelPoint,
}

impl Drag {
    pub const fn new(source: PixelPoint, termination: PixelPoint) -> Self {
        Self { source, termination }
    }

    /// Checks the source-inside-image invariant and finiteness.
    pub fn validate(&self, image: GridSize) -> Result<()> {
        if !self.source.is_finite() || !self.termination.is_finite() {
            return Err(invalid!("drag coordinates must be finite"));
        }
        if !self.source.inside(image) {
            return Err(invalid!(
                "drag source ({}, {}) lies outside the {}x{} image",
                self.source.h,
                self.source.w,
                image.h,
                image.w
            ));
        }
        Ok(())
    }

    pub fn reversed(&self) -> Drag {
        Drag::new(self.termination, self.source)
    }
}

/// Ordered drags with a fixed slot capacity `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDragSet")]
pub struct DragSet {
    capacity: usize,
    drags: Vec<Drag>,
}

#[derive(Deserialize)]
struct RawDragSet {
    capacity: usize,
    drags: Vec<Drag>,
}

impl TryFrom<RawDragSet> for DragSet {
    type Error = Error;
    fn try_from(raw: RawDragSet) -> Result<Self> {
        DragSet::new(raw.capacity, raw.drags)
    }
}

impl DragSet {
    pub fn new(capacity: usize, drags: Vec<Drag>) -> Result<Self> {
        if drags.len() > capacity {
            return Err(Error::Capacity { len: drags.len(), capacity });
        }
        Ok(Self { capacity, drags })
    }

    pub fn empty(capacity: usize) -> Self {
        Self { capacity, drags: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn drags(&self) -> &[Drag] {
        &self.drags
    }

    pub fn len(&self) -> usize {
        self.drags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drags.is_empty()
    }

    pub fn push(&mut self, drag: Drag) -> Result<()> {
        if self.drags.len() == self.capacity {
            return Err(Error::Capacity { len: self.drags.len() + 1, capacity: self.capacity });
        }
        self.drags.push(drag);
        Ok(())
    }

    /// Same drags under a different slot capacity.
    pub fn with_capacity(&self, capacity: usize) -> Result<DragSet> {
        DragSet::new(capacity, self.drags.clone())
    }

    pub fn validate(&self, image: GridSize) -> Result<()> {
        self.drags.iter().try_for_each(|d| d.validate(image))
    }
}

/// Latent cell and sub-cell offset of one encoded point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCode {
    pub cell: (usize, usize),
    pub offset: (f64, f64),
}

/// Locates `p` on a `latent` grid covering an `image`-sized pixel plane.
///
/// The continuous latent coordinate is `p * latent / image`; the cell is its
/// floor clamped per axis into the grid and the offset is measured from that
/// (possibly clamped) cell, so it leaves `[0, 1)` for points off the grid.
pub fn locate_point(p: PixelPoint, image: GridSize, latent: GridSize) -> Result<PointCode> {
    image.check("image")?;
    latent.check("latent")?;
    if !p.is_finite() {
        return Err(invalid!("point ({}, {}) is not finite", p.h, p.w));
    }
    let ch = p.h * latent.h as f64 / image.h as f64;
    let cw = p.w * latent.w as f64 / image.w as f64;
    let cell_h = clamp_cell(ch, latent.h);
    let cell_w = clamp_cell(cw, latent.w);
    Ok(PointCode { cell: (cell_h, cell_w), offset: (ch - cell_h as f64, cw - cell_w as f64) })
}

fn clamp_cell(continuous: f64, cells: usize) -> usize {
    let f = libm::floor(continuous);
    if f <= 0.0 {
        0
    } else if f >= (cells - 1) as f64 {
        cells - 1
    } else {
        f as usize
    }
}

/// Two-channel `2 x h x w` encoding of a single point.
pub fn encode_point(p: PixelPoint, image: GridSize, latent: GridSize) -> Result<Vec<f64>> {
    let code = locate_point(p, image, latent)?;
    let mut grid = vec![-1.0; 2 * latent.cells()];
    write_code(&mut grid, latent, code);
    Ok(grid)
}

fn write_code(pair: &mut [f64], latent: GridSize, code: PointCode) {
    let idx = code.cell.0 * latent.w + code.cell.1;
    pair[idx] = code.offset.0;
    pair[latent.cells() + idx] = code.offset.1;
}

/// `4N x h x w` drag conditioning tensor at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DragEncoding {
    capacity: usize,
    size: GridSize,
    data: Vec<f64>,
}

impl DragEncoding {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn channels(&self) -> usize {
        4 * self.capacity
    }

    pub fn size(&self) -> GridSize {
        self.size
    }

    /// Channel-major values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.size.h + row) * self.size.w + col]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.size.cells();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Encodes every drag of `drags` into its own four channels; unused slots are zero.
pub fn encode_drags(drags: &DragSet, latent: GridSize, image: GridSize) -> Result<DragEncoding> {
    image.check("image")?;
    latent.check("latent")?;
    let n = drags.capacity();
    if drags.len() > n {
        return Err(Error::Capacity { len: drags.len(), capacity: n });
    }
    let plane = latent.cells();
    let mut data = vec![0.0; 4 * n * plane];
    for (slot, drag) in drags.drags().iter().enumerate() {
        let block = &mut data[4 * slot * plane..4 * (slot + 1) * plane];
        block.fill(-1.0);
        let (src, dst) = block.split_at_mut(2 * plane);
        write_code(src, latent, locate_point(drag.source, image, latent)?);
        write_code(dst, latent, locate_point(drag.termination, image, latent)?);
    }
    Ok(DragEncoding { capacity: n, size: latent, data })
}

/// One encoding per requested resolution.
pub fn encoding_pyramid(drags: &DragSet, resolutions: &[GridSize], image: GridSize) -> Result<Vec<DragEncoding>> {
    if resolutions.is_empty() {
        return Err(invalid!("encoding pyramid needs at least one resolution"));
    }
    resolutions.iter().map(|&r| encode_drags(drags, r, image)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const IMG: GridSize = GridSize::square(256);

    /// Visits every cell and decides its value from the defining formula.
    fn brute_force(drags: &DragSet, latent: GridSize, image: GridSize) -> Vec<f64> {
        let mut out = Vec::new();
        let point_channels = |p: PixelPoint| -> [Vec<f64>; 2] {
            let (ch, cw) = (p.h * latent.h as f64 / image.h as f64, p.w * latent.w as f64 / image.w as f64);
            let mut a = Vec::new();
            let mut b = Vec::new();
            for i in 0..latent.h {
                for j in 0..latent.w {
                    let row_hit = libm::floor(ch) as i64 == i as i64
                        || (i == 0 && ch < 0.0)
                        || (i == latent.h - 1 && ch >= latent.h as f64);
                    let col_hit = libm::floor(cw) as i64 == j as i64
                        || (j == 0 && cw < 0.0)
                        || (j == latent.w - 1 && cw >= latent.w as f64);
                    if row_hit && col_hit {
                        a.push(ch - i as f64);
                        b.push(cw - j as f64);
                    } else {
                        a.push(-1.0);
                        b.push(-1.0);
                    }
                }
            }
            [a, b]
        };
        for slot in 0..drags.capacity() {
            match drags.drags().get(slot) {
                Some(d) => {
                    for p in [d.source, d.termination] {
                        let [a, b] = point_channels(p);
                        out.extend(a);
                        out.extend(b);
                    }
                }
                None => out.extend(core::iter::repeat_n(0.0, 4 * latent.cells())),
            }
        }
        out
    }

    fn cell_values(grid: &[f64], latent: GridSize) -> Vec<(usize, f64, f64)> {
        let n = latent.cells();
        (0..n).filter(|&i| grid[i] != -1.0 || grid[n + i] != -1.0).map(|i| (i, grid[i], grid[n + i])).collect()
    }

    #[test]
    fn point_inside_grid() {
        let g = encode_point(PixelPoint::new(100.0, 40.0), IMG, GridSize::square(32)).unwrap();
        // 100 * 32 / 256 = 12.5, 40 * 32 / 256 = 5.0
        assert_eq!(cell_values(&g, GridSize::square(32)), [(12 * 32 + 5, 0.5, 0.0)]);
    }

    #[test]
    fn origin_maps_to_first_cell() {
        for (img, lat) in [(IMG, GridSize::square(32)), (GridSize::new(7, 13), GridSize::new(3, 2))] {
            let g = encode_point(PixelPoint::new(0.0, 0.0), img, lat).unwrap();
            assert_eq!(cell_values(&g, lat), [(0, 0.0, 0.0)]);
        }
    }

    #[test]
    fn out_of_image_point_is_clamped() {
        let lat = GridSize::square(32);
        let g = encode_point(PixelPoint::new(300.0, 128.0), IMG, lat).unwrap();
        // continuous (37.5, 16.0) -> clamped cell (31, 16), offsets (6.5, 0.0)
        assert_eq!(cell_values(&g, lat), [(31 * 32 + 16, 6.5, 0.0)]);
        let code = locate_point(PixelPoint::new(-12.0, 3.0), IMG, lat).unwrap();
        assert_eq!(code.cell, (0, 0));
        assert_eq!(code.offset, (-1.5, 0.375));
    }

    #[test]
    fn non_finite_point_rejected() {
        let err = encode_point(PixelPoint::new(f64::NAN, 1.0), IMG, GridSize::square(4)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(encode_point(PixelPoint::new(1.0, 1.0), GridSize::new(0, 4), GridSize::square(4)).is_err());
    }

    #[test]
    fn empty_set_is_pure_padding() {
        let enc = encode_drags(&DragSet::empty(5), GridSize::square(32), IMG).unwrap();
        assert_eq!(enc.channels(), 20);
        assert_eq!(enc.data().len(), 20 * 32 * 32);
        assert!(enc.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_drag_two_slots() {
        let drag = Drag::new(PixelPoint::new(100.0, 40.0), PixelPoint::new(100.0, 104.0));
        let set = DragSet::new(2, vec![drag]).unwrap();
        let lat = GridSize::square(32);
        let enc = encode_drags(&set, lat, IMG).unwrap();
        assert_eq!(enc.channels(), 8);
        let n = lat.cells();
        assert_eq!(cell_values(&enc.data()[..2 * n], lat), [(12 * 32 + 5, 0.5, 0.0)]);
        assert_eq!(cell_values(&enc.data()[2 * n..4 * n], lat), [(12 * 32 + 13, 0.5, 0.0)]);
        assert!(enc.data()[4 * n..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn capacity_violations() {
        let d = Drag::new(PixelPoint::new(1.0, 1.0), PixelPoint::new(2.0, 2.0));
        assert_eq!(DragSet::new(2, vec![d; 3]).unwrap_err(), Error::Capacity { len: 3, capacity: 2 });
        let mut set = DragSet::new(1, vec![d]).unwrap();
        assert!(set.push(d).is_err());
        let lat = GridSize::square(4);
        let over = DragSet { capacity: 1, drags: vec![d, d] };
        assert!(matches!(encode_drags(&over, lat, IMG), Err(Error::Capacity { len: 2, capacity: 1 })));
    }

    #[test]
    fn pyramid_shapes_and_determinism() {
        let set = DragSet::new(5, vec![Drag::new(PixelPoint::new(10.0, 200.0), PixelPoint::new(90.0, 20.0))]).unwrap();
        let res = [GridSize::square(32), GridSize::square(16)];
        let pyr = encoding_pyramid(&set, &res, IMG).unwrap();
        assert_eq!(pyr.len(), 2);
        assert_eq!((pyr[0].channels(), pyr[0].size()), (20, GridSize::square(32)));
        assert_eq!((pyr[1].channels(), pyr[1].size()), (20, GridSize::square(16)));
        let other = encoding_pyramid(&set, &[GridSize::square(8), GridSize::square(32)], IMG).unwrap();
        assert_eq!(other[1].data(), pyr[0].data());
        assert!(encoding_pyramid(&set, &[], IMG).is_err());
    }

    #[test]
    fn coarse_grid_merges_endpoints_into_one_cell() {
        // source (10, 20) and termination (100, 110) on a 256 image.
        let set = DragSet::new(1, vec![Drag::new(PixelPoint::new(10.0, 20.0), PixelPoint::new(100.0, 110.0))]).unwrap();
        let pyr = encoding_pyramid(&set, &[GridSize::square(2), GridSize::square(32)], IMG).unwrap();
        let coarse = GridSize::square(2);
        let n = coarse.cells();
        // 10*2/256 = 0.078125, 20*2/256 = 0.15625; 100*2/256 = 0.78125, 110*2/256 = 0.859375
        assert_eq!(cell_values(&pyr[0].data()[..2 * n], coarse), [(0, 0.078125, 0.15625)]);
        assert_eq!(cell_values(&pyr[0].data()[2 * n..], coarse), [(0, 0.78125, 0.859375)]);
        let fine = GridSize::square(32);
        let m = fine.cells();
        // 10*32/256 = 1.25, 20*32/256 = 2.5; 100/8 = 12.5, 110/8 = 13.75
        assert_eq!(cell_values(&pyr[1].data()[..2 * m], fine), [(32 + 2, 0.25, 0.5)]);
        assert_eq!(cell_values(&pyr[1].data()[2 * m..], fine), [(12 * 32 + 13, 0.5, 0.75)]);
    }

    #[test]
    fn corner_drag_differs_from_empty_slot() {
        let corner = Drag::new(PixelPoint::new(64.0, 64.0), PixelPoint::new(128.0, 128.0));
        let lat = GridSize::square(32);
        let full = encode_drags(&DragSet::new(1, vec![corner]).unwrap(), lat, IMG).unwrap();
        let empty = encode_drags(&DragSet::empty(1), lat, IMG).unwrap();
        let code = locate_point(corner.source, IMG, lat).unwrap();
        assert_eq!(code.offset, (0.0, 0.0));
        assert_ne!(full.data(), empty.data());
        assert_eq!(full.data().iter().filter(|&&v| v == -1.0).count(), 4 * lat.cells() - 4);
    }

    #[test]
    fn matches_brute_force_on_random_drags() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let image = GridSize::new(rng.random_range(1..300), rng.random_range(1..300));
            let latent = GridSize::new(rng.random_range(1..40), rng.random_range(1..40));
            let cap = rng.random_range(1..6);
            let count = rng.random_range(0..=cap);
            let drags = (0..count)
                .map(|_| {
                    let s = PixelPoint::new(rng.random::<f64>() * image.h as f64, rng.random::<f64>() * image.w as f64);
                    let t = PixelPoint::new(
                        (rng.random::<f64>() * 2.0 - 0.5) * image.h as f64,
                        (rng.random::<f64>() * 2.0 - 0.5) * image.w as f64,
                    );
                    Drag::new(s, t)
                })
                .collect();
            let set = DragSet::new(cap, drags).unwrap();
            let enc = encode_drags(&set, latent, image).unwrap();
            assert_eq!(enc.data(), brute_force(&set, latent, image).as_slice());
        }
    }

    proptest! {
        #[test]
        fn occupancy_and_reconstruction(
            h in 0.0f64..255.999, w in 0.0f64..255.999,
            th in -300.0f64..600.0, tw in -300.0f64..600.0,
            lat in 1usize..48, slot_pad in 0usize..4,
        ) {
            let latent = GridSize::square(lat);
            let d = Drag::new(PixelPoint::new(h, w), PixelPoint::new(th, tw));
            let cap = 1 + slot_pad;
            let enc = encode_drags(&DragSet::new(cap, vec![d]).unwrap(), latent, IMG).unwrap();
            prop_assert_eq!(enc.channels(), 4 * cap);
            let n = latent.cells();
            for pair in 0..2 {
                let a = enc.channel(2 * pair);
                let b = enc.channel(2 * pair + 1);
                let marked: Vec<usize> = (0..n).filter(|&i| a[i] != -1.0 || b[i] != -1.0).collect();
                prop_assert!(marked.len() <= 1);
            }
            // inside points reconstruct their continuous latent coordinate
            let code = locate_point(d.source, IMG, latent).unwrap();
            let ch = h * lat as f64 / 256.0;
            let cw = w * lat as f64 / 256.0;
            prop_assert!((code.cell.0 as f64 + code.offset.0 - ch).abs() <= 1e-9);
            prop_assert!((code.cell.1 as f64 + code.offset.1 - cw).abs() <= 1e-9);
            prop_assert!((0.0..1.0).contains(&code.offset.0) && (0.0..1.0).contains(&code.offset.1));
            // padding slots stay zero
            prop_assert!(enc.data()[4 * n..].iter().all(|&v| v == 0.0));
        }

        #[test]
        fn slots_do_not_interfere(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let latent = GridSize::square(16);
            let drags: Vec<Drag> = (0..3).map(|_| Drag::new(
                PixelPoint::new(rng.random::<f64>() * 256.0, rng.random::<f64>() * 256.0),
                PixelPoint::new(rng.random::<f64>() * 256.0, rng.random::<f64>() * 256.0),
            )).collect();
            let all = encode_drags(&DragSet::new(3, drags.clone()).unwrap(), latent, IMG).unwrap();
            let n = latent.cells();
            for (k, d) in drags.iter().enumerate() {
                let alone = encode_drags(&DragSet::new(3, vec![*d]).unwrap(), latent, IMG).unwrap();
                prop_assert_eq!(&all.data()[4 * k * n..4 * (k + 1) * n], &alone.data()[..4 * n]);
            }
        }
    }
}
