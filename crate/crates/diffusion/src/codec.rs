//! Fixed linear image codec: space-to-depth followed by a PCA projection.
//!
//! `space_to_depth` folds every `f x f` pixel block into one cell of
//! `f·f·C` values and is exactly invertible. The codec then projects each
//! cell onto the leading principal directions of the training frames
//! (uncentered, so the map stays linear) and rescales every latent channel
//! to unit second moment. Decoding applies the transpose, which is the
//! pseudo-inverse of the projection.

use dragpart_core::{GridSize, ImageGrid, Normalization};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODEC_FACTOR: usize = 8;
pub const LATENT_CHANNELS: usize = 4;

/// Channels-last latent grid (`h x w x channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    /// Size of the image this latent was encoded from.
    pub image: GridSize,
}

impl Latent {
    pub fn size(&self) -> GridSize {
        GridSize::new(self.height, self.width)
    }
}

fn check_divisible(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Resolution(format!("{h}x{w} image is not divisible by codec factor {factor}")));
    }
    Ok(())
}

/// Folds `factor x factor` blocks into channels; cell layout is `(dy, dx, c)`.
pub fn space_to_depth(image: &ImageGrid, factor: usize) -> Result<Latent> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    check_divisible(h, w, factor)?;
    let (lh, lw) = (h / factor, w / factor);
    let depth = factor * factor * c;
    let mut data = Vec::with_capacity(lh * lw * depth);
    for cy in 0..lh {
        for cx in 0..lw {
            for dy in 0..factor {
                for dx in 0..factor {
                    data.extend_from_slice(image.pixel(cy * factor + dy, cx * factor + dx));
                }
            }
        }
    }
    Ok(Latent { height: lh, width: lw, channels: depth, data, image: GridSize::new(h, w) })
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(cells: &Latent, factor: usize, channels: usize) -> Result<ImageGrid> {
    if cells.channels != factor * factor * channels {
        return Err(Error::Resolution(format!(
            "{} cell channels cannot unfold into {factor}x{factor}x{channels}",
            cells.channels
        )));
    }
    let (h, w) = (cells.height * factor, cells.width * factor);
    let mut data = vec![0f32; h * w * channels];
    let mut src = cells.data.chunks_exact(channels);
    for cy in 0..cells.height {
        for cx in 0..cells.width {
            for dy in 0..factor {
                for dx in 0..factor {
                    let at = ((cy * factor + dy) * w + cx * factor + dx) * channels;
                    data[at..at + channels].copy_from_slice(src.next().expect("cell count checked"));
                }
            }
        }
    }
    Ok(ImageGrid::new(h, w, channels, data)?)
}

/// Linear image codec fitted once on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    pub factor: usize,
    pub image_channels: usize,
    pub latent_channels: usize,
    /// Orthonormal principal directions, `latent_channels` rows of `factor²·image_channels`.
    pub basis: Vec<Vec<f64>>,
    /// Root second moment of each projected channel.
    pub scales: Vec<f64>,
}

impl Codec {
    /// Fits principal directions of all `factor x factor` blocks in `images`.
    pub fn fit(images: &[ImageGrid], factor: usize, latent_channels: usize) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Config("codec fit needs at least one image".into()))?;
        let channels = first.channels();
        let depth = factor * factor * channels;
        if latent_channels == 0 || latent_channels > depth {
            return Err(Error::Config(format!("cannot project {depth} cell values to {latent_channels} channels")));
        }
        let mut gram = DMatrix::<f64>::zeros(depth, depth);
        let mut count = 0usize;
        for image in images {
            if image.channels() != channels {
                return Err(Error::Config("codec fit images differ in channel count".into()));
            }
            let cells = space_to_depth(image, factor)?;
            for cell in cells.data.chunks_exact(depth) {
                let v = nalgebra::DVector::from_iterator(depth, cell.iter().map(|&x| x as f64));
                gram.ger(1.0, &v, &v, 1.0);
                count += 1;
            }
        }
        gram /= count as f64;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..depth).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut basis = Vec::with_capacity(latent_channels);
        let mut scales = Vec::with_capacity(latent_channels);
        for &k in order.iter().take(latent_channels) {
            let mut col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            let lambda = eig.eigenvalues[k];
            if lambda <= 1e-12 {
                return Err(Error::Config("codec fit images span fewer directions than latent channels".into()));
            }
            basis.push(col);
            scales.push(lambda.sqrt());
        }
        Ok(Self { factor, image_channels: channels, latent_channels, basis, scales })
    }

    pub fn depth(&self) -> usize {
        self.factor * self.factor * self.image_channels
    }

    pub fn latent_size(&self, image: GridSize) -> Result<GridSize> {
        check_divisible(image.h, image.w, self.factor)?;
        Ok(GridSize::new(image.h / self.factor, image.w / self.factor))
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.depth();
        if self.basis.len() != self.latent_channels
            || self.scales.len() != self.latent_channels
            || self.basis.iter().any(|b| b.len() != depth)
            || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Checkpoint("codec basis does not match its declared shape".into()));
        }
        Ok(())
    }

    /// Linear encoding; the image is used as given (no offset).
    pub fn encode(&self, image: &ImageGrid) -> Result<Latent> {
        if image.channels() != self.image_channels {
            return Err(Error::Resolution(format!(
                "codec expects {} image channels, got {}",
                self.image_channels,
                image.channels()
            )));
        }
        let cells = space_to_depth(image, self.factor)?;
        let depth = self.depth();
        let mut data = Vec::with_capacity(cells.height * cells.width * self.latent_channels);
        for cell in cells.data.chunks_exact(depth) {
            for (dir, scale) in self.basis.iter().zip(&self.scales) {
                let dot: f64 = dir.iter().zip(cell).map(|(a, &b)| a * b as f64).sum();
                data.push((dot / scale) as f32);
            }
        }
        Ok(Latent { height: cells.height, width: cells.width, channels: self.latent_channels, data, image: cells.image })
    }

    /// Transpose of [`Codec::encode`]; returns a signed-range image.
    pub fn decode(&self, z: &Latent) -> Result<ImageGrid> {
        if z.channels != self.latent_channels || z.data.len() != z.height * z.width * z.channels {
            return Err(Error::Resolution(format!("latent has {} channels, codec expects {}", z.channels, self.latent_channels)));
        }
        let depth = self.depth();
        let mut cells = Vec::with_capacity(z.height * z.width * depth);
        for code in z.data.chunks_exact(self.latent_channels) {
            let mut cell = vec![0f64; depth];
            for ((dir, scale), &c) in self.basis.iter().zip(&self.scales).zip(code) {
                let a = c as f64 * scale;
                cell.iter_mut().zip(dir).for_each(|(o, d)| *o += a * d);
            }
            cells.extend(cell.into_iter().map(|v| v as f32));
        }
        let stack = Latent { height: z.height, width: z.width, channels: depth, data: cells, image: z.image };
        Ok(depth_to_space(&stack, self.factor, self.image_channels)?.with_normalization(Normalization::Signed))
    }
}

/// Maps a `[0, 1]` image to `[-1, 1]`.
pub fn to_signed(image: &ImageGrid) -> Result<ImageGrid> {
    if image.normalization() == Normalization::Signed {
        return Ok(image.clone());
    }
    let data = image.data().iter().map(|v| 2.0 * v - 1.0).collect();
    Ok(ImageGrid::new(image.height(), image.width(), image.channels(), data)?.with_normalization(Normalization::Signed))
}

/// Clamps a signed image to `[-1, 1]` and maps it to `[0, 1]`.
pub fn to_unit(image: &ImageGrid) -> ImageGrid {
    image.to_unit_range()
}

#[cfg(test)]
mod tests {
    use super::*;
    use dragpart_core::rng;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut r = rng::stream(seed, 99, 0);
        let data = (0..h * w * 3).map(|_| r.random::<f32>()).collect();
        ImageGrid::new(h, w, 3, data).unwrap()
    }

    fn blocky_images() -> Vec<ImageGrid> {
        (0..6).map(|s| random_image(16, 16, s)).collect()
    }

    #[test]
    fn space_to_depth_round_trip_is_bitwise() {
        let img = random_image(64, 64, 7);
        let cells = space_to_depth(&img, 8).unwrap();
        assert_eq!((cells.height, cells.width, cells.channels), (8, 8, 192));
        let back = depth_to_space(&cells, 8, 3).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn cell_layout_matches_block_order() {
        let data: Vec<f32> = (0..16 * 16).map(|i| i as f32).collect();
        let img = ImageGrid::new(16, 16, 1, data).unwrap();
        let cells = space_to_depth(&img, 8).unwrap();
        // cell (0, 1), block offset (dy=2, dx=3) is pixel (2, 11)
        assert_eq!(cells.data[64 + 2 * 8 + 3], (2 * 16 + 11) as f32);
    }

    #[test]
    fn indivisible_resolution_is_rejected() {
        let img = random_image(20, 16, 1);
        assert!(matches!(space_to_depth(&img, 8), Err(Error::Resolution(_))));
    }

    #[test]
    fn encode_shape_and_linearity() {
        let codec = Codec::fit(&blocky_images(), 8, 4).unwrap();
        let img = random_image(64, 64, 3);
        let z = codec.encode(&img).unwrap();
        assert_eq!((z.channels, z.height, z.width), (4, 8, 8));
        let alpha = 0.37f32;
        let scaled = ImageGrid::new(64, 64, 3, img.data().iter().map(|v| v * alpha).collect()).unwrap();
        let zs = codec.encode(&scaled).unwrap();
        for (a, b) in zs.data.iter().zip(&z.data) {
            assert!((a - alpha * b).abs() < 1e-6);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_channels_have_unit_moment() {
        let images = blocky_images();
        let codec = Codec::fit(&images, 8, 4).unwrap();
        for (i, a) in codec.basis.iter().enumerate() {
            for (j, b) in codec.basis.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let mut moments = [0f64; 4];
        let mut n = 0;
        for img in &images {
            for code in codec.encode(img).unwrap().data.chunks_exact(4) {
                code.iter().zip(moments.iter_mut()).for_each(|(c, m)| *m += (*c as f64).powi(2));
                n += 1;
            }
        }
        for m in moments {
            assert!((m / n as f64 - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn decode_is_a_right_inverse_on_latents() {
        let codec = Codec::fit(&blocky_images(), 8, 4).unwrap();
        let z = codec.encode(&random_image(16, 16, 11)).unwrap();
        let again = codec.encode(&codec.decode(&z).unwrap()).unwrap();
        for (a, b) in again.data.iter().zip(&z.data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn codec_reconstructs_images_inside_its_span() {
        // Flat-colour blocks live in a 3-dimensional span; a 4-channel codec keeps them.
        let flat = |seed: u64| {
            let mut r = rng::stream(seed, 98, 0);
            let colors: Vec<[f32; 3]> = (0..4).map(|_| [r.random(), r.random(), r.random()]).collect();
            let mut data = Vec::new();
            for y in 0..16 {
                for x in 0..16 {
                    data.extend_from_slice(&colors[(y / 8) * 2 + x / 8]);
                }
            }
            ImageGrid::new(16, 16, 3, data).unwrap()
        };
        let images: Vec<_> = (0..4).map(flat).collect();
        let codec = Codec::fit(&images, 8, 3).unwrap();
        let img = flat(9);
        let back = codec.decode(&codec.encode(&img).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
