//! Building blocks shared by the backbones: time MLP, global image encoder,
//! residual blocks and resampling.

use candle_core::{DType, Tensor};

use crate::error::Result;
use crate::nn::{timestep_embedding, Conv2d, GroupNorm, Init, Linear};

/// Sinusoidal timestep features followed by a two-layer SiLU MLP.
#[derive(Clone, Debug)]
pub struct TimeEmbedding {
    dim: usize,
    fc1: Linear,
    fc2: Linear,
}

impl TimeEmbedding {
    pub fn new(init: &Init, dim: usize, out: usize) -> Result<Self> {
        Ok(Self { dim, fc1: Linear::new(&init.pp("fc1"), dim, out)?, fc2: Linear::new(&init.pp("fc2"), out, out)? })
    }

    pub fn forward(&self, t: &[usize], dtype: DType) -> Result<Tensor> {
        let e = timestep_embedding(t, self.dim, dtype)?;
        self.fc2.forward(&self.fc1.forward(&e)?.silu()?)
    }
}

/// Strided conv stack summarizing the reference image as one token `(B, 1, dim)`.
#[derive(Clone, Debug)]
pub struct GlobalEncoder {
    convs: Vec<Conv2d>,
    proj: Linear,
}

impl GlobalEncoder {
    pub fn new(init: &Init, in_channels: usize, widths: &[usize], dim: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(&init.pp(format!("conv{i}")), c, w, 3, 2)?);
            c = w;
        }
        Ok(Self { convs, proj: Linear::new(&init.pp("proj"), c, dim)? })
    }

    /// `image: (B, H, W, C)` in the signed range.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut h = image.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.silu()?;
        }
        let pooled = h.mean(2)?.mean(1)?;
        Ok(self.proj.forward(&pooled)?.unsqueeze(1)?)
    }
}

/// GN-SiLU-conv residual block with an additive time embedding.
#[derive(Clone, Debug)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Linear>,
}

impl ResBlock {
    pub fn new(init: &Init, c_in: usize, c_out: usize, time_dim: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&init.pp("norm1"), c_in, groups)?,
            conv1: Conv2d::new(&init.pp("conv1"), c_in, c_out, 3, 1)?,
            time: Linear::new(&init.pp("time"), time_dim, c_out)?,
            norm2: GroupNorm::new(&init.pp("norm2"), c_out, groups)?,
            conv2: Conv2d::new(&init.pp("conv2"), c_out, c_out, 3, 1)?,
            skip: if c_in == c_out { None } else { Some(Linear::new(&init.pp("skip"), c_in, c_out)?) },
        })
    }

    /// `x: (B, H, W, C)`, `temb: (B, time_dim)`.
    pub fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let (b, c) = (h.dim(0)?, h.dim(3)?);
        let t = self.time.forward(&temb.silu()?)?.reshape((b, 1, 1, c))?;
        let h = h.broadcast_add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

/// Nearest-neighbour 2x upsampling of `(B, H, W, C)`.
pub fn upsample_nearest(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    Ok(x.reshape((b, h, 1, w, 1, c))?.broadcast_as((b, h, 2, w, 2, c))?.reshape((b, 2 * h, 2 * w, c))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::arange(0f32, 8.0, &Device::Cpu).unwrap().reshape((1, 2, 2, 2)).unwrap();
        let y: Vec<f32> = upsample_nearest(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        // row 0: pixel (0,0) twice then (0,1) twice
        assert_eq!(&y[..8], &[0., 1., 0., 1., 2., 3., 2., 3.]);
        assert_eq!(&y[8..16], &y[..8]);
    }

    #[test]
    fn global_encoder_emits_one_token() {
        let init = Init::new(0, DType::F32);
        let enc = GlobalEncoder::new(&init, 3, &[16, 32, 64, 64], 64).unwrap();
        let x = Tensor::zeros((2, 64, 64, 3), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&x).unwrap().dims(), &[2, 1, 64]);
    }
}
