//! DiT backbone with adaLN-Zero blocks and token-wise drag modulation.
//!
//! Tokens are single latent cells of the noisy latent concatenated with the
//! reference latent. The conditioning vector (time plus global image token)
//! regresses shift, scale and gate for every block; a zero-initialized
//! per-token projection of the drag encoding adds to that regression, so
//! each token gets its own modulation.

use candle_core::{Device, Tensor};

use crate::blocks::{GlobalEncoder, TimeEmbedding};
use crate::config::DenoiserConfig;
use crate::error::{Error, Result};
use crate::nn::{Attention, FeedForward, Init, InitKind, LayerNorm, Linear};

/// Fixed 2D sine-cosine position table `(h·w, dim)`.
pub fn position_table(h: usize, w: usize, dim: usize) -> Vec<f64> {
    let quarter = dim / 4;
    let mut out = Vec::with_capacity(h * w * dim);
    for r in 0..h {
        for c in 0..w {
            for (pos, _) in [(r as f64, 0), (c as f64, 1)] {
                for i in 0..quarter {
                    let freq = 1.0 / 10_000f64.powf(i as f64 / quarter as f64);
                    out.push((pos * freq).sin());
                }
                for i in 0..quarter {
                    let freq = 1.0 / 10_000f64.powf(i as f64 / quarter as f64);
                    out.push((pos * freq).cos());
                }
            }
        }
    }
    out
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}

#[derive(Clone, Debug)]
struct DitBlock {
    width: usize,
    ada: Linear,
    drag: Linear,
    attn: Attention,
    mlp: FeedForward,
}

impl DitBlock {
    fn new(init: &Init, config: &DenoiserConfig) -> Result<Self> {
        let d = config.dit_width;
        Ok(Self {
            width: d,
            ada: Linear::zeros(&init.pp("ada"), d, 6 * d, true)?,
            drag: Linear::zeros(&init.pp("drag"), config.drag_channels(), 6 * d, false)?,
            attn: Attention::new(&init.pp("attn"), d, d, config.heads)?,
            mlp: FeedForward::new(&init.pp("mlp"), d, 4)?,
        })
    }

    /// `x: (B, N, D)`, `c: (B, D)`, `drags: (B, N, 4N)`.
    fn forward(&self, x: &Tensor, c: &Tensor, drags: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = self.ada.forward(&c.silu()?)?.unsqueeze(1)?.broadcast_add(&self.drag.forward(drags)?)?;
        let part = |i: usize| m.narrow(2, i * self.width, self.width);
        let (shift1, scale1, gate1) = (part(0)?, part(1)?, part(2)?);
        let (shift2, scale2, gate2) = (part(3)?, part(4)?, part(5)?);
        let norm = LayerNorm::plain();
        let h = modulate(&norm.forward(x)?, &shift1, &scale1)?;
        let a = self.attn.forward(&h, &h)?;
        let x = (x + (&gate1 * &a)?)?;
        let h = modulate(&norm.forward(&x)?, &shift2, &scale2)?;
        let x = (&x + (&gate2 * self.mlp.forward(&h)?)?)?;
        Ok((x, a))
    }
}

#[derive(Clone, Debug)]
pub struct Dit {
    width: usize,
    drag_channels: usize,
    embed: Linear,
    positions: Vec<f64>,
    time: TimeEmbedding,
    global: GlobalEncoder,
    global_proj: Linear,
    blocks: Vec<DitBlock>,
    final_ada: Linear,
    final_out: Linear,
}

pub struct DitInput<'a> {
    pub z_t: &'a Tensor,
    pub t: &'a [usize],
    pub y_latent: &'a Tensor,
    pub y_image: &'a Tensor,
    pub drags: &'a [Tensor],
}

impl Dit {
    pub fn new(init: &Init, config: &DenoiserConfig) -> Result<Self> {
        let d = config.dit_width;
        let latent = config.latent_size();
        Ok(Self {
            width: d,
            drag_channels: config.drag_channels(),
            embed: Linear::new(&init.pp("embed"), 2 * config.latent_channels, d)?,
            positions: position_table(latent.h, latent.w, d),
            time: TimeEmbedding::new(&init.pp("time"), config.time_dim, d)?,
            global: GlobalEncoder::new(&init.pp("global"), config.image_channels, &config.global_widths, config.global_dim)?,
            global_proj: Linear::new(&init.pp("global_proj"), config.global_dim, d)?,
            blocks: (0..config.dit_depth).map(|i| DitBlock::new(&init.pp(format!("block{i}")), config)).collect::<Result<_>>()?,
            final_ada: Linear::zeros(&init.pp("final_ada"), d, 2 * d, true)?,
            final_out: Linear::with_init(
                &init.pp("final_out"),
                d,
                config.latent_channels,
                true,
                InitKind::FanIn { fan_in: d, gain: 0.1 },
            )?,
        })
    }

    pub fn forward(&self, input: &DitInput) -> Result<(Tensor, Vec<Tensor>)> {
        let (b, h, w, c) = input.z_t.dims4()?;
        let dtype = input.z_t.dtype();
        if input.drags.len() != self.blocks.len() {
            return Err(Error::Resolution(format!("expected {} drag tensors, got {}", self.blocks.len(), input.drags.len())));
        }
        let n = h * w;
        if self.positions.len() != n * self.width {
            return Err(Error::Resolution(format!("DiT built for a different latent size than {h}x{w}")));
        }
        let pos = Tensor::from_slice(&self.positions, (1, n, self.width), &Device::Cpu)?.to_dtype(dtype)?;
        let tokens = Tensor::cat(&[input.z_t, input.y_latent], 3)?.reshape((b, n, 2 * c))?;
        let mut x = self.embed.forward(&tokens)?.broadcast_add(&pos)?;
        let global = self.global_proj.forward(&self.global.forward(input.y_image)?.squeeze(1)?)?;
        let cond = (self.time.forward(input.t, dtype)? + global)?;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for (block, drags) in self.blocks.iter().zip(input.drags) {
            if drags.dims() != [b, h, w, self.drag_channels] {
                return Err(Error::Resolution(format!(
                    "DiT block at {h}x{w} received drag input of shape {:?}",
                    drags.dims()
                )));
            }
            let (next, tap) = block.forward(&x, &cond, &drags.reshape((b, n, self.drag_channels))?)?;
            x = next;
            taps.push(tap.reshape((b, h, w, self.width))?);
        }
        let m = self.final_ada.forward(&cond.silu()?)?.unsqueeze(1)?;
        let (shift, scale) = (m.narrow(2, 0, self.width)?, m.narrow(2, self.width, self.width)?);
        let x = modulate(&LayerNorm::plain().forward(&x)?, &shift, &scale)?;
        let eps = self.final_out.forward(&x)?.reshape((b, h, w, c))?;
        Ok((eps, taps))
    }
}

