//! U-Net backbone with reference-image attention.
//!
//! The reference latent runs through the same down path (at `t = 0`, no
//! drags). In every transformer block of the noisy branch, self-attention
//! queries come from the noisy tokens while keys and values come entirely
//! from the reference branch's tokens at that block. Drag inputs enter each
//! transformer block next to `proj_in` through zero-initialized weights.

use candle_core::Tensor;

use crate::blocks::{upsample_nearest, GlobalEncoder, ResBlock, TimeEmbedding};
use crate::config::{DenoiserConfig, DragConditioning};
use crate::error::{Error, Result};
use crate::nn::{Attention, Conv2d, FeedForward, GroupNorm, Init, InitKind, KeyValues, LayerNorm, Linear};

/// Zero-initialized route from a drag tensor to a block's token width.
#[derive(Clone, Debug)]
enum DragAdapter {
    /// Bias-free linear map of the `4N` drag encoding.
    Encoding(Linear),
    /// conv-SiLU-conv on the blurred flow; the second conv starts at zero.
    Flow(Conv2d, Conv2d),
}

impl DragAdapter {
    fn new(init: &Init, config: &DenoiserConfig, width: usize) -> Result<Self> {
        Ok(match config.conditioning {
            DragConditioning::MultiResEveryBlock => {
                DragAdapter::Encoding(Linear::zeros(init, config.drag_channels(), width, false)?)
            }
            _ => DragAdapter::Flow(
                Conv2d::new(&init.pp("conv1"), config.drag_channels(), width, 3, 1)?,
                Conv2d::with_init(&init.pp("conv2"), width, width, 3, 1, InitKind::Zeros)?,
            ),
        })
    }

    /// `(B, h, w, c) -> (B, h, w, width)`.
    fn forward(&self, drags: &Tensor) -> Result<Tensor> {
        match self {
            DragAdapter::Encoding(l) => l.forward(drags),
            DragAdapter::Flow(a, b) => b.forward(&a.forward(drags)?.silu()?),
        }
    }
}

fn check_drag_shape(drags: &Tensor, x: &Tensor, channels: usize) -> Result<()> {
    let (b, h, w, _) = x.dims4()?;
    if drags.dims() != [b, h, w, channels] {
        return Err(Error::Resolution(format!(
            "block at {h}x{w} received drag input of shape {:?}, expected {:?}",
            drags.dims(),
            [b, h, w, channels]
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct SpatialTransformer {
    width: usize,
    drag_channels: usize,
    norm: GroupNorm,
    proj_in: Linear,
    drag: Option<DragAdapter>,
    ln1: LayerNorm,
    attn1: Attention,
    ln2: LayerNorm,
    attn2: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
    proj_out: Linear,
}

impl SpatialTransformer {
    fn new(init: &Init, config: &DenoiserConfig, width: usize, with_drags: bool) -> Result<Self> {
        Ok(Self {
            width,
            drag_channels: config.drag_channels(),
            norm: GroupNorm::new(&init.pp("norm"), width, config.groups)?,
            proj_in: Linear::new(&init.pp("proj_in"), width, width)?,
            drag: if with_drags { Some(DragAdapter::new(&init.pp("drag"), config, width)?) } else { None },
            ln1: LayerNorm::new(&init.pp("ln1"), width)?,
            attn1: Attention::new(&init.pp("attn1"), width, width, config.heads)?,
            ln2: LayerNorm::new(&init.pp("ln2"), width)?,
            attn2: Attention::new(&init.pp("attn2"), width, config.global_dim, config.heads)?,
            ln3: LayerNorm::new(&init.pp("ln3"), width)?,
            ff: FeedForward::new(&init.pp("ff"), width, 4)?,
            proj_out: Linear::new(&init.pp("proj_out"), width, width)?,
        })
    }

    fn tokens(&self, x: &Tensor, drags: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.proj_in.forward(&self.norm.forward(x)?)?;
        if let (Some(adapter), Some(d)) = (&self.drag, drags) {
            check_drag_shape(d, x, self.drag_channels)?;
            h = (h + adapter.forward(d)?)?;
        }
        let (b, hh, ww, c) = h.dims4()?;
        Ok(h.reshape((b, hh * ww, c))?)
    }

    fn finish(&self, x: &Tensor, tokens: Tensor, attn: &Tensor, global: &Tensor) -> Result<Tensor> {
        let h = (tokens + attn)?;
        let h = (&h + self.attn2.forward(&self.ln2.forward(&h)?, global)?)?;
        let h = (&h + self.ff.forward(&self.ln3.forward(&h)?)?)?;
        Ok((x + self.proj_out.forward(&h)?.reshape(x.shape())?)?)
    }

    /// Reference pass: ordinary self-attention; returns the output (if needed) and its keys/values.
    fn reference(&self, x: &Tensor, global: &Tensor, need_output: bool) -> Result<(Option<Tensor>, KeyValues)> {
        let tokens = self.tokens(x, None)?;
        let normed = self.ln1.forward(&tokens)?;
        let kv = self.attn1.key_values(&normed)?;
        if !need_output {
            return Ok((None, kv));
        }
        let attn = self.attn1.attend(&normed, &kv)?;
        Ok((Some(self.finish(x, tokens, &attn, global)?), kv))
    }

    /// Noisy pass with reference keys/values; returns the output and the attention tap.
    fn forward(&self, x: &Tensor, drags: Option<&Tensor>, reference: &KeyValues, global: &Tensor) -> Result<(Tensor, Tensor)> {
        let tokens = self.tokens(x, drags)?;
        let attn = self.attn1.attend(&self.ln1.forward(&tokens)?, reference)?;
        let (b, h, w, _) = x.dims4()?;
        let tap = attn.reshape((b, h, w, self.width))?;
        Ok((self.finish(x, tokens, &attn, global)?, tap))
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    input_drag: Option<DragAdapter>,
    time: TimeEmbedding,
    global: GlobalEncoder,
    conv_in: Conv2d,
    downsample: Vec<Conv2d>,
    down: Vec<ResBlock>,
    transformers: Vec<SpatialTransformer>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    upsample: Vec<Conv2d>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

/// Network inputs, all channels-last.
pub struct UNetInput<'a> {
    pub z_t: &'a Tensor,
    pub t: &'a [usize],
    pub y_latent: &'a Tensor,
    pub y_image: &'a Tensor,
    pub drags: &'a [Tensor],
}

impl UNet {
    pub fn new(init: &Init, config: &DenoiserConfig) -> Result<Self> {
        let w = &config.widths;
        let levels = w.len();
        let temb = config.time_dim;
        let every_block = config.conditioning != DragConditioning::ConvInputOnly;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut transformers = Vec::new();
        let mut prev = w[0];
        for (l, &c) in w.iter().enumerate() {
            if l > 0 {
                downsample.push(Conv2d::new(&init.pp(format!("downsample{l}")), prev, prev, 3, 2)?);
            }
            down.push(ResBlock::new(&init.pp(format!("down{l}")), prev, c, temb, config.groups)?);
            transformers.push(SpatialTransformer::new(&init.pp(format!("transformer{l}")), config, c, every_block)?);
            prev = c;
        }
        let mid = ResBlock::new(&init.pp("mid"), prev, prev, temb, config.groups)?;
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for l in (0..levels).rev() {
            up.push(ResBlock::new(&init.pp(format!("up{l}")), prev + w[l], w[l], temb, config.groups)?);
            prev = w[l];
            if l > 0 {
                upsample.push(Conv2d::new(&init.pp(format!("upsample{l}")), w[l], w[l - 1], 3, 1)?);
                prev = w[l - 1];
            }
        }
        let out_fan = 9 * w[0];
        Ok(Self {
            input_drag: if every_block { None } else { Some(DragAdapter::new(&init.pp("input_drag"), config, w[0])?) },
            time: TimeEmbedding::new(&init.pp("time"), config.time_dim, temb)?,
            global: GlobalEncoder::new(&init.pp("global"), config.image_channels, &config.global_widths, config.global_dim)?,
            conv_in: Conv2d::new(&init.pp("conv_in"), config.latent_channels, w[0], 3, 1)?,
            downsample,
            down,
            transformers,
            mid,
            up,
            upsample,
            norm_out: GroupNorm::new(&init.pp("norm_out"), w[0], config.groups)?,
            conv_out: Conv2d::with_init(
                &init.pp("conv_out"),
                w[0],
                config.latent_channels,
                3,
                1,
                InitKind::FanIn { fan_in: out_fan, gain: 0.1 },
            )?,
        })
    }

    fn down_step(&self, l: usize, h: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = if l > 0 { self.downsample[l - 1].forward(h)? } else { h.clone() };
        self.down[l].forward(&h, temb)
    }

    /// Returns the noise prediction and one attention tap per transformer block.
    pub fn forward(&self, input: &UNetInput) -> Result<(Tensor, Vec<Tensor>)> {
        let dtype = input.z_t.dtype();
        let levels = self.down.len();
        let expected_drags = if self.input_drag.is_some() { 1 } else { levels };
        if input.drags.len() != expected_drags {
            return Err(Error::Resolution(format!("expected {expected_drags} drag tensors, got {}", input.drags.len())));
        }
        let global = self.global.forward(input.y_image)?;
        let temb = self.time.forward(input.t, dtype)?;
        let temb_ref = self.time.forward(&vec![0; input.t.len()], dtype)?;

        let mut references = Vec::with_capacity(levels);
        let mut hy = self.conv_in.forward(input.y_latent)?;
        for l in 0..levels {
            hy = self.down_step(l, &hy, &temb_ref)?;
            let last = l + 1 == levels;
            let (out, kv) = self.transformers[l].reference(&hy, &global, !last)?;
            references.push(kv);
            if let Some(out) = out {
                hy = out;
            }
        }

        let mut h = self.conv_in.forward(input.z_t)?;
        if let Some(adapter) = &self.input_drag {
            check_drag_shape(&input.drags[0], &h, input.drags[0].dim(3)?)?;
            h = (h + adapter.forward(&input.drags[0])?)?;
        }
        let mut skips = Vec::with_capacity(levels);
        let mut taps = Vec::with_capacity(levels);
        for l in 0..levels {
            h = self.down_step(l, &h, &temb)?;
            let drags = if self.input_drag.is_some() { None } else { Some(&input.drags[l]) };
            let (out, tap) = self.transformers[l].forward(&h, drags, &references[l], &global)?;
            h = out;
            skips.push(h.clone());
            taps.push(tap);
        }
        h = self.mid.forward(&h, &temb)?;
        let mut ups = self.upsample.iter();
        for (i, block) in self.up.iter().enumerate() {
            let l = levels - 1 - i;
            h = block.forward(&Tensor::cat(&[&h, &skips[l]], 3)?, &temb)?;
            if l > 0 {
                h = ups.next().expect("one upsample per level").forward(&upsample_nearest(&h)?)?;
            }
        }
        let eps = self.conv_out.forward(&self.norm_out.forward(&h)?.silu()?)?;
        Ok((eps, taps))
    }
}
