//! Backbone-agnostic denoiser and tensor conversions.

use candle_core::{DType, Device, Tensor};
use dragpart_core::{GridSize, ImageGrid};

use crate::codec::{to_signed, Latent};
use crate::config::{Backbone, DenoiserConfig};
use crate::dit::{Dit, DitInput};
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};
use crate::unet::{UNet, UNetInput};

#[derive(Clone, Debug)]
enum Net {
    Unet(UNet),
    Dit(Dit),
}

/// Noise predictor `ε̂(z_t, t, y, D)` with its parameters.
#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    net: Net,
}

/// Batched, channels-last network inputs.
pub struct DenoiserInput<'a> {
    pub z_t: &'a Tensor,
    pub t: &'a [usize],
    pub y_latent: &'a Tensor,
    /// Reference image in the signed range, `(B, H, W, C)`.
    pub y_image: &'a Tensor,
    /// One drag tensor per drag-conditioned block, from [`crate::drags::prepare_drags`].
    pub drags: &'a [Tensor],
}

/// Noise prediction plus the self-attention output of every transformer block.
pub struct DenoiserOutput {
    pub eps: Tensor,
    pub taps: Vec<Tensor>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let init = Init::new(seed, dtype);
        let net = match config.backbone {
            Backbone::Unet => Net::Unet(UNet::new(&init.pp("unet"), &config)?),
            Backbone::Dit => Net::Dit(Dit::new(&init.pp("dit"), &config)?),
        };
        Ok(Self { config, params: init.finish(), net })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn forward(&self, input: &DenoiserInput) -> Result<DenoiserOutput> {
        let latent = self.config.latent_size();
        let (b, h, w, c) = input.z_t.dims4()?;
        if (h, w, c) != (latent.h, latent.w, self.config.latent_channels) || input.t.len() != b {
            return Err(Error::Resolution(format!(
                "denoiser expects latents of {}x{}x{} and one timestep per example, got {:?} with {} timesteps",
                latent.h,
                latent.w,
                self.config.latent_channels,
                input.z_t.dims(),
                input.t.len()
            )));
        }
        if input.y_latent.dims() != input.z_t.dims() {
            return Err(Error::Resolution("reference latent shape differs from the noisy latent".into()));
        }
        let img = self.config.image;
        if input.y_image.dims() != [b, img.h, img.w, self.config.image_channels] {
            return Err(Error::Resolution(format!(
                "reference image must be {}x{}x{}, got {:?}",
                img.h,
                img.w,
                self.config.image_channels,
                input.y_image.dims()
            )));
        }
        let (eps, taps) = match &self.net {
            Net::Unet(net) => net.forward(&UNetInput {
                z_t: input.z_t,
                t: input.t,
                y_latent: input.y_latent,
                y_image: input.y_image,
                drags: input.drags,
            })?,
            Net::Dit(net) => net.forward(&DitInput {
                z_t: input.z_t,
                t: input.t,
                y_latent: input.y_latent,
                y_image: input.y_image,
                drags: input.drags,
            })?,
        };
        Ok(DenoiserOutput { eps, taps })
    }
}

/// Stacks latents into `(B, h, w, c)`.
pub fn latents_to_tensor(latents: &[&Latent], dtype: DType) -> Result<Tensor> {
    let first = latents.first().ok_or_else(|| Error::Resolution("empty latent batch".into()))?;
    let mut data = Vec::with_capacity(latents.len() * first.data.len());
    for z in latents {
        if (z.height, z.width, z.channels) != (first.height, first.width, first.channels) {
            return Err(Error::Resolution("latent batch mixes shapes".into()));
        }
        data.extend_from_slice(&z.data);
    }
    Ok(Tensor::from_vec(data, (latents.len(), first.height, first.width, first.channels), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Splits `(B, h, w, c)` back into latents.
pub fn tensor_to_latents(t: &Tensor, image: GridSize) -> Result<Vec<Latent>> {
    let (b, h, w, c) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(flat
        .chunks_exact(h * w * c)
        .take(b)
        .map(|d| Latent { height: h, width: w, channels: c, data: d.to_vec(), image })
        .collect())
}

/// Stacks images (converted to the signed range) into `(B, H, W, C)`.
pub fn images_to_tensor(images: &[&ImageGrid], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Resolution("empty image batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data().len());
    for img in images {
        if !img.same_shape(first) {
            return Err(Error::Resolution("image batch mixes shapes".into()));
        }
        data.extend_from_slice(to_signed(img)?.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), first.height(), first.width(), first.channels()), &Device::Cpu)?
        .to_dtype(dtype)?)
}
