//! Turning drag sets into per-block network inputs.

use candle_core::{DType, Device, Tensor};
use dragpart_core::{encode_drags, DragSet, GridSize};

use crate::config::{DenoiserConfig, DragConditioning};
use crate::error::{Error, Result};

/// Standard deviation, in cells, of the flow baseline blur.
pub const FLOW_BLUR_SIGMA: f64 = 2.0;

/// Two-channel blurred sparse flow, channels-last `h x w x 2`.
///
/// Each source cell `⌊u·h/H⌋` holds the displacement `v - u` in latent
/// units; later slots overwrite earlier ones in the same cell. Each sparse
/// value is then spread with a Gaussian truncated to the grid and
/// renormalized, so total displacement mass is preserved.
pub fn baseline_flow_encoding(drags: &DragSet, latent: GridSize, image: GridSize) -> Result<Vec<f32>> {
    if latent.cells() == 0 || image.cells() == 0 {
        return Err(Error::Resolution("flow encoding needs non-empty grids".into()));
    }
    let (sh, sw) = (latent.h as f64 / image.h as f64, latent.w as f64 / image.w as f64);
    let mut sparse = vec![[0f64; 2]; latent.cells()];
    for d in drags.drags() {
        d.validate(image)?;
        let r = ((d.source.h * sh).floor() as usize).min(latent.h - 1);
        let c = ((d.source.w * sw).floor() as usize).min(latent.w - 1);
        sparse[r * latent.w + c] = [(d.termination.h - d.source.h) * sh, (d.termination.w - d.source.w) * sw];
    }
    let mut out = vec![0f64; latent.cells() * 2];
    for (i, flow) in sparse.iter().enumerate() {
        if flow == &[0.0, 0.0] {
            continue;
        }
        let (r0, c0) = ((i / latent.w) as f64, (i % latent.w) as f64);
        let weight = |j: usize| {
            let (r, c) = ((j / latent.w) as f64, (j % latent.w) as f64);
            (-((r - r0).powi(2) + (c - c0).powi(2)) / (2.0 * FLOW_BLUR_SIGMA * FLOW_BLUR_SIGMA)).exp()
        };
        let total: f64 = (0..latent.cells()).map(weight).sum();
        for j in 0..latent.cells() {
            let w = weight(j) / total;
            out[2 * j] += w * flow[0];
            out[2 * j + 1] += w * flow[1];
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// Drag encoding transposed to channels-last `h x w x 4N`.
pub fn encoding_channels_last(drags: &DragSet, latent: GridSize, image: GridSize) -> Result<Vec<f32>> {
    let enc = encode_drags(drags, latent, image)?;
    let (cells, channels) = (latent.cells(), enc.channels());
    let data = enc.data();
    let mut out = vec![0f32; cells * channels];
    for ch in 0..channels {
        for p in 0..cells {
            out[p * channels + ch] = data[ch * cells + p] as f32;
        }
    }
    Ok(out)
}

/// Per-block drag tensors `(B, h_l, w_l, channels)` for a batch of drag sets.
pub fn prepare_drags(config: &DenoiserConfig, batch: &[DragSet], dtype: DType) -> Result<Vec<Tensor>> {
    for set in batch {
        if set.len() > config.drag_capacity {
            return Err(dragpart_core::Error::Capacity { len: set.len(), capacity: config.drag_capacity }.into());
        }
    }
    let resized: Vec<DragSet> =
        batch.iter().map(|s| s.with_capacity(config.drag_capacity)).collect::<dragpart_core::Result<_>>()?;
    let resolutions = match config.conditioning {
        DragConditioning::ConvInputOnly => vec![config.latent_size()],
        _ => config.block_resolutions(),
    };
    let mut cache: Vec<(GridSize, Tensor)> = Vec::new();
    let mut out = Vec::with_capacity(resolutions.len());
    for res in resolutions {
        if let Some((_, t)) = cache.iter().find(|(r, _)| *r == res) {
            out.push(t.clone());
            continue;
        }
        let mut data = Vec::new();
        for set in &resized {
            data.extend(match config.conditioning {
                DragConditioning::MultiResEveryBlock => encoding_channels_last(set, res, config.image)?,
                _ => baseline_flow_encoding(set, res, config.image)?,
            });
        }
        let t = Tensor::from_vec(data, (batch.len(), res.h, res.w, config.drag_channels()), &Device::Cpu)?.to_dtype(dtype)?;
        cache.push((res, t.clone()));
        out.push(t);
    }
    Ok(out)
}
