//! Channels-last 3×3 convolution as im2col + one GEMM.
//!
//! Activations are `(batch, height, width, channels)`. Patch extraction and
//! its adjoint are custom ops so the backward pass is a single scatter.

use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor, WithDType};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn cols(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Calls `f(input_offset, column_offset)` for every in-bounds tap, once per channel run.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let c = self.channels;
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * self.cols();
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = ((b * self.height + iy as usize) * self.width + ix as usize) * c;
                            f(src, row + (ky * self.kernel + kx) * c);
                        }
                    }
                }
            }
        }
    }
}

fn contiguous<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("conv op expects a contiguous input"),
    }
}

struct Im2Col(Geometry);
struct Col2Im(Geometry);

fn im2col_typed<T: WithDType>(g: &Geometry, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_h() * g.out_w() * g.cols()];
    let c = g.channels;
    g.for_each_tap(|src, dst| out[dst..dst + c].copy_from_slice(&x[src..src + c]));
    out
}

fn col2im_typed<T: WithDType>(g: &Geometry, cols: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.height * g.width * g.channels];
    let c = g.channels;
    g.for_each_tap(|dst, src| {
        for (o, v) in out[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
            *o += *v;
        }
    });
    out
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.batch * g.out_h() * g.out_w(), g.cols()));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(im2col_typed(g, contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(im2col_typed(g, contiguous(d, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.batch, g.height, g.width, g.channels));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(col2im_typed(g, contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(col2im_typed(g, contiguous(d, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        };
        Ok((out, shape))
    }
}

/// Extracts `kernel × kernel` patches: `(B, H, W, C) -> (B·H'·W', k·k·C)`,
/// column order `(ky, kx, c)`.
pub fn im2col(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (batch, height, width, channels) = x.dims4()?;
    if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
        candle_core::bail!("im2col: kernel {kernel} does not fit {height}x{width} with pad {pad}");
    }
    let g = Geometry { batch, height, width, channels, kernel, stride, pad };
    x.contiguous()?.apply_op1(Im2Col(g))
}

/// Output spatial size of a padded strided convolution.
pub fn out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// `x: (B, H, W, C)`, `weight: (k·k·C, O)`, `bias: (O)`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b, h, w, _) = x.dims4()?;
    let o = weight.dim(1)?;
    let (oh, ow) = (out_size(h, kernel, stride, pad), out_size(w, kernel, stride, pad));
    let cols = if kernel == 1 && stride == 1 && pad == 0 {
        x.reshape((b * h * w, ()))?
    } else {
        im2col(x, kernel, stride, pad)?
    };
    let mut y = cols.matmul(weight)?;
    if let Some(bias) = bias {
        y = y.broadcast_add(bias)?;
    }
    y.reshape((b, oh, ow, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn direct(x: &[f64], (b, h, w, c): (usize, usize, usize, usize), wt: &[f64], o: usize, stride: usize) -> Vec<f64> {
        let (oh, ow) = (out_size(h, 3, stride, 1), out_size(w, 3, stride, 1));
        let mut out = vec![0.0; b * oh * ow * o];
        for n in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..o {
                        let mut s = 0.0;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ic in 0..c {
                                    let xv = x[((n * h + iy as usize) * w + ix as usize) * c + ic];
                                    s += xv * wt[((ky * 3 + kx) * c + ic) * o + oc];
                                }
                            }
                        }
                        out[((n * oh + oy) * ow + ox) * o + oc] = s;
                    }
                }
            }
        }
        out
    }

    fn values(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * 0.731 + seed).sin() * 1000.0).fract()).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        for stride in [1, 2] {
            let dims = (2, 5, 6, 3);
            let x = values(2 * 5 * 6 * 3, 0.3);
            let wt = values(27 * 4, 1.7);
            let xt = Tensor::from_vec(x.clone(), dims, &Device::Cpu).unwrap();
            let wtt = Tensor::from_vec(wt.clone(), (27, 4), &Device::Cpu).unwrap();
            let y: Vec<f64> = conv2d(&xt, &wtt, None, 3, stride, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = direct(&x, dims, &wt, 4, stride);
            assert_eq!(y.len(), want.len());
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = Var::from_tensor(&Tensor::from_vec(values(2 * 4 * 5 * 3, 0.1), (2, 4, 5, 3), &Device::Cpu).unwrap()).unwrap();
        let cols = im2col(x.as_tensor(), 3, 2, 1).unwrap();
        let c = Tensor::from_vec(values(cols.elem_count(), 2.2), cols.shape(), &Device::Cpu).unwrap();
        let lhs = (&cols * &c).unwrap().sum_all().unwrap();
        let grads = lhs.backward().unwrap();
        let gx = grads.get(x.as_tensor()).unwrap();
        let rhs = (x.as_tensor() * gx).unwrap().sum_all().unwrap();
        let (l, r): (f64, f64) = (lhs.to_scalar().unwrap(), rhs.to_scalar().unwrap());
        assert!((l - r).abs() < 1e-10 * l.abs().max(1.0));
    }

    #[test]
    fn rejects_other_dtypes() {
        let x = Tensor::zeros((1, 3, 3, 1), DType::U8, &Device::Cpu).unwrap();
        assert!(im2col(&x, 3, 1, 1).is_err());
    }
}
