//! 2-D convolution lowered to a matrix product (im2col).

use ndarray::{Array2, IxDyn};
use rand::Rng;

use super::layers::{expect_rank, he_normal, no_cache, Layer, Param, ParamKind, Tensor};
use crate::{Error, Result};

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Array2<f32>, Vec<usize>)>,
}

impl Conv2d {
    /// Square kernel, He-normal weights (fan-out). Convolutions followed by
    /// normalisation are built without bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = he_normal(&shape, out_channels * kernel * kernel, rng);
        Self {
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, w),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(IxDyn(&[out_channels])))),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::Shape {
                expected: format!("conv: spatial size >= {}", self.kernel),
                actual: format!("{h}x{w}"),
            });
        }
        Ok(((h + 2 * self.pad - self.kernel) / self.stride + 1, (w + 2 * self.pad - self.kernel) / self.stride + 1))
    }

    fn im2col(&self, src: &[f32], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Array2<f32> {
        let (c, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad as isize);
        let cols_n = n * ho * wo;
        let mut cols = vec![0.0f32; c * k * k * cols_n];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let plane = &src[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p;
                            let dst = &mut dst_row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    *d = line[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((c * k * k, cols_n), cols).expect("shape")
    }

    fn col2im(&self, cols: &Array2<f32>, n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f32> {
        let (c, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad as isize);
        let cols_n = n * ho * wo;
        let cs = cols.as_slice().expect("standard layout");
        let mut dx = vec![0.0f32; n * c * h * w];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src_row = &cs[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let plane = &mut dx[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &src_row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, v) in src.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    line[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        expect_rank(x, 4, "conv")?;
        let s = x.shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if c != self.in_channels {
            return Err(Error::Shape { expected: format!("conv: {} channels", self.in_channels), actual: format!("{s:?}") });
        }
        let (ho, wo) = self.out_size(h, w)?;
        let data = x.as_standard_layout();
        let cols = self.im2col(data.as_slice().expect("standard layout"), n, h, w, ho, wo);
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, c * self.kernel * self.kernel))
            .expect("weight shape");
        let prod = wmat.dot(&cols);
        let ps = prod.as_slice().expect("standard layout");
        let o = self.out_channels;
        let plane = ho * wo;
        let mut out = vec![0.0f32; n * o * plane];
        let bias = self.bias.as_ref().map(|b| b.value.as_slice().expect("contiguous").to_vec());
        for oc in 0..o {
            let bv = bias.as_ref().map_or(0.0, |b| b[oc]);
            let row = &ps[oc * n * plane..(oc + 1) * n * plane];
            for b in 0..n {
                let dst = &mut out[(b * o + oc) * plane..(b * o + oc + 1) * plane];
                for (d, v) in dst.iter_mut().zip(&row[b * plane..(b + 1) * plane]) {
                    *d = v + bv;
                }
            }
        }
        if train {
            self.cache = Some((cols, s));
        }
        Ok(Tensor::from_shape_vec(IxDyn(&[n, o, ho, wo]), out).expect("shape"))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (cols, s) = self.cache.as_ref().ok_or_else(|| no_cache("conv"))?;
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = self.out_size(h, w)?;
        let o = self.out_channels;
        let plane = ho * wo;
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        // N × O × P  →  O × (N·P)
        let mut g2 = vec![0.0f32; gs.len()];
        for b in 0..n {
            for oc in 0..o {
                g2[oc * n * plane + b * plane..oc * n * plane + (b + 1) * plane]
                    .copy_from_slice(&gs[(b * o + oc) * plane..(b * o + oc + 1) * plane]);
            }
        }
        let g2 = Array2::from_shape_vec((o, n * plane), g2).expect("shape");
        let dw = g2.dot(&cols.t());
        let ckk = c * self.kernel * self.kernel;
        {
            let mut wg = self.weight.grad.view_mut().into_shape_with_order((o, ckk)).expect("shape");
            wg += &dw;
        }
        if let Some(b) = &mut self.bias {
            let bg = b.grad.as_slice_mut().expect("contiguous");
            for oc in 0..o {
                bg[oc] += g2.row(oc).sum();
            }
        }
        let wmat = self.weight.value.view().into_shape_with_order((o, ckk)).expect("shape");
        let dcols = wmat.t().dot(&g2);
        let dcols = dcols.as_standard_layout().into_owned();
        let dx = self.col2im(&dcols, n, h, w, ho, wo);
        Ok(Tensor::from_shape_vec(IxDyn(s), dx).expect("shape"))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
