use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Param, Real, Tensor};

/// 2-D convolution (square kernel) lowered to a matrix product via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

/// What `backward` needs from the matching `forward` call.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-normal weights (variance `2 / fan_in`) and zero bias.
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let weight = (0..out_channels * fan_in)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Conv2d {
            weight: Param::new(weight),
            bias: Param::new(vec![T::zero(); out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.padding - span) / self.stride + 1,
            (w + 2 * self.padding - span) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, d) = (self.kernel, self.stride, self.dilation);
        let p = self.padding as isize;
        let plane = oh * ow;
        let mut cols = vec![T::zero(); self.fan_in() * plane];
        for c in 0..x.channels {
            let src = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky * d) as isize - p;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.width..(iy as usize + 1) * x.width];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, out) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx * d) as isize - p;
                            if ix >= 0 && ix < x.width as isize {
                                *out = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], in_shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor<T> {
        let (k, s, d) = (self.kernel, self.stride, self.dilation);
        let p = self.padding as isize;
        let (c_in, h, w) = in_shape;
        let plane = oh * ow;
        let mut dx = Tensor::zeros(c_in, h, w);
        for c in 0..c_in {
            let dst = dx.channel_mut(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky * d) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s + kx * d) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_hw(x.height, x.width);
        let cols = self.im2col(x, oh, ow);
        let plane = oh * ow;
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for (c, &b) in self.bias.value.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v = b);
        }
        T::gemm(
            self.out_channels,
            self.fan_in(),
            plane,
            &self.weight.value,
            false,
            &cols,
            false,
            T::one(),
            &mut out.data,
        );
        let cache = ConvCache {
            cols,
            in_shape: x.shape(),
            out_hw: (oh, ow),
        };
        (out, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (oh, ow) = cache.out_hw;
        assert_eq!(dy.shape(), (self.out_channels, oh, ow), "conv output gradient shape");
        let plane = oh * ow;
        for c in 0..self.out_channels {
            let s: T = dy.channel(c).iter().copied().sum();
            self.bias.grad[c] += s;
        }
        T::gemm(
            self.out_channels,
            plane,
            self.fan_in(),
            &dy.data,
            false,
            &cache.cols,
            true,
            T::one(),
            &mut self.weight.grad,
        );
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); self.fan_in() * plane];
        T::gemm(
            self.fan_in(),
            self.out_channels,
            plane,
            &self.weight.value,
            true,
            &dy.data,
            false,
            T::zero(),
            &mut dcols,
        );
        Some(self.col2im(&dcols, cache.in_shape, oh, ow))
    }
}
