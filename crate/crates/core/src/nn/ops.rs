use super::tensor::{Real, Tensor};

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// SiLU (`x * sigmoid(x)`), returning the activated copy of `pre`.
pub fn silu<T: Real>(pre: &Tensor<T>) -> Tensor<T> {
    let data = pre.data.iter().map(|&x| x * sigmoid(x)).collect();
    Tensor::from_vec(pre.channels, pre.height, pre.width, data)
}

/// Multiplies `dy` in place by the SiLU derivative at `pre`.
pub fn silu_backward_inplace<T: Real>(pre: &Tensor<T>, dy: &mut Tensor<T>) {
    for (d, &x) in dy.data.iter_mut().zip(&pre.data) {
        let s = sigmoid(x);
        *d *= s * (T::one() + x * (T::one() - s));
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let s = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            for (xx, v) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                *v = s[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let src = dy.channel(c);
        let dst = dx.channel_mut(c);
        for y in 0..dy.height {
            for x in 0..dy.width {
                dst[(y / 2) * w + x / 2] += src[y * dy.width + x];
            }
        }
    }
    dx
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial size");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Inverse of [`concat_channels`]: the first `first` channels and the rest.
pub fn split_channels<T: Real>(x: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * x.plane();
    (
        Tensor::from_vec(first, x.height, x.width, x.data[..cut].to_vec()),
        Tensor::from_vec(x.channels - first, x.height, x.width, x.data[cut..].to_vec()),
    )
}
