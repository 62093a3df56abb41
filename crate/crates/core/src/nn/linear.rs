use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Param, Real};

/// Fully-connected layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("finite std");
        Linear {
            weight: Param::new((0..inputs * outputs).map(|_| T::of(normal.sample(rng))).collect()),
            bias: Param::new(vec![T::zero(); outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.inputs, "linear input length");
        let mut y = self.bias.value.clone();
        T::gemm(self.outputs, self.inputs, 1, &self.weight.value, false, x, false, T::one(), &mut y);
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T]) -> Vec<T> {
        for (g, &d) in self.bias.grad.iter_mut().zip(dy) {
            *g += d;
        }
        T::gemm(self.outputs, 1, self.inputs, dy, false, x, false, T::one(), &mut self.weight.grad);
        let mut dx = vec![T::zero(); self.inputs];
        T::gemm(self.inputs, self.outputs, 1, &self.weight.value, true, dy, false, T::zero(), &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_and_backward_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::<f64>::new(&mut rng, 3, 2);
        l.weight.value = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        l.bias.value = vec![0.5, -0.5];
        let x = [1.0, 0.0, -1.0];
        assert_eq!(l.forward(&x), vec![-1.5, -2.5]);
        let dx = l.backward(&x, &[1.0, 2.0]);
        assert_eq!(dx, vec![9.0, 12.0, 15.0]);
        assert_eq!(l.weight.grad, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(l.bias.grad, vec![1.0, 2.0]);
    }
}
