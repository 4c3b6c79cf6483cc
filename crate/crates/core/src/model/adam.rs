//! Adam with bias correction. Moment buffers live in the parameter scalar
//! type, so an f32 training run is f32 end to end and bit-reproducible.

use crate::substrate::{ParamSet, Scalar, Tensor};

pub struct Adam<T: Scalar> {
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> Adam<T> {
    /// Moment buffers start at zero, one pair per parameter, in set order.
    pub fn new(params: &ParamSet<T>) -> Self {
        Adam {
            first: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update from the gradients currently stored in `params`. The
    /// bias-correction factors are computed in f64 (they are scalar per
    /// step), everything elementwise runs in `T`.
    pub fn step(&mut self, params: &mut ParamSet<T>, lr: f64) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "optimizer was built for a different parameter set"
        );
        self.steps += 1;
        let t = self.steps as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let eps = T::from_f64(self.eps);
        let correct1 = T::from_f64(lr / (1.0 - self.beta1.powi(t)));
        let correct2 = T::from_f64(1.0 - self.beta2.powi(t));

        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = p.grad.data();
            let x = p.value.data_mut();
            for j in 0..x.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let denom = (v[j] / correct2).sqrt() + eps;
                x[j] = x[j] - correct1 * m[j] / denom;
            }
        }
    }
}
