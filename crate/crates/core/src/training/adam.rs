use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments, one state slot per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// Applies one update to each parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Vec<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "one gradient slot per parameter");
        self.t += 1;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let c1 = T::one() - b1.powi(self.t as i32);
        let c2 = T::one() - b2.powi(self.t as i32);
        let (lr, eps) = (T::lit(lr), T::lit(self.cfg.eps));
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> T {
    let norm = grads.iter().flatten().fold(T::zero(), |a, &g| a + g * g).sqrt();
    let max = T::lit(max_norm);
    if norm > max {
        let s = max / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
