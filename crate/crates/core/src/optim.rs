//! Per-parameter adaptive step sizes.

use crate::policy::{Gradient, PolicyParams};

/// Adam-style optimizer. With `beta1 = 0` it keeps no first-moment
/// average and each step is `g / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moves `params` along `grad` (gradient ascent on the objective).
    pub fn ascend(&mut self, params: &mut PolicyParams, grad: &Gradient) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        let it = params
            .as_mut_slice()
            .iter_mut()
            .zip(&grad.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyShape, Tier};

    fn params() -> PolicyParams {
        PolicyParams::zeros(PolicyShape {
            tier: Tier::Tiny,
            vocab_size: 5,
            embed_dim: 2,
            n_queries: 1,
            max_query_len: 1,
        })
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut p = params();
        let n = p.as_slice().len();
        let mut g = Gradient(vec![0.0; n]);
        g.0[0] = 3.0;
        g.0[1] = -0.01;
        let mut opt = Adam::new(n, 0.1);
        opt.ascend(&mut p, &g);
        assert!((p.as_slice()[0] - 0.1).abs() < 1e-6);
        assert!((p.as_slice()[1] + 0.1).abs() < 1e-4);
        assert_eq!(p.as_slice()[2], 0.0);
    }

    #[test]
    fn zero_gradient_is_no_update() {
        let mut p = params();
        let before = p.clone();
        let n = p.as_slice().len();
        let mut opt = Adam::new(n, 0.1);
        opt.ascend(&mut p, &Gradient(vec![0.0; n]));
        assert_eq!(p, before);
    }
}
