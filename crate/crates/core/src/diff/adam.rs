use super::tensor::{same_shape, Tensor};
use crate::error::Result;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. Entries with a `None` gradient are skipped
    /// and keep their moment estimates.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                same_shape("adam_step", g.shape(), p.shape())?;
            }
        }
        if self.m.len() != params.len() {
            self.m = vec![None; params.len()];
            self.v = vec![None; params.len()];
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; g.len()]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_fn(&[3], |i| i as f64)];
        let before = p.clone();
        Adam::new(0.1).step(&mut p, &[Some(Tensor::zeros(&[3]))]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = vec![Tensor::scalar(1.0)];
        Adam::new(0.01).step(&mut p, &[Some(Tensor::scalar(0.3))]).unwrap();
        let expected = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_reference() {
        let (lr, g1, g2) = (0.05, 0.4, -1.2);
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = Adam::new(lr);
        opt.step(&mut p, &[Some(Tensor::scalar(g1))]).unwrap();
        opt.step(&mut p, &[Some(Tensor::scalar(g2))]).unwrap();
        let mut w = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [(1, g1), (2, g2)] {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0].item() - w).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(Adam::new(0.1).step(&mut p, &[Some(Tensor::zeros(&[3]))]).is_err());
    }
}
