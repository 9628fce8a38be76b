use crate::error::{dim_err, Result};
use crate::nn::ModelParams;

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return dim_err("gradient layout does not match the optimizer state");
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let theta = params.get_mut(crate::nn::ParamId(i));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                let gj = g[j] + self.weight_decay * theta[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                theta[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ModelParams::default();
        p.push("a".into(), vec![2], vec![1.0, -1.0]);
        let mut opt = Adam::new(&p, 0.0);
        opt.step(&mut p, &[vec![0.3, -5.0]], 0.1).unwrap();
        assert!((p.get(crate::nn::ParamId(0))[0] - 0.9).abs() < 1e-6);
        assert!((p.get(crate::nn::ParamId(0))[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ModelParams::default();
        p.push("a".into(), vec![1], vec![3.0]);
        let mut opt = Adam::new(&p, 0.0);
        for _ in 0..2000 {
            let g = 2.0 * (p.get(crate::nn::ParamId(0))[0] - 1.0);
            opt.step(&mut p, &[vec![g]], 0.01).unwrap();
        }
        assert!((p.get(crate::nn::ParamId(0))[0] - 1.0).abs() < 1e-3);
    }
}
