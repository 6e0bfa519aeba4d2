use super::OptimizerConfig;
use crate::autograd::Real;
use crate::models::ParameterStore;

/// Adam with bias correction; moments are kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    config: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(lr: f64, config: OptimizerConfig, params: &ParameterStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<F: Real>(&mut self, params: &mut ParameterStore<F>, grads: &[Vec<F>]) {
        self.t += 1;
        let OptimizerConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                *w = F::lit(w.as_f64() - update);
            }
        }
    }
}
