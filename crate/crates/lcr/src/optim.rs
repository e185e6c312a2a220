//! SGD and Adam parameter updates with a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Method {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

/// Optimizer state: hyperparameters, schedule, step counter, and
/// per-parameter auxiliary buffers (momentum, or first/second moments).
#[derive(Debug)]
pub struct Optimizer {
    method: Method,
    lr0: f32,
    lr: f32,
    step_size: usize,
    gamma: f32,
    steps: u64,
    moment1: Vec<Vec<f32>>,
    moment2: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn sgd(lr: f32, momentum: f32) -> Self {
        Self::new(Method::Sgd { momentum }, lr)
    }

    pub fn adam(lr: f32) -> Self {
        Self::new(
            Method::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
        )
    }

    fn new(method: Method, lr: f32) -> Self {
        Optimizer {
            method,
            lr0: lr,
            lr,
            step_size: usize::MAX,
            gamma: 1.0,
            steps: 0,
            moment1: Vec::new(),
            moment2: Vec::new(),
        }
    }

    /// Attaches a step schedule: the rate is multiplied by `gamma` once per
    /// `step_size` epochs.
    pub fn with_step_schedule(mut self, step_size: usize, gamma: f32) -> Self {
        self.step_size = step_size.max(1);
        self.gamma = gamma;
        self
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    /// Sets the rate for the given epoch: lr0 * gamma^(epoch / step_size).
    pub fn step_lr(&mut self, epoch: usize) {
        let k = (epoch / self.step_size) as i32;
        self.lr = self.lr0 * self.gamma.powi(k);
    }

    /// Applies one update. `grads[i]` must hold d(loss)/d(params[i]).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::State(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.len() != p.numel() {
                return Err(Error::State(format!(
                    "gradient {i} has {} entries, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
        }
        if self.moment1.is_empty() {
            self.moment1 = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            if matches!(self.method, Method::Adam { .. }) {
                self.moment2 = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            }
        }
        self.steps += 1;
        match self.method {
            Method::Sgd { momentum } => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let buf = &mut self.moment1[i];
                    for ((value, grad), vel) in p.data_mut().iter_mut().zip(g).zip(buf) {
                        *vel = momentum * *vel + grad;
                        *value -= self.lr * *vel;
                    }
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.moment1[i];
                    let v = &mut self.moment2[i];
                    for (((value, grad), m), v) in
                        p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * grad;
                        *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *value -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
