use super::{Array, ParamStore};
use crate::error::{Error, Result};

/// Elementwise gradient clamp; `clip <= 0` disables it.
fn clamp(g: f64, clip: f64) -> f64 {
    if clip > 0.0 {
        g.clamp(-clip, clip)
    } else {
        g
    }
}

fn check_finite(store: &ParamStore) -> Result<()> {
    for p in store.iter().filter(|p| p.trainable) {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter `{}` is not finite",
                p.name
            )));
        }
    }
    Ok(())
}

/// Applies accumulated gradients and resets them to zero.
pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore) -> Result<()>;
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// `p <- p - lr * clamp(g)`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub clip: f64,
}

impl Sgd {
    pub fn new(lr: f64, clip: f64) -> Self {
        Self { lr, clip }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_finite(store)?;
        for p in store.iter_mut() {
            if p.trainable {
                for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *v -= self.lr * clamp(*g, self.clip);
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias correction, applied to clamped gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(Array, Array)>,
}

impl Adam {
    pub fn new(lr: f64, clip: f64) -> Self {
        Self {
            lr,
            clip,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_finite(store)?;
        if self.moments.len() != store.len() {
            self.moments = store
                .iter()
                .map(|p| (Array::zeros(p.value.shape()), Array::zeros(p.value.shape())))
                .collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, (m, v)) in store.iter_mut().zip(&mut self.moments) {
            if p.trainable {
                let values = p.value.data_mut();
                for (i, g) in p.grad.data().iter().enumerate() {
                    let g = clamp(*g, self.clip);
                    let mi = &mut m.data_mut()[i];
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                    let mhat = *mi / bc1;
                    let vi = &mut v.data_mut()[i];
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                    let vhat = *vi / bc2;
                    values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}
