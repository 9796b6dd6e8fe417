use crate::autodiff::{Float, ParamGroup, ParamStore};
use crate::{Error, Result};

/// Adam with bias correction; first and second moments kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Float>(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update from the gradients held in `store`, with a learning rate
    /// per parameter group. Nothing is modified if any gradient is not
    /// finite.
    pub fn step<T: Float>(&mut self, store: &mut ParamStore<T>, lr: impl Fn(ParamGroup) -> f64) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::numerics(format!("non-finite gradient in {}", p.name)));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let rate = lr(p.group);
            let grad = &p.grad;
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64().expect("finite");
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                if update != 0.0 {
                    *w = T::from_f64(w.to_f64().expect("finite") - update).expect("representable");
                }
            }
        }
        Ok(())
    }
}
