use crate::tensor::{ParamStore, Tensor};

use super::TrainError;

/// SGD with heavy-ball momentum and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    /// Largest allowed global gradient norm; `None` disables clipping.
    pub clip: Option<f64>,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64, clip: Option<f64>) -> Self {
        let velocity = store.ids().map(|id| {
            let [r, c] = store.get(id).shape();
            Tensor::zeros(r, c)
        });
        Self { lr, momentum, clip, velocity: velocity.collect() }
    }

    /// `v ← μ·v + g`, `θ ← θ − lr·v`, after scaling `g` down to the clip norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<(), TrainError> {
        if grads.len() != self.velocity.len() {
            return Err(TrainError::Config(format!(
                "got {} gradients for {} parameters",
                grads.len(),
                self.velocity.len()
            )));
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(TrainError::NonFinite("gradient".into()));
        }
        let scale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for ((id, g), v) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).zip(&mut self.velocity) {
            if g.shape() != v.shape() {
                return Err(TrainError::Config(format!(
                    "gradient shape {:?} does not match {:?}",
                    g.shape(),
                    v.shape()
                )));
            }
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + scale * gi;
            }
            for (p, vi) in store.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p -= self.lr * vi;
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Element-wise mean of per-example gradient lists, summed in order.
pub fn mean_grads(per_example: Vec<Vec<Tensor>>) -> Option<Vec<Tensor>> {
    let n = per_example.len();
    let mut it = per_example.into_iter();
    let mut acc = it.next()?;
    for grads in it {
        for (a, g) in acc.iter_mut().zip(grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    let inv = 1.0 / n as f64;
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    Some(acc)
}
