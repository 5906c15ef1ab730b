use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::param::ParamStore;

/// SGD with heavy-ball momentum:
/// `v <- momentum*v + grad; p <- p - lr*v`, then gradients are cleared.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::invalid("sgd", format!("momentum {momentum} outside [0, 1)")));
        }
        if !(learning_rate >= 0.0) {
            return Err(TensorError::invalid("sgd", format!("learning rate {learning_rate}")));
        }
        Ok(Sgd { learning_rate, momentum, velocity: Vec::new() })
    }

    pub fn velocity(&self, index: usize) -> Option<&[T]> {
        self.velocity.get(index).map(Vec::as_slice)
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(id) = store.ids().find(|&id| store.get(id).grad().is_none()) {
            return Err(TensorError::MissingGrad(store.name(id).to_string()));
        }
        if self.velocity.len() != store.len() {
            self.velocity = store.ids().map(|id| vec![T::zero(); store.get(id).len()]).collect();
        }
        let (lr, mu) = (T::c(self.learning_rate), T::c(self.momentum));
        for id in store.ids() {
            let v = &mut self.velocity[id.index()];
            let p = store.get_mut(id);
            let g = p.grad().expect("checked above").to_vec();
            if v.len() != g.len() {
                return Err(TensorError::invalid("sgd", "velocity buffer shape differs from parameter"));
            }
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = mu * *vi + *gi;
            }
            for (pi, vi) in p.data_mut().iter_mut().zip(v.iter()) {
                *pi -= lr * *vi;
            }
            p.clear_grad();
        }
        Ok(())
    }
}

/// Learning rate decayed geometrically from `start` to `end` over `total`
/// steps.
pub fn log_space_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let t = step.min(total - 1) as f64 / (total - 1) as f64;
    (start.ln() + t * (end.ln() - start.ln())).exp()
}
