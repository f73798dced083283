use lim_core::params::ParamKind;
use lim_core::{ParamId, ParamStore, Real, Tensor4};

use crate::config::TrainConfig;
use crate::error::Result;

/// One momentum step on a single tensor:
/// `v = momentum * v + g + weight_decay * p`, then `p -= lr * v`.
pub fn sgd_update<T: Real>(param: &mut Tensor4<T>, velocity: &mut Tensor4<T>, grad: &Tensor4<T>, tc: &TrainConfig) -> Result<()> {
    param.expect_shape(grad, "sgd_update")?;
    param.expect_shape(velocity, "sgd_update")?;
    let (lr, mu, wd) = (T::of(tc.learning_rate), T::of(tc.momentum), T::of(tc.weight_decay));
    for ((p, v), &g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = mu * *v + g + wd * *p;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Velocity buffers for every learnable entry of a store.
#[derive(Clone, Debug)]
pub struct Sgd<T: Real> {
    pub config: TrainConfig,
    velocity: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(store: &ParamStore<T>, config: TrainConfig) -> Self {
        let velocity = store
            .entries()
            .iter()
            .map(|e| (e.kind == ParamKind::Learnable).then(|| Tensor4::zeros(e.value.shape())))
            .collect();
        Self { config, velocity }
    }

    /// Applies one step. Learnable entries without a gradient are treated as
    /// having a zero gradient (weight decay and momentum still act).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut dyn FnMut(ParamId) -> Option<Tensor4<T>>) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(v) = self.velocity[id.index()].as_mut() else { continue };
            let g = grads(id).unwrap_or_else(|| Tensor4::zeros(v.shape()));
            sgd_update(store.get_mut(id), v, &g, &self.config)?;
        }
        Ok(())
    }
}
