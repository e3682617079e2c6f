use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

/// One SGD step with classical momentum on every trainable parameter:
/// `v = momentum * v + grad; param -= lr * v`. Gradients are cleared.
///
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<()> {
    if let Some(bad) = store.iter().find(|p| p.trainable && !p.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
    }
    let lr = T::lit(lr);
    let mu = T::lit(momentum);
    for p in store.iter_mut().filter(|p| p.trainable) {
        let grads = p.grad.data();
        let vel = p.velocity.data_mut();
        for (v, g) in vel.iter_mut().zip(grads) {
            *v = mu * *v + *g;
        }
        for (w, v) in p.value.data_mut().iter_mut().zip(p.velocity.data()) {
            *w -= lr * *v;
        }
    }
    store.zero_grads();
    Ok(())
}

/// Momentum schedule: 0.45 up to epoch 10, linear ramp to 0.9 at epoch 20,
/// 0.9 afterwards. Epochs count from 1.
pub fn momentum_at_epoch(epoch: usize) -> f64 {
    const START: f64 = 0.45;
    const END: f64 = 0.9;
    match epoch {
        0..=10 => START,
        11..=19 => START + (END - START) * (epoch - 10) as f64 / 10.0,
        _ => END,
    }
}
