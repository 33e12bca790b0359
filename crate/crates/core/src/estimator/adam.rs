use super::{EstimatorError, ParamSet, Result, TrainConfig};
use crate::Scalar;

/// One bias-corrected Adam update. A non-finite gradient leaves the
/// parameters untouched and returns [`EstimatorError::PoisonedUpdate`].
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &[T], cfg: &TrainConfig) -> Result<()> {
    params.check_congruent()?;
    if grads.len() != params.len() {
        return Err(EstimatorError::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(EstimatorError::PoisonedUpdate { index });
    }
    params.step += 1;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    let t = params.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let ParamSet { values, m, v, .. } = params;
    for (((theta, m), v), &g) in values.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
