use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::{Error, Result};

/// Moment estimates for one parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Moments are kept in `f64` regardless of the parameter precision. A
/// non-finite gradient leaves both parameters and state untouched.
pub fn adam_step<T: Real>(name: &str, params: &mut Tensor<T>, grads: &Tensor<T>, state: &mut AdamState) -> Result<()> {
    if params.shape() != grads.shape() || state.first_moment.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{:?} ({} moments)", params.shape(), state.first_moment.len()),
            format!("{:?}", grads.shape()),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let g = g.to_f64().unwrap_or(f64::NAN);
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let update = state.learning_rate * (*m / c1) / ((*v / c2).sqrt() + state.epsilon);
        *p = T::lit(p.to_f64().unwrap_or(f64::NAN) - update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::from_vec(&[3], vec![0.5f32, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(3, 1e-4);
        adam_step("p", &mut p, &Tensor::zeros(&[3]), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 1e-4;
        let g = [3.0f64, -0.02, 1e-3];
        let mut p = Tensor::zeros(&[3]);
        let mut s = AdamState::new(3, lr);
        adam_step("p", &mut p, &Tensor::from_vec(&[3], g.to_vec()).unwrap(), &mut s).unwrap();
        for (pi, gi) in p.data().iter().zip(g) {
            let expected = -lr * gi.abs() / (gi.abs() + 1e-8) * gi.signum();
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn bias_correction_keeps_second_step_at_lr() {
        let lr = 1e-4;
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![0.7]).unwrap();
        let mut s = AdamState::new(1, lr);
        adam_step("p", &mut p, &g, &mut s).unwrap();
        let after_one = p.data()[0];
        adam_step("p", &mut p, &g, &mut s).unwrap();
        let second = after_one - p.data()[0];
        assert!((second - lr).abs() < 1e-10 * lr.max(1.0), "{second}");
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        let mut s = AdamState::new(2, 1e-3);
        let err = adam_step("dec.mean.w", &mut p, &g, &mut s).unwrap_err();
        assert!(err.to_string().contains("dec.mean.w"));
        assert_eq!(s.step, 0);
    }
}
