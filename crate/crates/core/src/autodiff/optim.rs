//! Adam optimizer and the combined L1 + L2 kernel penalty.

use crate::autodiff::params::ParameterSet;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    first: ParameterSet<T>,
    second: ParameterSet<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        AdamState { step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut AdamState<T>,
    hyper: &AdamConfig,
) -> Result<()> {
    if !params.same_structure(grads) || !params.same_structure(&state.first) {
        bail!(Shape, "parameter, gradient and optimizer state layouts differ");
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let lr = hyper.learning_rate;
    let eps = hyper.epsilon;

    let layers = params.iter_mut().zip(grads.iter()).zip(state.first.iter_mut().zip(state.second.iter_mut()));
    for (((_, p), (_, g)), ((_, m), (_, v))) in layers {
        let pairs = [
            (&mut p.weights, &g.weights, &mut m.weights, &mut v.weights),
            (&mut p.biases, &g.biases, &mut m.biases, &mut v.biases),
        ];
        for (w, dw, mw, vw) in pairs {
            let iter =
                w.data_mut().iter_mut().zip(dw.data()).zip(mw.data_mut().iter_mut().zip(vw.data_mut().iter_mut()));
            for ((wi, &gi), (mi, vi)) in iter {
                let gi = gi.to_f64_lossy();
                let m_new = b1 * mi.to_f64_lossy() + (1.0 - b1) * gi;
                let v_new = b2 * vi.to_f64_lossy() + (1.0 - b2) * gi * gi;
                *mi = T::from_f64_lossy(m_new);
                *vi = T::from_f64_lossy(v_new);
                let update = lr * (m_new / correct1) / ((v_new / correct2).sqrt() + eps);
                *wi = T::from_f64_lossy(wi.to_f64_lossy() - update);
            }
        }
    }
    Ok(())
}

/// `l1 * sum|w| + l2 * sum w^2` over kernel weights; biases are excluded.
pub fn regularizer_penalty<T: Scalar>(params: &ParameterSet<T>, l1: f64, l2: f64) -> Result<f64> {
    if l1 < 0.0 || l2 < 0.0 || !l1.is_finite() || !l2.is_finite() {
        bail!(Argument, "regularizer weights must be >= 0, got l1={} l2={}", l1, l2);
    }
    let mut total = 0.0;
    for (_, layer) in params.iter() {
        for &w in layer.weights.data() {
            let w = w.to_f64_lossy();
            total += l1 * w.abs() + l2 * w * w;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::full(vec![1], value), Tensor::zeros(vec![0]));
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single(3.0);
        let g = single(0.0);
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.tensor("w", crate::Slot::Weight).unwrap().data()[0], 3.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = single(0.0);
        let g = single(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::with_learning_rate(0.1)).unwrap();
        let w = p.tensor("w", crate::Slot::Weight).unwrap().data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-12, "w = {w}");
    }

    #[test]
    fn minimises_quadratic_bowl() {
        let mut p = single(5.0);
        let mut s = AdamState::new(&p);
        let hyper = AdamConfig::with_learning_rate(0.1);
        for _ in 0..200 {
            let w = p.tensor("w", crate::Slot::Weight).unwrap().data()[0];
            adam_step(&mut p, &single(2.0 * w), &mut s, &hyper).unwrap();
        }
        let w = p.tensor("w", crate::Slot::Weight).unwrap().data()[0];
        assert!(w.abs() < 0.1, "w = {w}");
    }

    #[test]
    fn mismatched_layout_is_a_shape_error() {
        let mut p = single(1.0);
        let mut g = ParameterSet::new();
        g.insert("w", Tensor::full(vec![2], 1.0), Tensor::zeros(vec![0]));
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut s, &AdamConfig::default()), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn penalty_values() {
        assert_eq!(regularizer_penalty(&single(0.0), 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(regularizer_penalty(&single(-2.0), 1.0, 0.5).unwrap(), 4.0);
        let mut p = single(1.0);
        p.get_mut("w").unwrap().biases = Tensor::full(vec![3], 100.0);
        assert_eq!(regularizer_penalty(&p, 1.0, 0.0).unwrap(), 1.0);
        assert!(regularizer_penalty(&p, -1.0, 0.0).is_err());
    }
}
