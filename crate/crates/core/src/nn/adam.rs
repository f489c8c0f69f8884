//! Adam with bias correction. One elementwise update rule shared (generic
//! over scalar type) between the reference tensor op and the batched
//! training engine, so both paths take bit-identical steps.

use super::{shape_err, NnError, Tensor};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One Adam step on a parameter tensor.
pub fn adam_step(
    weights: &mut Tensor,
    grads: &Tensor,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<(), NnError> {
    if weights.shape() != grads.shape() {
        return Err(shape_err(
            "adam",
            format!("weights {:?} vs grads {:?}", weights.shape(), grads.shape()),
        ));
    }
    if weights.len() != state.m.len() {
        return Err(shape_err(
            "adam",
            format!("state holds {} moments for {} weights", state.m.len(), weights.len()),
        ));
    }
    state.t += 1;
    update_slice(
        weights.data_mut(),
        grads.data(),
        &mut state.m,
        &mut state.v,
        state.t,
        params,
    );
    Ok(())
}

/// The elementwise rule: m,v moving averages, bias-corrected step.
pub(crate) fn update_slice<R: Real>(
    w: &mut [R],
    g: &[R],
    m: &mut [R],
    v: &mut [R],
    t: u64,
    params: &AdamParams,
) {
    debug_assert!(t >= 1);
    let b1 = R::from_f64(params.beta1);
    let b2 = R::from_f64(params.beta2);
    let one_m_b1 = R::from_f64(1.0 - params.beta1);
    let one_m_b2 = R::from_f64(1.0 - params.beta2);
    let eps = R::from_f64(params.eps);
    // Correction factors are scalar per step; fold them into the rate.
    let corr1 = 1.0 - params.beta1.powi(t as i32);
    let corr2 = 1.0 - params.beta2.powi(t as i32);
    let step = R::from_f64(params.lr / corr1);
    let inv_sqrt_corr2 = R::from_f64(1.0 / corr2.sqrt());
    for i in 0..w.len() {
        let gi = g[i];
        m[i] = b1 * m[i] + one_m_b1 * gi;
        v[i] = b2 * v[i] + one_m_b2 * gi * gi;
        let denom = (v[i]).sqrt() * inv_sqrt_corr2 + eps;
        w[i] -= step * m[i] / denom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights_untouched() {
        let mut w = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(vec![3]);
        let mut st = AdamState::new(3);
        let before = w.clone();
        for _ in 0..5 {
            adam_step(&mut w, &g, &mut st, &AdamParams::default()).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(st.timestep(), 5);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // With m_hat = g and v_hat = g^2, the first update is
        // lr * g / (|g| + eps) which is lr * sign(g) for |g| >> eps.
        let params = AdamParams::default();
        let mut w = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
        let g = Tensor::new(vec![4], vec![3.0, -0.7, 120.0, -5e-3]).unwrap();
        let mut st = AdamState::new(4);
        adam_step(&mut w, &g, &mut st, &params).unwrap();
        for (wi, gi) in w.data().iter().zip(g.data()) {
            let expected = -params.lr * gi.signum();
            assert!(
                (wi - expected).abs() < params.lr * 1e-2,
                "update {wi} for grad {gi}"
            );
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let params = AdamParams::default();
        let run = || {
            let mut w = Tensor::new(vec![2], vec![0.4, -0.4]).unwrap();
            let mut st = AdamState::new(2);
            for i in 1..=50 {
                let g = Tensor::new(vec![2], vec![(i as f64).sin(), (i as f64).cos()]).unwrap();
                adam_step(&mut w, &g, &mut st, &params).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = Tensor::zeros(vec![3]);
        let g = Tensor::zeros(vec![4]);
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut w, &g, &mut st, &AdamParams::default()).is_err());
    }
}
