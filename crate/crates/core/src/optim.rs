//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// First-moment buffers, one per tracked parameter.
    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }
}

/// One Adam update of `params` in place. Moment buffers are allocated on the
/// first call and must keep matching the parameter shapes afterwards.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Misaligned(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Misaligned(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if !(state.lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {} must be >= 0", state.lr)));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::Misaligned("moment buffers do not match parameters".into()));
    }

    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = v_hat = 1 after bias correction, so the update is lr / (1 + eps).
        let mut p = vec![Tensor::scalar(2.0)];
        let mut s = AdamState::new(0.1);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut s).unwrap();
        let expected = 2.0 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let mut p = vec![Tensor::new(vec![2, 2], vec![0.3, -0.0, 7.0, -1e-300]).unwrap()];
        let before: Vec<u64> = p[0].data().iter().map(|v| v.to_bits()).collect();
        let mut s = AdamState::new(0.0);
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::full(&[2, 2], 0.7)], &mut s).unwrap();
        }
        let after: Vec<u64> = p[0].data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn deterministic_repeats() {
        let run = || {
            let mut p = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
            let mut s = AdamState::new(0.01);
            for k in 0..2 {
                let g = Tensor::new(vec![2], vec![0.3 * k as f64, -1.1]).unwrap();
                adam_step(&mut p, &[g], &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn misaligned_shapes_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(0.1);
        assert!(matches!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut s), Err(Error::Misaligned(_))));
        assert!(matches!(adam_step(&mut p, &[], &mut s), Err(Error::Misaligned(_))));
    }
}
