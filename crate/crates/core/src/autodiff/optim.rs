use super::Tensor;
use crate::error::{Error, Result};

/// RMSprop running mean squares, one accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub mean_square: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub const DEFAULT_LR: f64 = 1e-3;
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(params: &[Tensor<f32>]) -> Self {
        Self::with_lr(params, Self::DEFAULT_LR)
    }

    pub fn with_lr(params: &[Tensor<f32>], lr: f64) -> Self {
        OptimizerState {
            lr,
            decay: Self::DEFAULT_DECAY,
            eps: Self::DEFAULT_EPS,
            mean_square: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// `v ← ρ v + (1 − ρ) g²`, `p ← p − lr · g / (√v + ε)`.
pub fn rmsprop_step(
    params: &mut [Tensor<f32>],
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.mean_square.len() {
        return Err(Error::validation(format!(
            "{} parameters, {} gradients, {} accumulators",
            params.len(),
            grads.len(),
            state.mean_square.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.mean_square) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::validation(format!(
                "parameter of {} values, gradient of {}",
                p.len(),
                g.len()
            )));
        }
    }
    let (rho, lr, eps) = (state.decay, state.lr, state.eps);
    for ((p, g), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.mean_square.iter_mut())
    {
        for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            let gi = gi as f64;
            let vn = rho * *vi as f64 + (1.0 - rho) * gi * gi;
            *vi = vn as f32;
            *w = (*w as f64 - lr * gi / (vn.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f32]) -> Vec<Tensor<f32>> {
        vec![Tensor::new(vec![values.len()], values.to_vec()).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[0.3, -1.2]);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        for _ in 0..5 {
            rmsprop_step(&mut p, &[vec![0.0, 0.0]], &mut s).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut p = param(&[0.0]);
        let mut s = OptimizerState::new(&p);
        let g = 0.37f32;
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p[0].data[0];
            rmsprop_step(&mut p, &[vec![g]], &mut s).unwrap();
            last = (before - p[0].data[0]) as f64;
        }
        let bound = 1e-3 * g as f64 / (g as f64 + 1e-8);
        assert!((last - bound).abs() < 1e-6, "{last} vs {bound}");
        assert!(s.mean_square[0][0] >= 0.0);
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        // f(x, y) = x² + 10 y²
        let mut p = param(&[1.0, -0.5]);
        let mut s = OptimizerState::with_lr(&p, 1e-2);
        let loss = |p: &Tensor<f32>| {
            let (x, y) = (p.data[0] as f64, p.data[1] as f64);
            x * x + 10.0 * y * y
        };
        let mut prev = loss(&p[0]);
        for _ in 0..100 {
            let (x, y) = (p[0].data[0], p[0].data[1]);
            rmsprop_step(&mut p, &[vec![2.0 * x, 20.0 * y]], &mut s).unwrap();
            let now = loss(&p[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn mismatched_shapes_fail() {
        let mut p = param(&[1.0, 2.0]);
        let mut s = OptimizerState::new(&p);
        assert!(rmsprop_step(&mut p, &[vec![1.0]], &mut s).is_err());
    }
}
