use super::tensor::{Real, Tensor};
use super::NumericsError;

/// Learning rate used for the dual encoder unless overridden.
pub const DEFAULT_LEARNING_RATE: f64 = 0.0002;

/// Adam optimizer state: one pair of moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`, with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new<'p>(params: impl IntoIterator<Item = &'p Tensor<T>>, learning_rate: f64) -> Self {
        let first_moment: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
    ) -> Result<(), NumericsError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NumericsError::ShapeMismatch(format!(
                "adam over {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            p.same_shape(g)?;
            p.same_shape(m)?;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![0.3f32, -1.2, 4.0]);
        let before = p.clone();
        let mut state = AdamState::new([&p], DEFAULT_LEARNING_RATE);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut p = Tensor::scalar(1.0f64);
        let mut state = AdamState::new([&p], DEFAULT_LEARNING_RATE);
        state.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expected = 1.0 - DEFAULT_LEARNING_RATE * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![1.0f32, 2.0]);
        let mut state = AdamState::new([&p], 0.1);
        let err = state.step(&mut [&mut p], &[Tensor::zeros(&[3])]);
        assert!(matches!(err, Err(NumericsError::ShapeMismatch(_))));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut grads = vec![
            Tensor::vector(vec![3.0f32, 4.0]),
            Tensor::vector(vec![12.0f32]),
        ];
        let norm = clip_global_norm(&mut grads, 5.0);
        assert!((norm - 13.0).abs() < 1e-9);
        let after: f64 = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-5);
    }
}
