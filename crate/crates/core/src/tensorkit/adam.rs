use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Moment estimates and hyperparameters for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step_count: u64,
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    pub learning_rate: S,
    pub weight_decay: S,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments with beta1 0.9, beta2 0.999, epsilon 1e-8, learning
    /// rate 1e-4 and weight decay 5e-4.
    pub fn new(shape: &[usize]) -> Self {
        Self {
            step_count: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            epsilon: S::lit(1e-8),
            learning_rate: S::lit(1e-4),
            weight_decay: S::lit(5e-4),
        }
    }

    pub fn with_rates(mut self, learning_rate: S, weight_decay: S) -> Self {
        self.learning_rate = learning_rate;
        self.weight_decay = weight_decay;
        self
    }
}

/// One Adam update with bias correction and decoupled weight decay.
///
/// `name` identifies the parameter in error messages.
pub fn adam_step<S: Scalar>(
    param: &Tensor<S>,
    grad: &Tensor<S>,
    state: &AdamState<S>,
    name: &str,
) -> Result<(Tensor<S>, AdamState<S>)> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape() {
        return Err(Error::dim(
            "adam_step",
            format!("{name}: param {:?}, grad {:?}, moments {:?}", param.shape(), grad.shape(), state.m.shape()),
        ));
    }
    grad.check_finite(&format!("gradient of {name}"))?;

    let mut next = state.clone();
    next.step_count += 1;
    let t = next.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let lr = state.learning_rate;
    let decay = S::one() - lr * state.weight_decay;

    let mut out = param.clone();
    let (m, v) = (next.m.data_mut(), next.v.data_mut());
    for (((p, &g), m), v) in out.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *p = *p * decay;
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + state.epsilon);
    }
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn defaults() {
        let s = AdamState::<f64>::new(&[2]);
        assert_eq!((s.beta1, s.beta2, s.epsilon), (0.9, 0.999, 1e-8));
        assert_eq!((s.learning_rate, s.weight_decay), (1e-4, 5e-4));
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let p = rand_tensor(&[3, 2], 1);
        let mut s = AdamState::new(&[3, 2]).with_rates(1e-2, 0.0);
        let mut cur = p.clone();
        for _ in 0..5 {
            let (np, ns) = adam_step(&cur, &Tensor::zeros(&[3, 2]), &s, "w").unwrap();
            cur = np;
            s = ns;
        }
        assert_eq!(cur, p);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let p = Tensor::<f64>::from_f64(&[3], &[0.5, 0.5, 0.5]).unwrap();
        let g = Tensor::from_f64(&[3], &[2.0, -0.3, 1e-3]).unwrap();
        let mut s = AdamState::new(&[3]).with_rates(1e-3, 0.0);
        s.epsilon = 1e-14;
        let (np, _) = adam_step(&p, &g, &s, "w").unwrap();
        for (i, sign) in [1.0, -1.0, 1.0].iter().enumerate() {
            assert!((np.data()[i] - (0.5 - 1e-3 * sign)).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let p = Tensor::<f64>::full(&[1], 2.0);
        let s = AdamState::new(&[1]).with_rates(0.1, 0.5);
        let (np, ns) = adam_step(&p, &Tensor::zeros(&[1]), &s, "w").unwrap();
        assert!((np.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
        // decay never enters the moments
        assert_eq!(ns.m.data()[0], 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let p = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::new(&[2], vec![0.0, f32::INFINITY]).unwrap();
        let err = adam_step(&p, &g, &AdamState::new(&[2]), "head.0.weight").unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert!(err.to_string().contains("head.0.weight"));
    }
}
