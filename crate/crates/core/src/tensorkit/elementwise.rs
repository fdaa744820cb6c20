//! ReLU, global average pooling and row-wise L2 normalization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Passes upstream gradient where `input > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::dim("relu_backward", format!("{:?} vs {:?}", input.shape(), grad_out.shape())));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Mean over the time axis: `[B, C, T] -> [B, C]`.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    input.expect_ndim("global_avg_pool", 3)?;
    let [b, c, t] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let tf = S::from_usize(t);
    let data = input.data().chunks_exact(t).map(|lane| lane.iter().copied().sum::<S>() / tf).collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward<S: Scalar>(grad_out: &Tensor<S>, len: usize) -> Result<Tensor<S>> {
    grad_out.expect_ndim("global_avg_pool_backward", 2)?;
    let [b, c] = [grad_out.shape()[0], grad_out.shape()[1]];
    let tf = S::from_usize(len);
    let mut data = Vec::with_capacity(b * c * len);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / tf, len));
    }
    Tensor::new(&[b, c, len], data)
}

/// `row / (‖row‖ + epsilon)` for every row of a `[B, D]` tensor.
pub fn l2_normalize_rows<S: Scalar>(input: &Tensor<S>, epsilon: S) -> Result<Tensor<S>> {
    input.expect_ndim("l2_normalize_rows", 2)?;
    let d = input.shape()[1];
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
        let denom = norm + epsilon;
        for v in row.iter_mut() {
            *v = *v / denom;
        }
    }
    Ok(out)
}

/// Jacobian-transpose of [`l2_normalize_rows`]:
/// `g/(n+ε) − x·(x·g) / (n·(n+ε)²)` per row, with the second term dropped
/// for zero rows.
pub fn l2_normalize_rows_backward<S: Scalar>(input: &Tensor<S>, epsilon: S, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::dim("l2_normalize_rows_backward", format!("{:?} vs {:?}", input.shape(), grad_out.shape())));
    }
    input.expect_ndim("l2_normalize_rows_backward", 2)?;
    let d = input.shape()[1];
    let mut out = vec![S::zero(); input.len()];
    for ((x, g), o) in input.data().chunks_exact(d).zip(grad_out.data().chunks_exact(d)).zip(out.chunks_exact_mut(d)) {
        let norm = x.iter().map(|&v| v * v).sum::<S>().sqrt();
        let denom = norm + epsilon;
        let dot: S = x.iter().zip(g).map(|(&a, &b)| a * b).sum();
        let coef = if norm > S::zero() { dot / (norm * denom * denom) } else { S::zero() };
        for i in 0..d {
            o[i] = g[i] / denom - x[i] * coef;
        }
    }
    Tensor::new(input.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{max_rel_err, numeric_grad, rand_tensor};

    #[test]
    fn relu_cases() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1., 0., 2.]).unwrap();
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0., 0., 1.]);
        let pos = Tensor::<f64>::from_f64(&[2], &[0.1, 3.]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn gap_mean_and_backward() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 4], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(&[2, 3, 5], 1.5);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 1.5));
        let g = global_avg_pool_backward(&Tensor::<f64>::full(&[1, 1], 1.0), 4).unwrap();
        assert_eq!(g.data(), &[0.25; 4]);
    }

    #[test]
    fn gap_backward_conserves_mass() {
        let up = rand_tensor(&[3, 4], 2);
        let g = global_avg_pool_backward(&up, 7).unwrap();
        assert!((g.sum() - up.sum()).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[3., 4.]).unwrap();
        let y = l2_normalize_rows(&x, 1e-12).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-12 && (y.data()[1] - 0.8).abs() < 1e-12);
        let again = l2_normalize_rows(&y, 1e-12).unwrap();
        assert!(max_rel_err(&again, &y) < 1e-12);
        let zero = Tensor::<f64>::zeros(&[1, 3]);
        assert_eq!(l2_normalize_rows(&zero, 1e-12).unwrap(), zero);
    }

    #[test]
    fn normalize_backward_is_tangent_projection() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1., 0.]).unwrap();
        let eps = 1e-12;
        let g = l2_normalize_rows_backward(&x, eps, &Tensor::from_f64(&[1, 2], &[1., 0.]).unwrap()).unwrap();
        let n = numeric_grad(&x, |x| l2_normalize_rows(x, eps).unwrap().data()[0]);
        assert!(g.data()[0].abs() < 1e-9);
        assert!((g.data()[0] - n.data()[0]).abs() < 1e-8);
    }

    #[test]
    fn normalize_gradient_matches_finite_differences() {
        let x = rand_tensor(&[4, 5], 3);
        let up = rand_tensor(&[4, 5], 4);
        let eps = 1e-8;
        let g = l2_normalize_rows_backward(&x, eps, &up).unwrap();
        let n = numeric_grad(&x, |x| {
            l2_normalize_rows(x, eps).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_err(&g, &n) < 1e-6);
    }

    #[test]
    fn relu_and_gap_gradients_match_finite_differences() {
        let x = rand_tensor(&[2, 3, 6], 8);
        let up = rand_tensor(&[2, 3, 6], 9);
        let g = relu_backward(&x, &up).unwrap();
        let n = numeric_grad(&x, |x| relu(x).data().iter().zip(up.data()).map(|(a, b)| a * b).sum());
        assert!(max_rel_err(&g, &n) < 1e-6);

        let upg = rand_tensor(&[2, 3], 10);
        let g = global_avg_pool_backward(&upg, 6).unwrap();
        let n = numeric_grad(&x, |x| {
            global_avg_pool(x).unwrap().data().iter().zip(upg.data()).map(|(a, b)| a * b).sum()
        });
        assert!(max_rel_err(&g, &n) < 1e-6);
    }
}
