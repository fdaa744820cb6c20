//! Jittering augmentation in embedding space.
//!
//! Each projected embedding gets `m` noisy copies carrying its label; the
//! originals and the copies are stacked and re-normalized onto the unit
//! hypersphere before the loss sees them. Noise is a constant with respect
//! to differentiation, so the gradient of every copy flows back to its
//! source row.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::NORMALIZE_EPS;
use crate::rng::BoxMuller;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tensorkit::{l2_normalize_rows, l2_normalize_rows_backward};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Total noisy copies per instance.
    pub num_augments: usize,
    /// Jitter standard deviations, cycled over the copies.
    pub scales: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { num_augments: 5, scales: vec![0.03, 0.05], rng_seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_augments > 0 && self.scales.is_empty() {
            return Err(Error::Config("augmentation requested with an empty jitter scale list".into()));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("jitter scales must be positive and finite, got {s}")));
        }
        Ok(())
    }

    /// Seed of the noise stream for one batch.
    pub fn batch_seed(&self, batch_index: u64) -> u64 {
        self.rng_seed ^ batch_index
    }
}

/// Expanded embedding batch: originals first, then copy `j` of every row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch<S> {
    /// Unit-norm embeddings, `[B * (1 + m), D]`.
    pub z: Tensor<S>,
    pub labels: Vec<usize>,
    pub is_augmented: Vec<bool>,
    /// Row of the input batch each expanded row was derived from.
    pub source: Vec<usize>,
    /// Stacked rows before the final normalization.
    stacked: Tensor<S>,
}

/// `z + n` with `n` i.i.d. Gaussian of standard deviation `alpha`.
pub fn jitter<S: Scalar, R: Rng>(z: &Tensor<S>, alpha: S, noise: &mut BoxMuller<R>) -> Tensor<S> {
    if alpha == S::zero() {
        return z.clone();
    }
    let mut out = z.clone();
    for v in out.data_mut() {
        *v += alpha * S::lit(noise.next_standard());
    }
    out
}

pub fn expand_batch<S: Scalar, R: Rng>(
    z: &Tensor<S>,
    labels: &[usize],
    config: &AugmentConfig,
    noise: &mut BoxMuller<R>,
) -> Result<EmbeddingBatch<S>> {
    config.validate()?;
    z.expect_ndim("expand_batch", 2)?;
    let b = z.shape()[0];
    let d = z.shape()[1];
    if labels.len() != b {
        return Err(Error::dim("expand_batch", format!("{} labels for {b} rows", labels.len())));
    }
    let m = config.num_augments;
    let total = b * (1 + m);
    let mut data = Vec::with_capacity(total * d);
    data.extend_from_slice(z.data());
    for j in 0..m {
        let alpha = S::lit(config.scales[j % config.scales.len()]);
        data.extend_from_slice(jitter(z, alpha, noise).data());
    }
    let stacked = Tensor::new(&[total, d], data)?;
    let normalized = l2_normalize_rows(&stacked, S::lit(NORMALIZE_EPS))?;
    Ok(EmbeddingBatch {
        z: normalized,
        labels: (0..total).map(|r| labels[r % b]).collect(),
        is_augmented: (0..total).map(|r| r >= b).collect(),
        source: (0..total).map(|r| r % b).collect(),
        stacked,
    })
}

/// Gradient w.r.t. the input `z` of [`expand_batch`], summing over all
/// `1 + m` rows derived from each source.
pub fn expand_batch_backward<S: Scalar>(batch: &EmbeddingBatch<S>, grad_z: &Tensor<S>) -> Result<Tensor<S>> {
    let g = l2_normalize_rows_backward(&batch.stacked, S::lit(NORMALIZE_EPS), grad_z)?;
    let total = batch.source.len();
    let d = batch.z.shape()[1];
    let b = batch.is_augmented.iter().filter(|a| !**a).count();
    let mut out = Tensor::zeros(&[b, d]);
    for r in 0..total {
        let src = batch.source[r];
        for (o, &v) in out.row_mut(src).iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Ok(out)
}

impl<S> EmbeddingBatch<S> {
    /// `1 + m`.
    pub fn copies_per_row(&self) -> usize {
        let originals = self.is_augmented.iter().filter(|a| !**a).count();
        self.source.len() / originals.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::testutil::{max_rel_err, numeric_grad, rand_tensor};

    fn unit_rows(b: usize, d: usize, seed: u64) -> Tensor<f64> {
        l2_normalize_rows(&rand_tensor(&[b, d], seed), 1e-12).unwrap()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let z = rand_tensor(&[3, 4], 1);
        let mut g = BoxMuller::new(stream(0));
        assert_eq!(jitter(&z, 0.0, &mut g), z);
    }

    #[test]
    fn jitter_noise_statistics() {
        let alpha = 0.05;
        let n = 1_000_000;
        let z = Tensor::<f64>::zeros(&[1000, 1000]);
        let mut g = BoxMuller::new(stream(42));
        let out = jitter(&z, alpha, &mut g);
        let mean = out.sum() / n as f64;
        let std = (out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * alpha / 1000.0, "mean {mean}");
        assert!((std - alpha).abs() < 0.01 * alpha, "std {std}");
    }

    #[test]
    fn no_augments_just_normalizes() {
        let z = rand_tensor(&[4, 3], 2);
        let cfg = AugmentConfig { num_augments: 0, ..Default::default() };
        let out = expand_batch(&z, &[0, 1, 0, 1], &cfg, &mut BoxMuller::new(stream(0))).unwrap();
        assert_eq!(out.z, l2_normalize_rows(&z, 1e-12).unwrap());
        assert!(out.is_augmented.iter().all(|a| !a));
    }

    #[test]
    fn counts_labels_and_norms() {
        let z = unit_rows(2, 5, 3);
        let cfg = AugmentConfig::default();
        let out = expand_batch(&z, &[4, 7], &cfg, &mut BoxMuller::new(stream(1))).unwrap();
        assert_eq!(out.z.shape(), &[12, 5]);
        assert_eq!(out.labels.iter().filter(|&&l| l == 4).count(), 6);
        assert_eq!(out.labels.iter().filter(|&&l| l == 7).count(), 6);
        for r in 0..12 {
            assert_eq!(out.labels[r], [4, 7][out.source[r]]);
            let n = out.z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert_eq!(out.is_augmented.iter().filter(|a| **a).count(), 10);
        assert_eq!(out.copies_per_row(), 6);
    }

    #[test]
    fn copies_cycle_through_scales() {
        // with a huge second scale the odd copies move much further
        let z = unit_rows(1, 200, 4);
        let cfg = AugmentConfig { num_augments: 4, scales: vec![1e-3, 1.0], rng_seed: 0 };
        let out = expand_batch(&z, &[0], &cfg, &mut BoxMuller::new(stream(5))).unwrap();
        let dev = |r: usize| out.stacked.row(r).iter().zip(z.row(0)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dev(1) < 0.1 && dev(3) < 0.1);
        assert!(dev(2) > 5.0 && dev(4) > 5.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let z = unit_rows(3, 4, 6);
        let cfg = AugmentConfig::default();
        let a = expand_batch(&z, &[0, 1, 2], &cfg, &mut BoxMuller::new(stream(cfg.batch_seed(3)))).unwrap();
        let b = expand_batch(&z, &[0, 1, 2], &cfg, &mut BoxMuller::new(stream(cfg.batch_seed(3)))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_scales_rejected() {
        let cfg = AugmentConfig { num_augments: 2, scales: vec![], rng_seed: 0 };
        let z = unit_rows(2, 3, 1);
        assert!(matches!(expand_batch(&z, &[0, 1], &cfg, &mut BoxMuller::new(stream(0))), Err(Error::Config(_))));
    }

    #[test]
    fn backward_sums_all_copies() {
        let z = unit_rows(3, 4, 7);
        let cfg = AugmentConfig { num_augments: 3, scales: vec![0.03, 0.05], rng_seed: 11 };
        let up = rand_tensor(&[12, 4], 8);
        let f = |z: &Tensor<f64>| -> f64 {
            let e = expand_batch(z, &[0, 1, 0], &cfg, &mut BoxMuller::new(stream(11))).unwrap();
            e.z.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let e = expand_batch(&z, &[0, 1, 0], &cfg, &mut BoxMuller::new(stream(11))).unwrap();
        let g = expand_batch_backward(&e, &up).unwrap();
        assert!(max_rel_err(&g, &numeric_grad(&z, f)) < 1e-6);
    }
}
