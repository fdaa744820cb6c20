use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Mode;

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: S,
    pub epsilon: S,
    pub mode: Mode,
}

impl<S: Scalar> BatchNormState<S> {
    /// gamma = 1, beta = 0, running mean 0 and variance 1, momentum 0.1, epsilon 1e-5.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], S::one()),
            momentum: S::lit(0.1),
            epsilon: S::lit(1e-5),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    shape: [usize; 3],
    xhat: Vec<S>,
    inv_std: Vec<S>,
    mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput<S> {
    pub output: Tensor<S>,
    pub cache: BatchNormCache<S>,
    /// State after the call; running statistics differ from the input state
    /// only in train mode.
    pub state: BatchNormState<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<S> {
    pub input: Tensor<S>,
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

/// Normalizes `[B, C, T]` per channel over the batch and time axes.
pub fn batchnorm1d<S: Scalar>(input: &Tensor<S>, state: &BatchNormState<S>) -> Result<BatchNormOutput<S>> {
    input.expect_ndim("batchnorm1d", 3)?;
    let [b, c, t] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    if c != state.channels() {
        return Err(Error::dim("batchnorm1d", format!("input has {c} channels, state has {}", state.channels())));
    }
    let n = b * t;
    if state.mode == Mode::Train && n < 2 {
        return Err(Error::DegenerateBatch {
            op: "batchnorm1d",
            detail: format!("train mode needs at least 2 values per channel, got B*T = {n}"),
        });
    }
    let x = input.data();
    let mut new_state = state.clone();
    let mut xhat = vec![S::zero(); x.len()];
    let mut out = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); c];
    let nf = S::from_usize(n);

    for ch in 0..c {
        let lane = |bi: usize| &x[(bi * c + ch) * t..(bi * c + ch + 1) * t];
        let (mean, var) = match state.mode {
            Mode::Train => {
                let mean = (0..b).map(|bi| lane(bi).iter().copied().sum::<S>()).sum::<S>() / nf;
                let var = (0..b)
                    .map(|bi| lane(bi).iter().map(|&v| (v - mean) * (v - mean)).sum::<S>())
                    .sum::<S>()
                    / nf;
                // running variance tracks the unbiased estimate
                let unbiased = var * nf / (nf - S::one());
                let m = state.momentum;
                new_state.running_mean.data_mut()[ch] = (S::one() - m) * state.running_mean.data()[ch] + m * mean;
                new_state.running_var.data_mut()[ch] = (S::one() - m) * state.running_var.data()[ch] + m * unbiased;
                (mean, var)
            }
            Mode::Eval => (state.running_mean.data()[ch], state.running_var.data()[ch]),
        };
        let is = S::one() / (var + state.epsilon).sqrt();
        inv_std[ch] = is;
        let (g, be) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for bi in 0..b {
            let off = (bi * c + ch) * t;
            for i in off..off + t {
                let h = (x[i] - mean) * is;
                xhat[i] = h;
                out[i] = g * h + be;
            }
        }
    }

    Ok(BatchNormOutput {
        output: Tensor::new(input.shape(), out)?,
        cache: BatchNormCache { shape: [b, c, t], xhat, inv_std, mode: state.mode },
        state: new_state,
    })
}

pub fn batchnorm1d_backward<S: Scalar>(
    cache: &BatchNormCache<S>,
    state: &BatchNormState<S>,
    grad_out: &Tensor<S>,
) -> Result<BatchNormGrads<S>> {
    let [b, c, t] = cache.shape;
    if grad_out.shape() != cache.shape {
        return Err(Error::dim("batchnorm1d_backward", format!("upstream {:?} vs {:?}", grad_out.shape(), cache.shape)));
    }
    let g = grad_out.data();
    let nf = S::from_usize(b * t);
    let mut gin = vec![S::zero(); g.len()];
    let mut ggamma = vec![S::zero(); c];
    let mut gbeta = vec![S::zero(); c];
    for ch in 0..c {
        let idx = |bi: usize| (bi * c + ch) * t..(bi * c + ch + 1) * t;
        let mut sum_g = S::zero();
        let mut sum_gx = S::zero();
        for bi in 0..b {
            for i in idx(bi) {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = state.gamma.data()[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Train => {
                for bi in 0..b {
                    for i in idx(bi) {
                        gin[i] = scale * (g[i] - sum_g / nf - cache.xhat[i] * sum_gx / nf);
                    }
                }
            }
            Mode::Eval => {
                for bi in 0..b {
                    for i in idx(bi) {
                        gin[i] = scale * g[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(&cache.shape, gin)?,
        gamma: Tensor::new(&[c], ggamma)?,
        beta: Tensor::new(&[c], gbeta)?,
    })
}
