//! "Same"-padded 1-D convolution via im2col and a single matrix product.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Left/right zero padding that preserves length for kernel size `k`.
///
/// Odd kernels pad symmetrically. Even kernels put the extra zero on the
/// right, so output position `t` sees inputs `t - (k-1)/2 ..= t + k/2`.
pub fn same_padding(k: usize) -> (usize, usize) {
    let total = k - 1;
    (total / 2, total - total / 2)
}

/// Forward intermediates needed by [`conv1d_backward`].
#[derive(Clone, Debug)]
pub struct Conv1dCache<S> {
    batch: usize,
    in_channels: usize,
    len: usize,
    kernel: usize,
    /// im2col matrix, `[in_channels * kernel, batch * len]`.
    cols: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct Conv1dGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

fn check_shapes<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<()> {
    input.expect_ndim("conv1d", 3)?;
    weight.expect_ndim("conv1d", 3)?;
    bias.expect_ndim("conv1d", 1)?;
    let (ci, co) = (input.shape()[1], weight.shape()[0]);
    if weight.shape()[1] != ci {
        return Err(Error::dim(
            "conv1d",
            format!("weight expects {} input channels, input has {ci}", weight.shape()[1]),
        ));
    }
    if bias.shape()[0] != co {
        return Err(Error::dim("conv1d", format!("bias has {} entries for {co} output channels", bias.shape()[0])));
    }
    Ok(())
}

fn im2col<S: Scalar>(input: &Tensor<S>, k: usize) -> Vec<S> {
    let [b, c, t] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (left, _) = same_padding(k);
    let bt = b * t;
    let x = input.data();
    let mut cols = vec![S::zero(); c * k * bt];
    for ci in 0..c {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * bt..(ci * k + kk + 1) * bt];
            // output t reads input t + kk - left
            let lo = left.saturating_sub(kk);
            let hi = (t + left).saturating_sub(kk).min(t);
            if lo >= hi {
                continue;
            }
            for bi in 0..b {
                let src = &x[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                let dst = &mut row[bi * t..(bi + 1) * t];
                let shift = lo + kk - left;
                dst[lo..hi].copy_from_slice(&src[shift..shift + (hi - lo)]);
            }
        }
    }
    cols
}

/// Convolution returning the cache for the backward pass.
pub fn conv1d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(Tensor<S>, Conv1dCache<S>)> {
    check_shapes(input, weight, bias)?;
    let [b, ci, t] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [co, _, k] = [weight.shape()[0], weight.shape()[1], weight.shape()[2]];
    let cols = im2col(input, k);
    let bt = b * t;
    let mut out_mat = vec![S::zero(); co * bt];
    gemm(
        S::one(),
        MatRef::row_major(weight.data(), co, ci * k),
        MatRef::row_major(&cols, ci * k, bt),
        S::zero(),
        &mut out_mat,
    );
    let mut out = vec![S::zero(); b * co * t];
    let bias = bias.data();
    for o in 0..co {
        for bi in 0..b {
            let src = &out_mat[o * bt + bi * t..o * bt + (bi + 1) * t];
            let dst = &mut out[(bi * co + o) * t..(bi * co + o + 1) * t];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias[o];
            }
        }
    }
    let cache = Conv1dCache { batch: b, in_channels: ci, len: t, kernel: k, cols };
    Ok((Tensor::new(&[b, co, t], out)?, cache))
}

/// Zero-padded "same" convolution: `[B, C_in, T] -> [B, C_out, T]`.
pub fn conv1d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    conv1d_forward(input, weight, bias).map(|(out, _)| out)
}

pub fn conv1d_backward<S: Scalar>(
    cache: &Conv1dCache<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<Conv1dGrads<S>> {
    let Conv1dCache { batch: b, in_channels: ci, len: t, kernel: k, ref cols } = *cache;
    let co = weight.shape()[0];
    if grad_out.shape() != [b, co, t] {
        return Err(Error::dim("conv1d_backward", format!("upstream shape {:?} != [{b}, {co}, {t}]", grad_out.shape())));
    }
    let bt = b * t;
    let g = grad_out.data();
    let mut gmat = vec![S::zero(); co * bt];
    let mut gbias = vec![S::zero(); co];
    for bi in 0..b {
        for o in 0..co {
            let src = &g[(bi * co + o) * t..(bi * co + o + 1) * t];
            gmat[o * bt + bi * t..o * bt + (bi + 1) * t].copy_from_slice(src);
            gbias[o] += src.iter().copied().sum::<S>();
        }
    }

    let mut gweight = vec![S::zero(); co * ci * k];
    gemm(
        S::one(),
        MatRef::row_major(&gmat, co, bt),
        MatRef::row_major(cols, ci * k, bt).t(),
        S::zero(),
        &mut gweight,
    );

    let mut gcols = vec![S::zero(); ci * k * bt];
    gemm(
        S::one(),
        MatRef::row_major(weight.data(), co, ci * k).t(),
        MatRef::row_major(&gmat, co, bt),
        S::zero(),
        &mut gcols,
    );

    // col2im: scatter-add back onto the unpadded input positions
    let (left, _) = same_padding(k);
    let mut gin = vec![S::zero(); b * ci * t];
    for c in 0..ci {
        for kk in 0..k {
            let row = &gcols[(c * k + kk) * bt..(c * k + kk + 1) * bt];
            let lo = left.saturating_sub(kk);
            let hi = (t + left).saturating_sub(kk).min(t);
            if lo >= hi {
                continue;
            }
            let shift = lo + kk - left;
            for bi in 0..b {
                let dst = &mut gin[(bi * ci + c) * t + shift..(bi * ci + c) * t + shift + (hi - lo)];
                for (d, &s) in dst.iter_mut().zip(&row[bi * t + lo..bi * t + hi]) {
                    *d += s;
                }
            }
        }
    }

    Ok(Conv1dGrads {
        input: Tensor::new(&[b, ci, t], gin)?,
        weight: Tensor::new(&[co, ci, k], gweight)?,
        bias: Tensor::new(&[co], gbias)?,
    })
}
