use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

fn check<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<(usize, usize, usize)> {
    input.expect_ndim("dense", 2)?;
    weight.expect_ndim("dense", 2)?;
    bias.expect_ndim("dense", 1)?;
    let (b, din) = (input.shape()[0], input.shape()[1]);
    let dout = weight.shape()[0];
    if weight.shape()[1] != din {
        return Err(Error::dim("dense", format!("weight is {:?}, input width is {din}", weight.shape())));
    }
    if bias.len() != dout {
        return Err(Error::dim("dense", format!("bias length {} for {dout} outputs", bias.len())));
    }
    Ok((b, din, dout))
}

/// `input · weightᵀ + bias` for `[B, Din]` input and `[Dout, Din]` weight.
pub fn dense<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, din, dout) = check(input, weight, bias)?;
    let mut out = Vec::with_capacity(b * dout);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    gemm(
        S::one(),
        MatRef::row_major(input.data(), b, din),
        MatRef::row_major(weight.data(), dout, din).t(),
        S::one(),
        &mut out,
    );
    Tensor::new(&[b, dout], out)
}

pub fn dense_backward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, grad_out: &Tensor<S>) -> Result<DenseGrads<S>> {
    let (b, din) = (input.shape()[0], input.shape()[1]);
    let dout = weight.shape()[0];
    if grad_out.shape() != [b, dout] {
        return Err(Error::dim("dense_backward", format!("upstream {:?} vs [{b}, {dout}]", grad_out.shape())));
    }
    let g = MatRef::row_major(grad_out.data(), b, dout);
    let mut gin = vec![S::zero(); b * din];
    gemm(S::one(), g, MatRef::row_major(weight.data(), dout, din), S::zero(), &mut gin);
    let mut gw = vec![S::zero(); dout * din];
    gemm(S::one(), g.t(), MatRef::row_major(input.data(), b, din), S::zero(), &mut gw);
    let mut gb = vec![S::zero(); dout];
    for r in 0..b {
        for (acc, &v) in gb.iter_mut().zip(&grad_out.data()[r * dout..(r + 1) * dout]) {
            *acc += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(&[b, din], gin)?,
        weight: Tensor::new(&[dout, din], gw)?,
        bias: Tensor::new(&[dout], gb)?,
    })
}
