use super::gemm::{gemm, MatRef};
use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Real>(op: &'static str, input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    weights.require_rank(op, 2)?;
    let (m, n) = (weights.dim(0), weights.dim(1));
    let batch = match *input.shape() {
        [k] if k == n => 1,
        [b, k] if k == n => b,
        _ => return Err(Error::shape(op, format!("[{n}] or [N, {n}]"), format!("{:?}", input.shape()))),
    };
    Ok((batch, m, n))
}

/// Affine map `x W^T + b` over a `[n]` vector or an `[N, n]` batch, with
/// `weights` `[m, n]`.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "dense";
    let (batch, m, n) = dims(OP, input, weights)?;
    bias.require_shape(OP, &[m])?;
    let mut out: Vec<T> = (0..batch).flat_map(|_| bias.data().iter().copied()).collect();
    gemm(
        MatRef::row_major(input.data(), batch, n),
        MatRef::row_major(weights.data(), m, n).t(),
        T::one(),
        &mut out,
    );
    let shape = if input.rank() == 1 { vec![m] } else { vec![batch, m] };
    Tensor::from_vec(&shape, out)
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    const OP: &str = "dense_backward";
    let (batch, m, n) = dims(OP, input, weights)?;
    let expected = if input.rank() == 1 { vec![m] } else { vec![batch, m] };
    upstream.require_shape(OP, &expected)?;
    let up = MatRef::row_major(upstream.data(), batch, m);

    let mut grad_w = vec![T::zero(); m * n];
    gemm(up.t(), MatRef::row_major(input.data(), batch, n), T::zero(), &mut grad_w);
    let mut grad_in = vec![T::zero(); batch * n];
    gemm(up, MatRef::row_major(weights.data(), m, n), T::zero(), &mut grad_in);
    let mut grad_b = vec![T::zero(); m];
    for row in upstream.data().chunks_exact(m) {
        for (g, &u) in grad_b.iter_mut().zip(row) {
            *g += u;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: Tensor::from_vec(&[m], grad_b)?,
    })
}
