use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over all spatial positions: `[n, ch, ...] -> [n, ch]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    if input.ndim() < 3 {
        return Err(Error::shape(format!(
            "global_avg_pool needs [n, ch, spatial...], got {:?}",
            input.shape()
        )));
    }
    let (n, ch) = (input.shape()[0], input.shape()[1]);
    let inner: usize = input.shape()[2..].iter().product();
    let data = input
        .data()
        .chunks_exact(inner)
        .map(|c| c.iter().sum::<f64>() / inner as f64)
        .collect();
    Tensor::from_vec(&[n, ch], data)
}

/// Spreads each pooled gradient uniformly over the voxels it averaged.
pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    if input_shape.len() < 3 || grad_out.shape() != &input_shape[..2] {
        return Err(Error::shape(format!(
            "global_avg_pool backward: grad {:?} for input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let inner: usize = input_shape[2..].iter().product();
    let scale = 1.0 / inner as f64;
    let mut data = Vec::with_capacity(grad_out.len() * inner);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, inner));
    }
    Tensor::from_vec(input_shape, data)
}
