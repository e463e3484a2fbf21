use super::{Real, Tensor};

/// Negative-side slope of the leaky rectifier used after hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    leaky_relu_inplace(&mut y);
    y
}

pub fn leaky_relu_inplace<T: Real>(x: &mut Tensor<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward pass given the layer *output*: the sign of the output equals
/// the sign of the input for a positive slope. The derivative at 0 is taken
/// from the negative side.
pub fn leaky_relu_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let slope = T::lit(LEAKY_SLOPE);
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}
