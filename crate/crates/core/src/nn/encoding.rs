use super::{NnError, Real, Tensor};

/// Fixed positional encodings, `[len, d]`: even dimensions `sin(p / 10000^(2i/d))`,
/// odd dimensions the matching cosine.
pub fn sinusoidal_encoding<F: Real>(len: usize, d: usize) -> Result<Tensor<F>, NnError> {
    if d % 2 != 0 {
        return Err(NnError::Config(format!("positional encoding width {d} is odd")));
    }
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(F::of(angle.sin()));
            data.push(F::of(angle.cos()));
        }
    }
    Tensor::new(&[len, d], data)
}
