pub mod cdf;
pub mod factorized;
pub mod gaussian;

pub use cdf::CdfTable;
pub use factorized::{FactorizedDensity, FactorizedRate};
pub use gaussian::{GaussianConditional, GaussianRate};

use dsscc_autodiff::Tensor;

use crate::error::Result;

/// `(bits_y, bits_z)` of quantized latents under the two models.
pub fn rate_bits(
    y: &Tensor,
    z: &Tensor,
    sigma: &Tensor,
    gaussian: &GaussianConditional,
    factorized: &FactorizedDensity,
) -> Result<(f64, f64)> {
    if y.shape() != sigma.shape() {
        return Err(crate::CoreError::Dimension(format!("y {:?} vs sigma {:?}", y.shape(), sigma.shape())));
    }
    Ok((gaussian.bits(y.data(), sigma.data())?, factorized.bits(z)?))
}
