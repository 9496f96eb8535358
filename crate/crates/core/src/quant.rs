//! Hard rounding for deployment and the additive uniform noise used in training.

use dsscc_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Rounds every element to the nearest integer, ties away from zero.
/// Negative zero is normalized so decoded symbols match bitwise.
pub fn quantize(y: &Tensor) -> Result<Tensor> {
    if !y.all_finite() {
        return Err(CoreError::NonFinite("quantize input".into()));
    }
    Ok(Tensor::from_fn(y.shape(), |i| y.data()[i].round() + 0.0))
}

/// Integer symbols of an already quantized tensor.
pub fn symbols(y: &Tensor) -> Vec<i32> {
    y.data().iter().map(|v| v.round() as i32).collect()
}

/// Counter-based noise source: one ChaCha8 stream per `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct NoiseRng {
    rng: ChaCha8Rng,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseRng { rng }
    }

    /// One draw from the open interval `(-0.5, 0.5)`.
    pub fn uniform(&mut self) -> f32 {
        loop {
            let u = self.rng.gen::<f32>() - 0.5;
            if u > -0.5 {
                return u;
            }
        }
    }

    pub fn noise(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform())
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `y + u` with `u` i.i.d. uniform on `(-0.5, 0.5)`.
pub fn noise_proxy(y: &Tensor, rng: &mut NoiseRng) -> Tensor {
    let u = rng.noise(y.shape());
    Tensor::from_fn(y.shape(), |i| y.data()[i] + u.data()[i])
}
