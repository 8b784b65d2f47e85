use crate::error::Result;
use crate::numerics::Tensor;

/// Maps images to the space the denoiser works in and back.
pub trait Codec {
    fn encode(&self, image: &Tensor) -> Result<Tensor>;
    fn decode(&self, latent: &Tensor) -> Result<Tensor>;
}

/// Affine pixel codec: `[0, 1] -> [-1, 1]` on encode, inverse plus clamping
/// to `[0, 1]` on decode. The round trip is exact for pixels that are
/// representable in `f32` (all loaded and generated images are).
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn encode(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.map(|v| 2.0 * v - 1.0))
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        Ok(latent.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)))
    }
}

pub fn encode_image(image: &Tensor) -> Result<Tensor> {
    IdentityCodec.encode(image)
}

pub fn decode_latent(latent: &Tensor) -> Result<Tensor> {
    IdentityCodec.decode(latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pgm::level_to_unit;

    #[test]
    fn affine_endpoints() {
        let x = Tensor::vector(vec![0.0, 0.5, 1.0]);
        assert_eq!(encode_image(&x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn round_trip_is_exact_on_storage_values() {
        let x = Tensor::vector((0..=255u8).map(level_to_unit).collect());
        assert_eq!(decode_latent(&encode_image(&x).unwrap()).unwrap(), x);
    }
}
