use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{crop, mirror_h, resize_bilinear};
use crate::{Error, Result, Scalar, Tensor};

/// Square resize to `base`, mean subtraction, then a `crop`-sized window.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub base: usize,
    pub crop: usize,
    pub mean: Vec<f64>,
    /// Multiplier applied after mean subtraction (1 keeps raw pixel units).
    pub scale: f64,
}

impl Preprocess {
    pub fn new(base: usize, crop: usize, mean: Vec<f64>) -> Result<Self> {
        if crop == 0 || crop > base {
            return Err(Error::invalid(format!(
                "crop size {crop} must be in 1..={base} (base size)"
            )));
        }
        Ok(Preprocess { base, crop, mean, scale: 1.0 })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn squash<T: Scalar>(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let s = image.shape();
        if self.mean.len() != s.c {
            return Err(Error::shape("mean_pixel", s.c, self.mean.len()));
        }
        let mut out = resize_bilinear(image, self.base, self.base)?;
        normalize(&mut out, &self.mean, self.scale);
        Ok(out)
    }
}

/// `(x - mean[c]) * scale` per channel.
pub(crate) fn normalize<T: Scalar>(t: &mut Tensor<T>, mean: &[f64], scale: f64) {
    let plane = t.shape().plane();
    let c = t.shape().c;
    let s = T::from_f64(scale);
    for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let m = T::from_f64(mean[i % c]);
        if scale == 1.0 {
            chunk.iter_mut().for_each(|v| *v -= m);
        } else {
            chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
    }
}

/// Random crop and 50% horizontal mirror, both drawn from `seed`.
/// Returns the sample together with the chosen `(top, left, mirrored)`.
pub fn preprocess_train<T: Scalar>(
    image: &Tensor<T>,
    config: &Preprocess,
    seed: u64,
) -> Result<(Tensor<T>, (usize, usize, bool))> {
    let squashed = config.squash(image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = config.base - config.crop;
    let top = rng.random_range(0..=range);
    let left = rng.random_range(0..=range);
    let flip = rng.random_bool(0.5);
    let mut out = crop(&squashed, top, left, config.crop, config.crop)?;
    if flip {
        out = mirror_h(&out);
    }
    Ok((out, (top, left, flip)))
}

/// Deterministic center crop of the squashed image.
pub fn preprocess_center<T: Scalar>(image: &Tensor<T>, config: &Preprocess) -> Result<Tensor<T>> {
    let squashed = config.squash(image)?;
    let off = (config.base - config.crop) / 2;
    crop(&squashed, off, off, config.crop, config.crop)
}
