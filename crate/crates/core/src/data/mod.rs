//! Datasets, loaders, augmentation, multi-crop generation and feature
//! extraction from a frozen trunk.

mod augment;
mod cifar;
mod features;
mod idx;
pub mod synthetic;
mod tta;

pub use augment::{preprocess_center, preprocess_train, Preprocess};
pub(crate) use augment::normalize;
pub use cifar::{load_cifar10, load_cifar10_dir, load_cifar10_files, write_cifar10, CIFAR_RECORD_BYTES};
pub use features::{extract_features, read_feature_store, write_feature_store, FeatureStore};
pub use idx::{load_idx, write_idx};
pub use tta::{tta_crops, CropKind, CropPlan, SquarePosition};

use crate::{Error, Result, Scalar, Shape, Tensor};

/// Images stored as `u8` planes (`c x h x w`, values 0-255) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    num_classes: usize,
    pub class_names: Option<Vec<String>>,
    mean_pixel: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        pixels: Vec<u8>,
        labels: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 {
            return Err(Error::invalid("image dims must be >= 1"));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} pixels for {} images", per * labels.len(), labels.len()),
                pixels.len(),
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(Error::Label {
                label: l as usize,
                classes: num_classes,
                sample: i,
            });
        }
        Ok(Dataset {
            channels,
            height,
            width,
            pixels,
            labels,
            num_classes,
            class_names: None,
            mean_pixel: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.channels * self.height * self.width;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Image `i` as a `1 x c x h x w` tensor of raw 0-255 values.
    pub fn image_tensor<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let shape = Shape::new(1, self.channels, self.height, self.width).expect("validated dims");
        let data = self.image(i).iter().map(|&p| T::from_f64(p as f64)).collect();
        Tensor::from_vec(shape, data).expect("image length")
    }

    /// Per-channel mean over every pixel of this split.
    pub fn compute_mean_pixel(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut sums = vec![0u64; self.channels];
        for img in self.pixels.chunks(self.channels * plane) {
            for (c, p) in img.chunks(plane).enumerate() {
                sums[c] += p.iter().map(|&v| v as u64).sum::<u64>();
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        sums.into_iter().map(|s| s as f64 / count).collect()
    }

    pub fn mean_pixel(&self) -> Option<&[f64]> {
        self.mean_pixel.as_deref()
    }

    pub fn set_mean_pixel(&mut self, mean: Vec<f64>) -> Result<()> {
        if mean.len() != self.channels {
            return Err(Error::shape("mean_pixel", self.channels, mean.len()));
        }
        self.mean_pixel = Some(mean);
        Ok(())
    }

    /// New dataset holding the given images, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image(0).len().max(1));
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            pixels,
            labels,
            ..self.clone_meta()
        }
    }

    /// First `n` images (or all when fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Images whose label is below `k`; the class count becomes `k`.
    pub fn first_classes(&self, k: usize) -> Result<Dataset> {
        if k == 0 || k > self.num_classes {
            return Err(Error::invalid(format!(
                "class subset {k} outside 1..={}",
                self.num_classes
            )));
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.label(i) < k).collect();
        let mut d = self.subset(&idx);
        d.num_classes = k;
        if let Some(names) = &mut d.class_names {
            names.truncate(k);
        }
        Ok(d)
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
            labels: Vec::new(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            mean_pixel: self.mean_pixel.clone(),
        }
    }
}
