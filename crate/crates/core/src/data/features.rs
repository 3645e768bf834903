//! Frozen-trunk feature extraction and the `MLFS` feature-store file:
//! little-endian magic, version, count, dim, `count*dim` f32 values and
//! `count` i32 labels.

use std::fs;
use std::path::Path;

use super::augment::{preprocess_center, Preprocess};
use super::Dataset;
use crate::nn::{forward, l2_normalize, Mode, NetworkGraph, ParamSet};
use crate::{Error, Result, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"MLFS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    /// Row-major, one row of `dim` values per image.
    pub features: Vec<f32>,
    pub labels: Vec<i32>,
}

impl FeatureStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Runs the trunk in inference mode on center-cropped images and stores,
/// per image, the flattened outputs of `node_ids` in the given order.
/// Nodes listed in `l2_ids` are scaled to unit norm first.
pub fn extract_features<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    dataset: &Dataset,
    preprocess: &Preprocess,
    node_ids: &[&str],
    l2_ids: &[&str],
    batch_size: usize,
) -> Result<FeatureStore> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let dims = graph.infer_dims(graph.input_dims())?;
    let mut dim = 0;
    for id in node_ids.iter().chain(l2_ids) {
        if graph.position(id).is_none() {
            return Err(Error::graph(*id, "unknown node"));
        }
    }
    for id in node_ids {
        dim += dims[graph.position(id).expect("checked")].len();
    }
    let mut store = FeatureStore {
        dim,
        features: Vec::with_capacity(dim * dataset.len()),
        labels: Vec::with_capacity(dataset.len()),
    };
    for start in (0..dataset.len()).step_by(batch_size) {
        let end = (start + batch_size).min(dataset.len());
        let images = (start..end)
            .map(|i| preprocess_center(&dataset.image_tensor::<T>(i), preprocess))
            .collect::<Result<Vec<_>>>()?;
        let batch = Tensor::stack(&images)?;
        let acts = forward(graph, params, &batch, Mode::Infer, None)?;
        let parts: Vec<Tensor<T>> = node_ids
            .iter()
            .map(|id| {
                let t = acts.get(id).ok_or_else(|| Error::graph(*id, "not evaluated at inference"))?;
                Ok(if l2_ids.contains(id) { l2_normalize(t) } else { t.clone() })
            })
            .collect::<Result<_>>()?;
        for n in 0..end - start {
            for p in &parts {
                store.features.extend(p.sample(n).iter().map(|v| v.as_f64() as f32));
            }
            store.labels.push(dataset.label(start + n) as i32);
        }
    }
    Ok(store)
}

pub fn write_feature_store(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * (store.features.len() + store.labels.len()));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, store.len() as u32, store.dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in &store.features {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for l in &store.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_feature_store(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let fmt = |offset: usize, msg: String| Error::Format {
        file: path.display().to_string(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 16 {
        return Err(fmt(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, "bad magic, expected MLFS".into()));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(fmt(4, format!("unsupported version {}", word(4))));
    }
    let (count, dim) = (word(8) as usize, word(12) as usize);
    let expect = 16 + 4 * (count * dim + count);
    if bytes.len() != expect {
        return Err(fmt(bytes.len().min(expect), format!("expected {expect} bytes, found {}", bytes.len())));
    }
    let body = &bytes[16..];
    let features = body[..4 * count * dim]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels = body[4 * count * dim..]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureStore { dim, features, labels })
}
