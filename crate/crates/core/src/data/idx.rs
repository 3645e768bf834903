//! IDX files: big-endian magic (`0x00000803` for u8 images with three
//! dims, `0x00000801` for u8 labels), dims as big-endian u32, then data.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (iname, lname) = (ip.display().to_string(), lp.display().to_string());
    let images = fs::read(ip)?;
    let labels = fs::read(lp)?;
    let fmt = |file: &str, offset: usize, msg: String| Error::Format {
        file: file.to_string(),
        offset: offset as u64,
        msg,
    };

    let magic = be_u32(&images, 0, &iname)?;
    if magic != IMAGE_MAGIC {
        return Err(fmt(&iname, 0, format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(&images, 4, &iname)? as usize;
    let rows = be_u32(&images, 8, &iname)? as usize;
    let cols = be_u32(&images, 12, &iname)? as usize;
    let body = &images[16..];
    if body.len() != n * rows * cols {
        return Err(fmt(
            &iname,
            16 + body.len().min(n * rows * cols),
            format!("expected {} pixel bytes, found {}", n * rows * cols, body.len()),
        ));
    }

    let magic = be_u32(&labels, 0, &lname)?;
    if magic != LABEL_MAGIC {
        return Err(fmt(&lname, 0, format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let ln = be_u32(&labels, 4, &lname)? as usize;
    if ln != n {
        return Err(fmt(&lname, 4, format!("{ln} labels for {n} images")));
    }
    let lbody = &labels[8..];
    if lbody.len() != n {
        return Err(fmt(&lname, 8 + lbody.len().min(n), format!("expected {n} label bytes, found {}", lbody.len())));
    }
    if let Some(i) = lbody.iter().position(|&l| l as usize >= CLASSES) {
        return Err(fmt(&lname, 8 + i, format!("label {} > 9", lbody[i])));
    }
    Dataset::new((1, rows, cols), body.to_vec(), lbody.to_vec(), CLASSES)
}

/// Writes single-channel images and their labels as an IDX pair.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = dataset.image_dims();
    if c != 1 {
        return Err(Error::shape("write_idx", "single-channel images", c));
    }
    let mut img = Vec::with_capacity(16 + dataset.pixels().len());
    for v in [IMAGE_MAGIC, dataset.len() as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(dataset.pixels());
    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [LABEL_MAGIC, dataset.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels().map(|l| l as u8));
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}
