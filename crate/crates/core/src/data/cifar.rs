//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).

use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

fn parse(bytes: &[u8], file: &str, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let fmt = |offset: usize, msg: &str| Error::Format {
        file: file.to_string(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.is_empty() {
        return Err(fmt(0, "empty file"));
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let whole = bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
        return Err(fmt(
            whole,
            &format!("truncated record: {} trailing bytes", bytes.len() - whole),
        ));
    }
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(fmt(i * CIFAR_RECORD_BYTES, &format!("label {} > 9", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// Loads one CIFAR-10 batch file.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    load_cifar10_files(&[path.as_ref().to_path_buf()])
}

/// Loads and concatenates several batch files in order.
pub fn load_cifar10_files(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = fs::read(p)?;
        parse(&bytes, &p.display().to_string(), &mut pixels, &mut labels)?;
    }
    let mut d = Dataset::new((3, 32, 32), pixels, labels, CLASSES)?;
    if let Some(dir) = paths.first().and_then(|p| p.parent()) {
        d.class_names = read_class_names(dir);
    }
    Ok(d)
}

fn read_class_names(dir: &Path) -> Option<Vec<String>> {
    let text = fs::read_to_string(dir.join("batches.meta.txt")).ok()?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    (names.len() == CLASSES).then_some(names)
}

/// Loads the standard layout: `data_batch_1..5.bin` as training split and
/// `test_batch.bin` as test split.
pub fn load_cifar10_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .filter(|p| p.exists())
        .collect();
    if train.is_empty() {
        return Err(Error::invalid(format!(
            "no data_batch_*.bin files in {}",
            dir.display()
        )));
    }
    let test = load_cifar10(dir.join("test_batch.bin"))?;
    Ok((load_cifar10_files(&train)?, test))
}

/// Writes a dataset of 3x32x32 images in batch format.
pub fn write_cifar10(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.image_dims() != (3, 32, 32) {
        return Err(Error::shape("write_cifar10", "3x32x32 images", format!("{:?}", dataset.image_dims())));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for i in 0..dataset.len() {
        out.push(dataset.label(i) as u8);
        out.extend_from_slice(dataset.image(i));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<u8> {
        let mut b = Vec::new();
        for i in 0..n {
            b.push((i % 10) as u8);
            b.extend((0..3072).map(|p| ((p + i) % 251) as u8));
        }
        b
    }

    #[test]
    fn parses_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let bytes = records(25);
        fs::write(&path, &bytes).unwrap();
        let d = load_cifar10(&path).unwrap();
        assert_eq!(d.len(), 25);
        assert_eq!(d.image_dims(), (3, 32, 32));
        assert_eq!(d.label(13), 3);
        let out = dir.path().join("c.bin");
        write_cifar10(&d, &out).unwrap();
        assert_eq!(fs::read(out).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_files_with_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        fs::write(&path, []).unwrap();
        assert!(matches!(load_cifar10(&path), Err(Error::Format { offset: 0, .. })));

        let mut bytes = records(3);
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, &bytes).unwrap();
        match load_cifar10(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 2 * CIFAR_RECORD_BYTES as u64),
            other => panic!("{other:?}"),
        }

        let mut bytes = records(3);
        bytes[CIFAR_RECORD_BYTES] = 10;
        fs::write(&path, &bytes).unwrap();
        match load_cifar10(&path) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, CIFAR_RECORD_BYTES as u64);
                assert!(msg.contains("label 10"));
            }
            other => panic!("{other:?}"),
        }
    }
}
