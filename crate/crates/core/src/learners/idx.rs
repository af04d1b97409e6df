//! Reader for the big-endian IDX format used by MNIST-style datasets.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learners::data::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        })
}

/// Pixel values scaled to `[0, 1]`, one row per image.
pub fn read_images(path: &Path, limit: usize) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("bad image magic {magic:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let n = count.min(limit);
    let width = rows * cols;
    let body = bytes.get(16..16 + n * width).ok_or_else(|| Error::Idx {
        path: path.to_path_buf(),
        reason: "truncated image data".into(),
    })?;
    Ok((
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
        n,
        width,
    ))
}

pub fn read_labels(path: &Path, limit: usize) -> Result<Vec<u32>> {
    let bytes = read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            reason: format!("bad label magic {magic:#010x}"),
        });
    }
    let n = (be_u32(&bytes, 4, path)? as usize).min(limit);
    let body = bytes.get(8..8 + n).ok_or_else(|| Error::Idx {
        path: path.to_path_buf(),
        reason: "truncated label data".into(),
    })?;
    Ok(body.iter().map(|&b| u32::from(b)).collect())
}

/// Reads at most `limit` image/label pairs. Classes are `0..=max label`.
pub fn read_pair(images: &Path, labels: &Path, limit: usize) -> Result<Dataset> {
    let (features, n, width) = read_images(images, limit)?;
    let labels_v = read_labels(labels, limit)?;
    if labels_v.len() != n {
        return Err(Error::Idx {
            path: labels.to_path_buf(),
            reason: format!("{} labels for {n} images", labels_v.len()),
        });
    }
    let classes = labels_v
        .iter()
        .copied()
        .max()
        .map_or(1, |m| m as usize + 1)
        .max(10);
    Dataset::new(features, labels_v, width, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn reads_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102, 1, 2, 3, 4, 9, 9, 9, 9]);
        let mut lab = vec![0, 0, 8, 1, 0, 0, 0, 3];
        lab.extend([7, 0, 3]);
        let ip = write(dir.path(), "i", &img);
        let lp = write(dir.path(), "l", &lab);
        let ds = read_pair(&ip, &lp, 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features, 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels, vec![7, 0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "bad", &[0, 0, 8, 2, 0, 0, 0, 0]);
        assert!(matches!(read_labels(&bad, 10), Err(Error::Idx { .. })));
        let short = write(dir.path(), "short", &[0, 0, 8, 1, 0, 0, 0, 5, 1]);
        assert!(matches!(read_labels(&short, 10), Err(Error::Idx { .. })));
        assert!(matches!(
            read_labels(&dir.path().join("missing"), 1),
            Err(Error::Io { .. })
        ));
    }
}
