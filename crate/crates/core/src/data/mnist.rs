use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, TrainTest};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn find(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    for name in [format!("{stem}-{kind}-ubyte"), format!("{stem}.{kind}-ubyte")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Format {
        path: dir.join(format!("{stem}-{kind}-ubyte")),
        offset: 0,
        msg: "file not found".into(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg: format!("header truncated: file has {} bytes", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            msg: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(())
}

/// Reads an IDX3 image file into `(n, 1, rows, cols)` with pixels in `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read(path)?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    check_len(&bytes, 16 + n * rows * cols, path)?;
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(Shape::new(n, 1, rows, cols), data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    check_len(&bytes, 8 + n, path)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Writes IDX3 images; pixels are scaled by 255 and rounded.
pub fn write_idx_images(images: &Tensor<f32>, mut out: impl Write) -> std::io::Result<()> {
    let s = images.shape();
    for v in [IMAGE_MAGIC, s.n as u32, s.h as u32, s.w as u32] {
        out.write_all(&v.to_be_bytes())?;
    }
    let px: Vec<u8> = images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    out.write_all(&px)
}

pub fn write_idx_labels(labels: &[usize], mut out: impl Write) -> std::io::Result<()> {
    out.write_all(&LABEL_MAGIC.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    let b: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    out.write_all(&b)
}

fn load_split(dir: &Path, stem: &str) -> Result<Dataset> {
    let images_path = find(dir, stem, "images-idx3")?;
    let labels_path = find(dir, stem, "labels-idx1")?;
    let images = read_idx_images(&images_path)?;
    let labels = read_idx_labels(&labels_path)?;
    if labels.len() != images.shape().n {
        return Err(Error::Format {
            path: labels_path,
            offset: 4,
            msg: format!("{} labels for {} images", labels.len(), images.shape().n),
        });
    }
    Dataset::new(images, labels, 10)
}

pub fn load_mnist(dir: impl AsRef<Path>) -> Result<TrainTest> {
    let dir = dir.as_ref();
    Ok(TrainTest {
        train: load_split(dir, "train")?,
        test: load_split(dir, "t10k")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, stem: &str, ds: &Dataset) {
        let f = std::fs::File::create(dir.join(format!("{stem}-images-idx3-ubyte"))).unwrap();
        write_idx_images(&ds.images, f).unwrap();
        let f = std::fs::File::create(dir.join(format!("{stem}-labels-idx1-ubyte"))).unwrap();
        write_idx_labels(&ds.labels, f).unwrap();
    }

    #[test]
    fn round_trip_through_idx() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthetic(12, (1, 28, 28), 10, 3);
        let quantised = Dataset {
            images: ds.images.map(|v| (v * 255.0).round() / 255.0),
            ..ds.clone()
        };
        write_pair(dir.path(), "train", &ds);
        write_pair(dir.path(), "t10k", &ds.take(5));
        let tt = load_mnist(dir.path()).unwrap();
        assert_eq!(tt.train.len(), 12);
        assert_eq!(tt.test.len(), 5);
        assert_eq!(tt.train.labels, ds.labels);
        assert_eq!(tt.train.images, quantised.images);
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthetic(3, (1, 28, 28), 10, 3);
        let mut bytes = Vec::new();
        write_idx_images(&ds.images, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 10);
        let p = dir.path().join("x");
        std::fs::write(&p, &bytes).unwrap();
        let err = read_idx_images(&p).unwrap_err().to_string();
        assert!(err.contains("2368") && err.contains("2358"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        let mut bytes = Vec::new();
        write_idx_labels(&[1, 2], &mut bytes).unwrap();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Format { offset: 0, .. })));
    }
}
