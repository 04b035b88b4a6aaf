use std::path::{Path, PathBuf};

use super::{Dataset, TrainTest};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Ten,
    Hundred,
}

impl CifarVariant {
    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Ten => 10,
            CifarVariant::Hundred => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Ten => 1,
            CifarVariant::Hundred => 2,
        }
    }

    fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn files(self) -> (Vec<&'static str>, &'static str, &'static str) {
        match self {
            CifarVariant::Ten => (
                vec!["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"],
                "test_batch.bin",
                "cifar-10-batches-bin",
            ),
            CifarVariant::Hundred => (vec!["train.bin"], "test.bin", "cifar-100-binary"),
        }
    }
}

fn read_records(paths: &[PathBuf], variant: CifarVariant) -> Result<Dataset> {
    let rec = variant.record_len();
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.len() % rec != 0 {
            return Err(Error::Format {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % rec) as u64,
                msg: format!("{} bytes is not a multiple of the {rec}-byte record", bytes.len()),
            });
        }
        for (i, r) in bytes.chunks_exact(rec).enumerate() {
            let label = r[variant.label_bytes() - 1] as usize;
            if label >= variant.classes() {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (i * rec) as u64,
                    msg: format!("label {label} outside {} classes", variant.classes()),
                });
            }
            labels.push(label);
            pixels.extend(r[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::from_vec(Shape::new(n, 3, 32, 32), pixels)?, labels, variant.classes())
}

pub fn load_cifar(dir: impl AsRef<Path>, variant: CifarVariant) -> Result<TrainTest> {
    let (train_files, test_file, sub) = variant.files();
    let mut base = dir.as_ref().to_path_buf();
    if !base.join(test_file).is_file() && base.join(sub).join(test_file).is_file() {
        base = base.join(sub);
    }
    let train: Vec<PathBuf> = train_files.iter().map(|f| base.join(f)).collect();
    Ok(TrainTest {
        train: read_records(&train, variant)?,
        test: read_records(&[base.join(test_file)], variant)?,
    })
}

/// Serialises sample `i` back into the on-disk record layout. The coarse
/// label byte of CIFAR-100 is not retained and is written as 0.
pub fn cifar_record(ds: &Dataset, i: usize, variant: CifarVariant) -> Vec<u8> {
    let mut out = vec![0u8; variant.label_bytes() - 1];
    out.push(ds.labels[i] as u8);
    out.extend(ds.images.sample(i).iter().map(|&v| (v * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_records(n: usize, variant: CifarVariant) -> Vec<u8> {
        let mut out = Vec::new();
        for i in 0..n {
            if variant == CifarVariant::Hundred {
                out.push(0);
            }
            out.push((i * 7 % variant.classes()) as u8);
            out.extend((0..PIXELS).map(|p| ((p + i * 13) % 256) as u8));
        }
        out
    }

    #[test]
    fn record_round_trip() {
        for variant in [CifarVariant::Ten, CifarVariant::Hundred] {
            let dir = tempfile::tempdir().unwrap();
            let (train, test, _) = variant.files();
            for f in train {
                std::fs::write(dir.path().join(f), fake_records(3, variant)).unwrap();
            }
            std::fs::write(dir.path().join(test), fake_records(2, variant)).unwrap();
            let tt = load_cifar(dir.path(), variant).unwrap();
            assert_eq!(tt.test.len(), 2);
            assert_eq!(tt.train.classes, variant.classes());
            assert_eq!(tt.train.images.shape().dims(), [tt.train.len(), 3, 32, 32]);
            assert_eq!(cifar_record(&tt.test, 1, variant), fake_records(2, variant)[variant.record_len()..]);
        }
    }

    #[test]
    fn ragged_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = fake_records(2, CifarVariant::Ten);
        bytes.pop();
        std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        for f in CifarVariant::Ten.files().0 {
            std::fs::write(dir.path().join(f), fake_records(1, CifarVariant::Ten)).unwrap();
        }
        assert!(matches!(load_cifar(dir.path(), CifarVariant::Ten), Err(Error::Format { offset: 3073, .. })));
    }
}
