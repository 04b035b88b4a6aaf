use std::path::PathBuf;

use subband::data::{load_mnist, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
use subband::train::{run_epoch, TrainConfig, TrainState};
use subband::{Error, Model, ModelConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist")
}

#[test]
fn loads_the_truncated_mnist_files() {
    let d = load_mnist(fixture()).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (128, 64));
    assert_eq!(d.train.image_dims(), (1, 28, 28));
    assert_eq!(d.train.classes, 10);
    // First labels of the canonical training and test files.
    assert_eq!(&d.train.labels[..10], &[5, 0, 4, 1, 9, 2, 1, 3, 1, 4]);
    assert_eq!(&d.test.labels[..10], &[7, 2, 1, 0, 4, 1, 4, 9, 5, 9]);
    let px = d.train.images.data();
    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(px.contains(&1.0) && px.contains(&0.0));
}

#[test]
fn writers_reproduce_the_original_bytes() {
    let dir = fixture();
    for (images, labels) in [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")] {
        let x = read_idx_images(&dir.join(images)).unwrap();
        let mut out = Vec::new();
        write_idx_images(&x, &mut out).unwrap();
        assert_eq!(out, std::fs::read(dir.join(images)).unwrap());
        let y = read_idx_labels(&dir.join(labels)).unwrap();
        let mut out = Vec::new();
        write_idx_labels(&y, &mut out).unwrap();
        assert_eq!(out, std::fs::read(dir.join(labels)).unwrap());
    }
}

#[test]
fn damaged_files_report_where_they_break() {
    let tmp = tempfile::tempdir().unwrap();
    let bytes = std::fs::read(fixture().join("train-images-idx3-ubyte")).unwrap();
    let cut = tmp.path().join("cut");
    std::fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    match read_idx_images(&cut) {
        Err(Error::Format { offset, msg, .. }) => {
            assert_eq!(offset as usize, bytes.len() - 100);
            assert!(msg.contains("expected"), "{msg}");
        }
        other => panic!("expected a format error, got {other:?}"),
    }
    let bad = tmp.path().join("bad");
    let mut b = bytes.clone();
    b[3] = 0x01;
    std::fs::write(&bad, &b).unwrap();
    assert!(matches!(read_idx_images(&bad), Err(Error::Format { offset: 0, .. })));
    assert!(load_mnist(tmp.path()).is_err());
}

#[test]
fn one_epoch_on_the_fixture_runs_end_to_end() {
    let d = load_mnist(fixture()).unwrap();
    let cfg = ModelConfig::preset("mnist-msr-asd").unwrap();
    let mut model: Model = Model::build(&cfg, 3).unwrap();
    let tcfg = TrainConfig { val_fraction: 0.25, ..TrainConfig::default() };
    let (train, val) = d.train.split_validation(tcfg.val_fraction, 1).unwrap();
    let mut state = TrainState::new(&model, &tcfg, 3);
    let mut batches = 0;
    let rec = run_epoch(&mut model, &train, &val, &mut state, &tcfg, &mut |_, _, _| batches += 1).unwrap();
    assert_eq!((rec.epoch, batches), (1, 2));
    assert!(rec.train_loss.is_finite());
    assert!((0.0..=100.0).contains(&rec.val_acc));
}
