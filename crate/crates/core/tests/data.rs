use std::fs;
use std::path::Path;

use rbonn_core::data::{load_cifar10, load_mnist, normalize_pixel, Split};
use rbonn_core::Error;

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

fn pixel(i: usize) -> u8 {
    (i * 31 % 251) as u8
}

fn write_mnist(dir: &Path, train: u32, test: u32, dotted: bool) {
    let name = |stem: &str| if dotted { stem.replacen("-idx", ".idx", 1) } else { stem.to_string() };
    for (prefix, n) in [("train", train), ("t10k", test)] {
        let px: Vec<u8> = (0..n as usize * 784).map(pixel).collect();
        let labels: Vec<u8> = (0..n as u8).map(|i| i % 10).collect();
        fs::write(dir.join(name(&format!("{prefix}-images-idx3-ubyte"))), idx(0x803, &[n, 28, 28], &px)).unwrap();
        fs::write(dir.join(name(&format!("{prefix}-labels-idx1-ubyte"))), idx(0x801, &[n], &labels)).unwrap();
    }
}

/// Reads the first image straight from the file bytes, independently of the loader.
fn first_image_checksum(path: &Path) -> u64 {
    let bytes = fs::read(path).unwrap();
    let rows = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_be_bytes(bytes[12..16].try_into().unwrap()) as usize;
    bytes[16..16 + rows * cols].iter().map(|&b| b as u64).sum()
}

#[test]
fn mnist_loads_and_first_image_matches_raw_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 12, 5, false);
    let (train, test) = load_mnist::<f32>(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (12, 5));
    assert_eq!(train.sample_shape(), &[1, 28, 28]);
    assert_eq!(train.split, Split::Train);
    assert_eq!(test.split, Split::Test);
    let recovered: u64 = train.images.data()[..784]
        .iter()
        .map(|&v| ((v as f64 + 1.0) / 2.0 * 255.0).round() as u64)
        .sum();
    assert_eq!(recovered, first_image_checksum(&dir.path().join("train-images-idx3-ubyte")));
    assert_eq!(train.labels[..4], [0, 1, 2, 3]);
    assert!(train.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn dotted_mnist_names_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 3, 2, true);
    let (train, _) = load_mnist::<f64>(dir.path()).unwrap();
    assert_eq!(train.images.data()[1], normalize_pixel::<f64>(pixel(1)));
}

#[test]
fn mnist_count_mismatch_and_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 4, 2, false);
    fs::write(dir.path().join("train-labels-idx1-ubyte"), idx(0x801, &[3], &[0, 1, 2])).unwrap();
    assert!(matches!(load_mnist::<f32>(dir.path()), Err(Error::CountMismatch { .. })));
    fs::write(dir.path().join("train-labels-idx1-ubyte"), idx(0x801, &[4], &[0, 1, 12, 2])).unwrap();
    assert!(matches!(
        load_mnist::<f32>(dir.path()),
        Err(Error::LabelOutOfRange { index: 2, label: 12, .. })
    ));
    fs::write(dir.path().join("train-labels-idx1-ubyte"), idx(0x803, &[4, 1, 1], &[0; 4])).unwrap();
    assert!(matches!(load_mnist::<f32>(dir.path()), Err(Error::WrongKind { .. })));
    fs::write(dir.path().join("train-labels-idx1-ubyte"), idx(0x1234, &[4], &[0; 4])).unwrap();
    assert!(matches!(load_mnist::<f32>(dir.path()), Err(Error::BadMagic { .. })));
    fs::remove_file(dir.path().join("train-labels-idx1-ubyte")).unwrap();
    assert!(matches!(load_mnist::<f32>(dir.path()), Err(Error::Io { .. })));
}

fn cifar_records(n: usize, salt: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for r in 0..n {
        out.push(((r + salt) % 10) as u8);
        out.extend((0..3072).map(|i| pixel(i + r * 7 + salt)));
    }
    out
}

#[test]
fn cifar_layout_is_channel_planar() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cifar-10-batches-bin");
    fs::create_dir(&sub).unwrap();
    for b in 1..=5 {
        fs::write(sub.join(format!("data_batch_{b}.bin")), cifar_records(2, b)).unwrap();
    }
    fs::write(sub.join("test_batch.bin"), cifar_records(3, 0)).unwrap();
    let (train, test) = load_cifar10::<f32>(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (10, 3));
    assert_eq!(train.sample_shape(), &[3, 32, 32]);
    let raw = cifar_records(2, 1);
    assert_eq!(train.labels[0], raw[0] as usize);
    for (c, offset) in [(0usize, 1usize), (1, 1025), (2, 2049)] {
        assert_eq!(train.images.data()[c * 1024], normalize_pixel::<f32>(raw[offset]));
    }
    fs::write(sub.join("test_batch.bin"), &cifar_records(1, 0)[..3000]).unwrap();
    assert!(matches!(load_cifar10::<f32>(dir.path()), Err(Error::CountMismatch { .. })));
}
