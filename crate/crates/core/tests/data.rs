use dsscc_core::data::{self, Dataset, RECORD_BYTES};
use dsscc_core::CoreError;

#[test]
fn record_count_follows_file_size() {
    let set = data::synthetic(10_000, 1);
    let bytes = data::encode_cifar10(&set).unwrap();
    assert_eq!(bytes.len(), 10_000 * RECORD_BYTES);
    let back = data::parse_cifar10(&bytes).unwrap();
    assert_eq!(back.len(), 10_000);
    assert_eq!(back, set);
}

#[test]
fn malformed_files_are_rejected() {
    let set = data::synthetic(3, 2);
    let mut bytes = data::encode_cifar10(&set).unwrap();
    assert!(matches!(data::parse_cifar10(&bytes[..bytes.len() - 1]), Err(CoreError::MalformedRecord(_))));
    bytes[RECORD_BYTES] = 11;
    assert!(matches!(data::parse_cifar10(&bytes), Err(CoreError::BadLabel(11))));
}

#[test]
fn file_round_trip_and_plane_layout() {
    let set = data::synthetic(5, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    data::write_cifar10(&path, &set).unwrap();
    assert_eq!(data::load_cifar10(&path).unwrap(), set);
    let raw = std::fs::read(&path).unwrap();
    // Record 0: label, then the red plane; pixel (0, 1) red is byte 2.
    assert_eq!(raw[0], set.labels[0]);
    assert_eq!(raw[2], set.image(0)[3]);
    assert_eq!(raw[1 + 1024], set.image(0)[1]);
}

#[test]
fn synthetic_set_is_deterministic_and_covers_every_class() {
    let a = data::synthetic(200, 4);
    assert_eq!(a, data::synthetic(200, 4));
    assert_ne!(a, data::synthetic(200, 5));
    let mut counts = [0usize; 10];
    for &l in &a.labels {
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 5), "{counts:?}");
}

#[test]
fn png_and_ppm_images_load_back() {
    let set = data::synthetic(1, 6);
    let x = set.batch(&[0]);
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("a.png");
    data::save_png(&png, &x).unwrap();
    let back = data::load_image(&png).unwrap();
    assert!(back.bitwise_eq(&x));
    let ppm = dir.path().join("a.ppm");
    let mut bytes = b"P6\n32 32\n255\n".to_vec();
    bytes.extend_from_slice(set.image(0));
    std::fs::write(&ppm, bytes).unwrap();
    assert!(data::load_image(&ppm).unwrap().bitwise_eq(&x));
    assert!(data::load_image(dir.path().join("missing.png")).is_err());
}

#[test]
fn slices_and_batches() {
    let set: Dataset = data::synthetic(10, 7);
    let s = set.slice(3, 6);
    assert_eq!(s.len(), 3);
    assert_eq!(s.image(0), set.image(3));
    let b = set.batch(&[2, 4]);
    assert_eq!(b.shape(), &[2, 32, 32, 3]);
    assert_eq!(b.data()[0], set.image(2)[0] as f32);
    assert_eq!(set.batch_labels(&[1]).data()[0], set.labels[1] as f32);
}
