use std::path::{Path, PathBuf};

use fcae_core::data::{
    batches, encode_idx, load_cifar10_file, load_idx, load_idx_labels, load_mnist, parse_idx, subset, synth_dataset,
    write_idx_images, DataError, IdxArray, Split, SynthKind,
};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fcae-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn two_image_fixture_is_recovered_exactly() {
    let h = load_idx(&fixture("two_images.idx3")).unwrap();
    assert_eq!(h.images.shape(), [2, 3, 2, 1]);
    let raw = [[0u8, 255, 128, 1, 64, 200], [10, 20, 30, 40, 50, 254]];
    for (b, img) in raw.iter().enumerate() {
        for (i, &px) in img.iter().enumerate() {
            assert_eq!(h.images.get(b, i / 2, i % 2, 0), px as f64 / 255.0);
        }
    }
    assert_eq!(load_idx_labels(&fixture("two_labels.idx1")).unwrap(), vec![7, 3]);
}

#[test]
fn writing_the_fixture_back_reproduces_its_bytes() {
    let src = fixture("two_images.idx3");
    let h = load_idx(&src).unwrap();
    let out = scratch("two_images.idx3");
    write_idx_images(&out, &h.images).unwrap();
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(src).unwrap());
}

#[test]
fn bad_magic_reports_the_offset() {
    let mut bytes = std::fs::read(fixture("two_images.idx3")).unwrap();
    bytes[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
    match parse_idx(&bytes, "x") {
        Err(DataError::Parse { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected parse error, got {other:?}"),
    }
    let truncated = &std::fs::read(fixture("two_images.idx3")).unwrap()[..20];
    assert!(matches!(parse_idx(truncated, "x"), Err(DataError::Parse { .. })));
}

#[test]
fn cifar_single_record_is_reassembled() {
    let h = load_cifar10_file(&fixture("cifar_one.bin")).unwrap();
    assert_eq!(h.images.shape(), [1, 32, 32, 3]);
    assert_eq!(h.labels.as_deref(), Some(&[6u8][..]));
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                let byte = (c * 97 + y * 7 + x * 3) % 256;
                assert_eq!(h.images.get(0, y, x, c), byte as f64 / 255.0);
            }
        }
    }
}

#[test]
fn empty_cifar_file_is_an_empty_handle() {
    let path = scratch("empty.bin");
    std::fs::write(&path, b"").unwrap();
    let h = load_cifar10_file(&path).unwrap();
    assert_eq!(h.len(), 0);
    assert_eq!(h.images.shape(), [0, 32, 32, 3]);
}

#[test]
fn bundled_mnist_shapes_and_stratified_subset() {
    let train = load_mnist(&data_root(), Split::Train).unwrap();
    assert_eq!(train.images.shape(), [3000, 28, 28, 1]);
    let test = load_mnist(&data_root(), Split::Test).unwrap();
    assert_eq!(test.images.shape(), [2000, 28, 28, 1]);
    assert!(train.images.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let sub = subset(&train, 1000, 3).unwrap();
    let mut counts = [0usize; 10];
    for &l in sub.labels.as_ref().unwrap() {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [100; 10]);
    assert!(matches!(subset(&train, 3001, 0), Err(DataError::Range(_))));
}

#[test]
fn full_subset_is_a_permutation() {
    let h = synth_dataset(SynthKind::Gradient, 40, 4, 4, 1, 9);
    let s = subset(&h, 40, 1).unwrap();
    let key = |t: &fcae_core::Tensor| {
        let mut items: Vec<Vec<u64>> = (0..t.batch()).map(|b| t.item(b).iter().map(|v| v.to_bits()).collect()).collect();
        items.sort();
        items
    };
    assert_eq!(key(&s.images), key(&h.images));
}

#[test]
fn synthetic_generators() {
    let c = synth_dataset(SynthKind::Constant(0.25), 3, 5, 5, 2, 0);
    assert!(c.images.data().iter().all(|&v| v == 0.25));
    let a = synth_dataset(SynthKind::GaussianBlobs, 100, 12, 12, 1, 4);
    assert_eq!(a, synth_dataset(SynthKind::GaussianBlobs, 100, 12, 12, 1, 4));
    let mean = a.images.mean();
    assert!(mean > 0.0 && mean < 1.0, "{mean}");
}

#[test]
fn batches_keep_the_short_tail() {
    let h = synth_dataset(SynthKind::Gradient, 100, 2, 2, 1, 0);
    let sizes: Vec<usize> = batches(&h, 32, 7, 0).map(|t| t.batch()).collect();
    assert_eq!(sizes, vec![32, 32, 32, 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn idx_round_trip(n in 0usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let data: Vec<u8> = (0..n * h * w).map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as u8).collect();
        let arr = IdxArray { dims: vec![n, h, w], data };
        let bytes = encode_idx(&arr);
        let back = parse_idx(&bytes, "mem").unwrap();
        prop_assert_eq!(&back, &arr);
        prop_assert_eq!(encode_idx(&back), bytes);
    }

    #[test]
    fn stratified_counts_differ_by_at_most_one(n in 0usize..200, seed in any::<u64>()) {
        let h = synth_dataset(SynthKind::GaussianBlobs, 400, 8, 8, 1, 2);
        let mut avail = [0usize; 4];
        for &l in h.labels.as_ref().unwrap() { avail[l as usize] += 1; }
        prop_assume!(avail.iter().all(|&a| a >= n / 4 + 1));
        let s = subset(&h, n, seed).unwrap();
        prop_assert_eq!(s.len(), n);
        let mut counts = [0usize; 4];
        for &l in s.labels.as_ref().unwrap() { counts[l as usize] += 1; }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{:?}", counts);
        // the remainder goes to the lowest class indices
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{:?}", counts);
        prop_assert!(s.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
