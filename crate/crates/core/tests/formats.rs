use funnel_hoi::dataset_eval::{decode_scenes, encode_scenes, Dataset, DatasetConfig};
use funnel_hoi::detr_lite::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use funnel_hoi::numerics::Tensor;
use funnel_hoi::semantics::{load_table, save_table, EmbeddingTable};
use funnel_hoi::Error;
use proptest::prelude::*;
use std::path::Path;

fn small() -> DatasetConfig {
    DatasetConfig {
        train_scenes: 12,
        test_scenes: 6,
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_directory_round_trips() {
    let ds = Dataset::generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ds.save(&a).unwrap();
    let back = Dataset::load(&a).unwrap();
    assert_eq!(back, ds);
    back.save(&b).unwrap();
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn scene_file_layout() {
    let ds = Dataset::generate(&small()).unwrap();
    let bytes = encode_scenes(&ds.train).unwrap();
    assert_eq!(&bytes[..4], b"FHDS");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 12);
    let dims = ds.config.dims();
    let floats = dims.c1 * dims.tokens + dims.dim;
    let gts: usize = ds.train.iter().map(|s| s.gts.len()).sum();
    assert_eq!(bytes.len(), 8 + 12 * (4 * floats + 2) + gts * (8 * 4 + 2));
    let first = f32::from_le_bytes(bytes[8..12].try_into().unwrap());
    assert_eq!(first as f64, ds.train[0].v_b.data()[0]);
    let back = decode_scenes(&bytes, dims, Path::new("mem")).unwrap();
    assert_eq!(back, ds.train);
    assert!(matches!(decode_scenes(&bytes[..bytes.len() - 1], dims, Path::new("mem")), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_scenes(&bad, dims, Path::new("mem")), Err(Error::Format { .. })));
}

#[test]
fn embedding_file_layout() {
    let t = EmbeddingTable::new(vec!["horse".into(), "cup".into()], vec![vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.fheb");
    save_table(&t, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let mut want = b"FHEB".to_vec();
    for x in [1u32, 2, 2] {
        want.extend(x.to_le_bytes());
    }
    for (name, v) in [("horse", [0.6f32, 0.8]), ("cup", [1.0, 0.0])] {
        want.extend((name.len() as u16).to_le_bytes());
        want.extend(name.as_bytes());
        for x in v {
            want.extend(x.to_le_bytes());
        }
    }
    assert_eq!(bytes, want);
    let back = load_table(&p).unwrap();
    let q = dir.path().join("u.fheb");
    save_table(&back, &q).unwrap();
    assert_eq!(std::fs::read(&q).unwrap(), bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn checkpoints_are_bit_exact(
        tensors in prop::collection::vec(
            (
                "[a-z_.0-9]{1,12}",
                prop::collection::vec(1usize..4, 1..4),
                any::<u64>(),
            ),
            0..5,
        )
    ) {
        let named: Vec<(String, Tensor)> = tensors
            .into_iter()
            .map(|(name, shape, bits)| {
                let n: usize = shape.iter().product();
                // arbitrary finite bit patterns, including subnormals and -0
                let data = (0..n as u64)
                    .map(|k| {
                        let x = f64::from_bits(bits.rotate_left(k as u32 * 7) ^ k);
                        if x.is_finite() { x } else { -0.0 }
                    })
                    .collect();
                (name, Tensor::new(&shape, data).unwrap())
            })
            .collect();
        let bytes = encode_checkpoint(&named).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), named.len());
        for ((n1, t1), (n2, t2)) in back.iter().zip(&named) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_files_round_trip() {
    let t = vec![("w".to_string(), Tensor::new(&[2, 3], vec![1.0, -0.0, 1e-310, 3.5, -2.25, f64::MAX]).unwrap())];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.fhck");
    save_checkpoint(&t, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"FHCK");
    assert_eq!(bytes.len(), 4 + 4 + 4 + 2 + 1 + 1 + 8 + 6 * 8);
    assert_eq!(load_checkpoint(&p).unwrap()[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("mem")),
        Err(Error::Format { .. })
    ));
}
