//! File formats: KITTI scans and labels, PLY export and checkpoints.

mod common;

use common::{rng, small_scene, tiny_config};
use kpfusion::data::{
    read_kitti_labels, read_kitti_scan, read_raw_labels, write_kitti_labels, write_kitti_scan,
    write_ply, PlyAttribute, RemapTable, PALETTE,
};
use kpfusion::geometry::{PointCloud, IGNORE_LABEL};
use kpfusion::train::{evaluate, load_network, save_network, train};
use kpfusion::Error;
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use rand::Rng;

fn random_scan_bytes(seed: u64, n: usize) -> Vec<u8> {
    let mut r = rng(seed);
    (0..n * 4)
        .flat_map(|_| r.random_range(-80.0f32..80.0).to_le_bytes())
        .collect()
}

#[test]
fn kitti_scan_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let bytes = random_scan_bytes(seed, 1 + 997 * seed as usize);
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        std::fs::write(&a, &bytes).unwrap();
        let cloud = read_kitti_scan(&a).unwrap();
        assert_eq!(cloud.len(), bytes.len() / 16);
        write_kitti_scan(&b, &cloud).unwrap();
        assert_eq!(std::fs::read(&b).unwrap(), bytes);
    }
}

#[test]
fn kitti_scan_features_are_intensity_and_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    let rec: Vec<u8> = [3.0f32, 4.0, 12.0, 0.25].iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(&path, rec).unwrap();
    let c = read_kitti_scan(&path).unwrap();
    assert_eq!(c.positions, vec![[3.0, 4.0, 12.0]]);
    assert_eq!(c.features, vec![0.25, 13.0]);
}

#[test]
fn kitti_scan_rejects_truncated_and_non_finite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    std::fs::write(&path, vec![0u8; 18]).unwrap();
    assert!(matches!(read_kitti_scan(&path), Err(Error::CorruptFile { .. })));
    let mut bytes = random_scan_bytes(1, 3);
    bytes[16 + 4..16 + 8].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    match read_kitti_scan(&path) {
        Err(Error::CorruptFile { offset, .. }) => assert_eq!(offset, 16),
        other => panic!("expected CorruptFile, got {other:?}"),
    }
}

#[test]
fn kitti_labels_round_trip_and_mask_instance_bits() {
    let dir = tempfile::tempdir().unwrap();
    let remap = RemapTable::default();
    let ids: Vec<u32> = remap.raw_ids().collect();
    let mut r = rng(7);
    let raw: Vec<u32> = (0..500)
        .map(|_| (r.random_range(0..u16::MAX as u32) << 16) | ids[r.random_range(0..ids.len())])
        .collect();
    let path = dir.path().join("l.label");
    write_kitti_labels(&path, &raw).unwrap();
    assert_eq!(read_raw_labels(&path).unwrap(), raw);

    let read = read_kitti_labels(&path, &remap, None).unwrap();
    assert_eq!(read.unknown, 0);
    for (&l, &r) in read.labels.iter().zip(&raw) {
        assert_eq!(Some(l), remap.remap(r & 0xffff));
    }
}

#[test]
fn unknown_raw_ids_become_ignore() {
    let dir = tempfile::tempdir().unwrap();
    let remap = RemapTable::default();
    let unused = (0..u16::MAX as u32).find(|&v| remap.remap(v).is_none()).unwrap();
    let path = dir.path().join("l.label");
    write_kitti_labels(&path, &[unused, 40, unused | (5 << 16)]).unwrap();
    let read = read_kitti_labels(&path, &remap, None).unwrap();
    assert_eq!(read.unknown, 2);
    assert_eq!(read.labels[0], IGNORE_LABEL);
    assert_eq!(read.labels[2], IGNORE_LABEL);
}

#[test]
fn label_count_mismatch_is_corrupt_pair() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.label");
    write_kitti_labels(&path, &[40; 9]).unwrap();
    let scan = dir.path().join("s.bin");
    match read_kitti_labels(&path, &RemapTable::default(), Some((&scan, 10))) {
        Err(Error::CorruptPair {
            scan_points,
            label_count,
            ..
        }) => assert_eq!((scan_points, label_count), (10, 9)),
        other => panic!("expected CorruptPair, got {other:?}"),
    }
}

fn parse_ply(path: &std::path::Path) -> ply_rs::ply::Ply<DefaultElement> {
    let mut f = std::fs::File::open(path).unwrap();
    Parser::<DefaultElement>::new().read_ply(&mut f).unwrap()
}

fn float(e: &DefaultElement, key: &str) -> f32 {
    match e[key] {
        Property::Float(v) => v,
        ref p => panic!("{key} is {p:?}"),
    }
}

fn uchar(e: &DefaultElement, key: &str) -> u8 {
    match e[key] {
        Property::UChar(v) => v,
        ref p => panic!("{key} is {p:?}"),
    }
}

#[test]
fn ply_label_export_parses() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = small_scene(3);
    let labels = cloud.labels.clone().unwrap();
    let path = dir.path().join("c.ply");
    write_ply(&path, &cloud, PlyAttribute::Labels(&labels)).unwrap();
    let ply = parse_ply(&path);
    let verts = &ply.payload["vertex"];
    assert_eq!(verts.len(), cloud.len());
    for (i, v) in verts.iter().enumerate() {
        for (a, key) in ["x", "y", "z"].into_iter().enumerate() {
            assert_eq!(float(v, key), cloud.positions[i][a] as f32);
        }
        let rgb = [uchar(v, "red"), uchar(v, "green"), uchar(v, "blue")];
        assert_eq!(rgb, PALETTE[labels[i] as usize % PALETTE.len()]);
    }
}

#[test]
fn ply_scalar_export_parses() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = PointCloud::new(vec![[0.5, -1.0, 2.0], [1e-3, 0.0, 7.25]], vec![], 0, None).unwrap();
    let path = dir.path().join("s.ply");
    write_ply(&path, &cloud, PlyAttribute::Scalar(&[3.0, 0.125])).unwrap();
    let ply = parse_ply(&path);
    let verts = &ply.payload["vertex"];
    assert_eq!(float(&verts[0], "scalar"), 3.0);
    assert_eq!(float(&verts[1], "scalar"), 0.125);
    assert_eq!(float(&verts[1], "z"), 7.25);
    assert!(write_ply(&path, &cloud, PlyAttribute::Scalar(&[1.0])).is_err());
}

#[test]
fn checkpoint_save_load_evaluate_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(6);
    let scene = small_scene(0);
    let val = small_scene(1000);
    let (net, _) = train(&cfg, std::slice::from_ref(&scene), &[], None).unwrap();
    let path = dir.path().join("ck.bin");
    save_network(&net, &path).unwrap();
    let loaded = load_network(&cfg, &path).unwrap();

    assert_eq!(loaded.store.all(), net.store.all());
    assert_eq!(loaded.predict_proba(&val).unwrap(), net.predict_proba(&val).unwrap());
    let a = evaluate(&net, std::slice::from_ref(&val), 1.0, 2).unwrap();
    let b = evaluate(&loaded, std::slice::from_ref(&val), 1.0, 2).unwrap();
    assert_eq!(a, b);

    // A second save of the loaded network is byte-identical.
    let again = dir.path().join("ck2.bin");
    save_network(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_rejects_corruption_and_mismatched_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(0);
    let (net, _) = train(&cfg, &[small_scene(0)], &[], None).unwrap();
    let path = dir.path().join("ck.bin");
    save_network(&net, &path).unwrap();

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes).unwrap();
    assert!(load_network(&cfg, &cut).is_err());

    let mut wider = cfg.clone();
    wider.model.base_width = 16;
    assert!(load_network(&wider, &path).is_err());
}
