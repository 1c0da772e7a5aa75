use std::fs;

use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;
use rand::Rng;
use tempfile::tempdir;

use propeller_lab::datamodel::{read_dataset, read_dataset_with, read_image, write_dataset, write_dataset_with, write_image, Extras};
use propeller_lab::rng::stream_rng;
use propeller_lab::trajectory::PropellerSpec;
use propeller_lab::{AcquisitionMeta, Error, KSpaceDataset, NoisePrescan, C64};

fn random_dataset(spec: PropellerSpec, coils: usize, seed: u64, f32_exact: bool) -> KSpaceDataset {
    let mut rng = stream_rng(seed, &[]);
    let (b, l, r) = (spec.kept_blades(), spec.lines_per_blade, spec.readout);
    let mask = Array3::from_shape_fn((b, l, r), |_| rng.random::<f64>() < 0.7);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        if f32_exact {
            C64::new(v.re as f32 as f64, v.im as f32 as f64)
        } else {
            v
        }
    };
    let samples = Array4::from_shape_fn((b, coils, l, r), |_| draw(&mut rng));
    let prescan = NoisePrescan::new(Array2::from_shape_fn((coils, 10 * coils), |_| draw(&mut rng))).unwrap();
    KSpaceDataset::masked(spec, samples, mask, Some(prescan), AcquisitionMeta::lung_t2_propeller()).unwrap()
}

#[test]
fn tiny_dataset_payload_size() {
    let spec = PropellerSpec::new(4, 1, 2, 1, 0);
    let samples = Array4::from_elem((1, 1, 2, 4), C64::new(1.0, -2.0));
    let ds = KSpaceDataset::new(spec, samples, Array3::from_elem((1, 2, 4), true), None, AcquisitionMeta::default()).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("tiny.pks");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(fs::metadata(path.join("samples.bin")).unwrap().len(), 2 * 4 * 8);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(path.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["arrays"]["samples"]["dtype"], "c64le");
    assert_eq!(manifest["shape"], serde_json::json!([1, 1, 2, 4]));
}

#[test]
fn desk_sized_roundtrip_is_bitwise() {
    let dir = tempdir().unwrap();
    for (i, exact) in [true, false].into_iter().enumerate() {
        let ds = random_dataset(PropellerSpec::desk(), 8, 40 + i as u64, exact);
        let path = dir.path().join(format!("d{i}.pks"));
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        let bits = |d: &KSpaceDataset| d.samples().iter().map(|v| (v.re.to_bits(), v.im.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!(back, ds);
    }
}

#[test]
fn nonzero_masked_out_sample_rejected() {
    let spec = PropellerSpec::new(8, 1, 2, 1, 0);
    let mut mask = Array3::from_elem((1, 2, 8), true);
    mask[[0, 1, 3]] = false;
    let samples = Array4::from_elem((1, 1, 2, 8), C64::new(1.0, 0.0));
    let err = KSpaceDataset::new(spec, samples, mask, None, AcquisitionMeta::default()).unwrap_err();
    assert!(matches!(err, Error::Invariant(_)), "{err}");
}

#[test]
fn coil_count_mismatch_is_payload_error() {
    let ds = random_dataset(PropellerSpec::new(16, 2, 4, 1, 0), 4, 1, true);
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.pks");
    write_dataset(&ds, &path).unwrap();
    let mpath = path.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    m["shape"][1] = 8.into();
    m["arrays"]["samples"]["shape"][1] = 8.into();
    fs::write(&mpath, m.to_string()).unwrap();
    let err = read_dataset(&path).unwrap_err();
    assert!(matches!(err, Error::PayloadMismatch { ref name, .. } if name == "samples"), "{err}");
}

#[test]
fn empty_manifest_is_malformed() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("manifest.json"), "").unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Manifest(_))));
}

#[test]
fn nan_in_payload_rejected() {
    let ds = random_dataset(PropellerSpec::new(16, 2, 4, 1, 0), 2, 2, false);
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.pks");
    write_dataset(&ds, &path).unwrap();
    let blob = path.join("samples.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[..8].copy_from_slice(&f64::NAN.to_le_bytes());
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::NonFinite(_))));
}

#[test]
fn extras_and_images_roundtrip() {
    let ds = random_dataset(PropellerSpec::new(16, 3, 4, 2, 2), 2, 3, false);
    let mut rng = stream_rng(9, &[]);
    let img = Array2::from_shape_fn((16, 16), |_| C64::new(rng.random(), rng.random()));
    let mut extras = Extras::new();
    extras.insert("truth".into(), (vec![16, 16], img.iter().copied().collect()));
    let dir = tempdir().unwrap();
    write_dataset_with(&ds, &extras, &dir.path().join("d.pks")).unwrap();
    let (back, got) = read_dataset_with(&dir.path().join("d.pks")).unwrap();
    assert_eq!(back, ds);
    assert_eq!(got, extras);
    write_image(&img, &dir.path().join("img.pks")).unwrap();
    assert_eq!(read_image(&dir.path().join("img.pks")).unwrap(), img);
}

#[test]
fn reserved_extra_name_rejected() {
    let ds = random_dataset(PropellerSpec::new(16, 1, 4, 1, 0), 1, 4, true);
    let mut extras = Extras::new();
    extras.insert("mask".into(), (vec![1], vec![C64::default()]));
    let dir = tempdir().unwrap();
    assert!(matches!(write_dataset_with(&ds, &extras, dir.path()), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roundtrip_is_identity(
        half_lines in 1usize..4,
        extra_read in 0usize..5,
        nblades in 1usize..5,
        step in 1usize..3,
        coils in 1usize..4,
        seed in 0u64..1000,
        exact in any::<bool>(),
        te in proptest::option::of(1.0f64..200.0),
    ) {
        let lines = 2 * half_lines;
        let mut spec = PropellerSpec::new(2 * lines + extra_read, nblades.max(step), lines, 1, 0);
        spec.blade_step = step;
        let mut ds = random_dataset(spec, coils, seed, exact);
        ds.meta.te_ms = te;
        ds.meta.extra.insert("scanner".into(), serde_json::json!("desk"));
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pks");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        for ((b, _, l, r), v) in back.samples().indexed_iter() {
            if !back.mask()[[b, l, r]] {
                prop_assert_eq!(*v, C64::default());
            }
        }
        prop_assert_eq!(back, ds);
    }
}
