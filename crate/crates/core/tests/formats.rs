use std::path::Path;

use proptest::prelude::*;

use volprompt::annotation::{rle_decode, rle_encode, MaskSlice, SegmentationVolume};
use volprompt::volume::{load_volume, save_labelmap, save_volume, Axis, Format, LabelmapFormat, Volume};
use volprompt::Error;

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

/// Voxel (i, j, k) of the 2x2x2 ramp holds i + 2j + 4k.
fn ramp_value(i: usize, j: usize, k: usize) -> f32 {
    (i + 2 * j + 4 * k) as f32
}

fn assert_ramp(v: &Volume, f: impl Fn(f32) -> f32) {
    assert_eq!(v.dims(), [2, 2, 2]);
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                assert_eq!(v.get(i, j, k), f(ramp_value(i, j, k)), "voxel ({i},{j},{k})");
            }
        }
    }
}

fn assert_affine(v: &Volume, expected: [[f64; 4]; 3]) {
    for (r, row) in expected.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            assert!(
                (v.affine()[r][c] - x).abs() < 1e-6,
                "affine[{r}][{c}] = {}",
                v.affine()[r][c]
            );
        }
    }
}

#[test]
fn nifti_int16_ramp_matches_nibabel() {
    for name in ["ramp_2x2x2_i16.nii", "ramp_2x2x2_i16.nii.gz"] {
        let v = load_volume(&fixture(name), Format::Auto).unwrap();
        assert_ramp(&v, |x| x);
        assert_eq!(v.spacing(), [1.5, 2.0, 2.5]);
        assert_affine(
            &v,
            [[1.5, 0.0, 0.0, -10.0], [0.0, 2.0, 0.0, 20.0], [0.0, 0.0, 2.5, 30.0]],
        );
    }
}

#[test]
fn nifti_scaling_is_applied() {
    let v = load_volume(&fixture("ramp_scaled.nii"), Format::Nifti1).unwrap();
    assert_ramp(&v, |x| x * 2.0 + 1.0);
}

#[test]
fn nifti_complex_is_rejected() {
    let err = load_volume(&fixture("complex.nii"), Format::Auto).unwrap_err();
    assert!(matches!(err, Error::UnsupportedDatatype(_)), "{err}");
}

#[test]
fn nrrd_raw_constant() {
    let v = load_volume(&fixture("const_1x1x3.nrrd"), Format::Nrrd).unwrap();
    assert_eq!(v.dims(), [1, 1, 3]);
    assert!(v.data().iter().all(|&x| x == 5.0));
}

#[test]
fn nrrd_lps_is_held_in_ras() {
    let v = load_volume(&fixture("ramp_lps.nrrd"), Format::Auto).unwrap();
    assert_ramp(&v, |x| x);
    assert_affine(
        &v,
        [[-1.5, 0.0, 0.0, -10.0], [0.0, -2.0, 0.0, 20.0], [0.0, 0.0, 2.5, 30.0]],
    );
}

#[test]
fn fixture_slices_follow_axis_conventions() {
    let v = load_volume(&fixture("ramp_2x2x2_i16.nii"), Format::Auto).unwrap();
    let k1 = v.extract_slice(Axis::K, 1).unwrap();
    assert_eq!(k1.values, vec![4.0, 5.0, 6.0, 7.0]);
    let j0 = v.extract_slice(Axis::J, 0).unwrap();
    assert_eq!(j0.values, vec![0.0, 1.0, 4.0, 5.0]);
    let i1 = v.extract_slice(Axis::I, 1).unwrap();
    assert_eq!(i1.values, vec![1.0, 3.0, 5.0, 7.0]);
}

fn arb_volume() -> impl Strategy<Value = Volume> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(a, b, c)| {
        prop::collection::vec(-1000.0f32..1000.0, a * b * c)
            .prop_map(move |data| Volume::from_data([a, b, c], data).unwrap())
    })
}

proptest! {
    #[test]
    fn volumes_round_trip_through_every_format(v in arb_volume()) {
        for fmt in [LabelmapFormat::Nrrd, LabelmapFormat::Nifti, LabelmapFormat::NiftiGz] {
            let back = load_volume(&save_volume(&v, fmt), Format::Auto).unwrap();
            prop_assert_eq!(back.dims(), v.dims());
            prop_assert_eq!(back.data(), v.data());
        }
    }

    #[test]
    fn labelmaps_round_trip(
        dims in (1usize..6, 1usize..6, 1usize..6),
        seed in any::<u64>(),
        label in 1u16..=u16::MAX,
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let meta = Volume::from_data(dims, vec![0.0; dims.iter().product()]).unwrap();
        let mut seg = SegmentationVolume::new(dims);
        let mut state = seed;
        for k in 0..dims[2] {
            let mask = MaskSlice::from_fn(dims[1], dims[0], |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state >> 63 == 1
            });
            seg.merge_mask(label, Axis::K, k, &mask).unwrap();
        }
        let dense = seg.to_dense();
        for fmt in [LabelmapFormat::Nrrd, LabelmapFormat::Nifti, LabelmapFormat::NiftiGz] {
            let back = load_volume(&save_labelmap(&seg, &meta, fmt).unwrap(), Format::Auto).unwrap();
            let values: Vec<u16> = back.data().iter().map(|&x| x as u16).collect();
            prop_assert_eq!(&values, &dense);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn rle_round_trips(bits in prop::collection::vec(any::<bool>(), 0..200)) {
        let runs = rle_encode(&bits);
        prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), bits.len());
        prop_assert!(runs.iter().skip(1).all(|&r| r > 0));
        prop_assert_eq!(rle_decode(&runs, bits.len()).unwrap(), bits);
    }
}
