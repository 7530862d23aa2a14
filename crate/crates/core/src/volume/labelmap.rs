use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::SegmentationVolume;
use crate::error::{Error, Result};

use super::{gzip, nifti, nrrd, Volume};

/// Output container for labelmaps and volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelmapFormat {
    #[default]
    Nrrd,
    Nifti,
    /// gzip-wrapped NIfTI-1 (`.nii.gz`)
    NiftiGz,
}

impl LabelmapFormat {
    /// Picks the format from a file name; anything unrecognised is NRRD.
    pub fn from_path(path: &Path) -> Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.ends_with(".nii.gz") {
            LabelmapFormat::NiftiGz
        } else if name.ends_with(".nii") {
            LabelmapFormat::Nifti
        } else {
            LabelmapFormat::Nrrd
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            LabelmapFormat::Nrrd => "nrrd",
            LabelmapFormat::Nifti => "nii",
            LabelmapFormat::NiftiGz => "nii.gz",
        }
    }
}

/// Writes `seg` as a 16-bit unsigned labelmap carrying `meta`'s geometry.
pub fn save_labelmap(seg: &SegmentationVolume, meta: &Volume, format: LabelmapFormat) -> Result<Vec<u8>> {
    if seg.dims() != meta.dims() {
        return Err(Error::DimsMismatch(format!(
            "segmentation {:?} vs volume {:?}",
            seg.dims(),
            meta.dims()
        )));
    }
    let labels = seg.to_dense();
    Ok(match format {
        LabelmapFormat::Nrrd => nrrd::write(meta.dims(), meta.affine(), nrrd::Payload::U16(&labels)),
        LabelmapFormat::Nifti => nifti::write(meta.dims(), meta.spacing(), meta.affine(), nifti::Payload::U16(&labels)),
        LabelmapFormat::NiftiGz => gzip(&nifti::write(
            meta.dims(),
            meta.spacing(),
            meta.affine(),
            nifti::Payload::U16(&labels),
        )),
    })
}

/// Writes a float32 copy of `v`. Mostly useful for producing test phantoms.
pub fn save_volume(v: &Volume, format: LabelmapFormat) -> Vec<u8> {
    match format {
        LabelmapFormat::Nrrd => nrrd::write(v.dims(), v.affine(), nrrd::Payload::F32(v.data())),
        LabelmapFormat::Nifti => nifti::write(v.dims(), v.spacing(), v.affine(), nifti::Payload::F32(v.data())),
        LabelmapFormat::NiftiGz => gzip(&nifti::write(
            v.dims(),
            v.spacing(),
            v.affine(),
            nifti::Payload::F32(v.data()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::MaskSlice;
    use crate::volume::{load_volume, Axis, Format};

    fn meta(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product();
        Volume::from_data(dims, vec![0.0; n]).unwrap()
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            LabelmapFormat::from_path(Path::new("a/b.nii.gz")),
            LabelmapFormat::NiftiGz
        );
        assert_eq!(LabelmapFormat::from_path(Path::new("x.NII")), LabelmapFormat::Nifti);
        assert_eq!(LabelmapFormat::from_path(Path::new("x.nrrd")), LabelmapFormat::Nrrd);
        assert_eq!(LabelmapFormat::from_path(Path::new("x.seg")), LabelmapFormat::Nrrd);
    }

    #[test]
    fn empty_segmentation_is_all_zero() {
        let m = meta([3, 2, 4]);
        let seg = SegmentationVolume::new(m.dims());
        for f in [LabelmapFormat::Nrrd, LabelmapFormat::Nifti, LabelmapFormat::NiftiGz] {
            let v = load_volume(&save_labelmap(&seg, &m, f).unwrap(), Format::Auto).unwrap();
            assert!(v.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn single_voxel_round_trips() {
        let m = meta([2, 2, 2]);
        let mut seg = SegmentationVolume::new(m.dims());
        let mut mask = MaskSlice::empty(2, 2);
        mask.set(0, 0, true);
        seg.merge_mask(1, Axis::K, 0, &mask).unwrap();
        for f in [LabelmapFormat::Nrrd, LabelmapFormat::Nifti] {
            let v = load_volume(&save_labelmap(&seg, &m, f).unwrap(), Format::Auto).unwrap();
            let nz: Vec<usize> = v
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(nz, vec![0]);
        }
    }

    #[test]
    fn dims_must_match() {
        let seg = SegmentationVolume::new([3, 3, 3]);
        assert!(matches!(
            save_labelmap(&seg, &meta([2, 2, 2]), LabelmapFormat::Nrrd),
            Err(Error::DimsMismatch(_))
        ));
    }
}
