//! Volumes, slices, and the file formats they come from.
//!
//! Voxel data is always held as `f32` in i-fastest order:
//! `index = i + nx * (j + ny * k)`.

mod labelmap;
mod nifti;
mod nrrd;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

pub use labelmap::{save_labelmap, save_volume, LabelmapFormat};
pub use render::{render_slice, render_slice_default, SliceImage, WindowLevel};

/// Input container format for [`load_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Nifti1,
    Nrrd,
    Auto,
}

/// Slicing axis, named after the voxel index it fixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    #[serde(alias = "i")]
    I,
    #[serde(alias = "j")]
    J,
    #[serde(alias = "k")]
    K,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::I, Axis::J, Axis::K];

    pub fn index(self) -> usize {
        match self {
            Axis::I => 0,
            Axis::J => 1,
            Axis::K => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::I => "I",
            Axis::J => "J",
            Axis::K => "K",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" => Ok(Axis::I),
            "J" | "j" => Ok(Axis::J),
            "K" | "k" => Ok(Axis::K),
            other => Err(Error::InvalidRequest(format!("unknown axis {other:?}"))),
        }
    }
}

/// Voxel counts along i, j, k.
pub type Dims = [usize; 3];

/// Row-major 4x4 voxel-to-world transform.
pub type Affine = [[f64; 4]; 4];

pub fn identity_affine() -> Affine {
    let mut a = [[0.0; 4]; 4];
    for (d, row) in a.iter_mut().enumerate() {
        row[d] = 1.0;
    }
    a
}

/// Number of slices along `axis`.
pub fn axis_len(dims: Dims, axis: Axis) -> usize {
    dims[axis.index()]
}

/// `(rows, cols)` of a slice taken along `axis`.
///
/// K slices run rows over j and cols over i; J slices rows over k, cols over
/// i; I slices rows over k, cols over j.
pub fn slice_shape(dims: Dims, axis: Axis) -> (usize, usize) {
    let [nx, ny, nz] = dims;
    match axis {
        Axis::K => (ny, nx),
        Axis::J => (nz, nx),
        Axis::I => (nz, ny),
    }
}

/// Voxel `(i, j, k)` addressed by pixel `(row, col)` of slice `index`.
pub fn voxel_of(axis: Axis, index: usize, row: usize, col: usize) -> [usize; 3] {
    match axis {
        Axis::K => [col, row, index],
        Axis::J => [col, index, row],
        Axis::I => [index, col, row],
    }
}

pub fn linear_index(dims: Dims, [i, j, k]: [usize; 3]) -> usize {
    i + dims[0] * (j + dims[1] * k)
}

/// 256-bit content digest of a volume.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// An immutable scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    affine: Affine,
    data: Vec<f32>,
    intensity_range: (f32, f32),
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], affine: Affine, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::MalformedHeader(format!("zero-sized dimension in {dims:?}")));
        }
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(data.len()) {
            return Err(Error::DimsMismatch(format!("{} voxels for dims {dims:?}", data.len())));
        }
        if upper_det(&affine).abs() < 1e-12 || !upper_det(&affine).is_finite() {
            return Err(Error::MalformedHeader("affine is singular".into()));
        }
        let intensity_range = finite_range(&data);
        Ok(Volume {
            dims,
            spacing,
            affine,
            data,
            intensity_range,
        })
    }

    /// Unit spacing, identity affine.
    pub fn from_data(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Volume::new(dims, [1.0; 3], identity_affine(), data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn intensity_range(&self) -> (f32, f32) {
        self.intensity_range
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[linear_index(self.dims, [i, j, k])]
    }

    /// Copies slice `index` along `axis`.
    pub fn extract_slice(&self, axis: Axis, index: usize) -> Result<ScalarSlice> {
        let len = axis_len(self.dims, axis);
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let (rows, cols) = slice_shape(self.dims, axis);
        let [nx, ny, _] = self.dims;
        let mut values = Vec::with_capacity(rows * cols);
        match axis {
            Axis::K => {
                let start = nx * ny * index;
                values.extend_from_slice(&self.data[start..start + nx * ny]);
            }
            Axis::J => {
                for k in 0..rows {
                    let start = nx * (index + ny * k);
                    values.extend_from_slice(&self.data[start..start + nx]);
                }
            }
            Axis::I => {
                for k in 0..rows {
                    for j in 0..cols {
                        values.push(self.data[index + nx * (j + ny * k)]);
                    }
                }
            }
        }
        Ok(ScalarSlice {
            axis,
            index,
            rows,
            cols,
            values,
        })
    }

    /// SHA-256 over the dims (u64 little-endian) followed by the voxel data
    /// (f32 little-endian).
    pub fn content_digest(&self) -> Digest {
        let mut h = Sha256::new();
        for d in self.dims {
            h.update((d as u64).to_le_bytes());
        }
        let mut buf = Vec::with_capacity(4 * 4096);
        for chunk in self.data.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            h.update(&buf);
        }
        Digest(h.finalize().into())
    }
}

fn upper_det(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn finite_range(data: &[f32]) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in data.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// A 2D scalar slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSlice {
    pub axis: Axis,
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl ScalarSlice {
    pub fn new(axis: Axis, index: usize, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::DimsMismatch(format!(
                "{} values for a {rows}x{cols} slice",
                values.len()
            )));
        }
        Ok(ScalarSlice {
            axis,
            index,
            rows,
            cols,
            values,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// `(min, max)` over finite values; `(0, 0)` when there are none.
    pub fn range(&self) -> (f32, f32) {
        finite_range(&self.values)
    }
}

/// Reads a volume from raw file bytes.
pub fn load_volume(bytes: &[u8], format: Format) -> Result<Volume> {
    let gz = is_gzip(bytes);
    let owned;
    let payload: &[u8] = if gz && format != Format::Nrrd {
        owned = gunzip(bytes)?;
        &owned
    } else {
        bytes
    };
    match format {
        Format::Nifti1 => nifti::read(payload),
        Format::Nrrd => nrrd::read(bytes),
        Format::Auto => {
            if nrrd::has_magic(payload) {
                nrrd::read(payload)
            } else if nifti::has_magic(payload) {
                nifti::read(payload)
            } else {
                Err(Error::MalformedHeader("neither NIfTI-1 nor NRRD magic found".into()))
            }
        }
    }
}

pub(crate) fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub(crate) fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    use std::io::Read;
    let mut out = Vec::new();
    flate2::read::MultiGzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::MalformedHeader(format!("gzip: {e}")))?;
    Ok(out)
}

pub(crate) fn gzip(bytes: &[u8]) -> Vec<u8> {
    use std::io::Write;
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(bytes).expect("write to Vec");
    enc.finish().expect("finish gzip into Vec")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume {
        Volume::from_data([2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn k_slices_follow_canonical_order() {
        let v = ramp();
        let s0 = v.extract_slice(Axis::K, 0).unwrap();
        assert_eq!((s0.rows, s0.cols), (2, 2));
        assert_eq!(s0.values, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(v.extract_slice(Axis::K, 1).unwrap().values, vec![4.0, 5.0, 6.0, 7.0]);
        assert!(matches!(
            v.extract_slice(Axis::K, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn slices_reassemble_volume_on_every_axis() {
        let dims = [3, 4, 5];
        let data: Vec<f32> = (0..60).map(|v| v as f32 * 0.5).collect();
        let v = Volume::from_data(dims, data.clone()).unwrap();
        for axis in Axis::ALL {
            let mut rebuilt = vec![f32::NAN; data.len()];
            for idx in 0..axis_len(dims, axis) {
                let s = v.extract_slice(axis, idx).unwrap();
                assert_eq!((s.rows, s.cols), slice_shape(dims, axis));
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        rebuilt[linear_index(dims, voxel_of(axis, idx, r, c))] = s.at(r, c);
                    }
                }
            }
            assert_eq!(rebuilt, data, "axis {axis}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Volume::from_data([0, 1, 1], vec![]).is_err());
        assert!(Volume::from_data([2, 1, 1], vec![1.0]).is_err());
        let mut a = identity_affine();
        a[2][2] = 0.0;
        assert!(Volume::new([1, 1, 1], [1.0; 3], a, vec![0.0]).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = ramp();
        let b = ramp();
        assert_eq!(a.content_digest(), b.content_digest());
        let mut data = a.data().to_vec();
        data[5] += 1.0;
        let c = Volume::from_data([2, 2, 2], data).unwrap();
        assert_ne!(a.content_digest(), c.content_digest());
        // same data, different shape
        let d = Volume::from_data([4, 2, 1], a.data().to_vec()).unwrap();
        assert_ne!(a.content_digest(), d.content_digest());
        let hex = a.content_digest().to_hex();
        assert_eq!(Digest::from_hex(&hex), Some(a.content_digest()));
    }

    #[test]
    fn intensity_range_occurs_in_data() {
        let v = ramp();
        assert_eq!(v.intensity_range(), (0.0, 7.0));
    }

    #[test]
    fn auto_detect_rejects_unknown_magic() {
        let junk = vec![0u8; 400];
        assert!(matches!(
            load_volume(&junk, Format::Auto),
            Err(Error::MalformedHeader(_))
        ));
    }
}
