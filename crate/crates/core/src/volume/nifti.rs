//! Single-file NIfTI-1 (`n+1`) reading and writing.

use crate::error::{Error, Result};

use super::{Affine, Dims, Volume};

pub(crate) const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

mod off {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

pub(crate) fn has_magic(bytes: &[u8]) -> bool {
    bytes.len() >= HEADER_SIZE && &bytes[off::MAGIC..off::MAGIC + 4] == MAGIC
}

#[derive(Clone, Copy)]
pub(super) enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if let Endian::Big = self.endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::U8,
            256 => DataType::I8,
            4 => DataType::I16,
            512 => DataType::U16,
            8 => DataType::I32,
            768 => DataType::U32,
            1024 => DataType::I64,
            1280 => DataType::U64,
            16 => DataType::F32,
            64 => DataType::F64,
            32 | 1792 | 2048 => return Err(Error::UnsupportedDatatype(format!("complex voxels (code {code})"))),
            128 | 2304 => return Err(Error::UnsupportedDatatype(format!("RGB voxels (code {code})"))),
            other => return Err(Error::UnsupportedDatatype(format!("datatype code {other}"))),
        })
    }

    pub(super) fn size(self) -> usize {
        match self {
            DataType::U8 | DataType::I8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::I64 | DataType::U64 | DataType::F64 => 8,
        }
    }
}

pub(crate) fn read(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    let endian = if i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::MalformedHeader("sizeof_hdr is not 348".into()));
    };
    if !has_magic(bytes) {
        return Err(Error::MalformedHeader("magic is not \"n+1\\0\"".into()));
    }
    let r = Reader { buf: bytes, endian };
    debug_assert_eq!(r.i32(off::SIZEOF_HDR), HEADER_SIZE as i32);

    let ndim = r.i16(off::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims: Dims = [1, 1, 1];
    for d in 1..=ndim as usize {
        let n = r.i16(off::DIM + 2 * d);
        if n < 1 {
            return Err(Error::MalformedHeader(format!("dim[{d}] = {n}")));
        }
        if d <= 3 {
            dims[d - 1] = n as usize;
        } else if n != 1 {
            return Err(Error::UnsupportedDatatype(format!(
                "{ndim}-dimensional volume with dim[{d}] = {n}"
            )));
        }
    }

    let dtype = DataType::from_code(r.i16(off::DATATYPE))?;
    let bitpix = r.i16(off::BITPIX);
    if bitpix != 0 && bitpix as usize != dtype.size() * 8 {
        log::warn!("bitpix {bitpix} disagrees with datatype {dtype:?}; trusting datatype");
    }

    let pixdim: Vec<f32> = (0..8).map(|d| r.f32(off::PIXDIM + 4 * d)).collect();
    let spacing = [1, 2, 3].map(|d| {
        let p = pixdim[d].abs() as f64;
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    });

    let vox_offset = r.f32(off::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let nvox = dims[0] * dims[1] * dims[2];
    let need = nvox * dtype.size();
    let available = bytes.len().saturating_sub(vox_offset);
    if available < need {
        return Err(Error::TruncatedData {
            expected: need,
            found: available,
        });
    }
    let raw = &bytes[vox_offset..vox_offset + need];
    let mut data = decode(raw, dtype, endian);

    let slope = r.f32(off::SCL_SLOPE);
    let inter = r.f32(off::SCL_INTER);
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let affine = read_affine(&r, &pixdim, spacing);
    Volume::new(dims, spacing, affine, data)
}

fn read_affine(r: &Reader<'_>, pixdim: &[f32], spacing: [f64; 3]) -> Affine {
    let sform = r.i16(off::SFORM_CODE);
    let qform = r.i16(off::QFORM_CODE);
    let mut a = super::identity_affine();
    if sform > 0 {
        for (row, out) in a.iter_mut().take(3).enumerate() {
            for (col, v) in out.iter_mut().enumerate() {
                *v = r.f32(off::SROW_X + 16 * row + 4 * col) as f64;
            }
        }
    } else if qform > 0 {
        let [b, c, d] = [0, 1, 2].map(|n| r.f32(off::QUATERN_B + 4 * n) as f64);
        let a2 = (1.0 - (b * b + c * c + d * d)).max(0.0);
        let qa = a2.sqrt();
        let rot = [
            [
                qa * qa + b * b - c * c - d * d,
                2.0 * (b * c - qa * d),
                2.0 * (b * d + qa * c),
            ],
            [
                2.0 * (b * c + qa * d),
                qa * qa + c * c - b * b - d * d,
                2.0 * (c * d - qa * b),
            ],
            [
                2.0 * (b * d - qa * c),
                2.0 * (c * d + qa * b),
                qa * qa + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [spacing[0], spacing[1], spacing[2] * qfac];
        for row in 0..3 {
            for col in 0..3 {
                a[row][col] = rot[row][col] * scale[col];
            }
            a[row][3] = r.f32(off::QOFFSET_X + 4 * row) as f64;
        }
    } else {
        for d in 0..3 {
            a[d][d] = spacing[d];
        }
    }
    a
}

pub(super) fn decode(raw: &[u8], dtype: DataType, endian: Endian) -> Vec<f32> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            raw.chunks_exact($n)
                .map(|c| {
                    let b: [u8; $n] = c.try_into().unwrap();
                    let v = match endian {
                        Endian::Little => <$t>::from_le_bytes(b),
                        Endian::Big => <$t>::from_be_bytes(b),
                    };
                    v as f32
                })
                .collect()
        };
    }
    match dtype {
        DataType::U8 => raw.iter().map(|&b| b as f32).collect(),
        DataType::I8 => raw.iter().map(|&b| b as i8 as f32).collect(),
        DataType::I16 => conv!(i16, 2),
        DataType::U16 => conv!(u16, 2),
        DataType::I32 => conv!(i32, 4),
        DataType::U32 => conv!(u32, 4),
        DataType::I64 => conv!(i64, 8),
        DataType::U64 => conv!(u64, 8),
        DataType::F32 => conv!(f32, 4),
        DataType::F64 => conv!(f64, 8),
    }
}

/// Voxel payload for [`write`].
pub(crate) enum Payload<'a> {
    U16(&'a [u16]),
    F32(&'a [f32]),
}

/// Encodes a little-endian single-file NIfTI-1 image with the sform set from
/// `affine`.
pub(crate) fn write(dims: Dims, spacing: [f64; 3], affine: &Affine, payload: Payload<'_>) -> Vec<u8> {
    let (code, bitpix, body): (i16, i16, Vec<u8>) = match payload {
        Payload::U16(d) => (512, 16, d.iter().flat_map(|v| v.to_le_bytes()).collect()),
        Payload::F32(d) => (16, 32, d.iter().flat_map(|v| v.to_le_bytes()).collect()),
    };
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);

    put(&mut h, off::SIZEOF_HDR, &(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (d, v) in dim.iter().enumerate() {
        put(&mut h, off::DIM + 2 * d, &v.to_le_bytes());
    }
    put(&mut h, off::DATATYPE, &code.to_le_bytes());
    put(&mut h, off::BITPIX, &bitpix.to_le_bytes());
    let pixdim: [f32; 8] = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (d, v) in pixdim.iter().enumerate() {
        put(&mut h, off::PIXDIM + 4 * d, &v.to_le_bytes());
    }
    put(&mut h, off::VOX_OFFSET, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, off::SCL_SLOPE, &1.0f32.to_le_bytes());
    // millimetres
    h[off::XYZT_UNITS] = 2;
    put(&mut h, off::SFORM_CODE, &1i16.to_le_bytes());
    for (row, values) in affine.iter().take(3).enumerate() {
        for (col, v) in values.iter().enumerate() {
            put(&mut h, off::SROW_X + 16 * row + 4 * col, &(*v as f32).to_le_bytes());
        }
    }
    put(&mut h, off::MAGIC, MAGIC);
    h.extend_from_slice(&body);
    h
}
