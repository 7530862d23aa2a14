//! Attached-header NRRD reading and writing.
//!
//! Only `raw` and `gzip` encodings are handled. World coordinates are kept in
//! RAS internally; LPS and LAS spaces are flipped on the way in and files are
//! always written in LPS, which is what most viewers expect from NRRD.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::nifti::{decode, DataType, Endian};
use super::{gunzip, gzip, Affine, Dims, Volume};

const MAGIC: &[u8] = b"NRRD000";

pub(crate) fn has_magic(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

fn parse_type(s: &str) -> Result<DataType> {
    Ok(match s {
        "signed char" | "int8" | "int8_t" => DataType::I8,
        "uchar" | "unsigned char" | "uint8" | "uint8_t" => DataType::U8,
        "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => DataType::I16,
        "ushort" | "unsigned short" | "unsigned short int" | "uint16" | "uint16_t" => DataType::U16,
        "int" | "signed int" | "int32" | "int32_t" => DataType::I32,
        "uint" | "unsigned int" | "uint32" | "uint32_t" => DataType::U32,
        "longlong"
        | "long long"
        | "long long int"
        | "signed long long"
        | "signed long long int"
        | "int64"
        | "int64_t" => DataType::I64,
        "ulonglong" | "unsigned long long" | "unsigned long long int" | "uint64" | "uint64_t" => DataType::U64,
        "float" => DataType::F32,
        "double" => DataType::F64,
        other => return Err(Error::UnsupportedDatatype(format!("NRRD type {other:?}"))),
    })
}

/// Parses `(a,b,c)`.
fn parse_vector(s: &str) -> Result<[f64; 3]> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::MalformedHeader(format!("bad vector {s:?}")))?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader(format!("bad vector {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| Error::MalformedHeader(format!("expected 3 components in {s:?}")))
}

fn parse_directions(s: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        if rest.starts_with("none") {
            return Err(Error::UnsupportedDatatype(format!(
                "non-spatial axis in space directions {s:?}"
            )));
        }
        let end = rest
            .find(')')
            .ok_or_else(|| Error::MalformedHeader(format!("bad space directions {s:?}")))?;
        out.push(parse_vector(&rest[..=end])?);
        rest = rest[end + 1..].trim_start();
    }
    Ok(out)
}

/// Sign flips taking the named space into RAS.
fn space_flip(space: Option<&str>) -> [f64; 3] {
    match space {
        Some("left-posterior-superior") | Some("LPS") => [-1.0, -1.0, 1.0],
        Some("left-anterior-superior") | Some("LAS") => [-1.0, 1.0, 1.0],
        _ => [1.0, 1.0, 1.0],
    }
}

pub(crate) fn read(bytes: &[u8]) -> Result<Volume> {
    if !has_magic(bytes) {
        return Err(Error::MalformedHeader("missing NRRD magic".into()));
    }
    let mut fields: HashMap<String, String> = HashMap::new();
    let mut pos = 0usize;
    let mut first = true;
    let data_start = loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(Error::MalformedHeader("header not terminated by a blank line".into()));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| Error::MalformedHeader("non-UTF-8 header line".into()))?
            .trim_end_matches('\r');
        pos += nl + 1;
        if first {
            first = false;
            continue;
        }
        if line.is_empty() {
            break pos;
        }
        if line.starts_with('#') || line.contains(":=") {
            continue;
        }
        let (k, v) = line
            .split_once(": ")
            .ok_or_else(|| Error::MalformedHeader(format!("bad header line {line:?}")))?;
        fields.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    };

    let get = |k: &str| fields.get(k).map(String::as_str);
    if get("data file").or(get("datafile")).is_some() {
        return Err(Error::UnsupportedDatatype("detached NRRD data files".into()));
    }
    let dtype = parse_type(get("type").ok_or_else(|| Error::MalformedHeader("missing type".into()))?)?;
    let ndim: usize = get("dimension")
        .ok_or_else(|| Error::MalformedHeader("missing dimension".into()))?
        .parse()
        .map_err(|_| Error::MalformedHeader("bad dimension".into()))?;
    let sizes: Vec<usize> = get("sizes")
        .ok_or_else(|| Error::MalformedHeader("missing sizes".into()))?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader("bad sizes".into()))?;
    if ndim == 0 || sizes.len() != ndim || sizes.contains(&0) {
        return Err(Error::MalformedHeader(format!("dimension {ndim} with sizes {sizes:?}")));
    }
    if sizes.iter().skip(3).any(|&s| s != 1) {
        return Err(Error::UnsupportedDatatype(format!("{ndim}-dimensional NRRD")));
    }
    let mut dims: Dims = [1, 1, 1];
    for (d, &s) in sizes.iter().take(3).enumerate() {
        dims[d] = s;
    }

    let endian = match get("endian") {
        Some("big") => Endian::Big,
        _ => Endian::Little,
    };
    let payload = &bytes[data_start..];
    let decoded;
    let body: &[u8] = match get("encoding") {
        Some("raw") => payload,
        Some("gzip") | Some("gz") => {
            decoded = gunzip(payload)?;
            &decoded
        }
        Some(other) => return Err(Error::UnsupportedDatatype(format!("NRRD encoding {other:?}"))),
        None => return Err(Error::MalformedHeader("missing encoding".into())),
    };
    let need = dims.iter().product::<usize>() * dtype.size();
    if body.len() < need {
        return Err(Error::TruncatedData {
            expected: need,
            found: body.len(),
        });
    }
    let data = decode(&body[..need], dtype, endian);

    let flip = space_flip(get("space"));
    let mut affine = super::identity_affine();
    let mut spacing = [1.0; 3];
    if let Some(dirs) = get("space directions") {
        let dirs = parse_directions(dirs)?;
        if dirs.len() < ndim.min(3) {
            return Err(Error::MalformedHeader("too few space directions".into()));
        }
        for (col, dir) in dirs.iter().take(3).enumerate() {
            for row in 0..3 {
                affine[row][col] = flip[row] * dir[row];
            }
            spacing[col] = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
    } else if let Some(sp) = get("spacings") {
        for (d, v) in sp.split_whitespace().take(3).enumerate() {
            if let Ok(x) = v.parse::<f64>() {
                if x.is_finite() && x > 0.0 {
                    spacing[d] = x;
                    affine[d][d] = x;
                }
            }
        }
    }
    if let Some(origin) = get("space origin") {
        let o = parse_vector(origin)?;
        for row in 0..3 {
            affine[row][3] = flip[row] * o[row];
        }
    }
    Volume::new(dims, spacing, affine, data)
}

pub(crate) enum Payload<'a> {
    U16(&'a [u16]),
    F32(&'a [f32]),
}

/// Encodes a gzip-compressed, attached-header NRRD in LPS space.
pub(crate) fn write(dims: Dims, affine: &Affine, payload: Payload<'_>) -> Vec<u8> {
    let (type_name, body): (&str, Vec<u8>) = match payload {
        Payload::U16(d) => ("unsigned short", d.iter().flat_map(|v| v.to_le_bytes()).collect()),
        Payload::F32(d) => ("float", d.iter().flat_map(|v| v.to_le_bytes()).collect()),
    };
    let flip = space_flip(Some("LPS"));
    let dir = |col: usize| {
        format!(
            "({},{},{})",
            flip[0] * affine[0][col],
            flip[1] * affine[1][col],
            flip[2] * affine[2][col]
        )
    };
    let mut out = format!(
        "NRRD0004\n\
         # Complete NRRD file format specification at:\n\
         # http://teem.sourceforge.net/nrrd/format.html\n\
         type: {type_name}\n\
         dimension: 3\n\
         space: left-posterior-superior\n\
         sizes: {} {} {}\n\
         space directions: {} {} {}\n\
         kinds: domain domain domain\n\
         endian: little\n\
         encoding: gzip\n\
         space origin: ({},{},{})\n\n",
        dims[0],
        dims[1],
        dims[2],
        dir(0),
        dir(1),
        dir(2),
        flip[0] * affine[0][3],
        flip[1] * affine[1][3],
        flip[2] * affine[2][3],
    )
    .into_bytes();
    out.extend_from_slice(&gzip(&body));
    out
}
