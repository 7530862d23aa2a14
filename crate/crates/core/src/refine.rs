//! Manual mask editing: a round brush and 4-neighbourhood open/close.
//!
//! Pixels outside the slice count as background for every operation here.

use serde::{Deserialize, Serialize};

use crate::annotation::MaskSlice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrushAction {
    Paint,
    Erase,
}

/// `{"slice": i, "center": [row, col], "radius": r, "action": "paint"|"erase"}`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrushOp {
    pub slice: usize,
    pub center: [i64; 2],
    pub radius: u32,
    pub action: BrushAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphKind {
    Open,
    Close,
}

/// `{"slice": i, "morph": "open"|"close", "radius": r}`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphOp {
    pub slice: usize,
    pub morph: MorphKind,
    pub radius: u32,
}

/// Either refinement request body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RefineOp {
    Brush(BrushOp),
    Morph(MorphOp),
}

impl RefineOp {
    pub fn slice(&self) -> usize {
        match self {
            RefineOp::Brush(b) => b.slice,
            RefineOp::Morph(m) => m.slice,
        }
    }

    pub fn apply(&self, mask: &MaskSlice) -> Result<MaskSlice> {
        match self {
            RefineOp::Brush(b) => apply_brush(mask, b),
            RefineOp::Morph(m) => morph(mask, m.morph, m.radius),
        }
    }
}

pub fn apply_brush(mask: &MaskSlice, op: &BrushOp) -> Result<MaskSlice> {
    let (rows, cols) = mask.shape();
    let [cr, cc] = op.center;
    if cr < 0 || cc < 0 || cr as u64 >= rows as u64 || cc as u64 >= cols as u64 {
        return Err(Error::OutOfBounds {
            row: cr,
            col: cc,
            rows,
            cols,
        });
    }
    if op.radius as usize > rows.max(cols) {
        return Err(Error::InvalidRequest(format!(
            "brush radius {} exceeds slice extent",
            op.radius
        )));
    }
    let r = op.radius as i64;
    let on = op.action == BrushAction::Paint;
    let mut out = mask.clone();
    for row in (cr - r).max(0)..=(cr + r).min(rows as i64 - 1) {
        for col in (cc - r).max(0)..=(cc + r).min(cols as i64 - 1) {
            let (dr, dc) = (row - cr, col - cc);
            if dr * dr + dc * dc <= r * r {
                out.set(row as usize, col as usize, on);
            }
        }
    }
    Ok(out)
}

/// One erosion step with the 4-neighbour cross.
pub fn erode(mask: &MaskSlice) -> MaskSlice {
    let (rows, cols) = mask.shape();
    MaskSlice::from_fn(rows, cols, |r, c| {
        mask.get(r, c)
            && r > 0
            && mask.get(r - 1, c)
            && r + 1 < rows
            && mask.get(r + 1, c)
            && c > 0
            && mask.get(r, c - 1)
            && c + 1 < cols
            && mask.get(r, c + 1)
    })
}

/// One dilation step with the 4-neighbour cross, clipped to the slice.
pub fn dilate(mask: &MaskSlice) -> MaskSlice {
    let (rows, cols) = mask.shape();
    MaskSlice::from_fn(rows, cols, |r, c| {
        mask.get(r, c)
            || (r > 0 && mask.get(r - 1, c))
            || (r + 1 < rows && mask.get(r + 1, c))
            || (c > 0 && mask.get(r, c - 1))
            || (c + 1 < cols && mask.get(r, c + 1))
    })
}

fn iterate(mask: MaskSlice, times: u32, f: fn(&MaskSlice) -> MaskSlice) -> MaskSlice {
    (0..times).fold(mask, |m, _| f(&m))
}

fn pad(mask: &MaskSlice, p: usize) -> MaskSlice {
    let (rows, cols) = mask.shape();
    MaskSlice::from_fn(rows + 2 * p, cols + 2 * p, |r, c| {
        r >= p && c >= p && r - p < rows && c - p < cols && mask.get(r - p, c - p)
    })
}

fn crop(mask: &MaskSlice, p: usize, rows: usize, cols: usize) -> MaskSlice {
    MaskSlice::from_fn(rows, cols, |r, c| mask.get(r + p, c + p))
}

/// Opening or closing, iterating the 4-neighbour cross `radius` times.
///
/// Closing runs on a copy padded by `radius` so that pixels on the slice
/// border survive the final erosion; the result is cropped back.
pub fn morph(mask: &MaskSlice, kind: MorphKind, radius: u32) -> Result<MaskSlice> {
    if radius < 1 {
        return Err(Error::InvalidRequest("morphology radius must be >= 1".into()));
    }
    Ok(match kind {
        MorphKind::Open => iterate(iterate(mask.clone(), radius, erode), radius, dilate),
        MorphKind::Close => {
            let p = radius as usize;
            let padded = pad(mask, p);
            let closed = iterate(iterate(padded, radius, dilate), radius, erode);
            crop(&closed, p, mask.rows(), mask.cols())
        }
    })
}
