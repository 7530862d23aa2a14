//! JSON prompt schema shared by batch prompt files and the HTTP API.
//!
//! ```json
//! {"axis": "K", "label": 1,
//!  "slices": [{"index": 32, "points": [{"row": 10, "col": 12, "polarity": "positive"}],
//!              "box": {"r0": 0, "c0": 0, "r1": 20, "c1": 20}}]}
//! ```
//! Coordinates are signed on the wire so that negative values surface as
//! bounds errors rather than parse errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Axis;

use super::{BoxPrompt, PointPrompt, Polarity, PromptSet, SliceGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSpec {
    pub row: i64,
    pub col: i64,
    pub polarity: Polarity,
}

impl PointSpec {
    pub fn resolve(&self, geom: &SliceGeometry) -> Result<PointPrompt> {
        PointPrompt::checked(self.row, self.col, self.polarity, geom.rows, geom.cols)
    }
}

impl From<PointPrompt> for PointSpec {
    fn from(p: PointPrompt) -> Self {
        PointSpec {
            row: p.row as i64,
            col: p.col as i64,
            polarity: p.polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub r0: i64,
    pub c0: i64,
    pub r1: i64,
    pub c1: i64,
}

impl BoxSpec {
    pub fn resolve(&self, geom: &SliceGeometry) -> Result<BoxPrompt> {
        for (r, c) in [(self.r0, self.c0), (self.r1, self.c1)] {
            if r < 0 || c < 0 {
                return Err(Error::OutOfBounds {
                    row: r,
                    col: c,
                    rows: geom.rows,
                    cols: geom.cols,
                });
            }
        }
        let b = BoxPrompt {
            r0: self.r0 as usize,
            c0: self.c0 as usize,
            r1: self.r1 as usize,
            c1: self.c1 as usize,
        };
        b.check_bounds(geom.rows, geom.cols)?;
        Ok(b)
    }
}

impl From<BoxPrompt> for BoxSpec {
    fn from(b: BoxPrompt) -> Self {
        BoxSpec {
            r0: b.r0 as i64,
            c0: b.c0 as i64,
            r1: b.r1 as i64,
            c1: b.c1 as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePrompts {
    pub index: i64,
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFile {
    pub axis: Axis,
    pub label: u32,
    pub slices: Vec<SlicePrompts>,
}

impl PromptFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidRequest(format!("prompt file: {e}")))
    }

    pub fn label_id(&self) -> Result<u16> {
        match u16::try_from(self.label) {
            Ok(l) if l > 0 => Ok(l),
            _ => Err(Error::InvalidLabel(self.label)),
        }
    }

    /// Resolves every slice entry against `geom`, merging repeated indices,
    /// in ascending slice order.
    pub fn prompt_sets(&self, geom: &SliceGeometry) -> Result<Vec<PromptSet>> {
        let mut sets: std::collections::BTreeMap<usize, PromptSet> = Default::default();
        for s in &self.slices {
            if s.index < 0 || s.index as u64 >= geom.count as u64 {
                return Err(Error::IndexOutOfRange {
                    index: s.index.max(0) as usize,
                    len: geom.count,
                });
            }
            let index = s.index as usize;
            let set = sets.entry(index).or_insert_with(|| PromptSet::new(index));
            for p in &s.points {
                set.points.push(p.resolve(geom)?);
            }
            if let Some(b) = &s.bbox {
                set.bbox = Some(b.resolve(geom)?);
            }
        }
        for set in sets.values() {
            set.validate(geom.rows, geom.cols)?;
        }
        Ok(sets.into_values().collect())
    }
}
