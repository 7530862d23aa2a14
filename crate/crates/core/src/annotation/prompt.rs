use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A click in slice pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
}

impl PointPrompt {
    pub fn positive(row: usize, col: usize) -> Self {
        PointPrompt {
            row,
            col,
            polarity: Polarity::Positive,
        }
    }

    pub fn negative(row: usize, col: usize) -> Self {
        PointPrompt {
            row,
            col,
            polarity: Polarity::Negative,
        }
    }

    /// Builds a point from signed wire coordinates, bounds-checked.
    pub fn checked(row: i64, col: i64, polarity: Polarity, rows: usize, cols: usize) -> Result<Self> {
        if row < 0 || col < 0 || row as u64 >= rows as u64 || col as u64 >= cols as u64 {
            return Err(Error::OutOfBounds { row, col, rows, cols });
        }
        Ok(PointPrompt {
            row: row as usize,
            col: col as usize,
            polarity,
        })
    }

    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        Self::checked(self.row as i64, self.col as i64, self.polarity, rows, cols).map(|_| ())
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Inclusive pixel box: rows `r0..=r1`, cols `c0..=c1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl BoxPrompt {
    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        if self.r0 >= self.r1 || self.c0 >= self.c1 {
            return Err(Error::InvalidPrompt(format!(
                "box corners not ordered: ({}, {})-({}, {})",
                self.r0, self.c0, self.r1, self.c1
            )));
        }
        if self.r1 >= rows || self.c1 >= cols {
            return Err(Error::OutOfBounds {
                row: self.r1 as i64,
                col: self.c1 as i64,
                rows,
                cols,
            });
        }
        Ok(())
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.r0..=self.r1).contains(&row) && (self.c0..=self.c1).contains(&col)
    }

    pub fn center(&self) -> (usize, usize) {
        ((self.r0 + self.r1) / 2, (self.c0 + self.c1) / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prompt {
    Point(PointPrompt),
    Box(BoxPrompt),
}

impl From<PointPrompt> for Prompt {
    fn from(p: PointPrompt) -> Self {
        Prompt::Point(p)
    }
}

impl From<BoxPrompt> for Prompt {
    fn from(b: BoxPrompt) -> Self {
        Prompt::Box(b)
    }
}

/// All prompts placed on one slice. Having one makes the slice conditional.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptSet {
    pub slice_index: usize,
    #[serde(default)]
    pub points: Vec<PointPrompt>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoxPrompt>,
}

impl PromptSet {
    pub fn new(slice_index: usize) -> Self {
        PromptSet {
            slice_index,
            points: Vec::new(),
            bbox: None,
        }
    }

    pub fn with_points(slice_index: usize, points: impl IntoIterator<Item = PointPrompt>) -> Self {
        PromptSet {
            slice_index,
            points: points.into_iter().collect(),
            bbox: None,
        }
    }

    /// Adds a point, or replaces the box.
    pub fn push(&mut self, prompt: Prompt) {
        match prompt {
            Prompt::Point(p) => self.points.push(p),
            Prompt::Box(b) => self.bbox = Some(b),
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| !p.is_positive())
    }

    pub fn has_negatives(&self) -> bool {
        self.negatives().next().is_some()
    }

    /// A set can seed a mask when it has a positive point or a box.
    pub fn can_seed(&self) -> bool {
        self.bbox.is_some() || self.positives().next().is_some()
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        for p in &self.points {
            p.check_bounds(rows, cols)?;
        }
        if let Some(b) = &self.bbox {
            b.check_bounds(rows, cols)?;
        }
        if !self.can_seed() {
            return Err(Error::InvalidPrompt(format!(
                "slice {} needs a positive point or a box",
                self.slice_index
            )));
        }
        Ok(())
    }
}
