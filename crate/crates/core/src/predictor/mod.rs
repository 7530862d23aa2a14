//! The predictor abstraction: promptable 2D prediction plus sequence
//! propagation, the registry, the embedding cache and the bridge client.

mod bridge;
mod cache;
mod descriptor;
mod instrument;
mod registry;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{ControlFlow, Range};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::annotation::{MaskSlice, PromptSet};
use crate::error::{Error, Result};
use crate::volume::{ScalarSlice, SliceImage};

pub use bridge::{BridgeClient, BridgePredictor, PROTOCOL_VERSION};
pub use cache::{CacheStats, EmbeddingCache, EmbeddingEntry, EmbeddingKey, GcReport, DEFAULT_BUDGET};
pub use descriptor::{Capabilities, Family, PredictorDescriptor};
pub use instrument::{CallCounts, InstrumentedPredictor};
pub use registry::PredictorRegistry;

/// One slice as handed to a predictor: raw intensities and the rendered
/// 8-bit image.
#[derive(Debug, Clone)]
pub struct Frame {
    pub slice: Arc<ScalarSlice>,
    pub image: Arc<SliceImage>,
}

impl Frame {
    pub fn index(&self) -> usize {
        self.slice.index
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.slice.rows, self.slice.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Both,
    /// Decreasing slice index.
    Left,
    /// Increasing slice index.
    Right,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Both => "both",
            Direction::Left => "left",
            Direction::Right => "right",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Direction::Both),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(Error::InvalidRequest(format!("unknown direction {s:?}"))),
        }
    }
}

/// How a sequence run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Completed,
    /// The sink asked to stop.
    Stopped,
}

/// Receives `(slice_index, mask)` pairs as a run streams them.
pub type MaskSink<'a> = dyn FnMut(usize, MaskSlice) -> ControlFlow<()> + Send + 'a;

pub trait Predictor: Send + Sync {
    fn descriptor(&self) -> &PredictorDescriptor;

    /// Computes the embedding blob for one slice.
    fn encode(&self, frame: &Frame) -> Result<Vec<u8>>;

    /// Predicts a mask for a slice from its embedding. Prompts have already
    /// been checked against the slice shape and capabilities.
    fn predict(&self, embedding: &[u8], rows: usize, cols: usize, prompts: &PromptSet) -> Result<MaskSlice>;

    /// Loads a contiguous, ascending run of frames for propagation.
    fn open_sequence(&self, frames: Vec<Frame>) -> Result<Box<dyn Sequence>>;
}

/// A loaded frame range with per-slice prompt state.
pub trait Sequence: Send + Sync {
    fn frames(&self) -> Range<usize>;

    /// Sets the prompts for `prompts.slice_index`, replacing earlier ones.
    fn add_prompts(&self, prompts: &PromptSet) -> Result<()>;

    /// Slices prompted since open or the last reset.
    fn prompted(&self) -> BTreeSet<usize>;

    /// Streams one mask per target slice in increasing distance from its
    /// anchor. Only one run may be active at a time.
    fn run(&self, direction: Direction, sink: &mut MaskSink<'_>) -> Result<RunEnd>;

    /// Drops all prompt state; frames stay loaded.
    fn reset(&self) -> Result<()>;
}

/// A slice a run will emit and the prompted slice its chain starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub slice: usize,
    pub anchor: usize,
}

impl Target {
    pub fn distance(&self) -> usize {
        self.slice.abs_diff(self.anchor)
    }

    /// The neighbouring slice one step closer to the anchor.
    pub fn previous(&self) -> Option<usize> {
        match self.slice.cmp(&self.anchor) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.slice + 1),
            std::cmp::Ordering::Greater => Some(self.slice - 1),
        }
    }
}

/// The targets a run over `frames` will emit, in emission order: increasing
/// distance from the anchor, then increasing slice index.
///
/// * `Both`: every frame, anchored at the nearest prompted slice (ties go to
///   the lower index).
/// * `Right`: frames at or after the first prompted slice, anchored at the
///   closest prompted slice at or before them.
/// * `Left`: the mirror image.
pub fn sequence_targets(frames: Range<usize>, prompted: &BTreeSet<usize>, direction: Direction) -> Vec<Target> {
    let mut out: Vec<Target> = frames
        .filter_map(|t| {
            let below = prompted.range(..=t).next_back().copied();
            let above = prompted.range(t..).next().copied();
            let anchor = match direction {
                Direction::Right => below,
                Direction::Left => above,
                Direction::Both => match (below, above) {
                    (Some(b), Some(a)) => Some(if t - b <= a - t { b } else { a }),
                    (b, a) => b.or(a),
                },
            }?;
            Some(Target { slice: t, anchor })
        })
        .collect();
    out.sort_by_key(|t| (t.distance(), t.slice));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slices(ts: &[Target]) -> Vec<usize> {
        ts.iter().map(|t| t.slice).collect()
    }

    #[test]
    fn both_orders_by_distance() {
        let p: BTreeSet<usize> = [3].into();
        let ts = sequence_targets(0..6, &p, Direction::Both);
        assert_eq!(slices(&ts), vec![3, 2, 4, 1, 5, 0]);
        assert!(ts.iter().all(|t| t.anchor == 3));
    }

    #[test]
    fn ties_go_to_lower_anchor() {
        let p: BTreeSet<usize> = [2, 6].into();
        let ts = sequence_targets(0..9, &p, Direction::Both);
        let at4 = ts.iter().find(|t| t.slice == 4).unwrap();
        assert_eq!(at4.anchor, 2);
        let at5 = ts.iter().find(|t| t.slice == 5).unwrap();
        assert_eq!(at5.anchor, 6);
    }

    #[test]
    fn directional_sides() {
        let p: BTreeSet<usize> = [20].into();
        assert_eq!(
            slices(&sequence_targets(0..25, &p, Direction::Right)),
            (20..25).collect::<Vec<_>>()
        );
        assert_eq!(
            slices(&sequence_targets(0..25, &p, Direction::Left)),
            (0..=20).rev().collect::<Vec<_>>()
        );
    }

    #[test]
    fn previous_steps_toward_anchor() {
        assert_eq!(Target { slice: 5, anchor: 5 }.previous(), None);
        assert_eq!(Target { slice: 3, anchor: 5 }.previous(), Some(4));
        assert_eq!(Target { slice: 7, anchor: 5 }.previous(), Some(6));
    }
}
