//! Prompts, masks, label volumes and annotation sessions.

mod mask;
mod prompt;
pub mod promptfile;
mod segmentation;
mod session;

pub use mask::{dice, dice_bits, rle_decode, rle_encode, MaskSlice, RleMask};
pub use prompt::{BoxPrompt, PointPrompt, Polarity, Prompt, PromptSet};
pub use promptfile::{BoxSpec, PointSpec, PromptFile, SlicePrompts};
pub use segmentation::{LabelSlices, SegmentationVolume};
pub use session::{ConditionalSlice, Session, SessionMeta, SessionState, SliceGeometry, UNDO_DEPTH};
