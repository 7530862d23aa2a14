use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::annotation::{MaskSlice, PromptSet};
use crate::error::Result;

use super::{Direction, Frame, MaskSink, Predictor, PredictorDescriptor, RunEnd, Sequence};

/// Call log shared by an [`InstrumentedPredictor`] and its sequences.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CallCounts {
    pub encode: usize,
    pub predict: usize,
    pub sequences_opened: usize,
    pub runs: usize,
    pub resets: usize,
    /// Slice index of every sequence prompt submission, in order.
    pub sequence_prompts: Vec<usize>,
}

/// Wraps a predictor and records every call made through it.
pub struct InstrumentedPredictor {
    inner: Arc<dyn Predictor>,
    counts: Arc<Mutex<CallCounts>>,
}

impl InstrumentedPredictor {
    pub fn new(inner: Arc<dyn Predictor>) -> Self {
        InstrumentedPredictor {
            inner,
            counts: Arc::default(),
        }
    }

    pub fn counts(&self) -> CallCounts {
        self.counts.lock().clone()
    }

    pub fn reset_counts(&self) {
        *self.counts.lock() = CallCounts::default();
    }
}

impl Predictor for InstrumentedPredictor {
    fn descriptor(&self) -> &PredictorDescriptor {
        self.inner.descriptor()
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<u8>> {
        self.counts.lock().encode += 1;
        self.inner.encode(frame)
    }

    fn predict(&self, embedding: &[u8], rows: usize, cols: usize, prompts: &PromptSet) -> Result<MaskSlice> {
        self.counts.lock().predict += 1;
        self.inner.predict(embedding, rows, cols, prompts)
    }

    fn open_sequence(&self, frames: Vec<Frame>) -> Result<Box<dyn Sequence>> {
        self.counts.lock().sequences_opened += 1;
        Ok(Box::new(InstrumentedSequence {
            inner: self.inner.open_sequence(frames)?,
            counts: self.counts.clone(),
        }))
    }
}

struct InstrumentedSequence {
    inner: Box<dyn Sequence>,
    counts: Arc<Mutex<CallCounts>>,
}

impl Sequence for InstrumentedSequence {
    fn frames(&self) -> Range<usize> {
        self.inner.frames()
    }

    fn add_prompts(&self, prompts: &PromptSet) -> Result<()> {
        self.counts.lock().sequence_prompts.push(prompts.slice_index);
        self.inner.add_prompts(prompts)
    }

    fn prompted(&self) -> BTreeSet<usize> {
        self.inner.prompted()
    }

    fn run(&self, direction: Direction, sink: &mut MaskSink<'_>) -> Result<RunEnd> {
        self.counts.lock().runs += 1;
        self.inner.run(direction, sink)
    }

    fn reset(&self) -> Result<()> {
        self.counts.lock().resets += 1;
        self.inner.reset()
    }
}
