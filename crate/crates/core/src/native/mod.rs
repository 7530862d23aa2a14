//! Built-in deterministic predictor: seeded region growing on a slice and
//! erosion-seeded slice-to-slice chains for propagation.

mod grow;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;

use crate::annotation::{MaskSlice, PromptSet};
use crate::error::{Error, Result};
use crate::par;
use crate::predictor::{
    sequence_targets, Capabilities, Direction, Family, Frame, MaskSink, Predictor, PredictorDescriptor, RunEnd,
    Sequence, Target,
};
use crate::volume::{Axis, ScalarSlice};

pub use grow::{
    apply_negatives, estimate_band, predict_prompts, propagate_step, region_grow, Band, GrowOutcome, GrowParams,
};

pub const NATIVE_ID: &str = "native";

const BLOB_MAGIC: &[u8; 4] = b"VPN1";

pub struct NativePredictor {
    descriptor: PredictorDescriptor,
    params: GrowParams,
}

impl NativePredictor {
    pub fn new(params: GrowParams) -> Result<Self> {
        Self::with_id(NATIVE_ID, params)
    }

    /// A native predictor registered under another id.
    pub fn with_id(id: &str, params: GrowParams) -> Result<Self> {
        params.validate()?;
        Ok(NativePredictor {
            descriptor: Self::descriptor_for(id),
            params,
        })
    }

    pub fn descriptor_for(id: &str) -> PredictorDescriptor {
        PredictorDescriptor {
            id: id.to_string(),
            family: Family::Native,
            variant: "n/a".into(),
            capabilities: Capabilities {
                supports_box: true,
                supports_sequence: true,
                supports_negative_points: true,
            },
        }
    }

    pub fn params(&self) -> &GrowParams {
        &self.params
    }
}

/// The native embedding is just the slice intensities, serialised.
pub fn encode_slice(slice: &ScalarSlice) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + slice.values.len() * 4);
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&(slice.rows as u32).to_le_bytes());
    out.extend_from_slice(&(slice.cols as u32).to_le_bytes());
    for v in &slice.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_slice(blob: &[u8]) -> Result<ScalarSlice> {
    let bad = || Error::ComputeFailed("malformed native embedding".into());
    if blob.len() < 12 || &blob[..4] != BLOB_MAGIC {
        return Err(bad());
    }
    let rows = u32::from_le_bytes(blob[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(blob[8..12].try_into().unwrap()) as usize;
    let body = &blob[12..];
    if body.len() != rows * cols * 4 {
        return Err(bad());
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarSlice::new(Axis::K, 0, rows, cols, values)
}

impl Predictor for NativePredictor {
    fn descriptor(&self) -> &PredictorDescriptor {
        &self.descriptor
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<u8>> {
        Ok(encode_slice(&frame.slice))
    }

    fn predict(&self, embedding: &[u8], rows: usize, cols: usize, prompts: &PromptSet) -> Result<MaskSlice> {
        let slice = decode_slice(embedding)?;
        if (slice.rows, slice.cols) != (rows, cols) {
            return Err(Error::DimsMismatch(format!(
                "embedding is {}x{}, slice is {rows}x{cols}",
                slice.rows, slice.cols
            )));
        }
        let out = predict_prompts(&slice, prompts, &self.params)?;
        if out.truncated {
            log::debug!(
                "native prediction on slice {} hit the region limit",
                prompts.slice_index
            );
        }
        Ok(out.mask)
    }

    fn open_sequence(&self, frames: Vec<Frame>) -> Result<Box<dyn Sequence>> {
        Ok(Box::new(NativeSequence::new(frames, self.params)?))
    }
}

/// Checks that frames form one ascending run of equally shaped slices.
pub(crate) fn check_frames(frames: &[Frame]) -> Result<Range<usize>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidRequest("a sequence needs at least one frame".into()))?;
    for (k, f) in frames.iter().enumerate() {
        if f.index() != first.index() + k {
            return Err(Error::InvalidRequest(
                "sequence frames must be contiguous and ascending".into(),
            ));
        }
        if f.shape() != first.shape() {
            return Err(Error::DimsMismatch("sequence frames differ in shape".into()));
        }
    }
    Ok(first.index()..first.index() + frames.len())
}

struct NativeSequence {
    frames: Vec<Frame>,
    range: Range<usize>,
    params: GrowParams,
    prompts: Mutex<BTreeMap<usize, PromptSet>>,
    busy: AtomicBool,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl NativeSequence {
    fn new(frames: Vec<Frame>, params: GrowParams) -> Result<Self> {
        let range = check_frames(&frames)?;
        Ok(NativeSequence {
            frames,
            range,
            params,
            prompts: Mutex::new(BTreeMap::new()),
            busy: AtomicBool::new(false),
        })
    }

    fn slice(&self, index: usize) -> &ScalarSlice {
        &self.frames[index - self.range.start].slice
    }

    fn compute(
        &self,
        t: &Target,
        prompts: &BTreeMap<usize, PromptSet>,
        done: &HashMap<usize, MaskSlice>,
    ) -> Result<MaskSlice> {
        match t.previous() {
            None => Ok(predict_prompts(self.slice(t.slice), &prompts[&t.slice], &self.params)?.mask),
            Some(prev) => {
                let prev_mask = &done[&prev];
                Ok(propagate_step(prev_mask, self.slice(prev), self.slice(t.slice), &self.params)?.mask)
            }
        }
    }
}

impl Sequence for NativeSequence {
    fn frames(&self) -> Range<usize> {
        self.range.clone()
    }

    fn add_prompts(&self, prompts: &PromptSet) -> Result<()> {
        let index = prompts.slice_index;
        if !self.range.contains(&index) {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.range.end,
            });
        }
        let (rows, cols) = self.frames[0].shape();
        prompts.validate(rows, cols)?;
        self.prompts.lock().insert(index, prompts.clone());
        Ok(())
    }

    fn prompted(&self) -> BTreeSet<usize> {
        self.prompts.lock().keys().copied().collect()
    }

    /// Chains advance in waves of equal distance; the chains within a wave
    /// are independent and computed in parallel.
    fn run(&self, direction: Direction, sink: &mut MaskSink<'_>) -> Result<RunEnd> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(Error::SequenceBusy);
        }
        let _guard = BusyGuard(&self.busy);
        let prompts = self.prompts.lock().clone();
        if prompts.is_empty() {
            return Err(Error::NoPromptedSlices);
        }
        let keys: BTreeSet<usize> = prompts.keys().copied().collect();
        let targets = sequence_targets(self.range.clone(), &keys, direction);
        let mut done: HashMap<usize, MaskSlice> = HashMap::with_capacity(targets.len());
        for wave in targets.chunk_by(|a, b| a.distance() == b.distance()) {
            let masks = par::map(wave, |t| self.compute(t, &prompts, &done));
            for (t, mask) in wave.iter().zip(masks) {
                let mask = mask?;
                done.insert(t.slice, mask.clone());
                if sink(t.slice, mask).is_break() {
                    return Ok(RunEnd::Stopped);
                }
            }
        }
        Ok(RunEnd::Completed)
    }

    fn reset(&self) -> Result<()> {
        self.prompts.lock().clear();
        Ok(())
    }
}
