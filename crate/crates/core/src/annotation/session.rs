use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{axis_len, slice_shape, Axis, Digest, Dims, WindowLevel};

use super::{MaskSlice, Prompt, PromptSet, SegmentationVolume};

/// Maximum number of undoable revisions kept per session.
pub const UNDO_DEPTH: usize = 64;

/// Immutable description of what a session annotates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub volume_id: String,
    pub volume_digest: Digest,
    pub dims: Dims,
    pub axis: Axis,
    pub label: u16,
    pub predictor_id: String,
    /// Display mapping used to render slices for the predictor; `None` means
    /// the volume's full intensity range.
    pub window: Option<WindowLevel>,
}

impl SessionMeta {
    pub fn geometry(&self) -> SliceGeometry {
        let (rows, cols) = slice_shape(self.dims, self.axis);
        SliceGeometry {
            rows,
            cols,
            count: axis_len(self.dims, self.axis),
        }
    }
}

/// Shape of the slices a session works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceGeometry {
    pub rows: usize,
    pub cols: usize,
    pub count: usize,
}

impl SliceGeometry {
    pub fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.count {
            return Err(Error::IndexOutOfRange { index, len: self.count });
        }
        Ok(())
    }
}

/// A prompted slice and the mask accepted for it. `mask` is `None` only
/// between a prompt being added and the prediction for it landing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalSlice {
    pub prompts: PromptSet,
    pub mask: Option<MaskSlice>,
}

/// Everything undo/redo restores.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionState {
    pub revision: u64,
    pub conditional: BTreeMap<usize, ConditionalSlice>,
    pub propagated: BTreeMap<usize, MaskSlice>,
    /// Slices whose current mask was touched by a refinement tool.
    pub edited: BTreeSet<usize>,
    /// Prompts changed since the last bidirectional propagation.
    pub prompts_changed: bool,
}

impl SessionState {
    pub fn add_prompt(&mut self, geom: &SliceGeometry, slice: usize, prompt: Prompt) -> Result<()> {
        geom.check_index(slice)?;
        match &prompt {
            Prompt::Point(p) => p.check_bounds(geom.rows, geom.cols)?,
            Prompt::Box(b) => b.check_bounds(geom.rows, geom.cols)?,
        }
        let entry = self.conditional.entry(slice).or_insert_with(|| ConditionalSlice {
            prompts: PromptSet::new(slice),
            mask: None,
        });
        entry.prompts.push(prompt);
        entry.mask = None;
        self.propagated.remove(&slice);
        self.edited.remove(&slice);
        self.prompts_changed = true;
        Ok(())
    }

    /// Stores the predicted mask for a conditional slice.
    pub fn accept_mask(&mut self, geom: &SliceGeometry, slice: usize, mask: MaskSlice) -> Result<()> {
        mask.check_shape(geom.rows, geom.cols)?;
        let entry = self
            .conditional
            .get_mut(&slice)
            .ok_or(Error::FromSliceNotConditional(slice))?;
        entry.mask = Some(mask);
        Ok(())
    }

    pub fn is_conditional(&self, slice: usize) -> bool {
        self.conditional.contains_key(&slice)
    }

    /// Current mask of a slice, conditional or propagated.
    pub fn mask_at(&self, slice: usize) -> Option<&MaskSlice> {
        match self.conditional.get(&slice) {
            Some(c) => c.mask.as_ref(),
            None => self.propagated.get(&slice),
        }
    }

    /// Replaces whichever mask the slice holds, creating a propagated one if
    /// there is none, and flags the slice as manually edited.
    pub fn replace_mask(&mut self, geom: &SliceGeometry, slice: usize, mask: MaskSlice) -> Result<()> {
        geom.check_index(slice)?;
        mask.check_shape(geom.rows, geom.cols)?;
        match self.conditional.get_mut(&slice) {
            Some(c) => c.mask = Some(mask),
            None => {
                self.propagated.insert(slice, mask);
            }
        }
        self.edited.insert(slice);
        Ok(())
    }

    /// Checks the structural invariants: conditional and propagated slices
    /// are disjoint and every stored mask has the slice shape.
    pub fn audit(&self, geom: &SliceGeometry) -> Result<()> {
        if let Some(s) = self.conditional.keys().find(|s| self.propagated.contains_key(s)) {
            return Err(Error::InvalidRequest(format!(
                "slice {s} is both conditional and propagated"
            )));
        }
        for (&s, c) in &self.conditional {
            geom.check_index(s)?;
            if c.prompts.slice_index != s {
                return Err(Error::InvalidRequest(format!(
                    "prompt set for slice {} stored under {s}",
                    c.prompts.slice_index
                )));
            }
            if let Some(m) = &c.mask {
                m.check_shape(geom.rows, geom.cols)?;
            }
        }
        for (&s, m) in &self.propagated {
            geom.check_index(s)?;
            m.check_shape(geom.rows, geom.cols)?;
        }
        Ok(())
    }
}

/// An annotation session: one volume, one axis, one label.
#[derive(Debug, Clone)]
pub struct Session {
    meta: SessionMeta,
    state: SessionState,
    undo: VecDeque<SessionState>,
    redo: Vec<SessionState>,
    next_revision: u64,
}

impl Session {
    pub fn new(meta: SessionMeta) -> Self {
        Session::restore(meta, SessionState::default())
    }

    /// Rebuilds a session from persisted state; history starts empty.
    pub fn restore(meta: SessionMeta, state: SessionState) -> Self {
        let next_revision = state.revision + 1;
        Session {
            meta,
            state,
            undo: VecDeque::new(),
            redo: Vec::new(),
            next_revision,
        }
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn revision(&self) -> u64 {
        self.state.revision
    }

    pub fn geometry(&self) -> SliceGeometry {
        self.meta.geometry()
    }

    pub fn can_undo(&self) -> bool {
        !self.undo.is_empty()
    }

    pub fn can_redo(&self) -> bool {
        !self.redo.is_empty()
    }

    /// Applies `f` to a copy of the state and commits it as one new revision.
    /// On error the session is left exactly as it was.
    pub fn transact<R>(&mut self, f: impl FnOnce(&SliceGeometry, &mut SessionState) -> Result<R>) -> Result<(u64, R)> {
        let geom = self.geometry();
        let mut next = self.state.clone();
        let out = f(&geom, &mut next)?;
        next.audit(&geom)?;
        next.revision = self.next_revision;
        self.next_revision += 1;
        let prev = std::mem::replace(&mut self.state, next);
        self.undo.push_back(prev);
        if self.undo.len() > UNDO_DEPTH {
            self.undo.pop_front();
        }
        self.redo.clear();
        Ok((self.state.revision, out))
    }

    pub fn add_prompt(&mut self, slice: usize, prompt: Prompt) -> Result<u64> {
        self.transact(|g, s| s.add_prompt(g, slice, prompt)).map(|(r, _)| r)
    }

    pub fn undo(&mut self) -> Result<u64> {
        let prev = self.undo.pop_back().ok_or(Error::NothingToUndo)?;
        let cur = std::mem::replace(&mut self.state, prev);
        self.redo.push(cur);
        Ok(self.state.revision)
    }

    pub fn redo(&mut self) -> Result<u64> {
        let next = self.redo.pop().ok_or(Error::NothingToRedo)?;
        let cur = std::mem::replace(&mut self.state, next);
        self.undo.push_back(cur);
        Ok(self.state.revision)
    }

    pub fn audit(&self) -> Result<()> {
        self.state.audit(&self.geometry())
    }

    /// This session's masks as a single-label segmentation.
    pub fn segmentation(&self) -> SegmentationVolume {
        let mut seg = SegmentationVolume::new(self.meta.dims);
        let masks = self
            .state
            .conditional
            .iter()
            .filter_map(|(&s, c)| c.mask.as_ref().map(|m| (s, m)))
            .chain(self.state.propagated.iter().map(|(&s, m)| (s, m)));
        for (slice, mask) in masks {
            seg.merge_mask(self.meta.label, self.meta.axis, slice, mask)
                .expect("session masks are audited against the volume shape");
        }
        seg
    }
}
