//! The engine: volumes, sessions, predictors, cache and jobs behind one API.
//!
//! Both the HTTP service and the batch runner drive the engine through the
//! same methods, so the same request sequence yields the same masks.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::annotation::{BoxSpec, MaskSlice, PointSpec, Prompt, PromptSet, Session, SessionMeta, SliceGeometry};
use crate::error::{Error, Result};
use crate::native::{GrowParams, NativePredictor, NATIVE_ID};
use crate::orchestrator::{JobManager, JobRecord, Mode, PropagationJob, PropagationPlan, WorkEnd};
use crate::par;
use crate::predictor::{
    CacheStats, EmbeddingCache, EmbeddingKey, Frame, Predictor, PredictorDescriptor, PredictorRegistry, DEFAULT_BUDGET,
};
use crate::refine::RefineOp;
use crate::store::Store;
use crate::volume::{
    load_volume, render_slice, render_slice_default, save_labelmap, Axis, Format, LabelmapFormat, SliceImage, Volume,
    WindowLevel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Where sessions and uploaded volumes persist; in-memory when unset.
    pub data_root: Option<PathBuf>,
    /// Embedding cache directory; embeddings are recomputed when unset.
    pub cache_root: Option<PathBuf>,
    pub cache_budget: u64,
    pub grow: GrowParams,
    pub bridge_command: Option<String>,
    pub job_workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_root: None,
            cache_root: None,
            cache_budget: DEFAULT_BUDGET,
            grow: GrowParams::default(),
            bridge_command: None,
            job_workers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub volume_id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub intensity_range: [f32; 2],
}

impl VolumeInfo {
    fn of(id: &str, v: &Volume) -> Self {
        let (lo, hi) = v.intensity_range();
        VolumeInfo {
            volume_id: id.to_string(),
            dims: v.dims(),
            spacing: v.spacing(),
            intensity_range: [lo, hi],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub volume_id: String,
    pub axis: Axis,
    pub label: u32,
    #[serde(default = "default_predictor")]
    pub predictor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowLevel>,
}

fn default_predictor() -> String {
    NATIVE_ID.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub volume_id: String,
    pub axis: Axis,
    pub label: u16,
    pub predictor_id: String,
    pub revision: u64,
    pub rows: usize,
    pub cols: usize,
    pub slice_count: usize,
    pub conditional: Vec<usize>,
    pub propagated: Vec<usize>,
    pub edited: Vec<usize>,
    pub prompts_changed: bool,
    pub can_undo: bool,
    pub can_redo: bool,
    pub active_job: Option<String>,
}

/// Prompts for one slice: `{"slice": i, "points": [...], "box": {...}?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub slice: usize,
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub revision: u64,
    pub slice: usize,
    pub rows: usize,
    pub cols: usize,
    pub mask_rle: Vec<u32>,
}

impl MaskResponse {
    fn new(revision: u64, slice: usize, mask: &MaskSlice) -> Self {
        MaskResponse {
            revision,
            slice,
            rows: mask.rows(),
            cols: mask.cols(),
            mask_rle: mask.to_rle(),
        }
    }

    pub fn mask(&self) -> Result<MaskSlice> {
        MaskSlice::from_rle(&self.mask_rle, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagateRequest {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_slice: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionResponse {
    pub revision: u64,
}

struct SessionSlot {
    session: Session,
    active_job: Option<String>,
}

type Slot = Arc<Mutex<SessionSlot>>;

/// Clears a session's active job when the job's work is dropped, whether it
/// ran or was cancelled while queued.
struct ReleaseOnDrop(Slot);

impl Drop for ReleaseOnDrop {
    fn drop(&mut self) {
        self.0.lock().active_job = None;
    }
}

pub struct Engine {
    config: EngineConfig,
    registry: PredictorRegistry,
    cache: Option<EmbeddingCache>,
    store: Option<Arc<Store>>,
    volumes: RwLock<HashMap<String, Arc<Volume>>>,
    sessions: RwLock<HashMap<String, Slot>>,
    jobs: JobManager,
}

/// Renders one slice with an explicit window, or the volume's full range.
pub fn render_frame(volume: &Volume, axis: Axis, index: usize, window: Option<WindowLevel>) -> Result<Frame> {
    let slice = volume.extract_slice(axis, index)?;
    let image = match window {
        Some(w) => render_slice(&slice, w.window, w.level)?,
        None => render_slice_default(&slice, volume.intensity_range()),
    };
    Ok(Frame {
        slice: Arc::new(slice),
        image: Arc::new(image),
    })
}

fn render_frames(
    volume: &Volume,
    axis: Axis,
    range: std::ops::Range<usize>,
    window: Option<WindowLevel>,
) -> Result<Vec<Frame>> {
    let start = range.start;
    par::map_range(range.len(), |k| render_frame(volume, axis, start + k, window))
        .into_iter()
        .collect()
}

fn check_window(window: Option<WindowLevel>) -> Result<()> {
    match window {
        Some(w) if w.window.is_nan() || w.window <= 0.0 => Err(Error::NonPositiveWindow(w.window)),
        _ => Ok(()),
    }
}

impl Engine {
    /// Builds an engine, restoring persisted volumes and sessions and
    /// attaching the bridge when configured. A bridge that fails its
    /// handshake is logged and left out.
    pub fn open(config: EngineConfig) -> Result<Self> {
        let native: Arc<dyn Predictor> = Arc::new(NativePredictor::new(config.grow)?);
        let registry = PredictorRegistry::new(native);
        if let Some(cmd) = &config.bridge_command {
            match registry.attach_bridge(cmd) {
                Ok(n) => log::info!("bridge {cmd:?} registered {n} predictors"),
                Err(e) => log::warn!("bridge {cmd:?} unavailable: {e}"),
            }
        }
        let cache = match &config.cache_root {
            Some(root) => Some(EmbeddingCache::open(root, config.cache_budget)?),
            None => None,
        };
        let store = match &config.data_root {
            Some(root) => Some(Arc::new(Store::open(root)?)),
            None => None,
        };
        let engine = Engine {
            jobs: JobManager::new(config.job_workers),
            config,
            registry,
            cache,
            store,
            volumes: RwLock::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        };
        engine.restore()?;
        Ok(engine)
    }

    fn restore(&self) -> Result<()> {
        let Some(store) = &self.store else { return Ok(()) };
        for (id, bytes) in store.volumes()? {
            match load_volume(&bytes, Format::Auto) {
                Ok(v) => {
                    self.volumes.write().insert(id, Arc::new(v));
                }
                Err(e) => log::warn!("skipping stored volume {id}: {e}"),
            }
        }
        for session in store.sessions()? {
            if !self.volumes.read().contains_key(&session.meta().volume_id) {
                log::warn!("skipping session {}: its volume is gone", session.id());
                continue;
            }
            self.sessions.write().insert(
                session.id().to_string(),
                Arc::new(Mutex::new(SessionSlot {
                    session,
                    active_job: None,
                })),
            );
        }
        Ok(())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &PredictorRegistry {
        &self.registry
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    pub fn predictors(&self) -> Vec<PredictorDescriptor> {
        self.registry.list()
    }

    /// Restarts the configured bridge and re-registers its predictors.
    pub fn rescan_bridge(&self) -> Result<Vec<PredictorDescriptor>> {
        if let Some(cmd) = &self.config.bridge_command {
            self.registry.attach_bridge(cmd)?;
        }
        Ok(self.registry.list())
    }

    pub fn cache_stats(&self) -> Option<CacheStats> {
        self.cache.as_ref().map(EmbeddingCache::stats)
    }

    // ---- volumes

    /// Parses and registers a volume file. The id is the content digest, so
    /// loading the same data twice yields the same id.
    pub fn load_volume_bytes(&self, bytes: &[u8]) -> Result<VolumeInfo> {
        let volume = load_volume(bytes, Format::Auto)?;
        let id = volume.content_digest().to_hex();
        if let Some(store) = &self.store {
            store.save_volume(&id, bytes)?;
        }
        let info = VolumeInfo::of(&id, &volume);
        self.volumes.write().entry(id).or_insert_with(|| Arc::new(volume));
        Ok(info)
    }

    pub fn volume(&self, volume_id: &str) -> Result<Arc<Volume>> {
        self.volumes
            .read()
            .get(volume_id)
            .cloned()
            .ok_or_else(|| Error::UnknownVolume(volume_id.to_string()))
    }

    pub fn volume_info(&self, volume_id: &str) -> Result<VolumeInfo> {
        let volume = self.volume(volume_id)?;
        Ok(VolumeInfo::of(volume_id, &volume))
    }

    pub fn render(&self, volume_id: &str, axis: Axis, index: usize, window: Option<WindowLevel>) -> Result<SliceImage> {
        check_window(window)?;
        let volume = self.volume(volume_id)?;
        Ok(Arc::unwrap_or_clone(render_frame(&volume, axis, index, window)?.image))
    }

    // ---- sessions

    fn slot(&self, session_id: &str) -> Result<Slot> {
        self.sessions
            .read()
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(session_id.to_string()))
    }

    fn persist(&self, session: &Session) -> Result<()> {
        match &self.store {
            Some(store) => store.save_session(session),
            None => Ok(()),
        }
    }

    pub fn create_session(&self, req: &NewSession) -> Result<SessionInfo> {
        let volume = self.volume(&req.volume_id)?;
        let label = u16::try_from(req.label)
            .ok()
            .filter(|&l| l > 0)
            .ok_or(Error::InvalidLabel(req.label))?;
        self.registry.get(&req.predictor_id)?;
        check_window(req.window)?;
        let session = Session::new(SessionMeta {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            volume_id: req.volume_id.clone(),
            volume_digest: volume.content_digest(),
            dims: volume.dims(),
            axis: req.axis,
            label,
            predictor_id: req.predictor_id.clone(),
            window: req.window,
        });
        self.persist(&session)?;
        let slot = SessionSlot {
            session,
            active_job: None,
        };
        let info = Self::info_of(&slot);
        self.sessions
            .write()
            .insert(info.session_id.clone(), Arc::new(Mutex::new(slot)));
        Ok(info)
    }

    fn info_of(slot: &SessionSlot) -> SessionInfo {
        let s = &slot.session;
        let m = s.meta();
        let g = s.geometry();
        let st = s.state();
        SessionInfo {
            session_id: m.session_id.clone(),
            volume_id: m.volume_id.clone(),
            axis: m.axis,
            label: m.label,
            predictor_id: m.predictor_id.clone(),
            revision: s.revision(),
            rows: g.rows,
            cols: g.cols,
            slice_count: g.count,
            conditional: st.conditional.keys().copied().collect(),
            propagated: st.propagated.keys().copied().collect(),
            edited: st.edited.iter().copied().collect(),
            prompts_changed: st.prompts_changed,
            can_undo: s.can_undo(),
            can_redo: s.can_redo(),
            active_job: slot.active_job.clone(),
        }
    }

    pub fn session_info(&self, session_id: &str) -> Result<SessionInfo> {
        Ok(Self::info_of(&self.slot(session_id)?.lock()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// A copy of the session as currently committed.
    pub fn session(&self, session_id: &str) -> Result<Session> {
        Ok(self.slot(session_id)?.lock().session.clone())
    }

    fn writable(slot: &SessionSlot) -> Result<()> {
        match &slot.active_job {
            Some(_) => Err(Error::SessionBusy(slot.session.id().to_string())),
            None => Ok(()),
        }
    }

    /// Single-slice prediction, going through the embedding cache.
    pub fn predict_slice(&self, meta: &SessionMeta, prompts: &PromptSet) -> Result<MaskSlice> {
        let predictor = self.registry.get(&meta.predictor_id)?;
        let volume = self.volume(&meta.volume_id)?;
        let geom = meta.geometry();
        geom.check_index(prompts.slice_index)?;
        predictor.descriptor().check_prompts(prompts, geom.rows, geom.cols)?;
        let frame = render_frame(&volume, meta.axis, prompts.slice_index, meta.window)?;
        let blob = match &self.cache {
            Some(cache) => {
                let key = EmbeddingKey {
                    volume_digest: meta.volume_digest,
                    axis: meta.axis,
                    slice_index: prompts.slice_index,
                    predictor_id: meta.predictor_id.clone(),
                    window: meta.window,
                };
                cache.ensure(&key, || predictor.encode(&frame))?.blob
            }
            None => predictor.encode(&frame)?,
        };
        let mask = predictor.predict(&blob, geom.rows, geom.cols, prompts)?;
        mask.check_shape(geom.rows, geom.cols)?;
        Ok(mask)
    }

    /// Adds prompts to a slice and predicts its mask, as one revision. If
    /// prediction fails the session is unchanged.
    pub fn add_prompts(&self, session_id: &str, req: &PromptRequest) -> Result<MaskResponse> {
        let slot = self.slot(session_id)?;
        let mut slot = slot.lock();
        Self::writable(&slot)?;
        let geom: SliceGeometry = slot.session.geometry();
        geom.check_index(req.slice)?;
        let mut added: Vec<Prompt> = Vec::new();
        for p in &req.points {
            added.push(p.resolve(&geom)?.into());
        }
        if let Some(b) = &req.bbox {
            added.push(b.resolve(&geom)?.into());
        }
        if added.is_empty() {
            return Err(Error::InvalidPrompt("request carries no prompts".into()));
        }
        let mut prompts = slot
            .session
            .state()
            .conditional
            .get(&req.slice)
            .map(|c| c.prompts.clone())
            .unwrap_or_else(|| PromptSet::new(req.slice));
        for p in &added {
            prompts.push(*p);
        }
        let mask = self.predict_slice(slot.session.meta(), &prompts)?;
        let (revision, ()) = slot.session.transact(|g, st| {
            for p in added {
                st.add_prompt(g, req.slice, p)?;
            }
            st.accept_mask(g, req.slice, mask.clone())
        })?;
        self.persist(&slot.session)?;
        Ok(MaskResponse::new(revision, req.slice, &mask))
    }

    /// The slice's current mask; an unannotated slice reads as empty.
    pub fn mask(&self, session_id: &str, slice: usize) -> Result<MaskResponse> {
        let slot = self.slot(session_id)?;
        let slot = slot.lock();
        let geom = slot.session.geometry();
        geom.check_index(slice)?;
        let empty = MaskSlice::empty(geom.rows, geom.cols);
        let mask = slot.session.state().mask_at(slice).unwrap_or(&empty);
        Ok(MaskResponse::new(slot.session.revision(), slice, mask))
    }

    pub fn refine(&self, session_id: &str, op: &RefineOp) -> Result<MaskResponse> {
        let slot = self.slot(session_id)?;
        let mut slot = slot.lock();
        Self::writable(&slot)?;
        let slice = op.slice();
        let (revision, mask) = slot.session.transact(|g, st| {
            g.check_index(slice)?;
            let current = st
                .mask_at(slice)
                .cloned()
                .unwrap_or_else(|| MaskSlice::empty(g.rows, g.cols));
            let next = op.apply(&current)?;
            st.replace_mask(g, slice, next.clone())?;
            Ok(next)
        })?;
        self.persist(&slot.session)?;
        Ok(MaskResponse::new(revision, slice, &mask))
    }

    pub fn undo(&self, session_id: &str) -> Result<RevisionResponse> {
        self.history(session_id, Session::undo)
    }

    pub fn redo(&self, session_id: &str) -> Result<RevisionResponse> {
        self.history(session_id, Session::redo)
    }

    fn history(&self, session_id: &str, step: fn(&mut Session) -> Result<u64>) -> Result<RevisionResponse> {
        let slot = self.slot(session_id)?;
        let mut slot = slot.lock();
        Self::writable(&slot)?;
        let revision = step(&mut slot.session)?;
        self.persist(&slot.session)?;
        Ok(RevisionResponse { revision })
    }

    /// Dense labelmap of this session's label.
    pub fn export_labelmap(&self, session_id: &str, format: LabelmapFormat) -> Result<Vec<u8>> {
        let session = self.session(session_id)?;
        let volume = self.volume(&session.meta().volume_id)?;
        save_labelmap(&session.segmentation(), &volume, format)
    }

    // ---- propagation

    /// Starts a propagation job. `all` runs from every conditional slice;
    /// `left`/`right` run from `from_slice` alone.
    pub fn propagate(&self, session_id: &str, req: &PropagateRequest) -> Result<PropagationJob> {
        let slot_arc = self.slot(session_id)?;
        let mut slot = slot_arc.lock();
        Self::writable(&slot)?;
        let meta = slot.session.meta().clone();
        let geom = meta.geometry();
        let plan = match (req.mode, req.from_slice) {
            (Mode::All, _) => PropagationPlan::all(slot.session.state(), &geom)?,
            (mode, Some(from)) => PropagationPlan::directional(slot.session.state(), &geom, mode, from)?,
            (_, None) => return Err(Error::InvalidRequest("directional propagation needs from_slice".into())),
        };
        let predictor = self.registry.get(&meta.predictor_id)?;
        predictor.descriptor().require_sequence()?;
        let volume = self.volume(&meta.volume_id)?;
        let store = self.store.clone();
        let release = ReleaseOnDrop(slot_arc.clone());
        let target = slot_arc.clone();
        let total = plan.total();
        let (mode, from_slice) = (plan.mode, plan.from_slice);
        let record = self.jobs.submit(session_id, mode, from_slice, total, move |ctx| {
            let _release = release;
            let frames = render_frames(&volume, meta.axis, plan.frames.clone(), meta.window)?;
            let Some(masks) = plan.execute(predictor.as_ref(), frames, ctx)? else {
                return Ok(WorkEnd::Cancelled);
            };
            let mut slot = target.lock();
            if ctx.cancelled() {
                return Ok(WorkEnd::Cancelled);
            }
            let (_, warnings) = slot.session.transact(|_, st| Ok(plan.apply(st, masks)))?;
            if let Some(store) = &store {
                if let Err(e) = store.save_session(&slot.session) {
                    log::error!("persisting session {} after propagation: {e}", slot.session.id());
                }
            }
            for w in &warnings {
                log::warn!("session {}: {w}", slot.session.id());
            }
            ctx.warn(warnings);
            Ok(WorkEnd::Done)
        });
        slot.active_job = Some(record.id());
        Ok(record.info())
    }

    /// Re-runs bidirectional propagation over all conditional slices, old
    /// and new.
    pub fn repropagate(&self, session_id: &str) -> Result<PropagationJob> {
        self.propagate(
            session_id,
            &PropagateRequest {
                mode: Mode::All,
                from_slice: None,
            },
        )
    }

    pub fn job(&self, job_id: &str) -> Result<PropagationJob> {
        self.jobs.status(job_id)
    }

    pub fn job_record(&self, job_id: &str) -> Result<Arc<JobRecord>> {
        self.jobs.get(job_id)
    }

    pub fn cancel_job(&self, job_id: &str) -> Result<PropagationJob> {
        self.jobs.cancel(job_id)
    }

    /// Blocks until the job finishes.
    pub fn wait_job(&self, job_id: &str) -> Result<PropagationJob> {
        self.jobs.wait(job_id)
    }
}
