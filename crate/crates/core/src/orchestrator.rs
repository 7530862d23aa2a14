//! Propagation planning, background jobs, progress events and cancellation.
//!
//! A [`PropagationPlan`] is computed from a session snapshot, executed
//! against a sequence-capable predictor on a [`JobManager`] worker, and its
//! result applied to the session in one commit. Nothing touches the session
//! until the run has finished successfully.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::ops::{ControlFlow, Range};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::annotation::{MaskSlice, PromptSet, SessionState, SliceGeometry};
use crate::error::{Error, Result};
use crate::predictor::{Direction, Frame, Predictor, RunEnd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    All,
    Left,
    Right,
}

impl Mode {
    pub fn direction(self) -> Direction {
        match self {
            Mode::All => Direction::Both,
            Mode::Left => Direction::Left,
            Mode::Right => Direction::Right,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Mode::All),
            "left" => Ok(Mode::Left),
            "right" => Ok(Mode::Right),
            _ => Err(Error::InvalidRequest(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Cancelled,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Cancelled | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationJob {
    pub job_id: String,
    pub session_id: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_slice: Option<usize>,
    pub state: JobState,
    pub slices_done: usize,
    pub slices_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Progress stream entry: one per finished slice, then one terminal event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JobEvent {
    Progress {
        job: String,
        slice: usize,
        done: usize,
        total: usize,
    },
    Finished {
        job: String,
        state: JobState,
    },
}

impl JobEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobEvent::Finished { .. })
    }
}

/// Shared state of one job: status, cancel flag and event log.
pub struct JobRecord {
    info: Mutex<PropagationJob>,
    events: Mutex<Vec<JobEvent>>,
    changed: Condvar,
    cancel: AtomicBool,
}

impl JobRecord {
    fn new(info: PropagationJob) -> Self {
        JobRecord {
            info: Mutex::new(info),
            events: Mutex::new(Vec::new()),
            changed: Condvar::new(),
            cancel: AtomicBool::new(false),
        }
    }

    pub fn info(&self) -> PropagationJob {
        self.info.lock().clone()
    }

    pub fn id(&self) -> String {
        self.info.lock().job_id.clone()
    }

    fn set_state(&self, state: JobState, error: Option<String>) {
        let mut info = self.info.lock();
        info.state = state;
        if error.is_some() {
            info.error = error;
        }
    }

    fn add_warnings(&self, warnings: Vec<String>) {
        self.info.lock().warnings.extend(warnings);
    }

    fn progress(&self, slice: usize) {
        let event = {
            let mut info = self.info.lock();
            info.slices_done = (info.slices_done + 1).min(info.slices_total);
            JobEvent::Progress {
                job: info.job_id.clone(),
                slice,
                done: info.slices_done,
                total: info.slices_total,
            }
        };
        self.push(event);
    }

    /// Moves to a terminal state and publishes the terminal event.
    fn finish(&self, state: JobState, error: Option<String>) {
        self.set_state(state, error);
        let job = self.id();
        self.push(JobEvent::Finished { job, state });
    }

    fn push(&self, event: JobEvent) {
        self.events.lock().push(event);
        self.changed.notify_all();
    }

    /// Events from position `cursor` on, waiting up to `timeout` for at
    /// least one to appear.
    pub fn events_since(&self, cursor: usize, timeout: Duration) -> Vec<JobEvent> {
        let mut events = self.events.lock();
        if events.len() <= cursor {
            self.changed.wait_for(&mut events, timeout);
        }
        events.get(cursor..).map(<[JobEvent]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the job reaches a terminal state.
    pub fn wait(&self) -> PropagationJob {
        let mut events = self.events.lock();
        while !events.last().is_some_and(JobEvent::is_terminal) {
            self.changed.wait(&mut events);
        }
        drop(events);
        self.info()
    }

    fn cancel_requested(&self) -> bool {
        self.cancel.load(Ordering::Acquire)
    }
}

/// Handle given to running work.
pub struct JobContext {
    record: Arc<JobRecord>,
}

impl JobContext {
    pub fn cancelled(&self) -> bool {
        self.record.cancel_requested()
    }

    pub fn slice_done(&self, slice: usize) {
        self.record.progress(slice);
    }

    pub fn warn(&self, warnings: Vec<String>) {
        self.record.add_warnings(warnings);
    }
}

/// How a job's work ended when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkEnd {
    Done,
    Cancelled,
}

type Work = Box<dyn FnOnce(&JobContext) -> Result<WorkEnd> + Send>;

struct Queued {
    record: Arc<JobRecord>,
    work: Work,
}

struct Shared {
    queue: Mutex<VecDeque<Queued>>,
    available: Condvar,
    jobs: RwLock<HashMap<String, Arc<JobRecord>>>,
    shutdown: AtomicBool,
}

/// Fixed pool of worker threads draining a FIFO job queue.
pub struct JobManager {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl JobManager {
    pub fn new(workers: usize) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(VecDeque::new()),
            available: Condvar::new(),
            jobs: RwLock::new(HashMap::new()),
            shutdown: AtomicBool::new(false),
        });
        let workers = (0..workers.max(1))
            .map(|n| {
                let shared = shared.clone();
                std::thread::Builder::new()
                    .name(format!("volprompt-job-{n}"))
                    .spawn(move || worker(shared))
                    .expect("spawning job worker")
            })
            .collect();
        JobManager { shared, workers }
    }

    /// Queues `work`. The closure is dropped unexecuted if the job is
    /// cancelled before a worker picks it up, so cleanup belongs in `Drop`
    /// impls of what it captures.
    pub fn submit(
        &self,
        session_id: &str,
        mode: Mode,
        from_slice: Option<usize>,
        slices_total: usize,
        work: impl FnOnce(&JobContext) -> Result<WorkEnd> + Send + 'static,
    ) -> Arc<JobRecord> {
        let job_id = uuid::Uuid::new_v4().simple().to_string();
        let record = Arc::new(JobRecord::new(PropagationJob {
            job_id: job_id.clone(),
            session_id: session_id.to_string(),
            mode,
            from_slice,
            state: JobState::Pending,
            slices_done: 0,
            slices_total,
            error: None,
            warnings: Vec::new(),
        }));
        self.shared.jobs.write().insert(job_id, record.clone());
        self.shared.queue.lock().push_back(Queued {
            record: record.clone(),
            work: Box::new(work),
        });
        self.shared.available.notify_one();
        record
    }

    pub fn get(&self, job_id: &str) -> Result<Arc<JobRecord>> {
        self.shared
            .jobs
            .read()
            .get(job_id)
            .cloned()
            .ok_or_else(|| Error::UnknownJob(job_id.to_string()))
    }

    pub fn status(&self, job_id: &str) -> Result<PropagationJob> {
        Ok(self.get(job_id)?.info())
    }

    /// Requests cancellation. A pending job is cancelled on the spot; a
    /// running one stops at its next slice boundary; a finished one is left
    /// as it is.
    pub fn cancel(&self, job_id: &str) -> Result<PropagationJob> {
        let record = self.get(job_id)?;
        record.cancel.store(true, Ordering::Release);
        let removed = {
            let mut queue = self.shared.queue.lock();
            queue
                .iter()
                .position(|q| Arc::ptr_eq(&q.record, &record))
                .and_then(|i| queue.remove(i))
        };
        if let Some(q) = removed {
            drop(q.work);
            record.finish(JobState::Cancelled, None);
        }
        Ok(record.info())
    }

    pub fn wait(&self, job_id: &str) -> Result<PropagationJob> {
        Ok(self.get(job_id)?.wait())
    }
}

impl Drop for JobManager {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        for q in self.shared.queue.lock().drain(..) {
            drop(q.work);
            q.record.finish(JobState::Cancelled, None);
        }
        self.shared.available.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: Arc<Shared>) {
    loop {
        let next = {
            let mut queue = shared.queue.lock();
            loop {
                if shared.shutdown.load(Ordering::Acquire) {
                    return;
                }
                if let Some(q) = queue.pop_front() {
                    break q;
                }
                shared.available.wait(&mut queue);
            }
        };
        let Queued { record, work } = next;
        record.set_state(JobState::Running, None);
        let ctx = JobContext { record: record.clone() };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(&ctx)));
        match outcome {
            Ok(Ok(WorkEnd::Done)) => record.finish(JobState::Done, None),
            Ok(Ok(WorkEnd::Cancelled)) => record.finish(JobState::Cancelled, None),
            Ok(Err(e)) => record.finish(JobState::Failed, Some(e.to_string())),
            Err(_) => record.finish(JobState::Failed, Some("propagation worker panicked".into())),
        }
    }
}

/// What a propagation run will do, fixed at submission time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagationPlan {
    pub mode: Mode,
    pub from_slice: Option<usize>,
    /// Slices loaded into the sequence.
    pub frames: Range<usize>,
    /// Prompt sets submitted to the sequence, ascending by slice.
    pub prompts: Vec<PromptSet>,
    /// Slices whose masks the run produces and the commit writes.
    pub writes: BTreeSet<usize>,
}

impl PropagationPlan {
    /// Bidirectional run over the whole axis from every conditional slice.
    /// Conditional masks are kept; every other slice is written.
    pub fn all(state: &SessionState, geom: &SliceGeometry) -> Result<Self> {
        if state.conditional.is_empty() {
            return Err(Error::NoConditionalSlices);
        }
        Ok(PropagationPlan {
            mode: Mode::All,
            from_slice: None,
            frames: 0..geom.count,
            prompts: state.conditional.values().map(|c| c.prompts.clone()).collect(),
            writes: (0..geom.count).filter(|s| !state.is_conditional(*s)).collect(),
        })
    }

    /// One-sided run seeded only by `from_slice`'s prompts. Writes
    /// `from_slice` and every slice on the chosen side.
    pub fn directional(state: &SessionState, geom: &SliceGeometry, mode: Mode, from_slice: usize) -> Result<Self> {
        geom.check_index(from_slice)?;
        let cond = state
            .conditional
            .get(&from_slice)
            .ok_or(Error::FromSliceNotConditional(from_slice))?;
        let frames = match mode {
            Mode::Right => from_slice..geom.count,
            Mode::Left => 0..from_slice + 1,
            Mode::All => return Err(Error::InvalidRequest("directional plan needs left or right".into())),
        };
        Ok(PropagationPlan {
            mode,
            from_slice: Some(from_slice),
            writes: frames.clone().collect(),
            frames,
            prompts: vec![cond.prompts.clone()],
        })
    }

    pub fn total(&self) -> usize {
        self.writes.len()
    }

    /// Streams the run. Returns `None` when cancelled.
    pub fn execute(
        &self,
        predictor: &dyn Predictor,
        frames: Vec<Frame>,
        ctx: &JobContext,
    ) -> Result<Option<BTreeMap<usize, MaskSlice>>> {
        predictor.descriptor().require_sequence()?;
        let seq = predictor.open_sequence(frames)?;
        seq.reset()?;
        for p in &self.prompts {
            seq.add_prompts(p)?;
        }
        let mut out = BTreeMap::new();
        let end = seq.run(self.mode.direction(), &mut |slice, mask| {
            if ctx.cancelled() {
                return ControlFlow::Break(());
            }
            if self.writes.contains(&slice) && !out.contains_key(&slice) {
                out.insert(slice, mask);
                ctx.slice_done(slice);
            }
            ControlFlow::Continue(())
        })?;
        if end == RunEnd::Stopped || ctx.cancelled() {
            return Ok(None);
        }
        if out.len() != self.writes.len() {
            let missing: Vec<usize> = self.writes.iter().filter(|s| !out.contains_key(s)).copied().collect();
            return Err(Error::Protocol(format!("run produced no mask for slices {missing:?}")));
        }
        Ok(Some(out))
    }

    /// Writes a finished run into `state`; returns user-facing warnings.
    pub fn apply(&self, state: &mut SessionState, masks: BTreeMap<usize, MaskSlice>) -> Vec<String> {
        let mut edited = Vec::new();
        let mut demoted = Vec::new();
        for (slice, mask) in masks {
            if state.edited.remove(&slice) {
                edited.push(slice);
            }
            if Some(slice) == self.from_slice {
                if let Some(c) = state.conditional.get_mut(&slice) {
                    c.mask = Some(mask);
                    continue;
                }
            }
            if state.conditional.remove(&slice).is_some() {
                demoted.push(slice);
            }
            state.propagated.insert(slice, mask);
        }
        if self.mode == Mode::All {
            state.prompts_changed = false;
        }
        let mut warnings = Vec::new();
        if !edited.is_empty() {
            warnings.push(format!("overwrote manually edited slices {edited:?}"));
        }
        if !demoted.is_empty() {
            warnings.push(format!("slices {demoted:?} were rewritten and their prompts dropped"));
        }
        warnings
    }
}
