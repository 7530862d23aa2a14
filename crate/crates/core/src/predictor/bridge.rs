//! Client for external model bridges speaking newline-delimited JSON over a
//! child process's stdin/stdout.
//!
//! Requests and responses are one JSON object per line:
//!
//! | request | response |
//! |---|---|
//! | `{"op":"hello"}` | `{"protocol":1,"predictors":[descriptor...]}` |
//! | `{"op":"encode","predictor":id,"image":{rows,cols,pixels_b64}}` | `{"embedding_id":s}` |
//! | `{"op":"predict","predictor":id,"embedding_id":s,"points":[[r,c,pol]...],"box":[r0,c0,r1,c1]?}` | `{"mask_rle":[...],"rows":r,"cols":c}` |
//! | `{"op":"seq_open","predictor":id,"frames":[image...]}` | `{"seq":s}` |
//! | `{"op":"seq_prompt","seq":s,"frame":f,"points":[...]}` | `{"ok":true}` |
//! | `{"op":"seq_run","seq":s,"direction":"both"\|"left"\|"right"}` | `{"slice":f,"mask_rle":[...]}`... then `{"done":true}` |
//! | `{"op":"seq_reset","seq":s}` | `{"ok":true}` |
//! | `{"op":"seq_close","seq":s}` | `{"ok":true}` |
//!
//! Frame numbers on the wire count from the first frame of the opened
//! sequence. Any request may instead be answered with
//! `{"error":code,"message":text}`; `message` is optional.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::ops::{ControlFlow, Range};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use base64::Engine as _;
use parking_lot::Mutex;
use serde_json::{json, Value};

use crate::annotation::{MaskSlice, PointPrompt, Polarity, PromptSet};
use crate::error::{Error, Result};
use crate::native::check_frames;
use crate::volume::SliceImage;

use super::{Direction, Frame, MaskSink, Predictor, PredictorDescriptor, RunEnd, Sequence};

pub const PROTOCOL_VERSION: u64 = 1;

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    dead: bool,
}

/// A running bridge process. Requests are serialised over its one pipe.
pub struct BridgeClient {
    command: String,
    pipe: Mutex<Pipe>,
}

fn image_json(img: &SliceImage) -> Value {
    json!({
        "rows": img.rows,
        "cols": img.cols,
        "pixels_b64": base64::engine::general_purpose::STANDARD.encode(&img.pixels),
    })
}

fn points_json(points: &[PointPrompt]) -> Value {
    Value::Array(
        points
            .iter()
            .map(|p| {
                let pol = match p.polarity {
                    Polarity::Positive => "positive",
                    Polarity::Negative => "negative",
                };
                json!([p.row, p.col, pol])
            })
            .collect(),
    )
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| Error::Protocol(format!("response lacks {name:?}: {v}")))
}

fn str_field(v: &Value, name: &str) -> Result<String> {
    field(v, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol(format!("{name:?} is not a string")))
}

fn u64_field(v: &Value, name: &str) -> Result<u64> {
    field(v, name)?
        .as_u64()
        .ok_or_else(|| Error::Protocol(format!("{name:?} is not an unsigned integer")))
}

fn decode_mask(v: &Value, rows: usize, cols: usize) -> Result<MaskSlice> {
    let runs: Vec<u32> =
        serde_json::from_value(field(v, "mask_rle")?.clone()).map_err(|e| Error::Protocol(format!("mask_rle: {e}")))?;
    MaskSlice::from_rle(&runs, rows, cols).map_err(|e| Error::Protocol(format!("mask_rle: {e}")))
}

impl BridgeClient {
    /// Starts the bridge with a shell-style command line.
    pub fn spawn(command: &str) -> Result<Self> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::BridgeUnavailable(format!("cannot parse bridge command {command:?}")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BridgeUnavailable(format!("spawning {}: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(BridgeClient {
            command: command.to_string(),
            pipe: Mutex::new(Pipe {
                child,
                stdin,
                stdout,
                dead: false,
            }),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Performs the handshake and returns the advertised descriptors.
    pub fn hello(&self) -> Result<Vec<PredictorDescriptor>> {
        let resp = self.call(&json!({"op": "hello"}))?;
        let version = u64_field(&resp, "protocol")?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "bridge speaks protocol {version}, expected {PROTOCOL_VERSION}"
            )));
        }
        serde_json::from_value(field(&resp, "predictors")?.clone())
            .map_err(|e| Error::Protocol(format!("predictors: {e}")))
    }

    fn send(pipe: &mut Pipe, req: &Value) -> Result<()> {
        if pipe.dead {
            return Err(Error::BridgeUnavailable("bridge process has exited".into()));
        }
        let mut line = serde_json::to_vec(req).expect("requests serialise");
        line.push(b'\n');
        if let Err(e) = pipe.stdin.write_all(&line).and_then(|_| pipe.stdin.flush()) {
            pipe.dead = true;
            return Err(Error::BridgeUnavailable(format!("writing request: {e}")));
        }
        Ok(())
    }

    fn receive(pipe: &mut Pipe) -> Result<Value> {
        let mut line = String::new();
        match pipe.stdout.read_line(&mut line) {
            Ok(0) => {
                pipe.dead = true;
                Err(Error::BridgeUnavailable("bridge closed its output".into()))
            }
            Err(e) => {
                pipe.dead = true;
                Err(Error::BridgeUnavailable(format!("reading response: {e}")))
            }
            Ok(_) => {
                let v: Value = serde_json::from_str(line.trim_end())
                    .map_err(|e| Error::Protocol(format!("unparseable line {:?}: {e}", line.trim_end())))?;
                if let Some(code) = v.get("error") {
                    let code = code.as_str().map(str::to_string).unwrap_or_else(|| code.to_string());
                    return Err(Error::ComputeFailed(match v.get("message").and_then(Value::as_str) {
                        Some(message) => format!("{code}: {message}"),
                        None => code,
                    }));
                }
                Ok(v)
            }
        }
    }

    fn call(&self, req: &Value) -> Result<Value> {
        let mut pipe = self.pipe.lock();
        Self::send(&mut pipe, req)?;
        Self::receive(&mut pipe)
    }

    /// Sends `req` and feeds every response line to `each` until a line
    /// carrying `"done": true`.
    fn call_stream(&self, req: &Value, mut each: impl FnMut(Value) -> Result<()>) -> Result<()> {
        let mut pipe = self.pipe.lock();
        Self::send(&mut pipe, req)?;
        let mut failure = None;
        loop {
            let v = Self::receive(&mut pipe)?;
            if v.get("done").and_then(Value::as_bool) == Some(true) {
                break;
            }
            if failure.is_none() {
                if let Err(e) = each(v) {
                    failure = Some(e);
                }
            }
        }
        failure.map_or(Ok(()), Err)
    }

    fn is_dead(&self) -> bool {
        self.pipe.lock().dead
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut();
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

/// One model advertised by a bridge.
pub struct BridgePredictor {
    client: Arc<BridgeClient>,
    descriptor: PredictorDescriptor,
}

impl BridgePredictor {
    pub fn new(client: Arc<BridgeClient>, descriptor: PredictorDescriptor) -> Self {
        BridgePredictor { client, descriptor }
    }
}

impl Predictor for BridgePredictor {
    fn descriptor(&self) -> &PredictorDescriptor {
        &self.descriptor
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<u8>> {
        let resp = self.client.call(&json!({
            "op": "encode",
            "predictor": self.descriptor.id,
            "image": image_json(&frame.image),
        }))?;
        Ok(str_field(&resp, "embedding_id")?.into_bytes())
    }

    fn predict(&self, embedding: &[u8], rows: usize, cols: usize, prompts: &PromptSet) -> Result<MaskSlice> {
        let embedding_id =
            std::str::from_utf8(embedding).map_err(|_| Error::Protocol("embedding id is not UTF-8".into()))?;
        let mut req = json!({
            "op": "predict",
            "predictor": self.descriptor.id,
            "embedding_id": embedding_id,
            "points": points_json(&prompts.points),
        });
        if let Some(b) = &prompts.bbox {
            req["box"] = json!([b.r0, b.c0, b.r1, b.c1]);
        }
        let resp = self.client.call(&req)?;
        let (r, c) = (u64_field(&resp, "rows")? as usize, u64_field(&resp, "cols")? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::Protocol(format!("mask is {r}x{c}, slice is {rows}x{cols}")));
        }
        decode_mask(&resp, rows, cols)
    }

    fn open_sequence(&self, frames: Vec<Frame>) -> Result<Box<dyn Sequence>> {
        self.descriptor.require_sequence()?;
        let range = check_frames(&frames)?;
        let shape = frames[0].shape();
        let images: Vec<Value> = frames.iter().map(|f| image_json(&f.image)).collect();
        let resp = self.client.call(&json!({
            "op": "seq_open",
            "predictor": self.descriptor.id,
            "frames": images,
        }))?;
        Ok(Box::new(BridgeSequence {
            client: self.client.clone(),
            seq: str_field(&resp, "seq")?,
            range,
            shape,
            prompted: Mutex::new(BTreeSet::new()),
            busy: AtomicBool::new(false),
        }))
    }
}

struct BridgeSequence {
    client: Arc<BridgeClient>,
    seq: String,
    range: Range<usize>,
    shape: (usize, usize),
    prompted: Mutex<BTreeSet<usize>>,
    busy: AtomicBool,
}

impl Sequence for BridgeSequence {
    fn frames(&self) -> Range<usize> {
        self.range.clone()
    }

    /// Sends the points of `prompts`. Video predictors take no boxes, so a
    /// box is dropped; a set left without positive points is rejected.
    fn add_prompts(&self, prompts: &PromptSet) -> Result<()> {
        let index = prompts.slice_index;
        if !self.range.contains(&index) {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.range.end,
            });
        }
        if prompts.positives().next().is_none() {
            return Err(Error::UnsupportedPrompt(format!(
                "sequence prompts on slice {index} need a positive point"
            )));
        }
        if prompts.bbox.is_some() {
            log::warn!("dropping box prompt on slice {index}: sequence bridges accept points only");
        }
        self.client.call(&json!({
            "op": "seq_prompt",
            "seq": self.seq,
            "frame": index - self.range.start,
            "points": points_json(&prompts.points),
        }))?;
        self.prompted.lock().insert(index);
        Ok(())
    }

    fn prompted(&self) -> BTreeSet<usize> {
        self.prompted.lock().clone()
    }

    fn run(&self, direction: Direction, sink: &mut MaskSink<'_>) -> Result<RunEnd> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(Error::SequenceBusy);
        }
        let result = self.run_inner(direction, sink);
        self.busy.store(false, Ordering::Release);
        result
    }

    fn reset(&self) -> Result<()> {
        self.client.call(&json!({"op": "seq_reset", "seq": self.seq}))?;
        self.prompted.lock().clear();
        Ok(())
    }
}

impl BridgeSequence {
    fn run_inner(&self, direction: Direction, sink: &mut MaskSink<'_>) -> Result<RunEnd> {
        if self.prompted.lock().is_empty() {
            return Err(Error::NoPromptedSlices);
        }
        let (rows, cols) = self.shape;
        let mut seen = HashSet::new();
        let mut stopped = false;
        self.client.call_stream(
            &json!({"op": "seq_run", "seq": self.seq, "direction": direction}),
            |line| {
                let frame = u64_field(&line, "slice")? as usize;
                let slice = self.range.start + frame;
                if !self.range.contains(&slice) || !seen.insert(slice) {
                    return Err(Error::Protocol(format!("unexpected or repeated frame {frame}")));
                }
                let mask = decode_mask(&line, rows, cols)?;
                if !stopped && sink(slice, mask) == ControlFlow::Break(()) {
                    stopped = true;
                }
                Ok(())
            },
        )?;
        Ok(if stopped { RunEnd::Stopped } else { RunEnd::Completed })
    }
}

impl Drop for BridgeSequence {
    fn drop(&mut self) {
        if !self.client.is_dead() {
            if let Err(e) = self.client.call(&json!({"op": "seq_close", "seq": self.seq})) {
                log::debug!("closing bridge sequence {}: {e}", self.seq);
            }
        }
    }
}
