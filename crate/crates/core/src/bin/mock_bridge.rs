//! A model bridge backed by the native predictor, for exercising the wire
//! protocol without a Python runtime.
//!
//! It treats the 8-bit rendered pixels as intensities. Behaviour can be bent
//! through environment variables:
//!
//! * `MOCK_BRIDGE_PROTOCOL`: protocol version to announce (default 1)
//! * `MOCK_BRIDGE_PREDICTORS`: JSON array of descriptors to advertise
//! * `MOCK_BRIDGE_DIE_ON`: op name; the process exits on receiving it
//! * `MOCK_BRIDGE_FAIL_ON`: op name; answered with an error line
//! * `MOCK_BRIDGE_LOG`: file that receives one line per request op

use std::collections::HashMap;
use std::env;
use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::ops::ControlFlow;
use std::sync::Arc;

use base64::Engine as _;
use serde_json::{json, Value};

use volprompt::annotation::{BoxPrompt, PointPrompt, Polarity, PromptSet};
use volprompt::native::{GrowParams, NativePredictor};
use volprompt::predictor::{Direction, Frame, Predictor, Sequence};
use volprompt::volume::{Axis, ScalarSlice, SliceImage};

fn default_predictors() -> Value {
    json!([
        {"id": "mock-sam2", "family": "sam2-video", "variant": "tiny",
         "capabilities": {"supports_box": true, "supports_sequence": true, "supports_negative_points": true}},
        {"id": "mock-sam", "family": "sam-image", "variant": "vit-b",
         "capabilities": {"supports_box": true, "supports_sequence": false, "supports_negative_points": false}}
    ])
}

fn frame_of(v: &Value, index: usize) -> Result<Frame, String> {
    let rows = v["rows"].as_u64().ok_or("image lacks rows")? as usize;
    let cols = v["cols"].as_u64().ok_or("image lacks cols")? as usize;
    let pixels = base64::engine::general_purpose::STANDARD
        .decode(v["pixels_b64"].as_str().ok_or("image lacks pixels_b64")?)
        .map_err(|e| e.to_string())?;
    if pixels.len() != rows * cols {
        return Err(format!("{} pixels for a {rows}x{cols} image", pixels.len()));
    }
    let values = pixels.iter().map(|&p| p as f32).collect();
    let slice = ScalarSlice::new(Axis::K, index, rows, cols, values).map_err(|e| e.to_string())?;
    Ok(Frame {
        slice: Arc::new(slice),
        image: Arc::new(SliceImage { rows, cols, pixels }),
    })
}

fn prompts_of(v: &Value, slice_index: usize) -> Result<PromptSet, String> {
    let mut set = PromptSet::new(slice_index);
    for p in v["points"].as_array().into_iter().flatten() {
        let row = p[0].as_u64().ok_or("bad point row")? as usize;
        let col = p[1].as_u64().ok_or("bad point col")? as usize;
        let polarity = match p[2].as_str() {
            Some("positive") => Polarity::Positive,
            Some("negative") => Polarity::Negative,
            _ => return Err(format!("bad point polarity {}", p[2])),
        };
        set.points.push(PointPrompt { row, col, polarity });
    }
    if let Some(b) = v.get("box").and_then(Value::as_array) {
        let c: Vec<usize> = b.iter().filter_map(Value::as_u64).map(|x| x as usize).collect();
        if c.len() != 4 {
            return Err("box needs four coordinates".into());
        }
        set.bbox = Some(BoxPrompt {
            r0: c[0],
            c0: c[1],
            r1: c[2],
            c1: c[3],
        });
    }
    Ok(set)
}

struct Bridge {
    native: NativePredictor,
    protocol: u64,
    predictors: Value,
    embeddings: HashMap<String, (usize, usize, Vec<u8>)>,
    sequences: HashMap<String, Box<dyn Sequence>>,
    next_id: u64,
}

impl Bridge {
    fn fresh_id(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}{}", self.next_id)
    }

    fn sequence(&self, req: &Value) -> Result<&dyn Sequence, String> {
        let id = req["seq"].as_str().ok_or("request lacks seq")?;
        self.sequences
            .get(id)
            .map(|s| s.as_ref())
            .ok_or_else(|| format!("unknown sequence {id}"))
    }

    /// Handles one request, writing its response lines to `out`.
    fn handle(&mut self, req: &Value, out: &mut impl Write) -> Result<(), String> {
        let op = req["op"].as_str().unwrap_or_default();
        let reply = match op {
            "hello" => json!({"protocol": self.protocol, "predictors": self.predictors}),
            "encode" => {
                let frame = frame_of(&req["image"], 0)?;
                let blob = self.native.encode(&frame).map_err(|e| e.to_string())?;
                let id = self.fresh_id("emb");
                let (rows, cols) = frame.shape();
                self.embeddings.insert(id.clone(), (rows, cols, blob));
                json!({"embedding_id": id})
            }
            "predict" => {
                let id = req["embedding_id"].as_str().ok_or("request lacks embedding_id")?;
                let (rows, cols, blob) = self
                    .embeddings
                    .get(id)
                    .ok_or_else(|| format!("unknown embedding {id}"))?;
                let prompts = prompts_of(req, 0)?;
                let mask = self
                    .native
                    .predict(blob, *rows, *cols, &prompts)
                    .map_err(|e| e.to_string())?;
                json!({"mask_rle": mask.to_rle(), "rows": rows, "cols": cols})
            }
            "seq_open" => {
                let frames = req["frames"]
                    .as_array()
                    .ok_or("request lacks frames")?
                    .iter()
                    .enumerate()
                    .map(|(i, f)| frame_of(f, i))
                    .collect::<Result<Vec<_>, _>>()?;
                let seq = self.native.open_sequence(frames).map_err(|e| e.to_string())?;
                let id = self.fresh_id("seq");
                self.sequences.insert(id.clone(), seq);
                json!({"seq": id})
            }
            "seq_prompt" => {
                let frame = req["frame"].as_u64().ok_or("request lacks frame")? as usize;
                let prompts = prompts_of(req, frame)?;
                self.sequence(req)?.add_prompts(&prompts).map_err(|e| e.to_string())?;
                json!({"ok": true})
            }
            "seq_run" => {
                let direction: Direction = req["direction"]
                    .as_str()
                    .ok_or("request lacks direction")?
                    .parse()
                    .map_err(|e: volprompt::Error| e.to_string())?;
                let seq = self.sequence(req)?;
                let mut lines = Vec::new();
                seq.run(direction, &mut |slice, mask| {
                    lines.push(json!({"slice": slice, "mask_rle": mask.to_rle()}));
                    ControlFlow::Continue(())
                })
                .map_err(|e| e.to_string())?;
                for line in lines {
                    writeln!(out, "{line}").map_err(|e| e.to_string())?;
                }
                json!({"done": true})
            }
            "seq_reset" => {
                self.sequence(req)?.reset().map_err(|e| e.to_string())?;
                json!({"ok": true})
            }
            "seq_close" => {
                let id = req["seq"].as_str().ok_or("request lacks seq")?;
                self.sequences.remove(id);
                json!({"ok": true})
            }
            other => return Err(format!("unknown op {other:?}")),
        };
        writeln!(out, "{reply}").map_err(|e| e.to_string())
    }
}

fn main() {
    let protocol = env::var("MOCK_BRIDGE_PROTOCOL")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    let predictors = env::var("MOCK_BRIDGE_PREDICTORS")
        .ok()
        .and_then(|v| serde_json::from_str(&v).ok())
        .unwrap_or_else(default_predictors);
    let die_on = env::var("MOCK_BRIDGE_DIE_ON").ok();
    let fail_on = env::var("MOCK_BRIDGE_FAIL_ON").ok();
    let mut log = env::var("MOCK_BRIDGE_LOG")
        .ok()
        .and_then(|p| OpenOptions::new().create(true).append(true).open(p).ok());

    let mut bridge = Bridge {
        native: NativePredictor::new(GrowParams::default()).expect("default parameters are valid"),
        protocol,
        predictors,
        embeddings: HashMap::new(),
        sequences: HashMap::new(),
        next_id: 0,
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(out, "{}", json!({"error": "BAD_REQUEST", "message": e.to_string()}));
                let _ = out.flush();
                continue;
            }
        };
        let op = req["op"].as_str().unwrap_or_default().to_string();
        if let Some(f) = log.as_mut() {
            let _ = writeln!(f, "{op}");
        }
        if die_on.as_deref() == Some(op.as_str()) {
            std::process::exit(1);
        }
        let result = if fail_on.as_deref() == Some(op.as_str()) {
            Err(format!("{op} failed on request"))
        } else {
            let mut buf = Vec::new();
            bridge.handle(&req, &mut buf).map(|()| buf)
        };
        match result {
            Ok(buf) => {
                let _ = out.write_all(&buf);
            }
            Err(msg) => {
                let _ = writeln!(out, "{}", json!({"error": "FAILED", "message": msg}));
            }
        }
        if out.flush().is_err() {
            break;
        }
    }
}
