use std::collections::HashSet;
use std::sync::{Arc, Condvar, Mutex};

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use volprompt::annotation::{MaskSlice, PointPrompt, PromptSet};
use volprompt::engine::{Engine, EngineConfig};
use volprompt::native::{GrowParams, NativePredictor};
use volprompt::predictor::{Frame, Predictor, PredictorDescriptor, Sequence};
use volprompt::volume::{load_volume, save_volume, Format, LabelmapFormat, Volume};
use volprompt::Error;
use volprompt_server::{classify, router, ApiError, DEFAULT_UPLOAD_LIMIT};

fn sphere(n: usize, r: f64) -> Volume {
    let c = (n / 2) as f64;
    let mut data = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
                data.push(if d2 <= r * r { 200.0 } else { 50.0 });
            }
        }
    }
    Volume::from_data([n, n, n], data).unwrap()
}

struct Api {
    engine: Arc<Engine>,
    app: Router,
}

impl Api {
    fn new() -> Self {
        Self::with_limit(DEFAULT_UPLOAD_LIMIT)
    }

    fn with_limit(limit: usize) -> Self {
        let engine = Arc::new(Engine::open(EngineConfig::default()).unwrap());
        Api {
            app: router(engine.clone(), limit),
            engine,
        }
    }

    async fn raw(&self, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Bytes) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(Body::from(body))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    }

    async fn json(&self, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        let payload = if body.is_null() {
            Vec::new()
        } else {
            body.to_string().into_bytes()
        };
        let (status, bytes) = self.raw(method, uri, payload).await;
        let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, v)
    }

    async fn volume(&self, v: &Volume) -> String {
        let (status, bytes) = self.raw("POST", "/volumes", save_volume(v, LabelmapFormat::Nrrd)).await;
        assert_eq!(status, StatusCode::CREATED);
        let info: Value = serde_json::from_slice(&bytes).unwrap();
        info["volume_id"].as_str().unwrap().to_string()
    }

    async fn session(&self, volume_id: &str, predictor: &str) -> String {
        let (status, v) = self
            .json(
                "POST",
                "/sessions",
                json!({"volume_id": volume_id, "axis": "K", "label": 1, "predictor_id": predictor}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn prompt(&self, sid: &str, slice: usize, row: i64, col: i64) -> (StatusCode, Value) {
        self.json(
            "POST",
            &format!("/sessions/{sid}/prompts"),
            json!({"slice": slice, "points": [{"row": row, "col": col, "polarity": "positive"}]}),
        )
        .await
    }
}

#[tokio::test]
async fn upload_and_render_slices() {
    let api = Api::new();
    let (status, bytes) = api
        .raw("POST", "/volumes", save_volume(&sphere(16, 5.0), LabelmapFormat::Nrrd))
        .await;
    assert_eq!(status, StatusCode::CREATED);
    let info: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(info["dims"], json!([16, 16, 16]));
    assert_eq!(info["intensity_range"], json!([50.0, 200.0]));
    let vid = info["volume_id"].as_str().unwrap();

    let (status, png) = api
        .raw(
            "GET",
            &format!("/volumes/{vid}/slices/J/3?window=100&level=120"),
            vec![],
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    let width = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(png[20..24].try_into().unwrap());
    assert_eq!((width, height), (16, 16));
    // 8-bit grayscale
    assert_eq!((png[24], png[25]), (8, 0));
}

#[tokio::test]
async fn slice_out_of_range_is_404_out_of_bounds() {
    let api = Api::new();
    let vid = api.volume(&sphere(8, 2.0)).await;
    let (status, v) = api
        .json("GET", &format!("/volumes/{vid}/slices/K/8"), Value::Null)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "OUT_OF_BOUNDS");
    assert!(v["message"].as_str().unwrap().contains('8'));
    let (status, v) = api
        .json("GET", &format!("/volumes/{vid}/slices/K/-1"), Value::Null)
        .await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("INVALID_REQUEST"))
    );
    let (status, v) = api
        .json("GET", &format!("/volumes/{vid}/slices/Q/1"), Value::Null)
        .await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("INVALID_REQUEST"))
    );
    let (status, v) = api
        .json(
            "GET",
            &format!("/volumes/{vid}/slices/K/1?window=0&level=3"),
            Value::Null,
        )
        .await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("INVALID_WINDOW"))
    );
}

#[tokio::test]
async fn prompt_response_matches_direct_prediction() {
    let api = Api::new();
    let vid = api.volume(&sphere(16, 5.0)).await;
    let sid = api.session(&vid, "native").await;
    let (status, resp) = api.prompt(&sid, 8, 8, 9).await;
    assert_eq!(status, StatusCode::OK, "{resp}");

    let session = api.engine.session(&sid).unwrap();
    let direct = api
        .engine
        .predict_slice(
            session.meta(),
            &PromptSet::with_points(8, [PointPrompt::positive(8, 9)]),
        )
        .unwrap();
    assert_eq!(resp["mask_rle"], json!(direct.to_rle()));
    assert_eq!((resp["rows"].as_u64(), resp["cols"].as_u64()), (Some(16), Some(16)));

    let (status, got) = api.json("GET", &format!("/sessions/{sid}/masks/8"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["mask_rle"], resp["mask_rle"]);
    let (_, info) = api.json("GET", &format!("/sessions/{sid}"), Value::Null).await;
    assert_eq!(info["conditional"], json!([8]));
    assert_eq!(info["revision"], json!(1));
}

#[tokio::test]
async fn prompt_errors_use_stable_codes() {
    let api = Api::new();
    let vid = api.volume(&sphere(16, 5.0)).await;
    let sid = api.session(&vid, "native").await;
    let (status, v) = api.prompt(&sid, 8, 40, 1).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("PROMPT_OUT_OF_BOUNDS"))
    );
    let (status, v) = api.prompt(&sid, 99, 1, 1).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("OUT_OF_BOUNDS"))
    );
    let (status, v) = api.prompt("nope", 1, 1, 1).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UNKNOWN_SESSION"))
    );
    let (status, v) = api
        .raw("POST", &format!("/sessions/{sid}/prompts"), b"{not json".to_vec())
        .await;
    let v: Value = serde_json::from_slice(&v).unwrap();
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("INVALID_REQUEST"))
    );
    let (status, v) = api.json("POST", &format!("/sessions/{sid}/undo"), Value::Null).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::CONFLICT, Some("NOTHING_TO_UNDO"))
    );
    let (status, v) = api.json("GET", "/no/such/route", Value::Null).await;
    assert_eq!((status, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NOT_FOUND")));
}

#[tokio::test]
async fn upload_cap_is_enforced() {
    let api = Api::with_limit(64);
    let (status, bytes) = api
        .raw("POST", "/volumes", save_volume(&sphere(16, 5.0), LabelmapFormat::Nrrd))
        .await;
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::PAYLOAD_TOO_LARGE, Some("PAYLOAD_TOO_LARGE"))
    );
}

struct Gated {
    inner: NativePredictor,
    descriptor: PredictorDescriptor,
    open: Arc<(Mutex<bool>, Condvar)>,
}

impl Predictor for Gated {
    fn descriptor(&self) -> &PredictorDescriptor {
        &self.descriptor
    }

    fn encode(&self, frame: &Frame) -> volprompt::Result<Vec<u8>> {
        self.inner.encode(frame)
    }

    fn predict(&self, e: &[u8], rows: usize, cols: usize, p: &PromptSet) -> volprompt::Result<MaskSlice> {
        self.inner.predict(e, rows, cols, p)
    }

    fn open_sequence(&self, frames: Vec<Frame>) -> volprompt::Result<Box<dyn Sequence>> {
        let (lock, cv) = &*self.open;
        let mut open = lock.lock().unwrap();
        while !*open {
            open = cv.wait(open).unwrap();
        }
        self.inner.open_sequence(frames)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_propagate_on_busy_session_is_409() {
    let api = Api::new();
    let gate = Arc::new((Mutex::new(false), Condvar::new()));
    api.engine
        .registry()
        .register(Arc::new(Gated {
            inner: NativePredictor::new(GrowParams::default()).unwrap(),
            descriptor: NativePredictor::descriptor_for("gated"),
            open: gate.clone(),
        }))
        .unwrap();
    let vid = api.volume(&sphere(16, 5.0)).await;
    let sid = api.session(&vid, "gated").await;
    api.prompt(&sid, 8, 8, 8).await;
    let uri = format!("/sessions/{sid}/propagate");
    let (status, job) = api.json("POST", &uri, json!({"mode": "all"})).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    let (status, v) = api.json("POST", &uri, json!({"mode": "all"})).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::CONFLICT, Some("SESSION_BUSY"))
    );
    let (status, v) = api.prompt(&sid, 9, 8, 8).await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::CONFLICT, Some("SESSION_BUSY"))
    );

    *gate.0.lock().unwrap() = true;
    gate.1.notify_all();
    let jid = job["job_id"].as_str().unwrap();
    let done = api.engine.wait_job(jid).unwrap();
    let (status, v) = api.json("GET", &format!("/jobs/{jid}"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, serde_json::to_value(&done).unwrap());
    assert_eq!(v["state"], "done");
}

fn sse_data(text: &str) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    let mut name = String::new();
    for line in text.lines() {
        if let Some(n) = line.strip_prefix("event: ") {
            name = n.to_string();
        } else if let Some(d) = line.strip_prefix("data: ") {
            out.push((name.clone(), serde_json::from_str(d).unwrap()));
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn event_stream_replays_progress_and_ends_once() {
    let api = Api::new();
    let vid = api.volume(&sphere(16, 5.0)).await;
    let sid = api.session(&vid, "native").await;
    api.prompt(&sid, 8, 8, 8).await;
    let (_, job) = api
        .json(
            "POST",
            &format!("/sessions/{sid}/propagate"),
            json!({"mode": "left", "from_slice": 8}),
        )
        .await;
    let jid = job["job_id"].as_str().unwrap().to_string();
    assert_eq!(job["slices_total"], json!(9));

    for _subscriber in 0..2 {
        let (status, body) = api.raw("GET", &format!("/jobs/{jid}/events"), vec![]).await;
        assert_eq!(status, StatusCode::OK);
        let events = sse_data(std::str::from_utf8(&body).unwrap());
        let (last, progress) = events.split_last().unwrap();
        assert_eq!(last.0, "finished");
        assert_eq!(last.1, json!({"job": jid, "state": "done"}));
        assert_eq!(progress.len(), 9);
        let slices: HashSet<u64> = progress.iter().map(|(_, e)| e["slice"].as_u64().unwrap()).collect();
        assert_eq!(slices, (0..=8).collect());
        assert!(progress.iter().all(|(n, _)| n == "progress"));
        assert_eq!(events.iter().filter(|(n, _)| n == "finished").count(), 1);
    }
    let (status, v) = api.json("POST", &format!("/jobs/{jid}/cancel"), Value::Null).await;
    assert_eq!((status, v["state"].as_str()), (StatusCode::OK, Some("done")));
}

#[tokio::test]
async fn refine_undo_redo_and_download() {
    let api = Api::new();
    let vid = api.volume(&sphere(16, 5.0)).await;
    let sid = api.session(&vid, "native").await;
    let (status, v) = api
        .json(
            "POST",
            &format!("/sessions/{sid}/refine"),
            json!({"slice": 3, "center": [2, 3], "radius": 0, "action": "paint"}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let mask = MaskSlice::from_rle(
        &serde_json::from_value::<Vec<u32>>(v["mask_rle"].clone()).unwrap(),
        16,
        16,
    )
    .unwrap();
    assert_eq!(mask.ones().collect::<Vec<_>>(), vec![(2, 3)]);
    let (status, v) = api
        .json(
            "POST",
            &format!("/sessions/{sid}/refine"),
            json!({"slice": 3, "morph": "close", "radius": 1}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{v}");

    let (_, v) = api.json("POST", &format!("/sessions/{sid}/undo"), Value::Null).await;
    assert_eq!(v, json!({"revision": 1}));
    let (_, v) = api.json("POST", &format!("/sessions/{sid}/redo"), Value::Null).await;
    assert_eq!(v, json!({"revision": 2}));

    for (q, fmt) in [("", Format::Nrrd), ("?format=nifti", Format::Nifti1)] {
        let (status, bytes) = api.raw("GET", &format!("/sessions/{sid}/labelmap{q}"), vec![]).await;
        assert_eq!(status, StatusCode::OK);
        let back = load_volume(&bytes, fmt).unwrap();
        assert_eq!(back.dims(), [16, 16, 16]);
        assert_eq!(back.get(3, 2, 3), 1.0);
        assert_eq!(back.data().iter().filter(|&&x| x != 0.0).count(), 1);
    }
    let (status, v) = api
        .json("GET", &format!("/sessions/{sid}/labelmap?format=tiff"), Value::Null)
        .await;
    assert_eq!(
        (status, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("INVALID_REQUEST"))
    );
}

#[tokio::test]
async fn predictors_are_listed() {
    let api = Api::new();
    let (status, v) = api.json("GET", "/predictors", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v[0]["id"], "native");
    assert_eq!(v[0]["capabilities"]["supports_sequence"], true);
}

#[test]
fn every_engine_error_has_its_own_code() {
    let errors = vec![
        Error::MalformedHeader(String::new()),
        Error::UnsupportedDatatype(String::new()),
        Error::TruncatedData { expected: 0, found: 0 },
        Error::IndexOutOfRange { index: 0, len: 0 },
        Error::NonPositiveWindow(0.0),
        Error::DimsMismatch(String::new()),
        Error::OutOfBounds {
            row: 0,
            col: 0,
            rows: 0,
            cols: 0,
        },
        Error::InvalidPrompt(String::new()),
        Error::RunSumMismatch { sum: 0, expected: 0 },
        Error::NothingToUndo,
        Error::NothingToRedo,
        Error::UnknownSession(String::new()),
        Error::UnknownVolume(String::new()),
        Error::InvalidLabel(0),
        Error::DuplicatePredictorId(String::new()),
        Error::UnknownPredictor(String::new()),
        Error::InvalidDescriptor(String::new()),
        Error::UnsupportedPrompt(String::new()),
        Error::ComputeFailed(String::new()),
        Error::CacheIo(String::new()),
        Error::BridgeUnavailable(String::new()),
        Error::Protocol(String::new()),
        Error::SequenceUnsupported(String::new()),
        Error::NoPromptedSlices,
        Error::SequenceBusy,
        Error::NoPositiveSeeds,
        Error::NoConditionalSlices,
        Error::FromSliceNotConditional(0),
        Error::UnknownJob(String::new()),
        Error::SessionBusy(String::new()),
        Error::InvalidRequest(String::new()),
        Error::Io(std::io::Error::other("x")),
    ];
    let codes: HashSet<&str> = errors.iter().map(|e| classify(e).1).collect();
    assert_eq!(codes.len(), errors.len());
    for e in errors {
        let api: ApiError = e.into();
        assert!(api.code.chars().all(|c| c.is_ascii_uppercase() || c == '_'));
        assert!(api.status >= 400);
    }
}
