#![allow(dead_code)]

use std::path::Path;

use volprompt::annotation::{PointSpec, Polarity};
use volprompt::engine::{Engine, EngineConfig, NewSession, PromptRequest};
use volprompt::volume::{save_volume, Axis, LabelmapFormat, Volume};

/// A bright ball on a dim background, centred in an `n`-cube.
pub fn sphere(n: usize, radius: f64, inside: f32, outside: f32) -> Volume {
    let c = (n / 2) as f64;
    let mut data = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
                data.push(if d2 <= radius * radius { inside } else { outside });
            }
        }
    }
    Volume::from_data([n, n, n], data).unwrap()
}

/// The ball's cross-section on axial slice `k`.
pub fn sphere_disk(n: usize, radius: f64, k: usize) -> Vec<bool> {
    let c = (n / 2) as f64;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
            out.push(d2 <= radius * radius);
        }
    }
    out
}

pub fn nrrd_bytes(v: &Volume) -> Vec<u8> {
    save_volume(v, LabelmapFormat::Nrrd)
}

pub fn engine_at(root: &Path) -> Engine {
    Engine::open(EngineConfig {
        data_root: Some(root.join("data")),
        cache_root: Some(root.join("cache")),
        job_workers: 2,
        ..EngineConfig::default()
    })
    .unwrap()
}

pub fn memory_engine() -> Engine {
    Engine::open(EngineConfig::default()).unwrap()
}

pub fn new_session(engine: &Engine, volume: &Volume, predictor_id: &str) -> String {
    let info = engine.load_volume_bytes(&nrrd_bytes(volume)).unwrap();
    engine
        .create_session(&NewSession {
            volume_id: info.volume_id,
            axis: Axis::K,
            label: 1,
            predictor_id: predictor_id.into(),
            window: None,
        })
        .unwrap()
        .session_id
}

pub fn click(slice: usize, row: i64, col: i64) -> PromptRequest {
    PromptRequest {
        slice,
        points: vec![PointSpec {
            row,
            col,
            polarity: Polarity::Positive,
        }],
        bbox: None,
    }
}
