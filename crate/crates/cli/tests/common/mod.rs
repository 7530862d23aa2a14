#![allow(dead_code)]

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use volprompt::volume::{save_volume, LabelmapFormat, Volume};

/// Bright balls on a dim background; each ball is `(centre_ijk, radius)`.
pub fn balls(n: usize, balls: &[([f64; 3], f64)], inside: f32, outside: f32) -> Volume {
    let mut data = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let hit = balls.iter().any(|&(c, r)| in_ball([i, j, k], c, r));
                data.push(if hit { inside } else { outside });
            }
        }
    }
    Volume::from_data([n, n, n], data).unwrap()
}

pub fn in_ball(v: [usize; 3], c: [f64; 3], r: f64) -> bool {
    let d2: f64 = (0..3).map(|a| (v[a] as f64 - c[a]).powi(2)).sum();
    d2 <= r * r
}

/// Cross-section of a ball on axial slice `k`, rows = j, cols = i.
pub fn disk(n: usize, c: [f64; 3], r: f64, k: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(in_ball([i, j, k], c, r));
        }
    }
    out
}

pub fn write_volume(dir: &Path, name: &str, v: &Volume) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, save_volume(v, LabelmapFormat::from_path(&path))).unwrap();
    path
}

pub fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path
}

/// Builds an argument list from strings and paths.
#[macro_export]
macro_rules! args {
    ($($a:expr),* $(,)?) => {
        vec![$(std::ffi::OsString::from($a)),*]
    };
}

pub fn volprompt(args: Vec<OsString>) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volprompt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("VOLPROMPT_DATA_ROOT")
        .env_remove("VOLPROMPT_CACHE_ROOT")
        .env_remove("VOLPROMPT_BRIDGE_COMMAND")
        .output()
        .unwrap()
}
