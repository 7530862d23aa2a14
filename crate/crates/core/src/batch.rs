//! Headless runs: volume + prompt file in, labelmap (and optional report) out.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::annotation::{dice_bits, PromptFile};
use crate::engine::{Engine, NewSession, PromptRequest, PropagateRequest};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::orchestrator::{JobState, Mode};
use crate::volume::{
    axis_len, linear_index, load_volume, slice_shape, voxel_of, Axis, Format, LabelmapFormat, WindowLevel,
};

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub volume: PathBuf,
    pub prompts: PathBuf,
    pub predictor_id: String,
    pub mode: Mode,
    pub from_slice: Option<usize>,
    pub window: Option<WindowLevel>,
    pub output: PathBuf,
    pub reference: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub slice: usize,
    pub area: usize,
    pub conditional: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub volume: PathBuf,
    pub volume_digest: String,
    pub prompts: PathBuf,
    pub predictor_id: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_slice: Option<usize>,
    pub axis: Axis,
    pub label: u16,
    pub output: PathBuf,
    pub output_format: LabelmapFormat,
    pub engine: serde_json::Value,
    pub slices: Vec<SliceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_dice: Option<f64>,
    pub warnings: Vec<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Runs prompt prediction and propagation for one volume, writing the
/// labelmap to `spec.output`.
pub fn run_batch(engine: &Engine, spec: &BatchSpec) -> Result<BatchReport> {
    let bytes = read(&spec.volume)?;
    let prompt_text = fs::read_to_string(&spec.prompts)?;
    let file = PromptFile::parse(&prompt_text)?;
    let label = file.label_id()?;

    let volume = engine.load_volume_bytes(&bytes)?;
    let session = engine.create_session(&NewSession {
        volume_id: volume.volume_id.clone(),
        axis: file.axis,
        label: file.label,
        predictor_id: spec.predictor_id.clone(),
        window: spec.window,
    })?;
    let geom = engine.session(&session.session_id)?.geometry();
    let sets = file.prompt_sets(&geom)?;
    if sets.is_empty() {
        return Err(Error::NoConditionalSlices);
    }
    if spec.mode != Mode::All {
        let from = spec
            .from_slice
            .ok_or_else(|| Error::InvalidRequest(format!("mode {:?} needs a from-slice", spec.mode)))?;
        if !sets.iter().any(|s| s.slice_index == from) {
            return Err(Error::InvalidRequest(format!(
                "from-slice {from} has no prompts in the prompt file"
            )));
        }
    }
    for set in &sets {
        engine.add_prompts(
            &session.session_id,
            &PromptRequest {
                slice: set.slice_index,
                points: set.points.iter().map(|&p| p.into()).collect(),
                bbox: set.bbox.map(Into::into),
            },
        )?;
    }

    let job = engine.propagate(
        &session.session_id,
        &PropagateRequest {
            mode: spec.mode,
            from_slice: if spec.mode == Mode::All { None } else { spec.from_slice },
        },
    )?;
    let job = engine.wait_job(&job.job_id)?;
    match job.state {
        JobState::Done => {}
        JobState::Failed => {
            return Err(Error::ComputeFailed(
                job.error.unwrap_or_else(|| "propagation failed".into()),
            ));
        }
        other => return Err(Error::ComputeFailed(format!("propagation ended {other:?}"))),
    }

    let format = LabelmapFormat::from_path(&spec.output);
    let labelmap = engine.export_labelmap(&session.session_id, format)?;
    write_atomic(&spec.output, &labelmap)?;

    let result = engine.session(&session.session_id)?;
    let dims = result.meta().dims;
    let dense = result.segmentation().to_dense();
    let ours: Vec<bool> = dense.iter().map(|&v| v == label).collect();
    let theirs = match &spec.reference {
        Some(path) => {
            let reference = load_volume(&read(path)?, Format::Auto)?;
            if reference.dims() != dims {
                return Err(Error::DimsMismatch(format!(
                    "reference {:?} vs volume {:?}",
                    reference.dims(),
                    dims
                )));
            }
            Some(
                reference
                    .data()
                    .iter()
                    .map(|&v| v == label as f32)
                    .collect::<Vec<bool>>(),
            )
        }
        None => None,
    };

    let axis = file.axis;
    let (rows, cols) = slice_shape(dims, axis);
    let conditional = &result.state().conditional;
    let mut slices = Vec::new();
    for index in 0..axis_len(dims, axis) {
        let idx: Vec<usize> = (0..rows * cols)
            .map(|p| linear_index(dims, voxel_of(axis, index, p / cols, p % cols)))
            .collect();
        let a: Vec<bool> = idx.iter().map(|&i| ours[i]).collect();
        let dice = match &theirs {
            Some(t) => {
                let b: Vec<bool> = idx.iter().map(|&i| t[i]).collect();
                Some(dice_bits(&a, &b)?)
            }
            None => None,
        };
        slices.push(SliceReport {
            slice: index,
            area: a.iter().filter(|&&x| x).count(),
            conditional: conditional.contains_key(&index),
            dice,
        });
    }
    let volume_dice = match &theirs {
        Some(t) => Some(dice_bits(&ours, t)?),
        None => None,
    };

    let report = BatchReport {
        volume: spec.volume.clone(),
        volume_digest: volume.volume_id.clone(),
        prompts: spec.prompts.clone(),
        predictor_id: spec.predictor_id.clone(),
        mode: spec.mode,
        from_slice: job.from_slice,
        axis,
        label,
        output: spec.output.clone(),
        output_format: format,
        engine: serde_json::to_value(engine.config()).map_err(|e| Error::InvalidRequest(e.to_string()))?,
        slices,
        volume_dice,
        warnings: job.warnings,
    };
    if let Some(path) = &spec.report {
        let text = serde_json::to_vec_pretty(&report).map_err(|e| Error::InvalidRequest(e.to_string()))?;
        write_atomic(path, &text)?;
    }
    Ok(report)
}
