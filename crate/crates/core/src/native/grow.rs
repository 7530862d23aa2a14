use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::annotation::{BoxPrompt, MaskSlice, PointPrompt};
use crate::error::{Error, Result};
use crate::refine::erode;
use crate::volume::ScalarSlice;

/// Tuning for the built-in predictor. Connectivity is always 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowParams {
    pub tolerance_fraction: f64,
    pub max_region_fraction: f64,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            tolerance_fraction: 0.1,
            max_region_fraction: 1.0,
        }
    }
}

impl GrowParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tolerance_fraction", self.tolerance_fraction),
            ("max_region_fraction", self.max_region_fraction),
        ] {
            if v.is_nan() || v <= 0.0 || v > 1.0 {
                return Err(Error::InvalidRequest(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Largest region growth may produce on a slice of `pixels` pixels.
    pub fn region_limit(&self, pixels: usize) -> usize {
        ((self.max_region_fraction * pixels as f64).floor() as usize).clamp(1, pixels.max(1))
    }
}

/// Intensity band `[mu - tau, mu + tau]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mu: f64,
    pub tau: f64,
}

impl Band {
    pub fn contains(&self, v: f32) -> bool {
        let v = v as f64;
        v >= self.mu - self.tau && v <= self.mu + self.tau
    }
}

/// Result of region growing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowOutcome {
    pub mask: MaskSlice,
    /// Growth stopped at the region size limit.
    pub truncated: bool,
}

fn tau_for(slice: &ScalarSlice, fraction: f64) -> f64 {
    let (lo, hi) = slice.range();
    if hi > lo {
        fraction * (hi as f64 - lo as f64)
    } else {
        0.0
    }
}

/// Mean intensity at the positive points and a tolerance proportional to the
/// slice's intensity range.
pub fn estimate_band(slice: &ScalarSlice, positives: &[(usize, usize)], params: &GrowParams) -> Result<Band> {
    if positives.is_empty() {
        return Err(Error::NoPositiveSeeds);
    }
    let sum: f64 = positives.iter().map(|&(r, c)| slice.at(r, c) as f64).sum();
    Ok(Band {
        mu: sum / positives.len() as f64,
        tau: tau_for(slice, params.tolerance_fraction),
    })
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// Breadth-first growth from `seeds` over 4-connected in-band pixels.
///
/// Seeds are visited in ascending `(row, col)` order; seeds that are out of
/// band, outside the slice or outside `bbox` are skipped. With a box, growth
/// never leaves it. At most `limit` pixels are accepted.
pub fn region_grow(
    slice: &ScalarSlice,
    seeds: &[(usize, usize)],
    band: Band,
    bbox: Option<&BoxPrompt>,
    limit: usize,
) -> GrowOutcome {
    let (rows, cols) = (slice.rows, slice.cols);
    let mut mask = MaskSlice::empty(rows, cols);
    let allowed = |r: usize, c: usize| band.contains(slice.at(r, c)) && bbox.is_none_or(|b| b.contains(r, c));

    let mut sorted: Vec<(usize, usize)> = seeds.iter().copied().filter(|&(r, c)| r < rows && c < cols).collect();
    sorted.sort_unstable();
    sorted.dedup();

    let mut count = 0usize;
    let mut truncated = false;
    let mut queue = VecDeque::new();
    for (r, c) in sorted {
        if !allowed(r, c) {
            continue;
        }
        if count == limit {
            truncated = true;
            break;
        }
        mask.set(r, c, true);
        count += 1;
        queue.push_back((r, c));
    }

    'grow: while let Some((r, c)) = queue.pop_front() {
        for (dr, dc) in NEIGHBOURS {
            let (Some(nr), Some(nc)) = (r.checked_add_signed(dr), c.checked_add_signed(dc)) else {
                continue;
            };
            if nr >= rows || nc >= cols || mask.get(nr, nc) || !allowed(nr, nc) {
                continue;
            }
            if count == limit {
                truncated = true;
                break 'grow;
            }
            mask.set(nr, nc, true);
            count += 1;
            queue.push_back((nr, nc));
        }
    }
    GrowOutcome { mask, truncated }
}

/// Clears every 4-connected component of `mask` that contains a negative point.
pub fn apply_negatives(mask: &MaskSlice, negatives: &[(usize, usize)]) -> MaskSlice {
    let (rows, cols) = mask.shape();
    let mut out = mask.clone();
    let mut stack = Vec::new();
    for &(r, c) in negatives {
        if r < rows && c < cols && out.get(r, c) {
            out.set(r, c, false);
            stack.push((r, c));
        }
        while let Some((r, c)) = stack.pop() {
            for (dr, dc) in NEIGHBOURS {
                let (Some(nr), Some(nc)) = (r.checked_add_signed(dr), c.checked_add_signed(dc)) else {
                    continue;
                };
                if nr < rows && nc < cols && out.get(nr, nc) {
                    out.set(nr, nc, false);
                    stack.push((nr, nc));
                }
            }
        }
    }
    out
}

fn coords<'a>(points: impl Iterator<Item = &'a PointPrompt>) -> Vec<(usize, usize)> {
    points.map(|p| (p.row, p.col)).collect()
}

/// Single-slice prediction from prompts.
///
/// Positive points seed the growth; a box alone seeds from its centre. The
/// box bounds the region and negative points carve out whole components.
pub fn predict_prompts(
    slice: &ScalarSlice,
    prompts: &crate::annotation::PromptSet,
    params: &GrowParams,
) -> Result<GrowOutcome> {
    let mut seeds = coords(prompts.positives());
    if seeds.is_empty() {
        if let Some(b) = &prompts.bbox {
            seeds.push(b.center());
        }
    }
    let band = estimate_band(slice, &seeds, params)?;
    let grown = region_grow(
        slice,
        &seeds,
        band,
        prompts.bbox.as_ref(),
        params.region_limit(slice.rows * slice.cols),
    );
    let negatives = coords(prompts.negatives());
    Ok(GrowOutcome {
        mask: apply_negatives(&grown.mask, &negatives),
        truncated: grown.truncated,
    })
}

/// One slice-to-slice propagation step.
///
/// Seeds are the previous mask eroded once (or the mask itself when erosion
/// would empty it). The band centre is the previous slice's mean under the
/// seeds, so a next slice with nothing near the tracked intensity yields an
/// empty mask; the tolerance comes from the next slice's range.
pub fn propagate_step(
    prev_mask: &MaskSlice,
    prev_slice: &ScalarSlice,
    next_slice: &ScalarSlice,
    params: &GrowParams,
) -> Result<GrowOutcome> {
    let shape = (prev_slice.rows, prev_slice.cols);
    if prev_mask.shape() != shape || (next_slice.rows, next_slice.cols) != shape {
        return Err(Error::DimsMismatch(format!(
            "mask {:?}, previous slice {:?}, next slice {:?}",
            prev_mask.shape(),
            shape,
            (next_slice.rows, next_slice.cols)
        )));
    }
    if prev_mask.is_empty() {
        return Ok(GrowOutcome {
            mask: MaskSlice::empty(shape.0, shape.1),
            truncated: false,
        });
    }
    let eroded = erode(prev_mask);
    let seed_mask = if eroded.is_empty() { prev_mask } else { &eroded };
    let seeds: Vec<(usize, usize)> = seed_mask.ones().collect();
    let sum: f64 = seeds.iter().map(|&(r, c)| prev_slice.at(r, c) as f64).sum();
    let band = Band {
        mu: sum / seeds.len() as f64,
        tau: tau_for(next_slice, params.tolerance_fraction),
    };
    Ok(region_grow(
        next_slice,
        &seeds,
        band,
        None,
        params.region_limit(shape.0 * shape.1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{dice, PromptSet};
    use crate::volume::Axis;

    fn slice(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> ScalarSlice {
        let mut v = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                v.push(f(r, c));
            }
        }
        ScalarSlice::new(Axis::K, 0, rows, cols, v).unwrap()
    }

    fn two_tone() -> ScalarSlice {
        slice(5, 5, |_, c| if c < 3 { 100.0 } else { 200.0 })
    }

    #[test]
    fn band_example() {
        let s = slice(1, 4, |_, c| [100.0, 120.0, 200.0, 0.0][c]);
        let b = estimate_band(&s, &[(0, 0), (0, 1)], &GrowParams::default()).unwrap();
        assert_eq!(b.mu, 110.0);
        assert!((b.tau - 20.0).abs() < 1e-12);
        assert!(matches!(
            estimate_band(&s, &[], &GrowParams::default()),
            Err(Error::NoPositiveSeeds)
        ));
    }

    #[test]
    fn constant_slice_has_zero_tau_and_fills() {
        let s = slice(4, 6, |_, _| 7.0);
        let b = estimate_band(&s, &[(1, 1)], &GrowParams::default()).unwrap();
        assert_eq!(b.tau, 0.0);
        let g = region_grow(&s, &[(1, 1)], b, None, 24);
        assert_eq!(g.mask, MaskSlice::full(4, 6));
    }

    #[test]
    fn left_region_and_box_examples() {
        let s = two_tone();
        let band = Band { mu: 100.0, tau: 10.0 };
        let g = region_grow(&s, &[(2, 0)], band, None, 25);
        assert_eq!(g.mask.area(), 15);
        assert!(g.mask.ones().all(|(_, c)| c < 3));
        let b = BoxPrompt {
            r0: 0,
            c0: 0,
            r1: 2,
            c1: 2,
        };
        let g = region_grow(&s, &[(2, 0)], band, Some(&b), 25);
        assert_eq!(g.mask.area(), 9);
        assert!(!g.truncated);
    }

    #[test]
    fn out_of_band_seed_skipped() {
        let s = two_tone();
        let g = region_grow(&s, &[(0, 4)], Band { mu: 100.0, tau: 10.0 }, None, 25);
        assert!(g.mask.is_empty());
    }

    #[test]
    fn truncation_flagged() {
        let s = slice(4, 4, |_, _| 1.0);
        let g = region_grow(&s, &[(0, 0)], Band { mu: 1.0, tau: 0.0 }, None, 5);
        assert!(g.truncated);
        assert_eq!(g.mask.area(), 5);
        let p = GrowParams {
            max_region_fraction: 0.5,
            ..Default::default()
        };
        assert_eq!(p.region_limit(16), 8);
    }

    #[test]
    fn params_validated() {
        assert!(GrowParams::default().validate().is_ok());
        assert!(GrowParams {
            tolerance_fraction: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GrowParams {
            max_region_fraction: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn negatives_examples() {
        let mut m = MaskSlice::empty(3, 5);
        for r in 0..3 {
            m.set(r, 0, true);
            m.set(r, 4, true);
        }
        assert!(apply_negatives(&MaskSlice::full(3, 3), &[(1, 1)]).is_empty());
        let out = apply_negatives(&m, &[(2, 4)]);
        assert_eq!(out.ones().collect::<Vec<_>>(), vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(apply_negatives(&m, &[(1, 2)]), m);
    }

    #[test]
    fn uniform_slice_one_point_fills() {
        let s = slice(6, 5, |_, _| 3.0);
        let p = PromptSet::with_points(0, [PointPrompt::positive(2, 2)]);
        let g = predict_prompts(&s, &p, &GrowParams::default()).unwrap();
        assert_eq!(g.mask, MaskSlice::full(6, 5));
    }

    #[test]
    fn box_only_seeds_from_centre() {
        let s = two_tone();
        let mut p = PromptSet::new(0);
        p.bbox = Some(BoxPrompt {
            r0: 1,
            c0: 0,
            r1: 3,
            c1: 2,
        });
        let g = predict_prompts(&s, &p, &GrowParams::default()).unwrap();
        assert_eq!(g.mask.area(), 9);
    }

    #[test]
    fn step_examples() {
        let s = two_tone();
        let p = GrowParams::default();
        let empty = MaskSlice::empty(5, 5);
        assert!(propagate_step(&empty, &s, &s, &p).unwrap().mask.is_empty());

        let prev = region_grow(&s, &[(0, 0)], Band { mu: 100.0, tau: 10.0 }, None, 25).mask;
        let same = propagate_step(&prev, &s, &s, &p).unwrap();
        assert_eq!(dice(&same.mask, &prev).unwrap(), 1.0);

        let far = slice(5, 5, |_, _| 900.0);
        assert!(propagate_step(&prev, &s, &far, &p).unwrap().mask.is_empty());

        assert!(matches!(
            propagate_step(&MaskSlice::empty(4, 5), &s, &s, &p),
            Err(Error::DimsMismatch(_))
        ));
    }

    #[test]
    fn single_pixel_mask_falls_back_to_itself() {
        let s = slice(3, 3, |r, c| if (r, c) == (1, 1) { 5.0 } else { 0.0 });
        let mut prev = MaskSlice::empty(3, 3);
        prev.set(1, 1, true);
        assert_eq!(
            propagate_step(&prev, &s, &s, &GrowParams::default()).unwrap().mask,
            prev
        );
    }
}
