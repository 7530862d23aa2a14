use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::volume::{axis_len, linear_index, slice_shape, voxel_of, Axis, Dims};

use super::MaskSlice;

/// Per-slice masks of one label along one axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSlices {
    pub axis: Axis,
    pub slices: BTreeMap<usize, MaskSlice>,
}

/// Per-label collections of slice masks, materialisable to a dense labelmap.
///
/// Where labels overlap, the lowest label id wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationVolume {
    dims: Dims,
    labels: BTreeMap<u16, LabelSlices>,
}

impl SegmentationVolume {
    pub fn new(dims: Dims) -> Self {
        SegmentationVolume {
            dims,
            labels: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> impl Iterator<Item = (u16, &LabelSlices)> {
        self.labels.iter().map(|(&l, s)| (l, s))
    }

    pub fn label(&self, label: u16) -> Option<&LabelSlices> {
        self.labels.get(&label)
    }

    /// Replaces `label`'s mask on slice `index`; an empty mask removes it.
    pub fn merge_mask(&mut self, label: u16, axis: Axis, index: usize, mask: &MaskSlice) -> Result<()> {
        if label == 0 {
            return Err(Error::InvalidLabel(0));
        }
        let len = axis_len(self.dims, axis);
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let (rows, cols) = slice_shape(self.dims, axis);
        mask.check_shape(rows, cols)?;
        let entry = self.labels.entry(label).or_insert_with(|| LabelSlices {
            axis,
            slices: BTreeMap::new(),
        });
        if entry.axis != axis {
            return Err(Error::DimsMismatch(format!(
                "label {label} is stored along axis {}, not {axis}",
                entry.axis
            )));
        }
        if mask.is_empty() {
            entry.slices.remove(&index);
            if entry.slices.is_empty() {
                self.labels.remove(&label);
            }
        } else {
            entry.slices.insert(index, mask.clone());
        }
        Ok(())
    }

    /// Dense i-fastest labelmap.
    pub fn to_dense(&self) -> Vec<u16> {
        let mut out = vec![0u16; self.dims.iter().product()];
        for (&label, ls) in &self.labels {
            for (&index, mask) in &ls.slices {
                for (r, c) in mask.ones() {
                    let v = &mut out[linear_index(self.dims, voxel_of(ls.axis, index, r, c))];
                    if *v == 0 {
                        *v = label;
                    }
                }
            }
        }
        out
    }

    /// Binary volume of voxels carrying `label` in the dense export.
    pub fn label_volume(&self, label: u16) -> Vec<bool> {
        self.to_dense().into_iter().map(|v| v == label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(rows: usize, cols: usize, r: usize, c: usize) -> MaskSlice {
        let mut m = MaskSlice::empty(rows, cols);
        m.set(r, c, true);
        m
    }

    #[test]
    fn empty_merge_removes_slice() {
        let mut seg = SegmentationVolume::new([3, 3, 3]);
        seg.merge_mask(2, Axis::K, 1, &dot(3, 3, 0, 0)).unwrap();
        assert_eq!(seg.label(2).unwrap().slices.len(), 1);
        seg.merge_mask(2, Axis::K, 1, &MaskSlice::empty(3, 3)).unwrap();
        assert!(seg.label(2).is_none());
    }

    #[test]
    fn merge_is_idempotent() {
        let mut seg = SegmentationVolume::new([3, 3, 3]);
        let m = dot(3, 3, 1, 2);
        seg.merge_mask(1, Axis::K, 0, &m).unwrap();
        let once = seg.clone();
        seg.merge_mask(1, Axis::K, 0, &m).unwrap();
        assert_eq!(seg, once);
    }

    #[test]
    fn lowest_label_wins() {
        let mut seg = SegmentationVolume::new([2, 2, 2]);
        seg.merge_mask(7, Axis::K, 0, &dot(2, 2, 0, 0)).unwrap();
        seg.merge_mask(3, Axis::J, 0, &dot(2, 2, 0, 0)).unwrap();
        let dense = seg.to_dense();
        assert_eq!(dense[0], 3);
        assert_eq!(dense.iter().filter(|&&v| v != 0).count(), 1);
    }

    #[test]
    fn other_labels_untouched() {
        let mut seg = SegmentationVolume::new([2, 2, 2]);
        seg.merge_mask(1, Axis::K, 0, &dot(2, 2, 0, 0)).unwrap();
        seg.merge_mask(2, Axis::K, 0, &dot(2, 2, 1, 1)).unwrap();
        seg.merge_mask(2, Axis::K, 0, &dot(2, 2, 1, 0)).unwrap();
        assert_eq!(seg.label(1).unwrap().slices[&0], dot(2, 2, 0, 0));
    }

    #[test]
    fn dims_checked() {
        let mut seg = SegmentationVolume::new([2, 3, 4]);
        assert!(matches!(
            seg.merge_mask(1, Axis::K, 0, &MaskSlice::full(2, 3)),
            Err(Error::DimsMismatch(_))
        ));
        assert!(seg.merge_mask(1, Axis::K, 0, &MaskSlice::full(3, 2)).is_ok());
        assert!(seg.merge_mask(1, Axis::K, 4, &MaskSlice::full(3, 2)).is_err());
        assert!(seg.merge_mask(0, Axis::K, 0, &MaskSlice::full(3, 2)).is_err());
    }
}
