use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary row-major mask over one slice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskSlice {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskSlice {
    pub fn empty(rows: usize, cols: usize) -> Self {
        MaskSlice {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        MaskSlice {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::DimsMismatch(format!(
                "{} bits for a {rows}x{cols} mask",
                bits.len()
            )));
        }
        Ok(MaskSlice { rows, cols, bits })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        MaskSlice { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.cols + col] = on;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// `(row, col)` of every set pixel, in raster order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / cols, i % cols))
    }

    pub fn is_subset_of(&self, other: &MaskSlice) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &MaskSlice) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::DimsMismatch(format!(
                "mask is {}x{}, expected {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn to_rle(&self) -> Vec<u32> {
        rle_encode(&self.bits)
    }

    pub fn from_rle(runs: &[u32], rows: usize, cols: usize) -> Result<Self> {
        Ok(MaskSlice {
            rows,
            cols,
            bits: rle_decode(runs, rows * cols)?,
        })
    }
}

/// Alternating run lengths in row-major order, starting with a run of zeros
/// (which may be empty).
pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &b in bits {
        if b != current {
            runs.push(count);
            current = b;
            count = 0;
        }
        count += 1;
    }
    if count > 0 || runs.is_empty() {
        runs.push(count);
    }
    runs
}

pub fn rle_decode(runs: &[u32], len: usize) -> Result<Vec<bool>> {
    let sum: u64 = runs.iter().map(|&r| r as u64).sum();
    if sum != len as u64 {
        return Err(Error::RunSumMismatch {
            sum,
            expected: len as u64,
        });
    }
    let mut bits = Vec::with_capacity(len);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Ok(bits)
}

/// Wire form of a mask: `{rows, cols, rle}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub rows: usize,
    pub cols: usize,
    pub rle: Vec<u32>,
}

impl From<&MaskSlice> for RleMask {
    fn from(m: &MaskSlice) -> Self {
        RleMask {
            rows: m.rows,
            cols: m.cols,
            rle: m.to_rle(),
        }
    }
}

impl TryFrom<RleMask> for MaskSlice {
    type Error = Error;

    fn try_from(r: RleMask) -> Result<Self> {
        MaskSlice::from_rle(&r.rle, r.rows, r.cols)
    }
}

impl Serialize for MaskSlice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RleMask::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaskSlice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RleMask::deserialize(d)?;
        MaskSlice::try_from(r).map_err(serde::de::Error::custom)
    }
}

/// `2|A∩B| / (|A|+|B|)` over two equal-length bit sets; 1 when both are empty.
pub fn dice_bits(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimsMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

pub fn dice(a: &MaskSlice, b: &MaskSlice) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimsMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    dice_bits(&a.bits, &b.bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_examples() {
        assert_eq!(MaskSlice::empty(2, 2).to_rle(), vec![4]);
        assert_eq!(MaskSlice::full(2, 2).to_rle(), vec![0, 4]);
        let m = MaskSlice::from_bits(2, 2, vec![false, true, true, false]).unwrap();
        assert_eq!(m.to_rle(), vec![1, 2, 1]);
    }

    #[test]
    fn rle_decode_checks_sum() {
        assert!(matches!(
            MaskSlice::from_rle(&[1, 2], 2, 2),
            Err(Error::RunSumMismatch { sum: 3, expected: 4 })
        ));
        let m = MaskSlice::from_rle(&[1, 2, 1], 2, 2).unwrap();
        assert_eq!(m.bits(), &[false, true, true, false]);
    }

    #[test]
    fn dice_examples() {
        let a = MaskSlice::from_bits(1, 4, vec![true, true, false, false]).unwrap();
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = MaskSlice::from_bits(1, 4, vec![false, false, true, true]).unwrap();
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = MaskSlice::from_bits(1, 4, vec![false, true, true, false]).unwrap();
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = MaskSlice::empty(1, 4);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &MaskSlice::empty(2, 2)).is_err());
    }

    #[test]
    fn serde_uses_rle() {
        let m = MaskSlice::from_bits(1, 3, vec![true, false, true]).unwrap();
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, r#"{"rows":1,"cols":3,"rle":[0,1,1,1]}"#);
        assert_eq!(serde_json::from_str::<MaskSlice>(&j).unwrap(), m);
    }

    fn mask_strategy() -> impl Strategy<Value = MaskSlice> {
        (1usize..24, 1usize..24).prop_flat_map(|(r, c)| {
            proptest::collection::vec(any::<bool>(), r * c)
                .prop_map(move |bits| MaskSlice::from_bits(r, c, bits).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn rle_round_trip(m in mask_strategy()) {
            let runs = m.to_rle();
            prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), m.rows() * m.cols());
            // runs after the leading zero-run are never empty
            prop_assert!(runs.iter().skip(1).all(|&r| r > 0));
            prop_assert_eq!(MaskSlice::from_rle(&runs, m.rows(), m.cols()).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bit_flip_bounded(
            (a, b, flip) in mask_strategy().prop_flat_map(|a| {
                let (r, c) = a.shape();
                (Just(a), proptest::collection::vec(any::<bool>(), r * c), 0..r * c)
            })
        ) {
            let b = MaskSlice::from_bits(a.rows(), a.cols(), b).unwrap();
            let dab = dice(&a, &b).unwrap();
            prop_assert_eq!(dab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&dab));
            if !a.is_empty() {
                prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
            }
            let total = a.area() + b.area();
            if total > 0 {
                let mut b2 = b.clone();
                let (r, c) = (flip / a.cols(), flip % a.cols());
                b2.set(r, c, !b.get(r, c));
                let d2 = dice(&a, &b2).unwrap();
                let bound = 2.0 / total as f64;
                prop_assert!((d2 - dab).abs() <= bound + 1e-12, "{} -> {} bound {}", dab, d2, bound);
            }
        }
    }
}
