use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::WeightedFrame;
use crate::memory::LongTermMemory;

/// Absolute positional table of `n` base rows, extended to `n * n`
/// positions by hierarchical decomposition.
///
/// Position `k < n` is `base[k]`. Beyond that, with `i = k / n` and
/// `j = k % n`, the encoding is `beta * base[i] + (1 - beta) * base[j]`.
/// When `i == j` this collapses onto `base[i]`; [`collisions`](Self::collisions)
/// reports such coincidences.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalTable {
    base: Vec<Vec<f64>>,
    beta: f64,
}

impl PositionalTable {
    pub fn new(base: Vec<Vec<f64>>, beta: f64) -> Result<Self> {
        if base.len() < 2 {
            return Err(Error::InvalidTable("need at least two base positions"));
        }
        let dim = base[0].len();
        if dim == 0 || base.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidTable("rows must share a positive width"));
        }
        if base.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTable("non-finite entry"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidTable("beta must lie in (0, 1)"));
        }
        for i in 0..base.len() {
            for j in i + 1..base.len() {
                if base[i] == base[j] {
                    return Err(Error::InvalidTable("base rows must be pairwise distinct"));
                }
            }
        }
        Ok(PositionalTable { base, beta })
    }

    /// Standard sine/cosine table with `n` rows of width `dim`.
    pub fn sinusoidal(n: usize, dim: usize, beta: f64) -> Result<Self> {
        let base = (0..n)
            .map(|pos| {
                (0..dim)
                    .map(|d| {
                        let rate = libm::pow(10_000.0, -((d / 2 * 2) as f64) / dim as f64);
                        let angle = pos as f64 * rate;
                        if d % 2 == 0 {
                            libm::sin(angle)
                        } else {
                            libm::cos(angle)
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(base, beta)
    }

    pub fn base_len(&self) -> usize {
        self.base.len()
    }

    pub fn dim(&self) -> usize {
        self.base[0].len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn base(&self) -> &[Vec<f64>] {
        &self.base
    }

    /// Number of encodable positions, `n * n`.
    pub fn capacity(&self) -> u64 {
        let n = self.base.len() as u64;
        n * n
    }

    pub fn extended_position(&self, k: u64) -> Result<Vec<f64>> {
        let n = self.base.len() as u64;
        if k >= self.capacity() {
            return Err(Error::PositionOutOfRange { position: k, limit: self.capacity() });
        }
        if k < n {
            return Ok(self.base[k as usize].clone());
        }
        let (hi, lo) = (&self.base[(k / n) as usize], &self.base[(k % n) as usize]);
        let b = self.beta;
        Ok(hi.iter().zip(lo).map(|(x, y)| b * x + (1.0 - b) * y).collect())
    }

    /// All encodings for positions `0..n*n`.
    pub fn all_positions(&self) -> Vec<Vec<f64>> {
        (0..self.capacity()).map(|k| self.extended_position(k).expect("in range")).collect()
    }

    /// Brute-force scan for position pairs whose encodings lie within
    /// `tol` (Euclidean) of each other.
    pub fn collisions(&self, tol: f64) -> Vec<(u64, u64)> {
        let all = self.all_positions();
        let mut out = Vec::new();
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                let d2: f64 = all[a].iter().zip(&all[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                if libm::sqrt(d2) < tol {
                    out.push((a as u64, b as u64));
                }
            }
        }
        out
    }

    /// The pairs `(i, i * n + i)` for `1 <= i < n`, where the blend degenerates
    /// to `base[i]`.
    pub fn diagonal_collisions(&self) -> Vec<(u64, u64)> {
        let n = self.base.len() as u64;
        (1..n).map(|i| (i, i * n + i)).collect()
    }
}

/// Pairs each long-term entry with the encoding for its rank.
pub fn assign_positions<'a>(
    ltm: &'a LongTermMemory,
    table: &PositionalTable,
) -> Result<Vec<(&'a WeightedFrame, Vec<f64>)>> {
    if ltm.len() as u64 > table.capacity() {
        return Err(Error::MemoryTooLongForTable { len: ltm.len(), limit: table.capacity() });
    }
    ltm.frames()
        .iter()
        .enumerate()
        .map(|(r, f)| Ok((f, table.extended_position(r as u64)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TokenMatrix;
    use alloc::vec;

    fn table(n: usize) -> PositionalTable {
        let base = (0..n).map(|i| vec![i as f64, (i * i) as f64 * 0.5, 1.0 - i as f64]).collect();
        PositionalTable::new(base, 0.4).unwrap()
    }

    #[test]
    fn base_positions_are_verbatim() {
        let t = table(8);
        for k in 0..8 {
            assert_eq!(t.extended_position(k).unwrap(), t.base()[k as usize]);
        }
    }

    #[test]
    fn blended_positions_follow_formula() {
        let t = table(8);
        // k = 19: i = 2, j = 3
        let got = t.extended_position(19).unwrap();
        let want: Vec<f64> = t.base()[2].iter().zip(&t.base()[3]).map(|(a, b)| 0.4 * a + 0.6 * b).collect();
        assert_eq!(got, want);
        // k = 63: i = j = 7 collapses onto base[7]
        let last = t.extended_position(63).unwrap();
        for (a, b) in last.iter().zip(&t.base()[7]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            t.extended_position(64),
            Err(Error::PositionOutOfRange { position: 64, limit: 64 })
        );
    }

    #[test]
    fn table_validation() {
        assert!(PositionalTable::new(vec![vec![1.0]], 0.4).is_err());
        assert!(PositionalTable::new(vec![vec![1.0], vec![1.0]], 0.4).is_err());
        assert!(PositionalTable::new(vec![vec![1.0], vec![2.0]], 1.0).is_err());
        assert!(PositionalTable::new(vec![vec![1.0], vec![2.0, 3.0]], 0.5).is_err());
        assert!(PositionalTable::sinusoidal(32, 64, 0.4).is_ok());
    }

    #[test]
    fn assign_positions_by_rank() {
        let t = table(4);
        let mut ltm = LongTermMemory::new(64, 1, 1).unwrap();
        assert!(assign_positions(&ltm, &t).unwrap().is_empty());
        let frames = (0..7)
            .map(|i| WeightedFrame::source(TokenMatrix::from_rows(&[[1.0 + i as f64]]).unwrap(), i))
            .collect();
        ltm.append(frames).unwrap();
        let pos = assign_positions(&ltm, &t).unwrap();
        assert_eq!(pos.len(), 7);
        for (r, (_, v)) in pos.iter().enumerate() {
            if r < 4 {
                assert_eq!(v, &t.base()[r]);
            } else {
                assert_eq!(v, &t.extended_position(r as u64).unwrap());
            }
        }
        let small = PositionalTable::new(vec![vec![0.0], vec![1.0]], 0.4).unwrap();
        assert!(matches!(
            assign_positions(&ltm, &small),
            Err(Error::MemoryTooLongForTable { len: 7, limit: 4 })
        ));
    }
}
