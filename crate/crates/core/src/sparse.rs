//! Compressed sparse row storage for binary matrices.
//!
//! Only coordinates are stored; every stored entry has value 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl BinaryMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
        }
    }

    /// Builds from per-row column lists. Columns are sorted; duplicates and
    /// out-of-range columns are rejected.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for (r, mut cols) in rows.into_iter().enumerate() {
            cols.sort_unstable();
            for w in cols.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::DimensionMismatch(format!(
                        "row {r} lists column {} twice",
                        w[0]
                    )));
                }
            }
            if let Some(&last) = cols.last() {
                if last as usize >= n_cols {
                    return Err(Error::DimensionMismatch(format!(
                        "row {r} has column {last} >= {n_cols}"
                    )));
                }
            }
            indices.extend_from_slice(&cols);
            indptr.push(indices.len());
        }
        Ok(Self {
            n_rows: indptr.len() - 1,
            n_cols,
            indptr,
            indices,
        })
    }

    /// Builds from `(row, col)` pairs in any order.
    pub fn from_coords(
        n_rows: usize,
        n_cols: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_rows];
        for (r, c) in coords {
            if r >= n_rows || c >= n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "coordinate ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            rows[r].push(c as u32);
        }
        Self::from_rows(n_cols, rows)
    }

    pub fn from_dense<R: AsRef<[u8]>>(n_cols: usize, dense: &[R]) -> Result<Self> {
        let rows = dense
            .iter()
            .map(|row| {
                let row = row.as_ref();
                if row.len() != n_cols {
                    return Err(Error::DimensionMismatch(format!(
                        "dense row has {} entries, expected {n_cols}",
                        row.len()
                    )));
                }
                Ok(row
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(j, _)| j as u32)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(n_cols, rows)
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Sorted column indices of the ones in row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&(c as u32)).is_ok()
    }

    pub fn dense_row(&self, r: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.n_cols];
        for &c in self.row(r) {
            out[c as usize] = 1;
        }
        out
    }

    /// All stored coordinates in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c as usize)))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for &r in rows {
            indices.extend_from_slice(self.row(r));
            indptr.push(indices.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            indptr,
            indices,
        }
    }

    /// Number of ones in each column.
    pub fn column_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_cols];
        for &c in &self.indices {
            counts[c as usize] += 1;
        }
        counts
    }
}

/// Fraction of zero entries: `1 - nnz / (rows * cols)`.
pub fn sparsity(matrix: &BinaryMatrix) -> Result<f64> {
    let total = matrix.n_rows() * matrix.n_cols();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(1.0 - matrix.nnz() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_rows_from_triplets() {
        let m = BinaryMatrix::from_coords(3, 4, [(0, 1), (0, 3), (2, 0)]).unwrap();
        assert_eq!(m.dense_row(0), vec![0, 1, 0, 1]);
        assert_eq!(m.dense_row(1), vec![0, 0, 0, 0]);
        assert_eq!(m.dense_row(2), vec![1, 0, 0, 0]);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(BinaryMatrix::from_coords(2, 2, [(0, 1), (0, 1)]).is_err());
        assert!(BinaryMatrix::from_coords(2, 2, [(2, 0)]).is_err());
    }

    #[test]
    fn sparsity_examples() {
        let zero = BinaryMatrix::zeros(3, 4);
        assert_eq!(sparsity(&zero).unwrap(), 1.0);
        let three = BinaryMatrix::from_coords(3, 4, [(0, 0), (1, 1), (2, 2)]).unwrap();
        assert_eq!(sparsity(&three).unwrap(), 0.75);
        assert!(matches!(
            sparsity(&BinaryMatrix::zeros(0, 4)),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn select_rows_keeps_order() {
        let m = BinaryMatrix::from_coords(3, 2, [(0, 0), (2, 1)]).unwrap();
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.row(0), &[1]);
        assert_eq!(s.row(1), &[0]);
    }
}
