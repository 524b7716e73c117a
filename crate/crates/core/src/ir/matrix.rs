use super::Cell;

/// Integer matrix in compressed-row form. Entries within a row are sorted by
/// column and explicit zeros are never stored, so structural equality is
/// value equality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Cell>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1)))
    }

    /// Row-major dense entries.
    pub fn from_dense(rows: usize, cols: usize, entries: &[Cell]) -> Self {
        assert_eq!(entries.len(), rows * cols, "dense entry count");
        Self::from_triplets(
            rows,
            cols,
            entries
                .iter()
                .enumerate()
                .map(|(k, &v)| (k / cols.max(1), k % cols.max(1), v)),
        )
    }

    /// Duplicate coordinates are summed; zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Cell)>,
    ) -> Self {
        let mut t: Vec<(usize, usize, Cell)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            assert!(
                r < rows && c < cols,
                "entry ({r}, {c}) outside {rows}x{cols}"
            );
        }
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            i += 1;
            while i < t.len() && t[i].0 == r && t[i].1 == c {
                v += t[i].2;
                i += 1;
            }
            if v != 0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of row `r` as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Cell)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Cell)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> Cell {
        self.row(r).find(|&(col, _)| col == c).map_or(0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Cell> {
        let mut out = vec![0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            out[r * self.cols + c] = v;
        }
        out
    }

    pub fn mul_vec(&self, x: &[Cell]) -> Vec<Cell> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_triplets_agree() {
        let m = SparseMatrix::from_dense(2, 3, &[1, 0, -2, 0, 0, 3]);
        let t = SparseMatrix::from_triplets(2, 3, [(1, 2, 3), (0, 2, -2), (0, 0, 1)]);
        assert_eq!(m, t);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), vec![1, 0, -2, 0, 0, 3]);
        assert_eq!(m.mul_vec(&[1, 1, 1]), vec![-1, 3]);
        assert_eq!(m.get(0, 2), -2);
        assert_eq!(m.get(1, 0), 0);
    }

    #[test]
    fn duplicates_sum_and_cancel() {
        let m = SparseMatrix::from_triplets(1, 2, [(0, 0, 2), (0, 0, -2), (0, 1, 1), (0, 1, 1)]);
        assert_eq!(m.to_dense(), vec![0, 2]);
        assert_eq!(m.nnz(), 1);
    }
}
