//! Compressed sparse row storage used for all assembled operators.

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from `(row, col, value)` triplets, summing duplicates.
    /// The summation order is the triplet order, so identical input gives
    /// bitwise identical output.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        // bucket by row, stable
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, &[])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// `Aᵀ x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
        y
    }

    /// `yᵀ A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets: Vec<_> = self
            .iter()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.iter().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Submatrix on the given rows and columns, renumbered in list order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut triplets = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if col_map[c] != usize::MAX {
                    triplets.push((i, col_map[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &triplets)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }
}
