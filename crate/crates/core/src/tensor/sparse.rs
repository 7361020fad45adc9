use super::Matrix;

/// Compressed sparse row matrix. Used for the constant graph propagation
/// operator, which is almost entirely zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &Matrix) -> Self {
        let (rows, cols) = m.dim();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Builds from `(row, col, value)` triples; entries must be sorted by
    /// row then column and contain no duplicates.
    pub fn from_sorted_triples(rows: usize, cols: usize, triples: &[(usize, usize, f64)]) -> Self {
        let mut indptr = vec![0; rows + 1];
        for &(r, _, _) in triples {
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices: triples.iter().map(|t| t.1).collect(),
            values: triples.iter().map(|t| t.2).collect(),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m[[r, self.indices[k]]] = self.values[k];
            }
        }
        m
    }

    /// `self · x`
    pub fn matmul(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.cols, x.nrows(), "sparse matmul shape");
        let w = x.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.rows * w];
        for r in 0..self.rows {
            let out_row = &mut out[r * w..(r + 1) * w];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let (a, c) = (self.values[k], self.indices[k]);
                for (o, xv) in out_row.iter_mut().zip(&xs[c * w..(c + 1) * w]) {
                    *o += a * xv;
                }
            }
        }
        Matrix::from_shape_vec((self.rows, w), out).expect("sized")
    }

    /// `selfᵀ · x`
    pub fn transpose_matmul(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.rows, x.nrows(), "sparse transpose matmul shape");
        let w = x.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.cols * w];
        for r in 0..self.rows {
            let x_row = &xs[r * w..(r + 1) * w];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let (a, c) = (self.values[k], self.indices[k]);
                for (o, xv) in out[c * w..(c + 1) * w].iter_mut().zip(x_row) {
                    *o += a * xv;
                }
            }
        }
        Matrix::from_shape_vec((self.cols, w), out).expect("sized")
    }
}
