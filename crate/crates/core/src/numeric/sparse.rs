use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Compressed sparse row matrix. Row `i` lists the columns `j` with a stored
/// value; duplicate coordinates are summed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::shape(
                "SparseMatrix::from_triplets",
                format!("entry ({i}, {j}) outside {rows}x{cols}"),
            ));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
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

    /// Column indices and values stored in row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Returns a copy with every stored value transformed by `f(i, j, v)`.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> SparseMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.values[p] = f(i, self.indices[p], self.values[p]);
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets).expect("transposed coordinates stay in bounds")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// `self * x`
    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.cols {
            return Err(Error::shape(
                "sparse matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            let dst = out.row_mut(i);
            for p in self.indptr[i]..self.indptr[i + 1] {
                let w = self.values[p];
                for (d, &s) in dst.iter_mut().zip(x.row(self.indices[p])) {
                    *d += w * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * g`, without materialising the transpose.
    pub fn t_matmul_dense(&self, g: &Matrix) -> Result<Matrix> {
        if g.rows() != self.rows {
            return Err(Error::shape(
                "sparse transpose matmul",
                format!("({}x{})^T times {}x{}", self.rows, self.cols, g.rows(), g.cols()),
            ));
        }
        let mut out = Matrix::zeros(self.cols, g.cols());
        for i in 0..self.rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let w = self.values[p];
                let j = self.indices[p];
                let src = g.row(i);
                for (d, &s) in out.row_mut(j).iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let s = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 1), 0.0);
    }

    #[test]
    fn products_agree_with_dense() {
        let s = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, 0.5), (2, 1, -2.0)]).unwrap();
        let x = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let d = s.to_dense();
        assert_eq!(s.matmul_dense(&x).unwrap(), d.matmul(&x).unwrap());
        assert_eq!(s.t_matmul_dense(&x).unwrap(), d.t_matmul(&x).unwrap());
        assert_eq!(s.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn out_of_bounds_triplet_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }
}
