use crate::error::{Error, Result};
use crate::real::Real;

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from raw CSR arrays, checking structure and finiteness.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        let m = Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Checks sorted in-range columns and finite coefficients.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("sparse matrix: {msg}")));
        if self.indptr.len() != self.nrows + 1 || self.indptr[0] != 0 {
            return bad("row pointer has wrong length or start".into());
        }
        if *self.indptr.last().unwrap() != self.indices.len() || self.indices.len() != self.values.len() {
            return bad("row pointer does not match entry count".into());
        }
        for r in 0..self.nrows {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            if a > b {
                return bad(format!("row {r} has negative length"));
            }
            let cols = &self.indices[a..b];
            if cols.iter().any(|&c| c >= self.ncols) {
                return bad(format!("row {r} has a column out of range"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {r} columns not strictly increasing"));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols, "matvec: input length");
        assert_eq!(y.len(), self.nrows, "matvec: output length");
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A^T x`.
    pub fn matvec_transpose(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows, "matvec_transpose: input length");
        let mut y = vec![T::zero(); self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// Row sums, used to check that constants lie in the kernel.
    /// Sparse product `self * rhs`.
    pub fn matmul(&self, rhs: &CsrMatrix<T>) -> Result<CsrMatrix<T>> {
        if self.ncols() != rhs.nrows() {
            return Err(Error::InvalidParameter(format!(
                "matmul: {}x{} times {}x{}",
                self.nrows(),
                self.ncols(),
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let mut tb = TripletBuilder::with_capacity(self.nrows(), rhs.ncols(), self.nnz() * 4);
        for r in 0..self.nrows() {
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    tb.push(r, c, a * b);
                }
            }
        }
        Ok(tb.build())
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.nrows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }
}

/// Accumulates `(row, col, value)` triplets; duplicates are summed on build.
#[derive(Debug, Clone)]
pub struct TripletBuilder<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> TripletBuilder<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r, c, v));
    }

    pub fn build(mut self) -> CsrMatrix<T> {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 0, 3.0);
        b.push(1, 2, 4.0);
        let m = b.build();
        m.validate().unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 5.0);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![2.0, 8.0]);
        assert_eq!(m.matvec_transpose(&[1.0, 1.0]), vec![3.0, 2.0, 5.0]);
    }

    #[test]
    fn empty_rows_are_valid() {
        let mut b = TripletBuilder::new(3, 3);
        b.push(2, 2, 1.0);
        let m: CsrMatrix<f64> = b.build();
        m.validate().unwrap();
        assert_eq!(m.diagonal(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_unsorted_columns() {
        let r = CsrMatrix::from_raw(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 1.0]);
        assert!(r.is_err());
    }
}
