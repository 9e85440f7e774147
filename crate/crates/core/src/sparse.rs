//! Minimal complex CSR matrices for operator and superoperator algebra.
//!
//! Row-major compressed storage with deterministic construction (triplets are
//! sorted and merged), enough arithmetic for Fock-operator products and
//! Kronecker assembly, and a bridge into faer's CSC format for factorization.

use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;

use crate::error::{PfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsMat {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<Complex64>,
}

impl CsMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsMat {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsMat {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        let mut m = CsMat {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: diag.to_vec(),
        };
        m.drop_zeros();
        m
    }

    /// Build from (row, col, value) triplets; duplicates are summed, exact
    /// zeros dropped. Deterministic for any input order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, Complex64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        let mut m = CsMat {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.data[k];
                if v != Complex64::new(0.0, 0.0) {
                    indices.push(self.indices[k]);
                    data.push(v);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.data = data;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        for k in self.indptr[row]..self.indptr[row + 1] {
            if self.indices[k] == col {
                return self.data[k];
            }
        }
        Complex64::new(0.0, 0.0)
    }

    pub fn row(&self, r: usize) -> (&[usize], &[Complex64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        let n = self.nrows.min(self.ncols);
        (0..n).map(|i| self.get(i, i)).collect()
    }

    /// y = A x.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    /// y += alpha * A x.
    pub fn matvec_acc(&self, alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] += alpha * acc;
        }
    }

    pub fn scaled(&self, alpha: Complex64) -> CsMat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= alpha;
        }
        out
    }

    pub fn add(&self, other: &CsMat) -> Result<CsMat> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(PfError::DimensionMismatch(format!(
                "{}x{} + {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for m in [self, other] {
            for r in 0..m.nrows {
                for k in m.indptr[r]..m.indptr[r + 1] {
                    triplets.push((r, m.indices[k], m.data[k]));
                }
            }
        }
        Ok(CsMat::from_triplets(self.nrows, self.ncols, triplets))
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &CsMat) -> Result<CsMat> {
        if self.ncols != other.nrows {
            return Err(PfError::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut accum: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[k];
                let mid = self.indices[k];
                for j in other.indptr[mid]..other.indptr[mid + 1] {
                    let c = other.indices[j];
                    if accum[c] == Complex64::new(0.0, 0.0) {
                        touched.push(c);
                    }
                    accum[c] += a * other.data[j];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                if accum[c] != Complex64::new(0.0, 0.0) {
                    indices.push(c);
                    data.push(accum[c]);
                }
                accum[c] = Complex64::new(0.0, 0.0);
            }
            touched.clear();
            indptr[r + 1] = indices.len();
        }
        Ok(CsMat {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            data,
        })
    }

    pub fn transpose(&self) -> CsMat {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r, self.data[k]));
            }
        }
        CsMat::from_triplets(self.ncols, self.nrows, triplets)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CsMat {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r, self.data[k].conj()));
            }
        }
        CsMat::from_triplets(self.ncols, self.nrows, triplets)
    }

    /// Kronecker product self (x) other, index = i_self * n_other + i_other.
    pub fn kron(&self, other: &CsMat) -> CsMat {
        let nrows = self.nrows * other.nrows;
        let ncols = self.ncols * other.ncols;
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz() * other.nnz());
        let mut data = Vec::with_capacity(self.nnz() * other.nnz());
        for ra in 0..self.nrows {
            for rb in 0..other.nrows {
                let row = ra * other.nrows + rb;
                for ka in self.indptr[ra]..self.indptr[ra + 1] {
                    let ca = self.indices[ka];
                    let va = self.data[ka];
                    for kb in other.indptr[rb]..other.indptr[rb + 1] {
                        indices.push(ca * other.ncols + other.indices[kb]);
                        data.push(va * other.data[kb]);
                    }
                }
                indptr[row + 1] = indices.len();
            }
        }
        CsMat {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                self.data[self.indptr[r]..self.indptr[r + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.push((r, self.indices[k], self.data[k]));
            }
        }
        out
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, Complex64>> {
        let trips: Vec<Triplet<usize, usize, Complex64>> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| PfError::NoConvergence(format!("sparse assembly failed: {e:?}")))
    }
}
