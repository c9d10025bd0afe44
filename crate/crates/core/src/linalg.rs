//! Small dense symmetric matrices and an LDLᵀ factorization with a pivot floor.

use std::ops::{Index, IndexMut};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Submatrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| cols.iter().map(|&c| self[(r, c)]).collect())
            .collect()
    }

    /// Square principal submatrix on `idx`.
    pub fn principal(&self, idx: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(idx.len());
        for (i, &r) in idx.iter().enumerate() {
            for (j, &c) in idx.iter().enumerate() {
                out[(i, j)] = self[(r, c)];
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)].abs()).fold(0.0, f64::max)
    }

    /// LDLᵀ without pivoting. Fails when a pivot falls to or below
    /// `rel_tol × max|diag|`, which for a stiffness matrix means a mechanism.
    pub fn ldlt(&self, rel_tol: f64) -> Result<Ldlt, SingularPivot> {
        let n = self.n;
        let floor = rel_tol * self.max_diagonal();
        let mut l = DenseMatrix::zeros(n);
        let mut d = vec![0.0; n];
        for j in 0..n {
            let mut dj = self[(j, j)];
            for k in 0..j {
                dj -= l[(j, k)] * l[(j, k)] * d[k];
            }
            if dj.is_nan() || dj <= floor {
                return Err(SingularPivot {
                    index: j,
                    pivot: dj,
                    floor,
                });
            }
            d[j] = dj;
            l[(j, j)] = 1.0;
            for i in (j + 1)..n {
                let mut v = self[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)] * d[k];
                }
                l[(i, j)] = v / dj;
            }
        }
        Ok(Ldlt { l, d })
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.n + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.n + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub index: usize,
    pub pivot: f64,
    pub floor: f64,
}

#[derive(Debug, Clone)]
pub struct Ldlt {
    l: DenseMatrix,
    d: Vec<f64>,
}

impl Ldlt {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
        }
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi /= di;
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
        }
        y
    }

    /// Ratio of the largest to smallest pivot; a cheap lower bound on the
    /// spectral condition number.
    pub fn condition_estimate(&self) -> f64 {
        if self.d.is_empty() {
            return 1.0;
        }
        let max = self.d.iter().copied().fold(f64::MIN, f64::max);
        let min = self.d.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}
