//! Small dense linear algebra for the k-arm estimator. `k` is a handful of
//! arms, so plain row-major `Vec<f64>` storage is enough.

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Matrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn transpose_times_self(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|r| self.get(r, i) * self.get(r, j)).sum();
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Relative pivot threshold below which a matrix is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Outcome of a failed elimination: the column whose pivot vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub column: usize,
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, Singular> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Singular { column: 0 });
    }
    let tol = PIVOT_TOLERANCE * scale;
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, m.get(r, col).abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs < tol {
            return Err(Singular { column: col });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(pivot_row, j));
                m.set(pivot_row, j, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        let p = m.get(col, col);
        for r in col + 1..n {
            let f = m.get(r, col) / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m.add(r, j, -f * m.get(col, j));
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m.get(i, j) * x[j]).sum();
        x[i] = (rhs[i] - s) / m.get(i, i);
    }
    Ok(x)
}

/// Whether elimination finds a vanishing pivot.
pub fn is_singular(a: &Matrix) -> bool {
    solve(a, &vec![0.0; a.dim()]).is_err()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.clone();
    let frob = m.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-12 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    (0..n).map(|i| m.get(i, i)).collect()
}

/// Smallest singular value of a square matrix, from the eigenvalues of `MᵀM`.
pub fn smallest_singular_value(a: &Matrix) -> f64 {
    let eig = symmetric_eigenvalues(&a.transpose_times_self());
    eig.into_iter().fold(f64::INFINITY, f64::min).max(0.0).sqrt()
}
