//! Householder QR least squares.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OlsError {
    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `XᵀX`.
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..p {
                for b in a..p {
                    g.data[a * p + b] += r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.data[a * p + b] = g.data[b * p + a];
            }
        }
        g
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// Upper-triangular `R⁻¹`, row-major p×p.
    r_inv: Vec<f64>,
}

impl LeastSquares {
    /// `(XᵀX)⁻¹ = R⁻¹R⁻ᵀ`.
    pub fn unscaled_covariance(&self) -> Matrix {
        let p = self.coefficients.len();
        let mut c = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let k0 = i.max(j);
                c.data[i * p + j] = (k0..p).map(|k| self.r_inv[i * p + k] * self.r_inv[j * p + k]).sum();
            }
        }
        c
    }

    /// Diagonal of `(XᵀX)⁻¹`.
    pub fn unscaled_variances(&self) -> Vec<f64> {
        let p = self.coefficients.len();
        (0..p).map(|i| (i..p).map(|k| self.r_inv[i * p + k].powi(2)).sum()).collect()
    }
}

const RANK_TOL: f64 = 1e-9;

pub fn solve(x: &Matrix, y: &[f64]) -> Result<LeastSquares, OlsError> {
    let (n, p) = (x.rows, x.cols);
    assert_eq!(y.len(), n, "response length");
    if n < p {
        return Err(OlsError::RankDeficient { column: n });
    }
    // column-major working copy
    let mut a: Vec<f64> = (0..p).flat_map(|j| (0..n).map(move |i| (i, j))).map(|(i, j)| x.get(i, j)).collect();
    let col_norms: Vec<f64> = (0..p).map(|j| a[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut qty = y.to_vec();
    let mut v = vec![0.0; n];

    for j in 0..p {
        let col = &a[j * n..(j + 1) * n];
        let norm = col[j..].iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm <= RANK_TOL * col_norms[j] || norm == 0.0 {
            return Err(OlsError::RankDeficient { column: j });
        }
        let alpha = if col[j] > 0.0 { -norm } else { norm };
        v[j..].copy_from_slice(&col[j..]);
        v[j] -= alpha;
        let vnorm2: f64 = v[j..].iter().map(|t| t * t).sum();
        for k in j..p {
            let ck = &mut a[k * n..(k + 1) * n];
            let s = 2.0 * v[j..].iter().zip(&ck[j..]).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
            ck[j..].iter_mut().zip(&v[j..]).for_each(|(c, vi)| *c -= s * vi);
        }
        let s = 2.0 * v[j..].iter().zip(&qty[j..]).map(|(a, b)| a * b).sum::<f64>() / vnorm2;
        qty[j..].iter_mut().zip(&v[j..]).for_each(|(c, vi)| *c -= s * vi);
        a[j * n + j] = alpha;
    }

    let r = |i: usize, j: usize| a[j * n + i];
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| r(i, k) * beta[k]).sum();
        beta[i] = (qty[i] - s) / r(i, i);
    }
    let mut r_inv = vec![0.0; p * p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let e = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|k| r(i, k) * r_inv[k * p + c]).sum();
            r_inv[i * p + c] = (e - s) / r(i, i);
        }
    }

    let fitted = x.mul_vec(&beta);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss = residuals.iter().map(|e| e * e).sum();
    Ok(LeastSquares { coefficients: beta, residuals, rss, r_inv })
}
