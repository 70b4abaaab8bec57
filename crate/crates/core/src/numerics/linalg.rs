//! Small dense linear algebra on row-major slices.

use super::Tensor;
use crate::error::{Error, Result};

/// `a (m×k) · b (k×n)`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` with `a (k×m)`, `b (k×n)`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` with `a (m×k)`, `b (n×k)`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = arow
                .iter()
                .zip(&b[j * k..(j + 1) * k])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    out
}

fn square_dim(m: &Tensor) -> Result<usize> {
    match m.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(Error::arg(format!(
            "expected a square matrix, got shape {s:?}"
        ))),
    }
}

/// Row-wise softmax of a 2-D tensor, max-subtracted per row.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let [rows, cols] = *m.shape() else {
        return Err(Error::arg(format!(
            "softmax_rows needs 2-D input, got {:?}",
            m.shape()
        )));
    };
    let mut out = m.data().to_vec();
    softmax_rows_in_place(&mut out, rows, cols);
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

pub(crate) fn softmax_rows_in_place(data: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix. `vectors` is row-major with
/// eigenvector `j` in column `j`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
    pub dim: usize,
}

impl SymEigen {
    /// `V · diag(f(λ)) · Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.dim;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.vectors[i * n + k] * fl[k] * self.vectors[j * n + k];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 100;

fn check_symmetric(m: &Tensor, n: usize, tol: f64) -> Result<f64> {
    let d = m.data();
    let scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (d[i * n + j] - d[j * n + i]).abs();
            if gap > tol * scale {
                return Err(Error::NumericDomain(format!(
                    "matrix not symmetric: |M[{i},{j}] - M[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(scale)
}

/// Cyclic Jacobi eigen-decomposition. Converges when the off-diagonal
/// Frobenius norm drops below `1e-12 · max(1, ‖M‖_F)`.
pub fn sym_eigen(m: &Tensor, tol: f64) -> Result<SymEigen> {
    let n = square_dim(m)?;
    check_symmetric(m, n, tol)?;
    // Work on the exactly symmetrised copy.
    let src = m.data();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (src[i * n + j] + src[j * n + i]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = 1e-12 * fro.max(1.0);
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) >= threshold {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NumericDomain(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J on rows/cols p, q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    Ok(SymEigen {
        values,
        vectors: v,
        dim: n,
    })
}

/// Symmetric PSD square root. Eigenvalues in `[-tol·scale, 0)` are clamped to
/// zero; anything more negative is a domain error.
pub fn sym_sqrtm(m: &Tensor, tol: f64) -> Result<Tensor> {
    let n = square_dim(m)?;
    let scale = check_symmetric(m, n, tol)?;
    let eig = sym_eigen(m, tol)?;
    if let Some(&l) = eig.values.iter().find(|&&l| l < -tol * scale) {
        return Err(Error::NumericDomain(format!(
            "matrix not positive semi-definite: eigenvalue {l:e}"
        )));
    }
    let root = eig.reconstruct_with(|l| l.max(0.0).sqrt());
    Ok(Tensor::from_parts(vec![n, n], root))
}
