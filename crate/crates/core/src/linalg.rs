//! Dense symmetric positive-definite solves shared by the imputers and the
//! ridge base learner.

use crate::error::{Error, Result};

/// Upper bound of diagonal jitter escalation.
pub const MAX_JITTER: f64 = 1e-2;

/// Square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a + jitter·I`. Returns `None` when a pivot is not strictly
    /// positive.
    pub fn factor(a: &SymMatrix, jitter: f64) -> Option<Self> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a.get(j, j) + jitter;
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Some(Cholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[i * n + k] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        z
    }
}

/// Solves `(a + j·I) x = b`, starting at `j = jitter` and multiplying by ten
/// on each failed factorization until [`MAX_JITTER`] is exceeded.
///
/// A zero starting jitter escalates from `1e-10`. Returns the solution and
/// the jitter that succeeded.
pub fn solve_spd_with_jitter(a: &SymMatrix, b: &[f64], jitter: f64) -> Result<(Vec<f64>, f64)> {
    if b.len() != a.n {
        return Err(Error::DimensionMismatch {
            expected: a.n,
            got: b.len(),
        });
    }
    let mut j = jitter;
    loop {
        if let Some(ch) = Cholesky::factor(a, j) {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, j));
            }
        }
        j = if j == 0.0 { 1e-10 } else { j * 10.0 };
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "matrix of order {} not positive definite with jitter up to {MAX_JITTER}",
                a.n
            )));
        }
    }
}

/// Ridge normal equations `(XᵀX + λI) β = Xᵀy` over the given rows.
pub fn ridge_normal_equations(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    let gram = gram_matrix(rows, p);
    let mut rhs = vec![0.0; p];
    for (row, &yi) in rows.iter().zip(y) {
        for (r, &v) in rhs.iter_mut().zip(row) {
            *r += v * yi;
        }
    }
    let (beta, _) = solve_spd_with_jitter(&gram, &rhs, lambda)?;
    Ok(beta)
}

pub fn gram_matrix(rows: &[Vec<f64>], p: usize) -> SymMatrix {
    let mut g = SymMatrix::zeros(p);
    for row in rows {
        for i in 0..p {
            let ri = row[i];
            for j in 0..=i {
                g.data[i * p + j] += ri * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g.data[j * p + i] = g.data[i * p + j];
        }
    }
    g
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
