//! Steady Darcy flow `−∇·(a∇u) = f` on the unit square with `u = 0` on the boundary.
//!
//! Grid nodes sit at `(i/N, j/N)` for `i, j < N`; rows and columns with index 0
//! are the boundary (the opposite edge `x = 1` is the same periodic line), so
//! the unknowns are the `(N−1)²` interior nodes.

use crate::error::{Error, Result};

/// Five-point finite-volume operator with harmonic-mean face coefficients.
pub struct DarcySystem {
    n: usize,
    /// Face coefficients of each interior unknown: west, east, south, north.
    faces: Vec<[f64; 4]>,
    diag: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DarcySystem {
    /// `a` holds the coefficient at all `N×N` nodes, row-major.
    pub fn new(n: usize, a: &[f64]) -> Result<Self> {
        if n < 4 || a.len() != n * n {
            return Err(Error::shape("darcy", format!("{} coefficients for a {n}x{n} grid", a.len())));
        }
        if let Some(bad) = a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("conductivity must be positive, found {bad}")));
        }
        let at = |i: usize, j: usize| a[(i % n) * n + (j % n)];
        let h2 = (n * n) as f64;
        let m = n - 1;
        let mut faces = Vec::with_capacity(m * m);
        let mut diag = Vec::with_capacity(m * m);
        for i in 1..n {
            for j in 1..n {
                let p = at(i, j);
                let f = [
                    harmonic(p, at(i - 1, j)) * h2,
                    harmonic(p, at(i + 1, j)) * h2,
                    harmonic(p, at(i, j - 1)) * h2,
                    harmonic(p, at(i, j + 1)) * h2,
                ];
                diag.push(f.iter().sum());
                faces.push(f);
            }
        }
        Ok(Self { n, faces, diag })
    }

    pub fn unknowns(&self) -> usize {
        self.diag.len()
    }

    /// `y = A x` on interior unknowns (boundary values are zero).
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.n - 1;
        for r in 0..m {
            for c in 0..m {
                let k = r * m + c;
                let f = &self.faces[k];
                let mut v = self.diag[k] * x[k];
                if r > 0 {
                    v -= f[0] * x[k - m];
                }
                if r + 1 < m {
                    v -= f[1] * x[k + m];
                }
                if c > 0 {
                    v -= f[2] * x[k - 1];
                }
                if c + 1 < m {
                    v -= f[3] * x[k + 1];
                }
                y[k] = v;
            }
        }
    }

    /// Dense matrix, for small verification problems.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let u = self.unknowns();
        let mut e = vec![0.0; u];
        let mut col = vec![0.0; u];
        let mut out = vec![vec![0.0; u]; u];
        for j in 0..u {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..u {
                out[i][j] = col[i];
            }
            e[j] = 0.0;
        }
        out
    }

    /// Jacobi-preconditioned conjugate gradient to relative residual `tol`.
    pub fn solve_cg(&self, f: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let u = self.unknowns();
        let mut x = vec![0.0; u];
        let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fnorm == 0.0 {
            return Ok(x);
        }
        let mut r = f.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; u];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for k in 0..u {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * fnorm {
                // confirm against the true residual, not the recurrence
                self.apply(&x, &mut ap);
                let true_res = ap.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if true_res <= 10.0 * tol * fnorm {
                    return Ok(x);
                }
            }
            for k in 0..u {
                z[k] = r[k] / self.diag[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..u {
                p[k] = z[k] + beta * p[k];
            }
        }
        self.apply(&x, &mut ap);
        let res = ap.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / fnorm;
        Err(Error::Numerical(format!(
            "conjugate gradient did not converge in {max_iter} iterations (relative residual {res:e})"
        )))
    }

    pub fn relative_residual(&self, x: &[f64], f: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        let num = ax.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Embed interior values into the full `N×N` grid with zero boundary.
    pub fn to_grid(&self, x: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.n - 1);
        let mut out = vec![0.0; n * n];
        for r in 0..m {
            for c in 0..m {
                out[(r + 1) * n + c + 1] = x[r * m + c];
            }
        }
        out
    }

    /// Interior values of a full-grid field.
    pub fn interior(&self, grid: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.n - 1);
        let mut out = Vec::with_capacity(m * m);
        for r in 0..m {
            for c in 0..m {
                out.push(grid[(r + 1) * n + c + 1]);
            }
        }
        out
    }
}
