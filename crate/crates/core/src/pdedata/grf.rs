//! Periodic Gaussian random fields evaluated by direct mode sums.
//!
//! Fields are defined by a finite set of Fourier modes with `|k| ≤ kmax`, so
//! the same seed gives the same continuous field at every grid resolution.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRandomField {
    /// Mode standard deviations fall off as `|k|^-tau`.
    pub tau: f64,
    /// Pointwise standard deviation of the field.
    pub sigma: f64,
    /// Largest wavenumber magnitude included.
    pub kmax: usize,
    pub mean: f64,
}

impl GaussianRandomField {
    pub fn new(tau: f64, sigma: f64, kmax: usize) -> Result<Self> {
        if !(tau.is_finite() && sigma >= 0.0 && kmax >= 1) {
            return Err(Error::InvalidArgument(format!(
                "GRF needs finite tau, sigma >= 0, kmax >= 1; got {tau}, {sigma}, {kmax}"
            )));
        }
        Ok(Self {
            tau,
            sigma,
            kmax,
            mean: 0.0,
        })
    }

    /// Wave vectors on a half-space (one of each ±k pair), in a fixed order.
    fn modes(&self, dims: usize) -> Vec<Vec<i64>> {
        let km = self.kmax as i64;
        match dims {
            1 => (1..=km).map(|k| vec![k]).collect(),
            _ => {
                let mut out = Vec::new();
                for k1 in 0..=km {
                    for k2 in -km..=km {
                        if (k1 == 0 && k2 <= 0) || k1 * k1 + k2 * k2 > km * km {
                            continue;
                        }
                        out.push(vec![k1, k2]);
                    }
                }
                out
            }
        }
    }

    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }

    /// Sample field `stream` of `seed` on the periodic grid `x_j = j/n` per dim.
    pub fn sample(&self, sizes: &[usize], seed: u64, stream: u64) -> Result<Vec<f64>> {
        let dims = sizes.len();
        if !(1..=2).contains(&dims) {
            return Err(Error::InvalidArgument(format!("GRF supports 1 or 2 dims, got {dims}")));
        }
        let modes = self.modes(dims);
        let mut rng = Self::rng(seed, stream);
        let amps: Vec<f64> = modes
            .iter()
            .map(|k| (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt().powf(-self.tau))
            .collect();
        let var: f64 = amps.iter().map(|a| a * a).sum();
        let scale = if var > 0.0 { self.sigma / var.sqrt() } else { 0.0 };
        let coeffs: Vec<(f64, f64)> = amps
            .iter()
            .map(|a| {
                let c: f64 = StandardNormal.sample(&mut rng);
                let s: f64 = StandardNormal.sample(&mut rng);
                (a * scale * c, a * scale * s)
            })
            .collect();
        // per-axis tables of cos/sin(2π k x_j)
        let table = |n: usize| -> (Vec<f64>, Vec<f64>) {
            let km = self.kmax as i64;
            let width = (2 * km + 1) as usize;
            let mut c = vec![0.0; n * width];
            let mut s = vec![0.0; n * width];
            for j in 0..n {
                for k in -km..=km {
                    let t = 2.0 * PI * k as f64 * j as f64 / n as f64;
                    c[j * width + (k + km) as usize] = t.cos();
                    s[j * width + (k + km) as usize] = t.sin();
                }
            }
            (c, s)
        };
        let km = self.kmax as i64;
        let width = (2 * km + 1) as usize;
        let total: usize = sizes.iter().product();
        let mut out = vec![self.mean; total];
        match dims {
            1 => {
                let (c, s) = table(sizes[0]);
                for (k, &(a, b)) in modes.iter().zip(&coeffs) {
                    let col = (k[0] + km) as usize;
                    for (j, v) in out.iter_mut().enumerate() {
                        *v += a * c[j * width + col] + b * s[j * width + col];
                    }
                }
            }
            _ => {
                let (cx, sx) = table(sizes[0]);
                let (cy, sy) = table(sizes[1]);
                let ny = sizes[1];
                for (k, &(a, b)) in modes.iter().zip(&coeffs) {
                    let (c1, c2) = ((k[0] + km) as usize, (k[1] + km) as usize);
                    for i in 0..sizes[0] {
                        let (ci, si) = (cx[i * width + c1], sx[i * width + c1]);
                        let row = &mut out[i * ny..(i + 1) * ny];
                        for (j, v) in row.iter_mut().enumerate() {
                            let (cj, sj) = (cy[j * width + c2], sy[j * width + c2]);
                            // cos/sin of the summed phase
                            let cos = ci * cj - si * sj;
                            let sin = si * cj + ci * sj;
                            *v += a * cos + b * sin;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
