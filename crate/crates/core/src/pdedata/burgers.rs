//! Periodic viscous Burgers solver: pseudo-spectral in space, RK4 in time.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::ctensor::{C64, ZERO};
use crate::error::{Error, Result};

/// Smallest step before the solver gives up.
const DT_FLOOR: f64 = 1e-12;

pub struct BurgersSolver {
    n: usize,
    nu: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers `2πf` in FFT order.
    k: Vec<f64>,
    /// 2/3-rule mask on the nonlinear term.
    mask: Vec<f64>,
    /// Fraction of the stability limit used per step.
    pub safety: f64,
}

impl BurgersSolver {
    pub fn new(n: usize, nu: f64) -> Result<Self> {
        if n < 4 || !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("Burgers needs n >= 4 and nu > 0, got {n}, {nu}")));
        }
        let mut planner = FftPlanner::new();
        let freq = |j: usize| if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let cutoff = n as f64 / 3.0;
        Ok(Self {
            n,
            nu,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k: (0..n).map(|j| 2.0 * PI * freq(j)).collect(),
            mask: (0..n).map(|j| if freq(j).abs() < cutoff { 1.0 } else { 0.0 }).collect(),
            safety: 0.5,
        })
    }

    fn to_physical(&self, uh: &[C64]) -> Vec<C64> {
        let mut u = uh.to_vec();
        self.inv.process(&mut u);
        let s = 1.0 / self.n as f64;
        u.iter_mut().for_each(|v| *v *= s);
        u
    }

    /// `−ik·FFT(u²/2)·mask − νk²û`.
    fn rhs(&self, uh: &[C64]) -> Vec<C64> {
        let u = self.to_physical(uh);
        let mut f: Vec<C64> = u.iter().map(|v| C64::new(0.5 * v.re * v.re, 0.0)).collect();
        self.fwd.process(&mut f);
        f.iter()
            .zip(uh)
            .enumerate()
            .map(|(j, (fj, uj))| {
                let k = self.k[j];
                C64::new(0.0, -k) * fj * self.mask[j] - uj * (self.nu * k * k)
            })
            .collect()
    }

    fn stable_dt(&self, uh: &[C64]) -> f64 {
        let umax = self.to_physical(uh).iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
        let kmax = PI * self.n as f64;
        // RK4 covers about 2.8 on the imaginary axis and 2.78 on the real axis
        let adv = if umax > 0.0 { 2.8 / (kmax * umax) } else { f64::INFINITY };
        let diff = 2.78 / (self.nu * kmax * kmax);
        self.safety * adv.min(diff)
    }

    /// One RK4 step of length `dt` in spectral space.
    pub fn step(&self, uh: &[C64], dt: f64) -> Vec<C64> {
        let axpy = |a: &[C64], b: &[C64], s: f64| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
        let k1 = self.rhs(uh);
        let k2 = self.rhs(&axpy(uh, &k1, 0.5 * dt));
        let k3 = self.rhs(&axpy(uh, &k2, 0.5 * dt));
        let k4 = self.rhs(&axpy(uh, &k3, dt));
        (0..self.n)
            .map(|j| uh[j] + (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (dt / 6.0))
            .collect()
    }

    pub fn to_spectral(&self, u: &[f64]) -> Vec<C64> {
        let mut uh: Vec<C64> = u.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fwd.process(&mut uh);
        uh
    }

    /// Integrate from `u0` to time `t_end` with adaptive steps.
    pub fn solve(&self, u0: &[f64], t_end: f64) -> Result<Vec<f64>> {
        if u0.len() != self.n {
            return Err(Error::shape("burgers", format!("{} values on a {}-point grid", u0.len(), self.n)));
        }
        let mut uh = self.to_spectral(u0);
        let mut t = 0.0;
        while t < t_end {
            let limit = self.stable_dt(&uh);
            if !limit.is_finite() && limit != f64::INFINITY {
                return Err(Error::Numerical("non-finite Burgers state".into()));
            }
            let dt = limit.min(t_end - t);
            if dt < DT_FLOOR && t_end - t > DT_FLOOR {
                return Err(Error::Numerical(format!(
                    "adaptive step fell below {DT_FLOOR:e} at t = {t}"
                )));
            }
            uh = self.step(&uh, dt);
            t += dt;
            if uh.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("Burgers state blew up at t = {t}")));
            }
        }
        Ok(self.to_physical(&uh).iter().map(|v| v.re).collect())
    }

    /// Spatial mean from the zero mode.
    pub fn mean(&self, uh: &[C64]) -> f64 {
        uh.first().copied().unwrap_or(ZERO).re / self.n as f64
    }
}
