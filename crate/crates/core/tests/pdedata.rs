use std::f64::consts::PI;

use cono::pdedata::{
    add_noise, gen_burgers, gen_darcy, read_gfd, read_gfd_from, resample, resample_field, sigma_d, solve_darcy,
    split, split_indices, write_gfd, write_gfd_to, BurgersSolver, DarcyCoefficient, DarcySystem, GaussianRandomField,
    GridDataset, GridSample, NoiseTarget,
};
use cono::{ComplexTensor, Error, GridSpec};
use proptest::prelude::*;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / n as f64).collect()
}

#[test]
fn burgers_small_amplitude_follows_heat_decay() {
    let (n, nu, t, eps) = (64, 0.1, 0.1, 1e-6);
    let x = grid(n);
    let u0: Vec<f64> = x.iter().map(|x| eps * (2.0 * PI * x).sin()).collect();
    let u = BurgersSolver::new(n, nu).unwrap().solve(&u0, t).unwrap();
    let decay = (-4.0 * PI * PI * nu * t).exp();
    let exact: Vec<f64> = u0.iter().map(|v| v * decay).collect();
    assert!(rel_l2(&u, &exact) <= 1e-4);
}

/// Exact solution by the Cole–Hopf transform: `u = −2ν φ_x / φ` where `φ`
/// solves the heat equation from `φ0 = exp(−∫u0 / 2ν)`. The Fourier
/// coefficients of `φ0` come from trapezoid quadrature on a fine grid.
fn cole_hopf(x: &[f64], nu: f64, t: f64) -> Vec<f64> {
    // u0 = sin(2πx) + 0.5 sin(4πx), integral from 0
    let prim = |s: f64| (1.0 - (2.0 * PI * s).cos()) / (2.0 * PI) + 0.5 * (1.0 - (4.0 * PI * s).cos()) / (4.0 * PI);
    let q = 4096;
    let kmax = 80i64;
    let phi0: Vec<f64> = (0..q).map(|j| (-prim(j as f64 / q as f64) / (2.0 * nu)).exp()).collect();
    let coeffs: Vec<(f64, f64)> = (0..=kmax)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, p) in phi0.iter().enumerate() {
                let th = -2.0 * PI * k as f64 * j as f64 / q as f64;
                re += p * th.cos();
                im += p * th.sin();
            }
            (re / q as f64, im / q as f64)
        })
        .collect();
    x.iter()
        .map(|&x| {
            let (mut phi, mut dphi) = (coeffs[0].0, 0.0);
            for k in 1..=kmax {
                let (a, b) = coeffs[k as usize];
                let kk = 2.0 * PI * k as f64;
                let damp = (-kk * kk * nu * t).exp();
                // real field: 2 Re(c_k e^{ikx})
                let (c, s) = ((kk * x).cos(), (kk * x).sin());
                phi += 2.0 * damp * (a * c - b * s);
                dphi += 2.0 * damp * kk * (-a * s - b * c);
            }
            -2.0 * nu * dphi / phi
        })
        .collect()
}

#[test]
fn burgers_matches_cole_hopf() {
    let (n, nu, t) = (128, 0.1, 0.1);
    let x = grid(n);
    let u0: Vec<f64> = x
        .iter()
        .map(|x| (2.0 * PI * x).sin() + 0.5 * (4.0 * PI * x).sin())
        .collect();
    let u = BurgersSolver::new(n, nu).unwrap().solve(&u0, t).unwrap();
    let exact = cole_hopf(&x, nu, t);
    let err = rel_l2(&u, &exact);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn burgers_cole_hopf_oracle_reproduces_initial_condition() {
    let x = grid(64);
    let at0 = cole_hopf(&x, 0.1, 0.0);
    let u0: Vec<f64> = x
        .iter()
        .map(|x| (2.0 * PI * x).sin() + 0.5 * (4.0 * PI * x).sin())
        .collect();
    assert!(rel_l2(&at0, &u0) <= 1e-10);
}

#[test]
fn burgers_large_viscosity_gives_mean() {
    let n = 32;
    let field = GaussianRandomField {
        mean: 0.7,
        ..GaussianRandomField::new(2.5, 1.0, 8).unwrap()
    };
    let u0 = field.sample(&[n], 3, 0).unwrap();
    let mean = u0.iter().sum::<f64>() / n as f64;
    let u = BurgersSolver::new(n, 10.0).unwrap().solve(&u0, 0.1).unwrap();
    let dev = u.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    assert!(dev <= 1e-10, "deviation {dev}");
}

#[test]
fn burgers_conserves_mean_per_step() {
    let n = 128;
    let solver = BurgersSolver::new(n, 0.05).unwrap();
    let field = GaussianRandomField {
        mean: 0.3,
        ..GaussianRandomField::new(2.5, 1.0, 16).unwrap()
    };
    let u0 = field.sample(&[n], 11, 4).unwrap();
    let mut uh = solver.to_spectral(&u0);
    let m0 = solver.mean(&uh);
    for _ in 0..200 {
        uh = solver.step(&uh, 1e-4);
        assert!((solver.mean(&uh) - m0).abs() <= 1e-10);
    }
}

#[test]
fn burgers_rejects_bad_arguments() {
    assert!(gen_burgers(2, 100, 0.1, 0.1, 0).is_err());
    assert!(gen_burgers(2, 64, 0.0, 0.1, 0).is_err());
    assert!(BurgersSolver::new(64, -1.0).is_err());
}

#[test]
fn burgers_dataset_is_deterministic_and_shaped() {
    let a = gen_burgers(4, 64, 0.1, 0.1, 5).unwrap();
    let b = gen_burgers(4, 64, 0.1, 0.1, 5).unwrap();
    let c = gen_burgers(4, 64, 0.1, 0.1, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples[0].input, c.samples[0].input);
    assert_eq!(a.samples[0].input.shape(), &[1, 64]);
    assert_eq!(a.meta_value("pde"), Some("burgers"));
    assert_eq!(a.meta_value("nu"), Some("0.1"));
}

#[test]
fn grf_is_resolution_consistent_and_normalized() {
    let f = GaussianRandomField::new(2.5, 1.0, 16).unwrap();
    let fine = f.sample(&[128], 2, 7).unwrap();
    let coarse = f.sample(&[64], 2, 7).unwrap();
    for j in 0..64 {
        assert!((fine[2 * j] - coarse[j]).abs() <= 1e-12);
    }
    // pointwise variance averaged over many draws
    let draws = 400;
    let var: f64 = (0..draws)
        .map(|s| f.sample(&[32], 9, s).unwrap().iter().map(|v| v * v).sum::<f64>() / 32.0)
        .sum::<f64>()
        / draws as f64;
    assert!((var - 1.0).abs() < 0.15, "variance {var}");
    let f2 = f.sample(&[16, 16], 1, 0).unwrap();
    assert_eq!(f2.len(), 256);
    assert!(f.sample(&[4, 4, 4], 0, 0).is_err());
}

/// Dense LU with partial pivoting.
fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn darcy_poisson_matches_dense_lu() {
    let n = 32;
    let a = vec![1.0; n * n];
    let u = solve_darcy(n, &a, &vec![1.0; n * n]).unwrap();
    let system = DarcySystem::new(n, &a).unwrap();
    // independent assembly of the 5-point Laplacian with h = 1/n
    let m = n - 1;
    let h2 = (n * n) as f64;
    let mut dense = vec![vec![0.0; m * m]; m * m];
    for r in 0..m {
        for c in 0..m {
            let k = r * m + c;
            dense[k][k] = 4.0 * h2;
            if r > 0 {
                dense[k][k - m] = -h2;
            }
            if r + 1 < m {
                dense[k][k + m] = -h2;
            }
            if c > 0 {
                dense[k][k - 1] = -h2;
            }
            if c + 1 < m {
                dense[k][k + 1] = -h2;
            }
        }
    }
    assert_eq!(system.dense(), dense);
    let oracle = lu_solve(dense, vec![1.0; m * m]);
    let got = system.interior(&u);
    assert!(rel_l2(&got, &oracle) <= 1e-10);
}

fn manufactured_error(n: usize) -> f64 {
    let x = grid(n);
    let exact: Vec<f64> = (0..n * n)
        .map(|k| (PI * x[k / n]).sin() * (PI * x[k % n]).sin())
        .collect();
    let f: Vec<f64> = exact.iter().map(|v| 2.0 * PI * PI * v).collect();
    let u = solve_darcy(n, &vec![1.0; n * n], &f).unwrap();
    u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn darcy_manufactured_solution_is_second_order() {
    let ratio = manufactured_error(32) / manufactured_error(64);
    assert!((3.5..=4.5).contains(&ratio), "refinement ratio {ratio}");
}

#[test]
fn darcy_zero_forcing_gives_zero() {
    let ds = gen_darcy(2, 16, 0.0, 1).unwrap();
    for s in &ds.samples {
        assert!(s.output.data().iter().all(|v| v.re == 0.0));
    }
}

#[test]
fn darcy_samples_satisfy_maximum_principle_and_residual() {
    let n = 32;
    let ds = gen_darcy(3, n, 1.0, 4).unwrap();
    for s in &ds.samples {
        let a = s.input.re_values();
        assert!(a.iter().all(|&v| v == 3.0 || v == 12.0));
        assert!(a.iter().any(|&v| v == 3.0) && a.iter().any(|&v| v == 12.0));
        let u = s.output.re_values();
        assert!(u.iter().all(|&v| v >= 0.0));
        // boundary row and column are zero
        assert!((0..n).all(|j| u[j] == 0.0 && u[j * n] == 0.0));
        let system = DarcySystem::new(n, &a).unwrap();
        let res = system.relative_residual(&system.interior(&u), &vec![1.0; (n - 1) * (n - 1)]);
        assert!(res <= 1e-10, "residual {res}");
    }
    assert_eq!(ds, gen_darcy(3, n, 1.0, 4).unwrap());
}

#[test]
fn darcy_scales_linearly_in_forcing() {
    let a = gen_darcy(1, 16, 1.0, 8).unwrap();
    let b = gen_darcy(1, 16, -2.5, 8).unwrap();
    let ua = a.samples[0].output.re_values();
    let ub = b.samples[0].output.re_values();
    let scaled: Vec<f64> = ua.iter().map(|v| -2.5 * v).collect();
    assert!(rel_l2(&ub, &scaled) <= 1e-10);
}

#[test]
fn darcy_rejects_bad_arguments() {
    assert!(gen_darcy(1, 8, 1.0, 0).is_err());
    assert!(gen_darcy(1, 16, f64::NAN, 0).is_err());
    assert!(DarcySystem::new(16, &vec![-1.0; 256]).is_err());
    let system = DarcySystem::new(16, &DarcyCoefficient::default().sample(16, 0, 0).unwrap()).unwrap();
    let err = system.solve_cg(&vec![1.0; 225], 1e-14, 2).unwrap_err();
    assert!(matches!(err, Error::Numerical(ref m) if m.contains("residual")));
}

fn synthetic(n: usize, size: usize, seed: u64) -> GridDataset {
    let f = GaussianRandomField::new(2.0, 1.5, 6).unwrap();
    let mut ds = GridDataset::new(GridSpec::new(vec![size, size]).unwrap(), 1, 1);
    for i in 0..n {
        let a = f.sample(&[size, size], seed, i as u64).unwrap();
        let b: Vec<f64> = a.iter().map(|v| v * v).collect();
        ds.push(
            GridSample::new(
                ComplexTensor::from_real(vec![1, size, size], &a).unwrap(),
                ComplexTensor::from_real(vec![1, size, size], &b).unwrap(),
            )
            .unwrap(),
        )
        .unwrap();
    }
    ds.meta.insert("pde".into(), "synthetic".into());
    ds
}

#[test]
fn noise_zero_gamma_is_bit_exact() {
    let ds = synthetic(3, 16, 0);
    assert_eq!(add_noise(&ds, 0.0, 1, NoiseTarget::Inputs).unwrap(), ds);
    assert!(add_noise(&ds, -0.1, 1, NoiseTarget::Inputs).is_err());
}

#[test]
fn noise_has_requested_variance_on_inputs_only() {
    let ds = synthetic(64, 128, 1);
    let gamma = 0.05;
    let noisy = add_noise(&ds, gamma, 42, NoiseTarget::Inputs).unwrap();
    let sd = sigma_d(&ds);
    let diffs: Vec<f64> = ds
        .samples
        .iter()
        .zip(&noisy.samples)
        .flat_map(|(a, b)| b.input.sub(&a.input).unwrap().re_values())
        .collect();
    assert!(diffs.len() >= 1_000_000);
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let target = gamma * gamma * sd * sd;
    assert!((var / target - 1.0).abs() <= 0.05, "variance ratio {}", var / target);
    for (a, b) in ds.samples.iter().zip(&noisy.samples) {
        assert_eq!(a.output, b.output);
    }
    assert_eq!(noisy, add_noise(&ds, gamma, 42, NoiseTarget::Inputs).unwrap());
    assert_ne!(noisy, add_noise(&ds, gamma, 43, NoiseTarget::Inputs).unwrap());
}

#[test]
fn sigma_d_is_pooled_population_std() {
    let mut ds = GridDataset::new(GridSpec::new(vec![4]).unwrap(), 1, 1);
    for vals in [[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]] {
        let t = ComplexTensor::from_real(vec![1, 4], &vals).unwrap();
        ds.push(GridSample::new(t.clone(), t).unwrap()).unwrap();
    }
    // values 1..8: variance (8² − 1)/12
    assert!((sigma_d(&ds) - (63.0f64 / 12.0).sqrt()).abs() <= 1e-14);
}

#[test]
fn split_sizes_union_and_determinism() {
    let ds = synthetic(10, 8, 0);
    let (a, b, c) = split(&ds, (0.8, 0.1, 0.1), 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    let (ia, ib, ic) = split_indices(10, (0.8, 0.1, 0.1), 3).unwrap();
    let mut all: Vec<usize> = ia.iter().chain(&ib).chain(&ic).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(a.samples[0], ds.samples[ia[0]]);
    assert_eq!(split_indices(10, (0.8, 0.1, 0.1), 3).unwrap(), (ia, ib, ic));
    assert!(split(&synthetic(3, 8, 0), (0.8, 0.1, 0.1), 0).is_err());
    assert!(split(&ds, (0.5, 0.1, 0.1), 0).is_err());
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 10usize..200, seed in 0u64..1000) {
        let (a, b, c) = split_indices(n, (0.8, 0.1, 0.1), seed).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(a.len(), (0.8 * n as f64).round() as usize);
    }

    #[test]
    fn generators_are_deterministic(seed in 0u64..50) {
        prop_assert_eq!(gen_burgers(2, 32, 0.1, 0.05, seed).unwrap(), gen_burgers(2, 32, 0.1, 0.05, seed).unwrap());
    }
}

#[test]
fn resample_identity_round_trip_and_sine() {
    let ds = synthetic(2, 16, 3);
    assert_eq!(resample(&ds, 16).unwrap().samples, ds.samples);
    let back = resample(&resample(&ds, 48).unwrap(), 16).unwrap();
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert!(a.input.max_abs_diff(&b.input).unwrap() <= 1e-10);
        assert!(a.output.max_abs_diff(&b.output).unwrap() <= 1e-10);
    }
    let up = resample(&ds, 32).unwrap();
    assert_eq!(up.samples[0].input.shape(), &[1, 32, 32]);
    let back = resample(&up, 16).unwrap();
    assert!(ds.samples[1].input.max_abs_diff(&back.samples[1].input).unwrap() <= 1e-10);

    let sine = |n: usize| -> Vec<f64> {
        grid(n)
            .iter()
            .map(|x| (2.0 * PI * 3.0 * x).sin() + 0.25 * (2.0 * PI * 5.0 * x).cos())
            .collect()
    };
    let x64 = ComplexTensor::from_real(vec![1, 64], &sine(64)).unwrap();
    let y = resample_field(&x64, &[128]).unwrap();
    let exact = ComplexTensor::from_real(vec![1, 128], &sine(128)).unwrap();
    assert!(y.max_abs_diff(&exact).unwrap() <= 1e-10);
    assert!(resample(&ds, 3).is_err());
}

#[test]
fn resample_keeps_nyquist_content_on_round_trip() {
    // alternating sign lives entirely in the Nyquist bin
    let vals: Vec<f64> = (0..8).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = ComplexTensor::from_real(vec![1, 8], &vals).unwrap();
    let up = resample_field(&x, &[16]).unwrap();
    assert!(up.max_abs_imag() == 0.0);
    let back = resample_field(&up, &[8]).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() <= 1e-12);
}

#[test]
fn gfd_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.gfd");
    let ds = gen_burgers(3, 32, 0.1, 0.1, 2).unwrap();
    write_gfd(&ds, &path).unwrap();
    let back = read_gfd(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        for (x, y) in a.output.data().iter().zip(b.output.data()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
        }
    }
    let ds2 = synthetic(2, 16, 0);
    write_gfd(&ds2, &path).unwrap();
    assert_eq!(read_gfd(&path).unwrap(), ds2);
}

#[test]
fn gfd_empty_dataset() {
    let ds = GridDataset::new(GridSpec::new(vec![32]).unwrap(), 1, 1);
    let mut buf = Vec::new();
    write_gfd_to(&ds, &mut buf).unwrap();
    let len = buf.len() as u64;
    let back = read_gfd_from(&mut buf.as_slice(), Some(len)).unwrap();
    assert_eq!(back.len(), 0);
    assert_eq!(back, ds);
}

#[test]
fn gfd_corruption_is_an_error() {
    let ds = gen_burgers(2, 16, 0.1, 0.1, 2).unwrap();
    let mut buf = Vec::new();
    write_gfd_to(&ds, &mut buf).unwrap();
    let parse = |b: &[u8]| read_gfd_from(&mut &b[..], Some(b.len() as u64));
    assert!(parse(&buf).is_ok());

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(parse(&bad), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(matches!(parse(&bad), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[8] = 2;
    assert!(matches!(parse(&bad), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[9] = 3;
    assert!(matches!(parse(&bad), Err(Error::Format(_))));
    // sample count inflated beyond the payload
    let mut bad = buf.clone();
    bad[14..18].copy_from_slice(&1000u32.to_le_bytes());
    assert!(matches!(parse(&bad), Err(Error::Format(_))));
    // truncated, with and without a known length
    let cut = &buf[..buf.len() - 5];
    assert!(matches!(parse(cut), Err(Error::Format(_))));
    assert!(matches!(read_gfd_from(&mut &cut[..], None), Err(Error::Format(_))));
    assert!(matches!(read_gfd_from(&mut &buf[..3], None), Err(Error::Format(_))));
    for len in 0..40 {
        assert!(parse(&buf[..len]).is_err());
    }
    assert!(matches!(read_gfd("/nonexistent/x.gfd"), Err(Error::MissingDataset(_))));
}
