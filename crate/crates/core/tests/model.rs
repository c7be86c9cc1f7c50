use cono::autodiff::{gradcheck, relative_l2_node, Tape};
use cono::layers::Activation;
use cono::model::{Ablation, ConoConfig, ConoModel, Normalizer};
use cono::{ComplexTensor, Error, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn real_field(shape: &[usize], seed: u64) -> ComplexTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ComplexTensor::from_real(shape.to_vec(), &v).unwrap()
}

fn small_2d(c: usize) -> ConoConfig {
    let mut cfg = ConoConfig::new(2, c, c);
    cfg.lift_dim = 4;
    cfg.complex_dim = 2;
    cfg.modes = vec![4, 4];
    cfg.unet_levels = 2;
    cfg
}

#[test]
fn build_is_deterministic_and_output_is_real() {
    let cfg = small_2d(1);
    let a = ConoModel::build(&cfg).unwrap();
    let b = ConoModel::build(&cfg).unwrap();
    assert_eq!(a.store, b.store);
    let x = real_field(&[1, 16, 16], 1);
    let ya = a.predict(&x).unwrap();
    assert_eq!(ya, b.predict(&x).unwrap());
    assert_eq!(ya.shape(), &[1, 16, 16]);
    assert_eq!(ya.max_abs_imag(), 0.0);
    assert!(ya.is_finite());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(ConoModel::build(&other).unwrap().store, a.store);
}

#[test]
fn forward_runs_at_several_resolutions() {
    let model = ConoModel::build(&small_2d(1)).unwrap();
    for n in [16, 64, 128] {
        let y = model.predict(&real_field(&[1, n, n], n as u64)).unwrap();
        assert_eq!(y.shape(), &[1, n, n]);
        assert!(y.is_finite());
    }
    let mut cfg = ConoConfig::new(1, 1, 1);
    cfg.lift_dim = 8;
    cfg.complex_dim = 4;
    let m1 = ConoModel::build(&cfg).unwrap();
    for n in [32, 128, 256] {
        assert_eq!(m1.predict(&real_field(&[1, n], 3)).unwrap().shape(), &[1, n]);
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let model = ConoModel::build(&small_2d(1)).unwrap();
    assert!(model.predict(&real_field(&[2, 16, 16], 0)).is_err());
    assert!(model.predict(&real_field(&[1, 16], 0)).is_err());
    let complex = real_field(&[1, 16, 16], 0).map(|v| v + C64::new(0.0, 0.5));
    assert!(matches!(model.predict(&complex), Err(Error::InvalidArgument(_))));
    // fewer points than retained modes
    let mut cfg = small_2d(1);
    cfg.modes = vec![12, 12];
    cfg.unet_levels = 1;
    let m = ConoModel::build(&cfg).unwrap();
    assert!(m.predict(&real_field(&[1, 8, 8], 0)).is_err());
    // UNET extent must divide by 2^levels
    let model = ConoModel::build(&small_2d(1)).unwrap();
    assert!(model.predict(&real_field(&[1, 18, 18], 0)).is_err());
}

#[test]
fn config_text_round_trip_and_errors() {
    let mut cfg = small_2d(2);
    cfg.ablation = Ablation::NoAlias;
    cfg.alpha_init = vec![0.9, 1.1];
    cfg.seed = 17;
    let text = cfg.to_text();
    assert_eq!(ConoConfig::from_text(&text).unwrap(), cfg);
    let mut c = cfg.clone();
    assert!(matches!(c.set("colour", "red"), Err(Error::Config(m)) if m.contains("colour")));
    assert!(c.set("modes", "4,x").is_err());
    assert!(ConoConfig::from_text("spatial_dims = 3\n").is_err());
    let with_comments = format!("# header\n{text}\n  # trailing\n");
    assert_eq!(ConoConfig::from_text(&with_comments).unwrap(), cfg);
    for a in Ablation::ALL {
        assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
    }
    assert!("none".parse::<Ablation>().is_err());
}

#[test]
fn ablation_wiring() {
    let mut cfg = small_2d(1);
    cfg.n_spectral_blocks = 3;
    cfg.alpha_init = vec![0.7, 1.3];

    let full = ConoModel::build(&cfg).unwrap();
    assert_eq!(full.blocks().len(), 3);
    assert_eq!(full.alphas(), vec![0.7, 1.3]);
    assert!(full.blocks().iter().all(|b| b.pointwise.is_some() && b.unet.is_some()));
    assert!(matches!(full.activation(), Activation::AliasFree(_)));

    cfg.ablation = Ablation::Vanilla;
    let vanilla = ConoModel::build(&cfg).unwrap();
    assert_eq!(vanilla.blocks().len(), 1);
    assert_eq!(vanilla.alphas(), vec![1.0, 1.0]);
    assert!(vanilla.blocks()[0].unet.is_none() && vanilla.blocks()[0].pointwise.is_some());

    cfg.ablation = Ablation::Fourier;
    let fourier = ConoModel::build(&cfg).unwrap();
    assert_eq!(fourier.blocks().len(), 3);
    assert_eq!(fourier.alphas(), vec![1.0, 1.0]);
    let x = real_field(&[1, 16, 16], 2);
    let t = real_field(&[1, 16, 16], 3);
    let (_, grads) = fourier.loss_and_grads(&x, &t, 1.0).unwrap();
    for b in fourier.blocks() {
        for &a in &b.kernel.alphas {
            assert!(fourier.store.get(a).frozen);
            assert_eq!(grads[a].norm(), 0.0);
        }
    }

    cfg.ablation = Ablation::NoAlias;
    let no_alias = ConoModel::build(&cfg).unwrap();
    assert!(matches!(no_alias.activation(), Activation::Pointwise));

    cfg.ablation = Ablation::NoBias;
    let no_bias = ConoModel::build(&cfg).unwrap();
    assert!(no_bias.blocks().iter().all(|b| b.pointwise.is_none() && b.unet.is_none()));
    assert!(no_bias.param_count() < full.param_count());
}

#[test]
fn full_model_gradcheck_2d_two_channels() {
    let mut model = ConoModel::build(&small_2d(2)).unwrap();
    model.normalizer = Normalizer {
        in_mean: vec![0.1, -0.2],
        in_std: vec![0.8, 1.3],
        out_mean: vec![0.05, 0.0],
        out_std: vec![1.5, 0.7],
    };
    // move the orders off 1 so their gradient is generic
    for b in model.blocks().to_vec() {
        for (k, &a) in b.kernel.alphas.iter().enumerate() {
            model.store.value_mut(a).data_mut()[0] = C64::new(0.9 + 0.15 * k as f64, 0.0);
        }
    }
    let x = real_field(&[2, 16, 16], 5);
    // a target near the prediction keeps the loss small, so rounding in the
    // loss sum stays well below the finite-difference signal
    let y0 = model.predict(&x).unwrap();
    let target = y0.zip_map(&real_field(&[2, 16, 16], 6), "target", |a, b| a + b * 1e-3).unwrap();
    let mut store = model.store.clone();
    let worst = gradcheck(
        |tape: &mut Tape, s| {
            let mut m = model.clone();
            m.store = s.clone();
            let y = m.forward(tape, &x)?;
            relative_l2_node(tape, y, &target)
        },
        &mut store,
        1e-6,
    )
    .unwrap();
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn whole_network_integer_shift_equivariance() {
    for ablation in [Ablation::Fourier, Ablation::NoAlias] {
        let mut cfg = small_2d(1);
        cfg.grid_channels = false;
        cfg.ablation = ablation;
        let model = ConoModel::build(&cfg).unwrap();
        let x = real_field(&[1, 32, 32], 9);
        let y = model.predict(&x).unwrap();
        for (dx, dy) in [(4isize, 0isize), (0, 8), (-12, 4)] {
            let ys = model.predict(&x.roll_spatial(0, dx).roll_spatial(1, dy)).unwrap();
            let expect = y.roll_spatial(0, dx).roll_spatial(1, dy);
            assert!(ys.max_abs_diff(&expect).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut cfg = small_2d(1);
    cfg.alpha_init = vec![0.95, 1.05];
    let mut model = ConoModel::build(&cfg).unwrap();
    model.normalizer = Normalizer {
        in_mean: vec![0.3],
        in_std: vec![2.0],
        out_mean: vec![-1.0],
        out_std: vec![0.25],
    };
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    let back = ConoModel::read_checkpoint(&mut buf.as_slice(), None).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.store, model.store);
    assert_eq!(back.normalizer, model.normalizer);
    let x = real_field(&[1, 16, 16], 4);
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    let mut again = Vec::new();
    back.write_checkpoint(&mut again).unwrap();
    assert_eq!(again, buf);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    model.save_checkpoint(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), buf);
    assert_eq!(ConoModel::load_checkpoint_expecting(&path, &cfg).unwrap().store, model.store);
}

#[test]
fn checkpoint_errors() {
    let cfg = small_2d(1);
    let model = ConoModel::build(&cfg).unwrap();
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    for cut in [0, 3, 10, buf.len() / 2, buf.len() - 1] {
        assert!(matches!(
            ConoModel::read_checkpoint(&mut &buf[..cut], None),
            Err(Error::Format(_))
        ));
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(ConoModel::read_checkpoint(&mut bad.as_slice(), None), Err(Error::Format(_))));
    let mut other = cfg.clone();
    other.complex_dim = 3;
    assert!(ConoModel::read_checkpoint(&mut buf.as_slice(), Some(&other)).is_err());
    assert!(ConoModel::load_checkpoint(std::path::Path::new("/nonexistent/m.ck")).is_err());
}

#[test]
fn normalizer_fit_statistics() {
    let a = ComplexTensor::from_real(vec![2, 4], &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let b = ComplexTensor::from_real(vec![2, 4], &[5.0, 6.0, 7.0, 8.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
    let n = Normalizer::fit(&[&a, &b], &[&a]).unwrap();
    assert!((n.in_mean[0] - 4.5).abs() < 1e-14);
    assert!((n.in_std[0] - (63.0f64 / 12.0).sqrt()).abs() < 1e-12);
    assert!((n.in_mean[1] - 1.0).abs() < 1e-14);
    assert!((n.in_std[1] - 1.0).abs() < 1e-12);
    assert_eq!(n.out_mean.len(), 2);
    assert!(Normalizer::fit(&[], &[]).is_err());
}
