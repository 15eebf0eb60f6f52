use gradrecon::autodiff::{finite_difference_check, Bindings, Graph, Tape};
use gradrecon::metrics::score_baselines;
use gradrecon::models::{
    build_model_graph, gaussian_kl, sample_latent, ArchitectureSpec, LatentDistribution, LatentMode, ModelBundle,
    ModelError, Variant,
};
use gradrecon::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn small_arch() -> ArchitectureSpec {
    ArchitectureSpec::new(1, 8, 8, &[2, 3], 3)
}

fn random_image(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(0.05..0.95))
}

#[test]
fn default_latent_has_100_entries() {
    let m = ModelBundle::<f32>::init(Variant::VAE, ArchitectureSpec::default(), 1).unwrap();
    let x = random_image(&[1, 64, 64], 1).cast();
    let d = m.encode(&x).unwrap();
    assert_eq!(d.mu.len(), 100);
    assert_eq!(d.logvar.unwrap().len(), 100);
    let a = m.reconstruct(&x).unwrap();
    assert_eq!(a, m.reconstruct(&x).unwrap());
    assert_eq!(a.shape(), &[1, 64, 64]);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn zero_weights_give_prior_and_half_grey() {
    let mut m = ModelBundle::<f64>::init(Variant::GammaVAE, small_arch(), 2).unwrap();
    for (k, v) in m.params.iter_mut() {
        if k.starts_with("enc.") || k.starts_with("dec.") {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let x = random_image(&[1, 8, 8], 2);
    let d = m.encode(&x).unwrap();
    assert!(d.mu.data().iter().all(|&v| v == 0.0));
    assert!(d.logvar.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
    let dec = m.decode(&Tensor::from_fn(&[3], |i| i as f64)).unwrap();
    assert!(dec.mean.data().iter().all(|&v| v == 0.5));
    m.params.get_mut("log_gamma").unwrap().data_mut()[0] = 0.3;
    assert!((m.decode(&d.mu).unwrap().gamma.unwrap() - 0.3f64.exp()).abs() < 1e-15);
    let t = m.loss_terms(&x, Some(&Tensor::ones(&[3]))).unwrap();
    assert_eq!(t.loss_kl, 0.0);
}

#[test]
fn deterministic_reconstruction_is_decode_of_encode() {
    for v in Variant::ALL {
        let m = ModelBundle::<f64>::init(v, small_arch(), 5).unwrap();
        let x = random_image(&[1, 8, 8], 5);
        let z = m.encode(&x).unwrap().mu;
        assert_eq!(m.decode(&z).unwrap().mean, m.reconstruct(&x).unwrap(), "{v}");
    }
}

#[test]
fn kl_matches_closed_form_on_grid() {
    for i in 0..10 {
        for j in 0..10 {
            let mu = -2.0 + 4.0 * i as f64 / 9.0;
            let sigma = 0.1 + 2.9 * j as f64 / 9.0;
            let want = 0.5 * (mu * mu + sigma * sigma - 1.0 - (sigma * sigma).ln());
            let got = gaussian_kl(&[mu], &[(sigma * sigma).ln()]);
            assert!((got - want).abs() < 1e-8);
        }
    }
    assert_eq!(gaussian_kl(&[1.0], &[0.0]), 0.5);
    assert_eq!(gaussian_kl(&[0.0], &[0.0]), 0.0);
}

proptest! {
    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..8), lv in -10.0f64..10.0) {
        let logvar = vec![lv; mu.len()];
        let kl = gaussian_kl(&mu, &logvar);
        prop_assert!(kl >= 0.0);
    }
}

#[test]
fn graph_kl_equals_encoder_kl() {
    let m = ModelBundle::<f64>::init(Variant::VAE, small_arch(), 7).unwrap();
    let x = random_image(&[1, 8, 8], 7);
    let d = m.encode(&x).unwrap();
    let t = m.loss_terms(&x, Some(&Tensor::zeros(&[3]))).unwrap();
    let want = gaussian_kl(d.mu.data(), d.logvar.unwrap().data());
    assert!((t.loss_kl - want).abs() < 1e-12);
    let recon = m.reconstruct(&x).unwrap();
    let lr: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    assert!((t.loss_r - lr).abs() < 1e-12);
    assert_eq!(t.total, t.loss_r + t.loss_kl);
}

#[test]
fn deterministic_losses() {
    let x = random_image(&[1, 8, 8], 8);
    let m = ModelBundle::<f64>::init(Variant::L2AE, small_arch(), 8).unwrap();
    let recon = m.reconstruct(&x).unwrap();
    let t = m.loss_terms(&x, None).unwrap();
    let want: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((t.loss_r - want).abs() < 1e-12);
    assert_eq!(t.loss_kl, 0.0);
    let m = ModelBundle::<f64>::init(Variant::DSAE, small_arch(), 8).unwrap();
    let recon = m.reconstruct(&x).unwrap();
    let map = gradrecon::metrics::dssim_map(&x, &recon, &Default::default()).unwrap();
    let mean = map.scores.data().iter().sum::<f64>() / 64.0;
    assert!((m.loss_terms(&x, None).unwrap().loss_r - mean).abs() < 1e-9);
}

#[test]
fn reparameterization() {
    let dist = LatentDistribution {
        mu: Tensor::new(vec![2], vec![0.5, -1.0]).unwrap(),
        logvar: Some(Tensor::zeros(&[2])),
    };
    let n = Tensor::new(vec![2], vec![0.25, 2.0]).unwrap();
    assert_eq!(sample_latent(&dist, &Tensor::zeros(&[2])).unwrap(), dist.mu);
    assert_eq!(sample_latent(&dist, &n).unwrap().data(), &[0.75, 1.0]);
    assert!(sample_latent(&dist, &Tensor::zeros(&[3])).is_err());

    let mut g = Graph::new();
    let mu = g.leaf("mu", true);
    let lv = g.leaf("lv", true);
    let noise = g.leaf("n", false);
    let half = g.scale(lv, 0.5);
    let sd = g.exp(half);
    let eps = g.mul(sd, noise);
    let z = g.add(mu, eps);
    let s = g.sum(z);
    let values: HashMap<String, Tensor<f64>> = [
        ("mu".to_string(), dist.mu.clone()),
        ("lv".to_string(), Tensor::new(vec![2], vec![0.3, -0.7]).unwrap()),
        ("n".to_string(), n.clone()),
    ]
    .into();
    let b: Bindings<f64> = values.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut tape = Tape::new(&g);
    tape.forward(&b).unwrap();
    assert_eq!(tape.backward(s).unwrap().get("mu").unwrap().data(), &[1.0, 1.0]);
    assert!(finite_difference_check(&g, &values, s, "mu", 1e-6).unwrap() < 1e-8);
    assert!(finite_difference_check(&g, &values, s, "lv", 1e-6).unwrap() < 1e-6);
}

fn check_variant(variant: Variant, seed: u64) {
    let m = ModelBundle::<f64>::init(variant, small_arch(), seed).unwrap();
    let mg = build_model_graph(&m.arch, variant, LatentMode::Sampled).unwrap();
    let mut values: HashMap<String, Tensor<f64>> = m.params.clone().into_iter().collect();
    values.insert("x".into(), random_image(&[1, 1, 8, 8], seed));
    if variant.is_variational() {
        let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
        values.insert("noise".into(), Tensor::from_fn(&[1, 3], |_| r.gen_range(-1.0..1.0)));
    }
    let mut leaves: Vec<String> = m.params.keys().cloned().collect();
    leaves.push("x".into());
    for leaf in leaves {
        let e = finite_difference_check(&mg.graph, &values, mg.total, &leaf, 1e-5).unwrap();
        assert!(e < 1e-4, "{variant} {leaf}: {e}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for v in Variant::ALL {
        check_variant(v, 21);
    }
}

#[test]
fn log_gamma_gradient_closed_form() {
    let mut m = ModelBundle::<f64>::init(Variant::GammaVAE, small_arch(), 4).unwrap();
    m.params.get_mut("log_gamma").unwrap().data_mut()[0] = -0.4;
    let x = random_image(&[1, 1, 8, 8], 4);
    let mg = build_model_graph(&m.arch, m.variant, LatentMode::Mean).unwrap();
    let mut b = Bindings::new();
    m.bind_params(&mut b);
    b.bind("x", &x);
    let mut tape = Tape::new(&mg.graph);
    tape.forward(&b).unwrap();
    let g = tape.backward_wrt(mg.loss_r, &["log_gamma"]).unwrap();
    let recon = tape.value(mg.recon).unwrap();
    let gamma = (-0.4f64).exp();
    let want: f64 = x
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, r)| 0.5 * (1.0 - (a - r) * (a - r) / gamma))
        .sum();
    assert!((g.get("log_gamma").unwrap().data()[0] - want).abs() < 1e-10);

    let values: HashMap<String, Tensor<f64>> = m
        .params
        .clone()
        .into_iter()
        .chain([("x".to_string(), x)])
        .collect();
    assert!(finite_difference_check(&mg.graph, &values, mg.loss_r, "log_gamma", 1e-5).unwrap() < 1e-6);
}

#[test]
fn shape_errors() {
    let m = ModelBundle::<f32>::init(Variant::VAE, small_arch(), 1).unwrap();
    assert!(matches!(
        m.encode(&Tensor::zeros(&[1, 9, 8])),
        Err(ModelError::InputShape { .. })
    ));
    assert!(m.decode(&Tensor::zeros(&[4])).is_err());
}

#[test]
fn score_maps_are_compositions_of_their_parts() {
    let m = ModelBundle::<f64>::init(Variant::VAE, small_arch(), 9).unwrap();
    let x = random_image(&[1, 8, 8], 9);
    let maps = score_baselines(&m, &x).unwrap();

    let recon = m.reconstruct(&x).unwrap();
    let sq: Vec<f64> = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).collect();
    let mg = build_model_graph(&m.arch, m.variant, LatentMode::Mean).unwrap();
    let xb = x.clone().reshape(&[1, 1, 8, 8]).unwrap();
    let mut b = Bindings::new();
    m.bind_params(&mut b);
    b.bind("x", &xb);
    let mut tape = Tape::new(&mg.graph);
    tape.forward(&b).unwrap();
    let gl = tape.backward(mg.total).unwrap().take("x").unwrap();
    let gk = tape.backward(mg.loss_kl.unwrap()).unwrap().take("x").unwrap();
    for i in 0..64 {
        let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        close(maps.recon_sq.scores.data()[i], sq[i]);
        close(maps.grad_abs.scores.data()[i], gl.data()[i].abs());
        close(maps.product.scores.data()[i], gl.data()[i].abs() * sq[i]);
        close(maps.kl_grad.scores.data()[i], gk.data()[i].abs());
        close(maps.kl_product.scores.data()[i], gk.data()[i].abs() * sq[i]);
    }

    let l2 = ModelBundle::<f64>::init(Variant::L2AE, small_arch(), 9).unwrap();
    assert!(score_baselines(&l2, &x).is_err());
}
