use gradrecon::models::{ArchitectureSpec, ModelBundle, TrainingMetadata, Variant};
use gradrecon::projector::*;
use gradrecon::synth::make_inpainting_mask;
use gradrecon::synth::MaskKind;
use gradrecon::{Parallelism, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> ArchitectureSpec {
    ArchitectureSpec::new(1, 8, 8, &[2, 3], 4)
}

fn model<E: gradrecon::Element>(v: Variant, seed: u64) -> ModelBundle<E> {
    let mut m = ModelBundle::<E>::init(v, arch(), seed).unwrap();
    m.metadata = TrainingMetadata::from_losses(1, &[0.0, 1.0], 0.5);
    m
}

fn image<E: gradrecon::Element>(seed: u64) -> Tensor<E> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 8, 8], |_| E::from_f64(r.gen_range(0.1..0.9)))
}

fn loss_r(m: &ModelBundle<f64>, x: &Tensor<f64>) -> f64 {
    m.loss_terms(x, None).unwrap().loss_r
}

#[test]
fn energy_examples() {
    for v in Variant::ALL {
        let m = model::<f64>(v, 1);
        let x0 = image::<f64>(1);
        assert!((energy(&m, &x0, &x0, 0.05).unwrap() - loss_r(&m, &x0)).abs() < 1e-12, "{v}");
        let xt = image::<f64>(2);
        assert!((energy(&m, &xt, &x0, 0.0).unwrap() - loss_r(&m, &xt)).abs() < 1e-12);
        let mut one = x0.clone();
        one.data_mut()[13] += 0.1;
        let want = loss_r(&m, &one) + 0.1;
        assert!((energy(&m, &one, &x0, 1.0).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_a_flat_minimum() {
    let mut m = model::<f64>(Variant::VAE, 1);
    for (k, p) in m.params.iter_mut() {
        if k.starts_with("enc.") || k.starts_with("dec.") {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = Tensor::full(&[1, 8, 8], 0.5);
    let g = energy_grad(&m, &x, &image(3), 0.0).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn energy_gradient_matches_finite_differences() {
    for v in Variant::ALL {
        let m = model::<f64>(v, 4);
        let x0 = image::<f64>(4);
        let mut r = ChaCha8Rng::seed_from_u64(40);
        // Keep every pixel away from the L¹ kink at x = x₀.
        let xt = Tensor::from_fn(x0.shape(), |i| x0.data()[i] + if r.gen_bool(0.5) { 0.05 } else { -0.05 });
        let g = energy_grad(&m, &xt, &x0, 0.05).unwrap();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..xt.len() {
            let mut hi = xt.clone();
            hi.data_mut()[i] += eps;
            let mut lo = xt.clone();
            lo.data_mut()[i] -= eps;
            let num = (energy(&m, &hi, &x0, 0.05).unwrap() - energy(&m, &lo, &x0, 0.05).unwrap()) / (2.0 * eps);
            let a = g.data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-3));
        }
        assert!(worst < 1e-4, "{v}: {worst}");
    }
}

#[test]
fn regularizer_contributes_signed_lambda() {
    let m = model::<f64>(Variant::GammaVAE, 5);
    let x0 = image::<f64>(5);
    let mut xt = x0.clone();
    xt.data_mut()[0] += 0.2;
    xt.data_mut()[1] -= 0.2;
    let d = energy_grad(&m, &xt, &x0, 0.3)
        .unwrap()
        .zip_map(&energy_grad(&m, &xt, &x0, 0.0).unwrap(), |a, b| a - b);
    for (i, &v) in d.data().iter().enumerate() {
        let want = match i {
            0 => 0.3,
            1 => -0.3,
            _ => 0.0,
        };
        assert!((v - want).abs() < 1e-12, "pixel {i}: {v}");
    }
}

fn random_grad(seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, 8, 8], |_| r.gen_range(-2.0..2.0))
}

#[test]
fn masked_and_weighted_reduce_to_standard() {
    for opt in [InputOptimizer::Plain, InputOptimizer::Adam] {
        for clamp in [false, true] {
            let x = image::<f32>(6);
            let (mut s1, mut s2) = (OptimizerState::new(opt, &x), OptimizerState::new(opt, &x));
            let mut xs = x.clone();
            let mut xm = x.clone();
            for k in 0..5 {
                let g = random_grad(k);
                xs = step_standard(&xs, &g, &mut s1, 0.5, clamp).unwrap();
                xm = step_masked(&xm, &g, &Tensor::ones(&[8, 8]), &mut s2, 0.5, clamp).unwrap();
                assert_eq!(xs, xm);
            }

            let ones = Tensor::ones(&[1, 8, 8]);
            let zeros = Tensor::zeros(&[1, 8, 8]);
            let (mut s1, mut s2) = (OptimizerState::new(opt, &ones), OptimizerState::new(opt, &ones));
            let g = random_grad(9);
            let a = step_standard(&ones, &g, &mut s1, 0.5, clamp).unwrap();
            let b = step_weighted(&ones, &g, &zeros, &mut s2, 0.5, clamp).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn weighted_step_matches_hand_computation() {
    let x = image::<f64>(7);
    let recon = image::<f64>(8);
    let g = random_grad(7).cast::<f64>();
    let out = step_weighted(&x, &g, &recon, &mut OptimizerState::Plain, 0.5, false).unwrap();
    for i in 0..x.len() {
        let r = x.data()[i] - recon.data()[i];
        let want = x.data()[i] - 0.5 * (g.data()[i] * (r * r));
        assert_eq!(out.data()[i], want);
    }
    let same = step_weighted(&x, &g, &x, &mut OptimizerState::Plain, 0.5, false).unwrap();
    assert_eq!(same, x);
    assert!(step_weighted(&x, &g, &Tensor::zeros(&[1, 4, 4]), &mut OptimizerState::Plain, 0.5, false).is_err());
}

#[test]
fn masks_must_be_binary() {
    let x = image::<f32>(1);
    let mut mask = Tensor::ones(&[8, 8]);
    mask.data_mut()[3] = 0.5;
    assert!(step_masked(&x, &random_grad(1), &mask, &mut OptimizerState::Plain, 0.5, true).is_err());
    let zero = step_masked(&x, &random_grad(1), &Tensor::zeros(&[8, 8]), &mut OptimizerState::Plain, 0.5, true).unwrap();
    assert_eq!(zero, x);
}

#[test]
fn already_normal_input_is_returned_unchanged() {
    let mut m = model::<f32>(Variant::VAE, 2);
    m.metadata = TrainingMetadata::from_losses(1, &[1e9], 0.0);
    let x = image::<f32>(2);
    let tr = project(&m, &x, &EnergyConfig::default()).unwrap();
    assert_eq!(tr.iterations(), 0);
    assert_eq!(tr.stop_reason, StopReason::ThresholdReached);
    assert_eq!(tr.image, x);
}

#[test]
fn threshold_is_required_by_default() {
    let m = ModelBundle::<f32>::init(Variant::VAE, arch(), 1).unwrap();
    assert!(matches!(
        project(&m, &image(1), &EnergyConfig::default()),
        Err(ProjectError::MissingThreshold)
    ));
    let cfg = EnergyConfig { stop: Some(StopCriterion::MaxIters), max_iters: 3, ..Default::default() };
    assert_eq!(project(&m, &image(1), &cfg).unwrap().iterations(), 3);
}

#[test]
fn trace_bookkeeping() {
    let m = model::<f32>(Variant::L2AE, 3);
    let cfg = EnergyConfig {
        stop: Some(StopCriterion::MaxIters),
        max_iters: 25,
        alpha: 0.01,
        snapshot_every: Some(10),
        ..Default::default()
    };
    let x = image::<f32>(3);
    let tr = project(&m, &x, &cfg).unwrap();
    assert_eq!(tr.records.len(), 26);
    assert_eq!(tr.stop_reason, StopReason::MaxIters);
    assert!(tr.records.iter().enumerate().all(|(i, r)| r.iter == i && r.energy.is_finite()));
    assert_eq!(tr.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 10, 20]);
    assert_eq!(tr.snapshots[0].1, x);
    assert_eq!(tr.initial_reconstruction, m.reconstruct(&x).unwrap());
    assert_eq!(project(&m, &x, &cfg).unwrap(), tr);
}

#[test]
fn masked_projection_preserves_the_complement() {
    let m = model::<f32>(Variant::VAE, 4);
    let x = image::<f32>(4);
    let mask = make_inpainting_mask((8, 8), MaskKind::RandomBlob, 0.25, 4).unwrap();
    for opt in [InputOptimizer::Plain, InputOptimizer::Adam] {
        let cfg = EnergyConfig {
            mode: UpdateMode::Masked(mask.clone()),
            optimizer: opt,
            stop: Some(StopCriterion::MaxIters),
            max_iters: 300,
            ..Default::default()
        };
        let tr = project(&m, &x, &cfg).unwrap();
        let mut moved = 0;
        for i in 0..64 {
            if mask.data()[i] == 0.0 {
                assert_eq!(tr.image.data()[i].to_bits(), x.data()[i].to_bits());
            } else if tr.image.data()[i] != x.data()[i] {
                moved += 1;
            }
        }
        assert!(moved > 0);
    }
}

#[test]
fn energy_convergence_stops_early() {
    let m = model::<f32>(Variant::L2AE, 6);
    let cfg = EnergyConfig {
        alpha: 0.01,
        stop: Some(StopCriterion::EnergyConverged { tolerance: 1e-3, patience: 3 }),
        ..Default::default()
    };
    let tr = project(&m, &image(6), &cfg).unwrap();
    assert_eq!(tr.stop_reason, StopReason::Converged);
    assert!(tr.iterations() < 500);
}

#[test]
fn batch_matches_single_projections() {
    let m = model::<f32>(Variant::VAE, 7);
    let imgs: Vec<Tensor<f32>> = (0..4).map(image).collect();
    let masks: Vec<Tensor<f32>> = (0..4)
        .map(|s| make_inpainting_mask((8, 8), MaskKind::Rectangle, 0.3, s).unwrap())
        .collect();
    let cfg = EnergyConfig { stop: Some(StopCriterion::MaxIters), max_iters: 20, ..Default::default() };
    let par = project_batch(&m, &imgs, &cfg, Some(&masks), Parallelism::Parallel);
    let seq = project_batch(&m, &imgs, &cfg, Some(&masks), Parallelism::Sequential);
    for i in 0..4 {
        let single = project(&m, &imgs[i], &EnergyConfig { mode: UpdateMode::Masked(masks[i].clone()), ..cfg.clone() }).unwrap();
        assert_eq!(par[i].as_ref().unwrap(), &single);
        assert_eq!(seq[i].as_ref().unwrap(), &single);
    }
    assert!(project_batch(&m, &imgs, &cfg, Some(&masks[..2]), Parallelism::Sequential)[0].is_err());
}
