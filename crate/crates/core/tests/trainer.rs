use gradrecon::models::{ArchitectureSpec, ModelBundle, TrainingMetadata, Variant};
use gradrecon::trainer::*;
use gradrecon::{Parallelism, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> ArchitectureSpec {
    ArchitectureSpec::new(1, 8, 8, &[2, 3], 4)
}

fn images(n: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let phase = r.gen_range(0..4);
            Tensor::from_fn(&[1, 8, 8], |i| if (i % 8 + phase) % 4 == 0 { 0.9 } else { 0.1 })
        })
        .collect()
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, learning_rate: lr, batch_size: 3, seed: 5, ..Default::default() }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    for v in Variant::ALL {
        let m = ModelBundle::<f32>::init(v, arch(), 1).unwrap();
        let (trained, hist) = fit(m.clone(), &images(7, 1), &cfg(1, 0.0)).unwrap();
        assert_eq!(trained.params, m.params, "{v}");
        assert_eq!(hist.len(), 1);
        assert_eq!(trained.metadata.epochs_run, 1);
        assert_eq!(trained.metadata.loss_r_sorted.len(), 7);
    }
}

#[test]
fn fit_is_deterministic_and_schedule_independent() {
    let data = images(10, 2);
    let m = ModelBundle::<f32>::init(Variant::VAE, arch(), 2).unwrap();
    let mut c = cfg(3, 1e-2);
    let (a, ha) = fit(m.clone(), &data, &c).unwrap();
    let (b, hb) = fit(m.clone(), &data, &c).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    c.parallelism = Parallelism::Sequential;
    let (s, hs) = fit(m, &data, &c).unwrap();
    assert_eq!(hs, ha);
    assert_eq!(s, a);
}

#[test]
fn training_reduces_the_loss() {
    let data = images(12, 3);
    for v in [Variant::L2AE, Variant::VAE] {
        let m = ModelBundle::<f32>::init(v, arch(), 3).unwrap();
        let (_, h) = fit(m, &data, &cfg(40, 1e-2)).unwrap();
        let (first, last) = (h[0].mean_loss_r, h.last().unwrap().mean_loss_r);
        assert!(last < 0.75 * first, "{v}: {first} -> {last}");
    }
}

#[test]
fn history_reports_every_epoch() {
    let mut seen = Vec::new();
    let m = ModelBundle::<f32>::init(Variant::GammaVAE, arch(), 4).unwrap();
    let (_, h) = fit_with(m, &images(5, 4), &cfg(4, 1e-3), |s| seen.push(s.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert!(h.iter().all(|s| (s.mean_loss - s.mean_loss_r - s.mean_loss_kl).abs() < 1e-5 * s.mean_loss));
}

#[test]
fn bad_inputs_are_rejected() {
    let m = ModelBundle::<f32>::init(Variant::VAE, arch(), 1).unwrap();
    assert!(matches!(fit(m.clone(), &[], &cfg(1, 1e-3)), Err(TrainError::EmptyDataset)));
    assert!(matches!(fit(m.clone(), &images(2, 1), &cfg(0, 1e-3)), Err(TrainError::Config(_))));
    let mut data = images(4, 1);
    data[2].data_mut()[5] = f32::NAN;
    match fit(m, &data, &cfg(2, 1e-3)) {
        Err(TrainError::NonFinite { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn quantile_threshold() {
    let mut m = ModelBundle::<f32>::init(Variant::VAE, arch(), 1).unwrap();
    assert!(loss_threshold(&m, 0.5).is_err());
    m.metadata = TrainingMetadata::from_losses(1, &[3.0, 1.0, 4.0, 2.0], 0.0);
    assert_eq!(loss_threshold(&m, 0.5).unwrap(), 2.5);
    assert_eq!(loss_threshold(&m, 0.0).unwrap(), 1.0);
    assert_eq!(loss_threshold(&m, 1.0).unwrap(), 4.0);
    assert!(loss_threshold(&m, 1.5).is_err());
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=100 {
        let t = loss_threshold(&m, k as f64 / 100.0).unwrap();
        assert!(t >= prev);
        prev = t;
    }
}

#[test]
fn metadata_matches_recomputed_losses() {
    let data = images(6, 8);
    let m = ModelBundle::<f32>::init(Variant::DSAE, arch(), 8).unwrap();
    let (m, _) = fit(m, &data, &cfg(2, 1e-3)).unwrap();
    let mut losses = reconstruction_losses(&m, &data, Parallelism::Sequential).unwrap();
    losses.sort_by(f64::total_cmp);
    assert_eq!(m.metadata.loss_r_sorted, losses);
    assert_eq!(m.metadata.loss_r_min, losses[0]);
}

#[test]
fn adam_lr_zero_is_identity() {
    let m = ModelBundle::<f32>::init(Variant::L2AE, arch(), 1).unwrap();
    let mut params = m.params.clone();
    let grads = params.iter().map(|(k, v)| (k.clone(), v.map(|_| 0.3))).collect();
    let mut st = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut st, 0.0).unwrap();
    assert_eq!(params, m.params);
    assert_eq!(st.t, 1);
}
