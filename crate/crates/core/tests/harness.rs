use lidargen::corruption::{CorruptionKind, CorruptionSpec};
use lidargen::harness::*;
use lidargen::models::{Checkpoint, Model, Vae};
use lidargen::projection::{GridConfig, GridScan, Representation};

fn grids(n: usize, seed: u64) -> Vec<GridScan> {
    synthetic_grids(n, 8, seed, &GridConfig::default()).unwrap()
}

fn small_vae(steps: usize) -> VaeConfig {
    VaeConfig {
        latent_dim: 16,
        base_channels: 4,
        batch_size: 8,
        lr: 1e-3,
        beta: 5e-5,
        max_steps: steps,
        val_every: 0,
        val_scans: 4,
        val_points: 128,
        ..Default::default()
    }
}

#[test]
fn vae_training_halves_the_reconstruction_loss() {
    let train = grids(64, 1);
    let val = grids(4, 2);
    let run = train_vae(&small_vae(200), &train, &val).unwrap();
    assert_eq!(run.curve.len(), 200);
    let first = run.curve[0].recon;
    let last: f64 = run.curve[190..].iter().map(|p| p.recon).sum::<f64>() / 10.0;
    assert!(last < 0.5 * first, "recon {first} -> {last}");
    assert_eq!(run.validation.len(), 1);
    assert_eq!(run.last.step, 200);
    assert_eq!(run.last.optimizers.len(), 2);
}

#[test]
fn vae_training_is_deterministic() {
    let train = grids(16, 3);
    let val = grids(2, 4);
    let mut c = small_vae(12);
    c.val_every = 6;
    let a = train_vae(&c, &train, &val).unwrap();
    let b = train_vae(&c, &train, &val).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.validation, b.validation);
    assert_eq!(a.best, b.best);
    let best = a.best_val_emd().unwrap();
    assert!(a.validation.iter().all(|v| v.emd_mean >= best));
    assert_eq!(a.best.step as usize, a.validation.iter().find(|v| v.emd_mean == best).unwrap().step);
}

#[test]
fn zero_steps_returns_the_initial_model() {
    let train = grids(4, 5);
    let run = train_vae(&small_vae(0), &train, &[]).unwrap();
    assert!(run.curve.is_empty() && run.validation.is_empty());
    let fresh = Vae::<f32>::init(small_vae(0).arch(), lidargen::seed::derive(0, 0)).unwrap();
    assert_eq!(run.last.model, Model::Vae(fresh));
    assert_eq!(run.last.step, 0);
}

#[test]
fn empty_training_stream_is_rejected() {
    assert!(train_vae(&small_vae(1), &[], &[]).is_err());
}

fn small_gan(steps: usize) -> GanConfig {
    GanConfig { latent_dim: 16, base_channels: 4, batch_size: 8, max_steps: steps, ..Default::default() }
}

#[test]
fn discriminator_separates_a_frozen_generator() {
    let train = grids(64, 6);
    let run = train_gan(&GanConfig { freeze_generator: true, ..small_gan(500) }, &train).unwrap();
    let pos = run.curve.windows(10).position(|w| w.iter().map(|p| p.d_accuracy).sum::<f64>() / 10.0 > 0.9);
    assert!(pos.is_some(), "final accuracy {:?}", run.curve.last());
    assert!(run.curve.iter().all(|p| p.g_loss.is_nan()));
}

#[test]
fn gan_training_is_deterministic_and_samples_are_grids() {
    let train = grids(16, 7);
    let a = train_gan(&small_gan(6), &train).unwrap();
    let b = train_gan(&small_gan(6), &train).unwrap();
    assert_eq!(a.curve, b.curve);
    let Model::Gan(gan) = &a.checkpoint.model else { panic!("expected a GAN") };
    let s = gan.sample(2, 0).unwrap();
    assert_eq!((s[0].height, s[0].width, s[0].num_channels()), (40, 256, 2));
    assert!(s.iter().flat_map(|g| &g.channels).all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn search_returns_the_argmin_trial() {
    let train = grids(16, 8);
    let val = grids(2, 9);
    let base = small_vae(0);
    let space = SearchSpace { lr: vec![1e-4, 1e-3], latent_dim: vec![8, 16], batch_size: vec![4], trials: 3, seed: 1 };
    let report = random_search(&space, &base, 4, &train, &val).unwrap();
    assert_eq!(report.trials.len(), 3);
    let best = report.best_trial().val_emd;
    assert!(report.trials.iter().all(|t| best <= t.val_emd));
    for (t, c) in report.trials.iter().zip(space.sample()) {
        assert_eq!(t.config, c);
    }

    let single = SearchSpace { trials: 1, ..space };
    let r = random_search(&single, &base, 2, &train, &val).unwrap();
    assert_eq!((r.best, r.trials[0].config), (0, single.sample()[0]));
}

#[test]
fn evaluation_report_contract() {
    let test = grids(3, 10);
    let train = grids(8, 11);
    let config = small_vae(0);
    let (stats, cart) = fit_stats(&train, Representation::Polar, 80.0).unwrap();
    let ck = Checkpoint::new(Model::Vae(Vae::init(config.arch(), 1).unwrap()), stats, cart);
    let opts = EvalOptions { n_max: 128, ..Default::default() };
    let mut sweep = noise_sweep(3);
    sweep.extend(removal_sweep(3));
    let report = eval_reconstruction(&ck, &test, &sweep, &opts, "random").unwrap();
    assert_eq!(report.rows.len(), 14);
    assert_eq!(report.rows_of(CorruptionKind::Removal).count(), 7);
    for r in &report.rows {
        assert_eq!(r.n_scans, 3);
        for v in [r.emd_sum, r.emd_mean, r.chamfer_sum, r.chamfer_mean] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }
    let clean = eval_reconstruction(&ck, &test, &[CorruptionSpec::noise(0.0, 3)], &opts, "random").unwrap();
    assert_eq!(clean.rows[0], report.rows[0]);
    let again = eval_reconstruction(&ck, &test, &sweep, &opts, "random").unwrap();
    assert_eq!(again, report);
}

#[test]
fn feature_matching() {
    let train = grids(8, 12);
    let run = train_gan(&small_gan(2), &train).unwrap();
    let ck = &run.checkpoint;
    let Model::Gan(gan) = &ck.model else { panic!("expected a GAN") };
    let test = prepare(&train, Representation::Polar, &ck.stats).unwrap();
    let index = FeatureIndex::build(gan, &test, 4).unwrap();
    assert_eq!(index.len(), 8);
    for i in 0..8 {
        let hit = index.nearest(index.row(i), 1)[0];
        assert_eq!(hit.distance, 0.0);
        assert_eq!(test[hit.index], test[i]);
    }
    let (samples, matches) = nn_match(ck, 3, 5, &test, 4).unwrap();
    assert_eq!((samples.len(), matches.len()), (3, 3));
    for m in &matches {
        assert_eq!(m.neighbors.len(), 4);
        assert!(m.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        let q = FeatureIndex::build(gan, &samples[m.sample..m.sample + 1], 1).unwrap();
        assert_eq!(index.nearest_brute(q.row(0), 4), m.neighbors);
    }
}
