mod common;

use eegdiff_core::checkpoint::Checkpoint;
use eegdiff_core::diffusion::*;
use eegdiff_core::efdm::{to_float_tensor, Efdm};
use eegdiff_core::{Error, SeededRng, Tensor};

fn tiny(image_size: usize, seed: u64) -> DiffusionConfig {
    DiffusionConfig { image_size, steps: 50, lr: 1e-3, batch_size: 8, channels: 8, res_blocks: 1, seed }
}

fn random_batch(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::uniform(&[n, PLANES, size, size], 1.0, &mut rng)
}

#[test]
fn linear_schedule_endpoints_for_thousand_steps() {
    let s = linear_schedule(1000).unwrap();
    assert_eq!(s.len(), 1000);
    assert!((s.betas()[0] - 1e-4).abs() < 1e-15);
    assert!((s.betas()[999] - 0.02).abs() < 1e-15);
    let mut direct = 1.0;
    for i in 0..1000 {
        direct *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
    }
    assert!((s.alpha_bars()[999] - direct).abs() < 1e-15);
    assert!(direct < 5e-5);
}

#[test]
fn two_step_schedule_and_rescaling() {
    let s = linear_schedule(2).unwrap();
    let b = s.betas();
    assert!((b[0] - 0.05).abs() < 1e-15 && (b[1] - 0.999).abs() < 1e-15);
    assert!((s.alpha_bars()[1] - (1.0 - b[0]) * (1.0 - b[1])).abs() < 1e-15);
    let s200 = linear_schedule(200).unwrap();
    assert!((s200.betas()[0] - 5e-4).abs() < 1e-15 && (s200.betas()[199] - 0.1).abs() < 1e-15);
    assert!(matches!(linear_schedule(1), Err(Error::Validation(_))));
}

#[test]
fn alpha_bar_strictly_decreasing() {
    for t in 2..=1200 {
        let s = linear_schedule(t).unwrap();
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]), "T={t}");
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]), "T={t}");
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
    }
    assert!(linear_schedule(1000).unwrap().alpha_bars()[999] < 0.01);
}

#[test]
fn q_sample_limits_and_errors() {
    let mut rng = SeededRng::new(2);
    let x0 = Tensor::randn(&[2, 3, 4], &mut rng);
    let eps = Tensor::randn(&[2, 3, 4], &mut rng);
    assert_eq!(q_sample_with(&x0, &eps, 1.0).unwrap(), x0);
    assert_eq!(q_sample_with(&x0, &eps, 0.0).unwrap(), eps);
    let s = linear_schedule(10).unwrap();
    assert!(matches!(q_sample(&x0, 10, &eps, &s), Err(Error::Validation(_))));
    assert!(q_sample(&x0, 0, &Tensor::zeros(&[2, 3]), &s).is_err());
}

#[test]
fn forward_process_monte_carlo_moments() {
    let sched = linear_schedule(40).unwrap();
    let mut rng = SeededRng::new(4);
    let x0 = Tensor::uniform(&[4, 4], 1.0, &mut rng);
    for (t, cm, cv, hm, hv) in common::forward_process_moments(&x0, &sched, &[10, 20, 39], 100_000, 9) {
        for (what, z) in [("closed mean", cm), ("closed var", cv), ("chained mean", hm), ("chained var", hv)] {
            assert!(z.abs() < 3.0, "t={t} {what} z={z}");
        }
    }
}

#[test]
fn initial_loss_is_near_one() {
    let cfg = DiffusionConfig { seed: 5, ..DiffusionConfig::default() };
    let mut trainer = DiffusionTrainer::new(&DiffusionConfig { image_size: 16, ..cfg }).unwrap();
    let loss = trainer.train_step(&random_batch(8, 16, 1)).unwrap();
    assert!((0.5..=2.0).contains(&loss), "initial loss {loss}");
}

#[test]
fn zero_learning_rate_freezes_the_model() {
    let cfg = DiffusionConfig { lr: 0.0, ..tiny(8, 3) };
    let mut trainer = DiffusionTrainer::new(&cfg).unwrap();
    // move the zero-initialized output layer off zero so gradients are non-trivial
    let mut rng = SeededRng::new(1);
    for id in trainer.model.params().ids().collect::<Vec<_>>() {
        let t = trainer.model.params_mut().get_mut(id);
        for v in t.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    let sched = trainer.schedule.clone();
    let x0 = random_batch(4, 8, 2);
    let eps = Tensor::randn(x0.shape(), &mut rng);
    let ts = [0, 10, 25, 49];
    let before = denoising_loss(&trainer.model, &x0, &ts, &eps, &sched).unwrap();
    let snapshot = Checkpoint::from_params(trainer.model.params()).to_bytes();
    trainer.train_step(&x0).unwrap();
    let after = denoising_loss(&trainer.model, &x0, &ts, &eps, &sched).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
    assert_eq!(Checkpoint::from_params(trainer.model.params()).to_bytes(), snapshot);
}

#[test]
fn identical_seeds_give_identical_losses() {
    let run = || {
        let mut trainer = DiffusionTrainer::new(&tiny(8, 7)).unwrap();
        let batch = random_batch(8, 8, 3);
        (0..5).map(|_| trainer.train_step(&batch).unwrap().to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_image_loss_halves_within_500_steps() {
    let cfg = DiffusionConfig { batch_size: 16, channels: 16, ..tiny(8, 11) };
    let mut trainer = DiffusionTrainer::new(&cfg).unwrap();
    let one = random_batch(1, 8, 4);
    let batch = Tensor::new(vec![16, PLANES, 8, 8], one.data().repeat(16)).unwrap();
    let losses: Vec<f64> = (0..500).map(|_| trainer.train_step(&batch).unwrap()).collect();
    let first = losses[..10].iter().sum::<f64>() / 10.0;
    let last = losses[490..].iter().sum::<f64>() / 10.0;
    assert!(last <= 0.5 * first, "first {first} last {last}");
}

#[test]
fn out_of_range_batch_is_rejected() {
    let mut trainer = DiffusionTrainer::new(&tiny(8, 1)).unwrap();
    let bad = Tensor::full(&[2, PLANES, 8, 8], 1.5);
    assert!(matches!(trainer.train_step(&bad), Err(Error::Validation(_))));
}

#[test]
fn untrained_samples_are_finite_and_clamped() {
    let cfg = tiny(8, 2);
    let mut model = cfg.build().unwrap();
    let mut rng = SeededRng::new(3);
    for id in model.params().ids().collect::<Vec<_>>() {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += 0.2 * rng.normal();
        }
    }
    let x = p_sample_loop(&model, 5, &cfg.schedule().unwrap(), &mut rng).unwrap();
    assert_eq!(x.shape(), &[5, PLANES, 8, 8]);
    assert!(x.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
}

#[test]
fn one_step_schedule_preserves_shape() {
    let model = tiny(8, 2).build().unwrap();
    let sched = NoiseSchedule::from_betas(vec![0.5]).unwrap();
    let x = p_sample_loop(&model, 3, &sched, &mut SeededRng::new(1)).unwrap();
    assert_eq!(x.shape(), &[3, PLANES, 8, 8]);
}

#[test]
fn sampling_is_bitwise_deterministic_and_thread_independent() {
    let cfg = tiny(8, 6);
    let mut trainer = DiffusionTrainer::new(&cfg).unwrap();
    for _ in 0..3 {
        trainer.train_step(&random_batch(8, 8, 5)).unwrap();
    }
    let sched = cfg.schedule().unwrap();
    let a = p_sample_loop(&trainer.model, 20, &sched, &mut SeededRng::new(8)).unwrap();
    let b = p_sample_loop(&trainer.model, 20, &sched, &mut SeededRng::new(8)).unwrap();
    let c = p_sample_loop_threaded(&trainer.model, 20, &sched, &mut SeededRng::new(8), 3).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
}

#[test]
fn output_shape_matches_input_for_all_sizes() {
    for size in [4, 8, 16, 32] {
        let cfg = DiffusionConfig { image_size: size, ..tiny(size, 1) };
        let mut model = cfg.build().unwrap();
        let id = model.params().find("conv_out.weight").unwrap();
        model.params_mut().get_mut(id).data_mut().fill(0.01);
        let x = random_batch(2, size, 1);
        for t in [0, cfg.steps / 2, cfg.steps - 1] {
            let y = model.predict(&x, &[t, t]).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }
    assert!(tiny(12, 0).build().is_err());
    assert!(DiffusionConfig { channels: 12, ..tiny(8, 0) }.build().is_err());
}

#[test]
fn constant_image_model_samples_the_constant() {
    let c = 0.4;
    let cfg = DiffusionConfig { batch_size: 16, channels: 32, steps: 50, ..tiny(8, 21) };
    let mut trainer = DiffusionTrainer::new(&cfg).unwrap();
    let batch = Tensor::full(&[16, PLANES, 8, 8], c);
    for _ in 0..1000 {
        trainer.train_step(&batch).unwrap();
    }
    let x = p_sample_loop(&trainer.model, 64, &trainer.schedule, &mut SeededRng::new(2)).unwrap();
    let per = x.numel() / 64;
    for p in 0..per {
        let mean = (0..64).map(|i| x.data()[i * per + p]).sum::<f64>() / 64.0;
        assert!((mean - c).abs() < 0.1, "pixel {p}: mean {mean}");
    }
}

#[test]
fn sample_to_efdm_extremes_and_round_trip() {
    let low = sample_to_efdm(&Tensor::full(&[PLANES, 4, 4], -1.0), "a").unwrap();
    assert!(low.pixels().iter().all(|&p| p == 0) && low.meta.synthetic);
    let high = sample_to_efdm(&Tensor::full(&[PLANES, 4, 4], 1.0), "a").unwrap();
    assert!(high.pixels().iter().all(|&p| p == 255));

    let all: Vec<u8> = (0..=255).collect();
    let e = Efdm::new(all.clone(), 16, 16, "a").unwrap();
    let back = sample_to_efdm(&to_float_tensor(&e), "a").unwrap();
    assert_eq!(back.pixels(), all.as_slice());

    let grid: Vec<f64> = (0..=4000).map(|i| -1.0 + i as f64 / 2000.0).collect();
    let x = Tensor::new(vec![1, 1, grid.len()], grid.clone()).unwrap();
    let q = sample_to_efdm(&x, "a").unwrap();
    let y = to_float_tensor(&q);
    for (a, b) in grid.iter().zip(y.data()) {
        assert!((a - b).abs() <= 1.0 / 127.5 + 1e-12);
    }
}

#[test]
fn checkpoint_restores_identical_predictions() {
    let cfg = tiny(8, 4);
    let mut trainer = DiffusionTrainer::new(&cfg).unwrap();
    trainer.train_step(&random_batch(8, 8, 1)).unwrap();
    let ck = to_checkpoint(&trainer.model, &cfg, "sad", 3).unwrap();
    let bytes = ck.to_bytes();
    let loaded = from_checkpoint(&Checkpoint::from_bytes(&bytes, "m".as_ref()).unwrap()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!((loaded.class.as_str(), loaded.epoch), ("sad", 3));
    let x = random_batch(2, 8, 9);
    assert_eq!(loaded.model.predict(&x, &[3, 4]).unwrap(), trainer.model.predict(&x, &[3, 4]).unwrap());
}

/// Exact `ε̂` for a prior that is uniform over `refs`: the posterior mean of `x_0` given `x_t`.
fn ideal_eps<'a>(refs: &'a [Vec<f64>], sched: &'a NoiseSchedule) -> impl Fn(&Tensor, usize) -> eegdiff_core::Result<Tensor> + 'a {
    move |x: &Tensor, t: usize| {
        let ab = sched.alpha_bars()[t];
        let per = refs[0].len();
        let mut out = Vec::with_capacity(x.numel());
        for xt in x.data().chunks(per) {
            let logw: Vec<f64> = refs
                .iter()
                .map(|r| -xt.iter().zip(r).map(|(a, b)| (a - ab.sqrt() * b).powi(2)).sum::<f64>() / (2.0 * (1.0 - ab)))
                .collect();
            let top = logw.iter().cloned().fold(f64::MIN, f64::max);
            let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = w.iter().sum();
            for (j, v) in xt.iter().enumerate() {
                let x0: f64 = refs.iter().zip(&w).map(|(r, wi)| wi / z * r[j]).sum();
                out.push((v - ab.sqrt() * x0) / (1.0 - ab).sqrt());
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

#[test]
fn exact_denoiser_recovers_the_training_images() {
    let sched = linear_schedule(200).unwrap();
    let per = PLANES * 8 * 8;
    let a: Vec<f64> = (0..per).map(|i| if (i % 64) / 8 < 3 { 0.8 } else { -0.9 }).collect();
    let b: Vec<f64> = (0..per).map(|i| if (i % 64) / 8 >= 5 { 0.6 } else { -0.7 }).collect();
    let refs = vec![a, b];
    let n = 40;
    let x = p_sample_loop_with(ideal_eps(&refs, &sched), [n, PLANES, 8, 8], &sched, &mut SeededRng::new(8)).unwrap();
    let mut hits = [0usize; 2];
    for s in x.data().chunks(per) {
        let dist: Vec<f64> = refs.iter().map(|r| s.iter().zip(r).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)).collect();
        let k = if dist[0] < dist[1] { 0 } else { 1 };
        assert!(dist[k] < 0.1, "sample is {} away from the nearest image", dist[k]);
        hits[k] += 1;
    }
    assert!(hits.iter().all(|&h| h >= n / 5), "modes drawn {hits:?}");
}

#[test]
fn generic_sampler_rejects_mis_shaped_predictions() {
    let sched = linear_schedule(4).unwrap();
    let bad = |_: &Tensor, _: usize| Ok(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(p_sample_loop_with(bad, [1, PLANES, 2, 2], &sched, &mut SeededRng::new(0)).is_err());
}

#[test]
fn mean_map_averages_pixels() {
    let mut data = eegdiff_core::efdm::EfdmDataset::new(vec!["a".into()], 2, 2).unwrap();
    assert!(mean_map(&data).is_err());
    data.push(Efdm::new(vec![0, 255, 0, 255], 2, 2, "a").unwrap()).unwrap();
    data.push(Efdm::new(vec![0, 255, 255, 255], 2, 2, "a").unwrap()).unwrap();
    let m = mean_map(&data).unwrap();
    assert_eq!(m.shape(), [2, 2]);
    for (got, want) in m.data().iter().zip([-1.0, 1.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn centring_round_trips_on_every_plane() {
    let mut model = DiffusionTrainer::new(&tiny(4, 0)).unwrap().model;
    let x = random_batch(3, 4, 5);
    assert_eq!(model.centre(&x).unwrap(), x);
    assert!(model.set_data_mean(Tensor::zeros(&[3, 4])).is_err());
    let mean = Tensor::uniform(&[4, 4], 0.5, &mut SeededRng::new(1));
    model.set_data_mean(mean.clone()).unwrap();
    let c = model.centre(&x).unwrap();
    for (i, (u, v)) in c.data().iter().zip(x.data()).enumerate() {
        assert!((u - (v - mean.data()[i % 16])).abs() < 1e-12);
    }
    let back = model.uncentre(&c).unwrap();
    assert!(back.data().iter().zip(x.data()).all(|(u, v)| (u - v).abs() < 1e-12));
}

#[test]
fn checkpoint_keeps_the_data_mean() {
    let cfg = tiny(4, 2);
    let mut model = DiffusionTrainer::new(&cfg).unwrap().model;
    let mean = Tensor::uniform(&[4, 4], 0.5, &mut SeededRng::new(3));
    model.set_data_mean(mean.clone()).unwrap();
    let ck = to_checkpoint(&model, &cfg, "sad", 1).unwrap();
    let loaded = from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes(), "m".as_ref()).unwrap()).unwrap();
    assert_eq!(loaded.model.data_mean(), &mean);

    let mut stripped = ck.clone();
    assert!(stripped.take_tensor("data_mean").is_some());
    assert!(from_checkpoint(&stripped).is_err());
}
