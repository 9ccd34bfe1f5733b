use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::mix_at_snr;
use crate::model::RtsnConfig;
use crate::synth::{toy_utterance, white_noise};

fn tiny(n_bins: usize) -> RtsnConfig {
    RtsnConfig {
        tau: 1,
        n_bins,
        lstm_units: 8,
        conv_channels: vec![4, 3, 2, 1],
        ..RtsnConfig::default()
    }
}

fn pairs(count: usize, len: usize, seed: u64) -> Vec<(Waveform, Waveform)> {
    (0..count as u64)
        .map(|i| {
            let clean = toy_utterance(len, seed + i);
            let noise = white_noise(len, 0.2, seed + 100 + i);
            let m = mix_at_snr(&clean, &noise, 0.0, seed + i).unwrap();
            (m.noisy, m.clean)
        })
        .collect()
}

fn small_data() -> Dataset<f32> {
    Dataset::from_waveforms(&pairs(4, 1600, 1), &pairs(1, 1600, 50)).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        unroll_steps: 8,
        utterances_per_batch: 3,
        learning_rate: 3e-3,
        max_epochs: 4,
        patience: 100,
        seed: 7,
    }
}

#[test]
fn chunk_layout() {
    let c = make_chunks(130, 64);
    assert_eq!(c.len(), 3);
    assert_eq!((c[0].valid, c[1].valid, c[2].valid), (64, 64, 2));
    assert_eq!(c[1].frames[0], 64);
    assert_eq!(c[2].frames.len(), 64);
    assert_eq!(&c[2].frames[..3], &[128, 129, 129]);
    assert!(c[2].frames[2..].iter().all(|&f| f == 129));
    assert_eq!(c[2].mask().iter().filter(|&&m| m).count(), 2);
    let one = make_chunks(64, 64);
    assert_eq!(one.len(), 1);
    assert!(one[0].mask().iter().all(|&m| m));
    assert_eq!(make_chunks(1, 64)[0].valid, 1);
}

fn random_seq(t: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((t, n), |_| rng.gen_range(-1.5..1.5))
}

#[test]
fn no_gradient_crosses_a_chunk_boundary() {
    let cfg = tiny(9);
    let p = RtsnParams::<f64>::init(&cfg, 3).unwrap();
    let noisy = random_seq(10, 9, 1);
    let clean = random_seq(10, 9, 2);
    let zero = PriState::zeros(&cfg);
    let first = |p: &RtsnParams<f64>| {
        chunk_forward(
            p,
            &ChunkInput {
                noisy: noisy.view(),
                clean: clean.view(),
                frames: 0..5,
                state: &zero,
                history: &[],
            },
            false,
        )
        .unwrap()
    };
    let second = |p: &RtsnParams<f64>, state: &PriState<f64>, history: &[Vec<f64>], grad| {
        chunk_forward(
            p,
            &ChunkInput {
                noisy: noisy.view(),
                clean: clean.view(),
                frames: 5..10,
                state,
                history,
            },
            grad,
        )
        .unwrap()
    };
    let c1 = first(&p);
    let grads = second(&p, &c1.state, &c1.history, true).grads.unwrap();

    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let (mut checked, mut corners, mut differs) = (0, 0, 0);
    let mut q = p.clone();
    for id in p.store.ids() {
        for i in 0..p.store.get(id).len() {
            let orig = p.store.get(id).data()[i];
            let eval = |q: &RtsnParams<f64>, full: bool| {
                if full {
                    let c = first(q);
                    second(q, &c.state, &c.history, false).loss_sum
                } else {
                    second(q, &c1.state, &c1.history, false).loss_sum
                }
            };
            let mut fd = |full| {
                q.store.get_mut(id).data_mut()[i] = orig + h;
                let up = eval(&q, full);
                q.store.get_mut(id).data_mut()[i] = orig - h;
                let down = eval(&q, full);
                q.store.get_mut(id).data_mut()[i] = orig;
                (up, down)
            };
            let (up, down) = fd(false);
            let truncated = (up - down) / (2.0 * h);
            let (up_f, down_f) = fd(true);
            let full = (up_f - down_f) / (2.0 * h);
            let ana = grads[id.index()].data()[i];
            checked += 1;
            if rel(ana, full) > 1e-3 {
                differs += 1;
            }
            if rel(ana, truncated) < 1e-4 {
                continue;
            }
            let f0 = eval(&q, false);
            let (fwd, bwd) = ((up - f0) / h, (f0 - down) / h);
            assert!(
                rel(fwd, bwd) > 1e-4 && (rel(ana, fwd) < 1e-4 || rel(ana, bwd) < 1e-4),
                "{}[{i}]: {ana} vs truncated {truncated}",
                p.store.name(id)
            );
            corners += 1;
        }
    }
    assert!(corners * 100 <= checked);
    assert!(differs > 0, "probe cannot tell truncated from full gradients");
}

#[test]
fn early_stopping_contract() {
    let mut s = EarlyStopping::new(3);
    let curve = [5.0, 4.0, 3.0, 3.5, 3.6, 3.7, 1.0];
    let mut stopped_at = None;
    for (e, &l) in curve.iter().enumerate() {
        s.observe(e + 1, l);
        if s.should_stop() {
            stopped_at = Some(e + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(6));
    assert_eq!((s.best_epoch(), s.best_loss()), (3, 3.0));
}

#[test]
fn evaluation_is_independent_of_span_length() {
    let data = Dataset::<f64>::from_waveforms(&pairs(2, 1500, 3), &[]).unwrap();
    let p = RtsnParams::<f64>::init(&tiny(129), 1).unwrap();
    let a = evaluate(&p, &data.train, 1000).unwrap();
    for unroll in [1, 3, 7] {
        let b = evaluate(&p, &data.train, unroll).unwrap();
        assert_eq!(a.frames, b.frames);
        assert!((a.loss - b.loss).abs() < 1e-10 * a.loss);
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = small_data();
    let init = RtsnParams::<f32>::init(&tiny(129), 0).unwrap();
    let mut seen = Vec::new();
    let a = train(init.clone(), &data, &small_cfg(), |e| seen.push(e.epoch)).unwrap();
    let b = train(init, &data, &small_cfg(), |_| {}).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(a.log, b.log);
    assert_eq!(a.params.store.tensors(), b.params.store.tensors());
    assert!(a.log[3].train_loss < a.log[0].train_loss);
    assert!(a.log.iter().all(|e| e.seconds == 0.0));
    assert_eq!(a.params.stats.as_ref(), Some(&data.stats));
    let csv = log_csv(&a.log);
    assert!(csv.starts_with("epoch,train_loss,val_loss,seconds\n1,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn returns_the_best_validation_snapshot() {
    let data = small_data();
    let init = RtsnParams::<f32>::init(&tiny(129), 2).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-2,
        max_epochs: 6,
        ..small_cfg()
    };
    let long = train(init.clone(), &data, &cfg, |_| {}).unwrap();
    let best = long
        .log
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap()
        .epoch;
    assert_eq!(long.best_epoch, best);
    let short = train(init, &data, &TrainConfig { max_epochs: best, ..cfg }, |_| {}).unwrap();
    assert_eq!(short.params.store.tensors(), long.params.store.tensors());
}

#[test]
fn patience_stops_training() {
    let data = small_data();
    let init = RtsnParams::<f32>::init(&tiny(129), 2).unwrap();
    for patience in [1, 2] {
        let cfg = TrainConfig {
            learning_rate: 5e-2,
            max_epochs: 12,
            patience,
            ..small_cfg()
        };
        let out = train(init.clone(), &data, &cfg, |_| {}).unwrap();
        assert_eq!(out.log.len(), (out.best_epoch + patience).min(12), "patience {patience}");
    }
}

#[test]
fn non_finite_values_abort_with_position() {
    let data = small_data();
    let mut init = RtsnParams::<f32>::init(&tiny(129), 0).unwrap();
    let b = init.proj.b;
    init.store.get_mut(b).data_mut()[0] = f32::NAN;
    let err = train(init, &data, &small_cfg(), |_| {}).unwrap_err();
    assert!(err.to_string().contains("epoch 1, step 1"), "{err}");
}

#[test]
fn train_config_keys() {
    let mut c = TrainConfig::default();
    let e = crate::config::parse_key_values("patience = 9\nfoo = 1").unwrap();
    assert!(c.set(&e[0]).unwrap());
    assert!(!c.set(&e[1]).unwrap());
    assert_eq!(c.patience, 9);
    assert!(TrainConfig { unroll_steps: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { patience: 0, ..c }.validate().is_err());
}
