//! Truncated-BPTT training with a fixed number of parallel utterance lanes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_value, Entry};
use crate::corpus::{compute_norm_stats, normalize, read_wav, Corpus, CorpusEntry, NormStats};
use crate::dsp::{lps_of, LpsSequence, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{chunk_forward, ChunkInput, PriState, RtsnParams};
use crate::neural::{AdamConfig, AdamState, Scalar, Tensor};
use crate::util::{map_indexed, tree_reduce, write_atomic};

/// Setting this variable to `1` records wall-clock seconds in the training log.
pub const LOG_TIMING_ENV: &str = "RTSN_LOG_TIMING";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub unroll_steps: usize,
    pub utterances_per_batch: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unroll_steps: 64,
            utterances_per_batch: 16,
            learning_rate: 1e-4,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.unroll_steps == 0 {
            return bad("unroll_steps must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.utterances_per_batch == 0 || self.max_epochs == 0 {
            return bad("utterances_per_batch and max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Apply one config entry; `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "unroll_steps" => self.unroll_steps = parse_value(e)?,
            "utterances_per_batch" => self.utterances_per_batch = parse_value(e)?,
            "learning_rate" => self.learning_rate = parse_value(e)?,
            "max_epochs" => self.max_epochs = parse_value(e)?,
            "patience" => self.patience = parse_value(e)?,
            "seed" => self.seed = parse_value(e)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// A window of `frames.len()` frame indices; entries past `valid` replicate the last real frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub frames: Vec<usize>,
    pub valid: usize,
}

impl Chunk {
    pub fn mask(&self) -> Vec<bool> {
        (0..self.frames.len()).map(|i| i < self.valid).collect()
    }
}

pub fn make_chunks(num_frames: usize, unroll_steps: usize) -> Vec<Chunk> {
    let unroll = unroll_steps.max(1);
    (0..num_frames)
        .step_by(unroll)
        .map(|start| {
            let valid = unroll.min(num_frames - start);
            let frames = (0..unroll).map(|i| start + i.min(valid - 1)).collect();
            Chunk { frames, valid }
        })
        .collect()
}

/// Normalized features of one noisy/clean pair.
#[derive(Clone, Debug)]
pub struct Utterance<F> {
    pub noisy: Array2<F>,
    pub clean: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct Dataset<F> {
    pub train: Vec<Utterance<F>>,
    pub validation: Vec<Utterance<F>>,
    pub stats: NormStats,
}

fn load_entry<F: Scalar>(e: &CorpusEntry, stats: &NormStats) -> Result<Utterance<F>> {
    let cfg = StftConfig::default();
    let noisy = normalize(&lps_of(&read_wav(&e.noisy_path)?, &cfg)?, stats)?;
    let clean = normalize(&lps_of(&read_wav(&e.clean_path)?, &cfg)?, stats)?;
    if noisy.values.dim() != clean.values.dim() {
        return Err(Error::shape(
            format!("{:?}", noisy.values.dim()),
            format!("{:?}", clean.values.dim()),
        ));
    }
    Ok(Utterance {
        noisy: noisy.values.mapv(F::of),
        clean: clean.values.mapv(F::of),
    })
}

impl<F: Scalar> Dataset<F> {
    /// Features of `(noisy, clean)` pairs, normalized with statistics of the training noisy input.
    pub fn from_waveforms(train: &[(Waveform, Waveform)], validation: &[(Waveform, Waveform)]) -> Result<Self> {
        let cfg = StftConfig::default();
        let lps = |pairs: &[(Waveform, Waveform)]| {
            pairs
                .iter()
                .map(|(n, c)| Ok((lps_of(n, &cfg)?, lps_of(c, &cfg)?)))
                .collect::<Result<Vec<_>>>()
        };
        let (train, validation) = (lps(train)?, lps(validation)?);
        let stats = compute_norm_stats(train.iter().map(|(n, _)| n))?;
        let feats = |pairs: Vec<(LpsSequence, LpsSequence)>| {
            pairs
                .into_iter()
                .map(|(n, c)| {
                    Ok(Utterance {
                        noisy: normalize(&n, &stats)?.values.mapv(F::of),
                        clean: normalize(&c, &stats)?.values.mapv(F::of),
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            train: feats(train)?,
            validation: feats(validation)?,
            stats: stats.clone(),
        })
    }

    /// Load and normalize every utterance with the corpus statistics.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let load = |entries: &[CorpusEntry]| {
            map_indexed(entries.len(), |i| load_entry(&entries[i], &corpus.stats))
                .into_iter()
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            train: load(&corpus.train)?,
            validation: load(&corpus.validation)?,
            stats: corpus.stats.clone(),
        })
    }
}

/// Frame-averaged losses over a set of utterances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub post: f64,
    pub pri: f64,
    pub frames: usize,
}

/// Losses of `params` over whole utterances. Spans of `unroll_steps` frames
/// carry state and history, which gives the same values as one pass over
/// the full sequence.
pub fn evaluate<F: Scalar>(
    params: &RtsnParams<F>,
    utterances: &[Utterance<F>],
    unroll_steps: usize,
) -> Result<Evaluation> {
    let per_utt = map_indexed(utterances.len(), |i| {
        let u = &utterances[i];
        let mut state = PriState::zeros(&params.config);
        let mut history = Vec::new();
        let (mut post, mut pri, mut frames) = (0.0, 0.0, 0);
        for c in make_chunks(u.noisy.nrows(), unroll_steps) {
            let start = c.frames[0];
            let out = chunk_forward(
                params,
                &ChunkInput {
                    noisy: u.noisy.view(),
                    clean: u.clean.view(),
                    frames: start..start + c.valid,
                    state: &state,
                    history: &history,
                },
                false,
            )?;
            post += out.post_sum;
            pri += out.pri_sum;
            frames += out.frames;
            state = out.state;
            history = out.history;
        }
        Ok::<_, Error>((post, pri, frames))
    });
    let (mut post, mut pri, mut frames) = (0.0, 0.0, 0);
    for r in per_utt {
        let (a, b, n) = r?;
        post += a;
        pri += b;
        frames += n;
    }
    if frames == 0 {
        return Err(Error::EmptySignal);
    }
    let (post, pri) = (post / frames as f64, pri / frames as f64);
    Ok(Evaluation {
        loss: post + params.config.lambda * pri,
        post,
        pri,
        frames,
    })
}

/// Tracks the best validation loss and when to give up.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Record an epoch's loss; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_post: f64,
    pub val_pri: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Snapshot from the epoch with the lowest validation loss.
    pub params: RtsnParams<F>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

struct Lane<F> {
    utt: usize,
    next_chunk: usize,
    state: PriState<F>,
    history: Vec<Vec<F>>,
}

fn tag_step(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, step {step}")),
        other => other,
    }
}

/// Train until validation loss stops improving for `patience` epochs or
/// `max_epochs` is reached. Every epoch visits each training utterance once in
/// a seeded order; each step advances every busy lane by one chunk and applies
/// one Adam update with the frame-averaged gradient. Without validation data
/// the training loss drives early stopping.
pub fn train<F: Scalar>(
    initial: RtsnParams<F>,
    data: &Dataset<F>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    initial.config.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let timing = std::env::var(LOG_TIMING_ENV).is_ok_and(|v| v == "1");
    let mut params = initial.with_stats(data.stats.clone());
    let mut adam = AdamState::new(
        &params.store,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let chunks: Vec<Vec<Chunk>> = data
        .train
        .iter()
        .map(|u| make_chunks(u.noisy.nrows(), cfg.unroll_steps))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut queue: Vec<usize> = (0..data.train.len()).collect();
        queue.shuffle(&mut rng);
        queue.reverse();
        let mut lanes: Vec<Option<Lane<F>>> = (0..cfg.utterances_per_batch).map(|_| None).collect();
        let (mut loss_sum, mut frame_sum) = (0.0, 0usize);
        loop {
            for lane in lanes.iter_mut().filter(|l| l.is_none()) {
                if let Some(utt) = queue.pop() {
                    *lane = Some(Lane {
                        utt,
                        next_chunk: 0,
                        state: PriState::zeros(&params.config),
                        history: Vec::new(),
                    });
                }
            }
            let busy: Vec<usize> = (0..lanes.len()).filter(|&i| lanes[i].is_some()).collect();
            if busy.is_empty() {
                break;
            }
            step += 1;
            let results = map_indexed(busy.len(), |k| {
                let lane = lanes[busy[k]].as_ref().expect("busy lane");
                let u = &data.train[lane.utt];
                let c = &chunks[lane.utt][lane.next_chunk];
                let start = c.frames[0];
                chunk_forward(
                    &params,
                    &ChunkInput {
                        noisy: u.noisy.view(),
                        clean: u.clean.view(),
                        frames: start..start + c.valid,
                        state: &lane.state,
                        history: &lane.history,
                    },
                    true,
                )
            });
            let mut grads = Vec::with_capacity(busy.len());
            let mut frames = 0usize;
            for (k, r) in results.into_iter().enumerate() {
                let mut out = r.map_err(|e| tag_step(e, epoch, step))?;
                if !out.loss_sum.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}, step {step}")));
                }
                loss_sum += out.loss_sum;
                frames += out.frames;
                grads.push(out.grads.take().expect("gradients requested"));
                let slot = &mut lanes[busy[k]];
                let lane = slot.as_mut().expect("busy lane");
                lane.next_chunk += 1;
                if lane.next_chunk == chunks[lane.utt].len() {
                    *slot = None;
                } else {
                    lane.state = out.state;
                    lane.history = out.history;
                }
            }
            frame_sum += frames;
            let mut total = tree_reduce(grads, |mut a: Vec<Tensor<F>>, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.data_mut().iter_mut().zip(y.data()).for_each(|(p, &q)| *p += q);
                }
                a
            })
            .expect("at least one lane");
            let scale = F::of(1.0 / frames as f64);
            for t in &mut total {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam.step(&mut params.store, &total)
                .map_err(|e| tag_step(e, epoch, step))?;
        }

        let train_loss = loss_sum / frame_sum as f64;
        let (val_loss, val_post, val_pri) = if data.validation.is_empty() {
            (train_loss, f64::NAN, f64::NAN)
        } else {
            let ev = evaluate(&params, &data.validation, cfg.unroll_steps)?;
            (ev.loss, ev.post, ev.pri)
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_post,
            val_pri,
            seconds: if timing { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&entry);
        log.push(entry);
        if stopper.observe(epoch, val_loss) {
            best = params.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        log,
        best_epoch: stopper.best_epoch(),
    })
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
    for e in log {
        s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.train_loss, e.val_loss, e.seconds));
    }
    s
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let text = log_csv(log);
    write_atomic(path, |f| f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

#[cfg(test)]
mod tests;
