use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rtsn::config::load_run_config;
use rtsn::corpus::{build_corpus, ensure_corpus, mix_at_snr, read_wav, write_wav};
use rtsn::eval::{emit_spectrogram_image, Metrics};
use rtsn::model::{enhance_utterance, load_checkpoint, save_checkpoint, RtsnParams};
use rtsn::trainer::{train, write_log_csv, Dataset};

/// Speech enhancement with a two-stage recurrent network.
#[derive(Parser)]
#[command(name = "rtsn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix speech and noise at a target SNR.
    Mix {
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize a manifest's mixtures, split and normalization statistics.
    BuildCorpus {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes the checkpoint to OUT and the epoch log to OUT.log.csv.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a noisy 8 kHz WAV file.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Griffin-Lim iterations; 0 keeps the noisy phase. Defaults to the model's setting.
        #[arg(long)]
        gla: Option<usize>,
    },
    /// Compare a degraded file with a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        deg: PathBuf,
    },
    /// Write a PGM spectrogram image.
    Spectrogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix {
            speech,
            noise,
            snr,
            seed,
            out,
        } => {
            let m = mix_at_snr(&read_wav(&speech)?, &read_wav(&noise)?, snr, seed)?;
            write_wav(&out, &m.noisy)?;
            let snr = (m.achieved_snr_db * 1e6).round() / 1e6 + 0.0;
            println!("achieved_snr_db={snr:.6}");
            println!("rescale={}", m.rescale);
        }
        Command::BuildCorpus { manifest, seed } => {
            let c = build_corpus(&manifest, seed)?;
            println!("train={}", c.train.len());
            println!("validation={}", c.validation.len());
        }
        Command::Train {
            manifest,
            config,
            out,
            seed,
        } => {
            let (model_cfg, mut train_cfg) = load_run_config(&config)?;
            if let Some(seed) = seed {
                train_cfg.seed = seed;
            }
            let corpus = ensure_corpus(&manifest, train_cfg.seed)?;
            let data = Dataset::<f32>::from_corpus(&corpus)?;
            let init = RtsnParams::init(&model_cfg, train_cfg.seed)?;
            let outcome = train(init, &data, &train_cfg, |e| {
                eprintln!(
                    "epoch {} train_loss={:.6} val_loss={:.6}",
                    e.epoch, e.train_loss, e.val_loss
                )
            })?;
            save_checkpoint(&outcome.params, &out)?;
            write_log_csv(&log_path(&out), &outcome.log)?;
            println!("best_epoch={}", outcome.best_epoch);
        }
        Command::Enhance {
            model,
            input,
            out,
            gla,
        } => {
            let params = load_checkpoint(&model)?;
            let k = gla.unwrap_or(params.config.gla_iters);
            let noisy = read_wav(&input)?;
            let enhanced = enhance_utterance(&params, &noisy, k)
                .with_context(|| format!("enhancing {}", input.display()))?;
            write_wav(&out, &enhanced.waveform)?;
        }
        Command::Eval { reference, deg } => {
            let m = Metrics::compute(&read_wav(&reference)?, &read_wav(&deg)?)?;
            print!("{}", m.report());
        }
        Command::Spectrogram { input, out } => {
            emit_spectrogram_image(&read_wav(&input)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
