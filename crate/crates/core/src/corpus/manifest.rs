use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mix::mix_at_snr;
use super::stats::{compute_norm_stats, NormStats};
use super::wav::{read_wav, write_wav};
use crate::dsp::{lps_of, StftConfig};
use crate::error::{Error, Result};
use crate::util::{map_indexed, write_atomic};

/// Fraction of the manifest held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// One manifest line: `speech_path,noise_path,snr_db,seed,output_path`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub speech_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub seed: u64,
    pub output_path: PathBuf,
    /// 1-based line in the manifest file.
    pub line: usize,
}

impl MixtureSpec {
    pub fn clean_path(&self) -> PathBuf {
        clean_path_for(&self.output_path)
    }
}

/// `dir/name.wav` -> `dir/name.clean.wav`.
pub fn clean_path_for(noisy: &Path) -> PathBuf {
    let stem = noisy
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    noisy.with_file_name(format!("{stem}.clean.wav"))
}

/// Parse a manifest; relative paths resolve against the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<MixtureSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base)
}

pub fn parse_manifest_str(text: &str, base: &Path) -> Result<Vec<MixtureSpec>> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Manifest { line, msg };
        let record = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(trimmed.as_bytes())
            .records()
            .next()
            .transpose()
            .map_err(|e| bad(e.to_string()))?
            .ok_or_else(|| bad("empty record".into()))?;
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let snr_db: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("invalid snr_db {:?}", &record[2])))?;
        let seed: u64 = record[3]
            .parse()
            .map_err(|_| bad(format!("invalid seed {:?}", &record[3])))?;
        specs.push(MixtureSpec {
            speech_path: base.join(&record[0]),
            noise_path: base.join(&record[1]),
            snr_db,
            seed,
            output_path: base.join(&record[4]),
            line,
        });
    }
    Ok(specs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub line: usize,
    pub noisy_path: PathBuf,
    pub clean_path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<CorpusEntry>,
    pub validation: Vec<CorpusEntry>,
    pub stats: NormStats,
}

/// Side files written next to a manifest `dir/name.csv`.
#[derive(Clone, Debug)]
pub struct CorpusLayout {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub stats: PathBuf,
}

impl CorpusLayout {
    pub fn for_manifest(manifest: &Path) -> Self {
        let stem = manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "manifest".into());
        Self {
            manifest: manifest.to_path_buf(),
            split: manifest.with_file_name(format!("{stem}.split.csv")),
            stats: manifest.with_file_name(format!("{stem}.stats.bin")),
        }
    }
}

/// Deterministic split: shuffle indices with `seed`, hold out `round(n * 0.1)`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * VALIDATION_FRACTION).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Materialize every mixture, split 90/10 and compute stats over training inputs only.
pub fn build_corpus(manifest: &Path, split_seed: u64) -> Result<Corpus> {
    let specs = parse_manifest(manifest)?;
    if specs.is_empty() {
        return Err(Error::Manifest {
            line: 0,
            msg: "manifest has no entries".into(),
        });
    }
    let layout = CorpusLayout::for_manifest(manifest);
    let cfg = StftConfig::default();
    let results = map_indexed(specs.len(), |i| materialize(&specs[i]));
    for (spec, res) in specs.iter().zip(&results) {
        if let Err(e) = res {
            return Err(Error::Manifest {
                line: spec.line,
                msg: e.to_string(),
            });
        }
    }
    let (train_idx, val_idx) = split_indices(specs.len(), split_seed);

    let lps = map_indexed(train_idx.len(), |j| {
        let spec = &specs[train_idx[j]];
        read_wav(&spec.output_path).and_then(|w| lps_of(&w, &cfg))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let stats = compute_norm_stats(&lps)?;
    stats.write(&layout.stats)?;

    let entry = |i: usize| CorpusEntry {
        line: specs[i].line,
        noisy_path: specs[i].output_path.clone(),
        clean_path: specs[i].clean_path(),
    };
    let corpus = Corpus {
        train: train_idx.iter().map(|&i| entry(i)).collect(),
        validation: val_idx.iter().map(|&i| entry(i)).collect(),
        stats,
    };
    write_split(&layout.split, &corpus)?;
    Ok(corpus)
}

fn materialize(spec: &MixtureSpec) -> Result<()> {
    let speech = read_wav(&spec.speech_path)?;
    let noise = read_wav(&spec.noise_path)?;
    let mix = mix_at_snr(&speech, &noise, spec.snr_db, spec.seed)?;
    write_wav(&spec.output_path, &mix.noisy)?;
    write_wav(spec.clean_path(), &mix.clean)
}

fn write_split(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut text = String::from("line,split,noisy,clean\n");
    let rows = corpus
        .train
        .iter()
        .map(|e| ("train", e))
        .chain(corpus.validation.iter().map(|e| ("validation", e)));
    for (split, e) in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            e.line,
            split,
            e.noisy_path.display(),
            e.clean_path.display()
        ));
    }
    write_atomic(path, |f| f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

/// Load a previously built corpus from its side files.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let layout = CorpusLayout::for_manifest(manifest);
    let stats = NormStats::read(&layout.stats)?;
    let mut reader = csv::Reader::from_path(&layout.split).map_err(|e| Error::Manifest {
        line: 0,
        msg: format!("{}: {e}", layout.split.display()),
    })?;
    let mut corpus = Corpus {
        train: Vec::new(),
        validation: Vec::new(),
        stats,
    };
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(Error::Manifest {
                line,
                msg: "split file row needs 4 fields".into(),
            });
        }
        let entry = CorpusEntry {
            line: record[0].parse().map_err(|_| Error::Manifest {
                line,
                msg: "bad line number".into(),
            })?,
            noisy_path: PathBuf::from(&record[2]),
            clean_path: PathBuf::from(&record[3]),
        };
        match &record[1] {
            "train" => corpus.train.push(entry),
            "validation" => corpus.validation.push(entry),
            other => {
                return Err(Error::Manifest {
                    line,
                    msg: format!("unknown split {other:?}"),
                })
            }
        }
    }
    Ok(corpus)
}

/// Reuse the side files and mixtures when all of them exist, otherwise rebuild.
pub fn ensure_corpus(manifest: &Path, split_seed: u64) -> Result<Corpus> {
    let layout = CorpusLayout::for_manifest(manifest);
    if layout.split.exists() && layout.stats.exists() {
        if let Ok(corpus) = load_corpus(manifest) {
            let complete = corpus
                .train
                .iter()
                .chain(&corpus.validation)
                .all(|e| e.noisy_path.exists() && e.clean_path.exists());
            if complete {
                return Ok(corpus);
            }
        }
    }
    build_corpus(manifest, split_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_reports_errors() {
        let text = "a.wav, n.wav, 5.5, 7, out/m1.wav\n# comment\nb.wav,n.wav,-5,8,out/m2.wav\n";
        let specs = parse_manifest_str(text, Path::new("/data")).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].speech_path, PathBuf::from("/data/a.wav"));
        assert_eq!(specs[0].snr_db, 5.5);
        assert_eq!(specs[1].seed, 8);
        assert_eq!(specs[1].line, 3);
        assert_eq!(specs[1].clean_path(), PathBuf::from("/data/out/m2.clean.wav"));

        let err = parse_manifest_str("a,b,1,2,c\na,b,x,2,c\n", Path::new("")).unwrap_err();
        assert!(err.to_string().starts_with("manifest line 2:"), "{err}");
        let err = parse_manifest_str("a,b,1,2\n", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("expected 5 fields"));
    }

    #[test]
    fn split_is_ninety_ten_and_seeded() {
        let (train, val) = split_indices(10, 3);
        assert_eq!((train.len(), val.len()), (9, 1));
        assert_eq!(split_indices(10, 3), (train.clone(), val.clone()));
        let mut all: Vec<_> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(1, 0).1.len(), 0);
        assert_eq!(split_indices(40, 0).1.len(), 4);
    }
}
