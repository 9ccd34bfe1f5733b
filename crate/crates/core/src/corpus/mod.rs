//! Corpus synthesis: WAV I/O, SNR-controlled mixing, manifests and
//! normalization statistics.

mod manifest;
mod mix;
mod stats;
mod wav;

pub use manifest::{
    build_corpus, clean_path_for, ensure_corpus, load_corpus, parse_manifest, parse_manifest_str,
    split_indices, Corpus, CorpusEntry, CorpusLayout, MixtureSpec, VALIDATION_FRACTION,
};
pub use mix::{mix_at_snr, Mixture, CLIP_PEAK};
pub use stats::{compute_norm_stats, denormalize, normalize, NormStats, STD_FLOOR};
pub use wav::{quantize, read_wav, write_wav};
