//! Audio features, the synthetic audio-visual corpus, its file format and
//! fold splitting.

mod dataset;
mod folds;
mod logfb;
mod synth;

pub use dataset::{
    load_dataset, read_dataset, save_dataset, write_dataset, AVDataset, AUDIO_DIM, DEFAULT_SEQUENCE_LENGTH,
    FILE_COLUMNS, VISUAL_DIM,
};
pub use folds::{split_folds, Fold};
pub use logfb::{extract_logfb, hamming, hz_to_mel, mel_to_hz, LogFBConfig, MelFilterbank};
pub use synth::{synthesize_av_dataset, SynthConfig};

pub(crate) use logfb::Stft;
