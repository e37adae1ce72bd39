//! Core algorithms for the art-to-music pipeline: audio IO, Mel-spectrogram
//! analysis/inversion, the gated-fusion LSTM decoder with its training loop,
//! weakly aligned triplet construction, and the objective evaluation suite.

pub mod audio;
pub mod linalg;
pub mod mel;
pub mod model;

pub use audio::{read_wav, resample, write_wav, AudioBuffer, WavFormat};
pub use mel::{MelConfig, MelSpectrogram, Normalization};
pub use model::{FusionInput, LossWeights, ModelDims, ModelParams, TrainConfig};
