//! Audio I/O and the STFT analysis/synthesis front end.

pub mod fft;
mod stft;
mod wav;

pub use stft::{
    hann_window, istft, istft_padded, stft, stft_padded, ComplexSpectrogram, StftConfig, StftEngine,
};
pub use wav::{quantize, read_wav, write_wav, Waveform, SAMPLE_RATE};
