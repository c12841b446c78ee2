use std::f64::consts::PI;

use ndarray::{s, Array2, Zip};

use super::fft::Fft;
use crate::error::{shape_err, Error, Result};

/// Overlap-add normalizer values below this leave the output sample at zero.
const NORM_FLOOR: f64 = 1e-10;

/// Periodic Hann window `w[k] = 0.5·(1 − cos(2πk/len))`.
pub fn hann_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 || len % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "window length must be even and ≥ 2, got {len}"
        )));
    }
    Ok((0..len)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / len as f64).cos()))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Vec<f64>,
}

impl StftConfig {
    /// Periodic Hann analysis with 50% overlap and `fft_size = window_len`.
    pub fn new(window_len: usize) -> Result<Self> {
        let window = hann_window(window_len)?;
        if !window_len.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "window length must be a power of two, got {window_len}"
            )));
        }
        Ok(Self {
            window_len,
            hop: window_len / 2,
            fft_size: window_len,
            window,
        })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `floor((len − window_len)/hop) + 1`, or zero when the signal is too short.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Zeros placed before the signal by [`stft_padded`]: one window minus
    /// one hop, so that the first sample is covered by as many frames as any
    /// interior sample.
    pub fn lead_in(&self) -> usize {
        self.window_len - self.hop
    }

    /// Frames produced by [`stft_padded`] for a `len`-sample signal.
    pub fn padded_frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + self.lead_in() / self.hop
    }

    /// Signal length that [`stft_padded`] turns into exactly `frames` frames.
    pub fn padded_signal_len(&self, frames: usize) -> usize {
        frames.saturating_sub(self.lead_in() / self.hop) * self.hop
    }

    /// Longest signal an iSTFT of `frames` frames can produce.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::new(512).expect("default STFT config is valid")
    }
}

/// `F × T` complex spectrogram stored as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(bins: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            re: Array2::zeros((bins, frames)),
            im: Array2::zeros((bins, frames)),
            config,
        }
    }

    pub fn bins(&self) -> usize {
        self.re.nrows()
    }

    pub fn frames(&self) -> usize {
        self.re.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        Zip::from(&self.re)
            .and(&self.im)
            .map_collect(|&r, &i| (r * r + i * i).sqrt())
    }

    /// Keeps the first `frames` frames, zero-padding when shorter.
    pub fn fit_frames(&self, frames: usize) -> Self {
        let mut out = Self::zeros(self.bins(), frames, self.config.clone());
        let n = frames.min(self.frames());
        out.re.slice_mut(s![.., ..n]).assign(&self.re.slice(s![.., ..n]));
        out.im.slice_mut(s![.., ..n]).assign(&self.im.slice(s![.., ..n]));
        out
    }
}

/// Per-frame analysis and synthesis shared by the offline and streaming paths.
#[derive(Clone, Debug)]
pub struct StftEngine {
    pub config: StftConfig,
    fft: Fft,
}

impl StftEngine {
    pub fn new(config: StftConfig) -> Result<Self> {
        let fft = Fft::new(config.fft_size)?;
        Ok(Self { config, fft })
    }

    /// Windowed DFT of one `window_len`-sample frame.
    pub fn analyze(&self, frame: &[f64], re: &mut [f64], im: &mut [f64]) {
        let windowed: Vec<f64> = frame
            .iter()
            .zip(&self.config.window)
            .map(|(x, w)| x * w)
            .collect();
        self.fft.forward_real(&windowed, re, im);
    }

    /// Inverse DFT of one frame multiplied by the synthesis window.
    pub fn synthesize(&self, re: &[f64], im: &[f64]) -> Vec<f64> {
        let mut frame = self.fft.inverse_real(re, im);
        frame
            .iter_mut()
            .zip(&self.config.window)
            .for_each(|(v, w)| *v *= w);
        frame
    }
}

pub fn stft(x: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    if x.len() < config.window_len {
        return Err(Error::EmptySpectrogram {
            len: x.len(),
            need: config.window_len,
        });
    }
    let engine = StftEngine::new(config.clone())?;
    let frames = config.frame_count(x.len());
    let bins = config.bins();
    let mut spec = ComplexSpectrogram::zeros(bins, frames, config.clone());
    let (mut re, mut im) = (vec![0.0; bins], vec![0.0; bins]);
    for t in 0..frames {
        let start = t * config.hop;
        engine.analyze(&x[start..start + config.window_len], &mut re, &mut im);
        for f in 0..bins {
            spec.re[[f, t]] = re[f];
            spec.im[[f, t]] = im[f];
        }
    }
    Ok(spec)
}

/// Weighted overlap-add with the analysis window, normalized by the
/// per-sample sum of squared windows.
pub fn istft(spec: &ComplexSpectrogram, out_len: usize) -> Result<Vec<f64>> {
    let config = &spec.config;
    if spec.bins() != config.bins() || spec.im.dim() != spec.re.dim() {
        return Err(shape_err(format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins(),
            config.bins()
        )));
    }
    let max_len = config.synthesis_len(spec.frames());
    if out_len > max_len {
        return Err(Error::InvalidConfig(format!(
            "requested {out_len} samples but {} frames synthesize at most {max_len}",
            spec.frames()
        )));
    }
    let engine = StftEngine::new(config.clone())?;
    let mut acc = vec![0.0; max_len];
    let mut norm = vec![0.0; max_len];
    let (mut re, mut im) = (vec![0.0; spec.bins()], vec![0.0; spec.bins()]);
    for t in 0..spec.frames() {
        for f in 0..spec.bins() {
            re[f] = spec.re[[f, t]];
            im[f] = spec.im[[f, t]];
        }
        let frame = engine.synthesize(&re, &im);
        let start = t * config.hop;
        for (k, v) in frame.iter().enumerate() {
            acc[start + k] += v;
            norm[start + k] += config.window[k] * config.window[k];
        }
    }
    Ok(acc
        .iter()
        .zip(&norm)
        .take(out_len)
        .map(|(&a, &n)| normalize_sample(a, n))
        .collect())
}

/// STFT of `x` with [`StftConfig::lead_in`] zeros in front and enough zeros
/// behind to complete the last hop and cover it fully. Unlike [`stft`] every
/// sample of `x` lies under overlapping windows, so the overlap-add
/// normaliser never approaches zero inside the signal.
pub fn stft_padded(x: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    if x.is_empty() {
        return Err(Error::EmptySpectrogram {
            len: 0,
            need: 1,
        });
    }
    let lead = config.lead_in();
    let frames = config.padded_frame_count(x.len());
    let mut padded = vec![0.0; config.synthesis_len(frames)];
    padded[lead..lead + x.len()].copy_from_slice(x);
    stft(&padded, config)
}

/// Inverse of [`stft_padded`]: the first `len` samples after the lead-in.
pub fn istft_padded(spec: &ComplexSpectrogram, len: usize) -> Result<Vec<f64>> {
    let lead = spec.config.lead_in();
    let mut y = istft(spec, spec.config.synthesis_len(spec.frames()))?;
    if y.len() < lead + len {
        return Err(Error::InvalidConfig(format!(
            "requested {len} samples but {} frames cover only {}",
            spec.frames(),
            y.len().saturating_sub(lead)
        )));
    }
    y.truncate(lead + len);
    Ok(y.split_off(lead))
}

pub(crate) fn normalize_sample(acc: f64, norm: f64) -> f64 {
    if norm > NORM_FLOOR {
        acc / norm
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft::naive_dft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hann_closed_form() {
        let w4 = hann_window(4).unwrap();
        for (a, b) in w4.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = hann_window(512).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(w[256], 1.0);
        assert!(hann_window(7).is_err());
        assert!(hann_window(0).is_err());
    }

    #[test]
    fn overlap_sums_by_direct_summation() {
        // Hann itself overlap-adds to a constant at 50% hop; its square is
        // hop-periodic and bounded in [0.5, 1], so the normalizer never vanishes
        // on interior samples.
        let w = hann_window(512).unwrap();
        let frames = 8;
        let len = (frames - 1) * 256 + 512;
        let mut lin = vec![0.0; len];
        let mut sq = vec![0.0; len];
        for t in 0..frames {
            for k in 0..512 {
                lin[t * 256 + k] += w[k];
                sq[t * 256 + k] += w[k] * w[k];
            }
        }
        for n in 512..len - 512 {
            assert!((lin[n] - 1.0).abs() < 1e-12);
            assert!((sq[n] - sq[n - 256]).abs() < 1e-12);
            assert!(sq[n] >= 0.5 - 1e-12 && sq[n] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        for len in [512usize, 513, 767, 768, 16000, 16384] {
            let spec = stft(&vec![0.0; len], &cfg).unwrap();
            assert_eq!(spec.frames(), (len - 512) / 256 + 1);
            assert_eq!(spec.bins(), 257);
        }
        assert!(matches!(
            stft(&vec![0.0; 511], &cfg),
            Err(Error::EmptySpectrogram { .. })
        ));
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let spec = stft(&vec![0.0; 16000], &StftConfig::default()).unwrap();
        assert!(spec.re.iter().chain(spec.im.iter()).all(|&v| v == 0.0));
        let y = istft(&spec, spec.config.synthesis_len(spec.frames())).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_on_bin_32_is_concentrated() {
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&x, &StftConfig::default()).unwrap();
        let mag = spec.magnitude();
        for t in 0..spec.frames() {
            let peak = mag[[32, t]];
            for f in 0..257usize {
                if f.abs_diff(32) >= 3 {
                    assert!(mag[[f, t]] < 1e-10 * peak, "bin {f} frame {t}");
                }
            }
        }
        // Cross-check one frame against the direct DFT.
        let w = &spec.config.window;
        let frame: Vec<f64> = (0..512).map(|k| x[256 * 3 + k] * w[k]).collect();
        let (re, im) = naive_dft(&frame);
        assert!((re[32] - spec.re[[32, 3]]).abs() < 1e-9 * peak_abs(&re, &im));
        assert!((im[32] - spec.im[[32, 3]]).abs() < 1e-9 * peak_abs(&re, &im));
    }

    fn peak_abs(re: &[f64], im: &[f64]) -> f64 {
        re.iter()
            .zip(im)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn round_trip_interior() {
        let x = noise(16000, 9);
        let spec = stft(&x, &StftConfig::default()).unwrap();
        let y = istft(&spec, 15872).unwrap();
        for n in 512..15872 - 512 {
            assert!((x[n] - y[n]).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_frame_reconstruction() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..512)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&x, &cfg).unwrap();
        assert_eq!(spec.frames(), 1);
        let y = istft(&spec, 512).unwrap();
        // One frame: output = w·(w·x) / w², i.e. x wherever w² is above the floor.
        for n in 0..512 {
            let w2 = cfg.window[n] * cfg.window[n];
            let expect = if w2 > NORM_FLOOR {
                cfg.window[n] * cfg.window[n] * x[n] / w2
            } else {
                0.0
            };
            assert!((y[n] - expect).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn padded_round_trip_is_exact_everywhere() {
        let c = StftConfig::default();
        for len in [1, 255, 256, 257, 1000, 16000] {
            let x = noise(len, len as u64);
            let spec = stft_padded(&x, &c).unwrap();
            assert_eq!(spec.frames(), c.padded_frame_count(len));
            let y = istft_padded(&spec, len).unwrap();
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "len {len}: {err}");
        }
        assert_eq!(c.padded_frame_count(32000), 126);
        assert_eq!(c.padded_signal_len(126), 32000);
        assert!(stft_padded(&[], &c).is_err());
    }

    #[test]
    fn padded_synthesis_does_not_amplify_spectral_errors() {
        // A perturbation of fixed size in every bin must stay bounded in the
        // waveform, including the first and last samples.
        let c = StftConfig::default();
        let x = noise(4096, 3);
        let mut spec = stft_padded(&x, &c).unwrap();
        spec.re.mapv_inplace(|v| v + 1e-3);
        let y = istft_padded(&spec, x.len()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn istft_rejects_overlong_output() {
        let spec = stft(&vec![0.0; 1024], &StftConfig::default()).unwrap();
        assert!(istft(&spec, 1025).is_err());
        assert!(istft(&spec, 1024).is_ok());
    }
}
