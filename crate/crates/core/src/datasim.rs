//! Synthetic training data: harmonic "speech", coloured noise, exponential
//! room impulse responses, SNR-controlled mixing and fixed-length pairs.
//!
//! Everything here is a pure function of its seeds. User-provided WAV
//! corpora can stand in for the synthetic sources via [`DataSource::from_manifests`].

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{read_wav, stft_padded, ComplexSpectrogram, StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const RIR_PROBABILITY: f64 = 0.75;
pub const SNR_RANGE_DB: (f64, f64) = (-5.0, 20.0);
pub const T60_RANGE_S: (f64, f64) = (0.1, 0.6);

const FS: f64 = SAMPLE_RATE as f64;
const MAX_HARMONIC_HZ: f64 = 3400.0;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let p = power(x);
    if p > 0.0 {
        let g = rms / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Sum of 2–5 voiced harmonic sources. Each has a fundamental in
/// 100–300 Hz with slow drift, harmonics up to 3.4 kHz with a `1/k` roll-off,
/// and a syllable-like on/off envelope at 2–6 Hz.
pub fn synth_clean(seed: u64, samples: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, 1);
    let sources = rng.gen_range(2..=5);
    let mut out = vec![0.0; samples];
    for _ in 0..sources {
        let f0 = rng.gen_range(100.0..300.0);
        let drift_rate = rng.gen_range(0.2..1.5);
        let drift_depth = rng.gen_range(0.02..0.08);
        let drift_phase = rng.gen_range(0.0..2.0 * PI);
        let env_rate = rng.gen_range(2.0..6.0);
        let env_phase = rng.gen_range(0.0..2.0 * PI);
        let gain = rng.gen_range(0.3..1.0);
        let harmonics = (MAX_HARMONIC_HZ / (f0 * (1.0 + drift_depth))).floor() as usize;
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let mut phase0 = 0.0;
        for (n, o) in out.iter_mut().enumerate() {
            let t = n as f64 / FS;
            let f = f0 * (1.0 + drift_depth * (2.0 * PI * drift_rate * t + drift_phase).sin());
            phase0 += 2.0 * PI * f / FS;
            // Raised sine to a power gives voiced bursts separated by pauses.
            let env = (0.5 + 0.5 * (2.0 * PI * env_rate * t + env_phase).sin()).powi(3);
            let mut v = 0.0;
            for (k, ph) in phases.iter().enumerate() {
                let h = (k + 1) as f64;
                v += (h * phase0 + ph).sin() / h;
            }
            *o += gain * env * v;
        }
    }
    let rms = rng.gen_range(0.03..0.1);
    scale_to_rms(&mut out, rms);
    out
}

/// Random mixture of white, pink, brown and amplitude-modulated band noise,
/// scaled to unit RMS.
pub fn synth_noise(seed: u64, samples: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, 2);
    let weights: [f64; 4] = [
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    ];
    let mut white = Vec::with_capacity(samples);
    for _ in 0..samples {
        white.push(rng.gen_range(-1.0..1.0));
    }
    let mut parts: Vec<Vec<f64>> = Vec::with_capacity(4);
    parts.push(white.clone());
    // Pink: Kellet's economy filter.
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    parts.push(
        white
            .iter()
            .map(|&w| {
                b0 = 0.99765 * b0 + w * 0.0990460;
                b1 = 0.96300 * b1 + w * 0.2965164;
                b2 = 0.57000 * b2 + w * 1.0526913;
                b0 + b1 + b2 + w * 0.1848
            })
            .collect(),
    );
    // Brown: leaky integrator.
    let mut acc = 0.0;
    parts.push(
        white
            .iter()
            .map(|&w| {
                acc = 0.995 * acc + w;
                acc
            })
            .collect(),
    );
    // Babble-like: two-pole band-pass around a random centre, slowly modulated.
    let centre = rng.gen_range(300.0..2500.0);
    let r: f64 = 0.97;
    let c1 = 2.0 * r * (2.0 * PI * centre / FS).cos();
    let c2 = -r * r;
    let mod_rate = rng.gen_range(1.0..8.0);
    let (mut y1, mut y2) = (0.0, 0.0);
    let band: Vec<f64> = white
        .iter()
        .enumerate()
        .map(|(n, &w)| {
            let y = w + c1 * y1 + c2 * y2;
            y2 = y1;
            y1 = y;
            y * (0.6 + 0.4 * (2.0 * PI * mod_rate * n as f64 / FS).sin())
        })
        .collect();
    parts.push(band);
    let mut out = vec![0.0; samples];
    for (part, w) in parts.iter_mut().zip(weights) {
        scale_to_rms(part, 1.0);
        out.iter_mut().zip(part.iter()).for_each(|(o, p)| *o += w * p);
    }
    scale_to_rms(&mut out, 1.0);
    out
}

/// Exponentially decaying noise tail behind a direct-path impulse, normalised
/// to unit energy. The decay reaches −60 dB after `t60` seconds.
pub fn synth_rir_with_t60(seed: u64, t60: f64) -> Vec<f64> {
    let mut rng = rng_for(seed, 3);
    let len = ((t60 * FS).ceil() as usize).max(2);
    let decay = 3.0 * 10f64.ln() / (t60 * FS);
    let mut h: Vec<f64> = (0..len)
        .map(|n| rng.gen_range(-1.0..1.0) * 0.5 * (-decay * n as f64).exp())
        .collect();
    h[0] = 1.0;
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let g = 1.0 / energy.sqrt();
    h.iter_mut().for_each(|v| *v *= g);
    h
}

/// Room impulse response with `T60` drawn uniformly from 0.1–0.6 s.
pub fn synth_rir(seed: u64) -> Vec<f64> {
    let t60 = rng_for(seed, 4).gen_range(T60_RANGE_S.0..=T60_RANGE_S.1);
    synth_rir_with_t60(seed, t60)
}

/// Linear convolution truncated to the length of `clean`.
pub fn convolve_rir(clean: &[f64], rir: &[f64]) -> Vec<f64> {
    let n = clean.len();
    let mut out = vec![0.0; n];
    for (k, &h) in rir.iter().enumerate().take(n) {
        if h == 0.0 {
            continue;
        }
        for (o, &c) in out[k..].iter_mut().zip(clean) {
            *o += h * c;
        }
    }
    out
}

/// Loops or truncates `noise` to `len` samples.
pub fn fit_length(noise: &[f64], len: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    noise.iter().cycle().take(len).copied().collect()
}

/// Mixes `clean + g·noise` with `g` chosen so that the utterance-level SNR
/// equals `snr_db`. Returns `(mixture, g·noise)`.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("SNR must be finite, got {snr_db}")));
    }
    let noise = fit_length(noise, clean.len());
    let pc = power(clean);
    let pn = power(&noise);
    if pc == 0.0 {
        return Err(Error::Silent("clean"));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let g = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.iter().map(|v| g * v).collect();
    let mix = clean.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok((mix, scaled))
}

/// Recipe for one training mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub clean_id: u64,
    pub noise_id: u64,
    pub rir_id: Option<u64>,
    pub snr_db: f64,
    pub seed: u64,
}

impl MixSpec {
    /// The `index`-th spec of the stream identified by `seed`: reverberant
    /// with probability 0.75, SNR uniform on `[−5, 20]` dB.
    pub fn draw(seed: u64, index: u64) -> Self {
        let mut rng = rng_for(seed, 1_000 + index);
        let clean_id = rng.gen();
        let noise_id = rng.gen();
        let rir_id = rng.gen_bool(RIR_PROBABILITY).then(|| rng.gen());
        let snr_db = rng.gen_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
        Self {
            clean_id,
            noise_id,
            rir_id,
            snr_db,
            seed: rng.gen(),
        }
    }
}

/// Where clean speech, noise and impulse responses come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic,
    Corpus {
        clean: Vec<Vec<f64>>,
        noise: Vec<Vec<f64>>,
        rir: Vec<Vec<f64>>,
    },
}

fn read_manifest(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| Ok(read_wav(base.join(l))?.samples))
        .collect()
}

impl DataSource {
    /// Loads `clean.txt`, `noise.txt` and (optionally) `rir.txt` from `dir`;
    /// each lists one WAV path per line, relative to `dir`.
    pub fn from_manifests(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let clean = read_manifest(&dir.join("clean.txt"))?;
        let noise = read_manifest(&dir.join("noise.txt"))?;
        let rir_path = dir.join("rir.txt");
        let mut rir = if rir_path.exists() {
            read_manifest(&rir_path)?
        } else {
            Vec::new()
        };
        if clean.is_empty() || noise.is_empty() {
            return Err(Error::Empty("clean or noise manifest"));
        }
        for h in &mut rir {
            let e: f64 = h.iter().map(|v| v * v).sum();
            if e > 0.0 {
                h.iter_mut().for_each(|v| *v /= e.sqrt());
            }
        }
        Ok(Self::Corpus { clean, noise, rir })
    }

    fn clean(&self, id: u64, len: usize, seed: u64) -> Vec<f64> {
        match self {
            Self::Synthetic => synth_clean(id, len),
            Self::Corpus { clean, .. } => crop(&clean[(id % clean.len() as u64) as usize], len, seed),
        }
    }

    fn noise(&self, id: u64, len: usize, seed: u64) -> Vec<f64> {
        match self {
            Self::Synthetic => synth_noise(id, len),
            Self::Corpus { noise, .. } => {
                let n = &noise[(id % noise.len() as u64) as usize];
                if n.len() > len {
                    crop(n, len, seed ^ 0x5a5a)
                } else {
                    fit_length(n, len)
                }
            }
        }
    }

    fn rir(&self, id: u64) -> Option<Vec<f64>> {
        match self {
            Self::Synthetic => Some(synth_rir(id)),
            Self::Corpus { rir, .. } if rir.is_empty() => None,
            Self::Corpus { rir, .. } => Some(rir[(id % rir.len() as u64) as usize].clone()),
        }
    }
}

/// Random `len`-sample excerpt, zero-padded when the source is shorter.
fn crop(x: &[f64], len: usize, seed: u64) -> Vec<f64> {
    if x.len() <= len {
        let mut out = x.to_vec();
        out.resize(len, 0.0);
        return out;
    }
    let start = rng_for(seed, 5).gen_range(0..=x.len() - len);
    x[start..start + len].to_vec()
}

/// Noisy and target signals for one spec, both as waveforms and spectrograms.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub noisy_wave: Vec<f64>,
    pub clean_wave: Vec<f64>,
    pub noisy: ComplexSpectrogram,
    pub clean: ComplexSpectrogram,
}

/// Builds the pair for `spec` with exactly `frames` padded STFT frames (see
/// [`stft_padded`]); the waveforms are `hop·(frames − 1)` samples long. The
/// (possibly reverberant) clean signal is both mixed and used as target.
pub fn make_training_pair(spec: &MixSpec, source: &DataSource, frames: usize) -> Result<TrainingPair> {
    let config = StftConfig::default();
    let len = config.padded_signal_len(frames);
    if len == 0 {
        return Err(Error::InvalidConfig(format!(
            "{frames} frames hold no samples after the {}-sample lead-in",
            config.lead_in()
        )));
    }
    let dry = source.clean(spec.clean_id, len, spec.seed);
    let clean = match spec.rir_id.and_then(|id| source.rir(id)) {
        Some(h) => convolve_rir(&dry, &h),
        None => dry,
    };
    let noise = source.noise(spec.noise_id, len, spec.seed);
    let (noisy, _) = mix_at_snr(&clean, &noise, spec.snr_db)?;
    Ok(TrainingPair {
        noisy: stft_padded(&noisy, &config)?,
        clean: stft_padded(&clean, &config)?,
        noisy_wave: noisy,
        clean_wave: clean,
    })
}
