//! Offline and frame-by-frame enhancement.
//!
//! Both paths use the same framing: one hop of zeros before the signal and
//! enough after it that every sample lies under two windows
//! ([`stft_padded`](crate::dsp::stft_padded)), `τ` extra all-zero spectrogram
//! frames at the end so that every real frame receives its delayed mask, and
//! a windowed overlap-add normalised by the summed squared window.

use ndarray::{s, Array1, Array2};

use crate::dsp::{istft_padded, stft_padded, ComplexSpectrogram, StftConfig, StftEngine};
use crate::error::{Error, Result};
use crate::model::{apply_mask, Compression, ForwardMode, Model, ModelStream};
use crate::nn::Real;

/// Samples advanced per frame.
pub const HOP: usize = 256;

fn compression<T: Real>(model: &Model<T>) -> Compression {
    Compression {
        k: model.config.cirm_k,
        c: model.config.cirm_c,
    }
}

/// Number of STFT frames used for `len` input samples.
pub fn frames_for(len: usize, config: &StftConfig) -> usize {
    config.padded_frame_count(len)
}

/// Algorithmic latency in samples: from the first sample of a hop entering
/// the enhancer to that hop leaving it.
pub fn algorithmic_latency(tau: usize, config: &StftConfig) -> usize {
    config.window_len + tau * config.hop
}

/// Enhances a whole signal at once. The output has the input's length.
pub fn enhance_offline<T: Real>(model: &Model<T>, x: &[f64], mode: ForwardMode) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("input signal"));
    }
    let noisy = stft_padded(x, &StftConfig::default())?;
    let enhanced = enhance_spectrogram(model, &noisy, mode)?;
    istft_padded(&enhanced, x.len())
}

/// Applies the model's delayed mask to every frame of `noisy`.
pub fn enhance_spectrogram<T: Real>(
    model: &Model<T>,
    noisy: &ComplexSpectrogram,
    mode: ForwardMode,
) -> Result<ComplexSpectrogram> {
    let tau = model.config.tau;
    let frames = noisy.frames();
    let extended = noisy.fit_frames(frames + tau);
    let mask = model.forward(&extended, mode)?;
    let (mr, mi) = mask.decompress(compression(model));
    let mr = mr.slice(s![.., tau..]).to_owned();
    let mi = mi.slice(s![.., tau..]).to_owned();
    apply_mask(noisy, &mr, &mi)
}

/// Streaming enhancer: hop in, hop out, with constant-size state.
#[derive(Clone, Debug)]
pub struct StreamEnhancer<'m, T> {
    model: &'m Model<T>,
    engine: StftEngine,
    state: StreamState<T>,
}

/// Everything a stream carries between hops.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState<T> {
    model: ModelStream<T>,
    /// Most recent `window_len` input samples.
    window: Vec<f64>,
    /// Samples of the current incomplete hop.
    pending: Vec<f64>,
    /// Output samples still to be dropped because they precede the input.
    preroll: usize,
    /// Spectra of the last `τ + 1` frames, indexed by frame number modulo `τ + 1`.
    delay_re: Array2<f64>,
    delay_im: Array2<f64>,
    frames_seen: usize,
    frames_synth: usize,
    /// Overlap-add accumulator and window-power normaliser for the second
    /// half of the most recently synthesised frame.
    tail: Vec<f64>,
    tail_norm: Vec<f64>,
    flushed: bool,
}

impl<T: Real> StreamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let config = StftConfig::default();
        let bins = config.bins();
        let depth = model.config.tau + 1;
        Self {
            model: ModelStream::new(model),
            window: vec![0.0; config.window_len],
            pending: Vec::with_capacity(HOP),
            preroll: config.lead_in(),
            delay_re: Array2::zeros((depth, bins)),
            delay_im: Array2::zeros((depth, bins)),
            frames_seen: 0,
            frames_synth: 0,
            tail: vec![0.0; config.hop],
            tail_norm: vec![0.0; config.hop],
            flushed: false,
        }
    }

    /// Restores the initial condition.
    pub fn reset(&mut self) {
        self.model.reset();
        self.window.fill(0.0);
        self.pending.clear();
        self.preroll = StftConfig::default().lead_in();
        self.delay_re.fill(0.0);
        self.delay_im.fill(0.0);
        self.frames_seen = 0;
        self.frames_synth = 0;
        self.tail.fill(0.0);
        self.tail_norm.fill(0.0);
        self.flushed = false;
    }

    /// Number of scalars held by the state; independent of how much audio
    /// has been processed.
    pub fn scalars(&self) -> usize {
        self.model.scalars()
            + self.window.capacity()
            + self.pending.capacity()
            + self.delay_re.len()
            + self.delay_im.len()
            + self.tail.capacity()
            + self.tail_norm.capacity()
    }
}

impl<'m, T: Real> StreamEnhancer<'m, T> {
    pub fn new(model: &'m Model<T>) -> Result<Self> {
        let config = StftConfig::default();
        if model.config.freq_bins != config.bins() {
            return Err(Error::InvalidConfig(format!(
                "streaming needs {} bins, model has {}",
                config.bins(),
                model.config.freq_bins
            )));
        }
        Ok(Self {
            model,
            engine: StftEngine::new(config)?,
            state: StreamState::new(model),
        })
    }

    pub fn state(&self) -> &StreamState<T> {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    /// Feeds any number of samples; returns the enhanced samples that became final.
    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        if self.state.flushed {
            return Err(Error::InvalidConfig("stream already flushed; call reset".into()));
        }
        let mut out = Vec::new();
        for &v in samples {
            self.state.pending.push(v);
            if self.state.pending.len() == HOP {
                let hop = std::mem::take(&mut self.state.pending);
                self.push_hop(&hop, &mut out)?;
                self.state.pending = hop;
                self.state.pending.clear();
            }
        }
        Ok(out)
    }

    fn push_hop(&mut self, hop: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let st = &mut self.state;
        st.window.copy_within(HOP.., 0);
        let w = st.window.len();
        st.window[w - HOP..].copy_from_slice(hop);
        let bins = self.engine.config.bins();
        let (mut re, mut im) = (vec![0.0; bins], vec![0.0; bins]);
        self.engine.analyze(&st.window, &mut re, &mut im);
        self.process_frame(Array1::from(re), Array1::from(im), out)
    }

    /// Runs the model on one analysis frame and synthesises the frame `τ` back.
    fn process_frame(&mut self, re: Array1<f64>, im: Array1<f64>, out: &mut Vec<f64>) -> Result<()> {
        let tau = self.model.config.tau;
        let st = &mut self.state;
        let depth = tau + 1;
        let slot = st.frames_seen % depth;
        st.delay_re.row_mut(slot).assign(&re);
        st.delay_im.row_mut(slot).assign(&im);
        let (mr, mi) = self.model.step(re.view(), im.view(), &mut st.model)?;
        st.frames_seen += 1;
        if st.frames_seen > tau {
            let target = st.frames_seen - 1 - tau;
            let comp = compression(self.model);
            let src = target % depth;
            let yr = st.delay_re.row(src);
            let yi = st.delay_im.row(src);
            let bins = yr.len();
            let mut sr = vec![0.0; bins];
            let mut si = vec![0.0; bins];
            for f in 0..bins {
                let (a, b) = (comp.decompress(mr[f]), comp.decompress(mi[f]));
                sr[f] = a * yr[f] - b * yi[f];
                si[f] = a * yi[f] + b * yr[f];
            }
            let frame = self.engine.synthesize(&sr, &si);
            self.overlap_add(&frame, out);
        }
        Ok(())
    }

    /// Adds a synthesised frame and emits the hop it completes.
    fn overlap_add(&mut self, frame: &[f64], out: &mut Vec<f64>) {
        let st = &mut self.state;
        let window = &self.engine.config.window;
        for k in 0..HOP {
            let acc = st.tail[k] + frame[k];
            let norm = st.tail_norm[k] + window[k] * window[k];
            if st.preroll > 0 {
                st.preroll -= 1;
            } else {
                out.push(normalize(acc, norm));
            }
            st.tail[k] = frame[HOP + k];
            st.tail_norm[k] = window[HOP + k] * window[HOP + k];
        }
        st.frames_synth += 1;
    }

    /// Completes the stream: zero-pads the last partial hop, adds the
    /// trailing zeros that cover it with a second window and runs `τ` zero
    /// frames through the model. Afterwards every pushed sample has been
    /// returned (plus at most one hop of padding).
    pub fn flush(&mut self) -> Result<Vec<f64>> {
        if self.state.flushed {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if !self.state.pending.is_empty() {
            let mut hop = std::mem::take(&mut self.state.pending);
            hop.resize(HOP, 0.0);
            self.push_hop(&hop, &mut out)?;
        }
        for _ in 0..self.engine.config.lead_in() / HOP {
            self.push_hop(&[0.0; HOP], &mut out)?;
        }
        let bins = self.engine.config.bins();
        for _ in 0..self.model.config.tau {
            self.process_frame(Array1::zeros(bins), Array1::zeros(bins), &mut out)?;
        }
        self.state.flushed = true;
        Ok(out)
    }
}

fn normalize(acc: f64, norm: f64) -> f64 {
    if norm > 1e-10 {
        acc / norm
    } else {
        0.0
    }
}

/// Streams `x` through the enhancer in chunks of `chunk` samples and returns
/// the output aligned with (and as long as) the input.
pub fn enhance_stream<T: Real>(model: &Model<T>, x: &[f64], chunk: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("input signal"));
    }
    let mut enh = StreamEnhancer::new(model)?;
    let mut out = Vec::with_capacity(x.len() + 2 * HOP);
    for c in x.chunks(chunk.max(1)) {
        out.extend(enh.push(c)?);
    }
    out.extend(enh.flush()?);
    out.truncate(x.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExtractorConfig, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> Model<f64> {
        let cfg = ModelConfig {
            extractor: ExtractorConfig {
                bottleneck: 16,
                ..ExtractorConfig::default()
            },
            gsub_hidden: 8,
            ..ModelConfig::default()
        };
        Model::init(&cfg, seed).unwrap()
    }

    fn signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn frame_arithmetic() {
        let c = StftConfig::default();
        assert_eq!(frames_for(1, &c), 2);
        assert_eq!(frames_for(256, &c), 2);
        assert_eq!(frames_for(257, &c), 3);
        assert_eq!(frames_for(16000, &c), 64);
        assert_eq!(algorithmic_latency(2, &c), 1024);
    }

    #[test]
    fn offline_output_length_matches_input() {
        let m = small_model(1);
        for len in [100, 512, 1000, 4000] {
            let y = enhance_offline(&m, &signal(len, 2), ForwardMode::Causal).unwrap();
            assert_eq!(y.len(), len);
        }
        assert!(enhance_offline(&m, &[], ForwardMode::Causal).is_err());
    }

    #[test]
    fn streaming_matches_offline_causal() {
        let m = small_model(3);
        let x = signal(3000, 4);
        let offline = enhance_offline(&m, &x, ForwardMode::Causal).unwrap();
        for chunk in [1, 256, 700] {
            let s = enhance_stream(&m, &x, chunk).unwrap();
            let max = s.iter().zip(&offline).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max <= 1e-9, "chunk {chunk}: {max}");
        }
    }

    #[test]
    fn output_is_emitted_with_the_stated_latency() {
        let m = small_model(8);
        let mut enh = StreamEnhancer::new(&m).unwrap();
        let latency = algorithmic_latency(m.config.tau, &StftConfig::default());
        let mut pushed = 0;
        let mut emitted = 0;
        for _ in 0..20 {
            emitted += enh.push(&signal(HOP, pushed as u64)).unwrap().len();
            pushed += HOP;
            // Sample `i` becomes available once `i + latency` samples are in.
            assert_eq!(emitted, (pushed + HOP).saturating_sub(latency));
        }
        emitted += enh.flush().unwrap().len();
        assert!(emitted >= pushed);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let m = small_model(5);
        let y = enhance_stream(&m, &vec![0.0; 2000], 256).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reset_restores_initial_state() {
        let m = small_model(6);
        let mut enh = StreamEnhancer::new(&m).unwrap();
        let fresh = enh.state().clone();
        enh.push(&signal(1500, 7)).unwrap();
        assert_ne!(enh.state(), &fresh);
        enh.reset();
        assert_eq!(enh.state(), &fresh);
    }
}
