//! End-to-end mask estimator: spectrogram decomposition, per-branch channel
//! attention and full-band extraction, sub-band LSTM prediction.

pub mod checkpoint;
mod cirm;
mod config;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cirm::{apply_mask, cirm_raw, cirm_target, mask_loss, CirmMask, Compression};
pub use config::{parse_kv, ExtractorConfig, ForwardMode, ModelConfig, MulcaConfig};

use crate::dsp::ComplexSpectrogram;
use crate::error::{shape_err, Error, Result};
use crate::extractor::{Extractor, ExtractorCache, ExtractorStream};
use crate::mulca::{apply_weights, apply_weights_backward, Mulca, MulcaCache, MulcaStream};
use crate::nn::{copy_params, join, Params, Real};
use crate::subband::{
    gather_inputs, gather_inputs_backward, split_mask, Gsub, GsubCache, GsubStream,
};

/// Branch names in processing order: magnitude, real part, imaginary part.
pub const BRANCHES: [&str; 3] = ["mag", "real", "imag"];
const INPUT_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    /// One attention module per active branch; empty when attention is disabled.
    pub mulca: Vec<Mulca<T>>,
    /// One extractor per active branch (magnitude only without phase branches).
    pub extractors: Vec<Extractor<T>>,
    pub gsub: Gsub<T>,
}

/// Activations kept by [`Model::forward_train`].
#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    mode: ForwardMode,
    inputs: Vec<Array2<T>>,
    weights: Vec<(Array2<T>, MulcaCache<T>)>,
    extractors: Vec<ExtractorCache<T>>,
    gsub: GsubCache<T>,
    bins: Vec<usize>,
}

impl<T: Real> Model<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let f = config.freq_bins;
        let branches = config.branch_count();
        let mulca = if config.use_mulca {
            (0..branches).map(|_| Mulca::zeros(&config.mulca, f)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config: config.clone(),
            mulca,
            extractors: (0..branches)
                .map(|_| Extractor::zeros(&config.extractor, f))
                .collect(),
            gsub: Gsub::zeros(config.subband_features(), config.gsub_hidden),
        })
    }

    /// Randomly initialised parameters; a pure function of `(config, seed)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.freq_bins;
        let branches = config.branch_count();
        let mulca = if config.use_mulca {
            (0..branches)
                .map(|_| Mulca::init(&config.mulca, f, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let extractors = (0..branches)
            .map(|_| Extractor::init(&config.extractor, f, &mut rng))
            .collect();
        Ok(Self {
            config: config.clone(),
            mulca,
            extractors,
            gsub: Gsub::init(config.subband_features(), config.gsub_hidden, &mut rng),
        })
    }

    /// Same parameters in another scalar type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::zeros(&self.config).expect("config was validated");
        copy_params(self, &mut out);
        out
    }

    /// Parameter counts per top-level module, in visiting order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        self.visit("", &mut |name, _, v| {
            let parts: Vec<&str> = name.split('.').collect();
            let key = parts[..2.min(parts.len())].join(".");
            match out.last_mut() {
                Some((k, n)) if *k == key => *n += v.len(),
                _ => out.push((key, v.len())),
            }
        });
        out
    }

    fn check_input(&self, noisy: &ComplexSpectrogram) -> Result<()> {
        if noisy.bins() != self.config.freq_bins {
            return Err(Error::InvalidConfig(format!(
                "model expects {} bins, spectrogram has {}",
                self.config.freq_bins,
                noisy.bins()
            )));
        }
        if noisy.frames() == 0 {
            return Err(shape_err("spectrogram has no frames"));
        }
        Ok(())
    }

    /// Branch inputs `X^m, X^r, X^i` (only the active ones), optionally
    /// divided by the running (causal) or overall (offline) mean magnitude.
    pub fn branch_inputs(&self, noisy: &ComplexSpectrogram, mode: ForwardMode) -> Vec<Array2<T>> {
        let mag = noisy.magnitude();
        let (bins, frames) = mag.dim();
        let mut scale = vec![1.0; frames];
        if self.config.input_norm {
            let col_sums: Vec<f64> = (0..frames).map(|t| mag.column(t).sum()).collect();
            match mode {
                ForwardMode::Causal => {
                    let mut acc = 0.0;
                    for t in 0..frames {
                        acc += col_sums[t];
                        scale[t] = 1.0 / (acc / (bins * (t + 1)) as f64 + INPUT_NORM_EPS);
                    }
                }
                ForwardMode::Offline => {
                    let mean = col_sums.iter().sum::<f64>() / (bins * frames) as f64;
                    scale.fill(1.0 / (mean + INPUT_NORM_EPS));
                }
            }
        }
        let sources = [&mag, &noisy.re, &noisy.im];
        sources[..self.config.branch_count()]
            .iter()
            .map(|src| Array2::from_shape_fn((bins, frames), |(f, t)| T::of(src[[f, t]] * scale[t])))
            .collect()
    }

    /// Compressed mask for every frame; output frame `t` estimates input
    /// frame `t − τ`.
    pub fn forward(&self, noisy: &ComplexSpectrogram, mode: ForwardMode) -> Result<CirmMask> {
        self.check_input(noisy)?;
        let all: Vec<usize> = (0..self.config.freq_bins).collect();
        let (y, _) = self.run(noisy, mode, &all, false)?;
        let (mr, mi) = split_mask(y.view());
        Ok(CirmMask {
            mr: mr.mapv(|v| v.to_f64().unwrap()),
            mi: mi.mapv(|v| v.to_f64().unwrap()),
        })
    }

    /// Forward pass for training restricted to the sub-band sequences of
    /// `bins`. Returns the `T × |bins| × 2` prediction and the cache.
    pub fn forward_train(
        &self,
        noisy: &ComplexSpectrogram,
        mode: ForwardMode,
        bins: &[usize],
    ) -> Result<(Array3<T>, ModelCache<T>)> {
        self.check_input(noisy)?;
        if bins.iter().any(|&b| b >= self.config.freq_bins) {
            return Err(shape_err("selected bin out of range"));
        }
        let (y, cache) = self.run(noisy, mode, bins, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    fn run(
        &self,
        noisy: &ComplexSpectrogram,
        mode: ForwardMode,
        bins: &[usize],
        keep: bool,
    ) -> Result<(Array3<T>, Option<ModelCache<T>>)> {
        let cfg = &self.config;
        let inputs = self.branch_inputs(noisy, mode);
        let mut weights = Vec::new();
        let mut weighted = Vec::with_capacity(inputs.len());
        for (b, x) in inputs.iter().enumerate() {
            if let Some(att) = self.mulca.get(b) {
                let (w, c) = att.forward(x.view(), mode.pool_mode())?;
                weighted.push(apply_weights(x.view(), w.view())?);
                if keep {
                    weights.push((w, c));
                }
            } else {
                weighted.push(x.clone());
            }
        }
        let mut psi = Vec::with_capacity(3);
        let mut caches = Vec::new();
        for (ext, xw) in self.extractors.iter().zip(&weighted) {
            let (p, c) = ext.forward(xw.view(), mode.norm_mode(), keep)?;
            psi.push(p);
            caches.extend(c);
        }
        while psi.len() < 3 {
            psi.push(Array2::zeros(inputs[0].dim()));
        }
        let x = gather_inputs(
            weighted[0].view(),
            [psi[0].view(), psi[1].view(), psi[2].view()],
            cfg.subband_n,
            bins,
        )?;
        let (y, gcache) = self.gsub.forward(x.view(), keep)?;
        let cache = gcache.map(|gsub| ModelCache {
            mode,
            inputs,
            weights,
            extractors: caches,
            gsub,
            bins: bins.to_vec(),
        });
        Ok((y, cache))
    }

    /// Accumulates parameter gradients for `d_pred`, the loss gradient with
    /// respect to the prediction returned by [`Model::forward_train`].
    pub fn backward(&self, cache: &ModelCache<T>, d_pred: ArrayView3<T>, grad: &mut Model<T>) {
        let cfg = &self.config;
        let d_in = self.gsub.backward(&cache.gsub, d_pred, &mut grad.gsub);
        let (d_xm, d_psi) =
            gather_inputs_backward(d_in.view(), cfg.freq_bins, cfg.subband_n, &cache.bins);
        let norm = cache.mode.norm_mode();
        for b in (0..self.extractors.len()).rev() {
            let mut d_xw = self.extractors[b].backward(
                norm,
                &cache.extractors[b],
                d_psi[b].view(),
                &mut grad.extractors[b],
            );
            if b == 0 {
                d_xw += &d_xm;
            }
            if let Some(att) = self.mulca.get(b) {
                let (w, mc) = &cache.weights[b];
                let x = &cache.inputs[b];
                let d_w = apply_weights_backward(x.view(), w.ncols(), d_xw.view());
                att.backward(x.view(), cache.mode.pool_mode(), mc, d_w.view(), &mut grad.mulca[b]);
            }
        }
    }

    /// Advances the causal model by one spectrogram frame and returns the
    /// compressed mask `(mr, mi)` for the frame `τ` steps back.
    pub fn step(
        &self,
        re: ArrayView1<f64>,
        im: ArrayView1<f64>,
        state: &mut ModelStream<T>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let cfg = &self.config;
        let bins = cfg.freq_bins;
        if re.len() != bins || im.len() != bins {
            return Err(shape_err(format!("frame has {} bins, model expects {bins}", re.len())));
        }
        let mag: Array1<f64> = re.iter().zip(im).map(|(r, i)| (r * r + i * i).sqrt()).collect();
        let mut scale = 1.0;
        if cfg.input_norm {
            state.mag_sum += mag.sum();
            state.frames += 1;
            scale = 1.0 / (state.mag_sum / (bins * state.frames) as f64 + INPUT_NORM_EPS);
        }
        let sources = [&mag, &re.to_owned(), &im.to_owned()];
        let mut weighted: Vec<Array2<T>> = Vec::with_capacity(3);
        let mut psi: Vec<Array2<T>> = Vec::with_capacity(3);
        for b in 0..cfg.branch_count() {
            let x: Array1<T> = sources[b].mapv(|v| T::of(v * scale));
            let xw = match self.mulca.get(b) {
                Some(att) => {
                    let w = att.step(x.view(), &mut state.mulca[b])?;
                    &x * &w
                }
                None => x,
            };
            let p = self.extractors[b].step(
                xw.view(),
                ForwardMode::Causal.norm_mode(),
                &mut state.extractors[b],
            )?;
            weighted.push(xw.insert_axis(Axis(1)));
            psi.push(p.insert_axis(Axis(1)));
        }
        while psi.len() < 3 {
            psi.push(Array2::zeros((bins, 1)));
        }
        let x = gather_inputs(
            weighted[0].view(),
            [psi[0].view(), psi[1].view(), psi[2].view()],
            cfg.subband_n,
            &state.all_bins,
        )?;
        let y = self.gsub.step(x.index_axis(Axis(0), 0), &mut state.gsub)?;
        Ok((
            y.column(0).mapv(|v| v.to_f64().unwrap()),
            y.column(1).mapv(|v| v.to_f64().unwrap()),
        ))
    }
}

impl<T: Real> Params<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (m, name) in self.mulca.iter().zip(BRANCHES) {
            m.visit(&join(prefix, &format!("mulca_{name}")), f);
        }
        for (e, name) in self.extractors.iter().zip(BRANCHES) {
            e.visit(&join(prefix, &format!("extractor_{name}")), f);
        }
        self.gsub.visit(&join(prefix, "gsub"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (m, name) in self.mulca.iter_mut().zip(BRANCHES) {
            m.visit_mut(&join(prefix, &format!("mulca_{name}")), f);
        }
        for (e, name) in self.extractors.iter_mut().zip(BRANCHES) {
            e.visit_mut(&join(prefix, &format!("extractor_{name}")), f);
        }
        self.gsub.visit_mut(&join(prefix, "gsub"), f);
    }
}

/// Recurrent state of the causal model for one stream. Its size depends only
/// on the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStream<T> {
    mulca: Vec<MulcaStream<T>>,
    extractors: Vec<ExtractorStream<T>>,
    gsub: GsubStream<T>,
    mag_sum: f64,
    frames: usize,
    all_bins: Vec<usize>,
}

impl<T: Real> ModelStream<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            mulca: model.mulca.iter().map(MulcaStream::new).collect(),
            extractors: model.extractors.iter().map(ExtractorStream::new).collect(),
            gsub: GsubStream::new(&model.gsub, model.config.freq_bins),
            mag_sum: 0.0,
            frames: 0,
            all_bins: (0..model.config.freq_bins).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.mulca.iter_mut().for_each(MulcaStream::reset);
        self.extractors.iter_mut().for_each(ExtractorStream::reset);
        self.gsub.reset();
        self.mag_sum = 0.0;
        self.frames = 0;
    }

    /// Number of stored scalars, including the input-normalisation sums.
    pub fn scalars(&self) -> usize {
        self.mulca.iter().map(MulcaStream::scalars).sum::<usize>()
            + self.extractors.iter().map(ExtractorStream::scalars).sum::<usize>()
            + self.gsub.scalars()
            + self.all_bins.len()
            + 2
    }
}
