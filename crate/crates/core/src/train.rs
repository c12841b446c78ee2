//! Adam training on dynamically mixed synthetic (or user-provided) data.
//!
//! Every random choice of an epoch (clip order, sampled sub-band sequences)
//! comes from a generator seeded by `(seed, epoch)`, so a run resumed from a
//! checkpoint continues exactly as an uninterrupted one would.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array3;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasim::{make_training_pair, DataSource, MixSpec};
use crate::dsp::{istft_padded, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::model::checkpoint::Checkpoint;
use crate::model::{cirm_target, mask_loss, CirmMask, Compression, Model, ModelConfig};
use crate::nn::{fill_params, Adam, AdamConfig, Params};
use crate::stream::enhance_spectrogram;

const VALID_STREAM: u64 = 0x7661_6c69_64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_clips: usize,
    pub valid_clips: usize,
    /// Clips per optimizer step.
    pub batch_size: usize,
    /// Sub-band sequences sampled per clip for the LSTM part of each step;
    /// `None` trains on every bin.
    pub subband_bins: Option<usize>,
    pub adam: AdamConfig,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Draw fresh mixtures every epoch instead of reusing a fixed set.
    pub dynamic_mixing: bool,
    /// Validate after every this many epochs (and never when zero); the
    /// validation fields of other epochs' reports are NaN.
    pub valid_every: usize,
    /// Directory receiving `epoch_NNN.ckpt` and `latest.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_clips: 200,
            valid_clips: 20,
            batch_size: 4,
            subband_bins: Some(64),
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            dynamic_mixing: false,
            valid_every: 1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Applies recognised `key=value` settings; returns the unrecognised keys.
    ///
    /// `subband_bins` and `clip_norm` accept `none` (or `0`) to disable them.
    pub fn apply_kv(&mut self, pairs: &BTreeMap<String, String>) -> Result<Vec<String>> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{k}`")))
        }
        fn optional<V: std::str::FromStr + PartialEq + Default>(k: &str, v: &str) -> Result<Option<V>> {
            if v.eq_ignore_ascii_case("none") {
                return Ok(None);
            }
            let x: V = num(k, v)?;
            Ok((x != V::default()).then_some(x))
        }
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match k.as_str() {
                "seed" => self.seed = num(k, v)?,
                "train_clips" => self.train_clips = num(k, v)?,
                "valid_clips" => self.valid_clips = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "subband_bins" => self.subband_bins = optional(k, v)?,
                "lr" => self.adam.lr = num(k, v)?,
                "beta1" => self.adam.beta1 = num(k, v)?,
                "beta2" => self.adam.beta2 = num(k, v)?,
                "adam_eps" => self.adam.eps = num(k, v)?,
                "clip_norm" => self.clip_norm = optional(k, v)?,
                "dynamic_mixing" => self.dynamic_mixing = num(k, v)?,
                "valid_every" => self.valid_every = num(k, v)?,
                _ => unknown.push(k.clone()),
            }
        }
        Ok(unknown)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Mean SI-SDR of the unprocessed validation mixtures.
    pub noisy_si_sdr: f64,
    /// Mean SI-SDR of the enhanced validation mixtures.
    pub enhanced_si_sdr: f64,
    pub seconds: f64,
}

impl std::fmt::Display for EpochReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} valid_loss={:.6} si_sdr_noisy={:.3} si_sdr_enhanced={:.3} seconds={:.1}",
            self.epoch,
            self.train_loss,
            self.valid_loss,
            self.noisy_si_sdr,
            self.enhanced_si_sdr,
            self.seconds
        )
    }
}

/// Noisy spectrogram and compressed target for one training clip.
#[derive(Clone, Debug)]
struct Example {
    noisy: ComplexSpectrogram,
    target: CirmMask,
}

#[derive(Clone, Debug)]
struct ValidExample {
    noisy: ComplexSpectrogram,
    target: CirmMask,
    noisy_wave: Vec<f64>,
    clean_wave: Vec<f64>,
}

pub struct Trainer {
    pub model: Model<f64>,
    pub optimizer: Adam,
    pub config: TrainConfig,
    /// Epochs completed so far.
    pub epoch: usize,
    source: DataSource,
    train_set: Vec<Example>,
    valid_set: Vec<ValidExample>,
}

fn compression(cfg: &ModelConfig) -> Compression {
    Compression {
        k: cfg.cirm_k,
        c: cfg.cirm_c,
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, config: TrainConfig, source: DataSource) -> Result<Self> {
        let model = Model::init(model_cfg, config.seed)?;
        let optimizer = Adam::new(config.adam, &model);
        Self::with_state(model, optimizer, 0, config, source)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: Checkpoint, config: TrainConfig, source: DataSource) -> Result<Self> {
        let epoch = ck
            .meta
            .get("epoch")
            .map(|e| e.parse::<usize>())
            .transpose()
            .map_err(|_| Error::Checkpoint("bad epoch entry".into()))?
            .unwrap_or(0);
        let optimizer = ck
            .optimizer
            .clone()
            .unwrap_or_else(|| Adam::new(config.adam, &ck.model));
        Self::with_state(ck.model, optimizer, epoch, config, source)
    }

    fn with_state(
        model: Model<f64>,
        optimizer: Adam,
        epoch: usize,
        config: TrainConfig,
        source: DataSource,
    ) -> Result<Self> {
        if config.train_clips == 0 {
            return Err(Error::Empty("training set"));
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if model.config.t_train <= model.config.tau {
            return Err(Error::InvalidConfig("t_train must exceed tau".into()));
        }
        let mut trainer = Self {
            model,
            optimizer,
            config,
            epoch,
            source,
            train_set: Vec::new(),
            valid_set: Vec::new(),
        };
        trainer.valid_set = trainer.build_valid()?;
        if !trainer.config.dynamic_mixing {
            trainer.train_set = trainer.build_train(0)?;
        }
        Ok(trainer)
    }

    fn example(&self, spec: &MixSpec) -> Result<(Example, Vec<f64>, Vec<f64>)> {
        let pair = make_training_pair(spec, &self.source, self.model.config.t_train)?;
        let target = cirm_target(&pair.noisy, &pair.clean, compression(&self.model.config))?;
        Ok((
            Example {
                noisy: pair.noisy,
                target,
            },
            pair.noisy_wave,
            pair.clean_wave,
        ))
    }

    fn build_train(&self, round: u64) -> Result<Vec<Example>> {
        let base = self.config.seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        (0..self.config.train_clips as u64)
            .map(|i| Ok(self.example(&MixSpec::draw(base, i))?.0))
            .collect()
    }

    fn build_valid(&self) -> Result<Vec<ValidExample>> {
        (0..self.config.valid_clips as u64)
            .map(|i| {
                let (ex, noisy_wave, clean_wave) =
                    self.example(&MixSpec::draw(self.config.seed ^ VALID_STREAM, i))?;
                Ok(ValidExample {
                    noisy: ex.noisy,
                    target: ex.target,
                    noisy_wave,
                    clean_wave,
                })
            })
            .collect()
    }

    /// Loss and parameter gradient for one clip, using the sub-band
    /// sequences of `bins` only. The gradient is scaled by `weight`.
    fn clip_gradient(
        &self,
        ex: &Example,
        bins: &[usize],
        weight: f64,
        grad: &mut Model<f64>,
    ) -> Result<f64> {
        let tau = self.model.config.tau;
        let (pred, cache) = self.model.forward_train(&ex.noisy, self.model.config.mode, bins)?;
        let (frames, sel, _) = pred.dim();
        let count = (2 * sel * (frames - tau)) as f64;
        let mut d = Array3::zeros(pred.dim());
        let mut loss = 0.0;
        for (b, &f) in bins.iter().enumerate() {
            for t in tau..frames {
                let er = pred[[t, b, 0]] - ex.target.mr[[f, t - tau]];
                let ei = pred[[t, b, 1]] - ex.target.mi[[f, t - tau]];
                loss += er * er + ei * ei;
                d[[t, b, 0]] = 2.0 * er / count * weight;
                d[[t, b, 1]] = 2.0 * ei / count * weight;
            }
        }
        self.model.backward(&cache, d.view(), grad);
        Ok(loss / count)
    }

    /// Model-shaped accumulator with every entry zero. (`Model::zeros`
    /// is not one: it keeps unit norm gains and the PReLU start slope.)
    fn zero_grad(&self) -> Model<f64> {
        let mut g = self.model.clone();
        fill_params(&mut g, 0.0);
        g
    }

    fn sample_bins(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let f = self.model.config.freq_bins;
        match self.config.subband_bins {
            Some(k) if k < f => {
                let mut v = index::sample(rng, f, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..f).collect(),
        }
    }

    fn clip_gradients(&self, grad: &mut Model<f64>) {
        let Some(limit) = self.config.clip_norm else {
            return;
        };
        let mut sq = 0.0;
        grad.visit("", &mut |_, _, v| sq += v.iter().map(|g| g * g).sum::<f64>());
        let norm = sq.sqrt();
        if norm > limit {
            let s = limit / norm;
            grad.visit_mut("", &mut |_, _, v| v.iter_mut().for_each(|g| *g *= s));
        }
    }

    /// Runs one epoch and writes checkpoints if a directory is configured.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let start = Instant::now();
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        if self.config.dynamic_mixing {
            self.train_set = self.build_train(self.epoch as u64 + 1)?;
        }
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut grad = self.zero_grad();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let bins = self.sample_bins(&mut rng);
                total += self.clip_gradient(&self.train_set[i], &bins, weight, &mut grad)?;
            }
            self.clip_gradients(&mut grad);
            self.optimizer.update(&mut self.model, &grad);
        }
        let train_loss = total / self.train_set.len() as f64;
        self.epoch += 1;
        let every = self.config.valid_every;
        let (valid_loss, noisy_si_sdr, enhanced_si_sdr) = if every > 0 && self.epoch % every == 0 {
            self.validate()?
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        let report = EpochReport {
            epoch: self.epoch,
            train_loss,
            valid_loss,
            noisy_si_sdr,
            enhanced_si_sdr,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &self.config.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let ck = self.checkpoint();
            ck.save(dir.join(format!("epoch_{:03}.ckpt", self.epoch)))?;
            ck.save(dir.join("latest.ckpt"))?;
        }
        Ok(report)
    }

    pub fn train(&mut self, epochs: usize) -> Result<Vec<EpochReport>> {
        (0..epochs).map(|_| self.run_epoch()).collect()
    }

    /// Mean validation loss (all bins) and mean SI-SDR before/after enhancement.
    pub fn validate(&self) -> Result<(f64, f64, f64)> {
        if self.valid_set.is_empty() {
            return Ok((f64::NAN, f64::NAN, f64::NAN));
        }
        let mode = self.model.config.mode;
        let (mut loss, mut noisy, mut enhanced) = (0.0, 0.0, 0.0);
        for ex in &self.valid_set {
            let pred = self.model.forward(&ex.noisy, mode)?;
            loss += mask_loss(&pred, &ex.target, self.model.config.tau)?;
            let enh = enhance_spectrogram(&self.model, &ex.noisy, mode)?;
            let wave = istft_padded(&enh, ex.clean_wave.len())?;
            noisy += si_sdr(&ex.noisy_wave, &ex.clean_wave)?;
            enhanced += si_sdr(&wave, &ex.clean_wave)?;
        }
        let n = self.valid_set.len() as f64;
        Ok((loss / n, noisy / n, enhanced / n))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone());
        ck.step = self.optimizer.step;
        ck.optimizer = Some(self.optimizer.clone());
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck.meta.insert("seed".into(), self.config.seed.to_string());
        ck
    }
}

/// Trains a fresh model for `epochs` epochs.
pub fn train(
    model_cfg: &ModelConfig,
    config: TrainConfig,
    source: DataSource,
    epochs: usize,
) -> Result<(Checkpoint, Vec<EpochReport>)> {
    let mut trainer = Trainer::new(model_cfg, config, source)?;
    let reports = trainer.train(epochs)?;
    Ok((trainer.checkpoint(), reports))
}

/// Reduced configuration used for desk-scale training runs: narrower TCN
/// blocks and sub-band LSTM, two-second segments, causal input scaling.
pub fn toy_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.extractor.bottleneck = 64;
    cfg.gsub_hidden = 128;
    cfg.t_train = 126;
    cfg.input_norm = true;
    cfg
}

/// Epochs of the desk-scale run; with [`toy_train_config`] it fits in half
/// an hour on one desktop core.
pub const TOY_EPOCHS: usize = 16;

/// Training settings for the desk-scale run: a fixed set of 200 synthetic
/// two-second mixtures and 20 held-out ones, 16 sampled sub-band sequences
/// per clip and no intermediate validation.
pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        train_clips: 200,
        valid_clips: 20,
        batch_size: 2,
        subband_bins: Some(16),
        valid_every: 0,
        ..TrainConfig::default()
    }
}

/// Convenience for tests: stacks a mask into the `T × S × 2` training layout.
pub fn mask_to_prediction(mask: &CirmMask, bins: &[usize]) -> Array3<f64> {
    let frames = mask.dim().1;
    let mut out = Array3::zeros((frames, bins.len(), 2));
    for (b, &f) in bins.iter().enumerate() {
        for t in 0..frames {
            out[[t, b, 0]] = mask.mr[[f, t]];
            out[[t, b, 1]] = mask.mi[[f, t]];
        }
    }
    out
}
