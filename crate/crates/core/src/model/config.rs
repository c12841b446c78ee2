use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{NormMode, PoolMode};

/// Offline mode normalizes and pools over the whole utterance; causal mode
/// uses running statistics so every output depends only on past frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Offline,
    Causal,
}

impl ForwardMode {
    pub fn norm_mode(self) -> NormMode {
        match self {
            ForwardMode::Offline => NormMode::Global,
            ForwardMode::Causal => NormMode::Cumulative,
        }
    }

    pub fn pool_mode(self) -> PoolMode {
        match self {
            ForwardMode::Offline => PoolMode::Utterance,
            ForwardMode::Causal => PoolMode::Cumulative,
        }
    }
}

impl FromStr for ForwardMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Self::Offline),
            "causal" => Ok(Self::Causal),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ForwardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ForwardMode::Offline => "offline",
            ForwardMode::Causal => "causal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MulcaConfig {
    /// Small, middle and large temporal kernel sizes.
    pub kernels: [usize; 3],
    /// Squeeze ratio of the two weight-producing dense layers.
    pub reduction: usize,
    /// Fuse with a dense `3F → F` map instead of a shared per-bin `3 → 1` map.
    pub full_fusion: bool,
}

impl Default for MulcaConfig {
    fn default() -> Self {
        Self {
            kernels: [3, 5, 10],
            reduction: 8,
            full_fusion: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub groups: usize,
    pub kernel: usize,
    /// Dilations of the blocks within one group.
    pub dilations: Vec<usize>,
    /// Channels inside each TCN block.
    pub bottleneck: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            groups: 2,
            kernel: 3,
            dilations: vec![1, 2, 5, 9],
            bottleneck: 512,
        }
    }
}

impl ExtractorConfig {
    /// Dilation of every block in application order.
    pub fn block_dilations(&self) -> Vec<usize> {
        (0..self.groups)
            .flat_map(|_| self.dilations.iter().copied())
            .collect()
    }

    /// Number of past frames (plus the current one) visible to an output frame
    /// when the block norms are per-frame.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.block_dilations().iter().sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub freq_bins: usize,
    /// Neighbours on each side in a sub-band unit.
    pub subband_n: usize,
    /// Output delay in frames.
    pub tau: usize,
    /// Training sequence length in frames.
    pub t_train: usize,
    pub mulca: MulcaConfig,
    pub extractor: ExtractorConfig,
    pub gsub_hidden: usize,
    pub use_mulca: bool,
    pub use_phase_branches: bool,
    pub mode: ForwardMode,
    /// Divide the input spectrograms by the running mean magnitude.
    pub input_norm: bool,
    pub cirm_k: f64,
    pub cirm_c: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            freq_bins: 257,
            subband_n: 15,
            tau: 2,
            t_train: 192,
            mulca: MulcaConfig::default(),
            extractor: ExtractorConfig::default(),
            gsub_hidden: 384,
            use_mulca: true,
            use_phase_branches: true,
            mode: ForwardMode::Causal,
            input_norm: false,
            cirm_k: 10.0,
            cirm_c: 0.1,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse(key, p)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Width of each G_sub input frame: `2n + 1` neighbours plus three embeddings.
    pub fn subband_features(&self) -> usize {
        2 * self.subband_n + 4
    }

    pub fn branch_count(&self) -> usize {
        if self.use_phase_branches {
            3
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.freq_bins < 2 {
            return bad("freq_bins must be ≥ 2");
        }
        if 2 * self.subband_n + 1 > self.freq_bins {
            return bad("2·subband_n + 1 exceeds freq_bins");
        }
        if self.t_train == 0 || self.gsub_hidden == 0 {
            return bad("t_train and gsub_hidden must be positive");
        }
        if self.mulca.kernels.contains(&0) || self.mulca.reduction == 0 {
            return bad("mulca kernels and reduction must be positive");
        }
        if self.freq_bins / self.mulca.reduction == 0 {
            return bad("mulca reduction leaves no hidden units");
        }
        let e = &self.extractor;
        if e.groups == 0 || e.kernel == 0 || e.dilations.is_empty() || e.dilations.contains(&0) {
            return bad("extractor groups, kernel and dilations must be positive");
        }
        if e.bottleneck < 2 {
            return bad("extractor bottleneck must be ≥ 2");
        }
        if !(self.cirm_k > 0.0 && self.cirm_c > 0.0) {
            return bad("cirm constants must be positive");
        }
        Ok(())
    }

    /// Line-oriented `key=value` form, parsed back by [`ModelConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        put("freq_bins", self.freq_bins.to_string());
        put("subband_n", self.subband_n.to_string());
        put("tau", self.tau.to_string());
        put("t_train", self.t_train.to_string());
        put("mulca_kernels", join(&self.mulca.kernels));
        put("mulca_reduction", self.mulca.reduction.to_string());
        put("mulca_full_fusion", self.mulca.full_fusion.to_string());
        put("groups", self.extractor.groups.to_string());
        put("tcn_kernel", self.extractor.kernel.to_string());
        put("dilations", join(&self.extractor.dilations));
        put("bottleneck", self.extractor.bottleneck.to_string());
        put("gsub_hidden", self.gsub_hidden.to_string());
        put("use_mulca", self.use_mulca.to_string());
        put("use_phase_branches", self.use_phase_branches.to_string());
        put("mode", self.mode.to_string());
        put("input_norm", self.input_norm.to_string());
        put("cirm_k", self.cirm_k.to_string());
        put("cirm_c", self.cirm_c.to_string());
        s
    }

    /// Applies recognised keys from `pairs` on top of `self`; returns the
    /// keys it did not recognise.
    pub fn apply_kv(&mut self, pairs: &BTreeMap<String, String>) -> Result<Vec<String>> {
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match k.as_str() {
                "freq_bins" => self.freq_bins = parse(k, v)?,
                "subband_n" => self.subband_n = parse(k, v)?,
                "tau" => self.tau = parse(k, v)?,
                "t_train" => self.t_train = parse(k, v)?,
                "mulca_kernels" => {
                    let ks = parse_list(k, v)?;
                    self.mulca.kernels = ks.try_into().map_err(|_| {
                        Error::InvalidConfig("mulca_kernels needs exactly three sizes".into())
                    })?;
                }
                "mulca_reduction" => self.mulca.reduction = parse(k, v)?,
                "mulca_full_fusion" => self.mulca.full_fusion = parse(k, v)?,
                "groups" => self.extractor.groups = parse(k, v)?,
                "tcn_kernel" => self.extractor.kernel = parse(k, v)?,
                "dilations" => self.extractor.dilations = parse_list(k, v)?,
                "bottleneck" => self.extractor.bottleneck = parse(k, v)?,
                "gsub_hidden" => self.gsub_hidden = parse(k, v)?,
                "use_mulca" => self.use_mulca = parse(k, v)?,
                "use_phase_branches" => self.use_phase_branches = parse(k, v)?,
                "mode" => self.mode = v.trim().parse()?,
                "input_norm" => self.input_norm = parse(k, v)?,
                "cirm_k" => self.cirm_k = parse(k, v)?,
                "cirm_c" => self.cirm_c = parse(k, v)?,
                _ => unknown.push(k.clone()),
            }
        }
        self.validate()?;
        Ok(unknown)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let unknown = cfg.apply_kv(&parse_kv(text)?)?;
        if let Some(k) = unknown.first() {
            return Err(Error::InvalidConfig(format!("unknown key `{k}`")));
        }
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key=value", no + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}
