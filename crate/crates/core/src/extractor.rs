//! Full-band feature extractor: a stack of dilated causal TCN blocks over the
//! frequency-as-channel spectrogram, followed by a dense `F → F` map.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::model::ExtractorConfig;
use crate::nn::{
    join, prelu, prelu_backward, visit_seq, visit_seq_mut, ChannelNorm, ConvHistory, Dense,
    DepthwiseConv, NormCache, NormMode, NormStream, PRelu, Params, Real,
};

const PRELU_INIT: f64 = 0.25;

/// `y = x + out(norm₂(prelu₂(dconv(norm₁(prelu₁(in(x)))))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnBlock<T> {
    pub input: Dense<T>,
    pub act1: PRelu<T>,
    pub norm1: ChannelNorm<T>,
    pub dconv: DepthwiseConv<T>,
    pub act2: PRelu<T>,
    pub norm2: ChannelNorm<T>,
    pub output: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct TcnCache<T> {
    a: Array2<T>,
    p1: Array2<T>,
    c1: NormCache<T>,
    n1: Array2<T>,
    d: Array2<T>,
    p2: Array2<T>,
    c2: NormCache<T>,
    n2: Array2<T>,
}

impl<T: Real> TcnBlock<T> {
    pub fn zeros(channels: usize, bottleneck: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            input: Dense::zeros(channels, bottleneck, true),
            act1: PRelu::new(T::of(PRELU_INIT)),
            norm1: ChannelNorm::new(bottleneck),
            dconv: DepthwiseConv::zeros(bottleneck, kernel, dilation, true),
            act2: PRelu::new(T::of(PRELU_INIT)),
            norm2: ChannelNorm::new(bottleneck),
            output: Dense::zeros(bottleneck, channels, true),
        }
    }

    pub fn init<R: Rng>(
        channels: usize,
        bottleneck: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            input: Dense::init(channels, bottleneck, true, rng),
            dconv: DepthwiseConv::init(bottleneck, kernel, dilation, true, rng),
            output: Dense::init(bottleneck, channels, true, rng),
            ..Self::zeros(channels, bottleneck, kernel, dilation)
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, mode: NormMode) -> Result<(Array2<T>, TcnCache<T>)> {
        let a = self.input.forward(x)?;
        let p1 = prelu(a.view(), self.act1.value());
        let (n1, c1) = self.norm1.forward(p1.view(), mode)?;
        let d = self.dconv.forward(n1.view())?;
        let p2 = prelu(d.view(), self.act2.value());
        let (n2, c2) = self.norm2.forward(p2.view(), mode)?;
        let y = self.output.forward(n2.view())? + x;
        Ok((
            y,
            TcnCache {
                a,
                p1,
                c1,
                n1,
                d,
                p2,
                c2,
                n2,
            },
        ))
    }

    pub fn backward(
        &self,
        x: ArrayView2<T>,
        mode: NormMode,
        cache: &TcnCache<T>,
        dy: ArrayView2<T>,
        grad: &mut TcnBlock<T>,
    ) -> Array2<T> {
        let dn2 = self
            .output
            .backward(cache.n2.view(), dy, &mut grad.output);
        let dp2 = self
            .norm2
            .backward(cache.p2.view(), mode, &cache.c2, dn2.view(), &mut grad.norm2);
        let (dd, ds2) = prelu_backward(cache.d.view(), self.act2.value(), dp2.view());
        grad.act2.slope[0] += ds2;
        let dn1 = self
            .dconv
            .backward(cache.n1.view(), dd.view(), &mut grad.dconv);
        let dp1 = self
            .norm1
            .backward(cache.p1.view(), mode, &cache.c1, dn1.view(), &mut grad.norm1);
        let (da, ds1) = prelu_backward(cache.a.view(), self.act1.value(), dp1.view());
        grad.act1.slope[0] += ds1;
        self.input.backward(x, da.view(), &mut grad.input) + dy
    }

    /// One frame of the causal block.
    pub fn step(&self, x: ArrayView1<T>, mode: NormMode, state: &mut TcnStream<T>) -> Result<Array1<T>> {
        let a = self.input.forward_vec(x)?;
        let p1 = prelu(a.view(), self.act1.value());
        let n1 = self.norm1.step(p1.view(), mode, &mut state.norm1);
        let d = self.dconv.step(n1.view(), &mut state.conv);
        let p2 = prelu(d.view(), self.act2.value());
        let n2 = self.norm2.step(p2.view(), mode, &mut state.norm2);
        Ok(self.output.forward_vec(n2.view())? + &x)
    }
}

impl<T: Real> Params<T> for TcnBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.input.visit(&join(prefix, "in"), f);
        self.act1.visit(&join(prefix, "act1"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.dconv.visit(&join(prefix, "dconv"), f);
        self.act2.visit(&join(prefix, "act2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.input.visit_mut(&join(prefix, "in"), f);
        self.act1.visit_mut(&join(prefix, "act1"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.dconv.visit_mut(&join(prefix, "dconv"), f);
        self.act2.visit_mut(&join(prefix, "act2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.output.visit_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnStream<T> {
    norm1: NormStream<T>,
    conv: ConvHistory<T>,
    norm2: NormStream<T>,
}

impl<T: Real> TcnStream<T> {
    pub fn new(block: &TcnBlock<T>) -> Self {
        Self {
            norm1: NormStream::new(),
            conv: ConvHistory::new(block.dconv.history_len(), block.dconv.channels()),
            norm2: NormStream::new(),
        }
    }

    pub fn reset(&mut self) {
        self.norm1 = NormStream::new();
        self.conv.reset();
        self.norm2 = NormStream::new();
    }

    /// Number of stored scalars (each norm keeps two sums and a count).
    pub fn scalars(&self) -> usize {
        self.conv.scalars() + 6
    }
}

/// TCN stack plus the final dense projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T> {
    pub blocks: Vec<TcnBlock<T>>,
    pub dense: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct ExtractorCache<T> {
    inputs: Vec<Array2<T>>,
    blocks: Vec<TcnCache<T>>,
    last: Array2<T>,
}

impl<T: Real> Extractor<T> {
    pub fn zeros(cfg: &ExtractorConfig, channels: usize) -> Self {
        Self {
            blocks: cfg
                .block_dilations()
                .into_iter()
                .map(|d| TcnBlock::zeros(channels, cfg.bottleneck, cfg.kernel, d))
                .collect(),
            dense: Dense::zeros(channels, channels, true),
        }
    }

    pub fn init<R: Rng>(cfg: &ExtractorConfig, channels: usize, rng: &mut R) -> Self {
        let blocks = cfg
            .block_dilations()
            .into_iter()
            .map(|d| TcnBlock::init(channels, cfg.bottleneck, cfg.kernel, d, rng))
            .collect();
        Self {
            blocks,
            dense: Dense::init(channels, channels, true, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.dense.output_dim()
    }

    fn check(&self, rows: usize) -> Result<()> {
        if rows != self.channels() {
            return Err(shape_err(format!(
                "extractor expects {} channels, input has {rows}",
                self.channels()
            )));
        }
        Ok(())
    }

    /// `x: F × T → F × T`; `cache` is kept only when requested.
    pub fn forward(
        &self,
        x: ArrayView2<T>,
        mode: NormMode,
        keep_cache: bool,
    ) -> Result<(Array2<T>, Option<ExtractorCache<T>>)> {
        self.check(x.nrows())?;
        let mut h = x.to_owned();
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        for block in &self.blocks {
            let (y, c) = block.forward(h.view(), mode)?;
            if keep_cache {
                inputs.push(h);
                caches.push(c);
            }
            h = y;
        }
        let out = self.dense.forward(h.view())?;
        Ok((
            out,
            keep_cache.then(|| ExtractorCache {
                inputs,
                blocks: caches,
                last: h,
            }),
        ))
    }

    pub fn backward(
        &self,
        mode: NormMode,
        cache: &ExtractorCache<T>,
        dy: ArrayView2<T>,
        grad: &mut Extractor<T>,
    ) -> Array2<T> {
        let mut g = self.dense.backward(cache.last.view(), dy, &mut grad.dense);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            g = block.backward(
                cache.inputs[i].view(),
                mode,
                &cache.blocks[i],
                g.view(),
                &mut grad.blocks[i],
            );
        }
        g
    }

    pub fn step(&self, x: ArrayView1<T>, mode: NormMode, state: &mut ExtractorStream<T>) -> Result<Array1<T>> {
        self.check(x.len())?;
        let mut h = x.to_owned();
        for (block, s) in self.blocks.iter().zip(&mut state.blocks) {
            h = block.step(h.view(), mode, s)?;
        }
        self.dense.forward_vec(h.view())
    }
}

impl<T: Real> Params<T> for Extractor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_seq(&join(prefix, "block"), &self.blocks, f);
        self.dense.visit(&join(prefix, "dense"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_seq_mut(&join(prefix, "block"), &mut self.blocks, f);
        self.dense.visit_mut(&join(prefix, "dense"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorStream<T> {
    blocks: Vec<TcnStream<T>>,
}

impl<T: Real> ExtractorStream<T> {
    pub fn new(extractor: &Extractor<T>) -> Self {
        Self {
            blocks: extractor.blocks.iter().map(TcnStream::new).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.blocks.iter_mut().for_each(TcnStream::reset);
    }

    pub fn scalars(&self) -> usize {
        self.blocks.iter().map(TcnStream::scalars).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ExtractorConfig {
        ExtractorConfig {
            bottleneck: 12,
            ..ExtractorConfig::default()
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn randomized(channels: usize, seed: u64) -> Extractor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Extractor::init(&small_cfg(), channels, &mut rng);
        e.visit_mut("", &mut |_, _, v| {
            v.iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2))
        });
        e
    }

    #[test]
    fn block_count_and_dilations() {
        let e = Extractor::<f64>::zeros(&ExtractorConfig::default(), 257);
        let d: Vec<usize> = e.blocks.iter().map(|b| b.dconv.dilation).collect();
        assert_eq!(d, vec![1, 2, 5, 9, 1, 2, 5, 9]);
    }

    #[test]
    fn block_parameter_count_matches_formula() {
        let (f, b, k) = (257usize, 512usize, 3usize);
        let block = TcnBlock::<f64>::zeros(f, b, k, 1);
        // in (F·B + B), two PReLU slopes, two norms (2B each), dconv (K·B + B), out (B·F + F).
        let expect = f * b + b + 2 + 4 * b + k * b + b + b * f + f;
        assert_eq!(count_params(&block), expect);
    }

    #[test]
    fn causality_of_causal_stack() {
        let e = randomized(10, 1);
        let x = random(10, 90, 2);
        let (y, _) = e.forward(x.view(), NormMode::Cumulative, false).unwrap();
        let t0 = 40;
        let mut x2 = x.clone();
        for t in t0..90 {
            for f in 0..10 {
                x2[[f, t]] += 3.0;
            }
        }
        let (y2, _) = e.forward(x2.view(), NormMode::Cumulative, false).unwrap();
        for t in 0..t0 {
            for f in 0..10 {
                assert_eq!(y[[f, t]], y2[[f, t]]);
            }
        }
    }

    #[test]
    fn receptive_field_with_per_frame_norm() {
        let e = randomized(10, 3);
        let rf = small_cfg().receptive_field();
        assert_eq!(rf, 69);
        let x = random(10, 150, 4);
        let (y, _) = e.forward(x.view(), NormMode::PerFrame, false).unwrap();
        let t = 120;
        // A change just outside the window leaves frame t untouched ...
        let mut far = x.clone();
        far[[3, t - rf]] += 5.0;
        let (yf, _) = e.forward(far.view(), NormMode::PerFrame, false).unwrap();
        assert_eq!(y.column(t), yf.column(t));
        // ... while one at the oldest visible frame does not.
        let mut near = x.clone();
        near[[3, t - rf + 1]] += 5.0;
        let (yn, _) = e.forward(near.view(), NormMode::PerFrame, false).unwrap();
        let diff: f64 = y
            .column(t)
            .iter()
            .zip(yn.column(t))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn step_matches_batch() {
        let e = randomized(10, 5);
        let x = random(10, 30, 6);
        for mode in [NormMode::Cumulative, NormMode::PerFrame] {
            let (y, _) = e.forward(x.view(), mode, false).unwrap();
            let mut state = ExtractorStream::new(&e);
            for t in 0..30 {
                let col = e.step(x.column(t), mode, &mut state).unwrap();
                for f in 0..10 {
                    assert!((col[f] - y[[f, t]]).abs() < 1e-12, "{mode:?} t={t}");
                }
            }
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let e = randomized(10, 7);
        assert!(e.forward(random(9, 5, 8).view(), NormMode::Cumulative, false).is_err());
    }
}
