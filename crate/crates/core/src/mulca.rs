//! Multi-scale time-sensitive channel attention.
//!
//! Every frequency bin is treated as a channel. Three depthwise temporal
//! convolutions of different lengths summarize each bin, the summaries are
//! average-pooled over time, rectified and fused, and a squeeze-excitation
//! pair of dense layers turns the fused feature into a weight in `(0, 1)` per
//! bin. In utterance pooling mode one weight vector covers the whole input; in
//! cumulative mode a weight vector is produced for every frame from the
//! frames seen so far.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::model::MulcaConfig;
use crate::nn::{
    avg_pool_time, avg_pool_time_backward, relu, relu_backward, sigmoid, ConvHistory, Dense,
    DepthwiseConv, Padding, Params, PoolMode, Real,
};
use crate::nn::{join, visit_seq, visit_seq_mut};

#[derive(Clone, Debug, PartialEq)]
pub struct Mulca<T> {
    /// Small, middle and large kernels, in that order.
    pub convs: Vec<DepthwiseConv<T>>,
    pub fusion: Dense<T>,
    pub squeeze: Dense<T>,
    pub excite: Dense<T>,
    pub full_fusion: bool,
}

/// Rectified time-scale features and their fusion; `F × 1` in utterance mode,
/// `F × T` in cumulative mode.
#[derive(Clone, Debug)]
pub struct MulcaFeatures<T> {
    pub small: Array2<T>,
    pub mid: Array2<T>,
    pub large: Array2<T>,
    pub fused: Array2<T>,
}

#[derive(Clone, Debug)]
pub struct MulcaCache<T> {
    pooled: Vec<Array2<T>>,
    fusion_in: Array2<T>,
    fused: Array2<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    weights: Array2<T>,
}

impl<T: Real> MulcaCache<T> {
    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }
}

impl<T: Real> Mulca<T> {
    pub fn zeros(cfg: &MulcaConfig, freq_bins: usize) -> Self {
        let hidden = freq_bins / cfg.reduction;
        let fusion = if cfg.full_fusion {
            Dense::zeros(3 * freq_bins, freq_bins, true)
        } else {
            Dense::zeros(3, 1, true)
        };
        Self {
            convs: cfg
                .kernels
                .iter()
                .map(|&k| DepthwiseConv::zeros(freq_bins, k, 1, true))
                .collect(),
            fusion,
            squeeze: Dense::zeros(freq_bins, hidden, true),
            excite: Dense::zeros(hidden, freq_bins, true),
            full_fusion: cfg.full_fusion,
        }
    }

    pub fn init<R: Rng>(cfg: &MulcaConfig, freq_bins: usize, rng: &mut R) -> Self {
        let hidden = freq_bins / cfg.reduction;
        let fusion = if cfg.full_fusion {
            Dense::init(3 * freq_bins, freq_bins, true, rng)
        } else {
            Dense::init(3, 1, true, rng)
        };
        Self {
            convs: cfg
                .kernels
                .iter()
                .map(|&k| DepthwiseConv::init(freq_bins, k, 1, true, rng))
                .collect(),
            fusion,
            squeeze: Dense::init(freq_bins, hidden, true, rng),
            excite: Dense::init(hidden, freq_bins, true, rng),
            full_fusion: cfg.full_fusion,
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.convs[0].channels()
    }

    /// Switches the temporal convolutions between causal and circular padding.
    pub fn set_padding(&mut self, padding: Padding) {
        for c in &mut self.convs {
            c.padding = padding;
        }
    }

    fn fuse(&self, pooled: &[Array2<T>]) -> Result<(Array2<T>, Array2<T>)> {
        let (bins, cols) = pooled[0].dim();
        if self.full_fusion {
            let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
            let fusion_in = concatenate(Axis(0), &views).unwrap();
            let fused = self.fusion.forward(fusion_in.view())?;
            Ok((fusion_in, fused))
        } else {
            let mut fusion_in = Array2::zeros((3, bins * cols));
            for (k, p) in pooled.iter().enumerate() {
                fusion_in
                    .row_mut(k)
                    .assign(&p.view().into_shape(bins * cols).unwrap());
            }
            let fused = self
                .fusion
                .forward(fusion_in.view())?
                .as_standard_layout()
                .into_owned()
                .into_shape((bins, cols))
                .unwrap();
            Ok((fusion_in, fused))
        }
    }

    fn excite_from(&self, fused: &Array2<T>) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
        let hidden_pre = self.squeeze.forward(fused.view())?;
        let hidden = relu(hidden_pre.view());
        let weights = self.excite.forward(hidden.view())?.mapv(sigmoid);
        Ok((hidden_pre, hidden, weights))
    }

    fn check(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.nrows() != self.freq_bins() {
            return Err(shape_err(format!(
                "attention configured for {} bins, input has {}",
                self.freq_bins(),
                x.nrows()
            )));
        }
        Ok(())
    }

    /// Rectified pooled features and their fusion.
    pub fn features(&self, x: ArrayView2<T>, pool: PoolMode) -> Result<MulcaFeatures<T>> {
        self.check(&x)?;
        let mut rect = Vec::with_capacity(3);
        for conv in &self.convs {
            rect.push(relu(avg_pool_time(conv.forward(x)?.view(), pool).view()));
        }
        let (_, fused) = self.fuse(&rect)?;
        let mut it = rect.into_iter();
        Ok(MulcaFeatures {
            small: it.next().unwrap(),
            mid: it.next().unwrap(),
            large: it.next().unwrap(),
            fused,
        })
    }

    /// Frequency weights for `x: F × T`: `F × 1` (utterance) or `F × T` (cumulative).
    pub fn forward(&self, x: ArrayView2<T>, pool: PoolMode) -> Result<(Array2<T>, MulcaCache<T>)> {
        self.check(&x)?;
        let mut pooled = Vec::with_capacity(3);
        let mut rect = Vec::with_capacity(3);
        for conv in &self.convs {
            let p = avg_pool_time(conv.forward(x)?.view(), pool);
            rect.push(relu(p.view()));
            pooled.push(p);
        }
        let (fusion_in, fused) = self.fuse(&rect)?;
        let (hidden_pre, hidden, weights) = self.excite_from(&fused)?;
        Ok((
            weights.clone(),
            MulcaCache {
                pooled,
                fusion_in,
                fused,
                hidden_pre,
                hidden,
                weights,
            },
        ))
    }

    /// Accumulates parameter gradients from `d_weights` (same shape as the weights).
    pub fn backward(
        &self,
        x: ArrayView2<T>,
        pool: PoolMode,
        cache: &MulcaCache<T>,
        d_weights: ArrayView2<T>,
        grad: &mut Mulca<T>,
    ) {
        let one = T::one();
        let d_logits = Zip::from(&d_weights)
            .and(&cache.weights)
            .map_collect(|&g, &w| g * w * (one - w));
        let d_hidden = self
            .excite
            .backward(cache.hidden.view(), d_logits.view(), &mut grad.excite);
        let d_hidden_pre = relu_backward(cache.hidden_pre.view(), d_hidden.view());
        let d_fused =
            self.squeeze
                .backward(cache.fused.view(), d_hidden_pre.view(), &mut grad.squeeze);
        let (bins, cols) = cache.pooled[0].dim();
        let d_fusion_in = if self.full_fusion {
            self.fusion
                .backward(cache.fusion_in.view(), d_fused.view(), &mut grad.fusion)
        } else {
            let d = d_fused
                .as_standard_layout()
                .into_owned()
                .into_shape((1, bins * cols))
                .unwrap();
            self.fusion
                .backward(cache.fusion_in.view(), d.view(), &mut grad.fusion)
        };
        let frames = x.ncols();
        for (k, conv) in self.convs.iter().enumerate() {
            let d_rect = if self.full_fusion {
                d_fusion_in.slice(s![k * bins..(k + 1) * bins, ..]).to_owned()
            } else {
                d_fusion_in
                    .row(k)
                    .to_owned()
                    .into_shape((bins, cols))
                    .unwrap()
            };
            let d_pooled = relu_backward(cache.pooled[k].view(), d_rect.view());
            let d_conv = avg_pool_time_backward(d_pooled.view(), frames, pool);
            conv.backward(x, d_conv.view(), &mut grad.convs[k]);
        }
    }

    /// Weight vector for the next frame using cumulative pooling.
    pub fn step(&self, x: ArrayView1<T>, state: &mut MulcaStream<T>) -> Result<Array1<T>> {
        state.frames += 1;
        let count = T::of(state.frames as f64);
        let bins = self.freq_bins();
        let mut rect = Vec::with_capacity(3);
        for (k, conv) in self.convs.iter().enumerate() {
            let y = conv.step(x, &mut state.history[k]);
            let sums = &mut state.sums[k];
            let mut p = Array2::zeros((bins, 1));
            for f in 0..bins {
                sums[f] += y[f];
                p[[f, 0]] = sums[f] / count;
            }
            rect.push(relu(p.view()));
        }
        let (_, fused) = self.fuse(&rect)?;
        let (_, _, weights) = self.excite_from(&fused)?;
        Ok(weights.column(0).to_owned())
    }
}

impl<T: Real> Params<T> for Mulca<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_seq(&join(prefix, "conv"), &self.convs, f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.squeeze.visit(&join(prefix, "squeeze"), f);
        self.excite.visit(&join(prefix, "excite"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_seq_mut(&join(prefix, "conv"), &mut self.convs, f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.squeeze.visit_mut(&join(prefix, "squeeze"), f);
        self.excite.visit_mut(&join(prefix, "excite"), f);
    }
}

/// Per-stream state of one attention module: conv histories and running sums.
#[derive(Clone, Debug, PartialEq)]
pub struct MulcaStream<T> {
    history: Vec<ConvHistory<T>>,
    sums: Vec<Array1<T>>,
    frames: usize,
}

impl<T: Real> MulcaStream<T> {
    pub fn new(module: &Mulca<T>) -> Self {
        let bins = module.freq_bins();
        Self {
            history: module
                .convs
                .iter()
                .map(|c| ConvHistory::new(c.history_len(), bins))
                .collect(),
            sums: vec![Array1::zeros(bins); module.convs.len()],
            frames: 0,
        }
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(ConvHistory::reset);
        self.sums.iter_mut().for_each(|s| s.fill(T::zero()));
        self.frames = 0;
    }

    /// Number of stored scalars.
    pub fn scalars(&self) -> usize {
        self.history.iter().map(ConvHistory::scalars).sum::<usize>()
            + self.sums.iter().map(|s| s.len()).sum::<usize>()
            + 1
    }
}

/// `X̃[f,t] = X[f,t]·w[f]` (`w: F × 1`) or `X[f,t]·w[f,t]` (`w: F × T`).
pub fn apply_weights<T: Real>(x: ArrayView2<T>, w: ArrayView2<T>) -> Result<Array2<T>> {
    let (bins, frames) = x.dim();
    if w.nrows() != bins || (w.ncols() != 1 && w.ncols() != frames) {
        return Err(shape_err(format!(
            "weights are {}x{}, spectrogram is {bins}x{frames}",
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(&x * &w)
}

/// Gradient of [`apply_weights`] with respect to the weights.
pub fn apply_weights_backward<T: Real>(
    x: ArrayView2<T>,
    w_cols: usize,
    dy: ArrayView2<T>,
) -> Array2<T> {
    let prod = &x * &dy;
    if w_cols == 1 {
        prod.sum_axis(Axis(1)).insert_axis(Axis(1))
    } else {
        prod
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn randomized(bins: usize, seed: u64) -> Mulca<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mulca::init(&MulcaConfig::default(), bins, &mut rng);
        m.visit_mut("", &mut |_, _, v| {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5))
        });
        m
    }

    #[test]
    fn zero_input_weights_follow_bias_path() {
        let m = randomized(16, 1);
        let x = Array2::zeros((16, 12));
        let (w, _) = m.forward(x.view(), PoolMode::Utterance).unwrap();
        // Scalar evaluation: conv(0) = conv bias, pooled = bias, ReLU, fuse, SE.
        let rect: Vec<Vec<f64>> = m
            .convs
            .iter()
            .map(|c| c.bias.as_ref().unwrap().iter().map(|&b| b.max(0.0)).collect())
            .collect();
        let fw = &m.fusion.weight;
        let fb = m.fusion.bias.as_ref().unwrap()[0];
        let fused: Vec<f64> = (0..16)
            .map(|f| fw[[0, 0]] * rect[0][f] + fw[[0, 1]] * rect[1][f] + fw[[0, 2]] * rect[2][f] + fb)
            .collect();
        let hid = m.squeeze.weight.nrows();
        let h: Vec<f64> = (0..hid)
            .map(|j| {
                let v: f64 = (0..16).map(|f| m.squeeze.weight[[j, f]] * fused[f]).sum::<f64>()
                    + m.squeeze.bias.as_ref().unwrap()[j];
                v.max(0.0)
            })
            .collect();
        for f in 0..16 {
            let z: f64 = (0..hid).map(|j| m.excite.weight[[f, j]] * h[j]).sum::<f64>()
                + m.excite.bias.as_ref().unwrap()[f];
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((w[[f, 0]] - expect).abs() < 1e-12);
            assert!(w[[f, 0]] > 0.0 && w[[f, 0]] < 1.0);
        }
    }

    #[test]
    fn circular_shift_invariance_with_circular_padding() {
        let mut m = randomized(16, 2);
        m.set_padding(Padding::Circular);
        let x = random(16, 24, 3);
        let (w0, _) = m.forward(x.view(), PoolMode::Utterance).unwrap();
        for shift in [1usize, 5, 13] {
            let shifted = Array2::from_shape_fn((16, 24), |(f, t)| x[[f, (t + 24 - shift) % 24]]);
            let (w1, _) = m.forward(shifted.view(), PoolMode::Utterance).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_padding_shift_is_close() {
        let m = randomized(16, 4);
        let x = random(16, 400, 5);
        let (w0, _) = m.forward(x.view(), PoolMode::Utterance).unwrap();
        let shifted = Array2::from_shape_fn((16, 400), |(f, t)| x[[f, (t + 399) % 400]]);
        let (w1, _) = m.forward(shifted.view(), PoolMode::Utterance).unwrap();
        let max = w0.iter().zip(&w1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-2, "max diff {max}");
    }

    #[test]
    fn cumulative_final_frame_equals_utterance() {
        let m = randomized(16, 6);
        let x = random(16, 20, 7);
        let (wu, _) = m.forward(x.view(), PoolMode::Utterance).unwrap();
        let (wc, _) = m.forward(x.view(), PoolMode::Cumulative).unwrap();
        for f in 0..16 {
            assert!((wu[[f, 0]] - wc[[f, 19]]).abs() < 1e-12);
        }
    }

    #[test]
    fn features_are_rectified() {
        let m = randomized(16, 8);
        let x = random(16, 20, 9);
        let feats = m.features(x.view(), PoolMode::Utterance).unwrap();
        for v in feats.small.iter().chain(&feats.mid).chain(&feats.large) {
            assert!(*v >= 0.0);
        }
        assert_eq!(feats.fused.dim(), (16, 1));
    }

    #[test]
    fn apply_weights_cases() {
        let x = random(5, 7, 10);
        let ones = Array2::ones((5, 1));
        assert_eq!(apply_weights(x.view(), ones.view()).unwrap(), x);
        let mut onehot = Array2::zeros((5, 1));
        onehot[[2, 0]] = 1.0;
        let y = apply_weights(x.view(), onehot.view()).unwrap();
        for f in 0..5 {
            for t in 0..7 {
                assert_eq!(y[[f, t]], if f == 2 { x[[f, t]] } else { 0.0 });
            }
        }
        let w = random(5, 1, 11);
        let y = apply_weights(x.view(), w.view()).unwrap();
        for f in 0..5 {
            for t in 0..7 {
                assert_eq!(y[[f, t]], x[[f, t]] * w[[f, 0]]);
            }
        }
        assert!(apply_weights(x.view(), Array2::ones((4, 1)).view()).is_err());
    }

    #[test]
    fn step_tracks_cumulative_batch() {
        let m = randomized(16, 12);
        let x = random(16, 15, 13);
        let (wc, _) = m.forward(x.view(), PoolMode::Cumulative).unwrap();
        let mut state = MulcaStream::new(&m);
        for t in 0..15 {
            let w = m.step(x.column(t), &mut state).unwrap();
            for f in 0..16 {
                assert!((w[f] - wc[[f, t]]).abs() < 1e-14);
            }
        }
    }
}
