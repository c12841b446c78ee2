use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::params::{visit_array, visit_array_mut, Params};
use super::Real;
use crate::error::{shape_err, Error, Result};

const EPS: f64 = 1e-8;

/// Which frames contribute to the normalization statistics at frame `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Channels of frame `t` only.
    PerFrame,
    /// Channels of every frame `≤ t`.
    Cumulative,
    /// Channels of every frame in the sequence. Not causal.
    Global,
}

/// Statistics saved by the forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Array2<T>,
    mean: Vec<T>,
    rstd: Vec<T>,
    count: Vec<T>,
    clamped: Vec<bool>,
}

fn frame_sums<T: Real>(x: &ArrayView2<T>) -> (Vec<T>, Vec<T>) {
    let frames = x.ncols();
    let mut s1 = vec![T::zero(); frames];
    let mut s2 = vec![T::zero(); frames];
    for t in 0..frames {
        for &v in x.column(t) {
            s1[t] += v;
            s2[t] += v * v;
        }
    }
    (s1, s2)
}

#[inline]
fn moments<T: Real>(sum: T, sum_sq: T, count: T) -> (T, T, bool) {
    let mean = sum / count;
    let var = sum_sq / count - mean * mean;
    let clamped = var < T::zero();
    let var = if clamped { T::zero() } else { var };
    (mean, T::one() / (var + T::of(EPS)).sqrt(), clamped)
}

/// Normalizes every frame by statistics over channels (and frames, per `mode`),
/// then applies the per-channel affine `gain·x̂ + bias`.
pub fn channel_norm<T: Real>(
    x: ArrayView2<T>,
    gain: ArrayView1<T>,
    bias: ArrayView1<T>,
    mode: NormMode,
) -> Result<(Array2<T>, NormCache<T>)> {
    let (channels, frames) = x.dim();
    if channels < 2 {
        return Err(Error::InvalidConfig(format!(
            "channel norm needs at least 2 channels, got {channels}"
        )));
    }
    if gain.len() != channels || bias.len() != channels {
        return Err(shape_err("channel norm affine length differs from channels"));
    }
    let (s1, s2) = frame_sums(&x);
    let c = channels as f64;
    let mut mean = Vec::with_capacity(frames);
    let mut rstd = Vec::with_capacity(frames);
    let mut count = Vec::with_capacity(frames);
    let mut clamped = Vec::with_capacity(frames);
    let (total1, total2): (T, T) = match mode {
        NormMode::Global => (s1.iter().copied().sum(), s2.iter().copied().sum()),
        _ => (T::zero(), T::zero()),
    };
    let (mut acc1, mut acc2) = (T::zero(), T::zero());
    for t in 0..frames {
        let (sum, sum_sq, n) = match mode {
            NormMode::PerFrame => (s1[t], s2[t], T::of(c)),
            NormMode::Cumulative => {
                acc1 += s1[t];
                acc2 += s2[t];
                (acc1, acc2, T::of(c * (t + 1) as f64))
            }
            NormMode::Global => (total1, total2, T::of(c * frames as f64)),
        };
        let (m, r, cl) = moments(sum, sum_sq, n);
        mean.push(m);
        rstd.push(r);
        count.push(n);
        clamped.push(cl);
    }
    let mut normalized = Array2::zeros((channels, frames));
    let mut y = Array2::zeros((channels, frames));
    for ch in 0..channels {
        for t in 0..frames {
            let xh = (x[[ch, t]] - mean[t]) * rstd[t];
            normalized[[ch, t]] = xh;
            y[[ch, t]] = gain[ch] * xh + bias[ch];
        }
    }
    Ok((
        y,
        NormCache {
            normalized,
            mean,
            rstd,
            count,
            clamped,
        },
    ))
}

/// Accumulates gain/bias gradients, returns the input gradient.
pub fn channel_norm_backward<T: Real>(
    x: ArrayView2<T>,
    gain: ArrayView1<T>,
    mode: NormMode,
    cache: &NormCache<T>,
    dy: ArrayView2<T>,
    grad_gain: &mut Array1<T>,
    grad_bias: &mut Array1<T>,
) -> Array2<T> {
    let (channels, frames) = x.dim();
    let two = T::of(2.0);
    let half = T::of(0.5);
    let mut dxhat = Array2::zeros((channels, frames));
    for ch in 0..channels {
        for t in 0..frames {
            let g = dy[[ch, t]];
            grad_gain[ch] += g * cache.normalized[[ch, t]];
            grad_bias[ch] += g;
            dxhat[[ch, t]] = g * gain[ch];
        }
    }
    // Gradients with respect to the (possibly accumulated) sums at each frame.
    let mut d_sum = vec![T::zero(); frames];
    let mut d_sum_sq = vec![T::zero(); frames];
    for t in 0..frames {
        let (m, r, n) = (cache.mean[t], cache.rstd[t], cache.count[t]);
        let mut a = T::zero();
        let mut b = T::zero();
        for ch in 0..channels {
            let g = dxhat[[ch, t]];
            a += g;
            b += g * (x[[ch, t]] - m);
        }
        let mut d_mean = -r * a;
        let d_var = if cache.clamped[t] {
            T::zero()
        } else {
            -half * b * r * r * r
        };
        d_sum_sq[t] = d_var / n;
        d_mean -= two * m * d_var;
        d_sum[t] = d_mean / n;
    }
    match mode {
        NormMode::PerFrame => {}
        NormMode::Cumulative => {
            for t in (0..frames.saturating_sub(1)).rev() {
                d_sum[t] = d_sum[t] + d_sum[t + 1];
                d_sum_sq[t] = d_sum_sq[t] + d_sum_sq[t + 1];
            }
        }
        NormMode::Global => {
            let s1: T = d_sum.iter().copied().sum();
            let s2: T = d_sum_sq.iter().copied().sum();
            d_sum.iter_mut().for_each(|v| *v = s1);
            d_sum_sq.iter_mut().for_each(|v| *v = s2);
        }
    }
    let mut dx = dxhat;
    for ch in 0..channels {
        for t in 0..frames {
            let v = dx[[ch, t]] * cache.rstd[t] + d_sum[t] + two * x[[ch, t]] * d_sum_sq[t];
            dx[[ch, t]] = v;
        }
    }
    dx
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ChannelNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: Array1::ones(channels),
            bias: Array1::zeros(channels),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, mode: NormMode) -> Result<(Array2<T>, NormCache<T>)> {
        channel_norm(x, self.gain.view(), self.bias.view(), mode)
    }

    pub fn backward(
        &self,
        x: ArrayView2<T>,
        mode: NormMode,
        cache: &NormCache<T>,
        dy: ArrayView2<T>,
        grad: &mut ChannelNorm<T>,
    ) -> Array2<T> {
        channel_norm_backward(
            x,
            self.gain.view(),
            mode,
            cache,
            dy,
            &mut grad.gain,
            &mut grad.bias,
        )
    }

    /// Normalizes a single frame, continuing the running statistics in `state`.
    pub fn step(&self, x: ArrayView1<T>, mode: NormMode, state: &mut NormStream<T>) -> Array1<T> {
        let channels = x.len();
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for &v in x {
            s1 += v;
            s2 += v * v;
        }
        let (sum, sum_sq, n) = match mode {
            NormMode::PerFrame => (s1, s2, T::of(channels as f64)),
            // Global statistics are unavailable online; fall back to the causal estimate.
            NormMode::Cumulative | NormMode::Global => {
                state.sum += s1;
                state.sum_sq += s2;
                state.frames += 1;
                (
                    state.sum,
                    state.sum_sq,
                    T::of(channels as f64 * state.frames as f64),
                )
            }
        };
        let (m, r, _) = moments(sum, sum_sq, n);
        let mut y = Array1::zeros(channels);
        for ch in 0..channels {
            y[ch] = self.gain[ch] * ((x[ch] - m) * r) + self.bias[ch];
        }
        y
    }
}

impl<T: Real> Params<T> for ChannelNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array(prefix, "gain", &self.gain, f);
        visit_array(prefix, "bias", &self.bias, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_array_mut(prefix, "gain", &mut self.gain, f);
        visit_array_mut(prefix, "bias", &mut self.bias, f);
    }
}

/// Running sums for the cumulative norm in streaming mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormStream<T> {
    sum: T,
    sum_sq: T,
    frames: usize,
}

impl<T: Real> NormStream<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            sum_sq: T::zero(),
            frames: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_mean(x: ArrayView2<f64>) -> Array1<f64> {
        x.mean_axis(Axis(0)).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..3.0))
    }

    #[test]
    fn constant_input_yields_bias() {
        let x = Array2::<f64>::from_elem((4, 6), 1.7);
        let gain = Array1::<f64>::from_vec(vec![2.0, -1.0, 0.5, 3.0]);
        let bias = Array1::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        for mode in [NormMode::PerFrame, NormMode::Cumulative, NormMode::Global] {
            let (y, _) = channel_norm(x.view(), gain.view(), bias.view(), mode).unwrap();
            for t in 0..6 {
                for c in 0..4 {
                    assert!((y[[c, t]] - bias[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn per_frame_is_standardized() {
        let x = random(16, 9, 1);
        let (y, _) = channel_norm(
            x.view(),
            Array1::ones(16).view(),
            Array1::zeros(16).view(),
            NormMode::PerFrame,
        )
        .unwrap();
        let mean = frame_mean(y.view());
        for t in 0..9 {
            let col = y.column(t);
            let var = col.iter().map(|v| (v - mean[t]).powi(2)).sum::<f64>() / 16.0;
            assert!(mean[t].abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cumulative_matches_recomputation() {
        let x = random(5, 12, 2);
        let gain = Array1::from_vec(vec![1.0, 0.5, -0.3, 2.0, 1.1]);
        let bias = Array1::from_vec(vec![0.0, 0.1, -0.2, 0.3, 0.05]);
        let (y, _) = channel_norm(x.view(), gain.view(), bias.view(), NormMode::Cumulative).unwrap();
        for t in 0..12 {
            let window: Vec<f64> = (0..=t).flat_map(|s| x.column(s).to_vec()).collect();
            let n = window.len() as f64;
            let mean = window.iter().sum::<f64>() / n;
            let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for c in 0..5 {
                let expect = gain[c] * (x[[c, t]] - mean) / (var + 1e-8).sqrt() + bias[c];
                assert!((y[[c, t]] - expect).abs() < 1e-10, "t={t} c={c}");
            }
        }
    }

    #[test]
    fn single_channel_is_rejected() {
        let x = random(1, 4, 3);
        let r = channel_norm(
            x.view(),
            Array1::ones(1).view(),
            Array1::zeros(1).view(),
            NormMode::PerFrame,
        );
        assert!(r.is_err());
    }

    #[test]
    fn step_matches_cumulative_batch() {
        let x = random(6, 20, 4);
        let mut norm = ChannelNorm::<f64>::new(6);
        norm.gain = Array1::from_shape_fn(6, |i| 0.5 + i as f64 * 0.1);
        norm.bias = Array1::from_shape_fn(6, |i| i as f64 * -0.05);
        let (batch, _) = norm.forward(x.view(), NormMode::Cumulative).unwrap();
        let mut state = NormStream::new();
        for t in 0..20 {
            assert_eq!(
                norm.step(x.column(t), NormMode::Cumulative, &mut state),
                batch.column(t)
            );
        }
    }
}
