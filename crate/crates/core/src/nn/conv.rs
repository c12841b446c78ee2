use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::dense::dense;
use super::params::{visit_array, visit_array_mut, Params};
use super::Real;
use crate::error::{shape_err, Error, Result};

/// How a depthwise convolution sees frames before the start of the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(K-1)·d` zeros on the left; output at `t` depends on inputs `≤ t` only.
    Causal,
    /// Wraps around the time axis. Test configurations only.
    Circular,
}

/// 1×1 convolution over a `C_in × T` input; identical to [`dense`].
pub fn pointwise_conv<T: Real>(
    x: ArrayView2<T>,
    weight: ArrayView2<T>,
    bias: Option<ArrayView1<T>>,
) -> Result<Array2<T>> {
    dense(x, weight, bias)
}

fn check_geometry(kernel_len: usize, dilation: usize) -> Result<()> {
    if kernel_len == 0 || dilation == 0 {
        return Err(Error::InvalidConfig(format!(
            "depthwise conv needs kernel ≥ 1 and dilation ≥ 1, got K={kernel_len} d={dilation}"
        )));
    }
    Ok(())
}

#[inline]
fn tap<T: Real>(row: &[T], t: usize, offset: usize, padding: Padding) -> T {
    if t >= offset {
        row[t - offset]
    } else {
        match padding {
            Padding::Causal => T::zero(),
            Padding::Circular => {
                let len = row.len() as isize;
                row[(t as isize - offset as isize).rem_euclid(len) as usize]
            }
        }
    }
}

/// `y[c,t] = b[c] + Σ_k kernel[c,k]·x[c, t − (K−1−k)·d]`.
pub fn depthwise_conv1d<T: Real>(
    x: ArrayView2<T>,
    kernel: ArrayView2<T>,
    bias: Option<ArrayView1<T>>,
    dilation: usize,
    padding: Padding,
) -> Result<Array2<T>> {
    let (channels, frames) = x.dim();
    let kernel_len = kernel.ncols();
    check_geometry(kernel_len, dilation)?;
    if kernel.nrows() != channels {
        return Err(shape_err(format!(
            "depthwise kernel has {} channels, input has {channels}",
            kernel.nrows()
        )));
    }
    if bias.map_or(false, |b| b.len() != channels) {
        return Err(shape_err("depthwise bias length differs from channels"));
    }
    let x = x.as_standard_layout();
    let mut y = Array2::zeros((channels, frames));
    for c in 0..channels {
        let row = x.row(c);
        let row = row.as_slice().unwrap();
        let taps = kernel.row(c);
        let b = bias.map_or(T::zero(), |b| b[c]);
        let mut out = y.row_mut(c);
        for t in 0..frames {
            let mut acc = b;
            for (k, &w) in taps.iter().enumerate() {
                acc += w * tap(row, t, (kernel_len - 1 - k) * dilation, padding);
            }
            out[t] = acc;
        }
    }
    Ok(y)
}

/// Accumulates kernel and bias gradients, returns the input gradient.
pub fn depthwise_conv1d_backward<T: Real>(
    x: ArrayView2<T>,
    kernel: ArrayView2<T>,
    dilation: usize,
    padding: Padding,
    dy: ArrayView2<T>,
    grad_kernel: &mut Array2<T>,
    grad_bias: Option<&mut Array1<T>>,
) -> Array2<T> {
    let (channels, frames) = x.dim();
    let kernel_len = kernel.ncols();
    let mut dx = Array2::zeros((channels, frames));
    for c in 0..channels {
        for t in 0..frames {
            let g = dy[[c, t]];
            for k in 0..kernel_len {
                let offset = (kernel_len - 1 - k) * dilation;
                let src = if t >= offset {
                    t - offset
                } else {
                    match padding {
                        Padding::Causal => continue,
                        Padding::Circular => {
                            (t as isize - offset as isize).rem_euclid(frames as isize) as usize
                        }
                    }
                };
                grad_kernel[[c, k]] += g * x[[c, src]];
                dx[[c, src]] += g * kernel[[c, k]];
            }
        }
    }
    if let Some(gb) = grad_bias {
        *gb += &dy.sum_axis(Axis(1));
    }
    dx
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv<T> {
    /// `C × K` taps; tap `K−1` multiplies the current frame.
    pub kernel: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Real> DepthwiseConv<T> {
    pub fn zeros(channels: usize, kernel_len: usize, dilation: usize, bias: bool) -> Self {
        Self {
            kernel: Array2::zeros((channels, kernel_len)),
            bias: bias.then(|| Array1::zeros(channels)),
            dilation,
            padding: Padding::Causal,
        }
    }

    pub fn init<R: Rng>(
        channels: usize,
        kernel_len: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / kernel_len as f64).sqrt();
        let mut conv = Self::zeros(channels, kernel_len, dilation, bias);
        conv.kernel
            .mapv_inplace(|_| T::of(rng.gen_range(-bound..=bound)));
        conv
    }

    pub fn channels(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.ncols()
    }

    /// Number of past frames the convolution needs to see.
    pub fn history_len(&self) -> usize {
        (self.kernel_len() - 1) * self.dilation
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        depthwise_conv1d(
            x,
            self.kernel.view(),
            self.bias.as_ref().map(|b| b.view()),
            self.dilation,
            self.padding,
        )
    }

    pub fn backward(
        &self,
        x: ArrayView2<T>,
        dy: ArrayView2<T>,
        grad: &mut DepthwiseConv<T>,
    ) -> Array2<T> {
        depthwise_conv1d_backward(
            x,
            self.kernel.view(),
            self.dilation,
            self.padding,
            dy,
            &mut grad.kernel,
            grad.bias.as_mut(),
        )
    }

    /// One causal step; `history` holds the previous `history_len()` frames.
    pub fn step(&self, x: ArrayView1<T>, history: &mut ConvHistory<T>) -> Array1<T> {
        let kernel_len = self.kernel_len();
        let mut y = Array1::zeros(self.channels());
        for c in 0..self.channels() {
            let mut acc = self.bias.as_ref().map_or(T::zero(), |b| b[c]);
            for k in 0..kernel_len {
                let lag = (kernel_len - 1 - k) * self.dilation;
                let v = if lag == 0 { x[c] } else { history.lagged(lag, c) };
                acc += self.kernel[[c, k]] * v;
            }
            y[c] = acc;
        }
        history.push(x);
        y
    }
}

impl<T: Real> Params<T> for DepthwiseConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array(prefix, "kernel", &self.kernel, f);
        if let Some(b) = &self.bias {
            visit_array(prefix, "bias", b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_array_mut(prefix, "kernel", &mut self.kernel, f);
        if let Some(b) = &mut self.bias {
            visit_array_mut(prefix, "bias", b, f);
        }
    }
}

/// Ring buffer of the most recent frames seen by a causal convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvHistory<T> {
    frames: Array2<T>,
    next: usize,
}

impl<T: Real> ConvHistory<T> {
    pub fn new(len: usize, channels: usize) -> Self {
        Self {
            frames: Array2::zeros((len, channels)),
            next: 0,
        }
    }

    pub fn reset(&mut self) {
        self.frames.fill(T::zero());
        self.next = 0;
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored scalars.
    pub fn scalars(&self) -> usize {
        self.frames.len()
    }

    /// Value of channel `c` from `lag` frames ago, `1 ≤ lag ≤ len`.
    fn lagged(&self, lag: usize, c: usize) -> T {
        let len = self.len();
        self.frames[[(self.next + len - lag) % len, c]]
    }

    fn push(&mut self, x: ArrayView1<T>) {
        let len = self.len();
        if len == 0 {
            return;
        }
        self.frames.row_mut(self.next).assign(&x);
        self.next = (self.next + 1) % len;
    }
}
