use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Iterative radix-2 decimation-in-time FFT with precomputed twiddles.
#[derive(Clone, Debug)]
pub struct Fft {
    size: usize,
    bitrev: Vec<usize>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Fft {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "fft size must be a power of two ≥ 2, got {size}"
            )));
        }
        let bits = size.trailing_zeros();
        let bitrev = (0..size)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        let half = size / 2;
        let cos = (0..half)
            .map(|k| (2.0 * PI * k as f64 / size as f64).cos())
            .collect();
        let sin = (0..half)
            .map(|k| (2.0 * PI * k as f64 / size as f64).sin())
            .collect();
        Ok(Self {
            size,
            bitrev,
            cos,
            sin,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// In-place transform. `inverse` uses `e^{+i…}` and does not scale.
    pub fn process(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.size;
        assert!(re.len() == n && im.len() == n, "fft buffer length mismatch");
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * stride];
                    let wi = sign * self.sin[k * stride];
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }

    /// Spectrum bins `0..=N/2` of a real signal of length `N`.
    pub fn forward_real(&self, x: &[f64], re_out: &mut [f64], im_out: &mut [f64]) {
        let n = self.size;
        let mut re = x.to_vec();
        let mut im = vec![0.0; n];
        self.process(&mut re, &mut im, false);
        let bins = n / 2 + 1;
        re_out[..bins].copy_from_slice(&re[..bins]);
        im_out[..bins].copy_from_slice(&im[..bins]);
    }

    /// Real signal of length `N` from its half spectrum (Hermitian extension), scaled by `1/N`.
    pub fn inverse_real(&self, re_half: &[f64], im_half: &[f64]) -> Vec<f64> {
        let n = self.size;
        let bins = n / 2 + 1;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        re[..bins].copy_from_slice(&re_half[..bins]);
        im[..bins].copy_from_slice(&im_half[..bins]);
        // DC and Nyquist bins of a real signal carry no imaginary part.
        im[0] = 0.0;
        im[n / 2] = 0.0;
        for k in 1..n / 2 {
            re[n - k] = re[k];
            im[n - k] = -im[k];
        }
        self.process(&mut re, &mut im, true);
        let scale = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= scale);
        re
    }
}

/// Direct `O(N²)` DFT of a real signal, bins `0..=N/2`.
pub fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let bins = n / 2 + 1;
    let mut re = vec![0.0; bins];
    let mut im = vec![0.0; bins];
    for k in 0..bins {
        for (t, &v) in x.iter().enumerate() {
            let phase = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            re[k] += v * phase.cos();
            im[k] += v * phase.sin();
        }
    }
    (re, im)
}
