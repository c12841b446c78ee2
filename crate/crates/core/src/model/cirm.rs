//! Complex ideal ratio mask: target construction, bounded compression and
//! application to a noisy spectrogram.

use ndarray::{Array2, Zip};

use crate::dsp::ComplexSpectrogram;
use crate::error::{shape_err, Result};

const DIV_EPS: f64 = 1e-10;
/// Compressed values are clamped to this fraction of `K` before inversion so
/// that decompression stays finite.
const CLAMP_FRACTION: f64 = 0.99;

/// Mask in the compressed domain `(−K, K)`, `F × T` per component.
#[derive(Clone, Debug, PartialEq)]
pub struct CirmMask {
    pub mr: Array2<f64>,
    pub mi: Array2<f64>,
}

/// Compression constants `K` (bound) and `C` (steepness).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Compression {
    pub k: f64,
    pub c: f64,
}

impl Default for Compression {
    fn default() -> Self {
        Self { k: 10.0, c: 0.1 }
    }
}

impl Compression {
    /// `K·(1 − e^{−Cx}) / (1 + e^{−Cx})`, evaluated as `K·tanh(Cx/2)`.
    pub fn compress(&self, x: f64) -> f64 {
        self.k * (0.5 * self.c * x).tanh()
    }

    /// Inverse of [`Compression::compress`]; inputs are clamped to `±0.99·K`.
    pub fn decompress(&self, m: f64) -> f64 {
        let lim = CLAMP_FRACTION * self.k;
        let m = m.clamp(-lim, lim);
        -((self.k - m) / (self.k + m)).ln() / self.c
    }
}

impl CirmMask {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self {
            mr: Array2::zeros((bins, frames)),
            mi: Array2::zeros((bins, frames)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mr.dim()
    }

    /// Uncompressed mask components.
    pub fn decompress(&self, comp: Compression) -> (Array2<f64>, Array2<f64>) {
        (
            self.mr.mapv(|m| comp.decompress(m)),
            self.mi.mapv(|m| comp.decompress(m)),
        )
    }
}

/// Raw (uncompressed) ratio mask `S / Y` with a guarded denominator.
pub fn cirm_raw(noisy: &ComplexSpectrogram, clean: &ComplexSpectrogram) -> Result<(Array2<f64>, Array2<f64>)> {
    if noisy.re.dim() != clean.re.dim() {
        return Err(shape_err(format!(
            "noisy is {:?}, clean is {:?}",
            noisy.re.dim(),
            clean.re.dim()
        )));
    }
    let mut mr = Array2::zeros(noisy.re.dim());
    let mut mi = Array2::zeros(noisy.re.dim());
    Zip::from(&mut mr)
        .and(&mut mi)
        .and(&noisy.re)
        .and(&noisy.im)
        .and(&clean.re)
        .and(&clean.im)
        .for_each(|mr, mi, &yr, &yi, &sr, &si| {
            let den = yr * yr + yi * yi + DIV_EPS;
            *mr = (yr * sr + yi * si) / den;
            *mi = (yr * si - yi * sr) / den;
        });
    Ok((mr, mi))
}

/// Compressed training target.
pub fn cirm_target(
    noisy: &ComplexSpectrogram,
    clean: &ComplexSpectrogram,
    comp: Compression,
) -> Result<CirmMask> {
    let (mr, mi) = cirm_raw(noisy, clean)?;
    Ok(CirmMask {
        mr: mr.mapv(|x| comp.compress(x)),
        mi: mi.mapv(|x| comp.compress(x)),
    })
}

/// Complex multiplication `(Mr + iMi)(Yr + iYi)`.
pub fn apply_mask(
    noisy: &ComplexSpectrogram,
    mr: &Array2<f64>,
    mi: &Array2<f64>,
) -> Result<ComplexSpectrogram> {
    if mr.dim() != noisy.re.dim() || mi.dim() != noisy.re.dim() {
        return Err(shape_err(format!(
            "mask is {:?}, spectrogram is {:?}",
            mr.dim(),
            noisy.re.dim()
        )));
    }
    let re = mr * &noisy.re - mi * &noisy.im;
    let im = mr * &noisy.im + mi * &noisy.re;
    Ok(ComplexSpectrogram {
        re,
        im,
        config: noisy.config.clone(),
    })
}

/// Mean squared error over both components, all bins and frames `t ≥ warmup`.
/// `pred` frame `t` is compared with `target` frame `t − warmup`.
pub fn mask_loss(pred: &CirmMask, target: &CirmMask, warmup: usize) -> Result<f64> {
    let (bins, frames) = pred.dim();
    if target.dim() != (bins, frames) {
        return Err(shape_err("prediction and target differ in shape"));
    }
    if frames <= warmup {
        return Err(shape_err(format!(
            "{frames} frames leave nothing after {warmup} warm-up frames"
        )));
    }
    let mut acc = 0.0;
    for f in 0..bins {
        for t in warmup..frames {
            let dr = pred.mr[[f, t]] - target.mr[[f, t - warmup]];
            let di = pred.mi[[f, t]] - target.mi[[f, t - warmup]];
            acc += dr * dr + di * di;
        }
    }
    Ok(acc / (2 * bins * (frames - warmup)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(bins: usize, frames: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ComplexSpectrogram::zeros(bins, frames, StftConfig::default());
        s.re = Array2::from_shape_fn((bins, frames), |_| rng.gen_range(-2.0..2.0));
        s.im = Array2::from_shape_fn((bins, frames), |_| rng.gen_range(-2.0..2.0));
        s
    }

    #[test]
    fn compression_round_trip() {
        let c = Compression::default();
        let mut x = -50.0;
        while x <= 50.0 {
            let m = c.compress(x);
            assert!(m.abs() < c.k);
            assert!((c.decompress(m) - x).abs() <= 1e-9, "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn compression_matches_exponential_form() {
        let c = Compression::default();
        for x in [-3.0, -0.5, 0.0, 1.0, 7.5] {
            let e = (-c.c * x).exp();
            assert!((c.compress(x) - c.k * (1.0 - e) / (1.0 + e)).abs() < 1e-14);
        }
        // Identity mask: K·(1 − e^{−0.1})/(1 + e^{−0.1}).
        assert!((c.compress(1.0) - 0.4995837495787998).abs() < 1e-14);
    }

    #[test]
    fn identical_inputs_give_unit_mask() {
        let y = random_spec(257, 4, 1);
        let (mr, mi) = cirm_raw(&y, &y).unwrap();
        for ((&v, &w), (&r, &i)) in mr.iter().zip(&mi).zip(y.re.iter().zip(&y.im)) {
            let p = r * r + i * i;
            assert!((v - p / (p + 1e-10)).abs() < 1e-12);
            assert!(w.abs() < 1e-12);
        }
        let zero = ComplexSpectrogram::zeros(257, 4, StftConfig::default());
        let t = cirm_target(&y, &zero, Compression::default()).unwrap();
        assert!(t.mr.iter().chain(&t.mi).all(|&v| v == 0.0));
    }

    #[test]
    fn exact_mask_recovers_clean() {
        let y = random_spec(257, 6, 2);
        let s = random_spec(257, 6, 3);
        let (mr, mi) = cirm_raw(&y, &s).unwrap();
        let out = apply_mask(&y, &mr, &mi).unwrap();
        for (a, b) in out.re.iter().zip(&s.re).chain(out.im.iter().zip(&s.im)) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn apply_mask_cases() {
        let y = random_spec(257, 3, 4);
        let ones = Array2::ones((257, 3));
        let zeros = Array2::zeros((257, 3));
        let same = apply_mask(&y, &ones, &zeros).unwrap();
        assert_eq!(same.re, y.re);
        assert_eq!(same.im, y.im);
        let rot = apply_mask(&y, &zeros, &ones).unwrap();
        assert_eq!(rot.re, -&y.im);
        assert_eq!(rot.im, y.re);
        assert!(apply_mask(&y, &Array2::ones((257, 2)), &zeros).is_err());
    }

    #[test]
    fn loss_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = CirmMask {
            mr: Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)),
            mi: Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)),
        };
        assert_eq!(mask_loss(&target, &target, 0).unwrap(), 0.0);
        let shifted = CirmMask {
            mr: &target.mr + 1.0,
            mi: &target.mi + 1.0,
        };
        assert!((mask_loss(&shifted, &target, 0).unwrap() - 1.0).abs() < 1e-15);
        let pred = CirmMask {
            mr: Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)),
            mi: Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)),
        };
        let mut direct = 0.0;
        for f in 0..4 {
            for t in 2..6 {
                direct += (pred.mr[[f, t]] - target.mr[[f, t - 2]]).powi(2);
                direct += (pred.mi[[f, t]] - target.mi[[f, t - 2]]).powi(2);
            }
        }
        direct /= 32.0;
        assert!((mask_loss(&pred, &target, 2).unwrap() - direct).abs() < 1e-15);
        assert!(mask_loss(&pred, &target, 6).is_err());
    }
}
