use ndarray::{Array2, ArrayView2, Axis};

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// Mean over the whole sequence; output is `C × 1`.
    Utterance,
    /// Running mean over frames `≤ t`; output is `C × T`.
    Cumulative,
}

pub fn avg_pool_time<T: Real>(x: ArrayView2<T>, mode: PoolMode) -> Array2<T> {
    let (channels, frames) = x.dim();
    match mode {
        PoolMode::Utterance => {
            let inv = T::one() / T::of(frames as f64);
            let mut y = Array2::zeros((channels, 1));
            for (c, row) in x.axis_iter(Axis(0)).enumerate() {
                let mut acc = T::zero();
                for &v in row {
                    acc += v;
                }
                y[[c, 0]] = acc * inv;
            }
            y
        }
        PoolMode::Cumulative => {
            let mut y = Array2::zeros((channels, frames));
            for c in 0..channels {
                let mut acc = T::zero();
                for t in 0..frames {
                    acc += x[[c, t]];
                    y[[c, t]] = acc / T::of((t + 1) as f64);
                }
            }
            y
        }
    }
}

/// Gradient of [`avg_pool_time`] for an input with `frames` columns.
pub fn avg_pool_time_backward<T: Real>(dy: ArrayView2<T>, frames: usize, mode: PoolMode) -> Array2<T> {
    let channels = dy.nrows();
    let mut dx = Array2::zeros((channels, frames));
    match mode {
        PoolMode::Utterance => {
            let inv = T::one() / T::of(frames as f64);
            for c in 0..channels {
                dx.row_mut(c).fill(dy[[c, 0]] * inv);
            }
        }
        PoolMode::Cumulative => {
            for c in 0..channels {
                let mut acc = T::zero();
                for t in (0..frames).rev() {
                    acc += dy[[c, t]] / T::of((t + 1) as f64);
                    dx[[c, t]] = acc;
                }
            }
        }
    }
    dx
}
