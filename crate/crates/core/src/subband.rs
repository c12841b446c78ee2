//! Sub-band units and the shared two-layer LSTM mask predictor.
//!
//! Each frequency bin `f` gets its own sequence built from the weighted
//! magnitude rows `f−n … f+n` (wrapping modulo `F`) plus the three full-band
//! embeddings at `f`. All sequences share one parameter set and are batched
//! together along the LSTM batch axis.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{join, Dense, Lstm, LstmCache, LstmState, Params, Real};

/// Row indices of the sub-band unit centred on `f`, in stacking order.
pub fn subband_rows(f: usize, n: usize, bins: usize) -> Vec<usize> {
    (0..=2 * n).map(|j| (f + bins * (n + 1) + j - n) % bins).collect()
}

fn check_width(n: usize, bins: usize) -> Result<()> {
    if 2 * n + 1 > bins {
        return Err(Error::InvalidConfig(format!(
            "sub-band width 2·{n}+1 exceeds {bins} frequency bins"
        )));
    }
    Ok(())
}

/// One `(2n+1) × T` unit per frequency bin.
pub fn unfold_subband<T: Real>(x: ArrayView2<T>, n: usize) -> Result<Vec<Array2<T>>> {
    let (bins, frames) = x.dim();
    check_width(n, bins)?;
    Ok((0..bins)
        .map(|f| {
            let rows = subband_rows(f, n, bins);
            let mut unit = Array2::zeros((rows.len(), frames));
            for (j, &r) in rows.iter().enumerate() {
                unit.row_mut(j).assign(&x.row(r));
            }
            unit
        })
        .collect())
}

/// Per-bin input sequences as an LSTM batch `T × F × (2n+4)`: unit rows
/// followed by `Ψm, Ψr, Ψi`.
pub fn assemble_inputs<T: Real>(
    units: &[Array2<T>],
    psi_m: ArrayView2<T>,
    psi_r: ArrayView2<T>,
    psi_i: ArrayView2<T>,
) -> Result<Array3<T>> {
    let (bins, frames) = psi_m.dim();
    if psi_r.dim() != (bins, frames) || psi_i.dim() != (bins, frames) || units.len() != bins {
        return Err(shape_err("embedding shapes and unit count must agree"));
    }
    let width = units.first().map_or(1, |u| u.nrows());
    if units.iter().any(|u| u.dim() != (width, frames)) {
        return Err(shape_err("sub-band units differ in shape"));
    }
    let mut out = Array3::zeros((frames, bins, width + 3));
    for (f, unit) in units.iter().enumerate() {
        for t in 0..frames {
            let mut v = out.slice_mut(ndarray::s![t, f, ..]);
            for j in 0..width {
                v[j] = unit[[j, t]];
            }
            v[width] = psi_m[[f, t]];
            v[width + 1] = psi_r[[f, t]];
            v[width + 2] = psi_i[[f, t]];
        }
    }
    Ok(out)
}

/// Equivalent to `assemble_inputs(unfold_subband(xm), ...)` restricted to
/// the bins listed in `selected`, without materialising every unit.
pub fn gather_inputs<T: Real>(
    xm: ArrayView2<T>,
    psi: [ArrayView2<T>; 3],
    n: usize,
    selected: &[usize],
) -> Result<Array3<T>> {
    let (bins, frames) = xm.dim();
    check_width(n, bins)?;
    if psi.iter().any(|p| p.dim() != (bins, frames)) {
        return Err(shape_err("embedding shapes must match the magnitude"));
    }
    let width = 2 * n + 1;
    let mut out = Array3::zeros((frames, selected.len(), width + 3));
    for (b, &f) in selected.iter().enumerate() {
        let rows = subband_rows(f, n, bins);
        for t in 0..frames {
            let mut v = out.slice_mut(ndarray::s![t, b, ..]);
            for (j, &r) in rows.iter().enumerate() {
                v[j] = xm[[r, t]];
            }
            for (k, p) in psi.iter().enumerate() {
                v[width + k] = p[[f, t]];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`gather_inputs`]: scatters `d: T × S × (2n+4)` back onto
/// `(dxm, [dΨm, dΨr, dΨi])`, each `F × T`.
pub fn gather_inputs_backward<T: Real>(
    d: ArrayView3<T>,
    bins: usize,
    n: usize,
    selected: &[usize],
) -> (Array2<T>, [Array2<T>; 3]) {
    let frames = d.dim().0;
    let width = 2 * n + 1;
    let mut dxm = Array2::zeros((bins, frames));
    let mut dpsi = [
        Array2::zeros((bins, frames)),
        Array2::zeros((bins, frames)),
        Array2::zeros((bins, frames)),
    ];
    for (b, &f) in selected.iter().enumerate() {
        let rows = subband_rows(f, n, bins);
        for t in 0..frames {
            for (j, &r) in rows.iter().enumerate() {
                dxm[[r, t]] += d[[t, b, j]];
            }
            for (k, p) in dpsi.iter_mut().enumerate() {
                p[[f, t]] += d[[t, b, width + k]];
            }
        }
    }
    (dxm, dpsi)
}

/// Two stacked LSTMs and a linear `H → 2` read-out, shared by all bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Gsub<T> {
    pub lstm1: Lstm<T>,
    pub lstm2: Lstm<T>,
    pub out: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct GsubCache<T> {
    c1: LstmCache<T>,
    c2: LstmCache<T>,
    h2: Array3<T>,
}

impl<T: Real> Gsub<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            lstm1: Lstm::zeros(input, hidden),
            lstm2: Lstm::zeros(hidden, hidden),
            out: Dense::zeros(hidden, 2, true),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            lstm1: Lstm::init(input, hidden, rng),
            lstm2: Lstm::init(hidden, hidden, rng),
            out: Dense::init(hidden, 2, true, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm1.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.lstm1.hidden()
    }

    fn read_out(&self, h: &Array3<T>) -> Result<Array3<T>> {
        let (frames, batch, hidden) = h.dim();
        let flat = h.view().into_shape((frames * batch, hidden)).unwrap();
        let y = self.out.forward(flat.t())?;
        Ok(y.t().as_standard_layout().into_owned().into_shape((frames, batch, 2)).unwrap())
    }

    /// `x: T × S × I → T × S × 2` (channel 0 real, 1 imaginary; compressed domain).
    pub fn forward(&self, x: ArrayView3<T>, keep_cache: bool) -> Result<(Array3<T>, Option<GsubCache<T>>)> {
        let (_, batch, input) = x.dim();
        if input != self.input_dim() {
            return Err(shape_err(format!(
                "sub-band model expects {} features, input has {input}",
                self.input_dim()
            )));
        }
        let hidden = self.hidden();
        let mut s1 = LstmState::zeros(batch, hidden);
        let mut s2 = LstmState::zeros(batch, hidden);
        let (h1, c1) = self.lstm1.forward(x, &mut s1, keep_cache)?;
        let (h2, c2) = self.lstm2.forward(h1.view(), &mut s2, keep_cache)?;
        let y = self.read_out(&h2)?;
        let cache = match (c1, c2) {
            (Some(c1), Some(c2)) => Some(GsubCache { c1, c2, h2 }),
            _ => None,
        };
        Ok((y, cache))
    }

    /// Returns the input gradient `T × S × I`.
    pub fn backward(&self, cache: &GsubCache<T>, dy: ArrayView3<T>, grad: &mut Gsub<T>) -> Array3<T> {
        let (frames, batch, hidden) = cache.h2.dim();
        let flat = cache.h2.view().into_shape((frames * batch, hidden)).unwrap();
        let dflat = dy.as_standard_layout().into_owned().into_shape((frames * batch, 2)).unwrap();
        let dh2 = self.out.backward(flat.t(), dflat.t(), &mut grad.out);
        let dh2 = dh2.t().as_standard_layout().into_owned().into_shape((frames, batch, hidden)).unwrap();
        let dh1 = self.lstm2.backward(&cache.c2, dh2.view(), &mut grad.lstm2);
        self.lstm1.backward(&cache.c1, dh1.view(), &mut grad.lstm1)
    }

    /// One frame for every bin: `x: S × I → S × 2`.
    pub fn step(&self, x: ArrayView2<T>, state: &mut GsubStream<T>) -> Result<Array2<T>> {
        let h1 = self.lstm1.step(x, &mut state.s1)?;
        let h2 = self.lstm2.step(h1.view(), &mut state.s2)?;
        Ok(self.out.forward(h2.t())?.t().to_owned())
    }
}

impl<T: Real> Params<T> for Gsub<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.lstm1.visit(&join(prefix, "lstm1"), f);
        self.lstm2.visit(&join(prefix, "lstm2"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.lstm1.visit_mut(&join(prefix, "lstm1"), f);
        self.lstm2.visit_mut(&join(prefix, "lstm2"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Recurrent state of both layers for every bin.
#[derive(Clone, Debug, PartialEq)]
pub struct GsubStream<T> {
    s1: LstmState<T>,
    s2: LstmState<T>,
}

impl<T: Real> GsubStream<T> {
    pub fn new(model: &Gsub<T>, bins: usize) -> Self {
        Self {
            s1: LstmState::zeros(bins, model.hidden()),
            s2: LstmState::zeros(bins, model.hidden()),
        }
    }

    pub fn reset(&mut self) {
        self.s1.reset();
        self.s2.reset();
    }

    pub fn scalars(&self) -> usize {
        self.s1.scalars() + self.s2.scalars()
    }
}

/// Splits a `T × F × 2` read-out into `(real, imaginary)` matrices of shape `F × T`.
pub fn split_mask<T: Real>(y: ArrayView3<T>) -> (Array2<T>, Array2<T>) {
    let re = y.index_axis(Axis(2), 0).t().to_owned();
    let im = y.index_axis(Axis(2), 1).t().to_owned();
    (re, im)
}
