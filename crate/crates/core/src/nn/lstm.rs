use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use super::params::{visit_array, visit_array_mut, Params};
use super::Real;
use crate::error::{shape_err, Result};

/// Unidirectional LSTM layer evaluated over a batch of independent sequences.
///
/// Gate order along the `4H` axis is input, forget, cell, output. The weight
/// acts on the concatenation `[x_t, h_{t-1}]`, so it stores `4H × (I + H)`
/// values plus a single `4H` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Hidden and cell state for a batch, `B × H` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Array2<T>,
    pub c: Array2<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(T::zero());
        self.c.fill(T::zero());
    }

    /// Number of stored scalars.
    pub fn scalars(&self) -> usize {
        self.h.len() + self.c.len()
    }
}

#[derive(Clone, Debug)]
struct StepCache<T> {
    z: Array2<T>,
    gates: Array2<T>,
    c_prev: Array2<T>,
    tanh_c: Array2<T>,
}

/// Per-step activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    steps: Vec<StepCache<T>>,
}

impl<T: Real> Lstm<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            weight: Array2::zeros((4 * hidden, input + hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    /// Weights uniform in ±sqrt(1/H), forget-gate bias 1, other biases 0.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        let mut layer = Self::zeros(input, hidden);
        layer
            .weight
            .mapv_inplace(|_| T::of(rng.gen_range(-bound..=bound)));
        layer.bias.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        layer
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols() - self.hidden()
    }

    fn step_inner(
        &self,
        x: ArrayView2<T>,
        state: &mut LstmState<T>,
        keep: bool,
    ) -> Option<StepCache<T>> {
        let (batch, input) = x.dim();
        let hidden = self.hidden();
        let mut z = Array2::zeros((batch, input + hidden));
        z.slice_mut(s![.., ..input]).assign(&x);
        z.slice_mut(s![.., input..]).assign(&state.h);
        let mut gates = Array2::zeros((batch, 4 * hidden));
        for mut row in gates.axis_iter_mut(Axis(0)) {
            row.assign(&self.bias);
        }
        general_mat_mul(T::one(), &z, &self.weight.t(), T::one(), &mut gates);
        let c_prev = if keep { Some(state.c.clone()) } else { None };
        let mut tanh_c = Array2::zeros((batch, hidden));
        for b in 0..batch {
            let mut g = gates.row_mut(b);
            let g = g.as_slice_mut().unwrap();
            let c = state.c.row_mut(b).into_slice().unwrap();
            let h = state.h.row_mut(b).into_slice().unwrap();
            let tc = tanh_c.row_mut(b).into_slice().unwrap();
            let (ifg, rest) = g.split_at_mut(2 * hidden);
            let (c_g, o_g) = rest.split_at_mut(hidden);
            T::sigmoid_slice(ifg);
            T::tanh_slice(c_g);
            T::sigmoid_slice(o_g);
            let (i_g, f_g) = ifg.split_at(hidden);
            for j in 0..hidden {
                c[j] = f_g[j] * c[j] + i_g[j] * c_g[j];
            }
            tc.copy_from_slice(c);
            T::tanh_slice(tc);
            for j in 0..hidden {
                h[j] = o_g[j] * tc[j];
            }
        }
        c_prev.map(|c_prev| StepCache {
            z,
            gates,
            c_prev,
            tanh_c,
        })
    }

    fn check_input(&self, input: usize, batch: usize, state: &LstmState<T>) -> Result<()> {
        if input != self.input_dim() {
            return Err(shape_err(format!(
                "lstm expects {} input features, got {input}",
                self.input_dim()
            )));
        }
        if state.h.dim() != (batch, self.hidden()) || state.c.dim() != (batch, self.hidden()) {
            return Err(shape_err("lstm state shape differs from batch × hidden"));
        }
        Ok(())
    }

    /// Advances `state` by one frame; `x` is `B × I`. Returns the new `h`.
    pub fn step(&self, x: ArrayView2<T>, state: &mut LstmState<T>) -> Result<Array2<T>> {
        self.check_input(x.ncols(), x.nrows(), state)?;
        self.step_inner(x, state, false);
        Ok(state.h.clone())
    }

    /// Runs the layer over `x: T × B × I`, returning `T × B × H` outputs.
    /// `state` is advanced to the final frame.
    pub fn forward(
        &self,
        x: ArrayView3<T>,
        state: &mut LstmState<T>,
        keep_cache: bool,
    ) -> Result<(Array3<T>, Option<LstmCache<T>>)> {
        let (frames, batch, input) = x.dim();
        self.check_input(input, batch, state)?;
        let mut out = Array3::zeros((frames, batch, self.hidden()));
        let mut steps = Vec::with_capacity(if keep_cache { frames } else { 0 });
        for t in 0..frames {
            if let Some(cache) = self.step_inner(x.index_axis(Axis(0), t), state, keep_cache) {
                steps.push(cache);
            }
            out.index_axis_mut(Axis(0), t).assign(&state.h);
        }
        Ok((out, keep_cache.then_some(LstmCache { steps })))
    }

    /// Backpropagation through time from output gradients `dy: T × B × H`.
    /// Accumulates into `grad` and returns the input gradient `T × B × I`.
    pub fn backward(
        &self,
        cache: &LstmCache<T>,
        dy: ArrayView3<T>,
        grad: &mut Lstm<T>,
    ) -> Array3<T> {
        let (frames, batch, _) = dy.dim();
        let hidden = self.hidden();
        let input = self.input_dim();
        let one = T::one();
        let mut dx = Array3::zeros((frames, batch, input));
        let mut dh_next = Array2::<T>::zeros((batch, hidden));
        let mut dc_next = Array2::<T>::zeros((batch, hidden));
        let mut da = Array2::<T>::zeros((batch, 4 * hidden));
        for t in (0..frames).rev() {
            let step = &cache.steps[t];
            let dy_t = dy.index_axis(Axis(0), t);
            for b in 0..batch {
                for j in 0..hidden {
                    let i_g = step.gates[[b, j]];
                    let f_g = step.gates[[b, hidden + j]];
                    let c_g = step.gates[[b, 2 * hidden + j]];
                    let o_g = step.gates[[b, 3 * hidden + j]];
                    let tc = step.tanh_c[[b, j]];
                    let dh = dy_t[[b, j]] + dh_next[[b, j]];
                    let dc = dc_next[[b, j]] + dh * o_g * (one - tc * tc);
                    let d_o = dh * tc;
                    let d_i = dc * c_g;
                    let d_g = dc * i_g;
                    let d_f = dc * step.c_prev[[b, j]];
                    dc_next[[b, j]] = dc * f_g;
                    da[[b, j]] = d_i * i_g * (one - i_g);
                    da[[b, hidden + j]] = d_f * f_g * (one - f_g);
                    da[[b, 2 * hidden + j]] = d_g * (one - c_g * c_g);
                    da[[b, 3 * hidden + j]] = d_o * o_g * (one - o_g);
                }
            }
            general_mat_mul(one, &da.t(), &step.z, one, &mut grad.weight);
            grad.bias += &da.sum_axis(Axis(0));
            let dz = da.dot(&self.weight);
            dx.index_axis_mut(Axis(0), t)
                .assign(&dz.slice(s![.., ..input]));
            dh_next.assign(&dz.slice(s![.., input..]));
        }
        dx
    }
}

impl<T: Real> Params<T> for Lstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array(prefix, "weight", &self.weight, f);
        visit_array(prefix, "bias", &self.bias, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_array_mut(prefix, "weight", &mut self.weight, f);
        visit_array_mut(prefix, "bias", &mut self.bias, f);
    }
}

/// Single-sequence LSTM over a `C × T` input. Returns the `H × T` outputs
/// together with the final hidden and cell vectors.
pub fn lstm_sequence<T: Real>(
    x: ArrayView2<T>,
    layer: &Lstm<T>,
    h0: Array1<T>,
    c0: Array1<T>,
) -> Result<(Array2<T>, Array1<T>, Array1<T>)> {
    let (channels, frames) = x.dim();
    let hidden = layer.hidden();
    if h0.len() != hidden || c0.len() != hidden {
        return Err(shape_err("initial state length differs from hidden size"));
    }
    let seq = x.t().as_standard_layout().into_owned().into_shape((frames, 1, channels)).unwrap();
    let mut state = LstmState {
        h: h0.into_shape((1, hidden)).unwrap(),
        c: c0.into_shape((1, hidden)).unwrap(),
    };
    let (out, _) = layer.forward(seq.view(), &mut state, false)?;
    let out = out.index_axis(Axis(1), 0).t().to_owned();
    Ok((
        out,
        state.h.row(0).to_owned(),
        state.c.row(0).to_owned(),
    ))
}
