use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::params::{visit_array, visit_array_mut, Params};
use super::Real;
use crate::error::{shape_err, Result};

/// Per-time-step affine map `y[:, t] = W·x[:, t] + b`.
pub fn dense<T: Real>(
    x: ArrayView2<T>,
    weight: ArrayView2<T>,
    bias: Option<ArrayView1<T>>,
) -> Result<Array2<T>> {
    if weight.ncols() != x.nrows() {
        return Err(shape_err(format!(
            "dense weight is {}x{} but input has {} channels",
            weight.nrows(),
            weight.ncols(),
            x.nrows()
        )));
    }
    let mut y = weight.dot(&x);
    if let Some(b) = bias {
        if b.len() != weight.nrows() {
            return Err(shape_err("dense bias length differs from output channels"));
        }
        for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    Ok(y)
}

/// Accumulates `dW += dy·xᵀ` and `db += Σ_t dy`, returns `dx = Wᵀ·dy`.
pub fn dense_backward<T: Real>(
    x: ArrayView2<T>,
    weight: ArrayView2<T>,
    dy: ArrayView2<T>,
    grad_weight: &mut Array2<T>,
    grad_bias: Option<&mut Array1<T>>,
) -> Array2<T> {
    general_mat_mul(T::one(), &dy, &x.t(), T::one(), grad_weight);
    if let Some(gb) = grad_bias {
        *gb += &dy.sum_axis(Axis(1));
    }
    weight.t().dot(&dy)
}

/// Dense layer, also used for 1×1 convolutions (where the bias is optional).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: bias.then(|| Array1::zeros(output)),
        }
    }

    /// Weights uniform in ±sqrt(1/fan_in), zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let mut layer = Self::zeros(input, output, bias);
        layer
            .weight
            .mapv_inplace(|_| T::of(rng.gen_range(-bound..=bound)));
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        dense(x, self.weight.view(), self.bias.as_ref().map(|b| b.view()))
    }

    /// Single-column forward pass for streaming use.
    pub fn forward_vec(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        if self.weight.ncols() != x.len() {
            return Err(shape_err(format!(
                "dense weight is {}x{} but input has {} channels",
                self.weight.nrows(),
                self.weight.ncols(),
                x.len()
            )));
        }
        let y = self.weight.dot(&x);
        Ok(match &self.bias {
            Some(b) => y + b,
            None => y,
        })
    }

    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Dense<T>) -> Array2<T> {
        dense_backward(
            x,
            self.weight.view(),
            dy,
            &mut grad.weight,
            grad.bias.as_mut(),
        )
    }
}

impl<T: Real> Params<T> for Dense<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array(prefix, "weight", &self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(prefix, "bias", b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_array_mut(prefix, "weight", &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            visit_array_mut(prefix, "bias", b, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_weight_passes_input() {
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]];
        let w = Array2::<f64>::eye(2);
        let b = Array1::zeros(2);
        let y = dense(x.view(), w.view(), Some(b.view())).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_arithmetic() {
        let x = array![[1.0], [2.0]];
        let w = array![[1.0, 1.0]];
        let b = array![1.0];
        let y = dense(x.view(), w.view(), Some(b.view())).unwrap();
        assert_eq!(y, array![[4.0]]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = Array2::<f64>::zeros((3, 2));
        let w = Array2::<f64>::zeros((2, 2));
        assert!(dense(x.view(), w.view(), None).is_err());
    }
}
