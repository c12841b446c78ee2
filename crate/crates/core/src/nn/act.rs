use ndarray::{Array, Array1, ArrayView, Dimension, Zip};

use super::params::{visit_array, visit_array_mut, Params};
use super::Real;

pub fn relu<T: Real, D: Dimension>(x: ArrayView<T, D>) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real, D: Dimension>(x: ArrayView<T, D>, dy: ArrayView<T, D>) -> Array<T, D> {
    Zip::from(&x)
        .and(&dy)
        .map_collect(|&v, &g| if v > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// `y = x` for `x ≥ 0`, `slope·x` otherwise.
pub fn prelu<T: Real, D: Dimension>(x: ArrayView<T, D>, slope: T) -> Array<T, D> {
    x.mapv(|v| if v >= T::zero() { v } else { slope * v })
}

/// Returns `(dx, dslope)`.
pub fn prelu_backward<T: Real, D: Dimension>(
    x: ArrayView<T, D>,
    slope: T,
    dy: ArrayView<T, D>,
) -> (Array<T, D>, T) {
    let mut dslope = T::zero();
    let dx = Zip::from(&x).and(&dy).map_collect(|&v, &g| {
        if v >= T::zero() {
            g
        } else {
            dslope += g * v;
            slope * g
        }
    });
    (dx, dslope)
}

/// PReLU with a single learnable slope shared by all channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PRelu<T> {
    pub slope: Array1<T>,
}

impl<T: Real> PRelu<T> {
    pub fn new(slope: T) -> Self {
        Self {
            slope: Array1::from_elem(1, slope),
        }
    }

    pub fn value(&self) -> T {
        self.slope[0]
    }
}

impl<T: Real> Params<T> for PRelu<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array(prefix, "slope", &self.slope, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        visit_array_mut(prefix, "slope", &mut self.slope, f);
    }
}
