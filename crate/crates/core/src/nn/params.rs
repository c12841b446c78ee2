use ndarray::{Array, Dimension};

use super::Real;

/// A collection of named parameter tensors visited in a fixed order.
///
/// The visiting order is the storage order used by checkpoints and by the
/// optimizer, so two values of the same type built from the same config
/// always enumerate their tensors identically.
pub trait Params<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<T: Real, D: Dimension>(
    prefix: &str,
    name: &str,
    a: &Array<T, D>,
    f: &mut dyn FnMut(&str, &[usize], &[T]),
) {
    let slice = a.as_slice().expect("parameters are stored in standard layout");
    f(&join(prefix, name), a.shape(), slice);
}

pub(crate) fn visit_array_mut<T: Real, D: Dimension>(
    prefix: &str,
    name: &str,
    a: &mut Array<T, D>,
    f: &mut dyn FnMut(&str, &[usize], &mut [T]),
) {
    let shape = a.shape().to_vec();
    let slice = a
        .as_slice_mut()
        .expect("parameters are stored in standard layout");
    f(&join(prefix, name), &shape, slice);
}

pub fn count_params<T: Real>(p: &impl Params<T>) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, v| n += v.len());
    n
}

/// Flattens every parameter into one vector in visiting order.
pub fn param_vector<T: Real>(p: &impl Params<T>) -> Vec<T> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, v| out.extend_from_slice(v));
    out
}

/// Sets every parameter to `value`; with zero this turns a model-shaped
/// value into an empty gradient accumulator.
pub fn fill_params<T: Real>(p: &mut impl Params<T>, value: T) {
    p.visit_mut("", &mut |_, _, v| v.fill(value));
}

pub fn set_param_vector<T: Real>(p: &mut impl Params<T>, values: &[T]) {
    let mut pos = 0;
    p.visit_mut("", &mut |_, _, v| {
        v.copy_from_slice(&values[pos..pos + v.len()]);
        pos += v.len();
    });
    assert_eq!(pos, values.len(), "parameter vector length mismatch");
}

/// Copies parameters between two structurally identical collections,
/// converting the scalar type.
pub fn copy_params<S: Real, D: Real>(src: &impl Params<S>, dst: &mut impl Params<D>) {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    src.visit("", &mut |name, shape, v| {
        tensors.push((
            name.to_string(),
            shape.to_vec(),
            v.iter().map(|x| x.to_f64().unwrap()).collect(),
        ))
    });
    let mut idx = 0;
    dst.visit_mut("", &mut |name, shape, v| {
        let (src_name, src_shape, data) = &tensors[idx];
        assert_eq!(src_name, name, "parameter order mismatch");
        assert_eq!(src_shape.as_slice(), shape, "parameter shape mismatch for {name}");
        for (d, s) in v.iter_mut().zip(data) {
            *d = D::of(*s);
        }
        idx += 1;
    });
    assert_eq!(idx, tensors.len(), "parameter count mismatch");
}

/// Visits `items` as `prefix.0`, `prefix.1`, ...
pub(crate) fn visit_seq<T: Real, P: Params<T>>(
    prefix: &str,
    items: &[P],
    f: &mut dyn FnMut(&str, &[usize], &[T]),
) {
    for (i, item) in items.iter().enumerate() {
        item.visit(&join(prefix, &i.to_string()), f);
    }
}

pub(crate) fn visit_seq_mut<T: Real, P: Params<T>>(
    prefix: &str,
    items: &mut [P],
    f: &mut dyn FnMut(&str, &[usize], &mut [T]),
) {
    for (i, item) in items.iter_mut().enumerate() {
        item.visit_mut(&join(prefix, &i.to_string()), f);
    }
}
