/// Result of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Gradients whose magnitude is below this are compared in absolute terms.
const ABS_FLOOR: f64 = 1e-6;

/// Central finite differences of `loss` at `point` (step `eps`) against
/// `analytic`, over `indices` (all coordinates when `None`).
///
/// Per-coordinate relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    indices: Option<&[usize]>,
    tolerance: f64,
) -> GradReport {
    assert_eq!(point.len(), analytic.len());
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tolerance,
    };
    for &i in indices {
        let orig = x[i];
        x[i] = orig + eps;
        let up = loss(&x);
        x[i] = orig - eps;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_polynomial() {
        let f = |x: &[f64]| x[0] * x[0] * x[1] + x[1].sin();
        let p = [0.7, -0.3];
        let g = [2.0 * 0.7 * -0.3, 0.49 + (-0.3f64).cos()];
        let r = grad_check(f, &p, &g, 1e-5, None, 1e-6);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = grad_check(f, &[1.0], &[1.0], 1e-5, None, 1e-4);
        assert!(!r.passed());
    }
}
