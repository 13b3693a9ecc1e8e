//! Central finite differences for checking hand-written backward passes.

/// Default step for double-precision checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Estimates `∂f/∂x_k` for every coordinate by `(f(x+h·e_k) − f(x−h·e_k)) / 2h`.
/// `x` is restored before returning.
pub fn central_difference<F>(x: &mut [f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let up = f(x);
        x[k] = orig - h;
        let down = f(x);
        x[k] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute
/// error when both norms are below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let mut x = vec![1.0, -2.0, 0.5];
        let g = central_difference(&mut x, DEFAULT_STEP, |v| v.iter().map(|t| t * t * t).sum());
        let exact: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        assert!(relative_error(&g, &exact, 1e-12) < 1e-9);
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn error_floor() {
        assert_eq!(relative_error(&[0.0], &[1e-14], 1e-10), 1e-14);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 1.0], 1e-10) - 2f64.sqrt()).abs() < 1e-15);
    }
}
