//! Central finite differences, used as the independent oracle for every
//! hand-written backward pass.

/// Central-difference gradient of `f` at `params`, perturbing each
/// coordinate by `±step`.
pub fn central_difference(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps
/// coordinates whose true gradient is ~0 from producing spurious ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error over all coordinates, with its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (usize, f64) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
