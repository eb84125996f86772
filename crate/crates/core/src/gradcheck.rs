//! Central finite differences, used to check analytic gradients.

/// Central-difference gradient of `loss` with respect to every element of
/// every tensor exposed by `params`, perturbing in place and restoring.
pub fn numerical_gradient<M, P, L>(model: &mut M, params: P, loss: L, step: f64) -> Vec<Vec<f64>>
where
    P: Fn(&mut M) -> Vec<&mut [f64]>,
    L: Fn(&M) -> f64,
{
    let lens: Vec<usize> = params(model).iter().map(|t| t.len()).collect();
    let mut out = Vec::with_capacity(lens.len());
    for (t, &len) in lens.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params(model)[t][i];
            params(model)[t][i] = orig + step;
            let plus = loss(model);
            params(model)[t][i] = orig - step;
            let minus = loss(model);
            params(model)[t][i] = orig;
            *gi = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Gradients whose magnitude is below this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut x = vec![1.0, -2.0, 0.5];
        let g = numerical_gradient(&mut x, |v| vec![v.as_mut_slice()], |v| v.iter().map(|a| a * a).sum(), 1e-5);
        for (gi, xi) in g[0].iter().zip([1.0, -2.0, 0.5]) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-6);
    }
}
