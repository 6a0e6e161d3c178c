use crate::{Error, Result};

/// Compares the analytic gradient returned by `f` against central finite
/// differences with step `h`.
///
/// `f` maps a point to `(value, gradient)`. The result is the maximum over
/// coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (v0, analytic) = f(point);
    if !v0.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient check at base point".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for a point of dimension {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x).0;
        x[i] = orig - h;
        let down = f(&x).0;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient check at coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[3.0], 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn sum_has_unit_gradient() {
        let err = grad_check(
            |x| (x.iter().sum(), vec![1.0; x.len()]),
            &[0.1, -2.0, 5.0, 7.5],
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = grad_check(|x| (x[0] * x[0], vec![x[0]]), &[3.0], 1e-5).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_is_error() {
        let r = grad_check(|x| (x[0].ln(), vec![1.0 / x[0]]), &[1e-9], 1e-6);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
