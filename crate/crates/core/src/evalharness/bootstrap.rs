use crate::numerics::RngStream;
use crate::{Error, Result};

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean computed as an offset from the first value, which is exact for
/// constant input.
fn shifted_mean(v: impl Iterator<Item = f64> + Clone, first: f64, n: usize) -> f64 {
    first + v.map(|x| x - first).sum::<f64>() / n as f64
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Insufficient(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(
            "bootstrap needs resamples >= 1 and level in (0, 1)".into(),
        ));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("bootstrap value {i}")));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let draws: Vec<f64> = (0..n)
                .map(|_| values[rng.below(n as u64) as usize])
                .collect();
            shifted_mean(draws.iter().copied(), draws[0], n)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((
        quantile(&means, alpha / 2.0),
        quantile(&means, 1.0 - alpha / 2.0),
    ))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    shifted_mean(values.iter().copied(), values[0], values.len())
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values() {
        let ci = bootstrap_ci(&[0.1; 7], 500, 0.95, &mut RngStream::new(0)).unwrap();
        assert_eq!(ci, (0.1, 0.1));
    }

    #[test]
    fn widens_with_level() {
        let v = [0.8, 0.85, 0.9, 0.7, 0.95, 0.88];
        let a = bootstrap_ci(&v, 2000, 0.8, &mut RngStream::new(3)).unwrap();
        let b = bootstrap_ci(&v, 2000, 0.95, &mut RngStream::new(3)).unwrap();
        assert!(b.0 <= a.0 && a.1 <= b.1);
        assert!(a.0 <= mean(&v) && mean(&v) <= a.1);
    }

    #[test]
    fn too_few() {
        assert!(bootstrap_ci(&[1.0], 10, 0.95, &mut RngStream::new(0)).is_err());
        assert!(bootstrap_ci(&[1.0, 2.0], 10, 1.0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert!((quantile(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn std_matches_definition() {
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
