use super::quantile;
use crate::features::{Map2, Mask};
use crate::{Error, Result};

/// Share of total map mass lying on background positions (0 for an
/// all-zero map).
pub fn background_score_fraction(map: &Map2, fg: &Mask) -> Result<f64> {
    if map.width() != fg.width() || map.height() != fg.height() {
        return Err(Error::Shape(format!(
            "map {}x{} vs mask {}x{}",
            map.width(),
            map.height(),
            fg.width(),
            fg.height()
        )));
    }
    let total = map.sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let bg: f64 = map
        .data()
        .iter()
        .zip(fg.data())
        .filter(|(_, &f)| !f)
        .map(|(v, _)| v)
        .sum();
    Ok(bg / total)
}

/// Intersection-over-union of the defect mask with the map binarized at its
/// own `q`-quantile. Positions strictly above the quantile are flagged, or
/// the maximal positions when the quantile is the maximum. A map of a
/// different size is first resized (nearest neighbour) to the mask.
pub fn localization_overlap(map: &Map2, defect: Option<&Mask>, q: f64) -> Result<f64> {
    let defect = defect
        .ok_or_else(|| Error::Validation("localization overlap needs a defect mask".into()))?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "quantile must lie in [0, 1], got {q}"
        )));
    }
    let map = if map.width() != defect.width() || map.height() != defect.height() {
        map.resize_nearest(defect.height(), defect.width())
    } else {
        map.clone()
    };
    if map.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("localization map".into()));
    }
    let mut sorted = map.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = quantile(&sorted, q);
    let max = sorted[sorted.len() - 1];
    let flagged = |v: f64| if t >= max { v >= max } else { v > t };
    let (mut inter, mut union) = (0usize, 0usize);
    for (&v, &d) in map.data().iter().zip(defect.data()) {
        let p = flagged(v);
        inter += (p && d) as usize;
        union += (p || d) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}
