use serde::{Deserialize, Serialize};

use crate::numerics::euclidean;
use crate::{Error, Result};

/// Out-of-distribution test in adapted-feature space. A positive score
/// means "outside the nominal distribution".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OodCriterion {
    Hypersphere {
        center: Vec<f64>,
        radius: f64,
    },
    /// k-NN mean distance to stored nominal vectors.
    Manifold {
        store: Vec<Vec<f64>>,
        k: usize,
    },
}

impl OodCriterion {
    /// Centre = mean of `vectors`, radius = largest distance to it, so every
    /// fitting vector scores `<= 0`.
    pub fn fit_hypersphere(vectors: &[Vec<f64>]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Insufficient("no nominal vectors".into()))?;
        let d = first.len();
        let mut center = vec![0.0; d];
        for v in vectors {
            if v.len() != d {
                return Err(Error::Shape("nominal vectors differ in length".into()));
            }
            for (c, x) in center.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in &mut center {
            *c /= vectors.len() as f64;
        }
        let radius = vectors
            .iter()
            .map(|v| euclidean(v, &center))
            .fold(0.0, f64::max);
        Ok(OodCriterion::Hypersphere { center, radius })
    }

    pub fn manifold(store: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Insufficient("empty nominal store".into()));
        }
        if k == 0 || k > store.len() {
            return Err(Error::InvalidArgument(format!(
                "k must lie in 1..={}, got {k}",
                store.len()
            )));
        }
        let d = store[0].len();
        if store.iter().any(|v| v.len() != d) {
            return Err(Error::Shape("nominal vectors differ in length".into()));
        }
        Ok(OodCriterion::Manifold { store, k })
    }

    pub fn score(&self, f: &[f64]) -> Result<f64> {
        match self {
            OodCriterion::Hypersphere { center, radius } => {
                if center.len() != f.len() {
                    return Err(Error::Shape(format!(
                        "expected {} dims, got {}",
                        center.len(),
                        f.len()
                    )));
                }
                Ok(euclidean(f, center) - radius)
            }
            OodCriterion::Manifold { store, k } => {
                if store.is_empty() {
                    return Err(Error::Insufficient("empty nominal store".into()));
                }
                if store[0].len() != f.len() {
                    return Err(Error::Shape(format!(
                        "expected {} dims, got {}",
                        store[0].len(),
                        f.len()
                    )));
                }
                let mut d: Vec<f64> = store.iter().map(|s| euclidean(s, f)).collect();
                d.sort_by(f64::total_cmp);
                Ok(d[..*k].iter().sum::<f64>() / *k as f64)
            }
        }
    }
}
