use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SampleRecord};
use crate::numerics::RngStream;
use crate::{Error, Result};

/// Train / threshold / inference partitions, disjoint by object id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreeWaySplit {
    pub train: Vec<SampleRecord>,
    pub threshold_part: Vec<SampleRecord>,
    pub inference_part: Vec<SampleRecord>,
}

impl ThreeWaySplit {
    pub fn partitions(&self) -> [&[SampleRecord]; 3] {
        [&self.train, &self.threshold_part, &self.inference_part]
    }
}

/// Object-level split.
///
/// An object is anomalous when any of its records is. Anomalous objects are
/// shuffled and halved, the threshold part taking the extra one for odd
/// counts. Each test partition then receives the same number `m` of nominal
/// objects and the remaining nominal objects train the model.
///
/// Without `nominal_train_fraction`, `m` equals the threshold part's
/// anomalous object count when that leaves at least one nominal object for
/// training, and `floor((N - 1) / 2)` otherwise. With a fraction `f`,
/// `round(f N)` (at least 1) nominal objects train and the rest is shared
/// equally, any odd one going back to training.
pub fn three_way_split(
    manifest: &DatasetManifest,
    seed: u64,
    nominal_train_fraction: Option<f64>,
) -> Result<ThreeWaySplit> {
    let mut objects: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in &manifest.records {
        objects.entry(r.object_id.as_str()).or_default().push(r);
    }
    let (mut anomalous, mut nominal): (Vec<&str>, Vec<&str>) = objects
        .keys()
        .copied()
        .partition(|id| objects[id].iter().any(|r| r.label.is_anomalous()));
    if anomalous.len() < 2 {
        return Err(Error::Insufficient(format!(
            "need at least 2 anomalous objects to halve, found {}",
            anomalous.len()
        )));
    }
    let n = nominal.len();
    if n < 3 {
        return Err(Error::Insufficient(format!(
            "need at least 3 nominal objects (train + two test partitions), found {n}"
        )));
    }
    let root = RngStream::new(seed);
    root.fork(1).shuffle(&mut anomalous);
    root.fork(2).shuffle(&mut nominal);

    let a_thr = anomalous.len().div_ceil(2);
    let m = match nominal_train_fraction {
        None => {
            if 2 * a_thr < n {
                a_thr
            } else {
                (n - 1) / 2
            }
        }
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "nominal_train_fraction must lie in (0, 1), got {f}"
                )));
            }
            let n_train = ((f * n as f64).round() as usize).max(1);
            let m = n.saturating_sub(n_train) / 2;
            if m == 0 {
                return Err(Error::Insufficient(format!(
                    "fraction {f} leaves no nominal objects for the test partitions"
                )));
            }
            m
        }
    };

    let collect = |ids: &[&str]| -> Vec<SampleRecord> {
        let mut v: Vec<SampleRecord> = ids
            .iter()
            .flat_map(|id| objects[id].iter().map(|r| (*r).clone()))
            .collect();
        v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        v
    };
    let mut thr_ids = anomalous[..a_thr].to_vec();
    thr_ids.extend_from_slice(&nominal[..m]);
    let mut inf_ids = anomalous[a_thr..].to_vec();
    inf_ids.extend_from_slice(&nominal[m..2 * m]);
    Ok(ThreeWaySplit {
        train: collect(&nominal[2 * m..]),
        threshold_part: collect(&thr_ids),
        inference_part: collect(&inf_ids),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;

    fn rec(id: &str, obj: &str, label: Label) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            object_id: obj.into(),
            label,
            image: format!("{id}.png").into(),
            mask: None,
            defect_mask: None,
        }
    }

    fn manifest(anom: usize, nom: usize) -> DatasetManifest {
        let mut v = Vec::new();
        for i in 0..anom {
            v.push(rec(&format!("a{i}"), &format!("A{i}"), Label::Anomalous));
        }
        for i in 0..nom {
            v.push(rec(&format!("n{i}"), &format!("N{i}"), Label::Nominal));
        }
        DatasetManifest::new("/x", v)
    }

    #[test]
    fn single_object_fails() {
        let m = DatasetManifest::new(
            "/x",
            vec![
                rec("a", "o", Label::Anomalous),
                rec("b", "o", Label::Nominal),
                rec("c", "o", Label::Anomalous),
            ],
        );
        assert!(three_way_split(&m, 0, None).is_err());
    }

    #[test]
    fn four_anomalous_two_two_stable() {
        let m = manifest(4, 10);
        let s = three_way_split(&m, 7, None).unwrap();
        let count = |p: &[SampleRecord]| p.iter().filter(|r| r.label.is_anomalous()).count();
        assert_eq!(count(&s.threshold_part), 2);
        assert_eq!(count(&s.inference_part), 2);
        assert_eq!(s.threshold_part.len(), 4);
        assert_eq!(s.inference_part.len(), 4);
        assert_eq!(s.train.len(), 6);
        assert_eq!(s, three_way_split(&m, 7, None).unwrap());
    }

    #[test]
    fn odd_count_extra_goes_to_threshold() {
        let s = three_way_split(&manifest(5, 20), 1, None).unwrap();
        let count = |p: &[SampleRecord]| p.iter().filter(|r| r.label.is_anomalous()).count();
        assert_eq!((count(&s.threshold_part), count(&s.inference_part)), (3, 2));
    }

    #[test]
    fn fallback_when_few_nominal() {
        let s = three_way_split(&manifest(10, 6), 0, None).unwrap();
        let nom = |p: &[SampleRecord]| p.iter().filter(|r| !r.label.is_anomalous()).count();
        assert_eq!(nom(&s.threshold_part), 2);
        assert_eq!(nom(&s.inference_part), 2);
        assert_eq!(s.train.len(), 2);
    }

    #[test]
    fn explicit_fraction() {
        let s = three_way_split(&manifest(4, 10), 0, Some(0.5)).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.threshold_part.len(), 2 + 2);
        assert!(three_way_split(&manifest(4, 10), 0, Some(1.0)).is_err());
        assert!(three_way_split(&manifest(4, 3), 0, Some(0.9)).is_err());
    }

    #[test]
    fn mixed_object_counts_as_anomalous() {
        let mut m = manifest(2, 5);
        m.records.push(rec("a0b", "A0", Label::Nominal));
        let s = three_way_split(&m, 3, None).unwrap();
        assert!(s.train.iter().all(|r| r.object_id != "A0"));
    }
}
