//! Procedural toy datasets for tests, benchmarks and demos.

use std::path::Path;

use crate::dataprep::{DatasetManifest, SampleRecord};
use crate::features::{Image, Mask};
use crate::{Label, Result, RngStream};

/// L-shaped object with its corner at `(top, left)`: a vertical arm of
/// height `arm` and a horizontal foot of width `foot`, both `thick` wide.
pub fn l_shape(
    size: usize,
    top: usize,
    left: usize,
    arm: usize,
    foot: usize,
    thick: usize,
) -> Mask {
    Mask::from_fn(size, size, |r, c| {
        let vertical = r >= top && r < top + arm && c >= left && c < left + thick;
        let horizontal = r >= top + arm - thick && r < top + arm && c >= left && c < left + foot;
        vertical || horizontal
    })
}

/// Axis-aligned square of side `side` at `(top, left)` in a `width x height` frame.
pub fn square(width: usize, height: usize, top: usize, left: usize, side: usize) -> Mask {
    Mask::from_fn(width, height, |r, c| {
        r >= top && r < top + side && c >= left && c < left + side
    })
}

/// Gray image: foreground pixels near `fg_level`, the rest near `bg_level`,
/// with i.i.d. Gaussian noise of standard deviation `noise` gray levels.
pub fn render(mask: &Mask, fg_level: f64, bg_level: f64, noise: f64, rng: &mut RngStream) -> Image {
    let data = mask
        .data()
        .iter()
        .map(|&on| {
            let base = if on { fg_level } else { bg_level };
            (base + noise * rng.normal()).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::gray(mask.width(), mask.height(), data).expect("mask dims")
}

/// Paints a `side x side` patch of vertical stripes inside the foreground:
/// even columns brightened and odd columns darkened by `amplitude` gray
/// levels. Returns the defective image and the defect mask.
pub fn stripe_defect(
    image: &Image,
    fg: &Mask,
    side: usize,
    amplitude: f64,
    rng: &mut RngStream,
) -> (Image, Mask) {
    let mut out = image.clone();
    let mut defect = Mask::filled(fg.width(), fg.height(), false);
    let cells: Vec<(usize, usize)> = (0..fg.height())
        .flat_map(|r| (0..fg.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| fg.get(r, c))
        .collect();
    if cells.is_empty() {
        return (out, defect);
    }
    let (r0, c0) = cells[rng.below(cells.len() as u64) as usize];
    let half = side / 2;
    for r in r0.saturating_sub(half)..(r0 + side - half).min(fg.height()) {
        for c in c0.saturating_sub(half)..(c0 + side - half).min(fg.width()) {
            if fg.get(r, c) {
                let delta = if c % 2 == 0 { amplitude } else { -amplitude };
                out.pixel_mut(r, c)
                    .iter_mut()
                    .for_each(|p| *p = (*p as f64 + delta).round().clamp(0.0, 255.0) as u8);
                defect.set(r, c, true);
            }
        }
    }
    (out, defect)
}

/// In-memory sample destined for [`write_dataset`].
#[derive(Debug, Clone)]
pub struct ToySample {
    pub sample_id: String,
    pub object_id: String,
    pub label: Label,
    pub image: Image,
    pub mask: Option<Mask>,
    pub defect_mask: Option<Mask>,
}

/// Writes samples as PNG files under `dir` and returns the manifest (also
/// written to `dir/manifest.jsonl`).
pub fn write_dataset(dir: &Path, samples: &[ToySample]) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let image = Path::new("images").join(format!("{}.png", s.sample_id));
        s.image.save_png(&dir.join(&image))?;
        let mask = match &s.mask {
            Some(m) => {
                let p = Path::new("masks").join(format!("{}.png", s.sample_id));
                m.to_image().save_png(&dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        let defect_mask = match &s.defect_mask {
            Some(m) => {
                let p = Path::new("defects").join(format!("{}.png", s.sample_id));
                m.to_image().save_png(&dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        records.push(SampleRecord {
            sample_id: s.sample_id.clone(),
            object_id: s.object_id.clone(),
            label: s.label,
            image,
            mask,
            defect_mask,
        });
    }
    let manifest = DatasetManifest::new(dir, records);
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Manifest without image files: `nominal_objects` and `anomalous_objects`
/// objects with `per_object` records each. Useful with detectors that never
/// read pixels.
pub fn label_only_manifest(
    nominal_objects: usize,
    anomalous_objects: usize,
    per_object: usize,
) -> DatasetManifest {
    let mut records = Vec::new();
    let groups = [
        (Label::Nominal, nominal_objects, "n"),
        (Label::Anomalous, anomalous_objects, "a"),
    ];
    for (label, count, tag) in groups {
        for o in 0..count {
            for i in 0..per_object {
                records.push(SampleRecord {
                    sample_id: format!("{tag}{o:04}_{i:03}"),
                    object_id: format!("{tag}{o:04}"),
                    label,
                    image: format!("{tag}{o:04}_{i:03}.png").into(),
                    mask: None,
                    defect_mask: None,
                });
            }
        }
    }
    DatasetManifest::new(".", records)
}
