#![allow(dead_code)]

use std::path::Path;

use adw_core::dataprep::DatasetManifest;
use adw_core::toy::{l_shape, render, stripe_defect, write_dataset, ToySample};
use adw_core::{Label, RngStream};

/// L-shaped parts on a 24-pixel frame; anomalous parts carry a striped
/// defect. Masks and defect masks are written alongside the images.
pub fn toy_dataset(
    dir: &Path,
    nominal: usize,
    anomalous: usize,
    per_object: usize,
    seed: u64,
) -> DatasetManifest {
    let fg = l_shape(24, 5, 6, 14, 12, 4);
    let mut rng = RngStream::new(seed);
    let mut samples = Vec::new();
    for (label, count, tag) in [
        (Label::Nominal, nominal, "n"),
        (Label::Anomalous, anomalous, "a"),
    ] {
        for o in 0..count {
            for i in 0..per_object {
                let img = render(&fg, 180.0, 30.0, 6.0, &mut rng);
                let (image, defect) = if label.is_anomalous() {
                    let (img, d) = stripe_defect(&img, &fg, 6, 60.0, &mut rng);
                    (img, Some(d))
                } else {
                    (img, None)
                };
                samples.push(ToySample {
                    sample_id: format!("{tag}{o:02}_{i}"),
                    object_id: format!("{tag}{o:02}"),
                    label,
                    image,
                    mask: Some(fg.clone()),
                    defect_mask: defect,
                });
            }
        }
    }
    write_dataset(dir, &samples).unwrap()
}

pub fn adw(args: &[&str]) -> i32 {
    adw_cli::run(std::iter::once("adw").chain(args.iter().copied()))
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
