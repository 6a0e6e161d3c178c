use std::collections::HashSet;

use adw_core::dataprep::{
    center_embed, load_manifest, measure_canvas, measure_canvas_masks, rotate_augment,
    rotate_image, rotate_mask, three_way_split, CanvasSpec,
};
use adw_core::features::{Image, Mask};
use adw_core::toy::{label_only_manifest, write_dataset, ToySample};
use adw_core::{Label, RngStream};
use proptest::prelude::*;

fn random_blob(rng: &mut RngStream) -> (Image, Mask) {
    let (w, h) = (rng.int_range(1, 30), rng.int_range(1, 30));
    let (r0, c0) = (rng.int_range(0, h - 1), rng.int_range(0, w - 1));
    let (r1, c1) = (rng.int_range(r0, h - 1), rng.int_range(c0, w - 1));
    let mut keep = rng.fork(7);
    let mut m = Mask::from_fn(w, h, |r, c| r >= r0 && r <= r1 && c >= c0 && c <= c1);
    let corners = [(r0, c0), (r1, c1)];
    for r in r0..=r1 {
        for c in c0..=c1 {
            if !corners.contains(&(r, c)) && keep.uniform() < 0.4 {
                m.set(r, c, false);
            }
        }
    }
    let data = (0..w * h).map(|_| rng.below(256) as u8).collect();
    (Image::gray(w, h, data).unwrap(), m)
}

#[test]
fn center_embedding_properties_on_random_masks() {
    let mut rng = RngStream::new(11);
    let cases: Vec<(Image, Mask)> = (0..1000).map(|_| random_blob(&mut rng)).collect();
    let canvas = measure_canvas_masks(cases.iter().map(|(_, m)| ("x", m))).unwrap();
    let (mw, mh) = cases.iter().fold((0, 0), |(w, h), (_, m)| {
        let b = m.bbox().unwrap();
        (w.max(b.width()), h.max(b.height()))
    });
    assert_eq!(
        canvas,
        CanvasSpec {
            width: mw,
            height: mh
        }
    );

    for (img, m) in &cases {
        let (e_img, e_mask) = center_embed(img, m, canvas).unwrap();
        let b = e_mask.bbox().unwrap();
        let (cx, cy) = b.center();
        assert!((cx - (canvas.width as f64 - 1.0) / 2.0).abs() <= 1.0);
        assert!((cy - (canvas.height as f64 - 1.0) / 2.0).abs() <= 1.0);
        assert_eq!(e_mask.count(), m.count());

        let mut before: Vec<u8> = foreground_pixels(img, m);
        let mut after: Vec<u8> = foreground_pixels(&e_img, &e_mask);
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);

        let (again_img, again_mask) = center_embed(&e_img, &e_mask, canvas).unwrap();
        assert_eq!(again_img, e_img);
        assert_eq!(again_mask, e_mask);
    }
}

fn foreground_pixels(img: &Image, m: &Mask) -> Vec<u8> {
    let mut v = Vec::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) {
                v.extend_from_slice(img.pixel(r, c));
            }
        }
    }
    v
}

#[test]
fn splits_never_leak_objects() {
    let mut rng = RngStream::new(12);
    for seed in 0..1000 {
        let anomalous = rng.int_range(2, 9);
        let nominal = rng.int_range(3, 14);
        let manifest = label_only_manifest(nominal, anomalous, 120);
        let s = three_way_split(&manifest, seed, None).unwrap();
        let objects = |part: &[adw_core::dataprep::SampleRecord]| -> HashSet<String> {
            part.iter().map(|r| r.object_id.clone()).collect()
        };
        let [train, thr, inf] = s.partitions().map(objects);
        assert!(train.is_disjoint(&thr) && train.is_disjoint(&inf) && thr.is_disjoint(&inf));
        assert_eq!(train.len() + thr.len() + inf.len(), anomalous + nominal);
        let anom = |ids: &HashSet<String>| ids.iter().filter(|i| i.starts_with('a')).count();
        assert!(anom(&thr).abs_diff(anom(&inf)) <= 1);
        assert_eq!(anom(&train), 0);
        assert_eq!(thr.len() - anom(&thr), inf.len() - anom(&inf));
        assert_eq!(
            s.train.len() + s.threshold_part.len() + s.inference_part.len(),
            manifest.records.len()
        );
    }
}

proptest! {
    #[test]
    fn split_is_deterministic_and_grouped(nominal in 3usize..12, anomalous in 2usize..8, per in 1usize..4, seed: u64) {
        let m = label_only_manifest(nominal, anomalous, per);
        let a = three_way_split(&m, seed, None).unwrap();
        prop_assert_eq!(&a, &three_way_split(&m, seed, None).unwrap());
        for part in a.partitions() {
            let ids: HashSet<&str> = part.iter().map(|r| r.object_id.as_str()).collect();
            for id in ids {
                prop_assert_eq!(part.iter().filter(|r| r.object_id == id).count(), per);
            }
        }
    }

    #[test]
    fn canvas_never_shrinks_when_adding_masks(dims in prop::collection::vec((1usize..20, 1usize..20), 1..8), extra in (1usize..20, 1usize..20)) {
        let masks: Vec<Mask> = dims.iter().map(|&(w, h)| Mask::filled(w, h, true)).collect();
        let base = measure_canvas_masks(masks.iter().map(|m| ("m", m))).unwrap();
        let more = Mask::filled(extra.0, extra.1, true);
        let grown = measure_canvas_masks(masks.iter().chain([&more]).map(|m| ("m", m))).unwrap();
        prop_assert!(grown.width >= base.width && grown.height >= base.height);
    }

    #[test]
    fn four_quarter_turns_are_identity(w in 1usize..9, h in 1usize..9, seed: u64) {
        let mut rng = RngStream::new(seed);
        let img = Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap();
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate_image(&cur, 1);
        }
        prop_assert_eq!(&cur, &img);
        prop_assert_eq!(rotate_image(&rotate_image(&img, 1), 1), rotate_image(&img, 2));
    }
}

#[test]
fn quarter_turn_is_clockwise() {
    let img = Image::gray(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
    let r = rotate_image(&img, 1);
    assert_eq!((r.width(), r.height()), (2, 3));
    assert_eq!(r.data(), &[4, 1, 5, 2, 6, 3]);
    let m = Mask::new(3, 2, vec![true, false, false, false, false, false]).unwrap();
    assert!(rotate_mask(&m, 1).get(0, 1));
}

fn toy_files(dir: &std::path::Path) -> adw_core::dataprep::DatasetManifest {
    let samples: Vec<ToySample> = [(4, 6), (8, 2)]
        .iter()
        .enumerate()
        .map(|(i, &(bw, bh))| {
            let mask = Mask::from_fn(12, 12, |r, c| r >= 1 && r < 1 + bh && c >= 2 && c < 2 + bw);
            ToySample {
                sample_id: format!("s{i}"),
                object_id: format!("o{i}"),
                label: if i == 0 {
                    Label::Nominal
                } else {
                    Label::Anomalous
                },
                image: Image::gray(12, 12, (0..144).map(|v| v as u8).collect()).unwrap(),
                mask: Some(mask.clone()),
                defect_mask: (i == 1).then_some(mask),
            }
        })
        .collect();
    write_dataset(dir, &samples).unwrap()
}

#[test]
fn manifest_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let written = toy_files(dir.path());
    let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded.records, written.records);
    loaded.check_files().unwrap();
    assert_eq!(
        measure_canvas(&loaded).unwrap(),
        CanvasSpec {
            width: 8,
            height: 6
        }
    );
}

#[test]
fn rotate_augment_writes_lossless_copies() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_files(dir.path());
    let out = rotate_augment(&m, &[90, 180, 270], true, std::path::Path::new("rot")).unwrap();
    assert_eq!(out.records.len(), 8);
    for r in &m.records {
        let img = m.load_image(r).unwrap();
        let mask = m.load_mask(r).unwrap().unwrap();
        for (angle, t) in [(90, 1), (180, 2), (270, 3)] {
            let copy = out
                .records
                .iter()
                .find(|c| c.sample_id == format!("{}_rot{angle}", r.sample_id))
                .unwrap();
            assert_eq!(copy.object_id, r.object_id);
            assert_eq!(copy.label, r.label);
            assert_eq!(out.load_image(copy).unwrap(), rotate_image(&img, t));
            assert_eq!(out.load_mask(copy).unwrap().unwrap(), rotate_mask(&mask, t));
            assert_eq!(copy.defect_mask.is_some(), r.defect_mask.is_some());
        }
    }
    assert!(rotate_augment(&m, &[45], true, std::path::Path::new("rot")).is_err());
}
