use std::path::{Path, PathBuf};

use super::{CanvasSpec, DatasetManifest, SampleRecord};
use crate::features::{Image, Mask};
use crate::{Error, Result};

fn check_dims(image: &Image, mask: &Mask) -> Result<()> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::Shape(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

/// Zeroes every background pixel (all channels).
pub fn apply_mask(image: &Image, fg: &Mask) -> Result<Image> {
    check_dims(image, fg)?;
    let ch = image.channels();
    let mut out = image.clone();
    for (px, &keep) in out.data_mut().chunks_mut(ch).zip(fg.data()) {
        if !keep {
            px.fill(0);
        }
    }
    Ok(out)
}

/// Componentwise maximum of the mask bounding-box sizes.
pub fn measure_canvas_masks<'a>(
    masks: impl IntoIterator<Item = (&'a str, &'a Mask)>,
) -> Result<CanvasSpec> {
    let mut canvas = CanvasSpec {
        width: 0,
        height: 0,
    };
    let mut any = false;
    for (id, m) in masks {
        let bb = m
            .bbox()
            .ok_or_else(|| Error::Validation(format!("sample {id:?} has an empty mask")))?;
        canvas.width = canvas.width.max(bb.width());
        canvas.height = canvas.height.max(bb.height());
        any = true;
    }
    if !any {
        return Err(Error::Insufficient("no masks to measure".into()));
    }
    Ok(canvas)
}

/// Loads every record's foreground mask and measures the canvas.
pub fn measure_canvas(manifest: &DatasetManifest) -> Result<CanvasSpec> {
    let mut masks = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let m = manifest
            .load_mask(r)?
            .ok_or_else(|| Error::Validation(format!("sample {:?} has no mask", r.sample_id)))?;
        masks.push((r.sample_id.as_str(), m));
    }
    measure_canvas_masks(masks.iter().map(|(id, m)| (*id, m)))
}

/// Crops image and mask to the mask's bounding box and pastes both onto a
/// zero canvas with the box centred. Odd slack puts the extra pixel on the
/// bottom/right, i.e. the centre rounds toward the top-left.
pub fn center_embed(image: &Image, fg: &Mask, canvas: CanvasSpec) -> Result<(Image, Mask)> {
    check_dims(image, fg)?;
    let bb = fg
        .bbox()
        .ok_or_else(|| Error::Validation("cannot centre an empty mask".into()))?;
    if bb.width() > canvas.width || bb.height() > canvas.height {
        return Err(Error::Validation(format!(
            "object {}x{} does not fit canvas {}x{}",
            bb.width(),
            bb.height(),
            canvas.width,
            canvas.height
        )));
    }
    let ox = (canvas.width - bb.width()) / 2;
    let oy = (canvas.height - bb.height()) / 2;
    let ch = image.channels();
    let mut out = Image::blank(canvas.width, canvas.height, ch);
    let mut mask = Mask::filled(canvas.width, canvas.height, false);
    for r in 0..bb.height() {
        for c in 0..bb.width() {
            let (sr, sc) = (bb.y0 + r, bb.x0 + c);
            out.pixel_mut(oy + r, ox + c)
                .copy_from_slice(image.pixel(sr, sc));
            mask.set(oy + r, ox + c, fg.get(sr, sc));
        }
    }
    Ok((out, mask))
}

/// Clockwise rotation by `quarter_turns * 90` degrees.
pub fn rotate_image(image: &Image, quarter_turns: u32) -> Image {
    let mut cur = image.clone();
    for _ in 0..quarter_turns % 4 {
        let (w, h, ch) = (cur.width(), cur.height(), cur.channels());
        let mut next = Image::blank(h, w, ch);
        for r in 0..w {
            for c in 0..h {
                next.pixel_mut(r, c)
                    .copy_from_slice(cur.pixel(h - 1 - c, r));
            }
        }
        cur = next;
    }
    cur
}

pub fn rotate_mask(mask: &Mask, quarter_turns: u32) -> Mask {
    let rotated = rotate_image(&mask.to_image(), quarter_turns);
    Mask::from_image(&rotated)
}

fn quarter_turns(angle: u32) -> Result<u32> {
    match angle {
        90 | 180 | 270 => Ok(angle / 90),
        _ => Err(Error::InvalidArgument(format!(
            "rotation angle must be 90, 180 or 270, got {angle}"
        ))),
    }
}

/// Appends one rotated copy per angle of every record. Copies are written
/// as PNG under `subdir` (relative to the manifest root), keep the object
/// id and label, and get `_rot<angle>` appended to the sample id; original
/// records are untouched. In strict mode quarter turns of non-square images
/// are rejected.
pub fn rotate_augment(
    manifest: &DatasetManifest,
    angles: &[u32],
    strict: bool,
    subdir: &Path,
) -> Result<DatasetManifest> {
    let mut turns = Vec::with_capacity(angles.len());
    for &a in angles {
        let t = quarter_turns(a)?;
        if turns.iter().any(|&(_, u)| u == t) {
            return Err(Error::InvalidArgument(format!(
                "duplicate rotation angle {a}"
            )));
        }
        turns.push((a, t));
    }
    let mut out = manifest.clone();
    if turns.is_empty() {
        return Ok(out);
    }
    let dir = manifest.resolve(subdir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for r in &manifest.records {
        let image = manifest.load_image(r)?;
        let mask = manifest.load_mask(r)?;
        let defect = manifest.load_defect_mask(r)?;
        if strict && image.width() != image.height() && turns.iter().any(|(_, t)| t % 2 == 1) {
            return Err(Error::Validation(format!(
                "sample {:?} is {}x{}; quarter turns need square images in strict mode",
                r.sample_id,
                image.width(),
                image.height()
            )));
        }
        for &(angle, t) in &turns {
            let id = format!("{}_rot{angle}", r.sample_id);
            let image_rel = subdir.join(format!("{id}.png"));
            rotate_image(&image, t).save_png(&manifest.resolve(&image_rel))?;
            let save = |m: &Option<Mask>, suffix: &str| -> Result<Option<PathBuf>> {
                m.as_ref()
                    .map(|m| {
                        let rel = subdir.join(format!("{id}.{suffix}.png"));
                        rotate_mask(m, t)
                            .to_image()
                            .save_png(&manifest.resolve(&rel))?;
                        Ok(rel)
                    })
                    .transpose()
            };
            let mask_rel = save(&mask, "mask")?;
            let defect_rel = save(&defect, "defect")?;
            out.records.push(SampleRecord {
                sample_id: id,
                object_id: r.object_id.clone(),
                label: r.label,
                image: image_rel,
                mask: mask_rel,
                defect_mask: defect_rel,
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = out
        .records
        .iter()
        .find(|r| !seen.insert(r.sample_id.as_str()))
    {
        return Err(Error::Validation(format!(
            "rotated copy collides with sample_id {:?}",
            dup.sample_id
        )));
    }
    Ok(out)
}
