use std::path::{Component, Path, PathBuf};

use adw_core::dataprep::{
    apply_mask, center_embed, load_manifest, measure_canvas, rotate_augment, DatasetManifest,
    ManifestHeader, SampleRecord,
};
use adw_core::features::Mask;
use anyhow::Context;
use clap::Args;
use rayon::prelude::*;

use super::{finish, unique_names};
use crate::{GlobalArgs, Invalid, RunConfig};

#[derive(Debug, Clone, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; must differ from the input dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Zero every background pixel using the record's mask.
    #[arg(long)]
    pub mask: bool,
    /// Crop to the mask's bounding box and center on a common canvas.
    #[arg(long)]
    pub center_embed: bool,
    /// Comma-separated rotation angles from {90, 180, 270}.
    #[arg(long, value_delimiter = ',')]
    pub rotate: Vec<u32>,
}

fn is_plain_relative(p: &Path) -> bool {
    p.components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn copy_rel(
    src: &DatasetManifest,
    rel: &Path,
    out: &Path,
    fallback: PathBuf,
) -> anyhow::Result<PathBuf> {
    let dest = if is_plain_relative(rel) {
        rel.to_path_buf()
    } else {
        fallback
    };
    let bytes = std::fs::read(src.resolve(rel))
        .with_context(|| format!("reading {}", src.resolve(rel).display()))?;
    adw_core::io::write_atomic(&out.join(&dest), &bytes)?;
    Ok(dest)
}

fn fallback(dir: &str, name: &str, rel: &Path) -> PathBuf {
    let ext = rel.extension().and_then(|e| e.to_str()).unwrap_or("png");
    Path::new(dir).join(format!("{name}.{ext}"))
}

fn transform_record(
    src: &DatasetManifest,
    r: &SampleRecord,
    name: &str,
    out: &Path,
    mask: bool,
    canvas: Option<adw_core::dataprep::CanvasSpec>,
) -> anyhow::Result<SampleRecord> {
    let mut rec = r.clone();
    if !mask && canvas.is_none() {
        rec.image = copy_rel(src, &r.image, out, fallback("images", name, &r.image))?;
        if let Some(m) = &r.mask {
            rec.mask = Some(copy_rel(src, m, out, fallback("masks", name, m))?);
        }
        if let Some(d) = &r.defect_mask {
            rec.defect_mask = Some(copy_rel(src, d, out, fallback("defects", name, d))?);
        }
        return Ok(rec);
    }
    let mut image = src.load_image(r)?;
    let fg = src.load_mask(r)?.ok_or_else(|| {
        adw_core::Error::Validation(format!("sample {:?} has no mask", r.sample_id))
    })?;
    let mut fg_out = fg.clone();
    let mut defect = src.load_defect_mask(r)?;
    if mask {
        image = apply_mask(&image, &fg)?;
    }
    if let Some(c) = canvas {
        let (img, m) = center_embed(&image, &fg, c)?;
        defect = defect
            .map(|d| center_embed(&d.to_image(), &fg, c).map(|(e, _)| Mask::from_image(&e)))
            .transpose()?;
        image = img;
        fg_out = m;
    }
    rec.image = Path::new("images").join(format!("{name}.png"));
    image.save_png(&out.join(&rec.image))?;
    let mask_rel = Path::new("masks").join(format!("{name}.png"));
    fg_out.to_image().save_png(&out.join(&mask_rel))?;
    rec.mask = Some(mask_rel);
    rec.defect_mask = match defect {
        Some(d) => {
            let p = Path::new("defects").join(format!("{name}.png"));
            d.to_image().save_png(&out.join(&p))?;
            Some(p)
        }
        None => None,
    };
    Ok(rec)
}

pub fn cmd_prep(
    args: &PrepArgs,
    mut cfg: RunConfig,
    _g: &GlobalArgs,
) -> anyhow::Result<Vec<PathBuf>> {
    cfg.prep.mask |= args.mask;
    cfg.prep.center_embed |= args.center_embed;
    if !args.rotate.is_empty() {
        cfg.prep.rotate = args.rotate.clone();
    }
    let cfg = cfg.finalize();
    for (i, a) in cfg.prep.rotate.iter().enumerate() {
        if !matches!(a, 90 | 180 | 270) {
            return Err(Invalid(format!("rotation angle must be 90, 180 or 270, got {a}")).into());
        }
        if cfg.prep.rotate[..i].contains(a) {
            return Err(Invalid(format!("duplicate rotation angle {a}")).into());
        }
    }
    let src = load_manifest(&args.manifest)?;
    src.check_files()?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let same = match (
        std::fs::canonicalize(&args.out),
        std::fs::canonicalize(if src.root.as_os_str().is_empty() {
            Path::new(".")
        } else {
            &src.root
        }),
    ) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Invalid(
            "the output directory must differ from the input dataset directory".into(),
        )
        .into());
    }

    let canvas = if cfg.prep.center_embed {
        Some(measure_canvas(&src)?)
    } else {
        None
    };
    let names = unique_names(src.records.iter().map(|r| r.sample_id.as_str()))?;
    let records = src
        .records
        .par_iter()
        .zip(&names)
        .map(|(r, name)| {
            transform_record(&src, r, name, &args.out, cfg.prep.mask, canvas)
                .with_context(|| format!("sample {}", r.sample_id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new(&args.out, records);
    manifest.header = match canvas {
        Some(c) => Some(ManifestHeader { canvas: Some(c) }),
        None => src.header.clone(),
    };
    if !cfg.prep.rotate.is_empty() {
        manifest = rotate_augment(
            &manifest,
            &cfg.prep.rotate,
            cfg.prep.strict_rotation,
            Path::new("rotated"),
        )?;
    }
    let out_manifest = args.out.join("manifest.jsonl");
    manifest.write(&out_manifest)?;

    let mut inputs = vec![args.manifest.clone()];
    for r in &src.records {
        inputs.extend(
            std::iter::once(&r.image)
                .chain(&r.mask)
                .chain(&r.defect_mask)
                .map(|p| src.resolve(p)),
        );
    }
    finish("prep", &cfg, inputs, vec![out_manifest], &args.out, true)
}
