use std::path::Path;

use crate::features::{Image, Mask, PositionGrid};
use crate::numerics::RngStream;
use crate::{Error, Result};

/// Where overlay textures come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TextureSource {
    /// Seeded two-octave value noise.
    #[default]
    Procedural,
    /// Tiles cut at random offsets from these images.
    Images(Vec<Image>),
}

impl TextureSource {
    /// Loads every PNG/PGM/PPM in `dir`, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) {
                paths.push(path);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no texture images in {}",
                dir.display()
            )));
        }
        let images = paths
            .iter()
            .map(|p| Image::load(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(TextureSource::Images(images))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLocalConfig {
    pub texture: TextureSource,
    /// Blend opacity β in (0, 1].
    pub opacity: f64,
    /// Inclusive range of elliptical blobs per mask.
    pub blob_count: (usize, usize),
    /// Fraction of the foreground the blobs aim to cover.
    pub blob_area: (f64, f64),
    /// Feature-space textures span `[-amplitude, amplitude]`.
    pub texture_amplitude: f64,
    /// Lattice spacing of the procedural noise, in pixels/positions.
    pub noise_cell: usize,
}

impl Default for SynthLocalConfig {
    fn default() -> Self {
        Self {
            texture: TextureSource::Procedural,
            opacity: 0.5,
            blob_count: (1, 3),
            blob_area: (0.01, 0.10),
            texture_amplitude: 3.0,
            noise_cell: 4,
        }
    }
}

impl SynthLocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "opacity must lie in (0, 1], got {}",
                self.opacity
            )));
        }
        let (lo, hi) = self.blob_count;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidArgument(
                "blob count range must be 1 <= min <= max".into(),
            ));
        }
        let (a, b) = self.blob_area;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return Err(Error::InvalidArgument(
                "blob area range must satisfy 0 < min <= max <= 1".into(),
            ));
        }
        if !self.texture_amplitude.is_finite() || self.texture_amplitude < 0.0 {
            return Err(Error::InvalidArgument(
                "texture amplitude must be finite and >= 0".into(),
            ));
        }
        if self.noise_cell == 0 {
            return Err(Error::InvalidArgument("noise cell must be >= 1".into()));
        }
        if let TextureSource::Images(imgs) = &self.texture {
            if imgs.is_empty() {
                return Err(Error::InvalidArgument("texture image list is empty".into()));
            }
        }
        Ok(())
    }
}

/// Union of random ellipses centred on foreground pixels, intersected with
/// the foreground. Never empty for a non-empty foreground.
pub fn random_blob_mask(fg: &Mask, cfg: &SynthLocalConfig, rng: &mut RngStream) -> Result<Mask> {
    cfg.validate()?;
    let fg_pixels: Vec<usize> = fg
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if fg_pixels.is_empty() {
        return Err(Error::Insufficient(
            "empty foreground, nowhere to synthesize".into(),
        ));
    }
    let (w, h) = (fg.width(), fg.height());
    let blobs = rng.int_range(cfg.blob_count.0, cfg.blob_count.1);
    let area = rng.uniform_range(cfg.blob_area.0, cfg.blob_area.1) * fg_pixels.len() as f64;
    let mut out = Mask::filled(w, h, false);
    for _ in 0..blobs {
        let centre = fg_pixels[rng.below(fg_pixels.len() as u64) as usize];
        let (cy, cx) = ((centre / w) as f64, (centre % w) as f64);
        let aspect = libm::exp(rng.uniform_range(-std::f64::consts::LN_2, std::f64::consts::LN_2));
        let base = area / blobs as f64 / std::f64::consts::PI;
        let a = (base * aspect).sqrt().max(0.5);
        let b = (base / aspect).sqrt().max(0.5);
        let theta = rng.uniform_range(0.0, std::f64::consts::PI);
        let (sin, cos) = (libm::sin(theta), libm::cos(theta));
        let reach = a.max(b).ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (r, c) = (cy as isize + dy, cx as isize + dx);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let (fx, fy) = (dx as f64, dy as f64);
                let u = (fx * cos + fy * sin) / a;
                let v = (-fx * sin + fy * cos) / b;
                if u * u + v * v <= 1.0 {
                    out.set(r as usize, c as usize, true);
                }
            }
        }
    }
    out.and(fg)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise_octave(h: usize, w: usize, cell: usize, rng: &mut RngStream) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.uniform()).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let fy = r as f64 / cell as f64;
        let iy = fy.floor() as usize;
        let ty = smoothstep(fy - iy as f64);
        for c in 0..w {
            let fx = c as f64 / cell as f64;
            let ix = fx.floor() as usize;
            let tx = smoothstep(fx - ix as f64);
            let at = |y: usize, x: usize| lattice[y * gw + x];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Two-octave value noise in `[0, 1]`, row-major.
pub(crate) fn value_noise(h: usize, w: usize, cell: usize, rng: &mut RngStream) -> Vec<f64> {
    let coarse = value_noise_octave(h, w, cell, rng);
    let fine = value_noise_octave(h, w, (cell / 2).max(1), rng);
    coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a + 0.5 * b) / 1.5)
        .collect()
}

/// Texture values in `[0, 1]`, position-major with `channels` per position.
fn texture_field(
    h: usize,
    w: usize,
    channels: usize,
    cfg: &SynthLocalConfig,
    rng: &mut RngStream,
) -> Vec<f64> {
    let mut out = vec![0.0; h * w * channels];
    match &cfg.texture {
        TextureSource::Procedural => {
            for ch in 0..channels {
                let noise = value_noise(h, w, cfg.noise_cell, rng);
                for (p, v) in noise.into_iter().enumerate() {
                    out[p * channels + ch] = v;
                }
            }
        }
        TextureSource::Images(images) => {
            let tex = &images[rng.below(images.len() as u64) as usize];
            let (tw, th, tc) = (tex.width(), tex.height(), tex.channels());
            for ch in 0..channels {
                let oy = rng.below(th as u64) as usize;
                let ox = rng.below(tw as u64) as usize;
                let src_ch = if tc == channels { ch } else { ch % tc };
                for r in 0..h {
                    for c in 0..w {
                        let px = tex.pixel((r + oy) % th, (c + ox) % tw);
                        out[(r * w + c) * channels + ch] = px[src_ch] as f64 / 255.0;
                    }
                }
            }
        }
    }
    out
}

/// Blends a texture into a random foreground blob of an 8-bit image.
///
/// Rounding can make a blend a no-op at some pixel; such pixels are moved
/// one grey level towards the texture so that the returned mask is exactly
/// the set of changed pixels.
pub fn synth_local_image(
    image: &Image,
    fg: &Mask,
    cfg: &SynthLocalConfig,
    rng: &mut RngStream,
) -> Result<(Image, Mask)> {
    if fg.width() != image.width() || fg.height() != image.height() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {}x{}",
            fg.width(),
            fg.height(),
            image.width(),
            image.height()
        )));
    }
    let mask = random_blob_mask(fg, cfg, rng)?;
    let ch = image.channels();
    let texture = texture_field(image.height(), image.width(), ch, cfg, rng);
    let beta = cfg.opacity;
    let mut out = image.clone();
    let data = out.data_mut();
    for (p, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        let px = &mut data[p * ch..(p + 1) * ch];
        let tex = &texture[p * ch..(p + 1) * ch];
        let mut changed = false;
        for (v, &t) in px.iter_mut().zip(tex) {
            let x = *v as f64;
            let nv = ((1.0 - beta) * x + beta * 255.0 * t)
                .round()
                .clamp(0.0, 255.0) as u8;
            changed |= nv != *v;
            *v = nv;
        }
        if !changed {
            let t = 255.0 * tex[0];
            let x = px[0];
            px[0] = if t > x as f64 || (t == x as f64 && x < 255) {
                x + 1
            } else {
                x - 1
            };
        }
    }
    Ok((out, mask))
}

/// Feature-space counterpart of [`synth_local_image`] on a position grid.
/// The texture spans `[-amplitude, amplitude]`; no-op blends are nudged by
/// one unit in the last place.
pub fn synth_local_features(
    grid: &PositionGrid,
    fg: &Mask,
    cfg: &SynthLocalConfig,
    rng: &mut RngStream,
) -> Result<(PositionGrid, Mask)> {
    if fg.width() != grid.width() || fg.height() != grid.height() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs grid {}x{}",
            fg.width(),
            fg.height(),
            grid.width(),
            grid.height()
        )));
    }
    let mask = random_blob_mask(fg, cfg, rng)?;
    let d = grid.dim();
    let texture = texture_field(grid.height(), grid.width(), d, cfg, rng);
    let beta = cfg.opacity;
    let amp = cfg.texture_amplitude;
    let mut out = grid.clone();
    for (p, _) in mask.data().iter().enumerate().filter(|(_, &m)| m) {
        let v = out.at_mut(p);
        let tex = &texture[p * d..(p + 1) * d];
        let mut changed = false;
        for (x, &t) in v.iter_mut().zip(tex) {
            let nv = (1.0 - beta) * *x + beta * amp * (2.0 * t - 1.0);
            changed |= nv != *x;
            *x = nv;
        }
        if !changed {
            let t = amp * (2.0 * tex[0] - 1.0);
            v[0] = if t < v[0] {
                v[0].next_down()
            } else {
                v[0].next_up()
            };
        }
    }
    Ok((out, mask))
}
