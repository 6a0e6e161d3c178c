use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::{Error, Result};

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if width * height * channels != data.len() {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image got {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn blank(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Channel values of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [u8] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Luma in `[0, 1]`, row-major.
    pub fn to_gray_f64(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64 / 255.0).collect(),
            _ => self
                .data
                .chunks(3)
                .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
                .collect(),
        }
    }

    /// Loads PNG or PGM/PPM. Alpha is dropped; 16-bit data is reduced to 8 bits.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_dynamic(img))
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let gray = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        if gray {
            let g = img.into_luma8();
            let (w, h) = g.dimensions();
            Self {
                width: w as usize,
                height: h as usize,
                channels: 1,
                data: g.into_raw(),
            }
        } else {
            let rgb = img.into_rgb8();
            let (w, h) = rgb.dimensions();
            Self {
                width: w as usize,
                height: h as usize,
                channels: 3,
                data: rgb.into_raw(),
            }
        }
    }

    /// Encodes as PNG.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            ImageFormat::Png,
        )
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_png_bytes()?)
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Center in pixel coordinates, `(x, y)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

/// Binary foreground / defect mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    /// Gray values above this threshold count as set.
    pub const THRESHOLD: u8 = 127;

    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::Shape(format!(
                "{width}x{height} mask got {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Binarizes an image; for RGB the first channel decides.
    pub fn from_image(img: &Image) -> Self {
        let data = img
            .data()
            .chunks(img.channels())
            .map(|p| p[0] > Self::THRESHOLD)
            .collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_image(&Image::load(path)?))
    }

    pub fn to_image(&self) -> Image {
        let data = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image::gray(self.width, self.height, data).expect("consistent dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if !self.same_dims(other) {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    bb = Some(match bb {
                        None => BBox {
                            x0: c,
                            y0: r,
                            x1: c,
                            y1: r,
                        },
                        Some(b) => BBox {
                            x0: b.x0.min(c),
                            y0: b.y0.min(r),
                            x1: b.x1.max(c),
                            y1: b.y1.max(r),
                        },
                    });
                }
            }
        }
        bb
    }
}

/// Dense 2-D map of reals (localization maps, activation summaries).
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Map2 {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::Shape(format!(
                "{height}x{width} map got {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nearest-neighbor resampling to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Map2 {
        let mut out = Map2::zeros(height, width);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_binarizes_above_127() {
        let img = Image::gray(4, 1, vec![0, 127, 128, 255]).unwrap();
        assert_eq!(Mask::from_image(&img).data(), &[false, false, true, true]);
    }

    #[test]
    fn bbox_of_scattered_pixels() {
        let mut m = Mask::filled(10, 8, false);
        m.set(2, 3, true);
        m.set(6, 7, true);
        let b = m.bbox().unwrap();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (3, 2, 7, 6));
        assert_eq!((b.width(), b.height()), (5, 5));
        assert!(Mask::filled(3, 3, false).bbox().is_none());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(3, 2, 3, (0..18).map(|v| v * 10).collect()).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img);
    }

    #[test]
    fn pgm_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 200, 100, 255]);
        std::fs::write(&p, bytes).unwrap();
        let img = Image::load(&p).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0, 200, 100, 255]);
        let m = Mask::load(&p).unwrap();
        assert_eq!(m.data(), &[false, true, false, true]);
    }

    #[test]
    fn resize_nearest_replicates_cells() {
        let m = Map2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = m.resize_nearest(4, 4);
        assert_eq!(r.get(0, 0), 1.0);
        assert_eq!(r.get(1, 1), 1.0);
        assert_eq!(r.get(0, 3), 2.0);
        assert_eq!(r.get(3, 0), 3.0);
        assert_eq!(r.get(3, 3), 4.0);
    }
}
