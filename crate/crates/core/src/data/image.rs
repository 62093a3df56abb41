use std::path::Path;

use ::image::{imageops, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Planar RGB image with values in `[0, 1]`, channel-major (`c * h * w + y * w + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SceneImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        SceneImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "{} values for a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(SceneImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * plane + i] = f32::from(*v) / 255.0;
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = SceneImage::zeros(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            out.set_rgb(x as usize, y as usize, px.0);
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    /// Loads an image file and resamples it to `size x size`.
    pub fn load(path: &Path, size: usize) -> Result<Self> {
        let img = ::image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let img = if img.width() as usize == size && img.height() as usize == size {
            img
        } else {
            imageops::resize(&img, size as u32, size as u32, imageops::FilterType::Triangle)
        };
        Ok(SceneImage::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
