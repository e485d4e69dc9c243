//! Dense interleaved images (`H × W × C`, row-major) and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape<U>(&self, o: &Image<U>) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn check_same_shape<U>(&self, o: &Image<U>) -> Result<()> {
        if self.same_shape(o) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )))
        }
    }

    /// Extract one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image<T> {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Write as 8-bit PNG (gray or RGB), rounding from `[0, 1]`.
    pub fn save_png8(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = match self.channels {
            1 => ::image::ExtendedColorType::L8,
            3 => ::image::ExtendedColorType::Rgb8,
            n => return Err(Error::ShapeMismatch(format!("cannot write {n}-channel PNG"))),
        };
        ::image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Image { path: path.into(), message: e.to_string() })
    }

    /// Write channel 0 as a 16-bit grayscale PNG, rounding from `[0, 1]`.
    pub fn save_png16_gray(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.width * self.height * 2);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = (self.get(x, y, 0).as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16;
                bytes.extend_from_slice(&v.to_ne_bytes());
            }
        }
        ::image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::L16,
        )
        .map_err(|e| Error::Image { path: path.into(), message: e.to_string() })
    }

    /// Load a PNG into `[0, 1]` values; 8- and 16-bit gray/RGB supported.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ::image::open(path).map_err(|e| Error::Image { path: path.into(), message: e.to_string() })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            ::image::DynamicImage::ImageLuma8(buf) => Ok(Image {
                width: w,
                height: h,
                channels: 1,
                data: buf.into_raw().into_iter().map(|v| T::lit(v as f64 / 255.0)).collect(),
            }),
            ::image::DynamicImage::ImageLuma16(buf) => Ok(Image {
                width: w,
                height: h,
                channels: 1,
                data: buf.into_raw().into_iter().map(|v| T::lit(v as f64 / 65535.0)).collect(),
            }),
            other => {
                let rgb = other.to_rgb8();
                Ok(Image {
                    width: w,
                    height: h,
                    channels: 3,
                    data: rgb.into_raw().into_iter().map(|v| T::lit(v as f64 / 255.0)).collect(),
                })
            }
        }
    }
}
