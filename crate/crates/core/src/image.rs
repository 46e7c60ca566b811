//! Small float images with 8-bit PPM/PGM storage.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image buffer of {got} values does not match {width}x{height}x{channels}")]
    BadBuffer {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error(transparent)]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BadBuffer {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Self {
        let channels = color.len();
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        let data = color.iter().copied().cycle().take(width * height * channels).collect();
        Self {
            width,
            height,
            channels,
            data,
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Mean over channels.
    pub fn gray(&self, x: usize, y: usize) -> f64 {
        self.pixel(x, y).iter().sum::<f64>() / self.channels as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    /// Channel-major copy (`[C, H, W]` order) for convolution input.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        let hw = self.width * self.height;
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * hw + p] = v;
            }
        }
        out
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes binary PPM (3 channels) or PGM (1 channel), quantized to 8 bits.
    pub fn save_pnm(&self, path: &Path) -> Result<(), ImageError> {
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            _ => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        };
        let w = BufWriter::new(File::create(path)?);
        PnmEncoder::new(w).with_subtype(subtype).write_image(
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img {
            DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    /// Rounds every value to the nearest 8-bit level, as a save/load cycle would.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let mut img = Image::new(
                5,
                3,
                channels,
                (0..15 * channels).map(|i| (i as f64 * 0.37) % 1.0).collect(),
            )
            .unwrap();
            img.quantize();
            let path = dir.path().join(format!("x{channels}.pnm"));
            img.save_pnm(&path).unwrap();
            assert_eq!(Image::load(&path).unwrap(), img);
        }
    }

    #[test]
    fn chw_layout() {
        let img = Image::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.to_chw(), vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
