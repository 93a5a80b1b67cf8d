//! Raster ingestion and the pre-extraction image pipeline: PPM I/O,
//! aspect-preserving thumbnail resizing, min-max normalization and RGB
//! histograms.

mod normalize;
mod ppm;
mod resize;

pub use normalize::{minmax_normalize, minmax_normalize_with, NormalizeMode};
pub use ppm::{decode_ppm, encode_ppm};
pub use resize::{aspect_ratio, bilinear_sample, resized_height, thumbnail_resize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const DEFAULT_TARGET_WIDTH: usize = 64;

/// 8-bit RGB raster, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", format!("empty dimensions {width}x{height}")));
        }
        if pixels.len() != width * height * CHANNELS {
            return Err(Error::shape(
                "Image::new",
                format!("{width}x{height}x{CHANNELS}"),
                format!("{} samples", pixels.len()),
            ));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Real-valued RGB raster produced by normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl NormalizedImage {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", format!("empty dimensions {width}x{height}")));
        }
        if samples.len() != width * height * CHANNELS {
            return Err(Error::shape(
                "NormalizedImage::new",
                format!("{width}x{height}x{CHANNELS}"),
                format!("{} samples", samples.len()),
            ));
        }
        Ok(Self { width, height, samples })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> f64 {
        self.samples[(y * self.width + x) * CHANNELS + c]
    }
}

pub const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelHistogram {
    pub bins: [[u64; HISTOGRAM_BINS]; CHANNELS],
    pub total: u64,
}

impl ChannelHistogram {
    fn from_bins(bins_of: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut bins = [[0u64; HISTOGRAM_BINS]; CHANNELS];
        let mut total = 0;
        for (c, b) in bins_of {
            bins[c][b] += 1;
            total += 1;
        }
        Self { bins, total }
    }

    pub fn channel_total(&self, c: usize) -> u64 {
        self.bins[c].iter().sum()
    }
}

pub fn channel_histogram(img: &Image) -> ChannelHistogram {
    ChannelHistogram::from_bins(
        img.pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| (i % CHANNELS, v as usize)),
    )
}

/// Bins unit-interval samples by `floor(v * 256)`, with 1.0 landing in the
/// top bin.
pub fn channel_histogram_normalized(img: &NormalizedImage) -> ChannelHistogram {
    ChannelHistogram::from_bins(img.samples.iter().enumerate().map(|(i, &v)| {
        let b = (v * HISTOGRAM_BINS as f64).floor().clamp(0.0, (HISTOGRAM_BINS - 1) as f64);
        (i % CHANNELS, b as usize)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_width_rejected() {
        assert!(Image::new(0, 4, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn gray_histogram() {
        let img = Image::filled(5, 3, [7, 7, 7]).unwrap();
        let h = channel_histogram(&img);
        for c in 0..CHANNELS {
            assert_eq!(h.bins[c][7], 15);
            assert_eq!(h.channel_total(c), 15);
        }
        assert_eq!(h.total, 45);
    }

    #[test]
    fn normalized_histogram_clamps_top() {
        let img = NormalizedImage::new(2, 1, vec![1.0, 0.0, 0.5, 0.999, 0.25, 1.0]).unwrap();
        let h = channel_histogram_normalized(&img);
        assert_eq!(h.bins[0][255], 2);
        assert_eq!(h.bins[1][0], 1);
        assert_eq!(h.bins[1][64], 1);
        assert_eq!(h.bins[2][128], 1);
        assert_eq!(h.bins[2][255], 1);
        for c in 0..CHANNELS {
            assert_eq!(h.channel_total(c), 2);
        }
    }
}
