//! Floating-point RGB rasters and single-channel planes.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("buffer of {got} values does not match {width}x{height}x{channels}")]
    BufferSize { width: usize, height: usize, channels: usize, got: usize },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major RGB raster with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != width * height * 3 {
            return Err(RasterError::BufferSize { width, height, channels: 3, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    /// Builds a raster from interleaved 8-bit RGB.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() != width * height * 3 {
            return Err(RasterError::BufferSize { width, height, channels: 3, got: bytes.len() });
        }
        Ok(Self { width, height, data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect() })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// True when every value is finite and inside `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Rec. 601 luma plane.
    pub fn luma(&self) -> Plane {
        let data = self.data.chunks_exact(3).map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).collect();
        Plane { width: self.width, height: self.height, data }
    }

    /// One colour channel as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().skip(c).step_by(3).copied().collect() }
    }

    /// Rotates by 90 degrees counter-clockwise (as displayed, y pointing down).
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.width, self.height);
        Image::from_fn(h, w, |x, y| self.pixel(w - 1 - y, x))
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length checked by construction");
        buf.save(path)?;
        Ok(())
    }
}

/// Row-major single-channel plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous sample coordinates (sample `i` at `i`).
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.at_clamped(xi, yi);
        let b = self.at_clamped(xi + 1, yi);
        let c = self.at_clamped(xi, yi + 1);
        let d = self.at_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_roundtrip_is_exact() {
        let bytes: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let img = Image::from_rgb8(4, 4, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
        assert!(Image::from_rgb8(4, 3, &bytes).is_err());
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = Image::from_fn(5, 3, |x, y| [x as f64 / 5.0, y as f64 / 3.0, 0.5]);
        let r = img.rotate90();
        assert_eq!(r.dims(), (3, 5));
        assert_eq!(r.rotate90().rotate90().rotate90(), img);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(7, 5, |x, y| [(x * 30) as f64 / 255.0, (y * 40) as f64 / 255.0, 1.0]);
        img.save(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }
}
