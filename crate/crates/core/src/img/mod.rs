//! RGB image buffers, PPM/PNG serialization, and quality metrics.

mod io;
mod metrics;

pub use io::{read_image, read_ppm, write_png, write_ppm, ImageIoError};
pub use metrics::{mse, photometric_loss, psnr, ssim, ssim_with_gradient, PSNR_CAP};

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        ImageBuffer { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    /// One channel as a contiguous plane (used by windowed metrics).
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// 8-bit quantization used by both PPM and PNG writers.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        ImageBuffer::from_data(width, height, data)
    }
}
