use image::{ImageBuffer, Rgb, RgbImage};

/// Interleaved RGB raster with real-valued samples on the 0–255 scale.
///
/// Decoded images hold whole numbers; box-filter downsampling produces means
/// that are generally fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height * CHANNELS).then_some(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| f32::from(b)).collect(),
        }
    }

    /// Rounds and clamps each sample to a byte.
    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("raster length matches dimensions")
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

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Mean over disjoint `factor × factor` blocks; trailing rows/columns that
    /// do not fill a block are dropped.
    pub fn box_downsample(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut data = vec![0.0f32; w * h * CHANNELS];
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; CHANNELS];
                for dy in 0..factor {
                    let row = ((y * factor + dy) * self.width + x * factor) * CHANNELS;
                    for px in self.data[row..row + factor * CHANNELS].chunks_exact(CHANNELS) {
                        for c in 0..CHANNELS {
                            acc[c] += f64::from(px[c]);
                        }
                    }
                }
                let o = (y * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    data[o + c] = (acc[c] * norm) as f32;
                }
            }
        }
        Self { width: w, height: h, data }
    }

    /// Planar `[3, size, size]` crop scaled into `[0, 1]`.
    pub fn crop_planar_unit(&self, x0: usize, y0: usize, size: usize) -> Vec<f32> {
        debug_assert!(x0 + size <= self.width && y0 + size <= self.height);
        let mut out = vec![0.0f32; CHANNELS * size * size];
        for y in 0..size {
            let row = ((y0 + y) * self.width + x0) * CHANNELS;
            for (x, px) in self.data[row..row + size * CHANNELS].chunks_exact(CHANNELS).enumerate() {
                for c in 0..CHANNELS {
                    out[(c * size + y) * size + x] = px[c] / 255.0;
                }
            }
        }
        out
    }
}
