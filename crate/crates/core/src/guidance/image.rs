use crate::features::FeatureMap;
use crate::raster::RenderOutput;

/// Planar RGB float image: all red values, then green, then blue, each
/// `height × width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image { height, width, data: vec![0.0; 3 * height * width] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, n));
        }
        Image { height, width, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.pixel_count() + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let n = self.pixel_count();
        self.data[c * n + y * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.len() == 3 * self.pixel_count() && self.data.iter().all(|v| v.is_finite())
    }

    /// Color plane of a render.
    pub fn from_render(out: &RenderOutput) -> Self {
        let color = out.color.as_ref().expect("render with the color channel");
        let n = out.pixel_count();
        let mut img = Image::zeros(out.height, out.width);
        for p in 0..n {
            for c in 0..3 {
                img.data[c * n + p] = color[p * 3 + c] as f32;
            }
        }
        img
    }

    /// Interleaved `H × W × 3` values, the layout of rendered planes.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[p * 3 + c] = self.data[c * n + p] as f64;
            }
        }
        out
    }

    /// Three-channel feature map (interleaved) holding the same pixels.
    pub fn to_feature_map(&self, source_camera_id: &str) -> FeatureMap {
        let data = self.to_interleaved().into_iter().map(|v| v as f32).collect();
        FeatureMap::new(self.height, self.width, 3, data, source_camera_id).expect("finite image")
    }

    pub fn from_feature_map(map: &FeatureMap) -> Option<Self> {
        if map.dim != 3 {
            return None;
        }
        let n = map.pixel_count();
        let mut img = Image::zeros(map.height, map.width);
        for p in 0..n {
            for c in 0..3 {
                img.data[c * n + p] = map.data[p * 3 + c];
            }
        }
        Some(img)
    }

    /// 8-bit interleaved RGB, clamped to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.to_interleaved().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Euclidean norm over all values.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }
}
