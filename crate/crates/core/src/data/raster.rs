use serde::{Deserialize, Serialize};

use super::DataError;

/// Channel index of the membrane class in every [`ProbMap`] produced by the model.
pub const MEMBRANE_CHANNEL: usize = 0;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::EmptyDimension);
        }
        if pixels.len() != width * height {
            return Err(DataError::BufferLength {
                width,
                height,
                channels: 1,
                got: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, DataError> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Intensities scaled to [0, 1].
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Copy of the `w`×`h` window with top-left corner at (x0, y0).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage, DataError> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(DataError::ShapeMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: x0 + w,
                got_h: y0 + h,
            });
        }
        let mut out = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            out.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::new(w, h, out)
    }
}

/// Instance labels, row-major. Label 0 marks membrane/boundary pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::EmptyDimension);
        }
        if labels.len() != width * height {
            return Err(DataError::BufferLength {
                width,
                height,
                channels: 1,
                got: labels.len(),
            });
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Boolean membrane mask (label == 0).
    pub fn membrane_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == 0).collect()
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<(), DataError> {
        if self.width != width || self.height != height {
            return Err(DataError::ShapeMismatch {
                expected_w: width,
                expected_h: height,
                got_w: self.width,
                got_h: self.height,
            });
        }
        Ok(())
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LabelMap, DataError> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(DataError::ShapeMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: x0 + w,
                got_h: y0 + h,
            });
        }
        let mut out = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            out.extend_from_slice(&self.labels[y * self.width + x0..y * self.width + x0 + w]);
        }
        LabelMap::new(w, h, out)
    }
}

/// Per-pixel class probabilities stored channel-major: `data[c * w * h + y * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub const SUM_TOLERANCE: f64 = 1e-5;

    /// Validating constructor: every pixel must be a probability vector.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, DataError> {
        let map = Self::from_raw(width, height, channels, data)?;
        let n = width * height;
        for p in 0..n {
            let mut sum = 0.0;
            for c in 0..channels {
                let v = map.data[c * n + p];
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::InvalidProbabilities { pixel: p });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(DataError::InvalidProbabilities { pixel: p });
            }
        }
        Ok(map)
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(DataError::EmptyDimension);
        }
        if data.len() != width * height * channels {
            return Err(DataError::BufferLength {
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

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, pixel: usize) -> f64 {
        self.data[c * self.pixel_count() + pixel]
    }

    /// Probability vector of one pixel.
    pub fn pixel(&self, pixel: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, pixel)).collect()
    }

    /// Per-pixel argmax class (lowest channel wins ties).
    pub fn argmax(&self) -> Vec<usize> {
        let n = self.pixel_count();
        (0..n)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.data[c * n + p] > self.data[best * n + p] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Two-class map whose membrane channel is `membrane` (values in [0, 1]).
    pub fn from_membrane(width: usize, height: usize, membrane: &[f64]) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(2 * membrane.len());
        data.extend_from_slice(membrane);
        data.extend(membrane.iter().map(|m| 1.0 - m));
        Self::new(width, height, 2, data)
    }
}

/// Fixed-length feature vector taken from the model bottleneck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVec(Vec<f64>);

impl EmbeddingVec {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteEmbedding(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<EmbeddingVec> for Vec<f64> {
    fn from(e: EmbeddingVec) -> Self {
        e.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_wrong_buffer() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(matches!(GrayImage::new(0, 2, vec![]), Err(DataError::EmptyDimension)));
    }

    #[test]
    fn probmap_validates_simplex() {
        assert!(ProbMap::new(1, 1, 2, vec![0.3, 0.7]).is_ok());
        assert!(matches!(
            ProbMap::new(1, 1, 2, vec![0.3, 0.3]),
            Err(DataError::InvalidProbabilities { pixel: 0 })
        ));
        assert!(ProbMap::new(1, 1, 2, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn crop_copies_window() {
        let img = GrayImage::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let c = img.crop(1, 0, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[2, 3, 5, 6]);
        assert!(img.crop(2, 0, 2, 2).is_err());
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(EmbeddingVec::new(vec![1.0, f64::NAN]).is_err());
    }
}
