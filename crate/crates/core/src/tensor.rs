use serde::{Deserialize, Serialize};

/// `(channels, height, width)` of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl From<[usize; 3]> for ImageShape {
    fn from(v: [usize; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<ImageShape> for [usize; 3] {
    fn from(s: ImageShape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One image in CHW layout with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub shape: ImageShape,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "image buffer does not match shape {shape}");
        Self { shape, data }
    }

    pub fn filled(shape: ImageShape, value: f64) -> Self {
        Self::new(shape, vec![value; shape.len()])
    }

    /// Bytes in `[0, 255]` scaled to `[0, 1]`.
    pub fn from_u8(shape: ImageShape, raw: &[u8]) -> Self {
        Self::new(shape, raw.iter().map(|&v| v as f64 / 255.0).collect())
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        &mut self.data[c * p..(c + 1) * p]
    }
}

/// Dense NCHW batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_images(images: &[Image]) -> Self {
        let shape = images.first().map(|i| i.shape).unwrap_or(ImageShape::new(0, 0, 0));
        let mut data = Vec::with_capacity(images.len() * shape.len());
        for img in images {
            assert_eq!(img.shape, shape, "mixed image shapes in one batch");
            data.extend_from_slice(&img.data);
        }
        Self {
            n: images.len(),
            c: shape.channels,
            h: shape.height,
            w: shape.width,
            data,
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn image_shape(&self) -> ImageShape {
        ImageShape::new(self.c, self.h, self.w)
    }
}
