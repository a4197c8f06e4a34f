//! Augmentation pipelines compiled from [`TransformSpec`] lists.
//!
//! Images are CHW floats in `[0, 1]` from the moment they are decoded, so
//! `ToTensor` is kept only as a position marker in the step list. Geometric
//! steps fill uncovered pixels with zero.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{TransformKind, TransformSpec};
use crate::error::{Error, Result};
use crate::seed::with_global_rng;
use crate::tensor::{Image, ImageShape};

/// Default parameters for transforms whose list entries leave them unset.
pub const CROP_PADDING: usize = 4;
pub const FLIP_P: f64 = 0.5;
pub const ROTATION_DEGREES: f64 = 15.0;
pub const JITTER: [f64; 4] = [0.4, 0.4, 0.4, 0.1];
pub const RANDAUGMENT_OPS: usize = 2;
pub const RANDAUGMENT_MAGNITUDE: usize = 9;
pub const RANDAUGMENT_BINS: usize = 31;
pub const CUTOUT_SIZE: usize = 16;

/// One compiled transform.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    ToTensor,
    Normalize {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    RandomCrop {
        size: usize,
        padding: usize,
    },
    RandomHorizontalFlip {
        p: f64,
    },
    RandomRotation {
        degrees: f64,
    },
    ColorJitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    },
    RandAugment {
        num_ops: usize,
        magnitude: usize,
    },
    CutOut {
        size: usize,
    },
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::ToTensor => write!(f, "ToTensor"),
            Step::Normalize { mean, std } => write!(f, "Normalize(mean={}, std={})", list(mean), list(std)),
            Step::RandomCrop { size, padding } => write!(f, "RandomCrop(size={size}, padding={padding})"),
            Step::RandomHorizontalFlip { p } => write!(f, "RandomHorizontalFlip(p={p})"),
            Step::RandomRotation { degrees } => write!(f, "RandomRotation(degrees={degrees})"),
            Step::ColorJitter {
                brightness,
                contrast,
                saturation,
                hue,
            } => write!(
                f,
                "ColorJitter(brightness={brightness}, contrast={contrast}, saturation={saturation}, hue={hue})"
            ),
            Step::RandAugment { num_ops, magnitude } => {
                write!(f, "RandAugment(num_ops={num_ops}, magnitude={magnitude})")
            }
            Step::CutOut { size } => write!(f, "CutOut(size={size})"),
        }
    }
}

/// Ordered transforms for one image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPipeline {
    pub shape: ImageShape,
    pub steps: Vec<Step>,
}

fn compile(spec: &TransformSpec, shape: ImageShape) -> Result<Step> {
    spec.validate().map_err(Error::Transform)?;
    let n = |k: &str, d: f64| spec.number(k).unwrap_or(d);
    let side = shape.height.min(shape.width);
    Ok(match spec.kind {
        TransformKind::ToTensor => Step::ToTensor,
        TransformKind::Normalize => {
            let (mean, std) = (spec.list("mean").unwrap(), spec.list("std").unwrap());
            if mean.len() != shape.channels {
                return Err(Error::Transform(format!(
                    "Normalize has {} channel statistics for {}-channel images",
                    mean.len(),
                    shape.channels
                )));
            }
            Step::Normalize {
                mean: mean.to_vec(),
                std: std.to_vec(),
            }
        }
        TransformKind::RandomCrop => {
            let size = n("size", side as f64) as usize;
            if size != shape.height || size != shape.width {
                return Err(Error::Transform(format!(
                    "RandomCrop size {size} must equal the image side ({shape}) so the output shape is preserved"
                )));
            }
            Step::RandomCrop {
                size,
                padding: n("padding", CROP_PADDING as f64) as usize,
            }
        }
        TransformKind::RandomHorizontalFlip => Step::RandomHorizontalFlip { p: n("p", FLIP_P) },
        TransformKind::RandomRotation => Step::RandomRotation {
            degrees: n("degrees", ROTATION_DEGREES),
        },
        TransformKind::ColorJitter => Step::ColorJitter {
            brightness: n("brightness", JITTER[0]),
            contrast: n("contrast", JITTER[1]),
            saturation: n("saturation", JITTER[2]),
            hue: n("hue", JITTER[3]),
        },
        TransformKind::RandAugment => {
            let magnitude = n("magnitude", RANDAUGMENT_MAGNITUDE as f64) as usize;
            if magnitude >= RANDAUGMENT_BINS {
                return Err(Error::Transform(format!(
                    "RandAugment magnitude {magnitude} must be below {RANDAUGMENT_BINS}"
                )));
            }
            Step::RandAugment {
                num_ops: n("num_ops", RANDAUGMENT_OPS as f64) as usize,
                magnitude,
            }
        }
        TransformKind::CutOut => Step::CutOut {
            size: n("size", CUTOUT_SIZE as f64) as usize,
        },
    })
}

/// Compile `specs` in order for images of `shape`.
pub fn build_pipeline(specs: &[TransformSpec], shape: ImageShape) -> Result<AugmentationPipeline> {
    let steps = specs.iter().map(|s| compile(s, shape)).collect::<Result<Vec<_>>>()?;
    Ok(AugmentationPipeline { shape, steps })
}

impl AugmentationPipeline {
    pub fn identity(shape: ImageShape) -> Self {
        Self { shape, steps: vec![] }
    }

    /// One line per step, in order.
    pub fn describe(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.to_string()).collect()
    }

    pub fn is_stochastic(&self) -> bool {
        self.steps
            .iter()
            .any(|s| !matches!(s, Step::ToTensor | Step::Normalize { .. }))
    }

    pub fn apply(&self, mut img: Image, rng: &mut ChaCha8Rng) -> Image {
        assert_eq!(
            img.shape, self.shape,
            "pipeline built for {} got {}",
            self.shape, img.shape
        );
        for step in &self.steps {
            img = apply_step(step, img, rng);
        }
        img
    }

    /// Apply with draws from the process-wide seeded generator.
    pub fn apply_global(&self, img: Image) -> Image {
        with_global_rng(|rng| self.apply(img, rng))
    }
}

fn apply_step(step: &Step, mut img: Image, rng: &mut ChaCha8Rng) -> Image {
    let s = img.shape;
    match step {
        Step::ToTensor => img,
        Step::Normalize { mean, std } => {
            for c in 0..s.channels {
                for v in img.channel_mut(c) {
                    *v = (*v - mean[c]) / std[c];
                }
            }
            img
        }
        Step::RandomCrop { size, padding } => {
            let p = *padding as isize;
            let dy = rng.gen_range(0..=2 * p) - p;
            let dx = rng.gen_range(0..=2 * p) - p;
            let mut out = Image::filled(ImageShape::new(s.channels, *size, *size), 0.0);
            for c in 0..s.channels {
                for y in 0..*size {
                    for x in 0..*size {
                        let (sy, sx) = (y as isize + dy, x as isize + dx);
                        if (0..s.height as isize).contains(&sy) && (0..s.width as isize).contains(&sx) {
                            *out.at_mut(c, y, x) = img.at(c, sy as usize, sx as usize);
                        }
                    }
                }
            }
            out
        }
        Step::RandomHorizontalFlip { p } => {
            if rng.gen::<f64>() < *p {
                hflip(&mut img);
            }
            img
        }
        Step::RandomRotation { degrees } => {
            let a = rng.gen_range(-degrees..=*degrees);
            rotate(&img, a)
        }
        Step::ColorJitter {
            brightness,
            contrast,
            saturation,
            hue,
        } => {
            let factor = |rng: &mut ChaCha8Rng, v: f64| rng.gen_range((1.0 - v).max(0.0)..=1.0 + v);
            let fb = factor(rng, *brightness);
            let fc = factor(rng, *contrast);
            let fs = factor(rng, *saturation);
            let fh = rng.gen_range(-hue..=*hue);
            let mut order = [0usize, 1, 2, 3];
            rand::seq::SliceRandom::shuffle(&mut order[..], rng);
            for o in order {
                img = match o {
                    0 => adjust_brightness(img, fb),
                    1 => adjust_contrast(img, fc),
                    2 => adjust_saturation(img, fs),
                    _ => adjust_hue(img, fh),
                };
            }
            img
        }
        Step::RandAugment { num_ops, magnitude } => {
            for _ in 0..*num_ops {
                let op = rng.gen_range(0..RA_OPS.len());
                img = rand_augment_op(RA_OPS[op], img, *magnitude, rng);
            }
            img
        }
        Step::CutOut { size } => {
            let cy = rng.gen_range(0..s.height) as isize;
            let cx = rng.gen_range(0..s.width) as isize;
            let half = (*size / 2) as isize;
            let (y0, y1) = (
                (cy - half).max(0) as usize,
                ((cy - half + *size as isize).min(s.height as isize)) as usize,
            );
            let (x0, x1) = (
                (cx - half).max(0) as usize,
                ((cx - half + *size as isize).min(s.width as isize)) as usize,
            );
            for c in 0..s.channels {
                for y in y0..y1 {
                    for x in x0..x1 {
                        *img.at_mut(c, y, x) = 0.0;
                    }
                }
            }
            img
        }
    }
}

fn hflip(img: &mut Image) {
    let w = img.shape.width;
    for c in 0..img.shape.channels {
        for row in img.channel_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
}

/// Nearest-neighbour resampling where output pixel `(x, y)` reads input
/// `m * (x - cx, y - cy) + (cx, cy) + t`.
fn resample(img: &Image, m: [f64; 4], t: [f64; 2]) -> Image {
    let s = img.shape;
    let (cx, cy) = ((s.width as f64 - 1.0) / 2.0, (s.height as f64 - 1.0) / 2.0);
    let mut out = Image::filled(s, 0.0);
    for y in 0..s.height {
        for x in 0..s.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (m[0] * dx + m[1] * dy + cx + t[0]).round();
            let sy = (m[2] * dx + m[3] * dy + cy + t[1]).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < s.width && (sy as usize) < s.height {
                for c in 0..s.channels {
                    *out.at_mut(c, y, x) = img.at(c, sy as usize, sx as usize);
                }
            }
        }
    }
    out
}

fn rotate(img: &Image, degrees: f64) -> Image {
    let (sin, cos) = degrees.to_radians().sin_cos();
    resample(img, [cos, sin, -sin, cos], [0.0, 0.0])
}

fn gray(img: &Image) -> Vec<f64> {
    let s = img.shape;
    if s.channels < 3 {
        return img.channel(0).to_vec();
    }
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    (0..s.plane())
        .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
        .collect()
}

fn blend(mut img: Image, other: &dyn Fn(usize, usize) -> f64, f: f64) -> Image {
    let p = img.shape.plane();
    for c in 0..img.shape.channels {
        for (i, v) in img.channel_mut(c).iter_mut().enumerate() {
            *v = (f * *v + (1.0 - f) * other(c, i)).clamp(0.0, 1.0);
        }
    }
    debug_assert!(p > 0);
    img
}

fn adjust_brightness(img: Image, f: f64) -> Image {
    blend(img, &|_, _| 0.0, f)
}

fn adjust_contrast(img: Image, f: f64) -> Image {
    let g = gray(&img);
    let mean = g.iter().sum::<f64>() / g.len().max(1) as f64;
    blend(img, &|_, _| mean, f)
}

fn adjust_saturation(img: Image, f: f64) -> Image {
    if img.shape.channels < 3 {
        return img;
    }
    let g = gray(&img);
    blend(img, &|_, i| g[i], f)
}

fn adjust_hue(mut img: Image, shift: f64) -> Image {
    if img.shape.channels < 3 || shift == 0.0 {
        return img;
    }
    let p = img.shape.plane();
    for i in 0..p {
        let (r, g, b) = (img.data[i], img.data[p + i], img.data[2 * p + i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        img.data[i] = r;
        img.data[p + i] = g;
        img.data[2 * p + i] = b;
    }
    img
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// The fourteen operations RandAugment samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaOp {
    Identity,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Brightness,
    Color,
    Contrast,
    Sharpness,
    Posterize,
    Solarize,
    AutoContrast,
    Equalize,
}

pub const RA_OPS: [RaOp; 14] = [
    RaOp::Identity,
    RaOp::ShearX,
    RaOp::ShearY,
    RaOp::TranslateX,
    RaOp::TranslateY,
    RaOp::Rotate,
    RaOp::Brightness,
    RaOp::Color,
    RaOp::Contrast,
    RaOp::Sharpness,
    RaOp::Posterize,
    RaOp::Solarize,
    RaOp::AutoContrast,
    RaOp::Equalize,
];

/// Magnitude of `op` at bin `m` of [`RANDAUGMENT_BINS`], before sign.
pub fn ra_magnitude(op: RaOp, m: usize, width: usize) -> f64 {
    let frac = m as f64 / (RANDAUGMENT_BINS - 1) as f64;
    match op {
        RaOp::ShearX | RaOp::ShearY => 0.3 * frac,
        RaOp::TranslateX | RaOp::TranslateY => 150.0 / 331.0 * width as f64 * frac,
        RaOp::Rotate => 30.0 * frac,
        RaOp::Brightness | RaOp::Color | RaOp::Contrast | RaOp::Sharpness => 0.9 * frac,
        RaOp::Posterize => 8.0 - (m as f64 / ((RANDAUGMENT_BINS - 1) as f64 / 4.0)).round(),
        RaOp::Solarize => 1.0 - frac,
        RaOp::Identity | RaOp::AutoContrast | RaOp::Equalize => 0.0,
    }
}

fn rand_augment_op(op: RaOp, img: Image, m: usize, rng: &mut ChaCha8Rng) -> Image {
    let mag = ra_magnitude(op, m, img.shape.width);
    let signed = if rng.gen::<bool>() { -mag } else { mag };
    match op {
        RaOp::Identity => img,
        RaOp::ShearX => resample(&img, [1.0, signed, 0.0, 1.0], [0.0, 0.0]),
        RaOp::ShearY => resample(&img, [1.0, 0.0, signed, 1.0], [0.0, 0.0]),
        RaOp::TranslateX => resample(&img, [1.0, 0.0, 0.0, 1.0], [signed.round(), 0.0]),
        RaOp::TranslateY => resample(&img, [1.0, 0.0, 0.0, 1.0], [0.0, signed.round()]),
        RaOp::Rotate => rotate(&img, signed),
        RaOp::Brightness => adjust_brightness(img, 1.0 + signed),
        RaOp::Color => adjust_saturation(img, 1.0 + signed),
        RaOp::Contrast => adjust_contrast(img, 1.0 + signed),
        RaOp::Sharpness => sharpen(img, 1.0 + signed),
        RaOp::Posterize => posterize(img, mag as u32),
        RaOp::Solarize => {
            let mut img = img;
            img.data.iter_mut().filter(|v| **v >= mag).for_each(|v| *v = 1.0 - *v);
            img
        }
        RaOp::AutoContrast => autocontrast(img),
        RaOp::Equalize => equalize(img),
    }
}

fn sharpen(img: Image, f: f64) -> Image {
    let s = img.shape;
    let mut smooth = img.clone();
    for c in 0..s.channels {
        for y in 1..s.height.saturating_sub(1) {
            for x in 1..s.width.saturating_sub(1) {
                let mut acc = 4.0 * img.at(c, y, x);
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += img.at(c, y + dy - 1, x + dx - 1);
                    }
                }
                *smooth.at_mut(c, y, x) = acc / 13.0;
            }
        }
    }
    blend(img, &|c, i| smooth.channel(c)[i], f)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn posterize(mut img: Image, bits: u32) -> Image {
    let mask = if bits >= 8 { 0xffu8 } else { !(0xffu8 >> bits) };
    img.data.iter_mut().for_each(|v| *v = (to_u8(*v) & mask) as f64 / 255.0);
    img
}

fn autocontrast(mut img: Image) -> Image {
    for c in 0..img.shape.channels {
        let ch = img.channel_mut(c);
        let lo = ch.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            ch.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
    }
    img
}

fn equalize(mut img: Image) -> Image {
    for c in 0..img.shape.channels {
        let ch = img.channel_mut(c);
        let mut hist = [0usize; 256];
        ch.iter().for_each(|&v| hist[to_u8(v) as usize] += 1);
        let last = hist.iter().rposition(|&h| h > 0).map(|i| hist[i]).unwrap_or(0);
        let step = (ch.len() - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (i, h) in hist.iter().enumerate() {
            lut[i] = (acc / step).min(255) as u8;
            acc += h;
        }
        ch.iter_mut().for_each(|v| *v = lut[to_u8(*v) as usize] as f64 / 255.0);
    }
    img
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::config::{regimes, ParamValue};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn shape() -> ImageShape {
        ImageShape::new(3, 32, 32)
    }

    fn noisy(s: ImageShape) -> Image {
        let mut r = rng();
        Image::new(s, (0..s.len()).map(|_| r.gen::<f64>()).collect())
    }

    #[test]
    fn tr6_compiles_in_listed_order() {
        let r = regimes::regime(6).unwrap();
        let p = build_pipeline(&r.transforms, shape()).unwrap();
        assert_eq!(
            p.describe(),
            vec![
                "RandAugment(num_ops=2, magnitude=9)",
                "CutOut(size=16)",
                "ToTensor",
                "Normalize(mean=[0.49, 0.48, 0.45], std=[0.25, 0.24, 0.26])",
            ]
        );
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let p = build_pipeline(&[], shape()).unwrap();
        let img = noisy(shape());
        assert_eq!(p.apply(img.clone(), &mut rng()), img);
        let p = build_pipeline(&[TransformSpec::new(TransformKind::ToTensor)], shape()).unwrap();
        assert_eq!(p.apply(img.clone(), &mut rng()), img);
    }

    #[test]
    fn normalize_half_gray_is_zero() {
        let p = build_pipeline(&[TransformSpec::normalize(&[0.5; 3], &[0.5; 3])], shape()).unwrap();
        let out = p.apply(Image::filled(shape(), 0.5), &mut rng());
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_channel_mismatch_and_bad_std() {
        let one = ImageShape::new(1, 28, 28);
        assert!(build_pipeline(&[TransformSpec::normalize(&[0.5; 3], &[0.5; 3])], one).is_err());
        assert!(build_pipeline(&[TransformSpec::normalize(&[0.5; 3], &[0.5, 0.0, 0.5])], shape()).is_err());
    }

    #[test]
    fn crop_size_must_preserve_shape() {
        let t = TransformSpec::new(TransformKind::RandomCrop).with("size", ParamValue::Number(28.0));
        assert!(build_pipeline(&[t], shape()).is_err());
    }

    #[test]
    fn every_step_preserves_shape_and_range() {
        let mut specs: Vec<TransformSpec> = TransformKind::ALL
            .iter()
            .filter(|k| **k != TransformKind::Normalize)
            .map(|k| TransformSpec::new(*k))
            .collect();
        specs.push(TransformSpec::new(TransformKind::RandAugment).with("num_ops", ParamValue::Number(14.0)));
        let p = build_pipeline(&specs, shape()).unwrap();
        let mut r = rng();
        for _ in 0..20 {
            let out = p.apply(noisy(shape()), &mut r);
            assert_eq!(out.shape, shape());
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for op in RA_OPS {
            let out = rand_augment_op(op, noisy(shape()), 30, &mut r);
            assert_eq!(out.shape, shape());
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)), "{op:?}");
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let mut img = noisy(shape());
        let orig = img.clone();
        hflip(&mut img);
        assert_ne!(img, orig);
        assert_eq!(img.at(1, 3, 0), orig.at(1, 3, 31));
        hflip(&mut img);
        assert_eq!(img, orig);
    }

    #[test]
    fn cutout_zeroes_one_clipped_square() {
        let p = build_pipeline(&[TransformSpec::new(TransformKind::CutOut)], shape()).unwrap();
        let mut r = rng();
        for _ in 0..20 {
            let out = p.apply(Image::filled(shape(), 1.0), &mut r);
            let zeros = out.channel(0).iter().filter(|&&v| v == 0.0).count();
            assert!(zeros > 0 && zeros <= 256);
            for c in 1..3 {
                assert_eq!(out.channel(c), out.channel(0));
            }
        }
    }

    #[test]
    fn same_seed_same_augmentation() {
        let p = build_pipeline(&regimes::regime(4).unwrap().transforms, shape()).unwrap();
        let img = noisy(shape());
        assert_eq!(p.apply(img.clone(), &mut rng()), p.apply(img, &mut rng()));
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn randaugment_magnitudes() {
        assert_eq!(ra_magnitude(RaOp::Posterize, 0, 32), 8.0);
        assert_eq!(ra_magnitude(RaOp::Posterize, 9, 32), 7.0);
        assert!((ra_magnitude(RaOp::Rotate, 9, 32) - 9.0).abs() < 1e-12);
        assert_eq!(ra_magnitude(RaOp::Solarize, 30, 32), 0.0);
    }
}
