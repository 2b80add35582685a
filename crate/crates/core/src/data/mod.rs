//! Labeled samples: synthetic markers, BIWI-layout datasets, augmentations.

pub mod biwi;
pub mod geometry;
pub mod synth;

use crate::codec::HeadAnnotation;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use biwi::{parse_biwi_pose, parse_calibration, project_center, BiwiPose, Intrinsics};
pub use geometry::{euler_to_matrix, matrix_to_euler, Mat3};
pub use synth::{render_marker, synth_generate, SynthConfig};

/// Per-channel statistics of ImageNet, RGB.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// An image `[3, H, W]` with its annotation in heatmap coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub annotation: HeadAnnotation<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn dims(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[1], s[2])
    }
}

fn image_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize)> {
    match image.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::shape("image", format!("expected [3, H, W], got {s:?}"))),
    }
}

/// `(x - mean_c) / std_c` per channel.
pub fn normalize<T: Scalar>(image: &Tensor<T>, mean: [f64; 3], std: [f64; 3]) -> Result<Tensor<T>> {
    let (h, w) = image_dims(image)?;
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(format!("normalization std must be positive, got {std:?}")));
    }
    let mut out = image.clone();
    for (c, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (T::lit(mean[c]), T::lit(std[c]));
        plane.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize<T: Scalar>(image: &Tensor<T>, mean: [f64; 3], std: [f64; 3]) -> Result<Tensor<T>> {
    let (h, w) = image_dims(image)?;
    let mut out = image.clone();
    for (c, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (T::lit(mean[c]), T::lit(std[c]));
        plane.iter_mut().for_each(|v| *v = *v * s + m);
    }
    Ok(out)
}

/// Shift the image by whole pixels (exposed area zero) and the annotation by
/// `(dx, dy) / stride`.
pub fn augment_translate<T: Scalar>(s: &Sample<T>, dx: i64, dy: i64, stride: usize, heatmap: (usize, usize)) -> Result<Sample<T>> {
    let (h, w) = image_dims(&s.image)?;
    let ann = HeadAnnotation {
        center_x: s.annotation.center_x + T::lit(dx as f64 / stride as f64),
        center_y: s.annotation.center_y + T::lit(dy as f64 / stride as f64),
        angles: s.annotation.angles,
    };
    let (hh, hw) = heatmap;
    let inside = |v: T, n: usize| v >= T::zero() && v <= T::lit((n - 1) as f64);
    if !inside(ann.center_x, hw) || !inside(ann.center_y, hh) {
        return Err(Error::Augmentation(format!(
            "shift ({dx}, {dy}) moves the center to ({}, {}), outside the {hw}x{hh} heatmap",
            ann.center_x, ann.center_y
        )));
    }
    let src = s.image.data();
    let mut data = vec![T::zero(); src.len()];
    for c in 0..3 {
        for y in 0..h {
            let sy = y as i64 - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 - dx;
                if sx >= 0 && sx < w as i64 {
                    data[(c * h + y) * w + x] = src[(c * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Ok(Sample { image: Tensor::from_vec(vec![3, h, w], data)?, annotation: ann })
}

/// Pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Overwrite `rect` with `fill`; the annotation is unchanged.
pub fn augment_occlude<T: Scalar>(s: &Sample<T>, rect: Rect, fill: [T; 3]) -> Result<Sample<T>> {
    let (h, w) = image_dims(&s.image)?;
    if rect.x + rect.w > w || rect.y + rect.h > h {
        return Err(Error::Augmentation(format!("occluder {rect:?} exceeds the {w}x{h} image")));
    }
    let mut out = s.clone();
    let data = out.image.data_mut();
    for (c, &f) in fill.iter().enumerate() {
        for y in rect.y..rect.y + rect.h {
            data[(c * h + y) * w + rect.x..(c * h + y) * w + rect.x + rect.w].fill(f);
        }
    }
    Ok(out)
}

/// Stack images into a `[N, 3, H, W]` batch.
pub fn batch_images<T: Scalar>(samples: &[&Sample<T>]) -> Result<Tensor<T>> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (h, w) = image_dims(&first.image)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if image_dims(&s.image)? != (h, w) {
            return Err(Error::shape("batch_images", format!("{:?} vs [3, {h}, {w}]", s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
    }
    Tensor::from_vec(vec![samples.len(), 3, h, w], data)
}
