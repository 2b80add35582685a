//! Bernoulli angle heatmaps and the Gaussian confidence map.
//!
//! Encoding writes each normalized angle into a disc of radius `r_heat`
//! around the head center (zero elsewhere) and a peak-normalized Gaussian of
//! width `sigma` into the confidence grid. Decoding averages each angle grid
//! weighted by the confidence values that exceed `weight_threshold`.

mod export;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use export::{parse_text_dump, to_pgm, to_text_dump, PgmRange};

/// Ratio between the Gaussian width and the disc radius.
pub const SIGMA_PER_RADIUS: f64 = 0.6;

/// Head angles in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AngleTriple<T> {
    pub pitch: T,
    pub yaw: T,
    pub roll: T,
}

impl<T: Scalar> AngleTriple<T> {
    pub fn new(pitch: T, yaw: T, roll: T) -> Self {
        AngleTriple { pitch, yaw, roll }
    }

    /// `[pitch, yaw, roll]`, the heatmap channel order.
    pub fn to_array(self) -> [T; 3] {
        [self.pitch, self.yaw, self.roll]
    }

    pub fn from_array([pitch, yaw, roll]: [T; 3]) -> Self {
        AngleTriple { pitch, yaw, roll }
    }

    pub fn max_abs(self) -> T {
        self.pitch.abs().max(self.yaw.abs()).max(self.roll.abs())
    }
}

/// Ground truth for one image: head center in heatmap pixels plus angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAnnotation<T> {
    pub center_x: T,
    pub center_y: T,
    pub angles: AngleTriple<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig<T> {
    pub r_heat: T,
    pub sigma: T,
    pub weight_threshold: T,
    pub angle_scale: T,
    pub heatmap_h: usize,
    pub heatmap_w: usize,
}

impl<T: Scalar> CodecConfig<T> {
    /// Config with `sigma = 0.6 · r_heat`, threshold 0.5 and a 90° angle scale.
    pub fn new(heatmap_h: usize, heatmap_w: usize, r_heat: T) -> Result<Self> {
        let cfg = CodecConfig {
            r_heat,
            sigma: T::lit(SIGMA_PER_RADIUS) * r_heat,
            weight_threshold: T::lit(0.5),
            angle_scale: T::lit(90.0),
            heatmap_h,
            heatmap_w,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default radius: a quarter of the smaller heatmap side.
    pub fn with_default_radius(heatmap_h: usize, heatmap_w: usize) -> Result<Self> {
        Self::new(heatmap_h, heatmap_w, T::lit(heatmap_h.min(heatmap_w) as f64 / 4.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.r_heat > T::zero()) {
            return bad(format!("r_heat must be positive, got {}", self.r_heat));
        }
        if !(self.sigma > T::zero()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.weight_threshold > T::zero() && self.weight_threshold < T::one()) {
            return bad(format!("weight_threshold must lie in (0, 1), got {}", self.weight_threshold));
        }
        if !(self.angle_scale > T::zero()) {
            return bad(format!("angle_scale must be positive, got {}", self.angle_scale));
        }
        if self.heatmap_h == 0 || self.heatmap_w == 0 {
            return bad("heatmap size must be non-zero".into());
        }
        Ok(())
    }
}

/// Single-channel `h × w` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid { h, w, data: vec![T::zero(); h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("grid", format!("{h}x{w} needs {} values, got {}", h * w, data.len())));
        }
        Ok(Grid { h, w, data })
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.w + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.w + col] = v;
    }
}

/// Three Bernoulli grids (pitch, yaw, roll) and the Gaussian grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSet<T> {
    pub bernoulli: [Grid<T>; 3],
    pub gaussian: Grid<T>,
}

impl<T: Scalar> HeatmapSet<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        HeatmapSet {
            bernoulli: [Grid::zeros(h, w), Grid::zeros(h, w), Grid::zeros(h, w)],
            gaussian: Grid::zeros(h, w),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.gaussian.h, self.gaussian.w)
    }

    /// Channel-major `[4, h, w]` values: pitch, yaw, roll, gaussian.
    pub fn to_channels(&self) -> Vec<T> {
        self.bernoulli.iter().chain(std::iter::once(&self.gaussian)).flat_map(|g| g.data.iter().copied()).collect()
    }

    pub fn from_channels(h: usize, w: usize, values: &[T]) -> Result<Self> {
        let plane = h * w;
        if values.len() != 4 * plane {
            return Err(Error::shape("heatmap set", format!("need 4x{h}x{w} values, got {}", values.len())));
        }
        let grid = |k: usize| Grid { h, w, data: values[k * plane..(k + 1) * plane].to_vec() };
        Ok(HeatmapSet { bernoulli: [grid(0), grid(1), grid(2)], gaussian: grid(3) })
    }
}

fn check_center<T: Scalar>(ann: &HeadAnnotation<T>, cfg: &CodecConfig<T>) -> Result<()> {
    let (x, y) = (ann.center_x, ann.center_y);
    let max_x = T::lit((cfg.heatmap_w - 1) as f64);
    let max_y = T::lit((cfg.heatmap_h - 1) as f64);
    if !(x >= T::zero() && x <= max_x && y >= T::zero() && y <= max_y) {
        return Err(Error::Annotation(format!(
            "center ({x}, {y}) outside the {}x{} heatmap",
            cfg.heatmap_w, cfg.heatmap_h
        )));
    }
    Ok(())
}

fn rounded_center<T: Scalar>(ann: &HeadAnnotation<T>) -> (usize, usize) {
    let r = |v: T| v.round().to_usize().unwrap_or(0);
    (r(ann.center_y), r(ann.center_x))
}

/// Normalized angle grids. Pixel `p` is foreground when its distance to the
/// center is at most `r_heat`; the pixel nearest the center is always
/// foreground so that sub-pixel radii still mark the head.
pub fn encode_bernoulli<T: Scalar>(ann: &HeadAnnotation<T>, cfg: &CodecConfig<T>) -> Result<[Grid<T>; 3]> {
    check_center(ann, cfg)?;
    let limit = ann.angles.max_abs();
    if !(limit <= cfg.angle_scale) {
        return Err(Error::Annotation(format!("angle {limit} exceeds angle_scale {}", cfg.angle_scale)));
    }
    let values = ann.angles.to_array().map(|a| a / cfg.angle_scale);
    let mut grids = [
        Grid::zeros(cfg.heatmap_h, cfg.heatmap_w),
        Grid::zeros(cfg.heatmap_h, cfg.heatmap_w),
        Grid::zeros(cfg.heatmap_h, cfg.heatmap_w),
    ];
    let r2 = cfg.r_heat * cfg.r_heat;
    let (cr, cc) = rounded_center(ann);
    for row in 0..cfg.heatmap_h {
        for col in 0..cfg.heatmap_w {
            let dy = T::lit(row as f64) - ann.center_y;
            let dx = T::lit(col as f64) - ann.center_x;
            if dx * dx + dy * dy <= r2 || (row, col) == (cr, cc) {
                for (g, &v) in grids.iter_mut().zip(&values) {
                    g.set(row, col, v);
                }
            }
        }
    }
    Ok(grids)
}

/// `exp(-‖p − center‖² / 2σ²)`, equal to 1 at the center.
pub fn encode_gaussian<T: Scalar>(ann: &HeadAnnotation<T>, cfg: &CodecConfig<T>) -> Result<Grid<T>> {
    check_center(ann, cfg)?;
    let mut grid = Grid::zeros(cfg.heatmap_h, cfg.heatmap_w);
    let denom = T::lit(2.0) * cfg.sigma * cfg.sigma;
    for row in 0..cfg.heatmap_h {
        for col in 0..cfg.heatmap_w {
            let dy = T::lit(row as f64) - ann.center_y;
            let dx = T::lit(col as f64) - ann.center_x;
            grid.set(row, col, (-(dx * dx + dy * dy) / denom).exp());
        }
    }
    Ok(grid)
}

pub fn encode<T: Scalar>(ann: &HeadAnnotation<T>, cfg: &CodecConfig<T>) -> Result<HeatmapSet<T>> {
    Ok(HeatmapSet { bernoulli: encode_bernoulli(ann, cfg)?, gaussian: encode_gaussian(ann, cfg)? })
}

/// Mean of the strictly nonzero pixels. Diagnostic only: a true angle of 0
/// has no nonzero pixels and fails with [`Error::NoForeground`].
pub fn decode_naive<T: Scalar>(grid: &Grid<T>) -> Result<T> {
    let mut nonzero = grid.data.iter().copied().filter(|v| *v != T::zero());
    let first = nonzero.next().ok_or(Error::NoForeground)?;
    // mean taken about the first sample, so a constant disc decodes exactly
    let (offset, count) = nonzero.fold((T::zero(), 1usize), |(s, n), v| (s + (v - first), n + 1));
    Ok(first + offset / T::lit(count as f64))
}

/// Confidence-weighted mean of `bernoulli` over pixels whose Gaussian weight
/// exceeds the threshold.
pub fn decode_weighted<T: Scalar>(bernoulli: &Grid<T>, gaussian: &Grid<T>, cfg: &CodecConfig<T>) -> Result<T> {
    if (bernoulli.h, bernoulli.w) != (gaussian.h, gaussian.w) {
        return Err(Error::shape(
            "decode_weighted",
            format!("{}x{} vs {}x{}", bernoulli.h, bernoulli.w, gaussian.h, gaussian.w),
        ));
    }
    let mut support = bernoulli
        .data
        .iter()
        .zip(&gaussian.data)
        .filter(|(_, &w)| w > cfg.weight_threshold);
    let (&first, &w0) = support.next().ok_or(Error::NoForeground)?;
    // weighted mean taken about the first sample, exact for constant grids
    let (num, den) = support.fold((T::zero(), w0), |(n, d), (&l, &w)| (n + w * (l - first), d + w));
    Ok(first + num / den)
}

/// Angles in degrees; [`Error::NoForeground`] means no head was detected.
pub fn decode_angles<T: Scalar>(hm: &HeatmapSet<T>, cfg: &CodecConfig<T>) -> Result<AngleTriple<T>> {
    let mut out = [T::zero(); 3];
    for (o, grid) in out.iter_mut().zip(&hm.bernoulli) {
        *o = decode_weighted(grid, &hm.gaussian, cfg)? * cfg.angle_scale;
    }
    Ok(AngleTriple::from_array(out))
}

/// Location `(x, y)` of the Gaussian maximum; ties go to the smallest row,
/// then the smallest column.
pub fn head_center_estimate<T: Scalar>(gaussian: &Grid<T>) -> Result<(T, T)> {
    let mut best = 0;
    let mut lo = gaussian.data[0];
    for (i, &v) in gaussian.data.iter().enumerate() {
        if v > gaussian.data[best] {
            best = i;
        }
        lo = lo.min(v);
    }
    if !(gaussian.data[best] > lo) {
        return Err(Error::NoForeground);
    }
    let (row, col) = (best / gaussian.w, best % gaussian.w);
    Ok((T::lit(col as f64), T::lit(row as f64)))
}
