//! Deterministic synthetic head stand-ins: a shaded three-bar marker.
//!
//! Each body axis of the rotated frame is drawn as a bar through the center,
//! orthographically projected, colored per axis and shaded by depth (near
//! end bright, far end dark). Bars extend to both sides of the center, so
//! the canonical pose is left/right symmetric and mirroring an image negates
//! yaw and roll.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::euler_to_matrix;
use super::Sample;
use crate::codec::{AngleTriple, HeadAnnotation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bar colors for the pitch (body x), yaw (body y) and roll (body z) axes.
pub const AXIS_COLORS: [[f64; 3]; 3] = [[1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.2, 0.35, 1.0]];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_h: usize,
    pub image_w: usize,
    /// Half length of each bar, pixels.
    pub marker_size: f64,
    /// Half thickness of each bar, pixels.
    pub bar_width: f64,
    pub pitch_range: f64,
    pub yaw_range: f64,
    pub roll_range: f64,
    /// Maximum center offset from the image middle along each axis, pixels.
    pub jitter: f64,
    /// Value-noise texture behind the marker; flat black when off.
    pub background: bool,
    /// Image pixels per heatmap cell, for the annotation.
    pub stride: usize,
}

impl SynthConfig {
    /// 64x64 images for the toy network.
    pub fn toy(seed: u64) -> Self {
        SynthConfig {
            seed,
            image_h: 64,
            image_w: 64,
            marker_size: 24.0,
            bar_width: 3.5,
            pitch_range: 60.0,
            yaw_range: 75.0,
            roll_range: 50.0,
            jitter: 4.0,
            background: true,
            stride: 4,
        }
    }

    pub fn validate(&self, angle_scale: f64) -> Result<()> {
        let reach = self.marker_size + self.bar_width;
        let ranges = [self.pitch_range, self.yaw_range, self.roll_range];
        if ranges.iter().any(|&r| !(r >= 0.0 && r <= angle_scale)) {
            return Err(Error::Config(format!("angle ranges {ranges:?} must lie within [0, {angle_scale}]")));
        }
        if !(self.marker_size > 0.0 && self.bar_width > 0.0 && self.jitter >= 0.0) {
            return Err(Error::Config("marker size, bar width and jitter must be positive".into()));
        }
        if self.stride == 0 || self.image_w % self.stride != 0 || self.image_h % self.stride != 0 {
            return Err(Error::Config(format!("image {}x{} is not a multiple of stride {}", self.image_w, self.image_h, self.stride)));
        }
        if 2.0 * reach >= (self.image_w.min(self.image_h) as f64) - 1.0 {
            return Err(Error::Config(format!(
                "marker reach {reach} px does not fit a {}x{} image",
                self.image_w, self.image_h
            )));
        }
        Ok(())
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise, mostly gray with a weak tint.
fn value_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const CELL: f64 = 8.0;
    let (gh, gw) = ((h as f64 / CELL) as usize + 2, (w as f64 / CELL) as usize + 2);
    let lattice: Vec<[f64; 3]> = (0..gh * gw)
        .map(|_| {
            let g = rng.random_range(0.15..0.85);
            [0, 1, 2].map(|_| (g + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0))
        })
        .collect();
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        let fy = y as f64 / CELL;
        let (iy, ty) = (fy as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / CELL;
            let (ix, tx) = (fx as usize, smooth(fx.fract()));
            for c in 0..3 {
                let l = |r: usize, q: usize| lattice[r * gw + q][c];
                let top = l(iy, ix) * (1.0 - tx) + l(iy, ix + 1) * tx;
                let bot = l(iy + 1, ix) * (1.0 - tx) + l(iy + 1, ix + 1) * tx;
                out[(c * h + y) * w + x] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Depth of the nearest point of bar `d` (projected half axis) covering
/// screen point `p`, or `None` when the bar misses it.
fn bar_depth(p: [f64; 2], d: [f64; 2], depth: f64, half_width: f64) -> Option<f64> {
    let dd = d[0] * d[0] + d[1] * d[1];
    let pp = p[0] * p[0] + p[1] * p[1];
    let (lo, hi) = if dd < 1e-12 {
        if pp > half_width * half_width {
            return None;
        }
        (-1.0, 1.0)
    } else {
        // |p - s·d|² <= w²  ⇔  dd·s² − 2(p·d)s + (pp − w²) <= 0
        let pd = p[0] * d[0] + p[1] * d[1];
        let disc = pd * pd - dd * (pp - half_width * half_width);
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let (lo, hi) = (((pd - root) / dd).max(-1.0), ((pd + root) / dd).min(1.0));
        if lo > hi {
            return None;
        }
        (lo, hi)
    };
    Some((lo * depth).max(hi * depth))
}

/// Render the marker for `angles` centered at image pixel `(cu, cv)` over
/// `background` (`3·H·W` values, or black).
pub fn render_marker<T: Scalar>(
    cfg: &SynthConfig,
    angles: AngleTriple<f64>,
    cu: f64,
    cv: f64,
    background: Option<&[f64]>,
) -> Tensor<T> {
    let (h, w) = (cfg.image_h, cfg.image_w);
    let r = euler_to_matrix(angles);
    let l = cfg.marker_size;
    let axes: [([f64; 2], f64); 3] = [0, 1, 2].map(|k| ([l * r[0][k], l * r[1][k]], l * r[2][k]));
    let mut data: Vec<f64> = match background {
        Some(bg) => bg.to_vec(),
        None => vec![0.0; 3 * h * w],
    };
    for y in 0..h {
        for x in 0..w {
            // screen frame: x right, y up
            let p = [x as f64 - cu, cv - y as f64];
            let mut best: Option<(f64, usize)> = None;
            for (k, &(d, depth)) in axes.iter().enumerate() {
                if let Some(z) = bar_depth(p, d, depth, cfg.bar_width) {
                    if best.is_none_or(|(bz, _)| z > bz) {
                        best = Some((z, k));
                    }
                }
            }
            if let Some((z, k)) = best {
                let shade = 0.55 + 0.45 * z / l;
                for c in 0..3 {
                    data[(c * h + y) * w + x] = AXIS_COLORS[k][c] * shade;
                }
            }
        }
    }
    Tensor::from_vec(vec![3, h, w], data.into_iter().map(T::lit).collect()).expect("sizes match")
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sample `index` of the stream defined by `cfg.seed`.
pub fn synth_sample<T: Scalar>(cfg: &SynthConfig, index: u64) -> Sample<T> {
    let mut rng = sample_rng(cfg.seed, index);
    let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let angles = AngleTriple::new(sym(&mut rng, cfg.pitch_range), sym(&mut rng, cfg.yaw_range), sym(&mut rng, cfg.roll_range));
    let reach = cfg.marker_size + cfg.bar_width;
    let (mid_u, mid_v) = ((cfg.image_w - 1) as f64 / 2.0, (cfg.image_h - 1) as f64 / 2.0);
    let fits = |c: f64, n: usize| c - reach >= 0.0 && c + reach <= (n - 1) as f64;
    let (cu, cv) = loop {
        let cu = mid_u + sym(&mut rng, cfg.jitter);
        let cv = mid_v + sym(&mut rng, cfg.jitter);
        if fits(cu, cfg.image_w) && fits(cv, cfg.image_h) {
            break (cu, cv);
        }
    };
    let bg = cfg.background.then(|| value_noise(cfg.image_h, cfg.image_w, &mut rng));
    let image = render_marker(cfg, angles, cu, cv, bg.as_deref());
    let s = cfg.stride as f64;
    Sample {
        image,
        annotation: HeadAnnotation {
            center_x: T::lit(cu / s),
            center_y: T::lit(cv / s),
            angles: AngleTriple::new(T::lit(angles.pitch), T::lit(angles.yaw), T::lit(angles.roll)),
        },
    }
}

/// `n` samples, fully determined by `(cfg.seed, index)`.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig, n: usize) -> Result<Vec<Sample<T>>> {
    if n == 0 {
        return Err(Error::Usage("sample count must be at least 1".into()));
    }
    cfg.validate(90.0)?;
    Ok((0..n as u64).map(|i| synth_sample(cfg, i)).collect())
}
