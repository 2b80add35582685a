//! The radius sweep and the translation/occlusion robustness protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{criterion1, ground_truth, predict_angles, train, Mae, TrainConfig};
use crate::codec::CodecConfig;
use crate::data::{augment_occlude, augment_translate, Rect, Sample};
use crate::error::{Error, Result};
use crate::net::{Network, NetworkConfig};
use crate::scalar::Scalar;

/// Everything except the radius that a sweep holds fixed.
pub struct SweepSetup<'a, T> {
    pub network: NetworkConfig,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub train_set: &'a [Sample<T>],
    pub test_set: &'a [Sample<T>],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r_heat: f64,
    /// `None` when no test sample produced a detection.
    pub mae: Option<Mae>,
    pub no_detection: usize,
}

impl SweepRow {
    /// Overall MAE, infinite when nothing was detected.
    pub fn score(&self) -> f64 {
        self.mae.map_or(f64::INFINITY, |m| m.overall)
    }
}

fn mae_of(preds: &[Option<crate::codec::AngleTriple<f64>>], gts: &[crate::codec::AngleTriple<f64>]) -> Result<(Option<Mae>, usize)> {
    let missed = preds.iter().filter(|p| p.is_none()).count();
    let (p, g): (Vec<_>, Vec<_>) = preds.iter().zip(gts).filter_map(|(p, g)| p.map(|p| (p, *g))).unzip();
    Ok((if p.is_empty() { None } else { Some(criterion1(&p, &g)?) }, missed))
}

/// Train one model per radius from identical seeds and data.
pub fn radius_sweep<T: Scalar>(radii: &[f64], setup: &SweepSetup<'_, T>) -> Result<Vec<SweepRow>> {
    if radii.len() < 3 {
        return Err(Error::Usage(format!("a sweep needs at least 3 radii, got {}", radii.len())));
    }
    let (h, w) = (setup.network.heatmap_h(), setup.network.heatmap_w());
    let gts = ground_truth(setup.test_set);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let codec = CodecConfig::new(h, w, T::lit(r))?;
        let mut net = Network::<T>::new(setup.network.clone(), setup.init_seed)?;
        train(&mut net, setup.train_set, &[], &codec, &setup.train, |_| {})?;
        let preds = predict_angles(&net, setup.test_set, &codec, &setup.train, 32)?;
        let (mae, no_detection) = mae_of(&preds, &gts)?;
        rows.push(SweepRow { r_heat: r, mae, no_detection });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Translated,
    Occluded,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Clean, Condition::Translated, Condition::Occluded];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Translated => "translated",
            Condition::Occluded => "occluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub repeats: usize,
    pub seed: u64,
    /// Largest shift along each axis, pixels.
    pub max_shift: i64,
    /// Occluder side as a fraction of the image side, drawn from this range.
    pub occluder_frac: (f64, f64),
    /// Occluder color before normalization.
    pub fill: [f64; 3],
    /// Image pixels per heatmap cell.
    pub stride: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig { repeats: 5, seed: 0, max_shift: 8, occluder_frac: (0.2, 0.4), fill: [0.5; 3], stride: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub condition: Condition,
    /// Overall MAE of each repeat.
    pub runs: Vec<f64>,
    pub mean: f64,
    /// `max - min` over the repeats.
    pub spread: f64,
    pub no_detection: usize,
}

fn perturb<T: Scalar>(s: &Sample<T>, cond: Condition, cfg: &RobustnessConfig, heatmap: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Sample<T>> {
    match cond {
        Condition::Clean => Ok(s.clone()),
        Condition::Translated => {
            for _ in 0..64 {
                let dx = rng.random_range(-cfg.max_shift..=cfg.max_shift);
                let dy = rng.random_range(-cfg.max_shift..=cfg.max_shift);
                match augment_translate(s, dx, dy, cfg.stride, heatmap) {
                    Err(Error::Augmentation(_)) => continue,
                    other => return other,
                }
            }
            Ok(s.clone())
        }
        Condition::Occluded => {
            let (h, w) = s.dims();
            let (lo, hi) = cfg.occluder_frac;
            let rw = ((rng.random_range(lo..=hi) * w as f64).round() as usize).clamp(1, w);
            let rh = ((rng.random_range(lo..=hi) * h as f64).round() as usize).clamp(1, h);
            let x = rng.random_range(0..=w - rw);
            let y = rng.random_range(0..=h - rh);
            augment_occlude(s, Rect { x, y, w: rw, h: rh }, cfg.fill.map(T::lit))
        }
    }
}

/// Criterion I per condition over seeded repeats; each repeat draws fresh
/// augmentation parameters for every sample.
pub fn robustness_eval<T: Scalar>(
    net: &Network<T>,
    test_set: &[Sample<T>],
    codec: &CodecConfig<T>,
    train_cfg: &TrainConfig,
    cfg: &RobustnessConfig,
) -> Result<Vec<RobustnessRow>> {
    if cfg.repeats == 0 {
        return Err(Error::Usage("robustness needs at least one repeat".into()));
    }
    if test_set.is_empty() {
        return Err(Error::Usage("test set is empty".into()));
    }
    let gts = ground_truth(test_set);
    let heatmap = (codec.heatmap_h, codec.heatmap_w);
    let mut rows = Vec::new();
    for (c, cond) in Condition::ALL.into_iter().enumerate() {
        let mut runs = Vec::with_capacity(cfg.repeats);
        let mut missed = 0;
        for rep in 0..cfg.repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((rep * Condition::ALL.len() + c) as u64);
            let set: Vec<Sample<T>> = test_set.iter().map(|s| perturb(s, cond, cfg, heatmap, &mut rng)).collect::<Result<_>>()?;
            let preds = predict_angles(net, &set, codec, train_cfg, 32)?;
            let (mae, no_det) = mae_of(&preds, &gts)?;
            missed += no_det;
            runs.push(mae.map_or(f64::INFINITY, |m| m.overall));
        }
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let (lo, hi) = runs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        rows.push(RobustnessRow { condition: cond, runs, mean, spread: hi - lo, no_detection: missed });
    }
    Ok(rows)
}
