//! The three evaluation criteria.

use serde::{Deserialize, Serialize};

use crate::codec::AngleTriple;
use crate::error::{Error, Result};

/// Criterion I: mean absolute error per angle, degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    /// Mean of the three.
    pub overall: f64,
}

fn check_pair(preds: &[AngleTriple<f64>], gts: &[AngleTriple<f64>]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Usage("no samples to evaluate".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Usage(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    Ok(())
}

pub fn criterion1(preds: &[AngleTriple<f64>], gts: &[AngleTriple<f64>]) -> Result<Mae> {
    check_pair(preds, gts)?;
    let mut sum = [0.0; 3];
    for (p, g) in preds.iter().zip(gts) {
        let (p, g) = (p.to_array(), g.to_array());
        for a in 0..3 {
            sum[a] += (p[a] - g[a]).abs();
        }
    }
    let n = preds.len() as f64;
    let [pitch, yaw, roll] = sum.map(|s| s / n);
    Ok(Mae { pitch, yaw, roll, overall: (pitch + yaw + roll) / 3.0 })
}

/// Criterion II: for each threshold, the fraction of samples whose three
/// angle errors are all strictly below it.
pub fn criterion2(preds: &[AngleTriple<f64>], gts: &[AngleTriple<f64>], thresholds: &[f64]) -> Result<Vec<f64>> {
    check_pair(preds, gts)?;
    if let Some(t) = thresholds.iter().find(|&&t| !(t >= 0.0)) {
        return Err(Error::Usage(format!("threshold {t} must be non-negative")));
    }
    let worst: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let (p, g) = (p.to_array(), g.to_array());
            (0..3).map(|a| (p[a] - g[a]).abs()).fold(0.0, f64::max)
        })
        .collect();
    let n = preds.len() as f64;
    Ok(thresholds.iter().map(|&t| worst.iter().filter(|&&e| e < t).count() as f64 / n).collect())
}

/// One Criterion III bin `[lo, hi)` of the largest absolute true angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Share of all samples.
    pub fraction: f64,
    /// Overall MAE of the samples in the bin; `None` when empty.
    pub mae: Option<f64>,
}

/// Criterion III. Bins run from 0 up to the one holding the largest pose.
pub fn criterion3(preds: &[AngleTriple<f64>], gts: &[AngleTriple<f64>], bin_width: f64) -> Result<Vec<Bin>> {
    check_pair(preds, gts)?;
    if !(bin_width > 0.0) {
        return Err(Error::Usage(format!("bin width must be positive, got {bin_width}")));
    }
    let index: Vec<usize> = gts.iter().map(|g| (g.max_abs() / bin_width).floor() as usize).collect();
    let bins = index.iter().max().copied().unwrap_or(0) + 1;
    let n = preds.len() as f64;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (p, g): (Vec<_>, Vec<_>) = preds.iter().zip(gts).zip(&index).filter(|(_, &i)| i == b).map(|((p, g), _)| (*p, *g)).unzip();
        out.push(Bin {
            lo: b as f64 * bin_width,
            hi: (b + 1) as f64 * bin_width,
            count: p.len(),
            fraction: p.len() as f64 / n,
            mae: if p.is_empty() { None } else { Some(criterion1(&p, &g)?.overall) },
        });
    }
    Ok(out)
}

/// Default Criterion II thresholds, degrees.
pub fn default_thresholds() -> Vec<f64> {
    (1..=30).map(f64::from).collect()
}

pub const DEFAULT_BIN_WIDTH: f64 = 10.0;

/// All three criteria for one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: Mae,
    pub thresholds: Vec<f64>,
    pub curve: Vec<f64>,
    pub bins: Vec<Bin>,
    pub evaluated: usize,
    /// Samples on which no head was detected; not part of any criterion.
    pub no_detection: usize,
}

impl MetricsReport {
    /// `preds[i] = None` marks a failed detection.
    pub fn build(preds: &[Option<AngleTriple<f64>>], gts: &[AngleTriple<f64>], thresholds: &[f64], bin_width: f64) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::Usage(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
        }
        let (p, g): (Vec<_>, Vec<_>) = preds.iter().zip(gts).filter_map(|(p, g)| p.map(|p| (p, *g))).unzip();
        Ok(MetricsReport {
            mae: criterion1(&p, &g)?,
            thresholds: thresholds.to_vec(),
            curve: criterion2(&p, &g, thresholds)?,
            bins: criterion3(&p, &g, bin_width)?,
            evaluated: p.len(),
            no_detection: preds.len() - p.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(p: f64, y: f64, r: f64) -> AngleTriple<f64> {
        AngleTriple::new(p, y, r)
    }

    #[test]
    fn criterion1_hand_example() {
        let gts = [t(0.0, 0.0, 0.0), t(10.0, 10.0, 10.0)];
        let preds = [t(1.0, 2.0, 3.0), t(10.0, 10.0, 10.0)];
        let m = criterion1(&preds, &gts).unwrap();
        assert_eq!((m.pitch, m.yaw, m.roll, m.overall), (0.5, 1.0, 1.5, 1.0));
        assert_eq!(criterion1(&gts, &gts).unwrap().overall, 0.0);
        assert_eq!(criterion1(&[], &[]).unwrap_err().code(), "E_USAGE");
    }

    #[test]
    fn criterion2_hand_example() {
        let gts = [t(0.0, 0.0, 0.0); 3];
        let preds = [t(1.0, 2.0, 3.0), t(4.0, -4.0, 4.0), t(6.0, 1.0, 1.0)];
        let c = criterion2(&preds, &gts, &[0.0, 4.0, 5.0, f64::INFINITY]).unwrap();
        assert_eq!(c, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(criterion2(&gts, &gts, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn criterion3_hand_example() {
        let gts = [t(5.0, 0.0, 0.0), t(0.0, -15.0, 3.0), t(1.0, 2.0, 25.0)];
        let preds = [t(6.0, 0.0, 0.0), t(0.0, -15.0, 3.0), t(1.0, 2.0, 22.0)];
        let bins = criterion3(&preds, &gts, 10.0).unwrap();
        assert_eq!(bins.len(), 3);
        for (b, mae) in bins.iter().zip([1.0 / 3.0, 0.0, 1.0]) {
            assert_eq!(b.count, 1);
            assert_eq!(b.fraction, 1.0 / 3.0);
            assert_eq!(b.mae, Some(mae));
        }
        let zero = criterion3(&[t(1.0, 1.0, 1.0)], &[t(0.0, 0.0, 0.0)], 10.0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!((zero[0].lo, zero[0].hi, zero[0].fraction), (0.0, 10.0, 1.0));
        assert_eq!(criterion3(&preds, &gts, 0.0).unwrap_err().code(), "E_USAGE");
    }

    #[test]
    fn report_excludes_missed_detections() {
        let gts = [t(0.0, 0.0, 0.0), t(10.0, 10.0, 10.0), t(30.0, 0.0, 0.0)];
        let preds = [Some(t(1.0, 2.0, 3.0)), None, Some(t(30.0, 0.0, 0.0))];
        let r = MetricsReport::build(&preds, &gts, &default_thresholds(), DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!((r.evaluated, r.no_detection), (2, 1));
        assert_eq!(r.mae.overall, 1.0);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 2);
        assert_eq!(MetricsReport::build(&[None], &gts[..1], &[1.0], 10.0).unwrap_err().code(), "E_USAGE");
    }
}
