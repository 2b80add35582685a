//! Training loop, heatmap loss, evaluation criteria and protocols.

pub mod metrics;
pub mod optim;
pub mod protocols;
pub mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_angles, encode, AngleTriple, CodecConfig, HeatmapSet};
use crate::data::{batch_images, normalize, Sample, IMAGENET_MEAN, IMAGENET_STD};
use crate::error::{Error, Result};
use crate::net::{GradMode, Network};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub use metrics::{criterion1, criterion2, criterion3, Bin, Mae, MetricsReport};
pub use optim::{adam_step, lr_at_epoch, Adam, AdamConfig, Moments, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_steps: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bernoulli_w: f64,
    pub gaussian_w: f64,
    /// Standardize images with the ImageNet statistics.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.001,
            lr_factor: 0.5,
            lr_steps: vec![15, 30],
            epochs: 40,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bernoulli_w: 1.0,
            gaussian_w: 1.0,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule { lr_init: self.lr_init, lr_factor: self.lr_factor, lr_steps: self.lr_steps.clone() }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()));
        }
        if !(self.bernoulli_w >= 0.0 && self.gaussian_w >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `bernoulli_w · MSE(angle maps) + gaussian_w · MSE(confidence map)` on the tape.
pub fn heatmap_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bernoulli: Var,
    gaussian: Var,
    target_bernoulli: Var,
    target_gaussian: Var,
    cfg: &TrainConfig,
) -> Result<Var> {
    let lb = tape.mse_loss(bernoulli, target_bernoulli)?;
    let lg = tape.mse_loss(gaussian, target_gaussian)?;
    let lb = tape.scale(lb, T::lit(cfg.bernoulli_w));
    let lg = tape.scale(lg, T::lit(cfg.gaussian_w));
    tape.add(lb, lg)
}

/// [`heatmap_loss`] on plain heatmap sets.
pub fn heatmap_loss_value<T: Scalar>(pred: &HeatmapSet<T>, target: &HeatmapSet<T>, cfg: &TrainConfig) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::shape("heatmap_loss", format!("{:?} vs {:?}", pred.dims(), target.dims())));
    }
    let mse = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.len() as f64;
    let cat = |s: &HeatmapSet<T>| s.bernoulli.iter().flat_map(|g| g.data.iter().copied()).collect::<Vec<_>>();
    Ok(cfg.bernoulli_w * mse(&cat(pred), &cat(target)) + cfg.gaussian_w * mse(&pred.gaussian.data, &target.gaussian.data))
}

/// Network-ready copy of a dataset: normalized images and encoded targets.
pub struct Prepared<T> {
    images: Vec<Tensor<T>>,
    bernoulli: Vec<Vec<T>>,
    gaussian: Vec<Vec<T>>,
    pub angles: Vec<AngleTriple<f64>>,
    heatmap: (usize, usize),
}

fn check_codec<T: Scalar>(net: &Network<T>, codec: &CodecConfig<T>) -> Result<()> {
    let cfg = net.config();
    if (codec.heatmap_h, codec.heatmap_w) != (cfg.heatmap_h(), cfg.heatmap_w()) {
        return Err(Error::Config(format!(
            "codec grid {}x{} does not match the network heatmap {}x{}",
            codec.heatmap_w,
            codec.heatmap_h,
            cfg.heatmap_w(),
            cfg.heatmap_h()
        )));
    }
    Ok(())
}

pub fn input_image<T: Scalar>(s: &Sample<T>, cfg: &TrainConfig) -> Result<Tensor<T>> {
    if cfg.normalize {
        normalize(&s.image, IMAGENET_MEAN, IMAGENET_STD)
    } else {
        Ok(s.image.clone())
    }
}

impl<T: Scalar> Prepared<T> {
    pub fn new(samples: &[Sample<T>], codec: &CodecConfig<T>, cfg: &TrainConfig) -> Result<Self> {
        let mut p = Prepared {
            images: Vec::with_capacity(samples.len()),
            bernoulli: Vec::new(),
            gaussian: Vec::new(),
            angles: Vec::new(),
            heatmap: (codec.heatmap_h, codec.heatmap_w),
        };
        for s in samples {
            p.images.push(input_image(s, cfg)?);
            let hm = encode(&s.annotation, codec)?;
            p.bernoulli.push(hm.bernoulli.iter().flat_map(|g| g.data.iter().copied()).collect());
            p.gaussian.push(hm.gaussian.data.clone());
            let a = s.annotation.angles;
            p.angles.push(AngleTriple::new(a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64()));
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (h, w) = self.heatmap;
        let shape = self.images[idx[0]].shape().to_vec();
        let mut x = Vec::with_capacity(idx.len() * self.images[0].numel());
        let (mut b, mut g) = (Vec::new(), Vec::new());
        for &i in idx {
            x.extend_from_slice(self.images[i].data());
            b.extend_from_slice(&self.bernoulli[i]);
            g.extend_from_slice(&self.gaussian[i]);
        }
        let n = idx.len();
        Ok((
            Tensor::from_vec(vec![n, shape[0], shape[1], shape[2]], x)?,
            Tensor::from_vec(vec![n, 3, h, w], b)?,
            Tensor::from_vec(vec![n, 1, h, w], g)?,
        ))
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the batch losses.
    pub train_loss: f64,
    pub val_mae: Option<Mae>,
    pub val_no_detection: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

/// Batch order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One optimization step on a prepared batch; returns the loss.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    adam: &mut Adam<T>,
    batch: (Tensor<T>, Tensor<T>, Tensor<T>),
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (x, tb, tg) = batch;
    let mut tape = Tape::new();
    let x = tape.constant(x);
    let (out, bound) = net.forward_train(&mut tape, x)?;
    let (tb, tg) = (tape.constant(tb), tape.constant(tg));
    let loss = heatmap_loss(&mut tape, out.bernoulli, out.gaussian, tb, tg, cfg)?;
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    drop(tape);
    net.store_mut().absorb(&grads, &bound, GradMode::Replace);
    adam.step(net.store_mut(), lr)?;
    Ok(value)
}

/// Train `net` in place. `on_epoch` sees each history record as it is appended.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    codec: &CodecConfig<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    check_codec(net, codec)?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let data = Prepared::new(train_set, codec, cfg)?;
    let val = if val_set.is_empty() { None } else { Some(Prepared::new(val_set, codec, cfg)?) };
    let mut adam = Adam::new(net.store(), cfg.adam());
    let schedule = cfg.schedule();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, &schedule);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let loss = train_step(net, &mut adam, data.batch(idx)?, lr, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            total += loss;
            batches += 1;
        }
        let (val_mae, val_no_detection) = match &val {
            Some(v) => {
                let preds = predict_prepared(net, v, codec, cfg.batch_size.max(16))?;
                let missed = preds.iter().filter(|p| p.is_none()).count();
                let (p, g): (Vec<_>, Vec<_>) = preds.iter().zip(&v.angles).filter_map(|(p, g)| p.map(|p| (p, *g))).unzip();
                (if p.is_empty() { None } else { Some(criterion1(&p, &g)?) }, missed)
            }
            None => (None, 0),
        };
        let record = EpochRecord { epoch, lr, train_loss: total / batches as f64, val_mae, val_no_detection };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}

fn decode_all<T: Scalar>(sets: &[HeatmapSet<T>], codec: &CodecConfig<T>) -> Result<Vec<Option<AngleTriple<f64>>>> {
    sets.iter()
        .map(|hm| match decode_angles(hm, codec) {
            Ok(a) => Ok(Some(AngleTriple::new(a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64()))),
            Err(Error::NoForeground) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

fn predict_prepared<T: Scalar>(net: &Network<T>, data: &Prepared<T>, codec: &CodecConfig<T>, batch: usize) -> Result<Vec<Option<AngleTriple<f64>>>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _, _) = data.batch(chunk)?;
        out.extend(decode_all(&net.predict(&x)?, codec)?);
    }
    Ok(out)
}

/// Heatmaps for raw (unnormalized) samples.
pub fn predict_heatmaps<T: Scalar>(net: &Network<T>, samples: &[Sample<T>], cfg: &TrainConfig, batch: usize) -> Result<Vec<HeatmapSet<T>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let inputs: Vec<Sample<T>> =
            chunk.iter().map(|s| Ok(Sample { image: input_image(s, cfg)?, annotation: s.annotation })).collect::<Result<_>>()?;
        let refs: Vec<&Sample<T>> = inputs.iter().collect();
        out.extend(net.predict(&batch_images(&refs)?)?);
    }
    Ok(out)
}

/// Decoded angles per sample; `None` where no head was detected.
pub fn predict_angles<T: Scalar>(
    net: &Network<T>,
    samples: &[Sample<T>],
    codec: &CodecConfig<T>,
    cfg: &TrainConfig,
    batch: usize,
) -> Result<Vec<Option<AngleTriple<f64>>>> {
    predict_angles_threaded(net, samples, codec, cfg, batch, 1)
}

/// [`predict_angles`] with the samples split into contiguous chunks over up
/// to `threads` workers; the output order (and every value) is unchanged.
pub fn predict_angles_threaded<T: Scalar>(
    net: &Network<T>,
    samples: &[Sample<T>],
    codec: &CodecConfig<T>,
    cfg: &TrainConfig,
    batch: usize,
    threads: usize,
) -> Result<Vec<Option<AngleTriple<f64>>>> {
    check_codec(net, codec)?;
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        return decode_all(&predict_heatmaps(net, samples, cfg, batch)?, codec);
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| s.spawn(move || decode_all(&predict_heatmaps(net, part, cfg, batch)?, codec)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn ground_truth<T: Scalar>(samples: &[Sample<T>]) -> Vec<AngleTriple<f64>> {
    samples
        .iter()
        .map(|s| {
            let a = s.annotation.angles;
            AngleTriple::new(a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64())
        })
        .collect()
}

/// All three criteria of `net` on `samples`.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    samples: &[Sample<T>],
    codec: &CodecConfig<T>,
    cfg: &TrainConfig,
    thresholds: &[f64],
    bin_width: f64,
) -> Result<MetricsReport> {
    let preds = predict_angles(net, samples, codec, cfg, 32)?;
    MetricsReport::build(&preds, &ground_truth(samples), thresholds, bin_width)
}
