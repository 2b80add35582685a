use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use heatpose::checkpoint;
use heatpose::codec::{decode_angles, encode, head_center_estimate, to_pgm, AngleTriple, HeadAnnotation, PgmRange};
use heatpose::data::biwi::{load_dataset, load_image, resize_image, Layout};
use heatpose::data::{synth_generate, Intrinsics, Sample};
use heatpose::net::{Network, NetworkConfig};
use heatpose::train::{self, protocols, report, MetricsReport};
use heatpose::{Error, Result, Scalar};

use crate::config::{thread_cap, Precision, RunConfig};

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    precision: Precision,
    config_hash: String,
    outputs: Vec<String>,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().ok_or_else(|| Error::Usage("an output directory is required (--out)".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Resolved config plus a manifest naming every output, both relative to `dir`.
fn finish(dir: &Path, command: &str, cfg: &RunConfig, mut outputs: Vec<String>) -> Result<()> {
    write_file(&dir.join("config.resolved.toml"), cfg.to_toml().as_bytes())?;
    outputs.push("config.resolved.toml".into());
    let m = Manifest {
        tool: "heatpose",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        precision: cfg.precision,
        config_hash: cfg.hash(),
        outputs,
    };
    write_file(&dir.join("manifest.toml"), toml::to_string(&m).expect("manifest serializes").as_bytes())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a PathBuf> {
    let p = p.as_ref().ok_or_else(|| Error::Usage(format!("{what} is required ({flag})")))?;
    if !p.exists() {
        return Err(Error::MissingPath(p.clone()));
    }
    Ok(p)
}

fn layout(net: &NetworkConfig) -> Layout {
    Layout { input_w: net.input_w, input_h: net.input_h, stride: net.stem_stride, intrinsics: Intrinsics::KINECT_RGB }
}

fn read_checkpoint(cfg: &RunConfig) -> Result<(Vec<u8>, Precision)> {
    let path = required(&cfg.paths.checkpoint, "a checkpoint", "--checkpoint")?;
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let precision = match checkpoint::scalar_name(&bytes)?.as_str() {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        other => return Err(Error::Version(format!("unsupported checkpoint scalar {other:?}"))),
    };
    Ok((bytes, precision))
}

fn network_from<T: Scalar>(bytes: &[u8], cfg: &RunConfig) -> Result<Network<T>> {
    let net = checkpoint::from_bytes::<T>(bytes)?;
    if cfg.network_explicit() && cfg.network()? != *net.config() {
        return Err(Error::Version("checkpoint network differs from the configured one".into()));
    }
    Ok(net)
}

pub fn synth_gen(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let net = cfg.network()?;
    let samples = synth_generate::<f64>(&cfg.synth(&net)?, cfg.synth.n)?;
    let dir = out_dir(cfg)?;
    let written = heatpose::data::biwi::export_dataset(&dir, &samples, net.stem_stride, &Intrinsics::KINECT_RGB)?;
    let outputs = written.iter().map(|p| p.strip_prefix(&dir).unwrap_or(p).display().to_string()).collect();
    finish(&dir, "synth-gen", cfg, outputs)?;
    println!("wrote {} samples to {}", samples.len(), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let net_cfg = cfg.network()?;
    let codec = cfg.codec::<T>(&net_cfg)?;
    let data = required(&cfg.paths.data, "a dataset", "--data")?;
    let lay = layout(&net_cfg);
    let train_set = load_dataset::<T>(data, &lay)?;
    let val_set = match &cfg.paths.val {
        Some(_) => load_dataset::<T>(required(&cfg.paths.val, "a validation set", "--val")?, &lay)?,
        None => Vec::new(),
    };
    let dir = out_dir(cfg)?;
    let hist_path = dir.join("history.jsonl");
    let mut hist = fs::File::create(&hist_path).map_err(|e| Error::Io { path: hist_path.clone(), source: e })?;
    let mut write_err = None;
    let mut net = Network::<T>::new(net_cfg, cfg.seed)?;
    let history = train::train(&mut net, &train_set, &val_set, &codec, &cfg.train_config(), |r| {
        if write_err.is_none() {
            write_err = writeln!(hist, "{}", report::history_line(r)).err();
        }
        match &r.val_mae {
            Some(m) => eprintln!("epoch {:>3} lr {:.2e} loss {:.6} val mae {:.3}", r.epoch, r.lr, r.train_loss, m.overall),
            None => eprintln!("epoch {:>3} lr {:.2e} loss {:.6}", r.epoch, r.lr, r.train_loss),
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::Io { path: hist_path, source: e });
    }
    let ckpt = dir.join("checkpoint.hpck");
    checkpoint::save(&net, &ckpt)?;
    finish(&dir, "train", cfg, vec!["checkpoint.hpck".into(), "history.jsonl".into()])?;
    let last = history.records.last().map_or(f64::NAN, |r| r.train_loss);
    println!("trained {} epochs on {} samples, final loss {last:.6}", history.records.len(), train_set.len());
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, robustness: bool, oracle: bool) -> Result<()> {
    cfg.validate()?;
    if oracle {
        if robustness {
            return Err(Error::Usage("--robustness needs a checkpoint, not --oracle".into()));
        }
        return match cfg.precision {
            Precision::F32 => eval_oracle::<f32>(cfg),
            Precision::F64 => eval_oracle::<f64>(cfg),
        };
    }
    let (bytes, precision) = read_checkpoint(cfg)?;
    let cfg = &RunConfig { precision, ..cfg.clone() };
    match precision {
        Precision::F32 => eval_typed::<f32>(cfg, &bytes, robustness),
        Precision::F64 => eval_typed::<f64>(cfg, &bytes, robustness),
    }
}

fn write_metrics(cfg: &RunConfig, r: &MetricsReport, mut outputs: Vec<String>) -> Result<PathBuf> {
    let dir = out_dir(cfg)?;
    report::write_report(&dir, r)?;
    let mut all = vec!["criterion1.csv".to_string(), "criterion2.csv".into(), "criterion3.csv".into()];
    all.append(&mut outputs);
    finish(&dir, "eval", cfg, all)?;
    println!(
        "mae pitch {:.3} yaw {:.3} roll {:.3} overall {:.3} ({} evaluated, {} without detection)",
        r.mae.pitch, r.mae.yaw, r.mae.roll, r.mae.overall, r.evaluated, r.no_detection
    );
    Ok(dir)
}

fn eval_oracle<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let net_cfg = cfg.network()?;
    let codec = cfg.codec::<T>(&net_cfg)?;
    let samples = load_dataset::<T>(required(&cfg.paths.data, "a dataset", "--data")?, &layout(&net_cfg))?;
    let preds = samples
        .iter()
        .map(|s| match decode_angles(&encode(&s.annotation, &codec)?, &codec) {
            Ok(a) => Ok(Some(AngleTriple::new(a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64()))),
            Err(Error::NoForeground) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let r = MetricsReport::build(&preds, &train::ground_truth(&samples), &cfg.eval.thresholds, cfg.eval.bin_width)?;
    write_metrics(cfg, &r, Vec::new())?;
    Ok(())
}

fn eval_typed<T: Scalar>(cfg: &RunConfig, bytes: &[u8], robustness: bool) -> Result<()> {
    let threads = thread_cap()?;
    let net = network_from::<T>(bytes, cfg)?;
    let net_cfg = net.config().clone();
    let codec = cfg.codec::<T>(&net_cfg)?;
    let samples = load_dataset::<T>(required(&cfg.paths.data, "a dataset", "--data")?, &layout(&net_cfg))?;
    let tcfg = cfg.train_config();
    let preds = train::predict_angles_threaded(&net, &samples, &codec, &tcfg, 32, threads)?;
    let r = MetricsReport::build(&preds, &train::ground_truth(&samples), &cfg.eval.thresholds, cfg.eval.bin_width)?;
    let rows = if robustness {
        Some(protocols::robustness_eval(&net, &samples, &codec, &tcfg, &cfg.robustness(net_cfg.stem_stride))?)
    } else {
        None
    };
    let extra = if rows.is_some() { vec!["robustness.csv".to_string()] } else { Vec::new() };
    let dir = write_metrics(cfg, &r, extra)?;
    if let Some(rows) = rows {
        report::write(&dir.join("robustness.csv"), &report::robustness_csv(&rows))?;
        for row in &rows {
            println!("{:<10} mean {:.3} spread {:.3}", row.condition.name(), row.mean, row.spread);
        }
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig, image: &Path) -> Result<()> {
    cfg.validate()?;
    if !image.exists() {
        return Err(Error::MissingPath(image.to_path_buf()));
    }
    let (bytes, precision) = read_checkpoint(cfg)?;
    let cfg = &RunConfig { precision, ..cfg.clone() };
    match precision {
        Precision::F32 => inspect_typed::<f32>(cfg, &bytes, image),
        Precision::F64 => inspect_typed::<f64>(cfg, &bytes, image),
    }
}

fn inspect_typed<T: Scalar>(cfg: &RunConfig, bytes: &[u8], path: &Path) -> Result<()> {
    let net = network_from::<T>(bytes, cfg)?;
    let nc = net.config().clone();
    let codec = cfg.codec::<T>(&nc)?;
    let raw = load_image::<T>(path)?;
    let (orig_h, orig_w) = (raw.shape()[1], raw.shape()[2]);
    let zero = T::zero();
    let sample = Sample {
        image: resize_image(&raw, nc.input_w, nc.input_h)?,
        annotation: HeadAnnotation { center_x: zero, center_y: zero, angles: AngleTriple::new(zero, zero, zero) },
    };
    let hm = train::predict_heatmaps(&net, &[sample], &cfg.train_config(), 1)?.remove(0);
    let dir = out_dir(cfg)?;
    let names = ["pitch.pgm", "yaw.pgm", "roll.pgm", "gaussian.pgm"];
    for (grid, name) in hm.bernoulli.iter().zip(names) {
        write_file(&dir.join(name), &to_pgm(grid, PgmRange::Signed))?;
    }
    write_file(&dir.join(names[3]), &to_pgm(&hm.gaussian, PgmRange::Unit))?;
    finish(&dir, "inspect", cfg, names.iter().map(|n| n.to_string()).collect())?;
    match decode_angles(&hm, &codec) {
        Ok(a) => {
            let (cx, cy) = head_center_estimate(&hm.gaussian)?;
            let sx = nc.stem_stride as f64 * orig_w as f64 / nc.input_w as f64;
            let sy = nc.stem_stride as f64 * orig_h as f64 / nc.input_h as f64;
            println!("pitch {:.3} yaw {:.3} roll {:.3}", a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64());
            println!("center {:.1} {:.1}", cx.as_f64() * sx, cy.as_f64() * sy);
        }
        Err(Error::NoForeground) => println!("no head detected"),
        Err(e) => return Err(e),
    }
    Ok(())
}

