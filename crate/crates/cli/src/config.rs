//! Run configuration: defaults, TOML file, command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use heatpose::codec::CodecConfig;
use heatpose::data::SynthConfig;
use heatpose::net::NetworkConfig;
use heatpose::train::metrics::DEFAULT_BIN_WIDTH;
use heatpose::train::protocols::RobustnessConfig;
use heatpose::train::TrainConfig;
use heatpose::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset root in the BIWI layout.
    pub data: Option<PathBuf>,
    /// Optional validation dataset for per-epoch Criterion I.
    pub val: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n: usize,
    pub background: bool,
    pub marker_size: f64,
    pub bar_width: f64,
    pub jitter: f64,
    pub pitch_range: f64,
    pub yaw_range: f64,
    pub roll_range: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let t = SynthConfig::toy(0);
        SynthSection {
            n: 512,
            background: t.background,
            marker_size: t.marker_size,
            bar_width: t.bar_width,
            jitter: t.jitter,
            pitch_range: t.pitch_range,
            yaw_range: t.yaw_range,
            roll_range: t.roll_range,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    /// Disc radius in heatmap cells; a quarter of the smaller side when unset.
    pub r_heat: Option<f64>,
    /// Gaussian width in cells; `0.6 · r_heat` when unset.
    pub sigma: Option<f64>,
    pub weight_threshold: f64,
    pub angle_scale: f64,
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection { r_heat: None, sigma: None, weight_threshold: 0.5, angle_scale: 90.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub thresholds: Vec<f64>,
    pub bin_width: f64,
    pub repeats: usize,
    pub max_shift: i64,
    pub occluder_min: f64,
    pub occluder_max: f64,
    pub fill: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let r = RobustnessConfig::default();
        EvalSection {
            thresholds: heatpose::train::metrics::default_thresholds(),
            bin_width: DEFAULT_BIN_WIDTH,
            repeats: r.repeats,
            max_shift: r.max_shift,
            occluder_min: r.occluder_frac.0,
            occluder_max: r.occluder_frac.1,
            fill: r.fill[0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data generation, initialization and batch order.
    pub seed: u64,
    /// `toy`, `tiny`, `paper` or `paper-bg`; `toy` when neither this nor
    /// `network_file` is set.
    pub preset: Option<String>,
    pub network_file: Option<PathBuf>,
    pub precision: Precision,
    pub paths: Paths,
    pub synth: SynthSection,
    pub codec: CodecSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            preset: None,
            network_file: None,
            precision: Precision::default(),
            paths: Paths::default(),
            synth: SynthSection::default(),
            codec: CodecSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// `sha256:` digest of the resolved TOML.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let cfg = match &self.network_file {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingPath(p.clone()));
                }
                NetworkConfig::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)?
            }
            None => NetworkConfig::preset(self.preset.as_deref().unwrap_or("toy"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether the network was chosen explicitly rather than defaulted.
    pub fn network_explicit(&self) -> bool {
        self.preset.is_some() || self.network_file.is_some()
    }

    pub fn codec<T: Scalar>(&self, net: &NetworkConfig) -> Result<CodecConfig<T>> {
        let (h, w) = (net.heatmap_h(), net.heatmap_w());
        let r = self.codec.r_heat.unwrap_or(h.min(w) as f64 / 4.0);
        let mut c = CodecConfig::new(h, w, T::lit(r))?;
        if let Some(s) = self.codec.sigma {
            c.sigma = T::lit(s);
        }
        c.weight_threshold = T::lit(self.codec.weight_threshold);
        c.angle_scale = T::lit(self.codec.angle_scale);
        c.validate()?;
        Ok(c)
    }

    pub fn synth(&self, net: &NetworkConfig) -> Result<SynthConfig> {
        let s = &self.synth;
        let cfg = SynthConfig {
            seed: self.seed,
            image_h: net.input_h,
            image_w: net.input_w,
            marker_size: s.marker_size,
            bar_width: s.bar_width,
            pitch_range: s.pitch_range,
            yaw_range: s.yaw_range,
            roll_range: s.roll_range,
            jitter: s.jitter,
            background: s.background,
            stride: net.stem_stride,
        };
        cfg.validate(self.codec.angle_scale)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn robustness(&self, stride: usize) -> RobustnessConfig {
        let e = &self.eval;
        RobustnessConfig {
            repeats: e.repeats,
            seed: self.seed,
            max_shift: e.max_shift,
            occluder_frac: (e.occluder_min, e.occluder_max),
            fill: [e.fill; 3],
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network()?;
        self.train.validate()?;
        if self.eval.bin_width <= 0.0 || self.eval.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config("eval thresholds must be non-negative and bin_width positive".into()));
        }
        let (lo, hi) = (self.eval.occluder_min, self.eval.occluder_max);
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("occluder fractions must satisfy 0 < min <= max <= 1, got {lo}..{hi}")));
        }
        Ok(())
    }
}

/// Worker-thread cap from `HEATPOSE_THREADS`, else the machine's parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("HEATPOSE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("HEATPOSE_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
