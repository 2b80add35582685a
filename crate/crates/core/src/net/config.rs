//! Architecture description and its text form.
//!
//! The text form is TOML with per-stage keys named like the usual
//! high-resolution-network hyperparameter tables:
//!
//! ```toml
//! INPUT_SIZE = "64x64"      # width x height
//! STEM_CHANNELS = 64
//! STEM_STRIDE = 4
//! R_REDUCE = 16
//!
//! [STAGE1]
//! NUM_BOTTLENECK = [4]
//! NUM_CHANNELS = [64]
//!
//! [STAGE2]
//! NUM_BASICBLOCK = [4, 4]
//! NUM_CHANNELS = [32, 64]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual unit used inside a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    /// Output channels per unit of branch width.
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub num_blocks: usize,
    /// Block width; a bottleneck branch outputs `4 · channels`.
    pub channels: usize,
    pub block: BlockKind,
}

impl BranchSpec {
    pub fn out_channels(&self) -> usize {
        self.channels * self.block.expansion()
    }
}

/// One stage: branch `k` runs at `1/2^k` of the stage's top resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub branches: Vec<BranchSpec>,
}

impl StageSpec {
    fn uniform(kind: BlockKind, blocks: usize, widths: &[usize]) -> Self {
        StageSpec {
            branches: widths.iter().map(|&channels| BranchSpec { num_blocks: blocks, channels, block: kind }).collect(),
        }
    }

    pub fn out_channels(&self) -> Vec<usize> {
        self.branches.iter().map(BranchSpec::out_channels).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    /// Total downsampling of the stem; a power of two, one stride-2 conv per
    /// octave (a single stride-1 conv when 1).
    pub stem_stride: usize,
    pub stages: Vec<StageSpec>,
    /// Channel reduction ratio of the fusion weight branch.
    pub r_reduce: usize,
    pub output_channels: usize,
    pub leaky_slope: f64,
}

/// Number of heatmap channels: three angles plus the confidence map.
pub const OUTPUT_CHANNELS: usize = 4;

impl NetworkConfig {
    /// Four-stage configuration with widths 32/64/128/256, four blocks per
    /// branch and bottlenecks only in the first stage.
    pub fn paper(input_w: usize, input_h: usize) -> Self {
        NetworkConfig {
            input_h,
            input_w,
            input_channels: 3,
            stem_channels: 64,
            stem_stride: 4,
            stages: vec![
                StageSpec::uniform(BlockKind::Bottleneck, 4, &[64]),
                StageSpec::uniform(BlockKind::Basic, 4, &[32, 64]),
                StageSpec::uniform(BlockKind::Basic, 4, &[32, 64, 128]),
                StageSpec::uniform(BlockKind::Basic, 4, &[32, 64, 128, 256]),
            ],
            r_reduce: 16,
            output_channels: OUTPUT_CHANNELS,
            leaky_slope: 0.2,
        }
    }

    /// Desk-scale network: widths 8/16/32/64, one block per branch, 64×64 input.
    pub fn toy() -> Self {
        NetworkConfig {
            input_h: 64,
            input_w: 64,
            input_channels: 3,
            stem_channels: 16,
            stem_stride: 4,
            stages: vec![
                StageSpec::uniform(BlockKind::Bottleneck, 1, &[8]),
                StageSpec::uniform(BlockKind::Basic, 1, &[8, 16]),
                StageSpec::uniform(BlockKind::Basic, 1, &[8, 16, 32]),
                StageSpec::uniform(BlockKind::Basic, 1, &[8, 16, 32, 64]),
            ],
            r_reduce: 4,
            output_channels: OUTPUT_CHANNELS,
            leaky_slope: 0.2,
        }
    }

    /// Gradient-check sized network: widths 4/8, one block per branch, 16×16 input.
    pub fn tiny() -> Self {
        NetworkConfig {
            input_h: 16,
            input_w: 16,
            input_channels: 3,
            stem_channels: 4,
            stem_stride: 1,
            stages: vec![
                StageSpec::uniform(BlockKind::Bottleneck, 1, &[2]),
                StageSpec::uniform(BlockKind::Basic, 1, &[4, 8]),
                StageSpec::uniform(BlockKind::Basic, 1, &[4, 8, 8]),
                StageSpec::uniform(BlockKind::Basic, 1, &[4, 8, 8, 8]),
            ],
            r_reduce: 2,
            output_channels: OUTPUT_CHANNELS,
            leaky_slope: 0.2,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            "paper" => Ok(Self::paper(64, 64)),
            "paper-bg" => Ok(Self::paper(128, 96)),
            other => Err(Error::Config(format!("unknown preset {other:?} (toy, tiny, paper, paper-bg)"))),
        }
    }

    pub fn heatmap_h(&self) -> usize {
        self.input_h / self.stem_stride
    }

    pub fn heatmap_w(&self) -> usize {
        self.input_w / self.stem_stride
    }

    /// Required divisor of the input height and width.
    pub fn size_multiple(&self) -> usize {
        self.stem_stride << (self.stages.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stages.len() != 4 {
            return err(format!("expected 4 stages, got {}", self.stages.len()));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.branches.len() != s + 1 {
                return err(format!("stage {} must have {} branches, got {}", s + 1, s + 1, stage.branches.len()));
            }
            for (k, b) in stage.branches.iter().enumerate() {
                if b.num_blocks == 0 || b.channels == 0 {
                    return err(format!("stage {} branch {k}: blocks and channels must be positive", s + 1));
                }
                if s > 0 && b.out_channels() % self.r_reduce != 0 {
                    return err(format!(
                        "r_reduce {} does not divide stage {} branch {k} width {}",
                        self.r_reduce,
                        s + 1,
                        b.out_channels()
                    ));
                }
            }
        }
        if self.r_reduce == 0 {
            return err("r_reduce must be positive".into());
        }
        if !self.stem_stride.is_power_of_two() {
            return err(format!("stem_stride must be a power of two, got {}", self.stem_stride));
        }
        if self.output_channels != OUTPUT_CHANNELS {
            return err(format!("output_channels must be {OUTPUT_CHANNELS}"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return err(format!("leaky slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        let m = self.size_multiple();
        if self.input_h % m != 0 || self.input_w % m != 0 || self.input_h == 0 || self.input_w == 0 {
            return err(format!(
                "input {}x{} (WxH) must be a positive multiple of {m} in both sides, e.g. {}x{} or {}x{}",
                self.input_w,
                self.input_h,
                (self.input_w / m).max(1) * m,
                (self.input_h / m).max(1) * m,
                (self.input_w / m + 1) * m,
                (self.input_h / m + 1) * m,
            ));
        }
        if self.input_channels == 0 || self.stem_channels == 0 {
            return err("channel counts must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let mut stages = std::collections::BTreeMap::new();
        for (s, st) in self.stages.iter().enumerate() {
            let counts: Vec<usize> = st.branches.iter().map(|b| b.num_blocks).collect();
            let widths: Vec<usize> = st.branches.iter().map(|b| b.channels).collect();
            let bottleneck = st.branches.iter().all(|b| b.block == BlockKind::Bottleneck);
            stages.insert(
                format!("STAGE{}", s + 1),
                StageToml {
                    num_bottleneck: bottleneck.then(|| counts.clone()),
                    num_basicblock: (!bottleneck).then_some(counts),
                    num_channels: widths,
                },
            );
        }
        let doc = ConfigToml {
            input_size: format!("{}x{}", self.input_w, self.input_h),
            input_channels: self.input_channels,
            stem_channels: self.stem_channels,
            stem_stride: self.stem_stride,
            r_reduce: self.r_reduce,
            output_channels: self.output_channels,
            leaky_slope: self.leaky_slope,
            stages,
        };
        toml::to_string(&doc).expect("network config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ConfigToml = toml::from_str(text).map_err(|e| Error::Config(format!("network config: {e}")))?;
        let (w, h) = doc
            .input_size
            .split_once('x')
            .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
            .ok_or_else(|| Error::Config(format!("INPUT_SIZE must look like 64x64, got {:?}", doc.input_size)))?;
        let mut stages = Vec::new();
        for s in 1..=doc.stages.len() {
            let key = format!("STAGE{s}");
            let st = doc.stages.get(&key).ok_or_else(|| Error::Config(format!("missing [{key}]")))?;
            let (kind, counts) = match (&st.num_bottleneck, &st.num_basicblock) {
                (Some(c), None) => (BlockKind::Bottleneck, c),
                (None, Some(c)) => (BlockKind::Basic, c),
                _ => return Err(Error::Config(format!("[{key}] needs exactly one of NUM_BOTTLENECK, NUM_BASICBLOCK"))),
            };
            if counts.len() != st.num_channels.len() {
                return Err(Error::Config(format!("[{key}] block and channel lists differ in length")));
            }
            stages.push(StageSpec {
                branches: counts
                    .iter()
                    .zip(&st.num_channels)
                    .map(|(&num_blocks, &channels)| BranchSpec { num_blocks, channels, block: kind })
                    .collect(),
            });
        }
        let cfg = NetworkConfig {
            input_h: h,
            input_w: w,
            input_channels: doc.input_channels,
            stem_channels: doc.stem_channels,
            stem_stride: doc.stem_stride,
            stages,
            r_reduce: doc.r_reduce,
            output_channels: doc.output_channels,
            leaky_slope: doc.leaky_slope,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageToml {
    #[serde(rename = "NUM_BOTTLENECK", skip_serializing_if = "Option::is_none")]
    num_bottleneck: Option<Vec<usize>>,
    #[serde(rename = "NUM_BASICBLOCK", skip_serializing_if = "Option::is_none")]
    num_basicblock: Option<Vec<usize>>,
    #[serde(rename = "NUM_CHANNELS")]
    num_channels: Vec<usize>,
}

// unknown top-level keys land in `stages` and fail to parse as a stage table
#[derive(Serialize, Deserialize)]
struct ConfigToml {
    #[serde(rename = "INPUT_SIZE")]
    input_size: String,
    #[serde(rename = "INPUT_CHANNELS", default = "three")]
    input_channels: usize,
    #[serde(rename = "STEM_CHANNELS")]
    stem_channels: usize,
    #[serde(rename = "STEM_STRIDE", default = "four")]
    stem_stride: usize,
    #[serde(rename = "R_REDUCE")]
    r_reduce: usize,
    #[serde(rename = "OUTPUT_CHANNELS", default = "four")]
    output_channels: usize,
    #[serde(rename = "LEAKY_SLOPE", default = "leaky")]
    leaky_slope: f64,
    #[serde(flatten)]
    stages: std::collections::BTreeMap<String, StageToml>,
}

fn three() -> usize {
    3
}

fn four() -> usize {
    4
}

fn leaky() -> f64 {
    0.2
}
