//! Building blocks of the multiscale network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, BufferId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormMode, BatchNormState, Tape, Tensor, Var};

/// Shrink factor for the head weights. Branch features reach a large
/// variance after repeated residual sums, so a full-size head starts far
/// from the targets and trains slowly.
pub const HEAD_INIT_SCALE: f64 = 0.01;

enum Stats<'a, T> {
    Train(&'a mut [(String, BatchNormState<T>)]),
    Eval(Vec<&'a BatchNormState<T>>),
}

/// Per-forward state handed to every layer.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    bound: &'a Bound,
    stats: Stats<'a, T>,
    slope: T,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    /// Training context: batch statistics, running stats updated in `store`.
    pub fn train(tape: &'a mut Tape<T>, bound: &'a Bound, store: &'a mut ParamStore<T>, slope: T) -> Self {
        Ctx { tape, bound, stats: Stats::Train(store.buffers_mut()), slope }
    }

    /// Inference context: running statistics, store untouched.
    pub fn eval(tape: &'a mut Tape<T>, bound: &'a Bound, store: &'a ParamStore<T>, slope: T) -> Self {
        Ctx { tape, bound, stats: Stats::Eval(store.states()), slope }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.bound.var(id)
    }

    pub fn training(&self) -> bool {
        matches!(self.stats, Stats::Train(_))
    }

    pub fn act(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, self.slope)
    }

    fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, buf: BufferId) -> Result<Var> {
        let mode = match &mut self.stats {
            Stats::Train(b) => BatchNormMode::Train(&mut b[buf.0].1),
            Stats::Eval(b) => BatchNormMode::Eval(b[buf.0]),
        };
        self.tape.batchnorm2d(x, gamma, beta, mode)
    }
}

/// Allocates named, initialized parameters.
pub struct LayerBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    slope: f64,
}

impl<'a, T: Scalar> LayerBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64, slope: f64) -> Self {
        LayerBuilder { store, rng: ChaCha8Rng::seed_from_u64(seed), slope }
    }

    pub fn store(&mut self) -> &mut ParamStore<T> {
        self.store
    }

    /// Uniform, scaled by fan-in for a leaky rectifier.
    fn fan_in_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / ((1.0 + self.slope * self.slope) * fan_in as f64)).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.random_range(-bound..bound))).collect();
        Tensor::from_vec(shape.to_vec(), data).expect("shape matches")
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool) -> Conv {
        let w = self.fan_in_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel);
        let weight = self.store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv { weight, bias, stride, padding: kernel / 2 }
    }

    /// Output projection: 1×1 with the given initial bias, weights at
    /// [`HEAD_INIT_SCALE`] of the usual bound.
    pub fn head(&mut self, name: &str, cin: usize, bias: &[f64]) -> Conv {
        let cout = bias.len();
        let mut w = self.fan_in_uniform(&[cout, cin, 1, 1], cin);
        w.data_mut().iter_mut().for_each(|v| *v = *v * T::lit(HEAD_INIT_SCALE));
        let weight = self.store.add(format!("{name}.weight"), w);
        let bias = Tensor::from_vec(vec![cout], bias.iter().map(|&b| T::lit(b)).collect()).expect("shape matches");
        let bias = Some(self.store.add(format!("{name}.bias"), bias));
        Conv { weight, bias, stride: 1, padding: 0 }
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            state: self.store.add_buffer(format!("{name}.running"), BatchNormState::new(channels)),
        }
    }

    pub fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvBn {
        ConvBn { conv: self.conv(&format!("{name}.conv"), cin, cout, kernel, stride, false), norm: self.norm(&format!("{name}.bn"), cout) }
    }

    /// `W1` fan-in initialized, `W2` zero: the gate starts at exactly 0.5.
    pub fn fusion_weights(&mut self, name: &str, channels: usize, r_reduce: usize) -> FusionWeights {
        let hidden = channels / r_reduce;
        let w1 = self.fan_in_uniform(&[hidden, channels], channels);
        FusionWeights {
            w1: self.store.add(format!("{name}.w1"), w1),
            w2: self.store.add(format!("{name}.w2"), Tensor::zeros(&[channels, hidden])),
            channels,
        }
    }

    pub fn basic_block(&mut self, name: &str, channels: usize) -> BasicBlock {
        BasicBlock {
            channels,
            first: self.conv_bn(&format!("{name}.1"), channels, channels, 3, 1),
            second: self.conv_bn(&format!("{name}.2"), channels, channels, 3, 1),
        }
    }

    pub fn bottleneck(&mut self, name: &str, cin: usize, width: usize) -> Bottleneck {
        let cout = width * 4;
        Bottleneck {
            cin,
            reduce: self.conv_bn(&format!("{name}.1"), cin, width, 1, 1),
            spatial: self.conv_bn(&format!("{name}.2"), width, width, 3, 1),
            expand: self.conv_bn(&format!("{name}.3"), width, cout, 1, 1),
            projection: (cin != cout).then(|| self.conv_bn(&format!("{name}.proj"), cin, cout, 1, 1)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        ctx.tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BufferId,
}

impl Norm {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        ctx.batchnorm(x, g, b, self.state)
    }
}

/// Convolution followed by batch normalization, no activation.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBn {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.norm.forward(ctx, y)
    }

    pub fn forward_act<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward(ctx, x)?;
        Ok(ctx.act(y))
    }
}

fn channels_of<T: Scalar>(ctx: &Ctx<'_, T>, x: Var) -> Result<usize> {
    Ok(ctx.tape.value(x).dims4()?.1)
}

/// Two 3×3 conv-BN layers with an identity shortcut; shape preserving.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub channels: usize,
    pub first: ConvBn,
    pub second: ConvBn,
}

impl BasicBlock {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = channels_of(ctx, x)?;
        if c != self.channels {
            return Err(Error::Config(format!("basic block expects {} channels, got {c}", self.channels)));
        }
        let y = self.first.forward_act(ctx, x)?;
        let y = self.second.forward(ctx, y)?;
        let y = ctx.tape.add(y, x)?;
        Ok(ctx.act(y))
    }
}

/// 1×1 reduce, 3×3, 1×1 expand (×4) with a projected shortcut when the
/// channel count changes.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub cin: usize,
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub expand: ConvBn,
    pub projection: Option<ConvBn>,
}

impl Bottleneck {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = channels_of(ctx, x)?;
        if c != self.cin {
            return Err(Error::Config(format!("bottleneck expects {} channels, got {c}", self.cin)));
        }
        let y = self.reduce.forward_act(ctx, x)?;
        let y = self.spatial.forward_act(ctx, y)?;
        let y = self.expand.forward(ctx, y)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, shortcut)?;
        Ok(ctx.act(y))
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

impl Block {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Block::Basic(b) => b.forward(ctx, x),
            Block::Bottleneck(b) => b.forward(ctx, x),
        }
    }
}

/// Squeeze/excite weights of one source branch.
#[derive(Clone, Debug)]
pub struct FusionWeights {
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
}

/// `w = sigmoid(W2 · relu(W1 · GAP(x)))`, one weight per sample and channel.
pub fn channelwise_weights<T: Scalar>(tape: &mut Tape<T>, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let c = tape.value(x).dims4()?.1;
    let (s1, s2) = (tape.value(w1).shape().to_vec(), tape.value(w2).shape().to_vec());
    if s1.len() != 2 || s2.len() != 2 || s1[1] != c || s2[0] != c || s2[1] != s1[0] {
        return Err(Error::Config(format!("fusion weights {s1:?}/{s2:?} do not fit {c} channels")));
    }
    let pooled = tape.global_avg_pool(x)?;
    let hidden = tape.linear(pooled, w1)?;
    let hidden = tape.relu(hidden);
    let logits = tape.linear(hidden, w2)?;
    Ok(tape.sigmoid(logits))
}

/// `x̂_c = (1 + w_c) · x_c`.
pub fn rescale<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let scale = tape.add_scalar(w, T::one());
    tape.scale_channels(x, scale)
}

impl FusionWeights {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w1, w2) = (ctx.var(self.w1), ctx.var(self.w2));
        let w = channelwise_weights(ctx.tape, x, w1, w2)?;
        rescale(ctx.tape, x, w)
    }
}

/// Resampling path from one source branch into one target branch.
#[derive(Clone, Debug)]
pub enum FusePath {
    /// Lower-resolution source: 1×1 channel adaptation, then nearest upsampling.
    Up { adapt: ConvBn, factor: usize },
    /// Higher-resolution source: one stride-2 3×3 conv per octave.
    Down { chain: Vec<ConvBn> },
}

/// Cross-resolution exchange at the end of a stage.
#[derive(Clone, Debug)]
pub struct MultiscaleFuse {
    pub weights: Vec<FusionWeights>,
    /// `paths[target][source]`, `None` on the diagonal.
    pub paths: Vec<Vec<Option<FusePath>>>,
    pub channels: Vec<usize>,
}

impl MultiscaleFuse {
    pub fn build<T: Scalar>(b: &mut LayerBuilder<'_, T>, name: &str, channels: &[usize], r_reduce: usize) -> Self {
        let n = channels.len();
        if n == 1 {
            return MultiscaleFuse { weights: Vec::new(), paths: vec![vec![None]], channels: channels.to_vec() };
        }
        let weights = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| b.fusion_weights(&format!("{name}.gate{k}"), c, r_reduce))
            .collect();
        let mut paths = Vec::new();
        for j in 0..n {
            let mut row = Vec::new();
            for k in 0..n {
                let path = match k.cmp(&j) {
                    std::cmp::Ordering::Equal => None,
                    std::cmp::Ordering::Greater => Some(FusePath::Up {
                        adapt: b.conv_bn(&format!("{name}.{k}to{j}"), channels[k], channels[j], 1, 1),
                        factor: 1 << (k - j),
                    }),
                    std::cmp::Ordering::Less => {
                        let steps = j - k;
                        let chain = (0..steps)
                            .map(|s| {
                                let cout = if s + 1 == steps { channels[j] } else { channels[k] };
                                b.conv_bn(&format!("{name}.{k}to{j}.{s}"), channels[k], cout, 3, 2)
                            })
                            .collect();
                        Some(FusePath::Down { chain })
                    }
                };
                row.push(path);
            }
            paths.push(row);
        }
        MultiscaleFuse { weights, paths, channels: channels.to_vec() }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, branches: &[Var]) -> Result<Vec<Var>> {
        let n = self.channels.len();
        if branches.len() != n {
            return Err(Error::Config(format!("fuse expects {n} branches, got {}", branches.len())));
        }
        if n == 1 {
            return Ok(branches.to_vec());
        }
        let (_, _, top_h, top_w) = ctx.tape.value(branches[0]).dims4()?;
        for (k, &x) in branches.iter().enumerate() {
            let (_, c, h, w) = ctx.tape.value(x).dims4()?;
            if c != self.channels[k] || h << k != top_h || w << k != top_w {
                return Err(Error::Config(format!(
                    "branch {k} is {c}x{h}x{w}, expected {}x{}x{}",
                    self.channels[k],
                    top_h >> k,
                    top_w >> k
                )));
            }
        }
        let mut scaled = Vec::with_capacity(n);
        for (gate, &x) in self.weights.iter().zip(branches) {
            scaled.push(gate.forward(ctx, x)?);
        }
        let mut out = Vec::with_capacity(n);
        for row in &self.paths {
            let mut terms = Vec::with_capacity(n);
            for (path, &x) in row.iter().zip(&scaled) {
                terms.push(match path {
                    None => x,
                    Some(FusePath::Up { adapt, factor }) => {
                        let y = adapt.forward(ctx, x)?;
                        ctx.tape.upsample_nearest(y, *factor)?
                    }
                    Some(FusePath::Down { chain }) => {
                        let mut y = x;
                        for (s, step) in chain.iter().enumerate() {
                            y = if s + 1 == chain.len() { step.forward(ctx, y)? } else { step.forward_act(ctx, y)? };
                        }
                        y
                    }
                });
            }
            let sum = ctx.tape.sum_all(&terms)?;
            out.push(ctx.act(sum));
        }
        Ok(out)
    }
}

/// Stage boundary: adapts existing branch widths and spawns one new branch at
/// half the resolution of the previous lowest one.
#[derive(Clone, Debug)]
pub struct Transition {
    pub adapt: Vec<Option<ConvBn>>,
    pub spawn: ConvBn,
}

impl Transition {
    pub fn build<T: Scalar>(b: &mut LayerBuilder<'_, T>, name: &str, prev: &[usize], next: &[usize]) -> Result<Self> {
        if next.len() != prev.len() + 1 {
            return Err(Error::Config(format!(
                "transition from {} branches must produce {}, config has {}",
                prev.len(),
                prev.len() + 1,
                next.len()
            )));
        }
        let adapt = prev
            .iter()
            .zip(next)
            .enumerate()
            .map(|(i, (&p, &n))| (p != n).then(|| b.conv_bn(&format!("{name}.adapt{i}"), p, n, 3, 1)))
            .collect();
        let last = *prev.last().ok_or_else(|| Error::Config("transition from zero branches".into()))?;
        let spawn = b.conv_bn(&format!("{name}.spawn"), last, next[prev.len()], 3, 2);
        Ok(Transition { adapt, spawn })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, branches: &[Var]) -> Result<Vec<Var>> {
        if branches.len() != self.adapt.len() {
            return Err(Error::Config(format!("transition expects {} branches, got {}", self.adapt.len(), branches.len())));
        }
        let mut out = Vec::with_capacity(branches.len() + 1);
        for (a, &x) in self.adapt.iter().zip(branches) {
            out.push(match a {
                Some(a) => a.forward_act(ctx, x)?,
                None => x,
            });
        }
        let lowest = *branches.last().expect("non-empty");
        out.push(self.spawn.forward_act(ctx, lowest)?);
        Ok(out)
    }
}
