use super::config::{BlockKind, NetworkConfig};
use super::layers::{Block, Conv, ConvBn, Ctx, LayerBuilder, MultiscaleFuse, Transition};
use super::params::{Bound, ParamStore};
use crate::codec::HeatmapSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Initial confidence logit: `sigmoid(-2) ≈ 0.12`, near the mean of a
/// Gaussian target, so the map starts dim instead of at one half.
pub const GAUSSIAN_BIAS_INIT: f64 = -2.0;

#[derive(Clone, Debug)]
struct Stage {
    branches: Vec<Vec<Block>>,
    fuse: MultiscaleFuse,
}

#[derive(Clone, Debug)]
struct Layers {
    stem: Vec<ConvBn>,
    stages: Vec<Stage>,
    transitions: Vec<Transition>,
    head: Conv,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `[N, 3, h, w]`, unbounded.
    pub bernoulli: Var,
    /// `[N, 1, h, w]`, in (0, 1).
    pub gaussian: Var,
    /// Final branch outputs of every stage.
    pub stages: Vec<Vec<Var>>,
}

/// Network parameters plus the layer wiring that uses them.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    store: ParamStore<T>,
    layers: Layers,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = LayerBuilder::new(&mut store, seed, config.leaky_slope);

        let mut stem = Vec::new();
        let mut cin = config.input_channels;
        let octaves = config.stem_stride.trailing_zeros();
        for i in 0..octaves.max(1) {
            let stride = if octaves == 0 { 1 } else { 2 };
            stem.push(b.conv_bn(&format!("stem.{i}"), cin, config.stem_channels, 3, stride));
            cin = config.stem_channels;
        }

        let mut stages = Vec::new();
        let mut transitions = Vec::new();
        let mut prev: Vec<usize> = vec![config.stem_channels];
        for (s, spec) in config.stages.iter().enumerate() {
            let outs = spec.out_channels();
            if s > 0 {
                transitions.push(Transition::build(&mut b, &format!("transition{s}"), &prev, &outs)?);
                prev = outs.clone();
            }
            let mut branches = Vec::new();
            for (k, br) in spec.branches.iter().enumerate() {
                let mut blocks = Vec::new();
                let mut c = prev[k];
                for i in 0..br.num_blocks {
                    let name = format!("stage{}.branch{k}.block{i}", s + 1);
                    blocks.push(match br.block {
                        BlockKind::Basic if c == br.channels => Block::Basic(b.basic_block(&name, c)),
                        BlockKind::Basic => {
                            return Err(Error::Config(format!("{name}: basic block cannot change {c} to {} channels", br.channels)))
                        }
                        BlockKind::Bottleneck => Block::Bottleneck(b.bottleneck(&name, c, br.channels)),
                    });
                    c = br.out_channels();
                }
                branches.push(blocks);
            }
            prev = outs;
            let fuse = MultiscaleFuse::build(&mut b, &format!("stage{}.fuse", s + 1), &prev, config.r_reduce);
            stages.push(Stage { branches, fuse });
        }
        let mut bias = vec![0.0; config.output_channels];
        bias[3] = GAUSSIAN_BIAS_INIT;
        let head = b.head("head", prev.iter().sum(), &bias);
        let layers = Layers { stem, stages, transitions, head };
        Ok(Network { config, store, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let cfg = &self.config;
        if c != cfg.input_channels || h != cfg.input_h || w != cfg.input_w {
            let m = cfg.size_multiple();
            return Err(Error::Config(format!(
                "input is {c}x{h}x{w} (CxHxW), network expects {}x{}x{}; sizes must be multiples of {m}",
                cfg.input_channels, cfg.input_h, cfg.input_w
            )));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, images: Var) -> Result<(HeadOutput, Bound)> {
        self.check_input(tape.value(images))?;
        let bound = self.store.bind(tape);
        let slope = T::lit(self.config.leaky_slope);
        let mut ctx = Ctx::train(tape, &bound, &mut self.store, slope);
        let out = self.layers.forward(&mut ctx, images)?;
        Ok((out, bound))
    }

    /// Inference-mode forward using running statistics; parameters are
    /// still recorded as gradient leaves.
    pub fn forward_eval(&self, tape: &mut Tape<T>, images: Var) -> Result<(HeadOutput, Bound)> {
        self.check_input(tape.value(images))?;
        let bound = self.store.bind(tape);
        let slope = T::lit(self.config.leaky_slope);
        let mut ctx = Ctx::eval(tape, &bound, &self.store, slope);
        let out = self.layers.forward(&mut ctx, images)?;
        Ok((out, bound))
    }

    /// Forward through a caller-built context.
    pub fn forward_ctx(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<HeadOutput> {
        self.check_input(ctx.tape.value(images))?;
        self.layers.forward(ctx, images)
    }

    /// Inference on a `[N, C, H, W]` batch, one heatmap set per sample.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<HeatmapSet<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (out, _) = self.forward_eval(&mut tape, x)?;
        Ok(split_heatmaps(tape.value(out.bernoulli), tape.value(out.gaussian)))
    }
}

/// Per-sample heatmap sets from the two head tensors.
pub fn split_heatmaps<T: Scalar>(bernoulli: &Tensor<T>, gaussian: &Tensor<T>) -> Vec<HeatmapSet<T>> {
    let (n, _, h, w) = bernoulli.dims4().expect("4-d head output");
    let plane = h * w;
    (0..n)
        .map(|i| {
            let mut values = bernoulli.data()[i * 3 * plane..(i + 1) * 3 * plane].to_vec();
            values.extend_from_slice(&gaussian.data()[i * plane..(i + 1) * plane]);
            HeatmapSet::from_channels(h, w, &values).expect("sizes match")
        })
        .collect()
}

impl Layers {
    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<HeadOutput> {
        let mut x = images;
        for layer in &self.stem {
            x = layer.forward_act(ctx, x)?;
        }
        let mut branches = vec![x];
        let mut stage_outputs = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                branches = self.transitions[s - 1].forward(ctx, &branches)?;
            }
            for (x, blocks) in branches.iter_mut().zip(&stage.branches) {
                for block in blocks {
                    *x = block.forward(ctx, *x)?;
                }
            }
            branches = stage.fuse.forward(ctx, &branches)?;
            stage_outputs.push(branches.clone());
        }
        let mut gathered = Vec::with_capacity(branches.len());
        for (k, &b) in branches.iter().enumerate() {
            gathered.push(if k == 0 { b } else { ctx.tape.upsample_nearest(b, 1 << k)? });
        }
        let cat = ctx.tape.concat_channels(&gathered)?;
        let logits = self.head.forward(ctx, cat)?;
        let bernoulli = ctx.tape.narrow_channels(logits, 0, 3)?;
        let g = ctx.tape.narrow_channels(logits, 3, 1)?;
        let gaussian = ctx.tape.sigmoid(g);
        Ok(HeadOutput { bernoulli, gaussian, stages: stage_outputs })
    }
}
