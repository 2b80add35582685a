use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }
}

/// Statistics source of [`Tape::batchnorm2d`].
pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and update the running state.
    Train(&'a mut BatchNormState<T>),
    /// Normalize with the running state.
    Eval(&'a BatchNormState<T>),
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry, cols: Vec<T> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    LeakyRelu { input: Var, slope: T },
    Relu { input: Var },
    Sigmoid { input: Var },
    GlobalAvgPool { input: Var },
    Upsample { input: Var, factor: usize },
    Add { a: Var, b: Var },
    ScaleChannels { x: Var, s: Var },
    AddScalar { input: Var },
    Scale { input: Var, k: T },
    Linear { x: Var, w: Var },
    Concat { inputs: Vec<Var> },
    Narrow { input: Var, start: usize, len: usize },
    Mse { pred: Var, target: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations. Records are appended as operations
/// run, so the record order is always a topological order of the graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradient table produced by one [`Tape::backward`] call.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, or `None` when the loss does not depend on it or it
    /// does not require a gradient.
    pub fn get(&self, var: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor { shape: self.shapes[var.0].clone(), data: g.clone() })
    }

    /// Gradient of `var`, zeros if untouched by the loss.
    pub fn get_or_zeros(&self, var: Var) -> Tensor<T> {
        self.get(var).unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn slice(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0)?.as_deref()
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = ConvGeometry::new(x.shape(), w.shape(), stride, padding)?;
        let b = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.shape() != [geom.out_channels] {
                    return Err(Error::shape(
                        "conv2d",
                        format!("bias shape {:?}, expected [{}]", bt.shape(), geom.out_channels),
                    ));
                }
                Some(bt.data())
            }
            None => None,
        };
        let (out, cols) = conv::conv_forward(&geom, x.data(), w.data(), b);
        let value = Tensor { shape: geom.out_shape(), data: out };
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom, cols }, &inputs))
    }

    /// Per-channel batch normalization. In training mode the batch statistics
    /// are used and the running state receives the momentum update; in
    /// inference mode the running state supplies the statistics.
    pub fn batchnorm2d(&mut self, input: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_, T>) -> Result<Var> {
        let training = matches!(mode, BatchNormMode::Train(_));
        let running: &BatchNormState<T> = match &mode {
            BatchNormMode::Train(s) => s,
            BatchNormMode::Eval(s) => s,
        };
        let (eps, momentum, channels) = (running.eps, running.momentum, running.mean.len());
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{name} shape {:?}, expected [{c}]", self.value(p).shape()),
                ));
            }
        }
        if channels != c {
            return Err(Error::shape("batchnorm2d", format!("running stats sized for {channels} channels, input has {c}")));
        }
        let plane = h * w;
        let count = n * plane;
        if training && count < 2 {
            return Err(Error::DegenerateVariance { count });
        }
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let xd = x.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let m = T::lit(count as f64);
        let mut mode = mode;
        for ch in 0..c {
            let (mean, var) = if let BatchNormMode::Train(state) = &mut mode {
                let mut s = T::zero();
                for b in 0..n {
                    let start = (b * c + ch) * plane;
                    s = s + xd[start..start + plane].iter().copied().sum::<T>();
                }
                let mean = s / m;
                let mut ss = T::zero();
                for b in 0..n {
                    let start = (b * c + ch) * plane;
                    ss = ss + xd[start..start + plane].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = ss / m;
                let unbiased = ss / T::lit((count - 1) as f64);
                let mo = momentum;
                state.mean[ch] = (T::one() - mo) * state.mean[ch] + mo * mean;
                state.var[ch] = (T::one() - mo) * state.var[ch] + mo * unbiased;
                (mean, var)
            } else if let BatchNormMode::Eval(state) = &mode {
                (state.mean[ch], state.var[ch])
            } else {
                unreachable!()
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for b in 0..n {
                let start = (b * c + ch) * plane;
                for i in start..start + plane {
                    let xh = (xd[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor { shape: x.shape().to_vec(), data: out };
        Ok(self.push(
            value,
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats: training },
            &[input, gamma, beta],
        ))
    }

    /// Which side of zero every rectifier input lies on, in record order.
    /// Two tapes with equal patterns evaluated the same linear piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { input, .. } | Op::Relu { input } = node.op {
                pattern.extend(self.value(input).data().iter().map(|&v| v >= T::zero()));
            }
        }
        pattern
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = self.value(input).map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { input }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid { input }, &[input])
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let inv = T::one() / T::lit(plane as f64);
        let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Tensor { shape: vec![n, c], data }, Op::GlobalAvgPool { input }, &[input]))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(Error::Config(format!("upsample factor must be >= 2, got {factor}")));
        }
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let mut data = vec![T::zero(); n * c * oh * ow];
        for (src, dst) in x.data().chunks(h * w).zip(data.chunks_mut(oh * ow)) {
            for oy in 0..oh {
                let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..ow {
                    dst[oy * ow + ox] = row[ox / factor];
                }
            }
        }
        let value = Tensor { shape: vec![n, c, oh, ow], data };
        Ok(self.push(value, Op::Upsample { input, factor }, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Sum of one or more same-shape values.
    pub fn sum_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Usage("sum of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// `out[n,c,:,:] = x[n,c,:,:] * s[n,c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (n, c, h, w) = tx.dims4()?;
        if ts.shape() != [n, c] {
            return Err(Error::shape("scale_channels", format!("scale {:?} for input {:?}", ts.shape(), tx.shape())));
        }
        let plane = h * w;
        let mut data = tx.data().to_vec();
        for (chunk, &k) in data.chunks_mut(plane).zip(ts.data()) {
            chunk.iter_mut().for_each(|v| *v = *v * k);
        }
        let value = Tensor { shape: tx.shape().to_vec(), data };
        Ok(self.push(value, Op::ScaleChannels { x, s }, &[x, s]))
    }

    pub fn add_scalar(&mut self, input: Var, c: T) -> Var {
        let value = self.value(input).map(|v| v + c);
        self.push(value, Op::AddScalar { input }, &[input])
    }

    pub fn scale(&mut self, input: Var, k: T) -> Var {
        let value = self.value(input).map(|v| v * k);
        self.push(value, Op::Scale { input, k }, &[input])
    }

    /// `y[n, o] = Σ_i x[n, i] · w[o, i]` (no bias).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (&[n, i], &[o, wi]) = (tx.shape(), tw.shape()) else {
            return Err(Error::shape("linear", format!("x {:?}, w {:?}", tx.shape(), tw.shape())));
        };
        if i != wi {
            return Err(Error::shape("linear", format!("x has {i} features, w expects {wi}")));
        }
        let mut data = vec![T::zero(); n * o];
        T::gemm(n, i, o, T::one(), tx.data(), false, tw.data(), true, T::zero(), &mut data);
        let value = Tensor { shape: vec![n, o], data };
        Ok(self.push(value, Op::Linear { x, w }, &[x, w]))
    }

    /// Concatenate NCHW values along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Usage("concat of zero inputs".into()))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut total = 0;
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape("concat_channels", format!("{:?} vs {:?}", self.value(v).shape(), self.value(*first).shape())));
            }
            total += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor { shape: vec![n, total, h, w], data };
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, inputs))
    }

    /// Channels `start..start+len` of an NCHW value.
    pub fn narrow_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let (n, c, h, w) = t.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape("narrow_channels", format!("range {start}..{} of {c} channels", start + len)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            data.extend_from_slice(&t.data()[off..off + len * plane]);
        }
        let value = Tensor { shape: vec![n, len, h, w], data };
        Ok(self.push(value, Op::Narrow { input, start, len }, &[input]))
    }

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("mse_loss", p, t)?;
        let s: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(s / T::lit(p.numel() as f64));
        Ok(self.push(value, Op::Mse { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar `loss`. Every call starts from zeroed
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Zero-initialized gradient buffer of `v`, or `None` if `v` needs none.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom, cols } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                if let Some(dw) = self.slot(grads, *weight) {
                    conv::conv_weight_grad(geom, x, cols, g, dw);
                }
                if let Some(b) = bias {
                    if let Some(db) = self.slot(grads, *b) {
                        conv::conv_bias_grad(geom, g, db);
                    }
                }
                if let Some(dx) = self.slot(grads, *input) {
                    conv::conv_input_grad(geom, w, g, dx);
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let (n, c, h, w) = node.value.dims4().expect("recorded as NCHW");
                let plane = h * w;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let s = (b * c + ch) * plane;
                        for i in s..s + plane {
                            sum_g[ch] = sum_g[ch] + g[i];
                            sum_gx[ch] = sum_gx[ch] + g[i] * xhat[i];
                        }
                    }
                }
                if let Some(dg) = self.slot(grads, *gamma) {
                    for ch in 0..c {
                        dg[ch] = dg[ch] + sum_gx[ch];
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for ch in 0..c {
                        db[ch] = db[ch] + sum_g[ch];
                    }
                }
                if let Some(dx) = self.slot(grads, *input) {
                    let m = T::lit((n * plane) as f64);
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * inv_std[ch];
                            let s = (b * c + ch) * plane;
                            for i in s..s + plane {
                                let d = if *batch_stats {
                                    k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    k * g[i]
                                };
                                dx[i] = dx[i] + d;
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                if let Some(dx) = self.slot(grads, *input) {
                    for i in 0..g.len() {
                        let d = if x[i] >= T::zero() { g[i] } else { *slope * g[i] };
                        dx[i] = dx[i] + d;
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                if let Some(dx) = self.slot(grads, *input) {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            dx[i] = dx[i] + g[i];
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                if let Some(dx) = self.slot(grads, *input) {
                    for i in 0..g.len() {
                        dx[i] = dx[i] + g[i] * y[i] * (T::one() - y[i]);
                    }
                }
            }
            Op::GlobalAvgPool { input } => {
                let (_, _, h, w) = self.value(*input).dims4().expect("recorded as NCHW");
                let plane = h * w;
                let inv = T::one() / T::lit(plane as f64);
                if let Some(dx) = self.slot(grads, *input) {
                    for (chunk, &go) in dx.chunks_mut(plane).zip(g) {
                        chunk.iter_mut().for_each(|v| *v = *v + go * inv);
                    }
                }
            }
            Op::Upsample { input, factor } => {
                let (_, _, h, w) = self.value(*input).dims4().expect("recorded as NCHW");
                let (oh, ow) = (h * factor, w * factor);
                if let Some(dx) = self.slot(grads, *input) {
                    for (dst, src) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let i = (oy / factor) * w + ox / factor;
                                dst[i] = dst[i] + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &go)| *d = *d + go);
                    }
                }
            }
            Op::ScaleChannels { x, s } => {
                let tx = self.value(*x);
                let ts = self.value(*s).data();
                let (_, _, h, w) = tx.dims4().expect("recorded as NCHW");
                let plane = h * w;
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, (dchunk, gchunk)) in dx.chunks_mut(plane).zip(g.chunks(plane)).enumerate() {
                        dchunk.iter_mut().zip(gchunk).for_each(|(d, &go)| *d = *d + go * ts[k]);
                    }
                }
                if let Some(ds) = self.slot(grads, *s) {
                    for (k, (xchunk, gchunk)) in tx.data().chunks(plane).zip(g.chunks(plane)).enumerate() {
                        let dot: T = xchunk.iter().zip(gchunk).map(|(&a, &b)| a * b).sum();
                        ds[k] = ds[k] + dot;
                    }
                }
            }
            Op::AddScalar { input } => {
                if let Some(d) = self.slot(grads, *input) {
                    d.iter_mut().zip(g).for_each(|(d, &go)| *d = *d + go);
                }
            }
            Op::Scale { input, k } => {
                if let Some(d) = self.slot(grads, *input) {
                    d.iter_mut().zip(g).for_each(|(d, &go)| *d = *d + go * *k);
                }
            }
            Op::Linear { x, w } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (n, i) = (tx.shape()[0], tx.shape()[1]);
                let o = tw.shape()[0];
                if let Some(dx) = self.slot(grads, *x) {
                    // dx[n,i] += Σ_o g[n,o] w[o,i]
                    T::gemm(n, o, i, T::one(), g, false, tw.data(), false, T::one(), dx);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    // dw[o,i] += Σ_n g[n,o] x[n,i]
                    T::gemm(o, n, i, T::one(), g, true, tx.data(), false, T::one(), dw);
                }
            }
            Op::Concat { inputs } => {
                let (n, total, h, w) = node.value.dims4().expect("recorded as NCHW");
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if let Some(d) = self.slot(grads, v) {
                        for b in 0..n {
                            let src = &g[(b * total + offset) * plane..(b * total + offset + c) * plane];
                            let dst = &mut d[b * c * plane..(b + 1) * c * plane];
                            dst.iter_mut().zip(src).for_each(|(d, &go)| *d = *d + go);
                        }
                    }
                    offset += c;
                }
            }
            Op::Narrow { input, start, len } => {
                let (n, c, h, w) = self.value(*input).dims4().expect("recorded as NCHW");
                let plane = h * w;
                if let Some(d) = self.slot(grads, *input) {
                    for b in 0..n {
                        let dst = &mut d[(b * c + start) * plane..(b * c + start + len) * plane];
                        let src = &g[b * len * plane..(b + 1) * len * plane];
                        dst.iter_mut().zip(src).for_each(|(d, &go)| *d = *d + go);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let k = g[0] * T::lit(2.0) / T::lit(p.len() as f64);
                if let Some(dp) = self.slot(grads, *pred) {
                    for i in 0..p.len() {
                        dp[i] = dp[i] + k * (p[i] - t[i]);
                    }
                }
                if let Some(dt) = self.slot(grads, *target) {
                    for i in 0..p.len() {
                        dt[i] = dt[i] - k * (p[i] - t[i]);
                    }
                }
            }
        }
    }
}

/// Logistic function kept inside the open interval (0, 1) even where the
/// exact value rounds to an endpoint.
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    // split by sign so exp never overflows
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::lit(2.0);
    y.max(T::min_positive_value()).min(below_one)
}
