//! A reverse-mode autodiff tape over [`Tensor`] values.
//!
//! Every forward operation appends a node holding its output. `backward`
//! walks the tape in reverse, accumulating gradients into the parameters that
//! were bound with [`Graph::param`].

use super::kernels::{self, ConvGeom};
use super::params::{BnId, ParamId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which statistics a normalization layer divides by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StatsMode {
    /// Mean and biased std over `(N, H, W)` of the current batch.
    Batch,
    /// Stored running statistics.
    Running,
}

/// Batch statistics observed by one normalization layer during a forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub id: BnId,
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

enum Op {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        depthwise: bool,
    },
    Normalize {
        x: Var,
        inv_std: Vec<f64>,
        batch: bool,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Leaky {
        x: Var,
        slope: f64,
    },
    Silu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Nearest(Var),
    Bilinear(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Forward tape. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    stats: Vec<BatchStats>,
}

/// Parameter gradients indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Batch statistics recorded by normalization layers in batch mode.
    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.stats
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(id), true)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if ws[1] != xs[1] || ws[2] != geom.kernel || ws[3] != geom.kernel {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {ws:?} does not fit input {xs:?}"
            )));
        }
        if xs[2] + 2 * geom.pad < geom.kernel || xs[3] + 2 * geom.pad < geom.kernel {
            return Err(Error::ShapeMismatch(format!("input {xs:?} smaller than kernel")));
        }
        let out = kernels::conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                depthwise: false,
            },
            needs,
        ))
    }

    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if ws[0] != xs[1] || ws[1] != 1 || ws[2] != geom.kernel {
            return Err(Error::ShapeMismatch(format!(
                "depthwise weight {ws:?} does not fit input {xs:?}"
            )));
        }
        let out = kernels::depthwise_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                depthwise: true,
            },
            needs,
        ))
    }

    /// Per-channel standardization `(f − μ_c) / sqrt(σ_c² + ε)`.
    ///
    /// In batch mode μ and σ² are the batch mean and biased variance over
    /// `(N, H, W)`, and they are recorded under `id`. In running mode the
    /// supplied statistics are used as constants.
    pub fn normalize(
        &mut self,
        x: Var,
        id: BnId,
        mode: StatsMode,
        running: (&[f64], &[f64]),
        eps: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        let [n, c, _, _] = t.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("normalization over an empty batch".into()));
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "normalization has {} channels, input has {c}",
                running.0.len()
            )));
        }
        let (mean, var) = match mode {
            StatsMode::Batch => t.channel_moments(),
            StatsMode::Running => (running.0.to_vec(), running.1.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let plane = t.plane();
        let mut out = t.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        let batch = mode == StatsMode::Batch;
        if batch {
            self.stats.push(BatchStats {
                id,
                mean,
                var,
                count: n * plane,
            });
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::Normalize { x, inv_std, batch }, needs))
    }

    /// `scale[c] · x + shift[c]` with `(1, C, 1, 1)` scale and shift.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = self.value(x).channels();
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(Error::ShapeMismatch("affine parameters do not match channels".into()));
        }
        let plane = self.value(x).plane();
        let mut out = self.value(x).clone();
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = *v * s[ch] + b[ch];
            }
        }
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        Ok(self.push(out, Op::ChannelAffine { x, scale, shift }, needs))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v += c);
        let needs = self.needs(a);
        self.push(out, Op::AddConst(a), needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        let needs = self.needs(x);
        self.push(out, Op::Leaky { x, slope }, needs)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v /= 1.0 + (-*v).exp());
        let needs = self.needs(x);
        self.push(out, Op::Silu(x), needs)
    }

    /// Stride-1 max pooling with an odd `kernel` and same-size output.
    pub fn max_pool_same(&mut self, x: Var, kernel: usize) -> Var {
        let (out, argmax) = kernels::maxpool_same_forward(self.value(x), kernel);
        let needs = self.needs(x);
        self.push(out, Op::MaxPool { x, argmax }, needs)
    }

    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let out = kernels::nearest_forward(self.value(x), out_h, out_w);
        let needs = self.needs(x);
        self.push(out, Op::Nearest(x), needs)
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let out = kernels::bilinear_forward(self.value(x), out_h, out_w);
        let needs = self.needs(x);
        self.push(out, Op::Bilinear(x), needs)
    }

    /// Back-propagates `seed` (the gradient of a scalar objective with respect
    /// to `output`) and returns gradients for `param_count` parameters.
    pub fn backward(&self, output: Var, seed: Tensor, param_count: usize) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::ShapeMismatch("seed gradient does not match output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(seed);
        let mut params: Vec<Option<Tensor>> = vec![None; param_count];

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut params[id.index()] {
                    Some(existing) => existing.add_assign(&dy),
                    slot => *slot = Some(dy),
                },
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    depthwise,
                } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = if *depthwise {
                        kernels::depthwise_backward(xv, wv, &dy, *geom, self.needs(*x))
                    } else {
                        kernels::conv_backward(xv, wv, &dy, *geom, self.needs(*x))
                    };
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        acc(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            let shape = self.value(*b).shape();
                            acc(&mut grads, *b, Tensor::from_vec(shape, db.into_data())?);
                        }
                    }
                }
                Op::Normalize { x, inv_std, batch } => {
                    let xhat = &node.value;
                    let [n, c, _, _] = xhat.shape();
                    let plane = xhat.plane();
                    let mut dx = dy.clone();
                    if *batch {
                        let m = (n * plane) as f64;
                        let mut sum_dy = vec![0.0; c];
                        let mut sum_dy_xhat = vec![0.0; c];
                        for (i, (gy, xh)) in dy.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                            let ch = i % c;
                            for (g, h) in gy.iter().zip(xh) {
                                sum_dy[ch] += g;
                                sum_dy_xhat[ch] += g * h;
                            }
                        }
                        for (i, (gx, xh)) in dx.data_mut().chunks_mut(plane).zip(xhat.data().chunks(plane)).enumerate() {
                            let ch = i % c;
                            let (a, b) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                            for (g, h) in gx.iter_mut().zip(xh) {
                                *g = inv_std[ch] * (*g - a - h * b);
                            }
                        }
                    } else {
                        for (i, gx) in dx.data_mut().chunks_mut(plane).enumerate() {
                            let s = inv_std[i % c];
                            gx.iter_mut().for_each(|g| *g *= s);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ChannelAffine { x, scale, shift } => {
                    let xv = self.value(*x);
                    let c = xv.channels();
                    let plane = xv.plane();
                    let s = self.value(*scale).data();
                    let mut ds = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for (i, (gy, xx)) in dy.data().chunks(plane).zip(xv.data().chunks(plane)).enumerate() {
                        let ch = i % c;
                        for (g, v) in gy.iter().zip(xx) {
                            ds[ch] += g * v;
                            db[ch] += g;
                        }
                    }
                    if self.needs(*scale) {
                        acc(&mut grads, *scale, Tensor::from_vec(self.value(*scale).shape(), ds)?);
                    }
                    if self.needs(*shift) {
                        acc(&mut grads, *shift, Tensor::from_vec(self.value(*shift).shape(), db)?);
                    }
                    if self.needs(*x) {
                        let mut dx = dy;
                        for (i, gx) in dx.data_mut().chunks_mut(plane).enumerate() {
                            let k = s[i % c];
                            gx.iter_mut().for_each(|g| *g *= k);
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) && self.needs(*b) {
                        acc(&mut grads, *a, dy.clone());
                        acc(&mut grads, *b, dy);
                    } else if self.needs(*a) {
                        acc(&mut grads, *a, dy);
                    } else if self.needs(*b) {
                        acc(&mut grads, *b, dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let mut da = dy.clone();
                        da.data_mut().iter_mut().zip(self.value(*b).data()).for_each(|(g, v)| *g *= v);
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = dy;
                        db.data_mut().iter_mut().zip(self.value(*a).data()).for_each(|(g, v)| *g *= v);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::AddConst(a) => acc(&mut grads, *a, dy),
                Op::Leaky { x, slope } => {
                    let mut dx = dy;
                    dx.data_mut().iter_mut().zip(self.value(*x).data()).for_each(|(g, v)| {
                        if *v < 0.0 {
                            *g *= slope
                        }
                    });
                    acc(&mut grads, *x, dx);
                }
                Op::Silu(x) => {
                    let mut dx = dy;
                    dx.data_mut().iter_mut().zip(self.value(*x).data()).for_each(|(g, v)| {
                        let s = 1.0 / (1.0 + (-v).exp());
                        *g *= s * (1.0 + v * (1.0 - s));
                    });
                    acc(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (g, &at) in dy.data().iter().zip(argmax) {
                        dx.data_mut()[at as usize] += g;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Nearest(x) => {
                    let dx = kernels::nearest_backward(&dy, self.value(*x).shape());
                    acc(&mut grads, *x, dx);
                }
                Op::Bilinear(x) => {
                    let dx = kernels::bilinear_backward(&dy, self.value(*x).shape());
                    acc(&mut grads, *x, dx);
                }
            }
        }
        Ok(Gradients { grads: params })
    }
}
