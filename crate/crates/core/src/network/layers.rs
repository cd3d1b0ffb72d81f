//! Building blocks of the depth-completion network.

use rand::Rng;

use super::graph::{Graph, StatsMode, Var};
use super::kernels::ConvGeom;
use super::params::{BnId, Init, ParamId, ParamRole, ParamStore};
use crate::error::{Error, Result};

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a ParamStore,
    pub mode: StatsMode,
}

impl<'a> Ctx<'a> {
    pub fn new(graph: &'a mut Graph, params: &'a ParamStore, mode: StatsMode) -> Self {
        Self { graph, params, mode }
    }

    fn bind(&mut self, id: ParamId) -> Var {
        self.graph.param(id, self.params.tensor(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Dense,
    Depthwise,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub kind: ConvKind,
}

pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride: 1,
            bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }
}

impl Conv2d {
    /// Dense convolution with "same" padding, Kaiming-initialized weights and
    /// zero bias.
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.c_in * spec.kernel * spec.kernel;
        Self::with_init(store, name, spec, Init::KaimingNormal { fan_in }, Init::Constant(0.0), rng)
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        weight_init: Init,
        bias_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Weight,
            [spec.c_out, spec.c_in, spec.kernel, spec.kernel],
            weight_init,
            rng,
        );
        let bias = spec
            .bias
            .then(|| store.add(format!("{name}.bias"), ParamRole::Bias, [1, spec.c_out, 1, 1], bias_init, rng));
        Self {
            weight,
            bias,
            geom: ConvGeom {
                kernel: spec.kernel,
                stride: spec.stride,
                pad: spec.kernel / 2,
            },
            kind: ConvKind::Dense,
        }
    }

    pub fn depthwise(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamRole::Weight,
            [channels, 1, kernel, kernel],
            Init::KaimingNormal { fan_in: kernel * kernel },
            rng,
        );
        Self {
            weight,
            bias: None,
            geom: ConvGeom {
                kernel,
                stride,
                pad: kernel / 2,
            },
            kind: ConvKind::Depthwise,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.bind(self.weight);
        let b = self.bias.map(|b| ctx.bind(b));
        match self.kind {
            ConvKind::Dense => ctx.graph.conv(x, w, b, self.geom),
            ConvKind::Depthwise => ctx.graph.depthwise_conv(x, w, b, self.geom),
        }
    }
}

/// Batch normalization, optionally followed by a learnable per-channel affine.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub stats: BnId,
    pub affine: Option<(ParamId, ParamId)>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, affine: bool, eps: f64, rng: &mut impl Rng) -> Self {
        let stats = store.add_norm(name, channels);
        let affine = affine.then(|| {
            (
                store.add(format!("{name}.scale"), ParamRole::NormAffine, [1, channels, 1, 1], Init::Constant(1.0), rng),
                store.add(format!("{name}.shift"), ParamRole::NormAffine, [1, channels, 1, 1], Init::Constant(0.0), rng),
            )
        });
        Self { stats, affine, eps }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let running = ctx.params.norm(self.stats);
        let y = ctx
            .graph
            .normalize(x, self.stats, ctx.mode, (&running.mean, &running.var), self.eps)?;
        match self.affine {
            Some((s, b)) => {
                let (s, b) = (ctx.bind(s), ctx.bind(b));
                ctx.graph.channel_affine(y, s, b)
            }
            None => Ok(y),
        }
    }
}

/// Spatially-adaptive denormalization:
/// `g = γ(m) · (f − μ) / σ + β(m)`, with `γ = 1 + head_γ(m)` and `β = head_β(m)`.
///
/// `m` is the mask feature map; it is resampled (nearest) to the spatial size
/// of `f` before the single-convolution heads.
#[derive(Clone, Debug)]
pub struct Spade {
    pub norm: BatchNorm,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl Spade {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        mask_channels: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let norm = BatchNorm::new(store, &format!("{name}.norm"), channels, false, eps, rng);
        let head = || ConvSpec::new(mask_channels, channels, 3).bias(true);
        let zero = Init::Constant(0.0);
        let gamma = Conv2d::with_init(store, &format!("{name}.gamma"), head(), zero, zero, rng);
        let beta = Conv2d::with_init(store, &format!("{name}.beta"), head(), zero, zero, rng);
        Self { norm, gamma, beta }
    }

    pub fn forward(&self, ctx: &mut Ctx, f: Var, mask_features: Var) -> Result<Var> {
        let [n, _, h, w] = ctx.graph.value(f).shape();
        let mshape = ctx.graph.value(mask_features).shape();
        if mshape[0] != n {
            return Err(Error::ShapeMismatch(format!(
                "modulation batch {} does not match features batch {n}",
                mshape[0]
            )));
        }
        let normalized = self.norm.forward(ctx, f)?;
        let m = if (mshape[2], mshape[3]) == (h, w) {
            mask_features
        } else {
            ctx.graph.resize_nearest(mask_features, h, w)
        };
        let gamma_raw = self.gamma.forward(ctx, m)?;
        let gamma = ctx.graph.add_const(gamma_raw, 1.0);
        let beta = self.beta.forward(ctx, m)?;
        let scaled = ctx.graph.mul(gamma, normalized)?;
        ctx.graph.add(scaled, beta)
    }
}

/// Normalization used inside a decoder residual block.
#[derive(Clone, Debug)]
pub enum DecoderNorm {
    Plain(BatchNorm),
    Spade(Spade),
}

impl DecoderNorm {
    fn forward(&self, ctx: &mut Ctx, x: Var, mask_features: Option<Var>) -> Result<Var> {
        match (self, mask_features) {
            (DecoderNorm::Plain(bn), _) => bn.forward(ctx, x),
            (DecoderNorm::Spade(s), Some(m)) => s.forward(ctx, x, m),
            (DecoderNorm::Spade(_), None) => Err(Error::InvalidArgument(
                "SPADE normalization requires mask features".into(),
            )),
        }
    }
}

/// Residual unit of two `norm → LeakyReLU → 3×3 conv` passes. With SPADE
/// normalization this is the SPADE block; channel count is preserved so the
/// skip path is the identity.
#[derive(Clone, Debug)]
pub struct NormBlock {
    pub norm1: DecoderNorm,
    pub conv1: Conv2d,
    pub norm2: DecoderNorm,
    pub conv2: Conv2d,
    pub slope: f64,
}

impl NormBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        mask_channels: Option<usize>,
        slope: f64,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let norm = |store: &mut ParamStore, suffix: &str, rng: &mut _| match mask_channels {
            Some(mc) => DecoderNorm::Spade(Spade::new(store, &format!("{name}.{suffix}"), channels, mc, eps, rng)),
            None => DecoderNorm::Plain(BatchNorm::new(store, &format!("{name}.{suffix}"), channels, false, eps, rng)),
        };
        let norm1 = norm(store, "norm1", rng);
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), ConvSpec::new(channels, channels, 3).bias(true), rng);
        let norm2 = norm(store, "norm2", rng);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), ConvSpec::new(channels, channels, 3).bias(true), rng);
        Self {
            norm1,
            conv1,
            norm2,
            conv2,
            slope,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask_features: Option<Var>) -> Result<Var> {
        let h = self.norm1.forward(ctx, x, mask_features)?;
        let h = ctx.graph.leaky_relu(h, self.slope);
        let h = self.conv1.forward(ctx, h)?;
        let h = self.norm2.forward(ctx, h, mask_features)?;
        let h = ctx.graph.leaky_relu(h, self.slope);
        let h = self.conv2.forward(ctx, h)?;
        ctx.graph.add(x, h)
    }
}

/// Two stride-2 biased 3×3 convolutions, each followed by LeakyReLU.
#[derive(Clone, Debug)]
pub struct MaskEncoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub slope: f64,
}

/// Mask-encoder biases start at this constant so that regions without any
/// valid depth still carry signal into the modulation heads.
pub const MASK_BIAS_INIT: f64 = 0.1;

impl MaskEncoder {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let conv = |store: &mut ParamStore, suffix: &str, c_in: usize, rng: &mut _| {
            Conv2d::with_init(
                store,
                &format!("{name}.{suffix}"),
                ConvSpec::new(c_in, channels, 3).stride(2).bias(true),
                Init::KaimingNormal { fan_in: c_in * 9 },
                Init::Constant(MASK_BIAS_INIT),
                rng,
            )
        };
        let conv1 = conv(store, "conv1", 1, rng);
        let conv2 = conv(store, "conv2", channels, rng);
        Self { conv1, conv2, slope }
    }

    pub fn forward(&self, ctx: &mut Ctx, mask: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, mask)?;
        let h = ctx.graph.leaky_relu(h, self.slope);
        let h = self.conv2.forward(ctx, h)?;
        Ok(ctx.graph.leaky_relu(h, self.slope))
    }
}

/// Chained residual pooling: `x + Σᵢ tᵢ` with `t₀ = x`, `tᵢ = conv1×1(maxpool5(tᵢ₋₁))`.
#[derive(Clone, Debug)]
pub struct Crp {
    pub convs: Vec<Conv2d>,
}

impl Crp {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, stages: usize, rng: &mut impl Rng) -> Self {
        let convs = (0..stages)
            .map(|i| Conv2d::new(store, &format!("{name}.{i}"), ConvSpec::new(channels, channels, 1), rng))
            .collect();
        Self { convs }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut top = x;
        let mut out = x;
        for conv in &self.convs {
            let pooled = ctx.graph.max_pool_same(top, 5);
            top = conv.forward(ctx, pooled)?;
            out = ctx.graph.add(out, top)?;
        }
        Ok(out)
    }
}

/// Fusion of a coarse decoder signal with a finer skip feature:
/// 1×1 conv on each, nearest-upsample the coarse one, elementwise sum.
#[derive(Clone, Debug)]
pub struct Fuse {
    pub low: Conv2d,
    pub high: Conv2d,
}

impl Fuse {
    pub fn new(store: &mut ParamStore, name: &str, low_channels: usize, high_channels: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            low: Conv2d::new(store, &format!("{name}.low"), ConvSpec::new(low_channels, out, 1), rng),
            high: Conv2d::new(store, &format!("{name}.high"), ConvSpec::new(high_channels, out, 1), rng),
        }
    }

    /// `low` is the coarse input, `high` the fine one.
    pub fn forward(&self, ctx: &mut Ctx, low: Var, high: Var) -> Result<Var> {
        let ls = ctx.graph.value(low).shape();
        let hs = ctx.graph.value(high).shape();
        if ls[2] > hs[2] || ls[3] > hs[3] {
            return Err(Error::ShapeMismatch(format!(
                "fuse expects the coarse input first, got {ls:?} and {hs:?}"
            )));
        }
        let l = self.low.forward(ctx, low)?;
        let h = self.high.forward(ctx, high)?;
        let l = if (ls[2], ls[3]) == (hs[2], hs[3]) {
            l
        } else {
            ctx.graph.resize_nearest(l, hs[2], hs[3])
        };
        ctx.graph.add(l, h)
    }
}

/// Inverted bottleneck: 1×1 expand → BN → SiLU → 3×3 depthwise → BN → SiLU →
/// 1×1 project → BN, with an identity skip when shapes allow.
#[derive(Clone, Debug)]
pub struct InvertedBottleneck {
    pub expand: Conv2d,
    pub bn1: BatchNorm,
    pub depthwise: Conv2d,
    pub bn2: BatchNorm,
    pub project: Conv2d,
    pub bn3: BatchNorm,
    pub residual: bool,
}

impl InvertedBottleneck {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        expansion: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mid = c_in * expansion;
        Self {
            expand: Conv2d::new(store, &format!("{name}.expand"), ConvSpec::new(c_in, mid, 1), rng),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), mid, true, eps, rng),
            depthwise: Conv2d::depthwise(store, &format!("{name}.dw"), mid, 3, stride, rng),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), mid, true, eps, rng),
            project: Conv2d::new(store, &format!("{name}.project"), ConvSpec::new(mid, c_out, 1), rng),
            bn3: BatchNorm::new(store, &format!("{name}.bn3"), c_out, true, eps, rng),
            residual: stride == 1 && c_in == c_out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.expand.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = ctx.graph.silu(h);
        let h = self.depthwise.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let h = ctx.graph.silu(h);
        let h = self.project.forward(ctx, h)?;
        let h = self.bn3.forward(ctx, h)?;
        if self.residual {
            ctx.graph.add(x, h)
        } else {
            Ok(h)
        }
    }
}
