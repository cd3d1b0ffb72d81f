//! The depth-completion network and its ablation variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, StatsMode, Var};
use super::layers::{Conv2d, ConvSpec, Crp, Ctx, Fuse, InvertedBottleneck, MaskEncoder, NormBlock, BatchNorm};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::types::{DepthMap, RgbdSample};

/// Total downsampling factor of the encoder.
pub const ENCODER_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Decoder modulated by the validity mask through SPADE blocks.
    #[serde(rename = "DM_LRN")]
    DmLrn,
    /// Plain RGBD encoder-decoder.
    #[serde(rename = "LRN")]
    Lrn,
    /// RGBD plus the mask as a fifth input channel.
    #[serde(rename = "LRN_MASK")]
    LrnMask,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::DmLrn, Variant::Lrn, Variant::LrnMask];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DmLrn => "DM_LRN",
            Variant::Lrn => "LRN",
            Variant::LrnMask => "LRN_MASK",
        }
    }

    pub fn input_channels(self) -> usize {
        match self {
            Variant::DmLrn | Variant::Lrn => 4,
            Variant::LrnMask => 5,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Encoder size family, smallest to largest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeTier {
    T0,
    T1,
    T2,
    T3,
    T4,
}

impl SizeTier {
    pub const ALL: [SizeTier; 5] = [SizeTier::T0, SizeTier::T1, SizeTier::T2, SizeTier::T3, SizeTier::T4];

    /// `(width, depth)` multipliers applied to the base encoder.
    pub fn multipliers(self) -> (f64, f64) {
        match self {
            SizeTier::T0 => (1.0, 1.0),
            SizeTier::T1 => (1.25, 1.2),
            SizeTier::T2 => (1.5, 1.4),
            SizeTier::T3 => (1.75, 1.6),
            SizeTier::T4 => (2.0, 1.8),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for SizeTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SizeTier::ALL
            .into_iter()
            .find(|t| format!("{t:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown size tier {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

const BASE_CHANNELS: [usize; 5] = [8, 16, 24, 32, 48];
const BASE_BLOCKS: [usize; 5] = [1, 1, 1, 2, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub size_tier: SizeTier,
    pub encoder_stages: Vec<StageSpec>,
    pub expansion: usize,
    pub decoder_channels: usize,
    /// Number of decoder levels; level `i` runs at stride `32 / 2^i`.
    #[serde(default = "default_decoder_levels")]
    pub decoder_levels: usize,
    pub mask_channels: usize,
    pub crp_stages: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    /// Depth input is fed as `depth / max_depth`; predictions are clamped to
    /// `[min_depth, max_depth]`.
    pub min_depth: f64,
    pub max_depth: f64,
    pub init_seed: u64,
    /// Shift predicted log-depth so its median log-ratio to the valid sensor
    /// pixels is zero. Scale-invariant losses leave the global scale free.
    #[serde(default = "default_true")]
    pub align_to_sensor: bool,
}

fn default_decoder_levels() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(variant: Variant, size_tier: SizeTier) -> Self {
        let (wm, dm) = size_tier.multipliers();
        let encoder_stages = BASE_CHANNELS
            .iter()
            .zip(BASE_BLOCKS)
            .enumerate()
            .map(|(i, (&c, b))| StageSpec {
                channels: (c as f64 * wm / 2.0).round() as usize * 2,
                // The stem stage stays a single convolution at every tier.
                blocks: if i == 0 { 1 } else { (b as f64 * dm).ceil() as usize },
                stride: 2,
            })
            .collect();
        Self {
            variant,
            size_tier,
            encoder_stages,
            expansion: 4,
            decoder_channels: 16,
            decoder_levels: 4,
            mask_channels: 8,
            crp_stages: 2,
            leaky_slope: 0.01,
            bn_epsilon: 1e-5,
            min_depth: 0.1,
            max_depth: 10.0,
            init_seed: 0,
            align_to_sensor: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_depth_range(mut self, min_depth: f64, max_depth: f64) -> Self {
        self.min_depth = min_depth;
        self.max_depth = max_depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_stages.len() != 5 || self.encoder_stages.iter().any(|s| s.stride != 2) {
            return Err(Error::InvalidArgument(
                "encoder must have exactly five stride-2 stages".into(),
            ));
        }
        if self.encoder_stages.iter().any(|s| s.blocks == 0 || s.channels == 0) {
            return Err(Error::InvalidArgument("encoder stages must be non-empty".into()));
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(Error::InvalidArgument("require 0 < min_depth < max_depth".into()));
        }
        if !(1..=5).contains(&self.decoder_levels) {
            return Err(Error::InvalidArgument("decoder_levels must be between 1 and 5".into()));
        }
        if self.decoder_channels == 0 || self.mask_channels == 0 || self.expansion == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    stem: Option<(Conv2d, BatchNorm)>,
    blocks: Vec<InvertedBottleneck>,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    entry: Option<Conv2d>,
    fuse: Option<Fuse>,
    crp: Crp,
    block: NormBlock,
}

#[derive(Clone, Debug)]
struct Architecture {
    encoder: Vec<EncoderStage>,
    /// Coarsest level first.
    decoder: Vec<DecoderLevel>,
    mask_encoder: Option<MaskEncoder>,
    head: Conv2d,
}

/// A network instance: configuration, layer wiring and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    arch: Architecture,
}

pub const HEAD_WEIGHT_STD: f64 = 1e-3;

/// Encoder stage read by each decoder level, coarsest first (strides 32 down to 2).
const DECODER_SOURCES: [usize; 5] = [4, 3, 2, 1, 0];

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let eps = config.bn_epsilon;
        let slope = config.leaky_slope;

        let mut encoder = Vec::new();
        let mut c_prev = config.variant.input_channels();
        for (si, stage) in config.encoder_stages.iter().enumerate() {
            let mut blocks = Vec::new();
            let stem = if si == 0 {
                let conv = Conv2d::new(
                    &mut store,
                    "encoder.stem.conv",
                    ConvSpec::new(c_prev, stage.channels, 3).stride(stage.stride),
                    &mut rng,
                );
                let bn = BatchNorm::new(&mut store, "encoder.stem.bn", stage.channels, true, eps, &mut rng);
                c_prev = stage.channels;
                Some((conv, bn))
            } else {
                None
            };
            let first = usize::from(stem.is_some());
            for bi in first..stage.blocks.max(first) {
                let stride = if bi == 0 { stage.stride } else { 1 };
                blocks.push(InvertedBottleneck::new(
                    &mut store,
                    &format!("encoder.stage{si}.block{bi}"),
                    c_prev,
                    stage.channels,
                    stride,
                    config.expansion,
                    eps,
                    &mut rng,
                ));
                c_prev = stage.channels;
            }
            encoder.push(EncoderStage { stem, blocks });
        }

        let d = config.decoder_channels;
        let modulated = config.variant == Variant::DmLrn;
        let mask_channels = modulated.then_some(config.mask_channels);
        let decoder = DECODER_SOURCES[..config.decoder_levels]
            .iter()
            .enumerate()
            .map(|(li, &src)| {
                let name = format!("decoder.level{li}");
                let c_src = config.encoder_stages[src].channels;
                let (entry, fuse) = if li == 0 {
                    let conv = Conv2d::new(&mut store, &format!("{name}.entry"), ConvSpec::new(c_src, d, 1), &mut rng);
                    (Some(conv), None)
                } else {
                    (None, Some(Fuse::new(&mut store, &format!("{name}.fuse"), d, c_src, d, &mut rng)))
                };
                let crp = Crp::new(&mut store, &format!("{name}.crp"), d, config.crp_stages, &mut rng);
                let block = NormBlock::new(&mut store, &format!("{name}.block"), d, mask_channels, slope, eps, &mut rng);
                DecoderLevel { entry, fuse, crp, block }
            })
            .collect();

        // Near-zero head weights start every pixel at the geometric mid-range
        // depth; full-scale weights put log-depth variance in the tens.
        let head = Conv2d::with_init(
            &mut store,
            "head",
            ConvSpec::new(d, 1, 3).bias(true),
            Init::Normal { std: HEAD_WEIGHT_STD },
            Init::Constant((config.min_depth.max(0.5) * config.max_depth).sqrt().ln()),
            &mut rng,
        );
        let mask_encoder =
            modulated.then(|| MaskEncoder::new(&mut store, "modulation.mask_encoder", config.mask_channels, slope, &mut rng));

        Ok(Self {
            config,
            params: store,
            arch: Architecture {
                encoder,
                decoder,
                mask_encoder,
                head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Packs samples into the network input tensor: RGB, `depth / max_depth`
    /// and, for the mask-input variant, the validity mask.
    pub fn input_tensor(&self, batch: &[&RgbdSample]) -> Result<Tensor> {
        let first = batch
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (h, w) = first.dims();
        check_divisible(h, w)?;
        let c = self.config.variant.input_channels();
        let plane = h * w;
        let mut data = vec![0.0; batch.len() * c * plane];
        for (n, s) in batch.iter().enumerate() {
            if s.dims() != (h, w) {
                return Err(Error::ShapeMismatch("batch samples differ in size".into()));
            }
            let base = n * c * plane;
            for (i, px) in s.rgb.pixels().iter().enumerate() {
                for ch in 0..3 {
                    data[base + ch * plane + i] = px[ch];
                }
            }
            for (i, d) in s.sensor.values().iter().enumerate() {
                data[base + 3 * plane + i] = d / self.config.max_depth;
            }
            if c == 5 {
                for (i, f) in s.mask.flags().iter().enumerate() {
                    data[base + 4 * plane + i] = f64::from(u8::from(*f));
                }
            }
        }
        Tensor::from_vec([batch.len(), c, h, w], data)
    }

    pub fn mask_tensor(batch: &[&RgbdSample]) -> Result<Tensor> {
        let (h, w) = batch
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?
            .dims();
        let data = batch
            .iter()
            .flat_map(|s| s.mask.flags().iter().map(|f| f64::from(u8::from(*f))))
            .collect();
        Tensor::from_vec([batch.len(), 1, h, w], data)
    }

    /// Builds the forward graph for a batch and returns the log-depth node,
    /// shaped `(N, 1, H, W)`.
    pub fn forward_graph(&self, graph: &mut Graph, batch: &[&RgbdSample], mode: StatsMode) -> Result<Var> {
        let input = self.input_tensor(batch)?;
        let mask = match self.arch.mask_encoder {
            Some(_) => Some(Self::mask_tensor(batch)?),
            None => None,
        };
        self.forward_tensors(graph, input, mask, mode)
    }

    /// Forward pass from raw tensors. `mask` is required for the modulated
    /// variant and ignored otherwise.
    pub fn forward_tensors(&self, graph: &mut Graph, input: Tensor, mask: Option<Tensor>, mode: StatsMode) -> Result<Var> {
        let [_, c, h, w] = input.shape();
        check_divisible(h, w)?;
        if c != self.config.variant.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} input channels, got {c}",
                self.config.variant.name(),
                self.config.variant.input_channels()
            )));
        }
        let mut ctx = Ctx::new(graph, &self.params, mode);
        let x = ctx.graph.input(input);

        let mask_features = match (&self.arch.mask_encoder, mask) {
            (Some(enc), Some(m)) => {
                let m = ctx.graph.input(m);
                Some(enc.forward(&mut ctx, m)?)
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument("modulated model needs a validity mask".into()))
            }
            (None, _) => None,
        };

        let mut features = Vec::with_capacity(self.arch.encoder.len());
        let mut h_cur = x;
        for stage in &self.arch.encoder {
            if let Some((conv, bn)) = &stage.stem {
                let t = conv.forward(&mut ctx, h_cur)?;
                let t = bn.forward(&mut ctx, t)?;
                h_cur = ctx.graph.silu(t);
            }
            for block in &stage.blocks {
                h_cur = block.forward(&mut ctx, h_cur)?;
            }
            features.push(h_cur);
        }

        let mut y: Option<Var> = None;
        for (level, &src) in self.arch.decoder.iter().zip(&DECODER_SOURCES) {
            let skip = features[src];
            let t = match (&level.entry, &level.fuse, y) {
                (Some(entry), _, None) => entry.forward(&mut ctx, skip)?,
                (_, Some(fuse), Some(prev)) => fuse.forward(&mut ctx, prev, skip)?,
                _ => unreachable!("decoder wiring is fixed at construction"),
            };
            let t = level.crp.forward(&mut ctx, t)?;
            y = Some(level.block.forward(&mut ctx, t, mask_features)?);
        }
        let y = y.expect("decoder has at least one level");
        let out = self.arch.head.forward(&mut ctx, y)?;
        Ok(ctx.graph.resize_bilinear(out, h, w))
    }

    /// Evaluation-mode log-depth prediction for one sample, shaped `(1, 1, H, W)`.
    pub fn forward(&self, sample: &RgbdSample) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, &[sample], StatsMode::Running)?;
        Ok(g.value(out).clone())
    }

    /// Depth prediction: optional sensor alignment, then clamped exponential.
    pub fn predict_depth(&self, sample: &RgbdSample) -> Result<DepthMap> {
        Ok(self.predict_batch(&[sample])?.remove(0))
    }

    pub fn predict_batch(&self, batch: &[&RgbdSample]) -> Result<Vec<DepthMap>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, batch, StatsMode::Running)?;
        let t = g.value(out);
        let (h, w) = (t.height(), t.width());
        t.data()
            .chunks(h * w)
            .zip(batch)
            .map(|(c, s)| {
                let mut log = c.to_vec();
                if self.config.align_to_sensor {
                    align_log_depth(&mut log, &s.sensor);
                }
                log_to_depth(&log, h, w, self.config.min_depth, self.config.max_depth)
            })
            .collect()
    }
}

/// Adds the median of `ln(sensor) − log_depth` over valid sensor pixels to
/// every entry. No-op without valid pixels.
pub fn align_log_depth(log_depth: &mut [f64], sensor: &DepthMap) {
    let mut diffs: Vec<f64> = log_depth
        .iter()
        .zip(sensor.values())
        .filter(|(_, s)| **s > 0.0)
        .map(|(p, s)| s.ln() - p)
        .collect();
    if diffs.is_empty() {
        return;
    }
    diffs.sort_by(f64::total_cmp);
    let n = diffs.len();
    let median = if n % 2 == 1 { diffs[n / 2] } else { 0.5 * (diffs[n / 2 - 1] + diffs[n / 2]) };
    log_depth.iter_mut().for_each(|v| *v += median);
}

/// `exp(clamp(log_depth, ln min, ln max))` as a depth map.
pub fn log_to_depth(log_depth: &[f64], height: usize, width: usize, min_depth: f64, max_depth: f64) -> Result<DepthMap> {
    let (lo, hi) = (min_depth.ln(), max_depth.ln());
    DepthMap::new(
        height,
        width,
        log_depth.iter().map(|v| v.clamp(lo, hi).exp()).collect(),
    )
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 || h == 0 || w == 0 {
        return Err(Error::IndivisibleSize {
            height: h,
            width: w,
            factor: ENCODER_STRIDE,
        });
    }
    Ok(())
}
