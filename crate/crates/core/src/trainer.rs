//! Minibatch Adam training with on-the-fly pseudo-sensor inputs and a
//! batch-norm freeze after the first epochs.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corruption::{guided_zeroing, sample_uniform_sparse, spatter, CorruptionConfig};
use crate::error::{Error, Result};
use crate::losses::{batch_loss_and_grad, LossKind};
use crate::metrics::{evaluate, MetricProfile, MetricReport};
use crate::network::{Checkpoint, Graph, Model, ParamRole, StatsMode};
use crate::tensor::Tensor;
use crate::types::{DepthMap, RgbdSample};

/// How the network input is derived from a training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Input is a pseudo-sensor corruption of the target.
    SemiDenseCorruption,
    /// Input keeps a fixed number of uniformly chosen target pixels.
    UniformSparse,
    /// Input is the recorded sensor map; supervision is the ground truth.
    None,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi_dense_corruption" => Ok(Strategy::SemiDenseCorruption),
            "uniform_sparse" => Ok(Strategy::UniformSparse),
            "none" => Ok(Strategy::None),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub strategy: Strategy,
    pub corruption: CorruptionConfig,
    pub sparse_points: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SemiDenseCorruption,
            corruption: CorruptionConfig::default(),
            sparse_points: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batch norm uses batch statistics and trains its affine terms for this
    /// many epochs, then both freeze. A value `>= epochs` never freezes.
    pub bn_freeze_after_epoch: usize,
    pub bn_momentum: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub pairs: PairConfig,
    pub augment_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            epochs: 20,
            batch_size: 1,
            bn_freeze_after_epoch: 1,
            bn_momentum: 0.1,
            loss: LossKind::PairwiseLogL1,
            seed: 0,
            pairs: PairConfig::default(),
            augment_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be finite and nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument("bn_momentum must lie in [0, 1]".into()));
        }
        self.pairs.corruption.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricReport>,
    pub seconds: f64,
    /// Seed from which all of this epoch's randomness is drawn.
    pub epoch_seed: u64,
    pub bn_frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// SplitMix64 finalizer over a combination of inputs.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn target_of(sample: &RgbdSample, strategy: Strategy) -> Result<&DepthMap> {
    match (strategy, &sample.gt) {
        (_, Some(gt)) => Ok(gt),
        (Strategy::None, None) => Err(Error::MissingGroundTruth),
        // Ground-truth-free training: the recorded map is its own target.
        (_, None) => Ok(&sample.sensor),
    }
}

/// Input sample and supervision map for one training step. Supervision is
/// the target itself, never densified or altered.
pub fn make_training_pair(sample: &RgbdSample, cfg: &PairConfig, rng: &mut impl Rng) -> Result<(RgbdSample, DepthMap)> {
    make_pair_cached(sample, cfg, None, rng)
}

fn make_pair_cached(
    sample: &RgbdSample,
    cfg: &PairConfig,
    guided: Option<&DepthMap>,
    rng: &mut impl Rng,
) -> Result<(RgbdSample, DepthMap)> {
    let target = target_of(sample, cfg.strategy)?;
    if target.valid_count() == 0 {
        return Err(Error::EmptyValidSet);
    }
    let input = match cfg.strategy {
        Strategy::None => return Ok((sample.clone(), target.clone())),
        Strategy::SemiDenseCorruption => {
            let owned;
            let guided = match guided {
                Some(g) => g,
                None => {
                    let with_target = RgbdSample::new(sample.rgb.clone(), sample.sensor.clone(), Some(target.clone()))?;
                    owned = guided_zeroing(&with_target, &cfg.corruption)?;
                    &owned
                }
            };
            spatter(guided, cfg.corruption.spatter_prob, rng)?
        }
        Strategy::UniformSparse => {
            let n = cfg.sparse_points.min(target.valid_count());
            sample_uniform_sparse(target, n, rng)?
        }
    };
    Ok((sample.with_sensor(input)?, target.clone()))
}

/// Adam moments for every parameter of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Deterministic inputs for evaluation: sample `i` is prepared with a seed
/// derived from `(seed, i)` only.
pub fn evaluation_pairs(samples: &[RgbdSample], cfg: &PairConfig, seed: u64) -> Result<Vec<(RgbdSample, DepthMap)>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, i as u64));
            make_training_pair(s, cfg, &mut rng)
        })
        .collect()
}

/// Mean metric report of the model's predictions over prepared pairs.
pub fn evaluate_model(model: &Model, pairs: &[(RgbdSample, DepthMap)], profile: &MetricProfile) -> Result<MetricReport> {
    let mut reports = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(16) {
        let inputs: Vec<&RgbdSample> = chunk.iter().map(|(s, _)| s).collect();
        for (pred, (_, target)) in model.predict_batch(&inputs)?.iter().zip(chunk) {
            reports.push(evaluate(pred, target, profile)?);
        }
    }
    MetricReport::mean(&reports)
}

/// Reference completion: sensor depth where present, the per-image mean of
/// valid sensor depth elsewhere.
pub fn mean_fill(sensor: &DepthMap) -> DepthMap {
    let valid = sensor.valid_count();
    if valid == 0 {
        return sensor.clone();
    }
    let mean = sensor.values().iter().filter(|v| **v > 0.0).sum::<f64>() / valid as f64;
    sensor.map_indexed(|_, v| if v > 0.0 { v } else { mean })
}

pub fn evaluate_mean_fill(pairs: &[(RgbdSample, DepthMap)], profile: &MetricProfile) -> Result<MetricReport> {
    let reports = pairs
        .iter()
        .map(|(s, t)| evaluate(&mean_fill(&s.sensor), t, profile))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::mean(&reports)
}

pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    adam: Adam,
    history: TrainHistory,
    profile: MetricProfile,
    /// Deterministic segment-guided zeroing per training sample.
    guided: Vec<Option<DepthMap>>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let profile = MetricProfile {
            max_depth: model.config().max_depth,
            ..MetricProfile::default()
        };
        Ok(Self {
            adam: Adam::new(&model),
            model,
            cfg,
            history: TrainHistory::default(),
            profile,
            guided: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    /// Changes the epoch budget, e.g. to extend a resumed run. Every other
    /// setting stays as stored so the trajectory is unchanged.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        self.cfg.epochs = epochs;
        Ok(())
    }

    pub fn into_parts(self) -> (Model, TrainHistory) {
        (self.model, self.history)
    }

    fn bn_frozen(&self, epoch: usize) -> bool {
        epoch > self.cfg.bn_freeze_after_epoch
    }

    fn prepare(&mut self, train: &[RgbdSample]) -> Result<()> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if self.guided.len() != train.len() {
            self.guided = vec![None; train.len()];
        }
        if self.cfg.pairs.strategy == Strategy::SemiDenseCorruption {
            for (slot, s) in self.guided.iter_mut().zip(train) {
                if slot.is_none() {
                    let target = target_of(s, Strategy::SemiDenseCorruption)?.clone();
                    let with_target = RgbdSample::new(s.rgb.clone(), s.sensor.clone(), Some(target))?;
                    *slot = Some(guided_zeroing(&with_target, &self.cfg.pairs.corruption)?);
                }
            }
        }
        Ok(())
    }

    fn pair_for(&self, train: &[RgbdSample], epoch: usize, i: usize) -> Result<(RgbdSample, DepthMap)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64, i as u64 + 1));
        let (input, target) = make_pair_cached(&train[i], &self.cfg.pairs, self.guided[i].as_ref(), &mut rng)?;
        if self.cfg.augment_flip && rng.gen_bool(0.5) {
            Ok((input.flip_horizontal(), target.flip_horizontal()))
        } else {
            Ok((input, target))
        }
    }

    /// The (input, supervision) pair that epoch `epoch` (1-based) feeds for
    /// training sample `i`.
    pub fn training_pair(&mut self, train: &[RgbdSample], epoch: usize, i: usize) -> Result<(RgbdSample, DepthMap)> {
        if i >= train.len() || epoch == 0 {
            return Err(Error::InvalidArgument(format!("no training pair for epoch {epoch}, sample {i}")));
        }
        self.prepare(train)?;
        self.pair_for(train, epoch, i)
    }

    /// Runs one epoch over `train`; evaluates on `val` when it is nonempty.
    pub fn train_epoch(&mut self, train: &[RgbdSample], val: &[RgbdSample]) -> Result<&EpochRecord> {
        self.prepare(train)?;
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let epoch_seed = derive_seed(self.cfg.seed, epoch as u64, 0);
        let frozen = self.bn_frozen(epoch);
        let mode = if frozen { StatsMode::Running } else { StatsMode::Batch };

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, batch_idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut inputs = Vec::with_capacity(batch_idx.len());
            let mut targets = Vec::with_capacity(batch_idx.len());
            for &i in batch_idx {
                let (input, target) = self.pair_for(train, epoch, i)?;
                inputs.push(input);
                targets.push(target);
            }
            let loss = self.step(&inputs, &targets, mode, frozen)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss;
            steps += 1;
        }
        let val = if val.is_empty() {
            None
        } else {
            let pairs = evaluation_pairs(val, &self.cfg.pairs, self.cfg.seed)?;
            Some(evaluate_model(&self.model, &pairs, &self.profile)?)
        };
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            val,
            seconds: start.elapsed().as_secs_f64(),
            epoch_seed,
            bn_frozen: frozen,
        });
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self, inputs: &[RgbdSample], targets: &[DepthMap], mode: StatsMode, frozen: bool) -> Result<f64> {
        let batch: Vec<&RgbdSample> = inputs.iter().collect();
        let mut graph = Graph::new();
        let out = self.model.forward_graph(&mut graph, &batch, mode)?;
        let pred = graph.value(out);
        let target_refs: Vec<&DepthMap> = targets.iter().collect();
        let (loss, grad) = batch_loss_and_grad(self.cfg.loss, pred.data(), &target_refs)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let seed = Tensor::from_vec(pred.shape(), grad)?;
        let grads = graph.backward(out, seed, self.model.params().len())?;

        if mode == StatsMode::Batch {
            let momentum = self.cfg.bn_momentum;
            let store = self.model.params_mut();
            for s in graph.batch_stats() {
                let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
                let rs = store.norm_mut(s.id);
                for c in 0..rs.mean.len() {
                    rs.mean[c] = (1.0 - momentum) * rs.mean[c] + momentum * s.mean[c];
                    rs.var[c] = (1.0 - momentum) * rs.var[c] + momentum * s.var[c] * unbias;
                }
            }
        }

        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr_t = self.cfg.lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let ids: Vec<_> = self.model.params().ids().collect();
        for id in ids {
            if frozen && self.model.params().entry(id).role == ParamRole::NormAffine {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let k = id.index();
            let (m, v) = (&mut self.adam.m[k], &mut self.adam.v[k]);
            let wd = self.cfg.weight_decay;
            let param = self.model.params_mut().tensor_mut(id).data_mut();
            for j in 0..param.len() {
                let gj = g.data()[j] + wd * param[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                param[j] -= lr_t * m[j] / (v[j].sqrt() + self.cfg.adam_eps);
            }
        }
        Ok(loss)
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn fit(
        &mut self,
        train: &[RgbdSample],
        val: &[RgbdSample],
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.epochs_done() < self.cfg.epochs {
            self.train_epoch(train, val)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.aux.push(("adam.m".into(), self.adam.m.concat()));
        ck.aux.push(("adam.v".into(), self.adam.v.concat()));
        ck.meta = serde_json::json!({
            "adam_step": self.adam.step,
            "train_config": self.cfg,
            "history": self.history,
        });
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint()?.write(path)
    }

    /// Restores model, optimizer state, history and configuration.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.to_model()?;
        let meta = &ck.meta;
        let cfg: TrainConfig = serde_json::from_value(meta["train_config"].clone())?;
        let history: TrainHistory = serde_json::from_value(meta["history"].clone())?;
        let step = meta["adam_step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing adam_step".into()))?;
        let mut trainer = Trainer::new(model, cfg)?;
        for (name, dst) in [("adam.m", &mut trainer.adam.m), ("adam.v", &mut trainer.adam.v)] {
            let flat = ck.aux(name).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            if flat.len() != dst.iter().map(Vec::len).sum::<usize>() {
                return Err(Error::Checkpoint(format!("{name} has the wrong length")));
            }
            let mut off = 0;
            for d in dst.iter_mut() {
                let len = d.len();
                d.copy_from_slice(&flat[off..off + len]);
                off += len;
            }
        }
        trainer.adam.step = step;
        trainer.history = history;
        Ok(trainer)
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Trains a model from scratch and returns it with its history.
pub fn train(model: Model, train: &[RgbdSample], val: &[RgbdSample], cfg: TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.fit(train, val, |_| Ok(()))?;
    Ok(trainer.into_parts())
}

/// Deterministic train/validation partition of `0..n`: a seeded shuffle
/// whose first `ceil(fraction * n)` entries validate. Both lists are sorted.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed, 0)));
    let n_val = ((fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};

    fn scene(seed: u64) -> RgbdSample {
        generate_scene(&SceneConfig {
            rng_seed: seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn none_strategy_passes_through() {
        let s = scene(1);
        let cfg = PairConfig {
            strategy: Strategy::None,
            ..Default::default()
        };
        let (input, sup) = make_training_pair(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(input, s);
        assert_eq!(&sup, s.gt.as_ref().unwrap());
        let no_gt = RgbdSample::new(s.rgb.clone(), s.sensor.clone(), None).unwrap();
        assert!(matches!(
            make_training_pair(&no_gt, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::MissingGroundTruth)
        ));
    }

    #[test]
    fn corruption_only_removes_and_keeps_supervision() {
        let s = scene(2);
        let cfg = PairConfig {
            corruption: CorruptionConfig::for_resolution(64, 64),
            ..Default::default()
        };
        let (input, sup) = make_training_pair(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(&sup, s.gt.as_ref().unwrap());
        assert!(input.mask.is_subset_of(&s.mask));
        assert!(input.mask.count() < s.mask.count());
    }

    #[test]
    fn uniform_sparse_keeps_exact_count() {
        let s = scene(3);
        let cfg = PairConfig {
            strategy: Strategy::UniformSparse,
            ..Default::default()
        };
        let (input, _) = make_training_pair(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(input.sensor.valid_count(), 500);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t, v) = split_validation(100, 0.1, 7);
        assert_eq!((t.len(), v.len()), (90, 10));
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_validation(100, 0.1, 7), (t, v));
        assert_eq!(split_validation(1, 0.1, 0).1.len(), 0);
    }

    #[test]
    fn mean_fill_fills_holes_with_mean() {
        let d = DepthMap::new(1, 3, vec![1.0, 0.0, 3.0]).unwrap();
        assert_eq!(mean_fill(&d).values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn seeds_differ_across_inputs() {
        assert_ne!(derive_seed(0, 1, 2), derive_seed(0, 2, 1));
        assert_ne!(derive_seed(0, 0, 0), derive_seed(1, 0, 0));
    }
}
