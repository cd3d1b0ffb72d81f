//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion N [PASS|FAIL] ...` line to stderr (uncaptured), then asserts.
//!
//! Criteria 8 to 10 train real models on a fixed synthetic benchmark and
//! share runs; they take roughly 12 minutes on one CPU core.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semidense::corruption::{corrupt, spatter, zero_small_segments, CorruptionConfig};
use semidense::data::{generate_scene, SceneConfig};
use semidense::losses::{batch_loss_and_grad, build_valid_set, loss_value, pairwise_log_l1, pairwise_log_l2, LossKind, ValidSet};
use semidense::metrics::{evaluate, MetricProfile};
use semidense::network::layers::{Ctx, NormBlock, Spade};
use semidense::network::{Graph, Model, ModelConfig, ParamId, ParamStore, SizeTier, StatsMode, Variant};
use semidense::oracles::{oracle_metrics, oracle_pairwise, oracle_segment};
use semidense::segment::segment_graph_based;
use semidense::trainer::{evaluate_mean_fill, evaluate_model, evaluation_pairs, PairConfig, Strategy, TrainConfig, Trainer};
use semidense::{mask_from_depth, DepthMap, RgbImage, RgbdSample, Tensor};

const PAIRWISE_TOL: f64 = 1e-9;
const PAIRWISE_BUDGET_S: f64 = 5.0;
const SCALE_TOL: f64 = 1e-12;
const SPADE_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 120.0;
/// Both gradient estimates below this are rounding noise around an exact zero.
const GRAD_ZERO_FLOOR: f64 = 1e-7;
const SPATTER_TOL: f64 = 0.05;
const METRIC_TOL: f64 = 1e-9;
const MARGIN: f64 = 0.30;
const DESK_BUDGET_S: f64 = 90.0 * 60.0;
const REPRO_TOL: f64 = 1e-5;

const TRAIN_SCENES: u64 = 512;
const TEST_SEED_BASE: u64 = 100_000;
const TEST_SCENES: u64 = 64;
const EVAL_SEED: u64 = 777;
const EPOCHS: usize = 20;
const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "\ncriterion {n:>2} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_valid_set(rng: &mut impl Rng, n: usize) -> ValidSet {
    let gt = DepthMap::from_fn(1, n, |_, _| rng.gen_range(0.2..15.0)).unwrap();
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
    build_valid_set(&pred, &gt).unwrap()
}

#[test]
fn criterion_01_pairwise_loss_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=256);
        let vs = random_valid_set(&mut rng, n);
        worst = worst.max((pairwise_log_l1(&vs) - oracle_pairwise(&vs, LossKind::PairwiseLogL1).unwrap()).abs());
        worst = worst.max((pairwise_log_l2(&vs) - oracle_pairwise(&vs, LossKind::PairwiseLogL2).unwrap()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "pairwise-loss exactness",
        worst <= PAIRWISE_TOL && secs < PAIRWISE_BUDGET_S,
        &format!("max abs error {worst:.2e} (tol {PAIRWISE_TOL:.0e}), {secs:.2}s (budget {PAIRWISE_BUDGET_S}s)"),
    );
}

#[test]
fn criterion_02_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=200);
        let gt = DepthMap::from_fn(1, n, |_, _| rng.gen_range(0.2..15.0)).unwrap();
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..15.0)).collect();
        let log = |c: f64| -> Vec<f64> { pred.iter().map(|p| (c * p).ln()).collect() };
        let base = loss_value(LossKind::PairwiseLogL1, &build_valid_set(&log(1.0), &gt).unwrap()).unwrap();
        for c in [0.1, 2.0, 10.0] {
            let scaled = loss_value(LossKind::PairwiseLogL1, &build_valid_set(&log(c), &gt).unwrap()).unwrap();
            worst = worst.max(rel(base, scaled));
        }
    }
    report(
        2,
        "scale invariance",
        worst <= SCALE_TOL,
        &format!("max relative change {worst:.2e} (tol {SCALE_TOL:.0e})"),
    );
}

#[test]
fn criterion_03_spade_reduces_to_batch_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let shape = [rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(2..9), rng.gen_range(2..9)];
        let mut store = ParamStore::new();
        let spade = Spade::new(&mut store, "s", shape[1], 4, eps, &mut rng);
        let f = Tensor::from_fn(shape, |_| rng.gen_range(-5.0..5.0));
        let m = Tensor::from_fn([shape[0], 4, shape[2], shape[3]], |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &store, StatsMode::Batch);
        let fv = ctx.graph.input(f.clone());
        let mv = ctx.graph.input(m);
        let out = spade.forward(&mut ctx, fv, mv).unwrap();
        // Reference: per-channel mean and biased variance over (N, H, W).
        let [n, c, h, w] = shape;
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| (0..h * w).map(move |p| (b, p)))
                .map(|(b, p)| f.at([b, ch, p / w, p % w]))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for b in 0..n {
                for p in 0..h * w {
                    let idx = [b, ch, p / w, p % w];
                    let expected = (f.at(idx) - mean) / (var + eps).sqrt();
                    worst = worst.max((g.value(out).at(idx) - expected).abs());
                }
            }
        }
    }
    report(
        3,
        "SPADE with identity modulation equals batch norm",
        worst <= SPADE_TOL,
        &format!("max abs difference {worst:.2e} (tol {SPADE_TOL:.0e})"),
    );
}

fn rel_grad_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < GRAD_ZERO_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn sample_params(store: &ParamStore, count: usize, rng: &mut impl Rng) -> Vec<(ParamId, usize)> {
    let sizes: Vec<(ParamId, usize)> = store.ids().map(|id| (id, store.tensor(id).len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    sample(rng, total, count)
        .into_iter()
        .map(|mut flat| {
            for &(id, len) in &sizes {
                if flat < len {
                    return (id, flat);
                }
                flat -= len;
            }
            unreachable!()
        })
        .collect()
}

fn randomize_heads(store: &mut ParamStore, rng: &mut impl Rng, range: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = &store.entry(id).name;
        if name.contains(".gamma.") || name.contains(".beta.") {
            for v in store.tensor_mut(id).data_mut() {
                *v = rng.gen_range(-range..range);
            }
        }
    }
}

fn grad_losses(rng: &mut impl Rng) -> f64 {
    let mut worst = 0.0f64;
    let step = 1e-6;
    for kind in LossKind::ALL {
        let gt = DepthMap::from_fn(5, 8, |_, _| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.5..8.0) }).unwrap();
        let pred: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..2.2)).collect();
        let (_, grad) = batch_loss_and_grad(kind, &pred, &[&gt]).unwrap();
        for i in sample(rng, 40, 20) {
            let mut p = pred.clone();
            p[i] += step;
            let up = batch_loss_and_grad(kind, &p, &[&gt]).unwrap().0;
            p[i] -= 2.0 * step;
            let down = batch_loss_and_grad(kind, &p, &[&gt]).unwrap().0;
            worst = worst.max(rel_grad_err(grad[i], (up - down) / (2.0 * step)));
        }
    }
    worst
}

fn grad_spade_block(rng: &mut impl Rng) -> f64 {
    let mut store = ParamStore::new();
    let block = NormBlock::new(&mut store, "b", 4, Some(3), 0.01, 1e-5, rng);
    randomize_heads(&mut store, rng, 0.3);
    let x = Tensor::from_fn([2, 4, 8, 8], |_| rng.gen_range(-2.0..2.0));
    let m = Tensor::from_fn([2, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let probe = Tensor::from_fn([2, 4, 8, 8], |_| rng.gen_range(-1.0..1.0));
    let objective = |s: &ParamStore, grads: bool| {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, s, StatsMode::Batch);
        let xv = ctx.graph.input(x.clone());
        let mv = ctx.graph.input(m.clone());
        let out = block.forward(&mut ctx, xv, Some(mv)).unwrap();
        let v: f64 = g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        (v, grads.then(|| g.backward(out, probe.clone(), s.len()).unwrap()))
    };
    let grads = objective(&store, true).1.unwrap();
    let mut worst = 0.0f64;
    let step = 1e-5;
    for (id, j) in sample_params(&store, 20, rng) {
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
        let mut s = store.clone();
        s.tensor_mut(id).data_mut()[j] += step;
        let up = objective(&s, false).0;
        s.tensor_mut(id).data_mut()[j] -= 2.0 * step;
        let down = objective(&s, false).0;
        worst = worst.max(rel_grad_err(analytic, (up - down) / (2.0 * step)));
    }
    worst
}

/// Returns the worst error and how many sampled parameters disagree at the
/// coarsest step alone.
///
/// Pairwise L1 and ReLU6 make the objective piecewise smooth, and a random
/// encoder weight moves thousands of residuals and activations at once. A
/// perturbation of 1e-4 then straddles a kink for a sizeable share of
/// samples, and the finite difference stops approximating the derivative.
/// Each parameter is therefore compared at three steps; a wrong gradient
/// cannot agree with any of them.
fn grad_full_model(rng: &mut impl Rng) -> (f64, usize) {
    let mut model = Model::new(ModelConfig::new(Variant::DmLrn, SizeTier::T0).with_seed(5)).unwrap();
    randomize_heads(model.params_mut(), rng, 0.1);
    let scenes: Vec<RgbdSample> = (1..=2)
        .map(|s| {
            let sm = generate_scene(&SceneConfig {
                height: 32,
                width: 32,
                rng_seed: s,
                ..Default::default()
            })
            .unwrap();
            let holes = DepthMap::from_fn(32, 32, |y, x| if (8..20).contains(&y) && x < 12 { 0.0 } else { sm.sensor.get(y, x) }).unwrap();
            sm.with_sensor(holes).unwrap()
        })
        .collect();
    let batch: Vec<&RgbdSample> = scenes.iter().collect();
    let targets: Vec<&DepthMap> = scenes.iter().map(|s| s.gt.as_ref().unwrap()).collect();
    let loss = |m: &Model| {
        let mut g = Graph::new();
        let out = m.forward_graph(&mut g, &batch, StatsMode::Batch).unwrap();
        batch_loss_and_grad(LossKind::PairwiseLogL1, g.value(out).data(), &targets).unwrap().0
    };
    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, &batch, StatsMode::Batch).unwrap();
    let pred = g.value(out);
    let (_, dl) = batch_loss_and_grad(LossKind::PairwiseLogL1, pred.data(), &targets).unwrap();
    let grads = g
        .backward(out, Tensor::from_vec(pred.shape(), dl).unwrap(), model.params().len())
        .unwrap();
    let mut worst = 0.0f64;
    let mut straddled = 0;
    for (id, j) in sample_params(model.params(), 20, rng) {
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
        let original = model.params().tensor(id).data()[j];
        let errors: Vec<f64> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&step| {
                model.params_mut().tensor_mut(id).data_mut()[j] = original + step;
                let up = loss(&model);
                model.params_mut().tensor_mut(id).data_mut()[j] = original - step;
                let down = loss(&model);
                model.params_mut().tensor_mut(id).data_mut()[j] = original;
                rel_grad_err(analytic, (up - down) / (2.0 * step))
            })
            .collect();
        straddled += usize::from(errors[0] >= GRAD_TOL);
        worst = worst.max(errors.iter().copied().fold(f64::INFINITY, f64::min));
    }
    (worst, straddled)
}

#[test]
fn criterion_04_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let losses = grad_losses(&mut rng);
    let block = grad_spade_block(&mut rng);
    let (full, straddled) = grad_full_model(&mut rng);
    let secs = start.elapsed().as_secs_f64();
    let worst = losses.max(block).max(full);
    report(
        4,
        "gradient correctness",
        worst < GRAD_TOL && secs < GRAD_BUDGET_S,
        &format!(
            "max relative error: losses {losses:.2e}, SPADE block {block:.2e}, full T0 model {full:.2e} (tol {GRAD_TOL:.0e}; {straddled}/20 straddle a kink at step 1e-4), {secs:.1}s"
        ),
    );
}

fn patchy_image(rng: &mut impl Rng, h: usize, w: usize) -> RgbImage {
    let palette: Vec<[f64; 3]> = (0..4).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let cells: Vec<usize> = (0..16).map(|_| rng.gen_range(0..4)).collect();
    RgbImage::from_fn(h, w, |y, x| {
        let c = palette[cells[(y * 4 / h) * 4 + x * 4 / w]];
        c.map(|v| (v + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0))
    })
    .unwrap()
}

#[test]
fn criterion_05_segmentation_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut matched = 0;
    for _ in 0..50 {
        let rgb = patchy_image(&mut rng, 16, 16);
        let k = rng.gen_range(1.0..800.0);
        let min_size = rng.gen_range(1..20);
        let fast = segment_graph_based(&rgb, k, min_size, 0.0);
        if fast.same_partition(&oracle_segment(&rgb, k, min_size).unwrap()) {
            matched += 1;
        }
    }
    let constant = RgbImage::filled(16, 16, [0.3, 0.6, 0.1]);
    let constant_ok = [0.5, 50.0, 5000.0]
        .iter()
        .all(|&k| segment_graph_based(&constant, k, 1, 0.8).segment_count == 1);
    let whole_ok = (0..10).all(|_| {
        let rgb = patchy_image(&mut rng, 16, 16);
        segment_graph_based(&rgb, 50.0, 256, 0.8).segment_count == 1
    });
    report(
        5,
        "segmentation correctness",
        matched == 50 && constant_ok && whole_ok,
        &format!("{matched}/50 match the reference; constant image single segment: {constant_ok}; min_size=H*W single segment: {whole_ok}"),
    );
}

#[test]
fn criterion_06_corruption_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    for i in 0..100 {
        let (h, w) = (16, 16);
        let rgb = patchy_image(&mut rng, h, w);
        let gt = DepthMap::from_fn(h, w, |_, _| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.3..10.0) }).unwrap();
        let s = RgbdSample::new(rgb, gt.clone(), Some(gt.clone())).unwrap();
        let cfg = CorruptionConfig {
            k: rng.gen_range(50.0..800.0),
            min_size: rng.gen_range(1..8),
            area_threshold: rng.gen_range(0..60),
            spatter_prob: rng.gen_range(0.0..0.5),
            rng_seed: rng.gen(),
            gaussian_presmooth_sigma: 0.8,
        };
        let out = corrupt(&s, &cfg).unwrap();
        if !out.values().iter().zip(gt.values()).all(|(o, g)| *o == 0.0 || o == g) {
            failures.push(format!("sample {i}: value changed"));
        }
        let seg = segment_graph_based(&s.rgb, cfg.k, cfg.min_size, cfg.gaussian_presmooth_sigma);
        let (t1, t2) = (cfg.area_threshold, cfg.area_threshold + rng.gen_range(1..40));
        let a = mask_from_depth(&zero_small_segments(&gt, &seg, t1).unwrap());
        let b = mask_from_depth(&zero_small_segments(&gt, &seg, t2).unwrap());
        if !b.is_subset_of(&a) {
            failures.push(format!("sample {i}: threshold monotonicity"));
        }
        let mut r = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        if spatter(&gt, 0.0, &mut r).unwrap() != gt || spatter(&gt, 1.0, &mut r).unwrap().valid_count() != 0 {
            failures.push(format!("sample {i}: spatter identities"));
        }
        let identity = CorruptionConfig {
            area_threshold: 0,
            spatter_prob: 0.0,
            ..cfg.clone()
        };
        if corrupt(&s, &identity).unwrap() != gt {
            failures.push(format!("sample {i}: tau=0, p=0 identity"));
        }
    }
    let full = DepthMap::filled(128, 128, 2.0);
    let mut worst_dev = 0.0f64;
    for p in [0.02, 0.3, 0.7] {
        for seed in 0..20 {
            let out = spatter(&full, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let frac = 1.0 - out.valid_count() as f64 / full.len() as f64;
            worst_dev = worst_dev.max((frac - p).abs());
        }
    }
    report(
        6,
        "corruption contracts",
        failures.is_empty() && worst_dev <= SPATTER_TOL,
        &format!(
            "{} contract violations in 100 samples; max spatter deviation {worst_dev:.4} at 128x128 over 20 seeds (tol {SPATTER_TOL})",
            failures.len()
        ),
    );
}

#[test]
fn criterion_07_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let profile = MetricProfile::default();
    let mut worst = 0.0f64;
    let mut invariant_ok = true;
    for _ in 0..100 {
        let gt = DepthMap::from_fn(32, 32, |_, _| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.3..10.0) }).unwrap();
        let pred = DepthMap::from_fn(32, 32, |_, _| if rng.gen_bool(0.02) { 0.0 } else { rng.gen_range(0.3..10.0) }).unwrap();
        let r = evaluate(&pred, &gt, &profile).unwrap();
        let o = oracle_metrics(&pred, &gt, &profile).unwrap();
        let mut diffs = vec![r.rmse - o.rmse, r.mae - o.mae, r.rel - o.rel, r.ssim - o.ssim];
        diffs.extend(r.delta.iter().zip(o.delta).map(|(a, b)| a - b));
        diffs.push(r.irmse.unwrap_or(0.0) - o.irmse.unwrap_or(0.0));
        diffs.push(r.imae.unwrap_or(0.0) - o.imae.unwrap_or(0.0));
        worst = diffs.iter().fold(worst, |m, d| m.max(d.abs()));
        invariant_ok &= r.delta.windows(2).all(|w| w[0] <= w[1]) && r.rmse >= r.mae;
    }
    let pred = DepthMap::new(1, 2, vec![1.0, 3.0]).unwrap();
    let gt = DepthMap::new(1, 2, vec![1.0, 1.0]).unwrap();
    let ex = evaluate(&pred, &gt, &profile).unwrap();
    let worked = ex.rmse == 2f64.sqrt() && ex.mae == 1.0 && ex.delta[2] == 0.5;
    report(
        7,
        "metric oracle equivalence",
        worst <= METRIC_TOL && invariant_ok && worked,
        &format!(
            "max abs difference {worst:.2e} (tol {METRIC_TOL:.0e}); delta monotone and rmse>=mae: {invariant_ok}; worked example exact: {worked}"
        ),
    );
}

// Desk-scale benchmark shared by criteria 8 to 10.

struct Bench {
    train: Vec<RgbdSample>,
    eval_pairs: Vec<(RgbdSample, DepthMap)>,
    baseline: f64,
}

fn scene(seed: u64) -> RgbdSample {
    generate_scene(&SceneConfig {
        rng_seed: seed,
        ..Default::default()
    })
    .unwrap()
}

fn corruption_pairs() -> PairConfig {
    PairConfig {
        corruption: CorruptionConfig::for_resolution(64, 64),
        ..Default::default()
    }
}

fn bench() -> &'static Bench {
    static BENCH: OnceLock<Bench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let train = (0..TRAIN_SCENES).map(scene).collect();
        let test: Vec<RgbdSample> = (TEST_SEED_BASE..TEST_SEED_BASE + TEST_SCENES).map(scene).collect();
        let eval_pairs = evaluation_pairs(&test, &corruption_pairs(), EVAL_SEED).unwrap();
        let baseline = evaluate_mean_fill(&eval_pairs, &MetricProfile::default()).unwrap().rmse;
        Bench {
            train,
            eval_pairs,
            baseline,
        }
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct RunKey {
    variant: Variant,
    tier: SizeTier,
    strategy: Strategy,
    seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct RunResult {
    rmse: f64,
    seconds: f64,
}

/// Trains one configuration on the benchmark (once per process) and returns
/// its test RMSE on corrupted inputs.
fn desk_run(key: RunKey) -> RunResult {
    static RUNS: OnceLock<Mutex<HashMap<RunKey, Arc<OnceLock<RunResult>>>>> = OnceLock::new();
    let cell = RUNS
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(key)
        .or_default()
        .clone();
    *cell.get_or_init(|| {
        let b = bench();
        let start = Instant::now();
        let model = Model::new(ModelConfig::new(key.variant, key.tier).with_seed(key.seed)).unwrap();
        let cfg = TrainConfig {
            epochs: EPOCHS,
            seed: key.seed,
            pairs: PairConfig {
                strategy: key.strategy,
                ..corruption_pairs()
            },
            ..Default::default()
        };
        let mut trainer = Trainer::new(model, cfg).unwrap();
        trainer.fit(&b.train, &[], |_| Ok(())).unwrap();
        let rmse = evaluate_model(trainer.model(), &b.eval_pairs, &MetricProfile::default())
            .unwrap()
            .rmse;
        RunResult {
            rmse,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn runs(variant: Variant, tier: SizeTier, strategy: Strategy) -> Vec<RunResult> {
    SEEDS
        .iter()
        .map(|&seed| {
            desk_run(RunKey {
                variant,
                tier,
                strategy,
                seed,
            })
        })
        .collect()
}

fn mean_rmse(r: &[RunResult]) -> f64 {
    r.iter().map(|x| x.rmse).sum::<f64>() / r.len() as f64
}

fn listing(r: &[RunResult]) -> String {
    r.iter().map(|x| format!("{:.4}", x.rmse)).collect::<Vec<_>>().join("/")
}

#[test]
fn criterion_08_modulation_beats_plain_decoder() {
    let b = bench();
    let dm = runs(Variant::DmLrn, SizeTier::T0, Strategy::SemiDenseCorruption);
    let lrn = runs(Variant::Lrn, SizeTier::T0, Strategy::SemiDenseCorruption);
    let (m_dm, m_lrn) = (mean_rmse(&dm), mean_rmse(&lrn));
    let gain = |m: f64| 1.0 - m / b.baseline;
    let secs: f64 = dm.iter().chain(&lrn).map(|r| r.seconds).sum();
    let ordered = m_dm <= m_lrn;
    let dm_margin = gain(m_dm) >= MARGIN;
    let lrn_margin = gain(m_lrn) >= MARGIN;
    report(
        8,
        "desk-scale DM_LRN <= LRN, both >= 30% under mean-fill",
        ordered && dm_margin && lrn_margin && secs < DESK_BUDGET_S,
        &format!(
            "mean RMSE DM_LRN {m_dm:.4} ({}) vs LRN {m_lrn:.4} ({}), ordered: {ordered}; mean-fill {:.4}; gain DM_LRN {:.1}% ({}), LRN {:.1}% ({}); {secs:.0}s",
            listing(&dm),
            listing(&lrn),
            b.baseline,
            100.0 * gain(m_dm),
            if dm_margin { "ok" } else { "short" },
            100.0 * gain(m_lrn),
            if lrn_margin { "ok" } else { "short" },
        ),
    );
}

#[test]
fn criterion_09_larger_encoders_do_not_hurt() {
    let tiers = [SizeTier::T0, SizeTier::T1, SizeTier::T2];
    let by_tier: Vec<Vec<RunResult>> = tiers
        .iter()
        .map(|&t| runs(Variant::DmLrn, t, Strategy::SemiDenseCorruption))
        .collect();
    let monotone_seeds = (0..SEEDS.len())
        .filter(|&s| (1..tiers.len()).all(|t| by_tier[t][s].rmse <= by_tier[t - 1][s].rmse))
        .count();
    let detail = tiers
        .iter()
        .zip(&by_tier)
        .map(|(t, r)| format!("{t:?} {:.4} ({})", mean_rmse(r), listing(r)))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        9,
        "DM_LRN RMSE non-increasing over T0..T2",
        monotone_seeds >= 2,
        &format!("{monotone_seeds}/3 seed runs non-increasing (need 2); {detail}"),
    );
}

#[test]
fn criterion_10_semi_dense_training_beats_sparse() {
    let semi = runs(Variant::DmLrn, SizeTier::T0, Strategy::SemiDenseCorruption);
    let sparse = runs(Variant::DmLrn, SizeTier::T0, Strategy::UniformSparse);
    let (a, b) = (mean_rmse(&semi), mean_rmse(&sparse));
    report(
        10,
        "semi-dense training beats 500-point sparse training",
        a < b,
        &format!("mean RMSE on corrupted inputs: semi-dense {a:.4} ({}), sparse {b:.4} ({})", listing(&semi), listing(&sparse)),
    );
}

#[test]
fn criterion_11_determinism_and_resume() {
    let train: Vec<RgbdSample> = (0..24).map(scene).collect();
    let test: Vec<RgbdSample> = (500..508).map(scene).collect();
    let mut checks = Vec::new();

    // Data generation and corruption.
    checks.push(("scene generation", (0..4).all(|s| scene(s) == scene(s))));
    let cfg = CorruptionConfig {
        rng_seed: 3,
        ..CorruptionConfig::for_resolution(64, 64)
    };
    checks.push((
        "corruption",
        train.iter().take(4).all(|s| corrupt(s, &cfg).unwrap() == corrupt(s, &cfg).unwrap()),
    ));

    // Training and evaluation.
    let profile = MetricProfile::default();
    let pairs = evaluation_pairs(&test, &corruption_pairs(), EVAL_SEED).unwrap();
    let run = |epochs_first: usize| {
        let model = Model::new(ModelConfig::new(Variant::DmLrn, SizeTier::T0).with_seed(11)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            pairs: corruption_pairs(),
            ..Default::default()
        };
        let mut t = Trainer::new(model, cfg).unwrap();
        for _ in 0..epochs_first {
            t.train_epoch(&train, &[]).unwrap();
        }
        if epochs_first < 3 {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("resume.ckpt");
            t.save(&path).unwrap();
            t = Trainer::resume(&path).unwrap();
            t.fit(&train, &[], |_| Ok(())).unwrap();
        }
        let report = evaluate_model(t.model(), &pairs, &profile).unwrap();
        (t.history().losses(), report)
    };
    let (loss_a, rep_a) = run(3);
    let (loss_b, rep_b) = run(3);
    let (loss_c, _) = run(1);
    let metric_drift = [
        rel(rep_a.rmse, rep_b.rmse),
        rel(rep_a.mae, rep_b.mae),
        rel(rep_a.ssim, rep_b.ssim),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    let loss_drift = loss_a.iter().zip(&loss_b).map(|(a, b)| rel(*a, *b)).fold(0.0f64, f64::max);
    let resume_drift = rel(*loss_a.last().unwrap(), *loss_c.last().unwrap());
    checks.push(("rerun metrics", metric_drift <= REPRO_TOL && loss_drift <= REPRO_TOL));
    checks.push(("resume final loss", resume_drift <= REPRO_TOL));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        11,
        "determinism and reproducibility",
        failed.is_empty(),
        &format!(
            "rerun metric drift {metric_drift:.1e}, loss drift {loss_drift:.1e}, resume final-loss drift {resume_drift:.1e} (tol {REPRO_TOL:.0e}); failing checks: {failed:?}"
        ),
    );
}
