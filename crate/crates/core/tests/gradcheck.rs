//! Analytic gradients against central finite differences.
//!
//! Relative error is `|a − n| / max(|a|, |n|)`. Some parameters have a
//! gradient that is exactly zero in exact arithmetic (a conv bias feeding a
//! batch-normalized layer, for instance); for those both values are pure
//! rounding noise, so a pair with `max(|a|, |n|) < ZERO_FLOOR` counts as
//! agreeing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semidense::data::{generate_scene, SceneConfig};
use semidense::losses::{batch_loss_and_grad, LossKind};
use semidense::network::layers::{Ctx, NormBlock};
use semidense::network::{Graph, Model, ModelConfig, ParamId, ParamStore, SizeTier, StatsMode, Variant};
use semidense::{DepthMap, RgbdSample, Tensor};

const ZERO_FLOOR: f64 = 1e-7;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Picks `count` distinct scalar parameters uniformly over the whole store.
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
            unreachable!("index within total")
        })
        .collect()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w) = (6, 7);
    let h_step = 1e-6;
    for kind in LossKind::ALL {
        for trial in 0..4 {
            let gt = DepthMap::from_fn(h, w, |_, _| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(0.5..8.0)
                }
            })
            .unwrap();
            let gt2 = DepthMap::from_fn(h, w, |_, _| rng.gen_range(0.5..8.0)).unwrap();
            let pred: Vec<f64> = (0..2 * h * w).map(|_| rng.gen_range(-1.0..2.2)).collect();
            let targets = [&gt, &gt2];
            let (_, grad) = batch_loss_and_grad(kind, &pred, &targets).unwrap();
            for i in sample(&mut rng, pred.len(), 20) {
                let mut p = pred.clone();
                p[i] += h_step;
                let up = batch_loss_and_grad(kind, &p, &targets).unwrap().0;
                p[i] -= 2.0 * h_step;
                let down = batch_loss_and_grad(kind, &p, &targets).unwrap().0;
                let numeric = (up - down) / (2.0 * h_step);
                let e = rel_err(grad[i], numeric);
                assert!(e < 1e-3, "{kind} trial {trial} pixel {i}: {} vs {numeric} ({e})", grad[i]);
            }
        }
    }
}

/// Scalar objective `Σ out ⊙ probe` of a SPADE block in batch mode, and its
/// parameter gradients.
fn spade_objective(
    store: &ParamStore,
    block: &NormBlock,
    x: &Tensor,
    m: &Tensor,
    probe: &Tensor,
    grads: bool,
) -> (f64, Option<semidense::network::Gradients>) {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, store, StatsMode::Batch);
    let xv = ctx.graph.input(x.clone());
    let mv = ctx.graph.input(m.clone());
    let out = block.forward(&mut ctx, xv, Some(mv)).unwrap();
    let value: f64 = g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
    let grads = grads.then(|| g.backward(out, probe.clone(), store.len()).unwrap());
    (value, grads)
}

#[test]
fn spade_block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let block = NormBlock::new(&mut store, "b", 4, Some(3), 0.01, 1e-5, &mut rng);
    // Randomize the zero-initialized modulation heads so they carry gradient.
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if store.entry(id).name.contains("gamma") || store.entry(id).name.contains("beta") {
            for v in store.tensor_mut(id).data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let x = Tensor::from_fn([2, 4, 8, 8], |_| rng.gen_range(-2.0..2.0));
    let m = Tensor::from_fn([2, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let probe = Tensor::from_fn([2, 4, 8, 8], |_| rng.gen_range(-1.0..1.0));
    let grads = spade_objective(&store, &block, &x, &m, &probe, true).1.unwrap();
    let h = 1e-5;
    let mut checked = 0;
    for (id, j) in sample_params(&store, 20, &mut rng) {
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
        let mut s = store.clone();
        s.tensor_mut(id).data_mut()[j] += h;
        let up = spade_objective(&s, &block, &x, &m, &probe, false).0;
        s.tensor_mut(id).data_mut()[j] -= 2.0 * h;
        let down = spade_objective(&s, &block, &x, &m, &probe, false).0;
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic, numeric);
        assert!(e < 1e-4, "{}[{j}]: {analytic} vs {numeric} ({e})", store.entry(id).name);
        checked += 1;
    }
    assert_eq!(checked, 20);
}

fn scene(seed: u64) -> RgbdSample {
    let s = generate_scene(&SceneConfig {
        height: 32,
        width: 32,
        rng_seed: seed,
        ..Default::default()
    })
    .unwrap();
    // Knock out a block of sensor depth so the mask is not trivial.
    let sensor = DepthMap::from_fn(32, 32, |y, x| if (8..20).contains(&y) && x < 12 { 0.0 } else { s.sensor.get(y, x) }).unwrap();
    s.with_sensor(sensor).unwrap()
}

fn model_loss(model: &Model, batch: &[&RgbdSample], targets: &[&DepthMap]) -> f64 {
    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, batch, StatsMode::Batch).unwrap();
    batch_loss_and_grad(LossKind::PairwiseLogL1, g.value(out).data(), targets).unwrap().0
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = Model::new(ModelConfig::new(Variant::DmLrn, SizeTier::T0).with_seed(5)).unwrap();
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let name = model.params().entry(id).name.clone();
        if name.contains("gamma") || name.contains("beta") {
            for v in model.params_mut().tensor_mut(id).data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let samples = [scene(1), scene(2)];
    let batch: Vec<&RgbdSample> = samples.iter().collect();
    let targets: Vec<&DepthMap> = samples.iter().map(|s| s.gt.as_ref().unwrap()).collect();

    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, &batch, StatsMode::Batch).unwrap();
    let pred = g.value(out);
    let (_, dl) = batch_loss_and_grad(LossKind::PairwiseLogL1, pred.data(), &targets).unwrap();
    let seed = Tensor::from_vec(pred.shape(), dl).unwrap();
    let grads = g.backward(out, seed, model.params().len()).unwrap();

    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut informative = 0;
    for (id, j) in sample_params(model.params(), 20, &mut rng) {
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
        let original = model.params().tensor(id).data()[j];
        model.params_mut().tensor_mut(id).data_mut()[j] = original + h;
        let up = model_loss(&model, &batch, &targets);
        model.params_mut().tensor_mut(id).data_mut()[j] = original - h;
        let down = model_loss(&model, &batch, &targets);
        model.params_mut().tensor_mut(id).data_mut()[j] = original;
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic, numeric);
        worst = worst.max(e);
        if analytic.abs().max(numeric.abs()) >= ZERO_FLOOR {
            informative += 1;
        }
        assert!(e < 1e-3, "{}[{j}]: {analytic} vs {numeric} ({e})", model.params().entry(id).name);
    }
    eprintln!("worst relative error {worst:.2e} over {informative} nonzero gradients");
    assert!(informative >= 10, "only {informative} sampled gradients are nonzero");
}
