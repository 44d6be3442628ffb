use ndarray::{s, Array1, Array2, Array4};
use proptest::prelude::*;

use super::mlp::NormStats;
use super::pattern::{design_rows, N_FEATURES};
use super::*;
use crate::grid::{build_grid, weighted_mse};
use crate::split::baseline_split;
use crate::synth::{build_dataset, GenerationConfig};

const N_LAT: usize = 4;
const N_LON: usize = 3;

fn noise(shape: (usize, usize, usize, usize), rng: &mut Pcg32, scale: f64, offset: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || offset + scale * rng.next_normal())
}

fn toy_chunks(n: usize, seed: u64) -> Vec<(Array4<f64>, Array4<f64>)> {
    let mut rng = Pcg32::from_seed(seed);
    (0..n)
        .map(|_| {
            (
                noise((12, 4, N_LAT, N_LON), &mut rng, 1.0, 2.0),
                noise((12, 2, N_LAT, N_LON), &mut rng, 3.0, 280.0),
            )
        })
        .collect()
}

fn as_views(chunks: &[(Array4<f64>, Array4<f64>)]) -> Vec<ChunkView<'_>> {
    chunks
        .iter()
        .map(|(i, o)| ChunkView {
            inputs: i.view(),
            outputs: o.view(),
        })
        .collect()
}

fn toy_weights() -> LatWeights {
    lat_weights(&build_grid(N_LAT as i64, N_LON as i64).unwrap())
}

fn toy_net(chunks: &[ChunkView<'_>], hidden: usize, seed: u64) -> MlpParams {
    let stats = norm_stats(chunks).unwrap();
    let mut rng = Pcg32::from_seed(seed);
    let mut p = MlpParams::init(stats, N_LAT, N_LON, hidden, &mut rng);
    // Non-zero biases so their gradients are exercised too.
    p.b1.mapv_inplace(|_| 0.3 * rng.next_normal());
    p.b2.mapv_inplace(|_| 0.3 * rng.next_normal());
    p
}

fn flat_params(p: &MlpParams) -> Vec<f64> {
    p.w1.iter().chain(&p.b1).chain(&p.w2).chain(&p.b2).copied().collect()
}

fn flat_grad(g: &MlpGradient) -> Vec<f64> {
    g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2).copied().collect()
}

fn with_flat(p: &MlpParams, idx: usize, delta: f64) -> MlpParams {
    let mut q = p.clone();
    let mut i = idx;
    macro_rules! bump {
        ($t:expr) => {
            if i < $t.len() {
                *$t.iter_mut().nth(i).unwrap() += delta;
                return q;
            }
            #[allow(unused_assignments)]
            {
                i -= $t.len();
            }
        };
    }
    bump!(q.w1);
    bump!(q.b1);
    bump!(q.w2);
    bump!(q.b2);
    panic!("index {idx} out of range");
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let data = toy_chunks(2, 11);
    let views = as_views(&data);
    let weights = toy_weights();
    let net = toy_net(&views, 5, 3);
    let (_, grad) = loss_and_gradient(&net, &views, &weights).unwrap();
    let analytic = flat_grad(&grad);
    let n_params = flat_params(&net).len();
    assert_eq!(analytic.len(), n_params);

    let mut rng = Pcg32::from_seed(99);
    let h = 1e-5;
    for _ in 0..20 {
        let idx = rng.below(n_params as u32) as usize;
        let up = loss_and_gradient(&with_flat(&net, idx, h), &views, &weights).unwrap().0;
        let dn = loss_and_gradient(&with_flat(&net, idx, -h), &views, &weights).unwrap().0;
        let numeric = (up - dn) / (2.0 * h);
        let rel = (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs()).max(1e-6);
        assert!(rel < 1e-4, "param {idx}: analytic {} numeric {numeric}", analytic[idx]);
    }
}

#[test]
fn mlp_loss_is_weighted_mse_of_predictions() {
    let data = toy_chunks(3, 5);
    let views = as_views(&data);
    let weights = toy_weights();
    let net = toy_net(&views, 6, 8);
    let (loss, _) = loss_and_gradient(&net, &views, &weights).unwrap();
    let mut expected = 0.0;
    for v in &views {
        let pred = net.predict(v.inputs).unwrap();
        expected += weighted_mse(&pred, &v.outputs, &weights).unwrap();
    }
    expected /= views.len() as f64;
    assert!((loss - expected).abs() <= 1e-10 * expected.abs().max(1.0));
}

#[test]
fn mlp_gradient_vanishes_at_perfect_fit() {
    let data = toy_chunks(2, 21);
    let weights = toy_weights();
    let net = toy_net(&as_views(&data), 4, 2);
    let perfect: Vec<_> = data
        .iter()
        .map(|(i, _)| (i.clone(), net.predict(i.view()).unwrap()))
        .collect();
    let (loss, grad) = loss_and_gradient(&net, &as_views(&perfect), &weights).unwrap();
    assert!(loss < 1e-20);
    assert!(grad.max_abs() < 1e-12);
}

#[test]
fn mlp_rejects_wrong_grid() {
    let data = toy_chunks(1, 1);
    let net = toy_net(&as_views(&data), 3, 1);
    let bad = Array4::<f64>::zeros((12, 4, N_LAT + 1, N_LON));
    assert!(matches!(net.predict(bad.view()), Err(EmulatorError::Shape(_))));
}

#[test]
fn norm_stats_shapes() {
    let data = toy_chunks(4, 7);
    let NormStats {
        input_mean,
        input_std,
        output_mean,
        output_std,
    } = norm_stats(&as_views(&data)).unwrap();
    assert_eq!(input_mean.len(), 4);
    assert_eq!(input_std.len(), 4);
    assert_eq!(output_mean.len(), 2 * N_LAT * N_LON);
    assert_eq!(output_std.len(), 2);
    assert!(input_std.iter().chain(&output_std).all(|s| *s > 0.0));
}

#[test]
fn climatology_is_the_training_mean() {
    let data = toy_chunks(5, 4);
    let views = as_views(&data);
    let model = fit_climatology(&views).unwrap();
    let mut oracle = Array4::<f64>::zeros((12, 2, N_LAT, N_LON));
    for (_, o) in &data {
        oracle += o;
    }
    oracle /= data.len() as f64;
    let pred = model.predict(data[0].0.view()).unwrap();
    assert!(pred.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
    let other = Array4::<f64>::from_elem((12, 4, N_LAT, N_LON), -7.0);
    assert_eq!(model.predict(other.view()).unwrap(), pred);
}

#[test]
fn climatology_ignores_chunk_order() {
    let data = toy_chunks(6, 9);
    let mut views = as_views(&data);
    let a = fit_climatology(&views).unwrap();
    views.reverse();
    let b = fit_climatology(&views).unwrap();
    assert!(a.mean.iter().zip(&b.mean).all(|(x, y)| (x - y).abs() < 1e-12));
    assert_eq!(fit_climatology(&[]), Err(EmulatorError::EmptyTraining));
}

/// Outputs that are an exact linear function of the design features.
fn planted_linear(n: usize, seed: u64, weights: &LatWeights) -> (Vec<(Array4<f64>, Array4<f64>)>, Array2<f64>) {
    let mut rng = Pcg32::from_seed(seed);
    let cells = N_LAT * N_LON;
    let beta = Array2::from_shape_simple_fn((2 * cells, N_FEATURES), || rng.next_normal());
    let chunks = (0..n)
        .map(|_| {
            let inputs = noise((12, 4, N_LAT, N_LON), &mut rng, 1.0, 1.0);
            let x = design_rows(inputs.view(), weights);
            let y = x.dot(&beta.t()).into_shape_with_order((12, 2, N_LAT, N_LON)).unwrap();
            (inputs, y)
        })
        .collect();
    (chunks, beta)
}

#[test]
fn pattern_scaling_recovers_planted_coefficients() {
    let weights = toy_weights();
    let (data, beta) = planted_linear(6, 17, &weights);
    let model = fit_pattern_scaling(&as_views(&data), &weights, 0.0).unwrap();
    let got = model
        .coefficients
        .to_shape((2 * N_LAT * N_LON, N_FEATURES))
        .unwrap()
        .into_owned();
    let err = (&got - &beta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-8, "max coefficient error {err}");
    for (i, o) in &data {
        let pred = model.predict(i.view()).unwrap();
        assert!(pred.iter().zip(o).all(|(a, b)| (a - b).abs() < 1e-8));
    }
}

#[test]
fn pattern_scaling_zero_target_gives_zero_model() {
    let weights = toy_weights();
    let mut data = toy_chunks(3, 2);
    for (_, o) in &mut data {
        o.fill(0.0);
    }
    let model = fit_pattern_scaling(&as_views(&data), &weights, 0.0).unwrap();
    assert!(model.coefficients.iter().all(|c| c.abs() < 1e-12));
}

#[test]
fn pattern_scaling_rank_deficiency() {
    let weights = toy_weights();
    let mut data = toy_chunks(3, 6);
    for (i, _) in &mut data {
        let co2 = i.slice(s![.., 0, .., ..]).to_owned();
        i.slice_mut(s![.., 1, .., ..]).assign(&co2);
    }
    let err = fit_pattern_scaling(&as_views(&data), &weights, 0.0).unwrap_err();
    assert!(matches!(err, EmulatorError::Singular { .. }), "{err:?}");
    assert!(err.to_string().contains("ridge"));
    fit_pattern_scaling(&as_views(&data), &weights, 1e-3).unwrap();
}

#[test]
fn pattern_scaling_needs_enough_rows() {
    let weights = toy_weights();
    let data = toy_chunks(1, 3);
    assert_eq!(
        fit_pattern_scaling(&as_views(&data), &weights, 0.0).unwrap_err(),
        EmulatorError::TooFewRows { rows: 12, needed: 16 }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The fitted coefficients satisfy `X^T (X beta - y) + lambda beta = 0`.
    #[test]
    fn pattern_scaling_solves_ridge_normal_equations(seed in 0u64..1000, lambda in 0.0f64..5.0) {
        let weights = toy_weights();
        let data = toy_chunks(3, seed);
        let views = as_views(&data);
        let model = fit_pattern_scaling(&views, &weights, lambda).unwrap();
        let x = ndarray::concatenate(
            Axis(0),
            &views.iter().map(|v| design_rows(v.inputs, &weights)).collect::<Vec<_>>().iter().map(|a| a.view()).collect::<Vec<_>>(),
        ).unwrap();
        let cells = N_LAT * N_LON;
        for col in [0, cells - 1, cells + 2] {
            let beta: Array1<f64> = model.coefficients.slice(s![col / cells, col % cells, ..]).to_owned();
            let y: Array1<f64> = views
                .iter()
                .flat_map(|v| v.outputs.slice(s![.., col / cells, (col % cells) / N_LON, col % N_LON]).to_vec())
                .collect();
            let resid = x.t().dot(&(x.dot(&beta) - &y)) + lambda * &beta;
            let scale = x.t().dot(&y).iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(resid.iter().all(|r| r.abs() < 1e-8 * scale), "{resid:?}");
        }
    }
}

fn small_world() -> (Dataset, SplitPlan) {
    let ds = build_dataset(&GenerationConfig::small(), 5).unwrap();
    let plan = baseline_split(&ds, 5).unwrap();
    (ds, plan)
}

#[test]
fn mlp_training_is_deterministic_and_learns() {
    let (ds, plan) = small_world();
    let cfg = TrainConfig {
        epochs: 4,
        hidden_width: 16,
        seed: 12,
        ..TrainConfig::default()
    };
    let a = train(EmulatorKind::Mlp, &plan, &ds, "oracle_a", &cfg).unwrap();
    let b = train(EmulatorKind::Mlp, &plan, &ds, "oracle_a", &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 4);
    let first = a.history.first().unwrap().train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(a.history.iter().all(|r| r.val_loss.is_some()));

    let c = train(EmulatorKind::Mlp, &plan, &ds, "oracle_a", &TrainConfig { seed: 13, ..cfg }).unwrap();
    assert_ne!(a.emulator, c.emulator);
}

#[test]
fn closed_form_training_and_model_file_roundtrip() {
    let (ds, plan) = small_world();
    let cfg = TrainConfig::default();
    for kind in [EmulatorKind::Climatology, EmulatorKind::PatternScaling] {
        let out = train(kind, &plan, &ds, "oracle_b", &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.emulator.kind(), kind);
        let file = ModelFile {
            kind,
            grid: ds.grid.clone(),
            oracle_id: "oracle_b".into(),
            plan: plan.name.clone(),
            train_config: cfg.clone(),
            selected_epoch: out.selected_epoch,
            history: out.history.clone(),
            model: out.emulator.clone(),
        };
        let json = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        let key = plan.keys_for(Part::Test, "oracle_b")[0].clone();
        let view = ds.chunk(&key).unwrap();
        assert_eq!(back.model.predict(view.inputs).unwrap(), out.emulator.predict(view.inputs).unwrap());
    }
}

#[test]
fn unknown_oracle_has_no_training_data() {
    let (ds, plan) = small_world();
    let err = train(EmulatorKind::Climatology, &plan, &ds, "nobody", &TrainConfig::default()).unwrap_err();
    assert_eq!(err, EmulatorError::EmptyTraining);
}

#[test]
fn kind_names_roundtrip() {
    for k in EmulatorKind::ALL {
        assert_eq!(k.name().parse::<EmulatorKind>().unwrap(), k);
        assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
    }
    assert!("gp".parse::<EmulatorKind>().is_err());
}
