use super::*;
use crate::grad::{evaluate, input_derivatives, per_sample_gradient_norms};
use crate::nets::{FourierNetSpec, MlpSpec};
use crate::problems::{manufactured_by_id, nonlinear_poisson_2d, poisson_2d, SampleCounts};
use proptest::prelude::*;

fn mlp(input: usize, widths: &[usize]) -> NetworkSpec {
    NetworkSpec::Mlp(MlpSpec::new(input, widths.to_vec()))
}

fn level(spec: &NetworkSpec, seed: u64) -> (Network, ParameterStore) {
    init_network(spec, seed).unwrap()
}

fn two_level(problem_dim: usize, seed: u64) -> CompositeModel {
    let spec = mlp(problem_dim, &[10, 10]);
    let mut c = CompositeModel::new();
    let (n1, p1) = level(&spec, seed);
    c.push_level(n1, p1);
    let (n2, p2) = level(&spec, seed + 1);
    c.push_level(n2, p2);
    c
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn composite_prediction_is_the_sum_of_levels() {
    let c = two_level(2, 3);
    let pts = Array2::from_shape_vec((3, 2), vec![0.1, 0.2, 0.5, 0.9, 0.7, 0.3]).unwrap();
    let pred = c.predict(pts.view()).unwrap();
    for (row, p) in pts.rows().into_iter().zip(pred) {
        let x = row.to_vec();
        let sum: f64 = c.levels().iter().map(|l| evaluate(l.network.expr(), &x, &l.params).unwrap()).sum();
        assert!((p - sum).abs() <= 1e-15 * sum.abs().max(1.0));
    }
}

#[test]
fn pushing_a_level_freezes_the_previous_ones() {
    let mut c = two_level(2, 0);
    assert!(c.levels()[0].params.is_frozen());
    assert!(!c.levels()[1].params.is_frozen());
    assert_eq!(c.active_index(), Some(1));
    assert_eq!(c.frozen_terms().len(), 1);
    c.activate(0);
    assert!(!c.levels()[0].params.is_frozen());
    assert!(c.levels()[1].params.is_frozen());
    c.freeze_all();
    assert!(c.active_params_mut().is_err());
}

#[test]
fn zero_network_interior_loss_is_mean_source_squared() {
    let p = poisson_2d();
    let (net, mut params) = level(&mlp(2, &[8]), 1);
    params.values_mut().unwrap().fill(0.0);
    let mut c = CompositeModel::new();
    c.push_level(net, params);
    let s = p.sample(&SampleCounts::new(40, 40), 2).unwrap();
    let lambda = 2.5;
    let loss = assemble_level_loss(&p, &c, &s, &LossWeights(vec![lambda, 1.0])).unwrap();
    let active = c.active().unwrap();
    let eval = loss.evaluate(&active.network, &active.params).unwrap();
    let f = p.source.eval(s.interior.view()).unwrap();
    let expected = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
    assert!(rel(eval.components[0], expected) < 1e-14);
    let gb: Vec<f64> = p
        .boundary
        .iter()
        .zip(&s.boundary)
        .flat_map(|(seg, pts)| seg.data.eval(pts.view()).unwrap())
        .collect();
    let expected_b = gb.iter().map(|v| v * v).sum::<f64>() / gb.len() as f64;
    assert!(rel(eval.components[1], expected_b) < 1e-14);
    assert!(rel(eval.total, lambda * expected + expected_b) < 1e-14);
}

#[test]
fn invalid_inputs_are_refused() {
    let p = poisson_2d();
    let c = two_level(2, 0);
    let s = p.sample(&SampleCounts::new(10, 8), 0).unwrap();
    assert!(matches!(
        assemble_level_loss(&p, &c, &s, &LossWeights(vec![1.0, 0.0])),
        Err(TrainError::InvalidWeights(_))
    ));
    assert!(assemble_level_loss(&p, &c, &s, &LossWeights(vec![1.0])).is_err());
    let empty = p.sample(&SampleCounts::new(0, 8), 0).unwrap();
    assert!(matches!(
        assemble_level_loss(&p, &c, &empty, &LossWeights::ones(2)),
        Err(TrainError::EmptySamples(_))
    ));
    let mut frozen = c.clone();
    frozen.freeze_all();
    assert!(matches!(
        assemble_level_loss(&p, &frozen, &s, &LossWeights::ones(2)),
        Err(TrainError::NoActiveLevel)
    ));
}

fn single_level(c: &CompositeModel) -> CompositeModel {
    let active = c.active().unwrap();
    let mut single = CompositeModel::new();
    single.push_level(active.network.clone(), (*active.params).clone());
    single
}

#[test]
fn two_level_linear_loss_equals_shifted_problem_loss() {
    for problem in [poisson_2d(), manufactured_by_id("advdiff_smooth").unwrap()] {
        let c = two_level(2, 7);
        let s = problem.sample(&SampleCounts::new(60, 40), 3).unwrap();
        let w = LossWeights(vec![1.5, 0.7, 2.0][..problem.component_names().len()].to_vec());
        let direct = assemble_level_loss(&problem, &c, &s, &w).unwrap();
        let mut only_first = CompositeModel::new();
        let l0 = &c.levels()[0];
        only_first.push_level(l0.network.clone(), (*l0.params).clone());
        let shifted = shifted_problem(&problem, &only_first).unwrap();
        let single = single_level(&c);
        let via_shift = assemble_level_loss(&shifted, &single, &s, &w).unwrap();
        let a = c.active().unwrap();
        let (e1, e2) = (
            direct.evaluate(&a.network, &a.params).unwrap(),
            via_shift.evaluate(&a.network, &a.params).unwrap(),
        );
        assert!(rel(e1.total, e2.total) < 1e-12, "{} vs {}", e1.total, e2.total);
        for (g1, g2) in e1.gradient.iter().zip(&e2.gradient) {
            assert!((g1 - g2).abs() <= 1e-10 * g1.abs().max(1e-6));
        }
    }
}

#[test]
fn shifting_by_nothing_changes_nothing() {
    let p = poisson_2d();
    let shifted = shifted_problem(&p, &CompositeModel::new()).unwrap();
    let s = p.sample(&SampleCounts::new(20, 20), 1).unwrap();
    assert_eq!(p.source.eval(s.interior.view()).unwrap(), shifted.source.eval(s.interior.view()).unwrap());
}

#[test]
fn shifting_by_a_zero_network_changes_nothing() {
    let p = poisson_2d();
    let (net, mut params) = level(&mlp(2, &[6]), 0);
    params.values_mut().unwrap().fill(0.0);
    let mut c = CompositeModel::new();
    c.push_level(net, params);
    let shifted = shifted_problem(&p, &c).unwrap();
    let s = p.sample(&SampleCounts::new(20, 20), 1).unwrap();
    assert_eq!(p.source.eval(s.interior.view()).unwrap(), shifted.source.eval(s.interior.view()).unwrap());
    for ((a, b), pts) in p.boundary.iter().zip(&shifted.boundary).zip(&s.boundary) {
        assert_eq!(a.data.eval(pts.view()).unwrap(), b.data.eval(pts.view()).unwrap());
    }
}

#[test]
fn shifting_by_the_exact_solution_leaves_nothing() {
    let p = poisson_2d();
    let terms = vec![Term::closed(p.exact.clone().unwrap())];
    let shifted = shift_by_terms(&p, &terms).unwrap();
    let s = p.sample(&SampleCounts::new(50, 40), 8).unwrap();
    assert!(shifted.source.eval(s.interior.view()).unwrap().iter().all(|v| v.abs() < 1e-6));
    for (seg, pts) in shifted.boundary.iter().zip(&s.boundary) {
        assert!(seg.data.eval(pts.view()).unwrap().iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn nonlinear_problems_cannot_be_shifted() {
    let c = two_level(2, 0);
    assert!(matches!(shifted_problem(&nonlinear_poisson_2d(), &c), Err(TrainError::Nonlinear(_))));
}

#[test]
fn nonlinear_two_level_residual_matches_pointwise_formula() {
    let p = nonlinear_poisson_2d();
    let c = two_level(2, 11);
    let s = p.sample(&SampleCounts::new(10, 8), 4).unwrap();
    let loss = assemble_level_loss(&p, &c, &s, &LossWeights::ones(2)).unwrap();
    let a = c.active().unwrap();
    let mut tape = Tape::new();
    let r = loss.residuals(&mut tape, &a.network, &a.params, PRIMARY).unwrap();
    let interior = tape.value(r[0]).column(0).to_vec();
    let l1 = &c.levels()[0];
    for (row, got) in s.interior.rows().into_iter().zip(interior) {
        let x = row.to_vec();
        let b1 = input_derivatives(l1.network.expr(), &x, &l1.params).unwrap();
        let b2 = input_derivatives(a.network.expr(), &x, &a.params).unwrap();
        let u = b1.value + b2.value;
        let gx = b1.grad_x[0] + b2.grad_x[0];
        let gy = b1.grad_x[1] + b2.grad_x[1];
        let lap = b1.laplacian + b2.laplacian;
        let f = p.source.eval_at(&x).unwrap();
        let expected = -(1.0 + u * u) * lap - 2.0 * u * (gx * gx + gy * gy) - f;
        assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut p = ParameterStore::from_values(vec![0.5, -1.0, 2.0]);
    let before = p.values().to_vec();
    let mut st = AdamState::new(3);
    adam_step(&mut st, &AdamConfig::default(), &mut p, &[0.0; 3]).unwrap();
    assert_eq!(p.values(), &before[..]);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_by_hand() {
    let cfg = AdamConfig {
        lr: 0.01,
        eps: 1e-3,
        ..AdamConfig::default()
    };
    let g = [0.2, -3.0, 1e-4];
    let mut p = ParameterStore::from_values(vec![1.0, 1.0, 1.0]);
    let mut st = AdamState::new(3);
    adam_step(&mut st, &cfg, &mut p, &g).unwrap();
    let corr = (1.0 - cfg.beta2).sqrt();
    for (v, gi) in p.values().iter().zip(g) {
        let expected = 1.0 - cfg.lr * gi / (gi.abs() + cfg.eps / corr);
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
    }
}

#[test]
fn adam_refuses_frozen_stores_and_bad_lengths() {
    let mut p = ParameterStore::from_values(vec![1.0, 2.0]);
    let mut st = AdamState::new(2);
    assert!(matches!(
        adam_step(&mut st, &AdamConfig::default(), &mut p, &[1.0]),
        Err(TrainError::GradientLength { .. })
    ));
    p.freeze();
    assert_eq!(adam_step(&mut st, &AdamConfig::default(), &mut p, &[1.0, 1.0]), Err(TrainError::FrozenStore));
    assert_eq!(p.values(), &[1.0, 2.0]);
}

#[test]
fn decayed_rate() {
    let cfg = AdamConfig {
        decay_rate: Some(0.5),
        decay_steps: 100,
        ..AdamConfig::default()
    };
    assert_eq!(cfg.rate_at(0), 1e-3);
    assert!((cfg.rate_at(200) - 0.25e-3).abs() < 1e-18);
    assert!(cfg.validate().is_ok());
    assert!(AdamConfig::with_lr(-1.0).validate().is_err());
}

#[test]
fn balanced_weight_examples() {
    let prev = LossWeights::ones(2);
    assert_eq!(balance_weights(&[4.0, 4.0], &prev).0, vec![1.0, 1.0]);
    let w = balance_weights(&[9.0, 1.0], &prev).0;
    assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 9.0).abs() < 1e-14);
    let kept = balance_weights(&[2.0, 0.0, 6.0], &LossWeights(vec![1.0, 7.0, 1.0])).0;
    assert_eq!(kept[1], 7.0);
    assert!((kept[0] - 3.0).abs() < 1e-15 && (kept[2] - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn balanced_weights_equalise_weighted_traces(t in proptest::collection::vec(1e-6f64..1e6, 2..5)) {
        let w = balance_weights(&t, &LossWeights::ones(t.len()));
        let products: Vec<f64> = w.0.iter().zip(&t).map(|(a, b)| a * b).collect();
        for p in &products {
            prop_assert!((p - products[0]).abs() <= 1e-12 * products[0]);
        }
        prop_assert!((w.0.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ntk_traces_match_independent_recomputation() {
    let p = manufactured_by_id("advdiff_smooth").unwrap();
    let c = two_level(2, 5);
    let s = p.sample(&SampleCounts::new(37, 30), 6).unwrap();
    let loss = assemble_level_loss(&p, &c, &s, &LossWeights::ones(3)).unwrap();
    let a = c.active().unwrap();
    let traces = loss.ntk_traces(&a.network, &a.params, 8).unwrap();
    let mut tape = Tape::new();
    let residuals = loss.residuals(&mut tape, &a.network, &a.params, PRIMARY).unwrap();
    for (t, r) in traces.iter().zip(residuals) {
        let direct: f64 = per_sample_gradient_norms(&tape, r, PRIMARY, &a.params).unwrap().iter().sum();
        assert!(rel(*t, direct) < 1e-12, "{t} vs {direct}");
    }
}

#[test]
fn ntk_trace_matches_finite_differences() {
    let p = poisson_2d();
    let (net, params) = level(&mlp(2, &[4]), 2);
    let mut c = CompositeModel::new();
    c.push_level(net.clone(), params.clone());
    let s = p.sample(&SampleCounts::new(5, 4), 1).unwrap();
    let loss = assemble_level_loss(&p, &c, &s, &LossWeights::ones(2)).unwrap();
    let traces = loss.ntk_traces(&net, &params, 2).unwrap();
    let residual_of = |theta: &[f64], k: usize| {
        let store = ParameterStore::from_values(theta.to_vec());
        let mut tape = Tape::new();
        let r = loss.residuals(&mut tape, &net, &store, PRIMARY).unwrap();
        tape.value(r[k]).column(0).to_vec()
    };
    let theta = params.values().to_vec();
    let h = 1e-6;
    for (k, t) in traces.iter().enumerate() {
        let mut fd = vec![0.0; loss.sizes()[k]];
        for j in 0..theta.len() {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[j] += h;
            tm[j] -= h;
            let (rp, rm) = (residual_of(&tp, k), residual_of(&tm, k));
            for i in 0..fd.len() {
                let d = (rp[i] - rm[i]) / (2.0 * h);
                fd[i] += d * d;
            }
        }
        let total: f64 = fd.iter().sum();
        assert!(rel(*t, total) < 1e-5, "component {k}: {t} vs {total}");
    }
}

fn smoke_schedule(iterations: usize, weighting: WeightingConfig) -> HierarchySchedule {
    HierarchySchedule {
        levels: vec![LevelSpec {
            network: mlp(1, &[32, 32]),
            iterations,
            optimizer: AdamConfig::with_lr(1e-3),
            weighting,
        }],
    }
}

fn line_reference(p: &ProblemSpec, n: usize) -> Reference {
    let points = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / (n - 1) as f64);
    let values = p.exact_at(points.view()).unwrap().unwrap();
    Reference { points, values }
}

#[test]
fn one_dimensional_smoke_run_converges() {
    let p = manufactured_by_id("sine1d").unwrap();
    let s = p.sample(&SampleCounts::new(64, 2), 1).unwrap();
    let reference = line_reference(&p, 101);
    let opts = TrainOptions {
        seed: 4,
        checkpoint_stride: 1,
        resample: false,
    };
    let run = train(&p, &smoke_schedule(5000, WeightingConfig::default()), &s, Some(&reference), &opts).unwrap();
    let last = run.trace.last().unwrap();
    assert_eq!(last.iteration, 5000);
    let err = last.rel_l2_error.unwrap();
    assert!(err < 1e-2, "relative error {err}");
    let totals: Vec<f64> = run
        .trace
        .records
        .iter()
        .map(|r| r.losses.iter().zip(&r.weights).map(|(l, w)| l * w).sum())
        .collect();
    let window = |end: usize| {
        let start = end.saturating_sub(1000);
        totals[start..=end].iter().sum::<f64>() / (end - start + 1) as f64
    };
    assert!(window(5000) < window(500));
    let mut iters = run.trace.records.iter().map(|r| r.iteration);
    let mut prev = iters.next().unwrap();
    for i in iters {
        assert!(i > prev);
        prev = i;
    }
}

#[test]
fn weights_change_only_on_update_iterations() {
    let p = manufactured_by_id("sine2d").unwrap();
    let s = p.sample(&SampleCounts::new(30, 20), 1).unwrap();
    let schedule = HierarchySchedule {
        levels: vec![
            LevelSpec {
                network: mlp(2, &[8]),
                iterations: 150,
                optimizer: AdamConfig::default(),
                weighting: WeightingConfig::default(),
            },
            LevelSpec {
                network: mlp(2, &[8]),
                iterations: 180,
                optimizer: AdamConfig::default(),
                weighting: WeightingConfig::default(),
            },
        ],
    };
    let opts = TrainOptions {
        seed: 0,
        checkpoint_stride: 1,
        resample: false,
    };
    let run = train(&p, &schedule, &s, None, &opts).unwrap();
    let recs = &run.trace.records;
    assert_eq!(recs[0].iteration, 0);
    assert_ne!(recs[0].weights, vec![1.0, 1.0]);
    for w in recs.windows(2) {
        if w[1].weights != w[0].weights {
            assert_eq!(w[1].iteration % 100, 0, "weights changed at {}", w[1].iteration);
        }
    }
    assert_eq!(recs.iter().filter(|r| r.level == 1).count(), 181);
}

#[test]
fn frozen_levels_are_bitwise_unchanged() {
    let p = manufactured_by_id("sine2d").unwrap();
    let s = p.sample(&SampleCounts::new(20, 20), 1).unwrap();
    let spec = LevelSpec {
        network: mlp(2, &[6]),
        iterations: 60,
        optimizer: AdamConfig::default(),
        weighting: WeightingConfig::fixed(),
    };
    let one = HierarchySchedule {
        levels: vec![spec.clone()],
    };
    let two = HierarchySchedule {
        levels: vec![spec.clone(), spec],
    };
    let opts = TrainOptions::default();
    let first = train(&p, &one, &s, None, &opts).unwrap();
    let both = train(&p, &two, &s, None, &opts).unwrap();
    let a: Vec<u64> = first.model.levels()[0].params.values().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = both.model.levels()[0].params.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    assert_ne!(
        both.model.levels()[0].params.values(),
        both.model.levels()[1].params.values()
    );
}

#[test]
fn training_is_deterministic() {
    let p = manufactured_by_id("sine2d").unwrap();
    let s = p.sample(&SampleCounts::new(20, 20), 1).unwrap();
    let schedule = HierarchySchedule {
        levels: vec![LevelSpec {
            network: NetworkSpec::Fourier(FourierNetSpec::new(2, &[1.0, 3.0], vec![8, 8], 6)),
            iterations: 120,
            optimizer: AdamConfig::default(),
            weighting: WeightingConfig::default(),
        }],
    };
    let opts = TrainOptions {
        seed: 9,
        checkpoint_stride: 10,
        resample: true,
    };
    let a = train(&p, &schedule, &s, None, &opts).unwrap();
    let b = train(&p, &schedule, &s, None, &opts).unwrap();
    assert_eq!(a.trace, b.trace);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.trace.write_csv(&mut ca).unwrap();
    b.trace.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut p = manufactured_by_id("sine2d").unwrap();
    p.source = crate::problems::Field::Constant(f64::NAN);
    let s = p.sample(&SampleCounts::new(10, 8), 1).unwrap();
    let err = train(&p, &smoke_like(2), &s, None, &TrainOptions::default()).unwrap_err();
    match err {
        TrainError::NonFinite {
            iteration,
            level,
            components,
        } => {
            assert_eq!((iteration, level), (0, 0));
            assert!(components[0].is_nan());
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn smoke_like(dim: usize) -> HierarchySchedule {
    HierarchySchedule {
        levels: vec![LevelSpec {
            network: mlp(dim, &[4]),
            iterations: 5,
            optimizer: AdamConfig::default(),
            weighting: WeightingConfig::fixed(),
        }],
    }
}

#[test]
fn trace_csv_columns() {
    let names = |p: &ProblemSpec| {
        let trace = TrainingTrace {
            component_names: p.component_names(),
            records: vec![],
        };
        trace.header().join(",")
    };
    assert_eq!(
        names(&poisson_2d()),
        "iteration,level,loss_interior,loss_boundary,lambda_interior,lambda_boundary,rel_l2_error"
    );
    assert_eq!(
        names(&crate::problems::advection_diffusion_2d()),
        "iteration,level,loss_interior,loss_neumann,loss_dirichlet,lambda_interior,lambda_neumann,lambda_dirichlet,rel_l2_error"
    );
}

#[test]
fn schedule_validation() {
    let mut s = smoke_like(2);
    assert!(s.validate().is_ok());
    s.levels[0].iterations = 0;
    assert!(s.validate().is_err());
    assert!(HierarchySchedule { levels: vec![] }.validate().is_err());
    let s = HierarchySchedule {
        levels: vec![smoke_like(2).levels[0].clone(), smoke_like(2).levels[0].clone()],
    };
    assert_eq!(s.starts(), vec![0, 5]);
    assert_eq!(s.total_iterations(), 10);
}

#[test]
fn derived_seeds_differ() {
    let seeds: std::collections::HashSet<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
    assert_eq!(seeds.len(), 100);
    assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
}
