use hipinn_cli::{expand, parse_config, ConfigError, ExperimentConfig};
use proptest::prelude::*;

const BASE: &str = r#"
name = "base"
[problem]
name = "poisson2d"
[samples]
interior = 400
boundary = 400
[[schedule]]
[[schedule.level]]
iterations = 1000
network = { kind = "fourier", sigma = [1.0], extractor = [200, 200, 200] }
"#;

fn violations(text: &str) -> Vec<(String, String)> {
    match parse_config(text) {
        Err(ConfigError::Invalid(v)) => v.into_iter().map(|v| (v.path, v.message)).collect(),
        other => panic!("expected violations, got {other:?}"),
    }
}

#[test]
fn defaults_are_filled_in() {
    let c = parse_config(BASE).unwrap();
    assert_eq!(c.seed, 0);
    assert_eq!(c.checkpoint_stride, 100);
    assert!(!c.resample);
    assert_eq!(c.reference.grid, 201);
    assert_eq!(c.reference.compare_points(), 201);
    assert_eq!(c.optimizer.lr, 1e-3);
    let n = &c.schedule[0].level[0].network;
    assert_eq!(n.head, 200);
    assert!(n.output_bias);
    assert_eq!(c.sweep.repeats, 1);
}

#[test]
fn negative_sigma_is_reported_with_its_path() {
    let text = BASE.replace("sigma = [1.0]", "sigma = [-1.0]");
    let v = violations(&text);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].0, "schedule[0].level[0].network.sigma[0]");
    assert!(v[0].1.contains("-1"));
}

#[test]
fn unknown_keys_are_reported_with_their_path() {
    let text = BASE.replace("interior = 400", "interior = 400\ninterio = 3");
    let v = violations(&text);
    assert_eq!(v, vec![("samples.interio".to_string(), "unknown key".to_string())]);
}

#[test]
fn all_violations_are_collected() {
    let text = BASE
        .replace("sigma = [1.0]", "sigma = [0.0, 2.0, -3.0]")
        .replace("iterations = 1000", "iterations = 0")
        .replace("poisson2d", "poisson9d")
        .replace("name = \"base\"", "name = \"base\"\ncolour = 1");
    let paths: Vec<String> = violations(&text).into_iter().map(|v| v.0).collect();
    for p in [
        "colour",
        "problem.name",
        "schedule[0].level[0].iterations",
        "schedule[0].level[0].network.sigma[0]",
        "schedule[0].level[0].network.sigma[2]",
    ] {
        assert!(paths.iter().any(|q| q == p), "missing {p} in {paths:?}");
    }
}

#[test]
fn wrong_types_are_syntax_errors() {
    let text = BASE.replace("interior = 400", "interior = \"many\"");
    assert!(matches!(parse_config(&text), Err(ConfigError::Syntax(_))));
}

#[test]
fn network_fields_must_match_the_kind() {
    let text = BASE.replace(
        "network = { kind = \"fourier\", sigma = [1.0], extractor = [200, 200, 200] }",
        "network = { kind = \"mlp\", sigma = [1.0] }",
    );
    let paths: Vec<String> = violations(&text).into_iter().map(|v| v.0).collect();
    assert!(paths.contains(&"schedule[0].level[0].network.hidden".to_string()));
    assert!(paths.contains(&"schedule[0].level[0].network.sigma".to_string()));
}

#[test]
fn reference_grids_must_nest() {
    let text = format!("{BASE}\n[reference]\ngrid = 101\ncompare = 30\nsolver = \"fd\"\n");
    let v = violations(&text);
    assert_eq!(v[0].0, "reference.compare");
}

#[test]
fn boundary_group_counts_must_match_the_problem() {
    let text = BASE.replace("boundary = 400", "boundary = [100, 100]");
    let v = violations(&text);
    assert_eq!(v[0].0, "samples.boundary");
}

#[test]
fn transition_must_leave_room_for_the_last_level() {
    let text = format!(
        "{BASE}[[schedule.level]]\niterations = 500\nnetwork = {{ kind = \"fourier\", sigma = [5.0], extractor = [200, 200, 200] }}\n[sweep]\ntransition = [200, 1500]\n"
    );
    let v = violations(&text);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].0, "sweep.transition[1]");
}

const REPLICA: &str = include_str!("../../../configs/poisson_hierarchical.toml");

#[test]
fn replica_config_expands_to_one_hierarchical_run() {
    let c = parse_config(REPLICA).unwrap();
    let plans = expand(&c).unwrap();
    assert_eq!(plans.len(), 1);
    let s = &plans[0].schedule;
    assert_eq!(s.levels.len(), 2);
    assert_eq!(s.levels[0].iterations, 60000);
    assert_eq!(s.total_iterations(), 200000);
}

fn two_schedules() -> String {
    format!(
        "{BASE}[[schedule]]\nlabel = \"hier\"\n[[schedule.level]]\niterations = 600\nnetwork = {{ kind = \"fourier\", sigma = [1.0], extractor = [200, 200, 200] }}\n[[schedule.level]]\niterations = 400\nnetwork = {{ kind = \"fourier\", sigma = [5.0], extractor = [200, 200, 200] }}\n"
    )
}

#[test]
fn transition_axis_only_multiplies_multi_level_schedules() {
    let text = format!("{}[sweep]\ntransition = [100, 200, 300]\n", two_schedules());
    let plans = expand(&parse_config(&text).unwrap()).unwrap();
    assert_eq!(plans.len(), 4);
    assert_eq!(plans[0].id, "000-schedule0");
    assert_eq!(plans[0].transition, None);
    for (p, t) in plans[1..].iter().zip([100, 200, 300]) {
        assert_eq!(p.transition, Some(t));
        assert_eq!(p.schedule.levels[0].iterations, t);
        assert_eq!(p.schedule.total_iterations(), 1000);
        assert_eq!(p.id, format!("{:03}-hier-t{t}", p.index));
    }
}

#[test]
fn repeats_pair_seeds_across_variants() {
    let text = format!("{}[sweep]\nsigma = [[1.0], [2.0]]\nrepeats = 2\n", two_schedules());
    let plans = expand(&parse_config(&text).unwrap()).unwrap();
    assert_eq!(plans.len(), 8);
    for p in &plans {
        let same: Vec<_> = plans.iter().filter(|q| q.repeat == p.repeat).collect();
        assert!(same.iter().all(|q| q.seed == p.seed));
    }
    assert_ne!(plans[0].seed, plans[1].seed);
    let ids: std::collections::BTreeSet<_> = plans.iter().map(|p| p.id.clone()).collect();
    assert_eq!(ids.len(), plans.len());
}

#[test]
fn hashes_ignore_formatting_and_spelled_out_defaults() {
    let a = expand(&parse_config(BASE).unwrap()).unwrap();
    let reformatted = BASE
        .replace("interior = 400\nboundary = 400", "boundary = 400\n  interior   =   400  # points")
        .replace(
            "network = { kind = \"fourier\", sigma = [1.0], extractor = [200, 200, 200] }",
            "[schedule.level.network]\nextractor = [200,200,200]\nkind = \"fourier\"\nsigma = [1.0]\nhead = 200\noutput_bias = true",
        );
    let explicit = format!("seed = 0\ncheckpoint_stride = 100\n{reformatted}\n[reference]\ngrid = 201\nsolver = \"auto\"\n");
    let b = expand(&parse_config(&explicit).unwrap()).unwrap();
    assert_eq!(a[0].config_hash, b[0].config_hash);
    let changed = expand(&parse_config(&BASE.replace("400\n[[", "401\n[[")).unwrap()).unwrap();
    assert_ne!(a[0].config_hash, changed[0].config_hash);
    let reseeded = expand(&parse_config(&format!("seed = 7\n{BASE}")).unwrap()).unwrap();
    assert_ne!(a[0].config_hash, reseeded[0].config_hash);
}

#[test]
fn example_configs_are_valid() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c: ExperimentConfig = hipinn_cli::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!expand(&c).unwrap().is_empty());
            n += 1;
        }
    }
    assert!(n >= 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_cardinality_is_the_axis_product(
        n_sigma in 0usize..4,
        n_trans in 0usize..4,
        n_hidden in 0usize..3,
        repeats in 1usize..4,
    ) {
        let mut sweep = format!("[sweep]\nrepeats = {repeats}\n");
        if n_sigma > 0 {
            let s: Vec<String> = (1..=n_sigma).map(|i| format!("[{i}.0]")).collect();
            sweep += &format!("sigma = [{}]\n", s.join(", "));
        }
        if n_trans > 0 {
            let t: Vec<String> = (1..=n_trans).map(|i| (100 * i).to_string()).collect();
            sweep += &format!("transition = [{}]\n", t.join(", "));
        }
        if n_hidden > 0 {
            let h: Vec<String> = (1..=n_hidden).map(|i| format!("[{}]", 8 * i)).collect();
            sweep += &format!("hidden = [{}]\n", h.join(", "));
        }
        let plans = expand(&parse_config(&format!("{}{sweep}", two_schedules())).unwrap()).unwrap();
        let s = n_sigma.max(1);
        let h = n_hidden.max(1);
        let expected = s * h * repeats + s * n_trans.max(1) * h * repeats;
        prop_assert_eq!(plans.len(), expected);
        for (i, p) in plans.iter().enumerate() {
            prop_assert_eq!(p.index, i);
            prop_assert_eq!(p.schedule.total_iterations(), 1000);
        }
    }
}
