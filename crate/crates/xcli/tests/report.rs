use std::collections::BTreeMap;

use hipinn_cli::{report, RunStatus, RunSummary};
use proptest::prelude::*;

fn summary(id: &str, err: Option<f64>) -> RunSummary {
    RunSummary {
        run_id: id.into(),
        label: "x".into(),
        config_hash: "0".repeat(64),
        seed: 1,
        repeat: 0,
        sigma: None,
        transition: None,
        hidden: None,
        status: if err.is_some() { RunStatus::Completed } else { RunStatus::Failed },
        message: err.is_none().then(|| "boom".to_string()),
        iterations: 10,
        final_rel_l2_error: err,
        final_losses: BTreeMap::from([("residual".to_string(), 1.0)]),
        wall_time_s: 0.5,
        files: vec![],
    }
}

#[test]
fn single_row_is_best() {
    let r = report(&[summary("a", Some(0.3))]);
    assert_eq!(r.best, Some(0));
    let text = r.to_text();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with('*'));
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().next().unwrap().contains("loss_residual"));
}

#[test]
fn failed_runs_sort_last_and_are_never_best() {
    let r = report(&[summary("c", None), summary("b", Some(0.2)), summary("a", Some(0.1))]);
    let ids: Vec<_> = r.rows.iter().map(|s| s.run_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(r.best, Some(0));
    assert!(r.to_text().contains("boom"));
    assert_eq!(report(&[summary("z", None)]).best, None);
    assert_eq!(report(&[]).rows.len(), 0);
}

proptest! {
    #[test]
    fn sorted_by_error_then_id(errs in prop::collection::vec(prop::option::of(0.0f64..10.0), 0..20)) {
        let runs: Vec<_> = errs.iter().enumerate().map(|(i, e)| summary(&format!("{:02}", 19 - i), *e)).collect();
        let r = report(&runs);
        prop_assert_eq!(r.rows.len(), runs.len());
        for w in r.rows.windows(2) {
            match (w[0].final_rel_l2_error, w[1].final_rel_l2_error) {
                (Some(a), Some(b)) => prop_assert!(a < b || (a == b && w[0].run_id < w[1].run_id)),
                (None, Some(_)) => prop_assert!(false, "failed run before a completed one"),
                (None, None) => prop_assert!(w[0].run_id < w[1].run_id),
                (Some(_), None) => {}
            }
        }
        let any_ok = errs.iter().any(|e| e.is_some());
        prop_assert_eq!(r.best, any_ok.then_some(0));
        let mut ids: Vec<_> = r.rows.iter().map(|s| s.run_id.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), runs.len());
    }
}
