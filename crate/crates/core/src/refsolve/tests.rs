use std::f64::consts::PI;

use super::*;
use crate::problems::{manufactured_by_id, ADVDIFF_NU};

fn grid(n: usize) -> Grid2D {
    Grid2D::new(n).unwrap()
}

fn sine(x1: f64, x2: f64) -> f64 {
    (PI * x1).sin() * (PI * x2).sin()
}

#[test]
fn grid_geometry() {
    let g = grid(5);
    assert_eq!(g.h(), 0.25);
    assert!(g.is_boundary(0, 2) && g.is_boundary(2, 4) && !g.is_boundary(2, 2));
    let p = g.points();
    assert_eq!(p.dim(), (25, 2));
    assert_eq!((p[[7, 0]], p[[7, 1]]), (0.5, 0.25));
    assert!(Grid2D::new(2).is_err());
}

#[test]
fn poisson_constant_solution() {
    let g = grid(33);
    let (u, report) = solve_poisson_fd(g, &g.field_from_fn(|_, _| 0.0), &g.field_from_fn(|_, _| 1.0), &SolverOptions::default()).unwrap();
    assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    assert!(report.relative_residual < 1e-10);
}

#[test]
fn poisson_is_exact_on_linears() {
    let g = grid(41);
    let exact = g.field_from_fn(|x1, _| x1);
    let (u, _) = solve_poisson_fd(g, &g.field_from_fn(|_, _| 0.0), &exact, &SolverOptions::default()).unwrap();
    assert!(u.max_abs_diff(&exact) < 1e-10);
}

fn max_errors(solve: impl Fn(Grid2D) -> (GridField, GridField)) -> Vec<f64> {
    [51, 101, 201]
        .iter()
        .map(|&n| {
            let (u, exact) = solve(grid(n));
            u.max_abs_diff(&exact)
        })
        .collect()
}

fn assert_second_order(errors: &[f64]) {
    for order in observed_orders(errors) {
        assert!((1.8..=2.2).contains(&order), "orders {:?} from errors {errors:?}", observed_orders(errors));
    }
}

#[test]
fn poisson_refinement_is_second_order() {
    let errors = max_errors(|g| {
        let exact = g.field_from_fn(sine);
        let f = g.field_from_fn(|x1, x2| -2.0 * PI * PI * sine(x1, x2));
        (solve_poisson_fd(g, &f, &exact, &SolverOptions::default()).unwrap().0, exact)
    });
    assert_second_order(&errors);
}

fn manufactured_case(g: Grid2D, id: &str, options: &SolverOptions) -> (GridField, GridField, SolveReport) {
    let p = manufactured_by_id(id).unwrap();
    let exact = g.field_from(&Field::value(p.exact.clone().unwrap())).unwrap();
    let (u, report) = solve_reference(&p, g, options).unwrap();
    (u, exact, report)
}

#[test]
fn advdiff_refinement_is_second_order() {
    let errors = max_errors(|g| {
        let (u, exact, report) = manufactured_case(g, "advdiff_smooth", &SolverOptions::default());
        assert!(report.relative_residual < 1e-10);
        (u, exact)
    });
    assert_second_order(&errors);
}

#[test]
fn advdiff_recovers_linear_solution() {
    let g = grid(51);
    let tight = SolverOptions {
        rel_tol: 1e-13,
        ..SolverOptions::default()
    };
    let (u, exact, _) = manufactured_case(g, "advdiff_linear", &tight);
    assert!(u.max_abs_diff(&exact) < 1e-9);
}

#[test]
fn advdiff_zero_data_gives_zero() {
    let g = grid(21);
    let z = GridField::zeros(g);
    let data = AdvDiffData {
        w1: g.field_from_fn(|x1, x2| -5.0 * (6.0 * PI * x1).sin() * (6.0 * PI * x2).cos()),
        w2: g.field_from_fn(|x1, x2| 5.0 * (6.0 * PI * x1).cos() * (6.0 * PI * x2).sin()),
        nu: ADVDIFF_NU,
        f: z.clone(),
        g: z,
        x2_faces: X2Faces::Neumann,
    };
    let (u, _) = solve_advdiff_fd(g, &data, &SolverOptions::default()).unwrap();
    assert!(u.values.iter().all(|&v| v == 0.0));
}

#[test]
fn advdiff_without_velocity_matches_poisson() {
    let g = grid(41);
    let f = g.field_from_fn(|x1, x2| (3.0 * x1).cos() + x2 * x2);
    let bc = g.field_from_fn(|x1, x2| x1 * x1 - x2 + 0.3);
    let tight = SolverOptions {
        rel_tol: 1e-13,
        ..SolverOptions::default()
    };
    let (poisson, _) = solve_poisson_fd(g, &f, &bc, &tight).unwrap();
    let data = AdvDiffData {
        w1: GridField::zeros(g),
        w2: GridField::zeros(g),
        nu: 1.0,
        f: GridField {
            grid: g,
            values: -&f.values,
        },
        g: bc,
        x2_faces: X2Faces::Dirichlet,
    };
    let (adv, report) = solve_advdiff_fd(g, &data, &tight).unwrap();
    assert!(adv.max_abs_diff(&poisson) < 1e-9);
    assert_eq!(report.cell_peclet, Some(0.0));
}

#[test]
fn advdiff_reports_cell_peclet() {
    let (_, _, report) = manufactured_case(grid(201), "advdiff_linear", &SolverOptions::default());
    let pe = report.cell_peclet.unwrap();
    assert!((pe - 2.5).abs() < 0.05, "{pe}");
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn nonlinear_constant_solution() {
    let g = grid(33);
    let (u, _) =
        solve_nonlinear_poisson_fd(g, &g.field_from_fn(|_, _| 0.0), &g.field_from_fn(|_, _| 1.0), &SolverOptions::default())
            .unwrap();
    assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
}

fn nonlinear_case(g: Grid2D, id: &str) -> (GridField, GridField, SolveReport) {
    manufactured_case(g, id, &SolverOptions::default())
}

#[test]
fn nonlinear_bilinear_solution_is_reproduced_exactly() {
    let (u, exact, _) = nonlinear_case(grid(51), "nonlinear_bilinear");
    assert!(u.max_abs_diff(&exact) < 1e-9);
}

#[test]
fn nonlinear_refinement_is_second_order() {
    let errors = max_errors(|g| {
        let (u, exact, _) = nonlinear_case(g, "nonlinear_sine");
        (u, exact)
    });
    assert_second_order(&errors);
}

#[test]
fn picard_contracts_on_the_benchmark() {
    let g = grid(101);
    let p = crate::problems::nonlinear_poisson_2d();
    let f = g.field_from(&p.source).unwrap();
    let bc = g.field_from_fn(|_, _| 1.0);
    let (_, report) = solve_nonlinear_poisson_fd(g, &f, &bc, &SolverOptions::default()).unwrap();
    let inc = &report.picard_increments;
    for w in inc.windows(2).skip(2) {
        assert!(w[1] < w[0], "increments {inc:?}");
    }
}

#[test]
fn relative_error_examples() {
    let r = vec![1.0, -2.0, 3.0];
    assert_eq!(relative_l2_error(&r, &r).unwrap(), 0.0);
    let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    assert!((relative_l2_error(&doubled, &r).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(relative_l2_error(&[1.0], &[0.0]), Err(RefError::ZeroReference));
    assert!(relative_l2_error(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn relative_error_of_shifted_unit_reference() {
    let g = grid(3);
    let raw = g.field_from_fn(|x1, x2| 1.0 + x1 - 2.0 * x2 * x2);
    let nrm = raw.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = GridField {
        grid: g,
        values: raw.values.mapv(|v| v / nrm),
    };
    let c = 0.37;
    let shifted = GridField {
        grid: g,
        values: unit.values.mapv(|v| v + c),
    };
    let mut direct = 0.0;
    for (a, b) in shifted.values.iter().zip(unit.values.iter()) {
        direct += (a - b) * (a - b);
    }
    let expected = c * 3.0;
    assert!((direct.sqrt() - expected).abs() < 1e-15);
    assert!((relative_l2_error_grid(&shifted, &unit).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn relative_error_is_scale_aware() {
    let r: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    for alpha in [0.0, 0.5, 1.0, 3.25, -1.5] {
        let a: Vec<f64> = r.iter().map(|v| alpha * v).collect();
        assert!((relative_l2_error(&a, &r).unwrap() - (alpha - 1.0).abs()).abs() < 1e-14);
    }
}

#[test]
fn restriction_injects_coarse_nodes() {
    let fine = grid(9).field_from_fn(|x1, x2| x1 + 10.0 * x2);
    let coarse = fine.restrict(grid(5)).unwrap();
    assert_eq!(coarse, grid(5).field_from_fn(|x1, x2| x1 + 10.0 * x2));
    assert!(fine.restrict(grid(4)).is_err());
}

#[test]
fn exports_are_row_major() {
    let f = grid(3).field_from_fn(|x1, x2| x1 + 10.0 * x2);
    let mut m = Vec::new();
    f.write_matrix(&mut m).unwrap();
    let text = String::from_utf8(m).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let last: Vec<f64> = lines[2].split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last, vec![10.0, 10.5, 11.0]);
    let mut c = Vec::new();
    f.write_csv(&mut c).unwrap();
    let text = String::from_utf8(c).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,value");
    assert_eq!(text.lines().count(), 10);
}
