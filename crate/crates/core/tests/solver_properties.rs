use infogame::model::GameModel;
use infogame::solver::{cfl_limit, classical_solve, solve, ProductGrids, StateGrid};

fn model(json: &str) -> GameModel {
    GameModel::from_json(json).unwrap()
}

const MIXED: &str = r#"{"preset":"drift-sum-1d","params":{"sigma":0.5},"I":2,"J":2,"T":0.5,
  "g":[[{"type":"tanh","coef":1.5,"amplitude":1.0},{"type":"linear","coef":-0.5,"offset":0.25}],
       [{"type":"clamp","coef":2.0,"lo":-1.0,"hi":1.0},{"type":"const","value":0.7}]],
  "l":[[{"type":"zero"},{"type":"separable","u_coef":0.3,"v_coef":-0.2}],
       [{"type":"const","value":-0.4},{"type":"separable","u_coef":-0.1,"v_coef":0.1}]]}"#;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn value_is_bounded_and_lipschitz_in_beliefs() {
    let m = model(MIXED);
    let grids =
        ProductGrids::for_model(&m, StateGrid::uniform(1, -4.0, 4.0, 41).unwrap(), 6, 6).unwrap();
    let sol = solve(&m, &grids, 0.02, 0.0).unwrap();
    let mut mg = 0.0f64;
    for ix in 0..grids.state.len() {
        let x = grids.state.coord(ix);
        for i in 0..2 {
            for j in 0..2 {
                mg = mg.max(m.terminal(i, j, &x).abs());
            }
        }
    }
    // separable running costs are bounded by |u| + |v| coefficients on U = V = {-1, 0, 1}
    let ml = 0.5f64;
    for field in &sol.slices {
        let bound = mg + (m.horizon() - field.t) * ml + 1e-12;
        for ix in 0..grids.state.len() {
            for ip in 0..grids.p.len() {
                for iq in 0..grids.q.len() {
                    let w = field.get(&grids, ix, ip, iq);
                    assert!(w.abs() <= bound, "|w| = {} exceeds {bound}", w.abs());
                    for ip2 in 0..grids.p.len() {
                        let d = (w - field.get(&grids, ix, ip2, iq)).abs();
                        assert!(d <= bound * l1(grids.p.point(ip), grids.p.point(ip2)) + 1e-12);
                    }
                    for iq2 in 0..grids.q.len() {
                        let d = (w - field.get(&grids, ix, ip, iq2)).abs();
                        assert!(d <= bound * l1(grids.q.point(iq), grids.q.point(iq2)) + 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn refinement_converges() {
    let m = model(
        r#"{"preset":"drift-sum-1d","params":{"sigma":0.5},"I":1,"J":1,"T":0.5,"g":[[{"type":"tanh","coef":2.0,"amplitude":1.0}]]}"#,
    );
    let solve_at = |n: usize| {
        let state = StateGrid::uniform(1, -4.0, 4.0, n).unwrap();
        let dt = 0.9 * cfl_limit(&m, &state);
        let sol = classical_solve(&m, &state, dt, 0.0).unwrap();
        (state, sol.initial().values.clone())
    };
    let (fine_state, fine) = solve_at(641);
    let mut errors = Vec::new();
    for n in [41, 81, 161] {
        let (state, w) = solve_at(n);
        let stride = (fine_state.len() - 1) / (n - 1);
        let err = state
            .core_indices(2.0)
            .into_iter()
            .map(|ix| (w[ix] - fine[ix * stride]).abs())
            .fold(0.0f64, f64::max);
        errors.push(err);
    }
    let gammas: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    eprintln!("refinement errors {errors:?}, measured orders {gammas:?}");
    assert!(
        errors.windows(2).all(|e| e[1] < e[0]),
        "error grew under refinement: {errors:?}"
    );
    assert!(gammas.iter().all(|&g| g > 0.0));
}

#[test]
fn comparison_under_raised_running_cost() {
    let lower = model(MIXED);
    let upper = model(&MIXED.replace(
        r#"{"type":"const","value":-0.4}"#,
        r#"{"type":"const","value":-0.1}"#,
    ));
    let grids =
        ProductGrids::for_model(&lower, StateGrid::uniform(1, -4.0, 4.0, 41).unwrap(), 4, 4)
            .unwrap();
    let a = solve(&lower, &grids, 0.02, 0.0).unwrap();
    let b = solve(&upper, &grids, 0.02, 0.0).unwrap();
    for (fa, fb) in a.slices.iter().zip(&b.slices) {
        assert!(fa.values.iter().zip(&fb.values).all(|(x, y)| x <= y));
    }
}

#[test]
fn two_dimensional_linear_data_stays_linear() {
    let m = model(
        r#"{"preset":"drift-sum-2d","params":{"sigma":0.4,"rho":0.3},"I":1,"J":1,"T":0.2,
            "g":[[{"type":"linear","coef":[1.0,-2.0],"offset":0.5}]]}"#,
    );
    let state = StateGrid::uniform(2, -3.0, 3.0, 31).unwrap();
    let dt = 0.9 * cfl_limit(&m, &state);
    let sol = classical_solve(&m, &state, dt, 0.0).unwrap();
    for ix in state.core_indices(1.0) {
        let x = state.coord(ix);
        let exact = x[0] - 2.0 * x[1] + 0.5;
        assert!((sol.initial().values[ix] - exact).abs() < 1e-10);
    }
}
