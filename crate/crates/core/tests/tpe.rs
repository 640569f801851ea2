//! Tree-structured Parzen search on a mixed space.

use wfkit::tune::{best_trial, optimize, ParamValue, Params, SearchSpace, Strategy};

fn objective(p: &Params) -> Result<f64, String> {
    let x = p["x"].as_f64().ok_or("x")?;
    let lr = p["lr"].as_f64().ok_or("lr")?;
    let n = p["n"].as_i64().ok_or("n")?;
    let act = p["act"].as_str().ok_or("act")?;
    let penalty = if act == "tanh" { 0.0 } else { 0.5 };
    Ok((x - 0.7).powi(2) + (lr.log10() + 2.0).powi(2) + ((n - 12) as f64 / 20.0).powi(2) + penalty)
}

fn space() -> SearchSpace {
    SearchSpace::new()
        .continuous("x", -1.0, 1.0, false)
        .continuous("lr", 1e-4, 1.0, true)
        .int_range("n", 1, 40)
        .categorical("act", &["relu", "tanh", "sigmoid", "elu"])
}

#[test]
fn beats_random_on_mixed_space() {
    let space = space();
    let (mut tpe, mut rnd) = (0.0, 0.0);
    for seed in 0..10 {
        let best = |s| best_trial(&optimize(objective, &space, 80, seed, s).unwrap().history).unwrap().objective.unwrap();
        tpe += best(Strategy::Tpe);
        rnd += best(Strategy::Random);
    }
    assert!(tpe < rnd, "TPE {tpe} vs random {rnd}");
}

#[test]
fn suggestions_stay_in_space() {
    let space = space();
    let out = optimize(objective, &space, 40, 3, Strategy::Tpe).unwrap();
    assert_eq!(out.history.len(), 40);
    for t in &out.history {
        assert!(space.contains(&t.params), "{:?}", t.params);
        assert!(matches!(t.params["n"], ParamValue::Int(_)));
    }
}
