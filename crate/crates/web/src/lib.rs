//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cvmdi::energy_test::{fig1_curve, log_grid, Fig1Scheme};
use cvmdi::estimation::local_pe_bounds;
use cvmdi::keyrate::{fig2_curve, model_asymptotic_rate, rate_from_bounds, Scheme};
use cvmdi::protocol::{simulate_pm, ProtocolParams, Representation, RoundModel};
use cvmdi::tail_bounds::solve_t_with_prefactor;

const MAX_ROUNDS: u64 = 2_000_000;
const MAX_POINTS: usize = 400;

#[derive(Serialize)]
struct Series {
    name: String,
    n: Vec<f64>,
    /// `null` where the point is infeasible.
    y: Vec<Option<f64>>,
}

fn grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(lo >= 1.0 && hi > lo && hi.is_finite()) || !(2..=MAX_POINTS).contains(&points) {
        return Err(format!("need 1 ≤ lo < hi and 2..={MAX_POINTS} points"));
    }
    Ok(log_grid(lo, hi, points))
}

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn dimension_curves(epsilon: f64, lo: f64, hi: f64, points: usize) -> Result<String, String> {
    let ns = grid(lo, hi, points)?;
    let rows = fig1_curve(&ns, &Fig1Scheme::default_set(), epsilon).map_err(|e| e.to_string())?;
    let series: Vec<Series> = rows
        .chunks(ns.len())
        .map(|c| Series {
            name: c[0].scheme.clone(),
            n: c.iter().map(|r| r.n).collect(),
            y: c.iter().map(|r| r.normalized_dimension).collect(),
        })
        .collect();
    to_json(&series)
}

#[allow(clippy::too_many_arguments)]
pub fn rate_curves(
    mean_photons: f64,
    loss_db: f64,
    xi: f64,
    beta: f64,
    epsilon: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, String> {
    let ns = grid(lo, hi, points)?;
    let params = ProtocolParams::symmetric(mean_photons, loss_db, xi, 2, 0);
    params.validate().map_err(|e| e.to_string())?;
    let rows = fig2_curve(&params, &ns, &Scheme::default_set(), epsilon, beta).map_err(|e| e.to_string())?;
    let series: Vec<Series> = rows
        .chunks(ns.len())
        .map(|c| Series {
            name: c[0].scheme.clone(),
            n: c.iter().map(|r| r.n).collect(),
            y: c.iter().map(|r| r.feasible.then_some(r.rate)).collect(),
        })
        .collect();
    to_json(&series)
}

#[derive(Serialize)]
struct EstimateView {
    rounds: u64,
    t: f64,
    sum_a_upper: f64,
    sum_b_upper: f64,
    corr_lower: f64,
    uninformative: bool,
    /// Exact values from the channel model, for comparison.
    true_sum_a: f64,
    true_sum_b: f64,
    true_corr: f64,
    finite_rate: f64,
    asymptotic_rate: f64,
}

pub fn estimate_run(
    mean_photons: f64,
    loss_db: f64,
    xi: f64,
    rounds: u64,
    seed: u64,
    epsilon: f64,
) -> Result<String, String> {
    if rounds > MAX_ROUNDS {
        return Err(format!("at most {MAX_ROUNDS} rounds in the browser"));
    }
    let rounds = rounds & !1;
    let params = ProtocolParams::symmetric(mean_photons, loss_db, xi, rounds, seed);
    let e = |e: cvmdi::Error| e.to_string();
    let model = RoundModel::new(&params, Representation::Pm).map_err(e)?;
    let (ap, bp) = model.scaled_gains();
    let cov = model.record_covariance();
    let records = simulate_pm(&params).map_err(e)?;
    let t = solve_t_with_prefactor(12.0, rounds as f64, epsilon).map_err(e)?;
    let b = local_pe_bounds(&records, rounds, params.n_a, params.n_b, ap, bp, t).map_err(e)?;
    let (rate, _) = rate_from_bounds(&b, 0.95, 1.0).map_err(e)?;
    to_json(&EstimateView {
        rounds,
        t,
        sum_a_upper: b.sum_a_upper,
        sum_b_upper: b.sum_b_upper,
        corr_lower: b.corr_lower,
        uninformative: b.uninformative,
        true_sum_a: cov[(0, 0)] + cov[(1, 1)],
        true_sum_b: cov[(2, 2)] + cov[(3, 3)],
        true_corr: (cov[(0, 2)] - cov[(1, 3)]).abs(),
        finite_rate: rate.rate,
        asymptotic_rate: model_asymptotic_rate(&params, 0.95).map_err(e)?.rate,
    })
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|m| JsError::new(&m))
}

/// Normalized dimension versus n for the four energy-test schemes.
#[wasm_bindgen(js_name = dimensionCurves)]
pub fn dimension_curves_js(epsilon: f64, lo: f64, hi: f64, points: usize) -> Result<String, JsError> {
    js(dimension_curves(epsilon, lo, hi, points))
}

/// Asymptotic and finite-size key rates versus n for a symmetric channel.
#[wasm_bindgen(js_name = rateCurves)]
#[allow(clippy::too_many_arguments)]
pub fn rate_curves_js(
    mean_photons: f64,
    loss_db: f64,
    xi: f64,
    beta: f64,
    epsilon: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<String, JsError> {
    js(rate_curves(mean_photons, loss_db, xi, beta, epsilon, lo, hi, points))
}

/// Simulate a prepare-and-measure run and bound its covariance locally.
#[wasm_bindgen(js_name = estimateRun)]
pub fn estimate_run_js(
    mean_photons: f64,
    loss_db: f64,
    xi: f64,
    rounds: u64,
    seed: u64,
    epsilon: f64,
) -> Result<String, JsError> {
    js(estimate_run(mean_photons, loss_db, xi, rounds, seed, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn dimension_series_have_four_schemes() {
        let v: Value = serde_json::from_str(&dimension_curves(1e-20, 1e6, 1e10, 9).unwrap()).unwrap();
        let s = v.as_array().unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0]["name"], "efficient");
        assert_eq!(s[0]["y"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn rate_series_start_with_asymptotic() {
        let v: Value = serde_json::from_str(&rate_curves(10.0, 0.3, 0.01, 0.95, 1e-20, 1e4, 1e12, 5).unwrap()).unwrap();
        assert_eq!(v[0]["name"], "asymptotic");
        assert_eq!(v.as_array().unwrap().len(), 4);
        assert!(v[1]["y"][4].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn estimate_bounds_bracket_the_truth() {
        let v: Value = serde_json::from_str(&estimate_run(10.0, 0.3, 0.01, 100_000, 1, 1e-10).unwrap()).unwrap();
        let f = |k: &str| v[k].as_f64().unwrap();
        assert!(f("sum_a_upper") >= f("true_sum_a"));
        assert!(f("corr_lower") <= f("true_corr"));
        assert!(f("finite_rate") <= f("asymptotic_rate"));
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(dimension_curves(1e-20, 10.0, 1.0, 5).is_err());
        assert!(rate_curves(-1.0, 1.0, 0.01, 0.95, 1e-20, 1e4, 1e6, 5).is_err());
        assert!(estimate_run(10.0, 1.0, 0.01, 10_000_000, 1, 1e-10).is_err());
        assert!(estimate_run(10.0, 1.0, 0.01, 100, 1, 1e-20).is_err());
    }
}
