//! CSV row layouts. Floats are written in shortest round-trip form.

use serde::{Deserialize, Serialize};

use cvmdi::energy_test::Fig1Row;
use cvmdi::keyrate::Fig2Row;
use cvmdi::tail_bounds::TailCheckRow;

/// `scheme,n,normalized_dimension`; the dimension is empty where the scheme
/// cannot run at that `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Csv {
    pub scheme: String,
    pub n: f64,
    pub normalized_dimension: Option<f64>,
}

impl From<Fig1Row> for Fig1Csv {
    fn from(r: Fig1Row) -> Self {
        Fig1Csv { scheme: r.scheme, n: r.n, normalized_dimension: r.normalized_dimension }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCsv {
    pub scheme: String,
    pub n: f64,
    pub rate: f64,
    pub feasible: bool,
}

impl From<Fig2Row> for RateCsv {
    fn from(r: Fig2Row) -> Self {
        RateCsv { scheme: r.scheme, n: r.n, rate: r.rate, feasible: r.feasible }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCsv {
    pub id: String,
    pub k: u64,
    pub t: f64,
    pub analytic_bound: f64,
    pub empirical_rate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub seed: u64,
}

impl From<&TailCheckRow> for TailCsv {
    fn from(r: &TailCheckRow) -> Self {
        TailCsv {
            id: r.id.name().to_string(),
            k: r.k,
            t: r.t,
            analytic_bound: r.analytic_bound,
            empirical_rate: r.empirical_rate,
            stderr: r.stderr,
            trials: r.trials,
            seed: r.seed,
        }
    }
}
