//! Gaussian key rates against collective Gaussian attacks.
//!
//! The asymptotic rate is the reverse-reconciliation Devetak–Winter rate
//! `β I(A:B) − χ(B:E)` for heterodyne detection by both parties, in bits per
//! channel use. Finite-size rates only model parameter estimation: the
//! expected statistics are pushed to the edge of their confidence region and
//! the resulting worst-case covariance goes through the asymptotic formula.

use nalgebra::{DMatrix, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimation::{
    combine_local, eb_bounds, symmetric_cm_assembly, CMBounds, EstimateSource, LocalSummary, MomentEstimates, Party,
};
use crate::estimation::{EB_PREFACTOR, LOCAL_PREFACTOR};
use crate::gaussian::{
    eb_from_pm_mdi, het_cm_from_wigner, symplectic_eigenvalues, wigner_from_het, Convention, QuadCM,
};
use crate::protocol::{ProtocolParams, Representation, RoundModel};
use crate::tail_bounds::solve_t_with_prefactor;

pub const DEFAULT_BETA: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-20;

/// Channel of the symmetric rate plot: 10 photons, 1 dB and ξ = 0.01 per link.
pub fn fig2_default_params() -> ProtocolParams {
    ProtocolParams::symmetric(10.0, 1.0, 0.01, 2, 0)
}

/// Von Neumann entropy in bits of a thermal mode with Wigner symplectic
/// eigenvalue `ν` (vacuum: `ν = 1/2`).
pub fn entropy_g(nu: f64) -> f64 {
    let x = nu - 0.5;
    if x <= 1e-15 {
        return 0.0;
    }
    let y = nu + 0.5;
    y * y.log2() - x * x.log2()
}

fn entropy_of(cm: &DMatrix<f64>) -> Result<f64> {
    Ok(symplectic_eigenvalues(cm)?.into_iter().map(entropy_g).sum())
}

/// Terms of the asymptotic rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBreakdown {
    pub mutual_information: f64,
    pub holevo: f64,
    pub beta: f64,
    /// `β I − χ` before clamping.
    pub raw: f64,
    pub rate: f64,
    /// Set when `raw < 0` and the rate was reported as 0.
    pub clamped: bool,
}

fn to_het(cm: &QuadCM) -> Result<QuadCM> {
    match cm.convention() {
        Convention::HeterodyneEB => Ok(cm.clone()),
        Convention::Wigner => het_cm_from_wigner(cm),
        Convention::PreparedPM => eb_from_pm_mdi(cm),
        Convention::PreparedOneWay => Err(Error::usage("one-way matrices are not handled by the MDI rate")),
    }
}

/// `I(A:B)` of the heterodyne outcomes, summed over the `q` and `p` pairs. The
/// symmetric form has no `q`–`p` cross terms, so the two pairs are independent.
pub fn mutual_information(het: &QuadCM) -> Result<f64> {
    let v = het.entries();
    let mut total = 0.0;
    for (i, j) in [(0, 2), (1, 3)] {
        let det = v[(i, i)] * v[(j, j)] - v[(i, j)] * v[(i, j)];
        if det <= 0.0 {
            return Err(Error::domain("heterodyne outcomes are perfectly correlated"));
        }
        total += 0.5 * (v[(i, i)] * v[(j, j)] / det).log2();
    }
    Ok(total)
}

/// `χ(B:E) = S(AB) − S(A | β)` for a purified `AB` with Bob heterodyning.
pub fn holevo_bound(het: &QuadCM) -> Result<f64> {
    let w = wigner_from_het(het)?;
    let v = w.entries();
    let full = DMatrix::from_iterator(4, 4, v.iter().copied());
    let a: Matrix2<f64> = v.fixed_view::<2, 2>(0, 0).into_owned();
    let c: Matrix2<f64> = v.fixed_view::<2, 2>(0, 2).into_owned();
    let b: Matrix2<f64> = v.fixed_view::<2, 2>(2, 2).into_owned();
    let inv =
        (b + Matrix2::identity() * 0.5).try_inverse().ok_or_else(|| Error::domain("singular conditioning block"))?;
    let cond = a - c * inv * c.transpose();
    let cond = DMatrix::from_iterator(2, 2, ((cond + cond.transpose()) * 0.5).iter().copied());
    Ok(entropy_of(&full)? - entropy_of(&cond)?)
}

/// Asymptotic rate from a covariance matrix in any MDI convention.
pub fn asymptotic_rate(cm: &QuadCM, beta: f64) -> Result<RateBreakdown> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::domain(format!("reconciliation efficiency must be in (0, 1], got {beta}")));
    }
    let het = to_het(cm)?;
    let mi = mutual_information(&het)?;
    let chi = holevo_bound(&het)?;
    let raw = beta * mi - chi;
    Ok(RateBreakdown { mutual_information: mi, holevo: chi, beta, raw, rate: raw.max(0.0), clamped: raw < 0.0 })
}

/// Heterodyne CM of the records an honest run of `params` produces.
pub fn expected_het_cm(params: &ProtocolParams) -> Result<QuadCM> {
    let cov = RoundModel::new(params, Representation::Eb)?.record_covariance();
    QuadCM::new(cov.fixed_view::<4, 4>(0, 0).into_owned(), Convention::HeterodyneEB)
}

pub fn model_asymptotic_rate(params: &ProtocolParams, beta: f64) -> Result<RateBreakdown> {
    asymptotic_rate(&expected_het_cm(params)?, beta)
}

/// Parameter-estimation regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Local estimation over all `n` rounds; nothing is sacrificed.
    Efficient,
    /// Public disclosure of `k = fraction · n` rounds, which are discarded.
    Traditional { fraction: f64 },
}

impl Scheme {
    pub fn default_set() -> [Scheme; 3] {
        [Scheme::Efficient, Scheme::Traditional { fraction: 1e-2 }, Scheme::Traditional { fraction: 1e-3 }]
    }

    fn check(&self) -> Result<()> {
        match *self {
            Scheme::Traditional { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(Error::domain(format!("sacrifice fraction must be in (0, 1), got {fraction}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Efficient => f.write_str("efficient"),
            Scheme::Traditional { fraction } => write!(f, "trad:{fraction:e}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "efficient" {
            return Ok(Scheme::Efficient);
        }
        let frac = s
            .strip_prefix("trad:")
            .and_then(|f| f.parse::<f64>().ok())
            .ok_or_else(|| Error::usage(format!("unknown scheme '{s}' (expected efficient or trad:<fraction>)")))?;
        let scheme = Scheme::Traditional { fraction: frac };
        scheme.check().map_err(|e| Error::usage(e.to_string()))?;
        Ok(scheme)
    }
}

/// Expected per-round statistics of prepare-and-measure records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedStatistics {
    /// `E[q_A² + p_A²]`
    pub sum_a: f64,
    pub sum_b: f64,
    /// `E[q_A q_B − p_A p_B]`
    pub corr_signed: f64,
}

pub fn expected_pm_statistics(params: &ProtocolParams) -> Result<ExpectedStatistics> {
    let c = RoundModel::new(params, Representation::Pm)?.record_covariance();
    Ok(ExpectedStatistics {
        sum_a: c[(0, 0)] + c[(1, 1)],
        sum_b: c[(2, 2)] + c[(3, 3)],
        corr_signed: c[(0, 2)] - c[(1, 3)],
    })
}

/// Finite-size rate at one block size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteRate {
    pub scheme: Scheme,
    pub n: f64,
    /// Samples used for estimation.
    pub k: f64,
    /// Deviation parameter; absent when `n` is too small.
    pub t: Option<f64>,
    pub rate: f64,
    pub feasible: bool,
    /// The worst-case rate was negative and reported as 0.
    pub clamped: bool,
    /// The worst-case CM had to be adjusted to stay physical.
    pub cm_adjusted: bool,
}

/// Worst-case bounds a scheme would certify if the statistics came out at
/// their expected values.
pub fn expected_bounds(params: &ProtocolParams, scheme: Scheme, n: f64, epsilon: f64) -> Result<(CMBounds, f64)> {
    scheme.check()?;
    let s = expected_pm_statistics(params)?;
    match scheme {
        Scheme::Efficient => {
            let t = solve_t_with_prefactor(LOCAL_PREFACTOR, n, epsilon)?;
            // E[C31] = 0, so E[C32] is the whole expected cross statistic.
            let alice = LocalSummary { party: Party::Alice, k: n as u64, energy: s.sum_a, partial_c32: s.corr_signed };
            let bob = LocalSummary { party: Party::Bob, k: n as u64, energy: s.sum_b, partial_c32: 0.0 };
            Ok((combine_local(&alice, &bob, 0.0, params.n_a, params.n_b, t)?, t))
        }
        Scheme::Traditional { fraction } => {
            let k = fraction * n;
            let t = solve_t_with_prefactor(EB_PREFACTOR, k, epsilon)?;
            let m = MomentEstimates {
                k: k as u64,
                c1: f64::NAN,
                c2: f64::NAN,
                c3: s.corr_signed.abs(),
                c3_signed: s.corr_signed,
                c31: None,
                c32: None,
                source: EstimateSource::PmLocal,
                energy_a: s.sum_a,
                energy_b: s.sum_b,
                means: [0.0; 4],
            };
            let mut b = eb_bounds(&m, t)?;
            b.photon_params = Some((params.n_a, params.n_b));
            Ok((b, t))
        }
    }
}

/// Rate certified by `bounds`, scaled by the fraction of rounds kept.
pub fn rate_from_bounds(bounds: &CMBounds, beta: f64, kept_fraction: f64) -> Result<(RateBreakdown, bool)> {
    let cm = symmetric_cm_assembly(bounds)?;
    let mut r = asymptotic_rate(&cm.cm, beta)?;
    r.rate *= kept_fraction;
    Ok((r, cm.shrunk || cm.diagonal_raised))
}

pub fn finite_size_rate(
    params: &ProtocolParams,
    n: f64,
    scheme: Scheme,
    epsilon: f64,
    beta: f64,
) -> Result<FiniteRate> {
    scheme.check()?;
    let k = match scheme {
        Scheme::Efficient => n,
        Scheme::Traditional { fraction } => fraction * n,
    };
    let (bounds, t) = match expected_bounds(params, scheme, n, epsilon) {
        Ok(x) => x,
        Err(e) if e.is_infeasible() => {
            return Ok(FiniteRate {
                scheme,
                n,
                k,
                t: None,
                rate: 0.0,
                feasible: false,
                clamped: false,
                cm_adjusted: false,
            })
        }
        Err(e) => return Err(e),
    };
    let kept = 1.0 - k / n;
    let (r, adjusted) = rate_from_bounds(&bounds, beta, if kept > 0.0 { kept } else { 1.0 })?;
    Ok(FiniteRate { scheme, n, k, t: Some(t), rate: r.rate, feasible: true, clamped: r.clamped, cm_adjusted: adjusted })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    /// `asymptotic`, `efficient` or `trad:<fraction>`.
    pub scheme: String,
    pub n: f64,
    pub rate: f64,
    pub feasible: bool,
}

/// Rate table over `n_grid`: the asymptotic line followed by each scheme.
pub fn fig2_curve(
    params: &ProtocolParams,
    n_grid: &[f64],
    schemes: &[Scheme],
    epsilon: f64,
    beta: f64,
) -> Result<Vec<Fig2Row>> {
    let asym = model_asymptotic_rate(params, beta)?.rate;
    let mut rows: Vec<Fig2Row> =
        n_grid.iter().map(|&n| Fig2Row { scheme: "asymptotic".into(), n, rate: asym, feasible: true }).collect();
    for s in schemes {
        let part: Vec<Fig2Row> = n_grid
            .par_iter()
            .map(|&n| {
                finite_size_rate(params, n, *s, epsilon, beta).map(|r| Fig2Row {
                    scheme: s.to_string(),
                    n,
                    rate: r.rate,
                    feasible: r.feasible,
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(part);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyRateReport {
    pub asymptotic: RateBreakdown,
    pub scheme_rates: Vec<FiniteRate>,
    pub params: ProtocolParams,
    pub beta_ec: f64,
    pub epsilon_total: f64,
    pub n: f64,
}

pub fn key_rate_report(
    params: &ProtocolParams,
    n: f64,
    schemes: &[Scheme],
    epsilon: f64,
    beta: f64,
) -> Result<KeyRateReport> {
    let asymptotic = model_asymptotic_rate(params, beta)?;
    let scheme_rates = schemes.iter().map(|s| finite_size_rate(params, n, *s, epsilon, beta)).collect::<Result<_>>()?;
    Ok(KeyRateReport { asymptotic, scheme_rates, params: params.clone(), beta_ec: beta, epsilon_total: epsilon, n })
}
