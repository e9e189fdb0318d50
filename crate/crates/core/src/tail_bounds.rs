//! Concentration bounds for sample second moments of i.i.d. zero-mean Gaussian
//! variables, each failing with probability at most `c·exp(−k t²/8)`, and a
//! Monte Carlo engine that estimates how often each bound's event actually occurs.

use nalgebra::Matrix4;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// The individual tail bounds. Each names the event whose probability is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundId {
    /// `(1/k) Σ X² > (1+t) E[X²]`
    Chi2Upper,
    /// `(1/k) Σ X² < (1−t) E[X²]`
    Chi2Lower,
    /// `E[X²] + E[Y²] > (1/(1−t)) (1/k) Σ (X² + Y²)`
    SumTwoLower,
    /// `E[XY] < (1/(1−t²)) (1/k) Σ XY − (t/(1−t²)) (1/k) Σ (X² + Y²)/2`
    ProductLower,
    /// `E[XY] > (1/(1−t²)) (1/k) Σ XY + (t/(1−t²)) (1/k) Σ (X² + Y²)/2`
    ProductUpper,
    /// `|E[XY] − E[WZ]| < (1/(1−t²)) (1/k) |Σ XY − WZ| − (t/(1−t²)) (1/k) Σ (X²+Y²+W²+Z²)/2`
    FourVarLower,
    /// `(1/k) Σ XY > E[XY] + t (E[X²] + E[Y²])/2`
    CrossUpper,
    /// `(1/k) Σ XY < E[XY] − t (E[X²] + E[Y²])/2`
    CrossLower,
    /// `(1/k) Σ (XY − WZ) > E[XY] − E[WZ] + t (E[X²]+E[Y²]+E[W²]+E[Z²])/2`
    FourVarCrossUpper,
    /// `(1/k) Σ (XY − WZ) < E[XY] − E[WZ] − t (E[X²]+E[Y²]+E[W²]+E[Z²])/2`
    FourVarCrossLower,
}

impl BoundId {
    pub const ALL: [BoundId; 10] = [
        BoundId::Chi2Upper,
        BoundId::Chi2Lower,
        BoundId::SumTwoLower,
        BoundId::ProductLower,
        BoundId::ProductUpper,
        BoundId::FourVarLower,
        BoundId::CrossUpper,
        BoundId::CrossLower,
        BoundId::FourVarCrossUpper,
        BoundId::FourVarCrossLower,
    ];

    /// The integer `c` in `c·exp(−k t²/8)`.
    pub fn prefactor(self) -> u32 {
        match self {
            BoundId::Chi2Upper | BoundId::Chi2Lower => 1,
            BoundId::SumTwoLower
            | BoundId::ProductLower
            | BoundId::ProductUpper
            | BoundId::CrossUpper
            | BoundId::CrossLower => 2,
            BoundId::FourVarLower | BoundId::FourVarCrossUpper | BoundId::FourVarCrossLower => 4,
        }
    }

    /// How many of `X, Y, W, Z` the event involves.
    pub fn variables(self) -> usize {
        match self {
            BoundId::Chi2Upper | BoundId::Chi2Lower => 1,
            BoundId::FourVarLower | BoundId::FourVarCrossUpper | BoundId::FourVarCrossLower => 4,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundId::Chi2Upper => "chi2_upper",
            BoundId::Chi2Lower => "chi2_lower",
            BoundId::SumTwoLower => "sum_two_lower",
            BoundId::ProductLower => "product_lower",
            BoundId::ProductUpper => "product_upper",
            BoundId::FourVarLower => "four_var_lower",
            BoundId::CrossUpper => "cross_upper",
            BoundId::CrossLower => "cross_lower",
            BoundId::FourVarCrossUpper => "four_var_cross_upper",
            BoundId::FourVarCrossLower => "four_var_cross_lower",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown bound id '{s}'")))
    }
}

/// A bound instantiated at a sample count and deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSpec {
    pub id: BoundId,
    pub k: u64,
    pub t: f64,
}

impl BoundSpec {
    pub fn new(id: BoundId, k: u64, t: f64) -> Result<Self> {
        check_kt(k, t)?;
        Ok(BoundSpec { id, k, t })
    }

    pub fn prefactor(&self) -> u32 {
        self.id.prefactor()
    }

    pub fn failure_bound(&self) -> f64 {
        self.prefactor() as f64 * (-(self.k as f64) * self.t * self.t / 8.0).exp()
    }
}

fn check_kt(k: u64, t: f64) -> Result<()> {
    if k < 1 {
        return Err(Error::domain("bounds need k ≥ 1 samples"));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::domain(format!("deviation t must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// `c·exp(−k t²/8)` for the given bound.
pub fn failure_probability(id: BoundId, k: u64, t: f64) -> Result<f64> {
    Ok(BoundSpec::new(id, k, t)?.failure_bound())
}

/// Smallest `t` with `c·exp(−k t²/8) ≤ ε`, i.e. `t = √(8 ln(c/ε)/k)`.
pub fn solve_t(id: BoundId, k: u64, epsilon: f64) -> Result<f64> {
    solve_t_with_prefactor(id.prefactor() as f64, k as f64, epsilon)
}

/// As [`solve_t`] for an arbitrary prefactor and (possibly non-integer) sample count.
/// Composite estimators use `c = 8` or `c = 12`.
pub fn solve_t_with_prefactor(c: f64, k: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < c) {
        return Err(Error::domain(format!("target ε must lie in (0, {c}), got {epsilon}")));
    }
    if !(k >= 1.0) {
        return Err(Error::domain("bounds need k ≥ 1 samples"));
    }
    let needed = 8.0 * (c / epsilon).ln();
    let t = (needed / k).sqrt();
    if t >= 1.0 {
        return Err(Error::InsufficientSamples { what: "concentration bound", min: needed, got: k });
    }
    Ok(t)
}

/// Zero-mean jointly Gaussian `(X, Y, W, Z)` with a PSD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    cov: Matrix4<f64>,
    factor: Matrix4<f64>,
}

impl GaussianModel {
    pub fn new(cov: Matrix4<f64>) -> Result<Self> {
        if cov.iter().any(|x| !x.is_finite()) || (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::domain("model covariance must be finite and symmetric"));
        }
        let factor = semidefinite_cholesky(&cov)?;
        Ok(GaussianModel { cov, factor })
    }

    /// Independent unit-variance variables.
    pub fn standard() -> Self {
        GaussianModel::new(Matrix4::identity()).expect("identity is PSD")
    }

    pub fn cov(&self) -> &Matrix4<f64> {
        &self.cov
    }

    /// `X = 0` almost surely, others independent standard normal.
    pub fn degenerate_x() -> Self {
        GaussianModel::new(Matrix4::from_diagonal(&nalgebra::Vector4::new(0.0, 1.0, 1.0, 1.0))).expect("PSD")
    }
}

/// Lower-triangular `L` with `L Lᵀ = a` for PSD `a`; zero pivots give zero columns.
fn semidefinite_cholesky(a: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let scale = a.amax().max(1.0);
    let tol = 1e-12 * scale;
    let mut l = Matrix4::zeros();
    for j in 0..4 {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d < -1e-10 * scale {
            return Err(Error::domain("model covariance is not positive semidefinite"));
        }
        if d <= tol {
            for i in j + 1..4 {
                let r = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                if r.abs() > 1e-8 * scale {
                    return Err(Error::domain("model covariance is not positive semidefinite"));
                }
            }
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..4 {
            l[(i, j)] = (a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>()) / dj;
        }
    }
    Ok(l)
}

/// Sample moments of one size-`k` batch, all divided by `k`.
#[derive(Debug, Clone, Copy, Default)]
struct BatchMoments {
    xx: f64,
    yy: f64,
    ww: f64,
    zz: f64,
    xy: f64,
    wz: f64,
}

fn event_occurs(id: BoundId, t: f64, s: &BatchMoments, cov: &Matrix4<f64>) -> bool {
    let (ex2, ey2, ew2, ez2) = (cov[(0, 0)], cov[(1, 1)], cov[(2, 2)], cov[(3, 3)]);
    let (exy, ewz) = (cov[(0, 1)], cov[(2, 3)]);
    let d = 1.0 - t * t;
    match id {
        BoundId::Chi2Upper => s.xx > (1.0 + t) * ex2,
        BoundId::Chi2Lower => s.xx < (1.0 - t) * ex2,
        BoundId::SumTwoLower => ex2 + ey2 > (s.xx + s.yy) / (1.0 - t),
        BoundId::ProductLower => exy < s.xy / d - t / d * (s.xx + s.yy) / 2.0,
        BoundId::ProductUpper => exy > s.xy / d + t / d * (s.xx + s.yy) / 2.0,
        BoundId::FourVarLower => {
            (exy - ewz).abs() < (s.xy - s.wz).abs() / d - t / d * (s.xx + s.yy + s.ww + s.zz) / 2.0
        }
        BoundId::CrossUpper => s.xy > exy + t * (ex2 + ey2) / 2.0,
        BoundId::CrossLower => s.xy < exy - t * (ex2 + ey2) / 2.0,
        BoundId::FourVarCrossUpper => s.xy - s.wz > exy - ewz + t * (ex2 + ey2 + ew2 + ez2) / 2.0,
        BoundId::FourVarCrossLower => s.xy - s.wz < exy - ewz - t * (ex2 + ey2 + ew2 + ez2) / 2.0,
    }
}

fn draw_batch<R: Rng>(rng: &mut R, k: u64, vars: usize, l: &Matrix4<f64>) -> BatchMoments {
    let mut m = BatchMoments::default();
    let mut z = [0.0f64; 4];
    for _ in 0..k {
        for zi in z.iter_mut().take(vars) {
            *zi = rng.sample(StandardNormal);
        }
        let mut v = [0.0f64; 4];
        for i in 0..vars {
            v[i] = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
        }
        m.xx += v[0] * v[0];
        m.yy += v[1] * v[1];
        m.ww += v[2] * v[2];
        m.zz += v[3] * v[3];
        m.xy += v[0] * v[1];
        m.wz += v[2] * v[3];
    }
    let inv = 1.0 / k as f64;
    BatchMoments { xx: m.xx * inv, yy: m.yy * inv, ww: m.ww * inv, zz: m.zz * inv, xy: m.xy * inv, wz: m.wz * inv }
}

/// Empirical frequency of a bound's event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub violations: u64,
    pub trials: u64,
    pub rate: f64,
    /// Binomial standard error `√(rate(1−rate)/trials)`.
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_counts(violations: u64, trials: u64) -> Self {
        let rate = violations as f64 / trials as f64;
        McEstimate { violations, trials, rate, stderr: (rate * (1.0 - rate) / trials as f64).sqrt() }
    }

    /// `rate ≤ bound + sigmas·stderr`
    pub fn within(&self, bound: f64, sigmas: f64) -> bool {
        self.rate <= bound + sigmas * self.stderr
    }
}

const TRIALS_PER_STREAM: u64 = 1024;

/// Run `trials` independent size-`k` batches and count how often the event of
/// `id` occurs. Trial blocks map to fixed random streams, so the result does not
/// depend on the thread count.
pub fn mc_violation_rate(
    id: BoundId,
    k: u64,
    t: f64,
    trials: u64,
    model: &GaussianModel,
    seed: u64,
) -> Result<McEstimate> {
    check_kt(k, t)?;
    if trials < 1 {
        return Err(Error::domain("need at least one trial"));
    }
    let blocks = trials.div_ceil(TRIALS_PER_STREAM);
    let vars = id.variables();
    let violations: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, Domain::TailCheck, b);
            let n = TRIALS_PER_STREAM.min(trials - b * TRIALS_PER_STREAM);
            (0..n).filter(|_| event_occurs(id, t, &draw_batch(&mut rng, k, vars, &model.factor), &model.cov)).count()
                as u64
        })
        .sum();
    Ok(McEstimate::from_counts(violations, trials))
}

/// One line of a tail-bound check report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckRow {
    pub id: BoundId,
    pub k: u64,
    pub t: f64,
    pub analytic_bound: f64,
    pub empirical_rate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub seed: u64,
}

impl TailCheckRow {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.empirical_rate <= self.analytic_bound + sigmas * self.stderr
    }
}

/// Default correlated model for checks: `E[XY] − E[WZ] = 0` with nonzero correlations.
pub fn reference_model() -> GaussianModel {
    let cov = Matrix4::new(
        1.0, 0.6, 0.2, 0.1, //
        0.6, 2.0, 0.0, 0.3, //
        0.2, 0.0, 1.5, 0.6, //
        0.1, 0.3, 0.6, 1.0,
    );
    GaussianModel::new(cov).expect("reference model is PSD")
}

/// Check every bound id at `(k, t)`; the per-id seed is derived from `seed`.
pub fn tailcheck(k: u64, t: f64, trials: u64, model: &GaussianModel, seed: u64) -> Result<Vec<TailCheckRow>> {
    BoundId::ALL
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let s = rng::derive_seed(seed, i as u64);
            let est = mc_violation_rate(id, k, t, trials, model, s)?;
            Ok(TailCheckRow {
                id,
                k,
                t,
                analytic_bound: failure_probability(id, k, t)?,
                empirical_rate: est.rate,
                stderr: est.stderr,
                trials,
                seed: s,
            })
        })
        .collect()
}
