//! Gaussian-state algebra in the `q = (a + a†)/√2` convention (vacuum
//! quadrature variance 1/2).
//!
//! Quadratures are ordered `(q_1, p_1, q_2, p_2, ...)`. Covariance matrices of
//! two-party data carry a [`Convention`] tag so that Wigner, heterodyne and
//! preparation matrices cannot be mixed silently.

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const UNCERTAINTY_TOL: f64 = 1e-9;

/// Transmissivity of a channel with the given loss in dB.
pub fn db_to_transmissivity(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// One complex measurement or preparation value, stored as its two quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexSample {
    pub q: f64,
    pub p: f64,
}

impl ComplexSample {
    pub const ZERO: ComplexSample = ComplexSample { q: 0.0, p: 0.0 };

    pub fn new(q: f64, p: f64) -> Self {
        ComplexSample { q, p }
    }

    pub fn from_amplitude(alpha: C64) -> Self {
        ComplexSample { q: SQRT_2 * alpha.re, p: SQRT_2 * alpha.im }
    }

    /// `(q + i p)/√2`
    pub fn amplitude(&self) -> C64 {
        C64::new(self.q, self.p) / SQRT_2
    }

    /// `|α|² = (q² + p²)/2`
    pub fn energy(&self) -> f64 {
        0.5 * (self.q * self.q + self.p * self.p)
    }

    pub fn conj(&self) -> Self {
        ComplexSample { q: self.q, p: -self.p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }
}

/// Which random variables a [`QuadCM`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Symmetrically ordered quadrature moments of the quantum state.
    Wigner,
    /// Outcomes of heterodyne detection on both modes (entanglement-based picture).
    #[serde(rename = "heterodyne_eb")]
    HeterodyneEB,
    /// Preparation amplitudes of both parties in the MDI prepare-and-measure picture.
    #[serde(rename = "prepared_pm")]
    PreparedPM,
    /// Alice's preparation amplitude and Bob's heterodyne outcome in a one-way protocol.
    PreparedOneWay,
}

/// Where thermal-loss excess noise is referred to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcessNoiseConvention {
    /// `ξ/2` is added to the Wigner variance at the channel output.
    #[default]
    Output,
    /// Noise is referred to the channel input, i.e. the output sees `T ξ/2`.
    Input,
}

/// Labeled 4×4 covariance matrix over `(q_A, p_A, q_B, p_B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCM {
    entries: Matrix4<f64>,
    convention: Convention,
    /// `(N_A, N_B)` for [`Convention::PreparedPM`]; `(N_A, ∞)` is never stored,
    /// one-way matrices keep `N_B = 0`.
    photon_params: Option<(f64, f64)>,
}

impl QuadCM {
    /// Validates symmetry, positive semidefiniteness and, for Wigner matrices,
    /// the uncertainty relation.
    pub fn new(entries: Matrix4<f64>, convention: Convention) -> Result<Self> {
        if matches!(convention, Convention::PreparedPM | Convention::PreparedOneWay) {
            return Err(Error::usage("prepared-picture matrices need photon numbers; use QuadCM::prepared"));
        }
        Self::checked(entries, convention, None)
    }

    pub fn prepared(entries: Matrix4<f64>, convention: Convention, n_a: f64, n_b: f64) -> Result<Self> {
        if !matches!(convention, Convention::PreparedPM | Convention::PreparedOneWay) {
            return Err(Error::usage("photon numbers only apply to prepared-picture matrices"));
        }
        Self::checked(entries, convention, Some((n_a, n_b)))
    }

    fn checked(entries: Matrix4<f64>, convention: Convention, photon_params: Option<(f64, f64)>) -> Result<Self> {
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("covariance matrix has non-finite entries"));
        }
        let asym = (entries - entries.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::domain(format!("covariance matrix not symmetric (max asymmetry {asym:e})")));
        }
        let min_eig = SymmetricEigen::new(entries).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::domain(format!("covariance matrix not PSD (min eigenvalue {min_eig:e})")));
        }
        if convention == Convention::Wigner {
            let m = uncertainty_min_eigenvalue(&DMatrix::from_iterator(4, 4, entries.iter().copied()));
            if m < -UNCERTAINTY_TOL {
                return Err(Error::domain(format!("violates V + iΩ/2 ⪰ 0 (min eigenvalue {m:e})")));
            }
        }
        Ok(QuadCM { entries, convention, photon_params })
    }

    /// Symmetrizes `entries` before validation. Use for matrices produced by
    /// arithmetic that may leave 1-ulp asymmetries.
    fn derived(entries: Matrix4<f64>, convention: Convention, photon_params: Option<(f64, f64)>) -> Result<Self> {
        Self::checked((entries + entries.transpose()) * 0.5, convention, photon_params)
    }

    pub fn entries(&self) -> &Matrix4<f64> {
        &self.entries
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn photon_params(&self) -> Option<(f64, f64)> {
        self.photon_params
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Row-major entries, the serialized form used by reports.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[4 * i + j] = self.entries[(i, j)];
            }
        }
        out
    }

    fn expect(&self, convention: Convention) -> Result<()> {
        if self.convention != convention {
            return Err(Error::usage(format!("expected a {convention:?} matrix, got {:?}", self.convention)));
        }
        Ok(())
    }
}

/// Heterodyne-outcome CM from the Wigner CM: `V_het = V_W + I/2`.
pub fn het_cm_from_wigner(v: &QuadCM) -> Result<QuadCM> {
    v.expect(Convention::Wigner)?;
    QuadCM::checked(v.entries + Matrix4::identity() * 0.5, Convention::HeterodyneEB, None)
}

/// Inverse of [`het_cm_from_wigner`]; fails if the result is not a physical state.
pub fn wigner_from_het(v: &QuadCM) -> Result<QuadCM> {
    v.expect(Convention::HeterodyneEB)?;
    QuadCM::checked(v.entries - Matrix4::identity() * 0.5, Convention::Wigner, None)
}

fn prep_scale(n: f64) -> Result<f64> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain(format!("photon number must be positive and finite, got {n}")));
    }
    Ok((n / (n + 1.0)).sqrt())
}

fn congruence(v: &Matrix4<f64>, s: [f64; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| s[i] * v[(i, j)] * s[j])
}

/// MDI prepare-and-measure CM from the heterodyne EB CM, congruence by
/// `diag(s_A, −s_A, s_B, −s_B)` with `s = √(N/(N+1))`.
pub fn pm_from_eb_mdi(v: &QuadCM, n_a: f64, n_b: f64) -> Result<QuadCM> {
    v.expect(Convention::HeterodyneEB)?;
    let (sa, sb) = (prep_scale(n_a)?, prep_scale(n_b)?);
    QuadCM::derived(congruence(&v.entries, [sa, -sa, sb, -sb]), Convention::PreparedPM, Some((n_a, n_b)))
}

/// Inverse congruence of [`pm_from_eb_mdi`], using the stored photon numbers.
pub fn eb_from_pm_mdi(v: &QuadCM) -> Result<QuadCM> {
    v.expect(Convention::PreparedPM)?;
    let (n_a, n_b) = v.photon_params.expect("prepared matrices carry photon numbers");
    let (sa, sb) = (prep_scale(n_a)?, prep_scale(n_b)?);
    QuadCM::derived(congruence(&v.entries, [1.0 / sa, -1.0 / sa, 1.0 / sb, -1.0 / sb]), Convention::HeterodyneEB, None)
}

/// One-way protocol: only Alice's block is rescaled.
pub fn pm_from_eb_oneway(v: &QuadCM, n_a: f64) -> Result<QuadCM> {
    v.expect(Convention::HeterodyneEB)?;
    let sa = prep_scale(n_a)?;
    QuadCM::derived(congruence(&v.entries, [sa, -sa, 1.0, 1.0]), Convention::PreparedOneWay, Some((n_a, 0.0)))
}

pub fn eb_from_pm_oneway(v: &QuadCM) -> Result<QuadCM> {
    v.expect(Convention::PreparedOneWay)?;
    let (n_a, _) = v.photon_params.expect("prepared matrices carry photon numbers");
    let sa = prep_scale(n_a)?;
    QuadCM::derived(congruence(&v.entries, [1.0 / sa, -1.0 / sa, 1.0, 1.0]), Convention::HeterodyneEB, None)
}

/// Symplectic form `⊕ [[0, 1], [−1, 0]]` on `m` modes.
pub fn symplectic_form(m: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * m, 2 * m);
    for k in 0..m {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// Smallest eigenvalue of the Hermitian matrix `V + iΩ/2`.
pub fn uncertainty_min_eigenvalue(cm: &DMatrix<f64>) -> f64 {
    let m = cm.nrows() / 2;
    let omega = symplectic_form(m);
    let h = DMatrix::<C64>::from_fn(2 * m, 2 * m, |i, j| C64::new(cm[(i, j)], 0.5 * omega[(i, j)]));
    h.symmetric_eigenvalues().min()
}

/// Symplectic eigenvalues (moduli of the spectrum of `iΩV`), sorted ascending.
pub fn symplectic_eigenvalues(cm: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = cm.nrows();
    if n == 0 || !n.is_multiple_of(2) || cm.ncols() != n {
        return Err(Error::usage("symplectic spectrum needs a square matrix of even size"));
    }
    let eig = SymmetricEigen::new(cm.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -PSD_TOL * scale {
        return Err(Error::domain("symplectic spectrum of a non-PSD matrix"));
    }
    // iΩV is similar to the Hermitian √V (iΩ) √V, whose spectrum is {±ν_k}.
    let sqrt_v = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let omega = symplectic_form(n / 2);
    let h = DMatrix::<C64>::from_fn(n, n, |i, j| {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                acc += C64::new(0.0, sqrt_v[(i, k)] * omega[(k, l)] * sqrt_v[(l, j)]);
            }
        }
        acc
    });
    let mut moduli: Vec<f64> = h.symmetric_eigenvalues().iter().map(|x| x.abs()).collect();
    moduli.sort_by(f64::total_cmp);
    Ok(moduli.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect())
}

/// Result of a single-mode measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    /// Heterodyne outcome `β = (q + i p)/√2`.
    Heterodyne(ComplexSample),
    HomodyneQ(f64),
    HomodyneP(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    Heterodyne,
    HomodyneQ,
    HomodyneP,
}

impl Measurement {
    pub fn kind(&self) -> MeasurementKind {
        match self {
            Measurement::Heterodyne(_) => MeasurementKind::Heterodyne,
            Measurement::HomodyneQ(_) => MeasurementKind::HomodyneQ,
            Measurement::HomodyneP(_) => MeasurementKind::HomodyneP,
        }
    }
}

/// Mean vector and Wigner covariance matrix of `m` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cm: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cm: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || !n.is_multiple_of(2) || cm.nrows() != n || cm.ncols() != n {
            return Err(Error::usage("state needs a mean of length 2m and a 2m×2m covariance matrix"));
        }
        if mean.iter().chain(cm.iter()).any(|x| !x.is_finite()) {
            return Err(Error::domain("state has non-finite entries"));
        }
        let scale = cm.amax().max(1.0);
        if (&cm - cm.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::domain("covariance matrix not symmetric"));
        }
        let m = uncertainty_min_eigenvalue(&cm);
        if m < -UNCERTAINTY_TOL * scale {
            return Err(Error::domain(format!("violates V + iΩ/2 ⪰ 0 (min eigenvalue {m:e})")));
        }
        Ok(GaussianState { mean, cm })
    }

    fn from_parts_unchecked(mean: DVector<f64>, cm: DMatrix<f64>) -> Self {
        let cm = (&cm + cm.transpose()) * 0.5;
        GaussianState { mean, cm }
    }

    pub fn vacuum(modes: usize) -> Self {
        GaussianState { mean: DVector::zeros(2 * modes), cm: DMatrix::identity(2 * modes, 2 * modes) * 0.5 }
    }

    pub fn coherent(alpha: C64) -> Self {
        let s = ComplexSample::from_amplitude(alpha);
        GaussianState { mean: DVector::from_vec(vec![s.q, s.p]), cm: DMatrix::identity(2, 2) * 0.5 }
    }

    pub fn thermal(mean_photons: f64) -> Result<Self> {
        if !(mean_photons >= 0.0) {
            return Err(Error::domain("mean photon number must be non-negative"));
        }
        Ok(GaussianState { mean: DVector::zeros(2), cm: DMatrix::identity(2, 2) * (mean_photons + 0.5) })
    }

    /// Tensor product: modes of `self` first, then those of `other`.
    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let (a, b) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cm = DMatrix::zeros(a + b, a + b);
        cm.view_mut((0, 0), (a, a)).copy_from(&self.cm);
        cm.view_mut((a, a), (b, b)).copy_from(&other.cm);
        GaussianState { mean, cm }
    }

    pub fn mode_count(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cm(&self) -> &DMatrix<f64> {
        &self.cm
    }

    /// Mean photon number of the whole state, `(tr V + |μ|²)/2 − m/2`.
    pub fn mean_photons(&self) -> f64 {
        0.5 * (self.cm.trace() + self.mean.norm_squared()) - 0.5 * self.mode_count() as f64
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.mode_count() {
            return Err(Error::usage(format!("mode {mode} out of range for a {}-mode state", self.mode_count())));
        }
        Ok(())
    }

    /// Reduced state on the given modes, in the given order.
    pub fn reduced(&self, modes: &[usize]) -> Result<GaussianState> {
        for &m in modes {
            self.check_mode(m)?;
        }
        let idx: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cm = self.cm.select_rows(idx.iter()).select_columns(idx.iter());
        Ok(GaussianState { mean, cm })
    }

    /// The 4×4 Wigner CM of a two-mode state.
    pub fn quad_cm(&self) -> Result<QuadCM> {
        if self.mode_count() != 2 {
            return Err(Error::usage("QuadCM needs a two-mode state"));
        }
        QuadCM::checked(Matrix4::from_fn(|i, j| self.cm[(i, j)]), Convention::Wigner, None)
    }

    fn transform(&self, s: &DMatrix<f64>, noise: Option<&DMatrix<f64>>) -> GaussianState {
        let mean = s * &self.mean;
        let mut cm = s * &self.cm * s.transpose();
        if let Some(y) = noise {
            cm += y;
        }
        GaussianState::from_parts_unchecked(mean, cm)
    }
}

/// Two-mode squeezed vacuum with `N` mean photons per mode.
pub fn tmsv_state(mean_photons: f64) -> Result<GaussianState> {
    if !(mean_photons >= 0.0) || !mean_photons.is_finite() {
        return Err(Error::domain(format!("TMSV needs N ≥ 0, got {mean_photons}")));
    }
    let d = mean_photons + 0.5;
    let c = (mean_photons * (mean_photons + 1.0)).sqrt();
    let cm = DMatrix::from_row_slice(
        4,
        4,
        &[
            d, 0.0, c, 0.0, //
            0.0, d, 0.0, -c, //
            c, 0.0, d, 0.0, //
            0.0, -c, 0.0, d,
        ],
    );
    Ok(GaussianState { mean: DVector::zeros(4), cm })
}

/// Beamsplitter on modes `i`, `j`: `out_i = √T in_i + √(1−T) in_j`,
/// `out_j = −√(1−T) in_i + √T in_j`, identically on `q` and `p`.
pub fn apply_beamsplitter(state: &GaussianState, i: usize, j: usize, transmissivity: f64) -> Result<GaussianState> {
    state.check_mode(i)?;
    state.check_mode(j)?;
    if i == j {
        return Err(Error::usage("beamsplitter needs two distinct modes"));
    }
    if !(0.0..=1.0).contains(&transmissivity) {
        return Err(Error::domain(format!("transmissivity must lie in [0, 1], got {transmissivity}")));
    }
    let n = 2 * state.mode_count();
    let (t, r) = (transmissivity.sqrt(), (1.0 - transmissivity).sqrt());
    let mut s = DMatrix::identity(n, n);
    for k in 0..2 {
        let (a, b) = (2 * i + k, 2 * j + k);
        s[(a, a)] = t;
        s[(a, b)] = r;
        s[(b, a)] = -r;
        s[(b, b)] = t;
    }
    Ok(state.transform(&s, None))
}

/// Thermal-loss channel on one mode with transmissivity `T` and excess noise `ξ` in SNU.
pub fn thermal_loss_channel(
    state: &GaussianState,
    mode: usize,
    transmissivity: f64,
    excess_noise: f64,
    convention: ExcessNoiseConvention,
) -> Result<GaussianState> {
    state.check_mode(mode)?;
    if !(transmissivity > 0.0 && transmissivity <= 1.0) {
        return Err(Error::domain(format!("transmissivity must lie in (0, 1], got {transmissivity}")));
    }
    if !(excess_noise >= 0.0) {
        return Err(Error::domain(format!("excess noise must be non-negative, got {excess_noise}")));
    }
    let n = 2 * state.mode_count();
    let mut x = DMatrix::identity(n, n);
    let mut y = DMatrix::zeros(n, n);
    let added = match convention {
        ExcessNoiseConvention::Output => excess_noise / 2.0,
        ExcessNoiseConvention::Input => transmissivity * excess_noise / 2.0,
    };
    for k in [2 * mode, 2 * mode + 1] {
        x[(k, k)] = transmissivity.sqrt();
        y[(k, k)] = (1.0 - transmissivity) / 2.0 + added;
    }
    Ok(state.transform(&x, Some(&y)))
}

/// Displacement `D(γ)`: shifts the mode's mean by `(√2 Re γ, √2 Im γ)`.
pub fn displace(state: &GaussianState, mode: usize, gamma: C64) -> Result<GaussianState> {
    state.check_mode(mode)?;
    if !(gamma.re.is_finite() && gamma.im.is_finite()) {
        return Err(Error::domain("non-finite displacement"));
    }
    let mut out = state.clone();
    out.mean[2 * mode] += SQRT_2 * gamma.re;
    out.mean[2 * mode + 1] += SQRT_2 * gamma.im;
    Ok(out)
}

/// Distribution of a single-mode measurement outcome: the outcome vector
/// (length 2 for heterodyne, 1 for homodyne) and its covariance.
pub fn outcome_distribution(
    state: &GaussianState,
    mode: usize,
    kind: MeasurementKind,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    state.check_mode(mode)?;
    let (q, p) = (2 * mode, 2 * mode + 1);
    Ok(match kind {
        MeasurementKind::Heterodyne => (
            DVector::from_vec(vec![state.mean[q], state.mean[p]]),
            DMatrix::from_row_slice(
                2,
                2,
                &[state.cm[(q, q)] + 0.5, state.cm[(q, p)], state.cm[(p, q)], state.cm[(p, p)] + 0.5],
            ),
        ),
        MeasurementKind::HomodyneQ => {
            (DVector::from_element(1, state.mean[q]), DMatrix::from_element(1, 1, state.cm[(q, q)]))
        }
        MeasurementKind::HomodyneP => {
            (DVector::from_element(1, state.mean[p]), DMatrix::from_element(1, 1, state.cm[(p, p)]))
        }
    })
}

/// Draw a measurement outcome from its exact Gaussian marginal.
pub fn sample_measurement<R: Rng + ?Sized>(
    state: &GaussianState,
    mode: usize,
    kind: MeasurementKind,
    rng: &mut R,
) -> Result<Measurement> {
    let (mean, cov) = outcome_distribution(state, mode, kind)?;
    let x = sample_gaussian(&mean, &cov, rng);
    Ok(match kind {
        MeasurementKind::Heterodyne => Measurement::Heterodyne(ComplexSample::new(x[0], x[1])),
        MeasurementKind::HomodyneQ => Measurement::HomodyneQ(x[0]),
        MeasurementKind::HomodyneP => Measurement::HomodyneP(x[0]),
    })
}

/// Conditional state of the remaining modes after measuring `mode`.
///
/// Heterodyne uses `A − C (B + I/2)⁻¹ Cᵀ`; homodyne uses the projective limit
/// `A − C (Π B Π)⁺ Cᵀ` with the Moore–Penrose pseudo-inverse.
pub fn condition_on_measurement(state: &GaussianState, mode: usize, outcome: Measurement) -> Result<GaussianState> {
    state.check_mode(mode)?;
    let m = state.mode_count();
    if m < 2 {
        return Err(Error::usage("conditioning needs at least two modes"));
    }
    let (q, p) = (2 * mode, 2 * mode + 1);
    let keep: Vec<usize> = (0..2 * m).filter(|&i| i != q && i != p).collect();
    let a = state.cm.select_rows(keep.iter()).select_columns(keep.iter());
    let c = state.cm.select_rows(keep.iter()).select_columns([q, p].iter());
    let b = Matrix2::new(state.cm[(q, q)], state.cm[(q, p)], state.cm[(p, q)], state.cm[(p, p)]);
    let mu_b = Vector2::new(state.mean[q], state.mean[p]);

    let (gain, x) = match outcome {
        Measurement::Heterodyne(s) => {
            if !s.is_finite() {
                return Err(Error::domain("non-finite measurement outcome"));
            }
            let inv = (b + Matrix2::identity() * 0.5)
                .try_inverse()
                .ok_or_else(|| Error::domain("singular heterodyne conditioning matrix"))?;
            (inv, Vector2::new(s.q, s.p))
        }
        Measurement::HomodyneQ(v) | Measurement::HomodyneP(v) => {
            if !v.is_finite() {
                return Err(Error::domain("non-finite measurement outcome"));
            }
            let is_q = matches!(outcome, Measurement::HomodyneQ(_));
            let proj = if is_q { Matrix2::new(1.0, 0.0, 0.0, 0.0) } else { Matrix2::new(0.0, 0.0, 0.0, 1.0) };
            let pinv = (proj * b * proj)
                .pseudo_inverse(1e-300)
                .map_err(|e| Error::domain(format!("pseudo-inverse failed: {e}")))?;
            let x = if is_q { Vector2::new(v, 0.0) } else { Vector2::new(0.0, v) };
            (pinv, x)
        }
    };
    let gain = DMatrix::from_iterator(2, 2, gain.iter().copied());
    let k = &c * gain;
    let cm = &a - &k * c.transpose();
    let shift = DVector::from_iterator(2, (x - mu_b).iter().copied());
    let mean = DVector::from_iterator(keep.len(), keep.iter().map(|&i| state.mean[i])) + &k * shift;
    Ok(GaussianState::from_parts_unchecked(mean, cm))
}

/// Factor `L` with `L Lᵀ = cov` for any PSD `cov` (eigen-based, so singular
/// covariances are allowed).
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -PSD_TOL * scale {
        return Err(Error::domain("covariance is not positive semidefinite"));
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt())))
}

/// One draw from `N(mean, cov)`. Panics if `cov` is not PSD.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let l = psd_factor(cov).expect("sampling covariance must be PSD");
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + l * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_abs_diff_eq;

    fn tmsv_quad(n: f64) -> QuadCM {
        tmsv_state(n).unwrap().quad_cm().unwrap()
    }

    #[test]
    fn tmsv_vacuum_and_purity() {
        let v = tmsv_state(0.0).unwrap();
        assert_abs_diff_eq!(v.cm().clone(), DMatrix::identity(4, 4) * 0.5, epsilon = 1e-15);

        let s = tmsv_state(1.0).unwrap();
        assert_abs_diff_eq!(s.cm()[(0, 0)], 1.5);
        assert_abs_diff_eq!(s.cm()[(0, 2)], 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.cm()[(1, 3)], -(2f64.sqrt()), epsilon = 1e-15);
        for n in [1.0, 10.0] {
            let nu = symplectic_eigenvalues(tmsv_state(n).unwrap().cm()).unwrap();
            assert_eq!(nu.len(), 2);
            for x in nu {
                assert_abs_diff_eq!(x, 0.5, epsilon = 1e-10);
            }
        }
        assert!(tmsv_state(-1.0).is_err());
    }

    #[test]
    fn het_conversion() {
        let vac = GaussianState::vacuum(2).quad_cm().unwrap();
        assert_eq!(*het_cm_from_wigner(&vac).unwrap().entries(), Matrix4::identity());
        let h = het_cm_from_wigner(&tmsv_quad(3.0)).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(h.get(i, i), 4.0, epsilon = 1e-14);
        }
        let back = het_cm_from_wigner(&wigner_from_het(&h).unwrap()).unwrap();
        assert_abs_diff_eq!(back.entries().clone(), h.entries().clone(), epsilon = 1e-14);
        assert!(matches!(het_cm_from_wigner(&h), Err(Error::Usage(_))));
    }

    #[test]
    fn pm_congruences() {
        let n = 10.0;
        let h = het_cm_from_wigner(&tmsv_quad(n)).unwrap();
        // Pair-source het CM: two independent TMSVs measured on A and B.
        let pm = pm_from_eb_mdi(&h, n, n).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(pm.get(i, i), n, epsilon = 1e-12);
        }
        let id = QuadCM::new(Matrix4::identity(), Convention::HeterodyneEB).unwrap();
        let half = pm_from_eb_mdi(&id, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(half.entries().clone(), Matrix4::identity() * 0.5, epsilon = 1e-15);
        let big = pm_from_eb_mdi(&h, 1e15, 1e15).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(big.get(i, i), h.get(i, i), epsilon = 1e-12);
        }
        let back = eb_from_pm_mdi(&pm).unwrap();
        assert_abs_diff_eq!(back.entries().clone(), h.entries().clone(), epsilon = 1e-13);
        assert!(pm_from_eb_mdi(&h, 0.0, 1.0).is_err());

        let one = pm_from_eb_oneway(&id, 1.0).unwrap();
        assert_abs_diff_eq!(
            one.entries().clone(),
            Matrix4::from_diagonal(&nalgebra::Vector4::new(0.5, 0.5, 1.0, 1.0)),
            epsilon = 1e-15
        );
        let inf = pm_from_eb_oneway(&h, 1e300).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let sign = if (i == 1) ^ (j == 1) { -1.0 } else { 1.0 };
                assert_abs_diff_eq!(inf.get(i, j), sign * h.get(i, j), epsilon = 1e-12);
            }
        }
        let rt = eb_from_pm_oneway(&pm_from_eb_oneway(&h, 2.5).unwrap()).unwrap();
        assert_abs_diff_eq!(rt.entries().clone(), h.entries().clone(), epsilon = 1e-13);
    }

    #[test]
    fn invalid_wigner_rejected() {
        let squeezed_too_far = Matrix4::identity() * 0.1;
        assert!(QuadCM::new(squeezed_too_far, Convention::Wigner).is_err());
        assert!(QuadCM::new(squeezed_too_far, Convention::HeterodyneEB).is_ok());
        let mut asym = Matrix4::identity();
        asym[(0, 1)] = 1e-6;
        assert!(QuadCM::new(asym, Convention::HeterodyneEB).is_err());
    }

    #[test]
    fn beamsplitter_limits() {
        let s = tmsv_state(2.0).unwrap().tensor(&GaussianState::coherent(C64::new(1.0, -0.5)));
        let id = apply_beamsplitter(&s, 1, 2, 1.0).unwrap();
        assert_abs_diff_eq!(id.cm().clone(), s.cm().clone(), epsilon = 1e-15);
        assert_abs_diff_eq!(id.mean().clone(), s.mean().clone(), epsilon = 1e-15);

        let swapped = apply_beamsplitter(&s, 1, 2, 0.0).unwrap();
        // out_1 = in_2, out_2 = −in_1
        assert_abs_diff_eq!(swapped.mean()[2], s.mean()[4], epsilon = 1e-15);
        assert_abs_diff_eq!(swapped.mean()[4], -s.mean()[2], epsilon = 1e-15);
        assert_abs_diff_eq!(swapped.cm()[(2, 2)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(swapped.cm()[(4, 4)], 2.5, epsilon = 1e-15);

        let mixed = apply_beamsplitter(&tmsv_state(3.0).unwrap().tensor(&GaussianState::vacuum(1)), 1, 2, 0.5).unwrap();
        assert_abs_diff_eq!(mixed.mean_photons(), 6.0, epsilon = 1e-12);
        assert!(apply_beamsplitter(&s, 1, 2, 1.5).is_err());
        assert!(apply_beamsplitter(&s, 1, 1, 0.5).is_err());
    }

    #[test]
    fn loss_channel() {
        let s = tmsv_state(10.0).unwrap();
        let same = thermal_loss_channel(&s, 1, 1.0, 0.0, ExcessNoiseConvention::Output).unwrap();
        assert_abs_diff_eq!(same.cm().clone(), s.cm().clone(), epsilon = 1e-15);

        let vac = GaussianState::vacuum(1);
        let out = thermal_loss_channel(&vac, 0, 0.3, 0.0, ExcessNoiseConvention::Output).unwrap();
        assert_abs_diff_eq!(out.cm().clone(), vac.cm().clone(), epsilon = 1e-15);

        let t = db_to_transmissivity(1.0);
        let lossy = thermal_loss_channel(&s, 1, t, 0.01, ExcessNoiseConvention::Output).unwrap();
        assert_abs_diff_eq!(lossy.cm()[(2, 2)], t * 10.5 + (1.0 - t) / 2.0 + 0.005, epsilon = 1e-13);
        assert_abs_diff_eq!(lossy.cm()[(0, 2)], t.sqrt() * 110f64.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(lossy.cm()[(0, 0)], 10.5, epsilon = 1e-15);
        let input = thermal_loss_channel(&s, 1, t, 0.01, ExcessNoiseConvention::Input).unwrap();
        assert_abs_diff_eq!(input.cm()[(2, 2)], t * 10.5 + (1.0 - t) / 2.0 + t * 0.005, epsilon = 1e-13);
        assert!(thermal_loss_channel(&s, 1, 0.0, 0.0, ExcessNoiseConvention::Output).is_err());
        assert!(thermal_loss_channel(&s, 1, 0.5, -0.1, ExcessNoiseConvention::Output).is_err());
    }

    #[test]
    fn displacement() {
        let vac = GaussianState::vacuum(1);
        assert_eq!(displace(&vac, 0, C64::new(0.0, 0.0)).unwrap(), vac);
        let d = displace(&vac, 0, C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.mean()[0], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(d.cm(), vac.cm());
        let g = C64::new(0.3, -1.7);
        let s = tmsv_state(2.0).unwrap();
        let back = displace(&displace(&s, 1, g).unwrap(), 1, -g).unwrap();
        assert_abs_diff_eq!(back.mean().clone(), s.mean().clone(), epsilon = 1e-14);
        assert_eq!(back.cm(), s.cm());
    }

    #[test]
    fn tmsv_heterodyne_prepares_coherent_state() {
        for n in [0.0, 1.0, 10.0] {
            let s = tmsv_state(n).unwrap();
            let beta = ComplexSample::from_amplitude(C64::new(0.7, -1.3));
            let c = condition_on_measurement(&s, 0, Measurement::Heterodyne(beta)).unwrap();
            let expected = (n / (n + 1.0)).sqrt() * beta.amplitude().conj();
            let got = ComplexSample::new(c.mean()[0], c.mean()[1]).amplitude();
            assert_abs_diff_eq!(got.re, expected.re, epsilon = 1e-12);
            assert_abs_diff_eq!(got.im, expected.im, epsilon = 1e-12);
            assert_abs_diff_eq!(c.cm().clone(), DMatrix::identity(2, 2) * 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditioning_product_state_and_outcome_independence() {
        let prod = GaussianState::coherent(C64::new(1.0, 2.0)).tensor(&GaussianState::thermal(3.0).unwrap());
        let c = condition_on_measurement(&prod, 1, Measurement::Heterodyne(ComplexSample::new(5.0, -4.0))).unwrap();
        assert_abs_diff_eq!(c.mean().clone(), prod.reduced(&[0]).unwrap().mean().clone(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.cm().clone(), prod.reduced(&[0]).unwrap().cm().clone(), epsilon = 1e-15);

        let s = tmsv_state(4.0).unwrap().tensor(&tmsv_state(2.0).unwrap());
        let s = apply_beamsplitter(&s, 1, 3, 0.5).unwrap();
        for kind in [
            Measurement::HomodyneQ(0.3),
            Measurement::HomodyneP(-2.0),
            Measurement::Heterodyne(ComplexSample::new(1.0, 1.0)),
        ] {
            let other = match kind {
                Measurement::HomodyneQ(_) => Measurement::HomodyneQ(7.0),
                Measurement::HomodyneP(_) => Measurement::HomodyneP(0.1),
                Measurement::Heterodyne(_) => Measurement::Heterodyne(ComplexSample::new(-3.0, 0.2)),
            };
            let a = condition_on_measurement(&s, 1, kind).unwrap();
            let b = condition_on_measurement(&s, 1, other).unwrap();
            assert_abs_diff_eq!(a.cm().clone(), b.cm().clone(), epsilon = 1e-12);
        }
        assert!(condition_on_measurement(&s, 1, Measurement::HomodyneQ(f64::NAN)).is_err());
        assert!(condition_on_measurement(&GaussianState::vacuum(1), 0, Measurement::HomodyneQ(0.0)).is_err());
    }

    /// Brute-force oracle: draw joint samples of (kept modes, outcome) and
    /// regress the kept quadratures on the outcome; the residual covariance is
    /// the conditional CM.
    #[test]
    fn conditioning_matches_monte_carlo() {
        let s = tmsv_state(2.0).unwrap();
        let analytic = condition_on_measurement(&s, 1, Measurement::Heterodyne(ComplexSample::ZERO)).unwrap();
        // Joint Gaussian of (q_A, p_A) Wigner and heterodyne (q_B, p_B).
        let mut joint = s.cm().clone();
        joint[(2, 2)] += 0.5;
        joint[(3, 3)] += 0.5;
        let mut rng = stream(11, Domain::Calibration, 0);
        let trials = 200_000;
        let mean = DVector::zeros(4);
        let l = psd_factor(&joint).unwrap();
        let mut xs = Vec::with_capacity(trials);
        for _ in 0..trials {
            let z = DVector::from_iterator(4, (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)));
            xs.push(&mean + &l * z);
        }
        // Known regression coefficients from the joint model; the residual is what Monte Carlo checks.
        let cab = joint.view((0, 2), (2, 2)).clone_owned();
        let bb = joint.view((2, 2), (2, 2)).clone_owned().try_inverse().unwrap();
        let k = cab * bb;
        let mut acc = [[0.0f64; 2]; 2];
        let mut sq = [[0.0f64; 2]; 2];
        for x in &xs {
            let a = nalgebra::Vector2::new(x[0], x[1]) - &k * nalgebra::Vector2::new(x[2], x[3]);
            for i in 0..2 {
                for j in 0..2 {
                    let v = a[i] * a[j];
                    acc[i][j] += v;
                    sq[i][j] += v * v;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let m = acc[i][j] / trials as f64;
                let se = ((sq[i][j] / trials as f64 - m * m) / trials as f64).sqrt();
                assert!(
                    (m - analytic.cm()[(i, j)]).abs() <= 5.0 * se,
                    "entry ({i},{j}): mc {m} vs {}",
                    analytic.cm()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn symplectic_spectra() {
        assert_abs_diff_eq!(symplectic_eigenvalues(GaussianState::vacuum(1).cm()).unwrap()[0], 0.5, epsilon = 1e-12);
        let th = GaussianState::thermal(3.0).unwrap();
        assert_abs_diff_eq!(symplectic_eigenvalues(th.cm()).unwrap()[0], 3.5, epsilon = 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(symplectic_eigenvalues(&bad).is_err());

        let s = tmsv_state(1.0).unwrap().tensor(&GaussianState::thermal(2.0).unwrap());
        let before = symplectic_eigenvalues(s.cm()).unwrap();
        let after = symplectic_eigenvalues(apply_beamsplitter(&s, 0, 2, 0.3).unwrap().cm()).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}
