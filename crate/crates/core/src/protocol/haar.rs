//! Haar-random unitaries on `C^n` for the symmetrization step.
//!
//! [`HaarUnitary`] never stores the matrix. It keeps only `(n, seed)` and
//! regenerates the Householder reflectors of `U = H_0 H_1 ⋯ H_{n-1} D` on the
//! fly, so applying it costs O(n²) time and O(n) memory.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::records::RoundRecord;
use crate::error::{Error, Result};
use crate::gaussian::{ComplexSample, C64};
use crate::rng::{stream, Domain};

/// Linear action of a unitary on amplitude vectors.
pub trait UnitaryAction {
    fn dim(&self) -> usize;

    /// `x ← U x`
    fn apply(&self, x: &mut [C64]);

    /// `x ← U* x` (entrywise conjugate, not adjoint)
    fn apply_conj(&self, x: &mut [C64]);

    /// `x ← U x`, `y ← U* y` in one pass.
    fn apply_pair(&self, x: &mut [C64], y: &mut [C64]) {
        self.apply(x);
        self.apply_conj(y);
    }
}

/// Factored Haar unitary (Stewart's algorithm with the Mezzadri phase fix).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaarUnitary {
    n: usize,
    seed: u64,
}

struct Reflector {
    /// Householder vector on coordinates `j..n`, normalised so `H = I − 2 v v†`.
    v: Vec<C64>,
    /// Diagonal phase `D_j`.
    phase: C64,
}

impl HaarUnitary {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("unitary dimension must be positive"));
        }
        Ok(HaarUnitary { n, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn reflector(&self, j: usize) -> Reflector {
        let mut rng = stream(self.seed, Domain::Haar, j as u64);
        let len = self.n - j;
        let mut x: Vec<C64> = (0..len)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            })
            .collect();
        let norm = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let phase = if x[0].norm() > 0.0 { x[0] / x[0].norm() } else { C64::new(1.0, 0.0) };
        x[0] += phase * norm;
        let vnorm = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for c in &mut x {
                *c /= vnorm;
            }
        }
        Reflector { v: x, phase: -phase }
    }

    fn reflect(v: &[C64], y: &mut [C64], conjugate: bool) {
        // H y = y − 2 v (v† y); for H* use conj(v).
        let dot: C64 = if conjugate {
            v.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
        } else {
            v.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
        };
        for (yi, vi) in y.iter_mut().zip(v) {
            let vi = if conjugate { vi.conj() } else { *vi };
            *yi -= vi * dot * 2.0;
        }
    }

    fn run(&self, mut x: Option<&mut [C64]>, mut y: Option<&mut [C64]>) {
        for j in (0..self.n).rev() {
            let r = self.reflector(j);
            if let Some(x) = x.as_deref_mut() {
                x[j] *= r.phase;
                Self::reflect(&r.v, &mut x[j..], false);
            }
            if let Some(y) = y.as_deref_mut() {
                y[j] *= r.phase.conj();
                Self::reflect(&r.v, &mut y[j..], true);
            }
        }
    }

    /// Materialise `U`. Only sensible for small `n`.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let mut col = vec![C64::new(0.0, 0.0); self.n];
        for c in 0..self.n {
            col.iter_mut().for_each(|e| *e = C64::new(0.0, 0.0));
            col[c] = C64::new(1.0, 0.0);
            self.apply(&mut col);
            for r in 0..self.n {
                m[(r, c)] = col[r];
            }
        }
        m
    }
}

impl UnitaryAction for HaarUnitary {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.n, "vector length must match unitary dimension");
        self.run(Some(x), None);
    }

    fn apply_conj(&self, x: &mut [C64]) {
        assert_eq!(x.len(), self.n, "vector length must match unitary dimension");
        self.run(None, Some(x));
    }

    fn apply_pair(&self, x: &mut [C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n, "vector length must match unitary dimension");
        assert_eq!(y.len(), self.n, "vector length must match unitary dimension");
        self.run(Some(x), Some(y));
    }
}

/// An explicit unitary matrix, e.g. for tests with hand-chosen `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseUnitary(pub DMatrix<C64>);

impl UnitaryAction for DenseUnitary {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &mut [C64]) {
        let v = &self.0 * nalgebra::DVector::from_column_slice(x);
        x.copy_from_slice(v.as_slice());
    }

    fn apply_conj(&self, x: &mut [C64]) {
        let v = self.0.map(|c| c.conj()) * nalgebra::DVector::from_column_slice(x);
        x.copy_from_slice(v.as_slice());
    }
}

/// Which party's data gets `U` and which gets `U*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideConvention {
    /// `α ← U α`, `β ← U* β` on heterodyne outcomes.
    EntanglementBased,
    /// `α ← U* α`, `β ← U β` on prepared amplitudes.
    PrepareAndMeasure,
}

/// Rotate Alice's and Bob's columns of `records` in place. Relay outputs are
/// left as they are; the pre-displacement preparation fields are cleared since
/// they no longer correspond to the rotated data.
pub fn symmetrize<U: UnitaryAction>(records: &mut [RoundRecord], unitary: &U, side: SideConvention) -> Result<()> {
    if records.len() != unitary.dim() {
        return Err(Error::usage(format!(
            "unitary dimension {} does not match {} records",
            unitary.dim(),
            records.len()
        )));
    }
    let mut alpha: Vec<C64> = records.iter().map(|r| r.alice.amplitude()).collect();
    let mut beta: Vec<C64> = records.iter().map(|r| r.bob.amplitude()).collect();
    match side {
        SideConvention::EntanglementBased => unitary.apply_pair(&mut alpha, &mut beta),
        SideConvention::PrepareAndMeasure => unitary.apply_pair(&mut beta, &mut alpha),
    }
    for ((r, a), b) in records.iter_mut().zip(alpha).zip(beta) {
        r.alice = ComplexSample::from_amplitude(a);
        r.bob = ComplexSample::from_amplitude(b);
        r.alice0 = None;
        r.bob0 = None;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
        let n = u.nrows();
        (u.adjoint() * u - DMatrix::<C64>::identity(n, n)).iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    /// Reference sampler: QR of a complex Ginibre matrix with `R`'s diagonal phases
    /// moved into `Q`.
    fn ginibre_qr(n: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = stream(seed, Domain::Calibration, 99);
        let z = DMatrix::from_fn(n, n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re, im)
        });
        let qr = z.qr();
        let (q, r) = (qr.q(), qr.r());
        let d = DMatrix::from_diagonal(&r.diagonal().map(|e| e / e.norm()));
        q * d
    }

    #[test]
    fn dense_form_is_unitary() {
        for n in [1, 2, 5, 17] {
            let u = HaarUnitary::new(n, 7).unwrap().to_dense();
            assert!(unitarity_defect(&u) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn factored_action_matches_dense() {
        let h = HaarUnitary::new(9, 3).unwrap();
        let u = h.to_dense();
        let x: Vec<C64> = (0..9).map(|i| c(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let mut fx = x.clone();
        let mut fy = x.clone();
        h.apply_pair(&mut fx, &mut fy);
        let dx = &u * nalgebra::DVector::from_vec(x.clone());
        let dy = u.map(|e| e.conj()) * nalgebra::DVector::from_vec(x);
        for i in 0..9 {
            assert_abs_diff_eq!((fx[i] - dx[i]).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!((fy[i] - dy[i]).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_unitary() {
        let a = HaarUnitary::new(6, 11).unwrap().to_dense();
        let b = HaarUnitary::new(6, 11).unwrap().to_dense();
        let d = HaarUnitary::new(6, 12).unwrap().to_dense();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    /// Low moments of a single entry: E|U11|² = 1/n, E|U11|⁴ = 2/(n(n+1)).
    /// The QR reference must agree with the same moments.
    #[test]
    fn entry_moments_match_haar() {
        let n = 4;
        let trials = 20_000;
        let (mut m2, mut m4, mut r2) = (0.0, 0.0, 0.0);
        for s in 0..trials {
            let u = HaarUnitary::new(n, s).unwrap().to_dense();
            let e = u[(0, 0)].norm_sqr();
            m2 += e;
            m4 += e * e;
            r2 += ginibre_qr(n, s)[(1, 2)].norm_sqr();
        }
        let t = trials as f64;
        let (m2, m4, r2) = (m2 / t, m4 / t, r2 / t);
        let nf = n as f64;
        let want4 = 2.0 / (nf * (nf + 1.0));
        // Var|U11|² = want4 − 1/n² = 0.0375 for n = 4.
        let se2 = (want4 - 1.0 / (nf * nf)).sqrt() / t.sqrt();
        assert!((m2 - 1.0 / nf).abs() < 5.0 * se2, "{m2}");
        assert!((r2 - 1.0 / nf).abs() < 5.0 * se2, "{r2}");
        assert!((m4 - want4).abs() < 0.01, "{m4}");
    }

    #[test]
    fn off_diagonal_products_are_centered() {
        // E[U11 conj(U21)] = 0 and the phase of U11 is uniform.
        let trials = 10_000;
        let mut acc = c(0.0, 0.0);
        let mut phase = c(0.0, 0.0);
        for s in 0..trials {
            let u = HaarUnitary::new(3, s).unwrap().to_dense();
            acc += u[(0, 0)] * u[(1, 0)].conj();
            phase += u[(0, 0)] / u[(0, 0)].norm();
        }
        assert!(acc.norm() / (trials as f64) < 0.01);
        assert!(phase.norm() / (trials as f64) < 0.04);
    }

    #[test]
    fn symmetrize_rejects_mismatch() {
        let mut recs = vec![RoundRecord::default(); 3];
        let u = HaarUnitary::new(4, 0).unwrap();
        assert!(symmetrize(&mut recs, &u, SideConvention::EntanglementBased).is_err());
    }

    #[test]
    fn permutation_unitary_permutes() {
        let mut recs: Vec<RoundRecord> = (0..3)
            .map(|i| RoundRecord {
                alice: ComplexSample::new(i as f64, 0.0),
                bob: ComplexSample::new(0.0, i as f64),
                ..Default::default()
            })
            .collect();
        let mut p = DMatrix::zeros(3, 3);
        p[(0, 2)] = c(0.0, 1.0);
        p[(1, 0)] = c(1.0, 0.0);
        p[(2, 1)] = c(1.0, 0.0);
        symmetrize(&mut recs, &DenseUnitary(p), SideConvention::EntanglementBased).unwrap();
        // α_0 ← i α_2, β_0 ← −i β_2
        assert_abs_diff_eq!(recs[0].alice.p, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recs[0].bob.q, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recs[1].alice.q, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recs[2].bob.p, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Norms of α and β and the correlation Σ α_i β_i are invariant under (U, U*).
        #[test]
        fn symmetrization_invariants(seed in any::<u64>(), n in 1usize..24, vals in prop::collection::vec(-5.0f64..5.0, 96)) {
            let mut recs: Vec<RoundRecord> = (0..n)
                .map(|i| RoundRecord {
                    alice: ComplexSample::new(vals[4 * i], vals[4 * i + 1]),
                    bob: ComplexSample::new(vals[4 * i + 2], vals[4 * i + 3]),
                    relay_z: ComplexSample::new(1.0, 2.0),
                    alice0: Some(ComplexSample::ZERO),
                    bob0: None,
                })
                .collect();
            let stats = |r: &[RoundRecord]| {
                let na: f64 = r.iter().map(|x| x.alice.energy()).sum();
                let nb: f64 = r.iter().map(|x| x.bob.energy()).sum();
                let cr: C64 = r.iter().map(|x| x.alice.amplitude() * x.bob.amplitude()).sum();
                (na, nb, cr)
            };
            let before = stats(&recs);
            let u = HaarUnitary::new(n, seed).unwrap();
            symmetrize(&mut recs, &u, SideConvention::EntanglementBased).unwrap();
            let after = stats(&recs);
            prop_assert!((before.0 - after.0).abs() < 1e-9 * (1.0 + before.0));
            prop_assert!((before.1 - after.1).abs() < 1e-9 * (1.0 + before.1));
            prop_assert!((before.2 - after.2).norm() < 1e-9 * (1.0 + before.2.norm()));
            prop_assert!(recs.iter().all(|r| r.relay_z == ComplexSample::new(1.0, 2.0) && r.alice0.is_none()));
        }
    }
}
