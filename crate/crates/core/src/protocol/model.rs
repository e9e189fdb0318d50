use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, Matrix4x2, Matrix6, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{ProtocolParams, Representation};
use super::records::RoundRecord;
use crate::error::Result;
use crate::gaussian::{
    apply_beamsplitter, condition_on_measurement, psd_factor, sample_measurement, thermal_loss_channel, tmsv_state,
    ComplexSample, GaussianState, Measurement, MeasurementKind,
};

/// Honest CV Bell detection on modes `i` and `j`: balanced beamsplitter, then
/// `q` homodyne on output `i` and `p` homodyne on output `j`.
///
/// Returns `z = (q_Z + i p_Z)/√2` and the conditional state of the other modes
/// (in their original order). The state needs at least one mode besides `i`
/// and `j`.
pub fn relay_bell_measurement<R: Rng + ?Sized>(
    state: &GaussianState,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<(ComplexSample, GaussianState)> {
    let mixed = apply_beamsplitter(state, i, j, 0.5)?;
    let q = sample_measurement(&mixed, i, MeasurementKind::HomodyneQ, rng)?;
    let after_q = condition_on_measurement(&mixed, i, q)?;
    let j_left = if j > i { j - 1 } else { j };
    let p = sample_measurement(&after_q, j_left, MeasurementKind::HomodyneP, rng)?;
    let after_p = condition_on_measurement(&after_q, j_left, p)?;
    let (Measurement::HomodyneQ(q_z), Measurement::HomodyneP(p_z)) = (q, p) else {
        unreachable!("homodyne kinds requested above")
    };
    Ok((ComplexSample::new(q_z, p_z), after_p))
}

/// Conditional state after relay outcomes `(q_Z, p_Z)` given explicitly.
fn relay_condition(mixed: &GaussianState, i: usize, j: usize, z: ComplexSample) -> Result<GaussianState> {
    let after_q = condition_on_measurement(mixed, i, Measurement::HomodyneQ(z.q))?;
    let j_left = if j > i { j - 1 } else { j };
    condition_on_measurement(&after_q, j_left, Measurement::HomodyneP(z.p))
}

/// Joint covariance of `(q_i, p_j)` on a state.
fn relay_outcome_cov(mixed: &GaussianState, i: usize, j: usize) -> Matrix2<f64> {
    let cm = mixed.cm();
    let (qi, pj) = (2 * i, 2 * j + 1);
    Matrix2::new(cm[(qi, qi)], cm[(qi, pj)], cm[(pj, qi)], cm[(pj, pj)])
}

fn lossy(state: &GaussianState, mode: usize, t: f64, xi: f64, p: &ProtocolParams) -> Result<GaussianState> {
    thermal_loss_channel(state, mode, t, xi, p.excess_noise_convention)
}

fn factor2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let l = psd_factor(&DMatrix::from_iterator(2, 2, m.iter().copied()))?;
    Ok(Matrix2::from_iterator(l.iter().copied()))
}

fn factor4(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let l = psd_factor(&DMatrix::from_iterator(4, 4, m.iter().copied()))?;
    Ok(Matrix4::from_iterator(l.iter().copied()))
}

/// Entanglement-based relay chain: TMSVs on `[A, A', B, B']`, loss on `A'`, `B'`,
/// relay on modes 1 and 3. The conditional mean of `[A, B]` is linear in `z`.
struct EbChain {
    z_cov: Matrix2<f64>,
    /// Conditional mean of `(q_A, p_A, q_B, p_B)` per unit `(q_Z, p_Z)`.
    regression: Matrix4x2<f64>,
    /// Wigner CM of `[A, B]` given `z`.
    conditional_cm: Matrix4<f64>,
}

impl EbChain {
    fn new(p: &ProtocolParams) -> Result<Self> {
        let s = tmsv_state(p.n_a)?.tensor(&tmsv_state(p.n_b)?);
        let s = lossy(&s, 1, p.transmissivity_a(), p.xi_a, p)?;
        let s = lossy(&s, 3, p.transmissivity_b(), p.xi_b, p)?;
        let mixed = apply_beamsplitter(&s, 1, 3, 0.5)?;
        let z_cov = relay_outcome_cov(&mixed, 1, 3);
        let base = relay_condition(&mixed, 1, 3, ComplexSample::ZERO)?;
        let col_q = relay_condition(&mixed, 1, 3, ComplexSample::new(1.0, 0.0))?;
        let col_p = relay_condition(&mixed, 1, 3, ComplexSample::new(0.0, 1.0))?;
        let mut regression = Matrix4x2::zeros();
        for r in 0..4 {
            regression[(r, 0)] = col_q.mean()[r] - base.mean()[r];
            regression[(r, 1)] = col_p.mean()[r] - base.mean()[r];
        }
        let conditional_cm = Matrix4::from_fn(|a, b| base.cm()[(a, b)]);
        Ok(EbChain { z_cov, regression, conditional_cm })
    }

    /// Gains `(a, b)` that cancel the conditional means of both retained modes.
    fn zeroing_gains(&self) -> (f64, f64) {
        (-self.regression[(0, 0)], -self.regression[(2, 0)])
    }
}

/// Prepare-and-measure relay chain: coherent states on `[A', B']` through the
/// channels, relay on modes 0 and 1. The relay mean is linear in the prepared
/// quadratures and its covariance does not depend on them.
struct PmChain {
    z_cov: Matrix2<f64>,
    /// Mean of `(q_Z, p_Z)` per unit `(q_A⁰, p_A⁰, q_B⁰, p_B⁰)`.
    regression: Matrix2x4<f64>,
}

impl PmChain {
    fn new(p: &ProtocolParams) -> Result<Self> {
        let run = |x0: [f64; 4]| -> Result<GaussianState> {
            let a = GaussianState::coherent(ComplexSample::new(x0[0], x0[1]).amplitude());
            let b = GaussianState::coherent(ComplexSample::new(x0[2], x0[3]).amplitude());
            let s = a.tensor(&b);
            let s = lossy(&s, 0, p.transmissivity_a(), p.xi_a, p)?;
            let s = lossy(&s, 1, p.transmissivity_b(), p.xi_b, p)?;
            apply_beamsplitter(&s, 0, 1, 0.5)
        };
        let base = run([0.0; 4])?;
        let z_cov = relay_outcome_cov(&base, 0, 1);
        let mut regression = Matrix2x4::zeros();
        for c in 0..4 {
            let mut x0 = [0.0; 4];
            x0[c] = 1.0;
            let m = run(x0)?;
            regression[(0, c)] = m.mean()[0] - base.mean()[0];
            regression[(1, c)] = m.mean()[3] - base.mean()[3];
        }
        Ok(PmChain { z_cov, regression })
    }
}

/// Per-round linear-Gaussian sampler for one representation, precomputed from
/// the exact conditioning chain so each round costs O(1).
#[derive(Debug, Clone)]
pub struct RoundModel {
    rep: Representation,
    gain_a: f64,
    gain_b: f64,
    scale_a: f64,
    scale_b: f64,
    z_factor: Matrix2<f64>,
    /// EB: het outcome mean per unit z after displacement. PM: unused.
    eb_gain: Matrix4x2<f64>,
    eb_noise: Matrix4<f64>,
    eb_conditional_cm: Matrix4<f64>,
    eb_z_cov: Matrix2<f64>,
    pm_regression: Matrix2x4<f64>,
    pm_z_cov: Matrix2<f64>,
    prep_sd: Vector4<f64>,
}

impl RoundModel {
    pub fn new(params: &ProtocolParams, rep: Representation) -> Result<Self> {
        params.validate()?;
        let eb = EbChain::new(params)?;
        let pm = PmChain::new(params)?;
        let (a0, b0) = eb.zeroing_gains();
        let gain_a = params.gain_a.unwrap_or(a0);
        let gain_b = params.gain_b.unwrap_or(b0);
        // γ_A = a z shifts (q_A, p_A) by a (q_Z, p_Z); γ_B = b z* shifts (q_B, p_B) by b (q_Z, −p_Z).
        let displacement = Matrix4x2::new(gain_a, 0.0, 0.0, gain_a, gain_b, 0.0, 0.0, -gain_b);
        let het_cov = eb.conditional_cm + Matrix4::identity() * 0.5;
        let z_factor = match rep {
            Representation::Eb => factor2(&eb.z_cov)?,
            Representation::Pm => factor2(&pm.z_cov)?,
        };
        Ok(RoundModel {
            rep,
            gain_a,
            gain_b,
            scale_a: params.scale_a(),
            scale_b: params.scale_b(),
            z_factor,
            eb_gain: eb.regression + displacement,
            eb_noise: factor4(&het_cov)?,
            eb_conditional_cm: eb.conditional_cm,
            eb_z_cov: eb.z_cov,
            pm_regression: pm.regression,
            pm_z_cov: pm.z_cov,
            prep_sd: Vector4::new(params.n_a.sqrt(), params.n_a.sqrt(), params.n_b.sqrt(), params.n_b.sqrt()),
        })
    }

    pub fn representation(&self) -> Representation {
        self.rep
    }

    /// Displacement gains `(a, b)` in effect.
    pub fn gains(&self) -> (f64, f64) {
        (self.gain_a, self.gain_b)
    }

    /// `(a', b') = (√(N_A/(N_A+1)) a, √(N_B/(N_B+1)) b)`
    pub fn scaled_gains(&self) -> (f64, f64) {
        (self.scale_a * self.gain_a, self.scale_b * self.gain_b)
    }

    /// Wigner CM of Alice's and Bob's retained modes given the relay output.
    pub fn conditional_cm(&self) -> Matrix4<f64> {
        self.eb_conditional_cm
    }

    /// Exact covariance of `(q_A, p_A, q_B, p_B, q_Z, p_Z)` of the records this
    /// model produces (heterodyne outcomes for EB, preparation amplitudes for PM).
    pub fn record_covariance(&self) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        match self.rep {
            Representation::Eb => {
                let g = self.eb_gain;
                let xx = g * self.eb_z_cov * g.transpose() + self.eb_conditional_cm + Matrix4::identity() * 0.5;
                let xz = g * self.eb_z_cov;
                out.fixed_view_mut::<4, 4>(0, 0).copy_from(&xx);
                out.fixed_view_mut::<4, 2>(0, 4).copy_from(&xz);
                out.fixed_view_mut::<2, 4>(4, 0).copy_from(&xz.transpose());
                out.fixed_view_mut::<2, 2>(4, 4).copy_from(&self.eb_z_cov);
            }
            Representation::Pm => {
                let c0 = Matrix4::from_diagonal(&self.prep_sd.component_mul(&self.prep_sd));
                let m = self.pm_regression;
                let (ap, bp) = self.scaled_gains();
                let g = Matrix4x2::new(ap, 0.0, 0.0, -ap, bp, 0.0, 0.0, bp);
                let zz = m * c0 * m.transpose() + self.pm_z_cov;
                let x0z = c0 * m.transpose();
                let xx = c0 + x0z * g.transpose() + g * x0z.transpose() + g * zz * g.transpose();
                let xz = x0z + g * zz;
                out.fixed_view_mut::<4, 4>(0, 0).copy_from(&xx);
                out.fixed_view_mut::<4, 2>(0, 4).copy_from(&xz);
                out.fixed_view_mut::<2, 4>(4, 0).copy_from(&xz.transpose());
                out.fixed_view_mut::<2, 2>(4, 4).copy_from(&zz);
            }
        }
        (out + out.transpose()) * 0.5
    }

    fn normals<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> [f64; N] {
        std::array::from_fn(|_| rng.sample(StandardNormal))
    }

    /// Draw one round.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RoundRecord {
        match self.rep {
            Representation::Eb => {
                let z = self.z_factor * Vector2::from(Self::normals::<2, _>(rng));
                let x = self.eb_gain * z + self.eb_noise * Vector4::from(Self::normals::<4, _>(rng));
                RoundRecord {
                    alice: ComplexSample::new(x[0], x[1]),
                    bob: ComplexSample::new(x[2], x[3]),
                    relay_z: ComplexSample::new(z[0], z[1]),
                    alice0: None,
                    bob0: None,
                }
            }
            Representation::Pm => {
                let x0 = self.prep_sd.component_mul(&Vector4::from(Self::normals::<4, _>(rng)));
                let z = self.pm_regression * x0 + self.z_factor * Vector2::from(Self::normals::<2, _>(rng));
                let relay_z = ComplexSample::new(z[0], z[1]);
                let alice0 = ComplexSample::new(x0[0], x0[1]);
                let bob0 = ComplexSample::new(x0[2], x0[3]);
                let (ap, bp) = self.scaled_gains();
                RoundRecord {
                    // α = α⁰ + a' z*, β = β⁰ + b' z
                    alice: ComplexSample::new(alice0.q + ap * relay_z.q, alice0.p - ap * relay_z.p),
                    bob: ComplexSample::new(bob0.q + bp * relay_z.q, bob0.p + bp * relay_z.p),
                    relay_z,
                    alice0: Some(alice0),
                    bob0: Some(bob0),
                }
            }
        }
    }
}

/// EB round through the full state-level chain (no precomputation). Slow; used to
/// cross-check [`RoundModel`].
#[cfg(test)]
pub(crate) fn sample_eb_round_exact<R: Rng + ?Sized>(
    p: &ProtocolParams,
    gains: (f64, f64),
    rng: &mut R,
) -> Result<RoundRecord> {
    use crate::gaussian::displace;
    let s = tmsv_state(p.n_a)?.tensor(&tmsv_state(p.n_b)?);
    let s = lossy(&s, 1, p.transmissivity_a(), p.xi_a, p)?;
    let s = lossy(&s, 3, p.transmissivity_b(), p.xi_b, p)?;
    let (z, ab) = relay_bell_measurement(&s, 1, 3, rng)?;
    let za = z.amplitude();
    let ab = displace(&ab, 0, za * gains.0)?;
    let ab = displace(&ab, 1, za.conj() * gains.1)?;
    let Measurement::Heterodyne(alice) = sample_measurement(&ab, 0, MeasurementKind::Heterodyne, rng)? else {
        unreachable!()
    };
    let b = condition_on_measurement(&ab, 0, Measurement::Heterodyne(alice))?;
    let Measurement::Heterodyne(bob) = sample_measurement(&b, 0, MeasurementKind::Heterodyne, rng)? else {
        unreachable!()
    };
    Ok(RoundRecord { alice, bob, relay_z: z, alice0: None, bob0: None })
}
