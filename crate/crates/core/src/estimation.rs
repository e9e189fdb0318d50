//! Parameter estimation from heterodyne or prepared data.
//!
//! Statistics follow the symmetric covariance form: `C1`, `C2` are the summed
//! `q` and `p` energies of both parties and `C3` the modulus of the signed cross
//! statistic `(1/k) Σ (q_A q_B − p_A p_B)`.
//!
//! Local estimation in the prepare-and-measure picture splits the cross
//! statistic as `C3 = |C31 + C32|`. `C31` involves both parties' prepared
//! amplitudes and is never computed by the protocol; it is bounded instead by
//! its known distribution. `C32` needs only each party's own amplitudes and the
//! public relay outputs, so each party publishes one scalar partial sum.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::energy_test::tree_sum;
use crate::error::{Error, Result};
use crate::gaussian::{eb_from_pm_mdi, wigner_from_het, ComplexSample, Convention, QuadCM};
use crate::protocol::RoundRecord;

/// Prefactor of the failure probability for the heterodyne bounds.
pub const EB_PREFACTOR: f64 = 8.0;
/// Prefactor of the failure probability for local estimation.
pub const LOCAL_PREFACTOR: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    /// Heterodyne samples disclosed by both parties.
    EbPublic,
    /// Prepare-and-measure data processed locally.
    PmLocal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates {
    pub k: u64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// `(1/k) Σ (q_A q_B − p_A p_B)` before taking the modulus.
    pub c3_signed: f64,
    pub c31: Option<f64>,
    pub c32: Option<f64>,
    pub source: EstimateSource,
    /// `(1/k) Σ (q_A² + p_A²)`
    pub energy_a: f64,
    /// `(1/k) Σ (q_B² + p_B²)`
    pub energy_b: f64,
    /// Empirical means of `(q_A, p_A, q_B, p_B)`; diagnostics only.
    pub means: [f64; 4],
}

fn head(records: &[RoundRecord], k: u64) -> Result<&[RoundRecord]> {
    if records.is_empty() {
        return Err(Error::usage("no records"));
    }
    if k == 0 || k as usize > records.len() {
        return Err(Error::usage(format!("need 1 ≤ k ≤ {} records, got k = {k}", records.len())));
    }
    Ok(&records[..k as usize])
}

/// Statistics of the first `k` records.
pub fn compute_moments(records: &[RoundRecord], k: u64) -> Result<MomentEstimates> {
    let r = head(records, k)?;
    let kf = k as f64;
    let mean = |f: &(dyn Fn(&RoundRecord) -> f64 + Sync)| tree_sum(r, &f) / kf;
    let qa2 = mean(&|x| x.alice.q * x.alice.q);
    let pa2 = mean(&|x| x.alice.p * x.alice.p);
    let qb2 = mean(&|x| x.bob.q * x.bob.q);
    let pb2 = mean(&|x| x.bob.p * x.bob.p);
    let signed = mean(&|x| x.alice.q * x.bob.q - x.alice.p * x.bob.p);
    let pm = r.iter().all(|x| x.alice0.is_some() && x.bob0.is_some());
    let means = [mean(&|x| x.alice.q), mean(&|x| x.alice.p), mean(&|x| x.bob.q), mean(&|x| x.bob.p)];
    Ok(MomentEstimates {
        k,
        c1: qa2 + qb2,
        c2: pa2 + pb2,
        c3: signed.abs(),
        c3_signed: signed,
        c31: None,
        c32: None,
        source: if pm { EstimateSource::PmLocal } else { EstimateSource::EbPublic },
        energy_a: qa2 + pa2,
        energy_b: qb2 + pb2,
        means,
    })
}

/// Bounds on the entries of the symmetric covariance form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CMBounds {
    /// Upper bound on `E[q_A²] + E[p_A²]`.
    pub sum_a_upper: f64,
    pub sum_b_upper: f64,
    /// Lower bound on `|E[q_A q_B] − E[p_A p_B]|`, clamped at 0.
    pub corr_lower: f64,
    /// The lower bound before clamping.
    pub corr_lower_raw: f64,
    /// Set when the correlation bound was negative and clamped.
    pub uninformative: bool,
    pub t: f64,
    pub confidence: f64,
    pub k: u64,
    pub source: EstimateSource,
    /// `(N_A, N_B)` for prepared-picture bounds.
    pub photon_params: Option<(f64, f64)>,
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("t must be in (0, 1), got {t}")))
    }
}

fn confidence(c: f64, k: u64, t: f64) -> f64 {
    1.0 - c * (-(k as f64) * t * t / 8.0).exp()
}

/// Heterodyne bounds from publicly disclosed samples; hold with probability at
/// least `1 − 8 e^{−k t²/8}`.
pub fn eb_bounds(moments: &MomentEstimates, t: f64) -> Result<CMBounds> {
    check_t(t)?;
    let energy = moments.energy_a + moments.energy_b;
    let raw = (moments.c3 - t * energy / 2.0) / (1.0 - t * t);
    Ok(CMBounds {
        sum_a_upper: moments.energy_a / (1.0 - t),
        sum_b_upper: moments.energy_b / (1.0 - t),
        corr_lower: raw.max(0.0),
        corr_lower_raw: raw,
        uninformative: raw <= 0.0,
        t,
        confidence: confidence(EB_PREFACTOR, moments.k, t),
        k: moments.k,
        source: moments.source,
        photon_params: None,
    })
}

fn prepared_pair(r: &RoundRecord) -> Result<(ComplexSample, ComplexSample)> {
    match (r.alice0, r.bob0) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::usage("missing pre-displacement amplitudes (not a prepare-and-measure run)")),
    }
}

/// `(C31, C32)` over the first `k` records, with `a'`, `b'` the scaled gains.
pub fn decompose_c3(records: &[RoundRecord], k: u64, a_prime: f64, b_prime: f64) -> Result<(f64, f64)> {
    let r = head(records, k)?;
    for x in r {
        prepared_pair(x)?;
    }
    let kf = k as f64;
    let c31 = tree_sum(r, &|x: &RoundRecord| {
        let (a, b) = (x.alice0.unwrap_or_default(), x.bob0.unwrap_or_default());
        a.q * b.q - a.p * b.p
    }) / kf;
    let c32 = tree_sum(r, &|x: &RoundRecord| {
        let (a, b) = (x.alice0.unwrap_or_default(), x.bob0.unwrap_or_default());
        let z = x.relay_z;
        a_prime * (z.q * b.q + z.p * b.p)
            + b_prime * (a.q * z.q - a.p * z.p)
            + a_prime * b_prime * (z.q * z.q + z.p * z.p)
    }) / kf;
    Ok((c31, c32))
}

/// Moments of prepare-and-measure records including the `C3` split.
pub fn compute_pm_moments(records: &[RoundRecord], k: u64, a_prime: f64, b_prime: f64) -> Result<MomentEstimates> {
    let (c31, c32) = decompose_c3(records, k, a_prime, b_prime)?;
    let mut m = compute_moments(records, k)?;
    m.c31 = Some(c31);
    m.c32 = Some(c32);
    m.source = EstimateSource::PmLocal;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
}

/// What one party holds: its own prepared amplitudes and the public relay outputs.
#[derive(Debug, Clone, Copy)]
pub struct PartyView<'a> {
    pub party: Party,
    /// Pre-displacement amplitudes `α⁰` or `β⁰`.
    pub prepared: &'a [ComplexSample],
    pub relay: &'a [ComplexSample],
}

/// The two scalars a party publishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSummary {
    pub party: Party,
    pub k: u64,
    /// `(1/k) Σ (q² + p²)` of the party's displaced amplitudes.
    pub energy: f64,
    /// Alice: `b' (1/k) Σ (q_A⁰ q_Z − p_A⁰ p_Z)`. Bob: `a' (1/k) Σ (q_Z q_B⁰ + p_Z p_B⁰)`.
    pub partial_c32: f64,
}

impl PartyView<'_> {
    /// Split records into the two one-sided views. `prepared` buffers are filled
    /// from the records and must outlive the views.
    pub fn split(records: &[RoundRecord]) -> Result<(Vec<ComplexSample>, Vec<ComplexSample>, Vec<ComplexSample>)> {
        let mut a = Vec::with_capacity(records.len());
        let mut b = Vec::with_capacity(records.len());
        for r in records {
            let (x, y) = prepared_pair(r)?;
            a.push(x);
            b.push(y);
        }
        Ok((a, b, records.iter().map(|r| r.relay_z).collect()))
    }

    /// Local computation over the first `k` rounds with scaled gains `(a', b')`.
    pub fn summarize(&self, k: u64, a_prime: f64, b_prime: f64) -> Result<LocalSummary> {
        if k == 0 || k as usize > self.prepared.len() || self.prepared.len() != self.relay.len() {
            return Err(Error::usage("party view sizes do not match k"));
        }
        let idx: Vec<usize> = (0..k as usize).collect();
        let kf = k as f64;
        let (own, z) = (self.prepared, self.relay);
        let (energy, partial) = match self.party {
            Party::Alice => (
                // α = α⁰ + a' z*
                tree_sum(&idx, &|&j| (own[j].q + a_prime * z[j].q).powi(2) + (own[j].p - a_prime * z[j].p).powi(2)),
                b_prime * tree_sum(&idx, &|&j| own[j].q * z[j].q - own[j].p * z[j].p),
            ),
            Party::Bob => (
                // β = β⁰ + b' z
                tree_sum(&idx, &|&j| (own[j].q + b_prime * z[j].q).powi(2) + (own[j].p + b_prime * z[j].p).powi(2)),
                a_prime * tree_sum(&idx, &|&j| z[j].q * own[j].q + z[j].p * own[j].p),
            ),
        };
        Ok(LocalSummary { party: self.party, k, energy: energy / kf, partial_c32: partial / kf })
    }
}

/// `a'b' (1/k) Σ (q_Z² + p_Z²)`, computable by anyone from the relay outputs.
pub fn public_c32_term(relay: &[ComplexSample], k: u64, a_prime: f64, b_prime: f64) -> Result<f64> {
    if k == 0 || k as usize > relay.len() {
        return Err(Error::usage("k exceeds relay record count"));
    }
    Ok(a_prime * b_prime * tree_sum(&relay[..k as usize], &|z| z.q * z.q + z.p * z.p) / k as f64)
}

/// Combine the published scalars into bounds holding with probability at least
/// `1 − 12 e^{−k t²/8}`.
pub fn combine_local(
    alice: &LocalSummary,
    bob: &LocalSummary,
    public_term: f64,
    n_a: f64,
    n_b: f64,
    t: f64,
) -> Result<CMBounds> {
    check_t(t)?;
    if alice.party != Party::Alice || bob.party != Party::Bob || alice.k != bob.k {
        return Err(Error::usage("need one Alice and one Bob summary over the same k"));
    }
    let c32 = alice.partial_c32 + bob.partial_c32 + public_term;
    let energy = alice.energy + bob.energy;
    let raw = (c32.abs() - t * (n_a + n_b) - t * energy / 2.0) / (1.0 - t * t);
    Ok(CMBounds {
        sum_a_upper: alice.energy / (1.0 - t),
        sum_b_upper: bob.energy / (1.0 - t),
        corr_lower: raw.max(0.0),
        corr_lower_raw: raw,
        uninformative: raw <= 0.0,
        t,
        confidence: confidence(LOCAL_PREFACTOR, alice.k, t),
        k: alice.k,
        source: EstimateSource::PmLocal,
        photon_params: Some((n_a, n_b)),
    })
}

/// Local estimation end to end: split into one-sided views, summarize each,
/// combine. `k = n` uses every round.
pub fn local_pe_bounds(
    records: &[RoundRecord],
    k: u64,
    n_a: f64,
    n_b: f64,
    a_prime: f64,
    b_prime: f64,
    t: f64,
) -> Result<CMBounds> {
    check_t(t)?;
    head(records, k)?;
    let (a0, b0, z) = PartyView::split(&records[..k as usize])?;
    let alice = PartyView { party: Party::Alice, prepared: &a0, relay: &z }.summarize(k, a_prime, b_prime)?;
    let bob = PartyView { party: Party::Bob, prepared: &b0, relay: &z }.summarize(k, a_prime, b_prime)?;
    combine_local(&alice, &bob, public_c32_term(&z, k, a_prime, b_prime)?, n_a, n_b, t)
}

/// Worst-case covariance built from bounds.
#[derive(Debug, Clone)]
pub struct AssembledCM {
    pub cm: QuadCM,
    /// Correlation actually used (may be below `corr_lower` if shrunk).
    pub corr: f64,
    /// The correlation was reduced to keep the matrix physical.
    pub shrunk: bool,
    /// A diagonal entry was raised to the smallest physical value.
    pub diagonal_raised: bool,
}

/// `½ [[s_A,0,c,0],[0,s_A,0,−c],[c,0,s_B,0],[0,−c,0,s_B]]` from the bounds, as a
/// heterodyne CM (public estimation) or prepared CM (local estimation).
pub fn symmetric_cm_assembly(bounds: &CMBounds) -> Result<AssembledCM> {
    let build = |sa: f64, sb: f64, c: f64| -> Result<QuadCM> {
        let m = Matrix4::new(sa, 0.0, c, 0.0, 0.0, sa, 0.0, -c, c, 0.0, sb, 0.0, 0.0, -c, 0.0, sb) * 0.5;
        match bounds.photon_params {
            None => QuadCM::new(m, Convention::HeterodyneEB),
            Some((na, nb)) => QuadCM::prepared(m, Convention::PreparedPM, na, nb),
        }
    };
    let physical = |cm: &QuadCM| -> bool {
        let het = match cm.convention() {
            Convention::PreparedPM => eb_from_pm_mdi(cm),
            _ => Ok(cm.clone()),
        };
        het.and_then(|h| wigner_from_het(&h)).is_ok()
    };
    // Vacuum: heterodyne variance 1 per quadrature, prepared variance N/(N+1).
    let (floor_a, floor_b) = match bounds.photon_params {
        None => (2.0, 2.0),
        Some((na, nb)) => (2.0 * na / (na + 1.0), 2.0 * nb / (nb + 1.0)),
    };
    let (sa, sb) = (bounds.sum_a_upper.max(floor_a), bounds.sum_b_upper.max(floor_b));
    let diagonal_raised = sa > bounds.sum_a_upper || sb > bounds.sum_b_upper;
    let c = bounds.corr_lower;
    if let Ok(cm) = build(sa, sb, c) {
        if physical(&cm) {
            return Ok(AssembledCM { cm, corr: c, shrunk: false, diagonal_raised });
        }
    }
    let (mut lo, mut hi) = (0.0, c);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if build(sa, sb, mid).map(|m| physical(&m)).unwrap_or(false) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AssembledCM { cm: build(sa, sb, lo)?, corr: lo, shrunk: true, diagonal_raised })
}
