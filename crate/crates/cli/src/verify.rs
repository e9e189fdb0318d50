//! Invariant suite behind `cvmdi verify`.
//!
//! Checks marked `known` cannot hold as stated; they are run and printed as FAIL
//! but do not change the exit status.

use std::time::Instant;

use nalgebra::Matrix4;
use rand::Rng;

use cvmdi::energy_test::{exceedance, fig1_curve, half_block_ratios, log_grid, mean_energies, Fig1Scheme};
use cvmdi::estimation::{compute_moments, compute_pm_moments, local_pe_bounds};
use cvmdi::gaussian::{
    condition_on_measurement, eb_from_pm_mdi, het_cm_from_wigner, pm_from_eb_mdi, tmsv_state, wigner_from_het,
    ComplexSample, Convention, Measurement, QuadCM,
};
use cvmdi::keyrate::{fig2_curve, fig2_default_params, model_asymptotic_rate, Scheme, DEFAULT_BETA, DEFAULT_EPSILON};
use cvmdi::protocol::{
    read_records, simulate, simulate_eb, simulate_pm, simulate_to_file, symmetrize, HaarUnitary, ProtocolParams,
    Representation, RoundModel, RoundRecord, SideConvention,
};
use cvmdi::rng::{derive_seed, stream, Domain};
use cvmdi::tail_bounds::{reference_model, tailcheck};

use crate::Failure;

struct Check {
    name: &'static str,
    known: bool,
    run: fn(u64) -> (bool, String),
}

fn caption(rounds: u64, seed: u64) -> ProtocolParams {
    ProtocolParams::symmetric(10.0, 1.0, 0.01, rounds, seed)
}

fn cm_round_trips(_: u64) -> (bool, String) {
    let mut rng = stream(1, Domain::Calibration, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = Matrix4::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let w = QuadCM::new(a * a.transpose() + Matrix4::identity() * 0.5, Convention::Wigner).expect("physical");
        let het = het_cm_from_wigner(&w).expect("valid");
        worst = worst.max((wigner_from_het(&het).expect("valid").entries() - w.entries()).norm());
        let (n_a, n_b) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0));
        let back = eb_from_pm_mdi(&pm_from_eb_mdi(&het, n_a, n_b).expect("valid")).expect("valid");
        worst = worst.max((back.entries() - het.entries()).norm());
    }
    (worst <= 1e-12, format!("max Frobenius error {worst:.1e}"))
}

fn tmsv_conditioning(_: u64) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for n in [0.0, 1.0, 10.0] {
        let s = tmsv_state(n).expect("valid");
        let beta = ComplexSample::new(1.3, -0.4);
        let c = condition_on_measurement(&s, 0, Measurement::Heterodyne(beta)).expect("valid");
        let got = ComplexSample::new(c.mean()[0], c.mean()[1]).amplitude();
        worst = worst.max((got - beta.amplitude().conj() * (n / (n + 1.0)).sqrt()).norm());
        worst = worst.max((c.cm()[(0, 0)] - 0.5).abs()).max((c.cm()[(1, 1)] - 0.5).abs()).max(c.cm()[(0, 1)].abs());
    }
    (worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn tail_bounds(scale: u64) -> (bool, String) {
    let rows = tailcheck(500, 0.4, 200_000 / scale, &reference_model(), 3).expect("valid");
    let bad: Vec<_> = rows.iter().filter(|r| !r.passes(3.0)).map(|r| r.id.name()).collect();
    (bad.is_empty(), format!("{} bounds, failing {bad:?}", rows.len()))
}

fn half_block(scale: u64) -> (bool, String) {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for n in [128usize, 512] {
        let mut recs = vec![RoundRecord::default(); n];
        recs[0].alice = ComplexSample::new(1.0, 0.0);
        let ratios = half_block_ratios(&recs, 10_000 / scale, n as u64).expect("valid");
        for eps in [0.1, 0.01] {
            let e = exceedance(&ratios, n, eps).expect("valid");
            ok &= e.within(eps, 3.0);
            worst = worst.max(e.rate / eps);
        }
    }
    (ok, format!("worst exceedance/ε {worst:.3}"))
}

fn fig1_ordering(_: u64) -> (bool, String) {
    let grid = log_grid(1e6, 1e10, 41);
    let schemes = Fig1Scheme::default_set();
    let rows = fig1_curve(&grid, &schemes, 1e-20).expect("valid");
    let ordered = (0..grid.len()).all(|i| {
        let v: Option<Vec<f64>> = (0..schemes.len()).map(|s| rows[s * grid.len() + i].normalized_dimension).collect();
        v.is_some_and(|v| v.windows(2).all(|w| w[0] < w[1]))
    });
    let at = Fig1Scheme::Efficient.normalized_dimension(1e8, 1e-20).expect("valid");
    (ordered && (at - 1.00147).abs() < 1e-5, format!("ordered {ordered}, efficient(1e8) {at:.6}"))
}

fn record_file(_: u64) -> (bool, String) {
    let dir = std::env::temp_dir().join(format!("cvmdi-verify-{}", std::process::id()));
    let run = || -> Result<bool, cvmdi::Error> {
        std::fs::create_dir_all(&dir)?;
        let p = caption(10_000, 5);
        let path = dir.join("r.bin");
        simulate_to_file(&p, Representation::Pm, &path)?;
        let (_, back) = read_records(&path)?;
        Ok(back == simulate(&p, Representation::Pm)?)
    };
    let same = run();
    let _ = std::fs::remove_dir_all(&dir);
    match same {
        Ok(same) => (same, format!("file matches in-memory run: {same}")),
        Err(e) => (false, e.to_string()),
    }
}

fn eb_pm_equivalence(scale: u64) -> (bool, String) {
    let p = caption(100_000 / scale, 0);
    let (sa, sb) = (p.scale_a(), p.scale_b());
    let eb = simulate_eb(&p.clone().with_seed(11)).expect("valid");
    let pm = simulate_pm(&p.clone().with_seed(12)).expect("valid");
    let n = eb.len() as f64;
    let vec_eb =
        |r: &RoundRecord| [sa * r.alice.q, -sa * r.alice.p, sb * r.bob.q, -sb * r.bob.p, r.relay_z.q, r.relay_z.p];
    let vec_pm = |r: &RoundRecord| [r.alice.q, r.alice.p, r.bob.q, r.bob.p, r.relay_z.q, r.relay_z.p];
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        for j in i..6 {
            let stats = |xs: Vec<f64>| {
                let m = xs.iter().sum::<f64>() / n;
                (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n * n))
            };
            let (m1, v1) = stats(eb.iter().map(|r| vec_eb(r)[i] * vec_eb(r)[j]).collect());
            let (m2, v2) = stats(pm.iter().map(|r| vec_pm(r)[i] * vec_pm(r)[j]).collect());
            worst = worst.max((m1 - m2).abs() / (v1 + v2).sqrt());
        }
    }
    (worst <= 5.0, format!("worst second moment {worst:.2} SE"))
}

fn c3_identity(scale: u64) -> (bool, String) {
    let p = caption(1_000_000 / scale, 21);
    let (ap, bp) = RoundModel::new(&p, Representation::Pm).expect("valid").scaled_gains();
    let recs = simulate_pm(&p).expect("valid");
    let worst = recs
        .chunks(1000)
        .map(|b| {
            let m = compute_pm_moments(b, 1000, ap, bp).expect("valid");
            (m.c3 - (m.c31.unwrap_or(0.0) + m.c32.unwrap_or(0.0)).abs()).abs() / m.c3.max(1.0)
        })
        .fold(0.0, f64::max);
    (worst <= 1e-9, format!("worst relative gap {worst:.1e}"))
}

fn local_calibration(scale: u64) -> (bool, String) {
    let p = caption(1000, 0);
    let model = RoundModel::new(&p, Representation::Pm).expect("valid");
    let (ap, bp) = model.scaled_gains();
    let cov = model.record_covariance();
    let truth = (cov[(0, 2)] - cov[(1, 3)]).abs();
    let (k, t, batches) = (1000u64, 0.2, 10_000 / scale);
    let viol: u64 = (0..batches)
        .map(|b| {
            let recs = simulate_pm(&p.clone().with_seed(derive_seed(31, b))).expect("valid");
            (local_pe_bounds(&recs, k, p.n_a, p.n_b, ap, bp, t).expect("valid").corr_lower > truth) as u64
        })
        .sum();
    let rate = viol as f64 / batches as f64;
    let claim = 12.0 * (-(k as f64) * t * t / 8.0).exp();
    let se = (rate * (1.0 - rate) / batches as f64).sqrt();
    (rate <= claim + 3.0 * se, format!("violation rate {rate:.4} vs bound {claim:.4}"))
}

fn rate_rows() -> Vec<cvmdi::keyrate::Fig2Row> {
    let grid = log_grid(1e6, 1e10, 41);
    fig2_curve(&fig2_default_params(), &grid, &Scheme::default_set(), DEFAULT_EPSILON, DEFAULT_BETA).expect("valid")
}

fn rate_ordering(_: u64) -> (bool, String) {
    let rows = rate_rows();
    let m = rows.len() / 4;
    let ok = (0..m).all(|i| {
        let r: Vec<_> = (0..4).map(|s| &rows[s * m + i]).collect();
        !r.iter().all(|x| x.feasible)
            || (r[0].rate + 1e-9 >= r[1].rate && r[1].rate >= r[2].rate && r[2].rate >= r[3].rate)
    });
    (ok, "asymptotic ≥ efficient ≥ trad:1e-2 ≥ trad:1e-3 at feasible n".into())
}

fn rate_convergence(_: u64) -> (bool, String) {
    let a = model_asymptotic_rate(&fig2_default_params(), DEFAULT_BETA).expect("valid");
    let rows = rate_rows();
    let e = rows.iter().rfind(|r| r.scheme == "efficient").map_or(0.0, |r| r.rate);
    (
        a.rate > 0.0 && (a.rate - e) / a.rate <= 0.01,
        format!("asymptotic {:.4} (raw {:.4}), efficient(1e10) {e:.4}", a.rate, a.raw),
    )
}

fn rotation_changes() -> [f64; 4] {
    let recs = simulate_eb(&caption(4096, 51)).expect("valid");
    let base = compute_moments(&recs, 4096).expect("valid");
    let (ea, eb) = mean_energies(&recs);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
    let mut worst = [0.0f64; 4];
    for s in 0..20 {
        let mut rot = recs.clone();
        let u = HaarUnitary::new(4096, 500 + s).expect("valid");
        symmetrize(&mut rot, &u, SideConvention::EntanglementBased).expect("valid");
        let m = compute_moments(&rot, 4096).expect("valid");
        let (ra, rb) = mean_energies(&rot);
        let now = [
            rel(base.c1, m.c1).max(rel(base.c2, m.c2)),
            rel(base.c1 + base.c2, m.c1 + m.c2),
            rel(base.c3, m.c3),
            rel(ea, ra).max(rel(eb, rb)),
        ];
        for (w, v) in worst.iter_mut().zip(now) {
            *w = w.max(v);
        }
    }
    worst
}

fn rotation_invariants(_: u64) -> (bool, String) {
    let [_, c12, c3, e] = rotation_changes();
    (c12.max(c3).max(e) <= 1e-9, format!("C1+C2 {c12:.1e}, C3 {c3:.1e}, energies {e:.1e}"))
}

fn rotation_c1_c2(_: u64) -> (bool, String) {
    let [c, ..] = rotation_changes();
    (c <= 1e-9, format!("C1, C2 individually {c:.1e}"))
}

const CHECKS: &[Check] = &[
    Check { name: "CM convention round trips", known: false, run: cm_round_trips },
    Check { name: "TMSV conditioning", known: false, run: tmsv_conditioning },
    Check { name: "concentration bounds", known: false, run: tail_bounds },
    Check { name: "half-block energy bound", known: false, run: half_block },
    Check { name: "normalized dimension ordering", known: false, run: fig1_ordering },
    Check { name: "record file round trip", known: false, run: record_file },
    Check { name: "EB/PM second moments", known: false, run: eb_pm_equivalence },
    Check { name: "C3 decomposition", known: false, run: c3_identity },
    Check { name: "local estimation calibration", known: false, run: local_calibration },
    Check { name: "key-rate ordering", known: false, run: rate_ordering },
    Check { name: "key-rate convergence", known: true, run: rate_convergence },
    Check { name: "rotation invariants", known: false, run: rotation_invariants },
    Check { name: "rotation invariance of C1, C2", known: true, run: rotation_c1_c2 },
];

pub fn run(quick: bool) -> Result<(), Failure> {
    let scale = if quick { 10 } else { 1 };
    let width = CHECKS.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut unexpected = 0;
    for c in CHECKS {
        let start = Instant::now();
        let (pass, detail) = (c.run)(scale);
        let status = match (pass, c.known) {
            (true, _) => "PASS",
            (false, true) => "FAIL*",
            (false, false) => "FAIL",
        };
        unexpected += (!pass && !c.known) as usize;
        println!("{status:<5}  {:<width$}  {detail} ({:.1}s)", c.name, start.elapsed().as_secs_f64());
    }
    println!("* known to fail as stated; see README");
    if unexpected == 0 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{unexpected} check(s) failed")))
    }
}
