use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cvmdi::energy_test::{efficient_test, fig1_curve, leverrier_test, EnergyTestVariant, Fig1Scheme};
use cvmdi::estimation::{
    combine_local, compute_moments, eb_bounds, public_c32_term, symmetric_cm_assembly, CMBounds, LocalSummary,
    MomentEstimates, Party, PartyView, EB_PREFACTOR, LOCAL_PREFACTOR,
};
use cvmdi::keyrate::{fig2_curve, rate_from_bounds, RateBreakdown, Scheme, DEFAULT_BETA, DEFAULT_EPSILON};
use cvmdi::protocol::{read_records, simulate_to_file, HaarUnitary, RecordHeader, Representation, RoundRecord};
use cvmdi::tail_bounds::{reference_model, solve_t_with_prefactor, tailcheck};

mod config;
mod output;
mod verify;

use config::{parse_grid, parse_schemes, RunConfig, UNITS};
use output::{Fig1Csv, RateCsv, TailCsv};

/// How a run failed; decides the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: flags, config, record file, or preconditions. Exit 2.
    Validation(String),
    /// Valid parameters that cannot be satisfied, e.g. too few samples. Exit 3.
    Infeasible(String),
    /// Anything else (I/O, failed verification). Exit 1.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation",
            Failure::Infeasible(_) => "infeasible",
            Failure::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Infeasible(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<cvmdi::Error> for Failure {
    fn from(e: cvmdi::Error) -> Self {
        match e {
            e if e.is_infeasible() => Failure::Infeasible(e.to_string()),
            cvmdi::Error::Io(io) => Failure::Runtime(io.to_string()),
            e => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "cvmdi", version, about = "Finite-size tools for continuous-variable MDI key distribution")]
struct Cli {
    /// Print errors on stderr as JSON objects
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a protocol run and write the binary record file
    Simulate(SimulateArgs),
    /// Run an energy test on a record file
    EnergyTest(EnergyTestArgs),
    /// Normalized dimension of the accepted subspace versus n
    Fig1(Fig1Args),
    /// Covariance bounds from a record file
    Estimate(EstimateArgs),
    /// Monte Carlo check of the concentration bounds
    Tailcheck(TailcheckArgs),
    /// Key rate versus n for a configured channel
    Keyrate(KeyrateArgs),
    /// Key rate versus n for the default channel
    Fig2(Fig2Args),
    /// Run the invariant suite and print a pass/fail table
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    rep: Representation,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `rounds` from the config
    #[arg(long)]
    rounds: Option<u64>,
}

#[derive(Args)]
struct EnergyTestArgs {
    #[arg(long)]
    variant: EnergyTestVariant,
    /// Test samples (leverrier only)
    #[arg(long)]
    k: Option<u64>,
    #[arg(long = "dA")]
    d_a: f64,
    #[arg(long = "dB")]
    d_b: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON report; stdout when omitted
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed of the symmetrizing unitary (leverrier only)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Fig1Args {
    #[arg(long)]
    out: PathBuf,
    /// Total failure probability
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value = "1e6:1e10:log")]
    ngrid: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EstimateMode {
    Eb,
    Local,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    mode: EstimateMode,
    /// Number of leading rounds to use, or `all`
    #[arg(long, default_value = "all")]
    k: String,
    /// Deviation parameter in (0, 1)
    #[arg(long, conflicts_with = "eps", required_unless_present = "eps")]
    t: Option<f64>,
    /// Target failure probability; `t` is solved from it
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Error-correction efficiency used for the reported rate
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
}

#[derive(Args)]
struct TailcheckArgs {
    #[arg(long, default_value_t = 500)]
    k: u64,
    #[arg(long, default_value_t = 0.4)]
    t: f64,
    #[arg(long, default_value_t = 200_000)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KeyrateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated: efficient, trad:<fraction>
    #[arg(long)]
    schemes: Option<String>,
    #[arg(long)]
    ngrid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Fig2Args {
    #[arg(long)]
    out: PathBuf,
    /// Optional overrides of the default channel and budget
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ngrid: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Fewer Monte Carlo trials; statistical checks become looser
    #[arg(long)]
    quick: bool,
}

#[derive(Serialize)]
struct HeaderReport {
    path: String,
    version: u16,
    rounds: u64,
    n_a: f64,
    n_b: f64,
    loss_a_db: f64,
    loss_b_db: f64,
    xi_a: f64,
    xi_b: f64,
    gain_a: f64,
    gain_b: f64,
    seed: u64,
    representation: Representation,
}

impl HeaderReport {
    fn new(path: &Path, h: &RecordHeader, records: &[RoundRecord]) -> Self {
        let [n_a, n_b, loss_a_db, loss_b_db, xi_a, xi_b, gain_a, gain_b] = h.params;
        let pm = records.first().is_some_and(|r| r.alice0.is_some());
        HeaderReport {
            path: path.display().to_string(),
            version: h.version,
            rounds: h.rounds,
            n_a,
            n_b,
            loss_a_db,
            loss_b_db,
            xi_a,
            xi_b,
            gain_a,
            gain_b,
            seed: h.seed,
            representation: if pm { Representation::Pm } else { Representation::Eb },
        }
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Outcome {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Outcome {
    let cfg = RunConfig::load(&a.config)?;
    let rounds = a
        .rounds
        .or(cfg.rounds)
        .ok_or_else(|| Failure::Validation("simulate needs `rounds` in the config or --rounds".into()))?;
    let params = RunConfig { rounds: Some(rounds), ..cfg }.params()?;
    let h = simulate_to_file(&params, a.rep, &a.out)?;
    eprintln!("wrote {} {} records to {} (seed {})", h.rounds, a.rep, a.out.display(), h.seed);
    Ok(())
}

fn energy_test(a: EnergyTestArgs) -> Outcome {
    let (h, records) = read_records(&a.input)?;
    let outcome = match a.variant {
        EnergyTestVariant::Leverrier => {
            let k = a.k.ok_or_else(|| Failure::Validation("the leverrier test needs --k".into()))?;
            let seed = a.seed.ok_or_else(|| Failure::Validation("the leverrier test needs --seed".into()))?;
            let u = HaarUnitary::new(records.len(), seed)?;
            leverrier_test(&records, k, a.d_a, a.d_b, a.eps, &u)?
        }
        EnergyTestVariant::Efficient => {
            if a.k.is_some_and(|k| k != records.len() as u64) {
                return Err(Failure::Validation("the efficient test uses every round; drop --k or set it to n".into()));
            }
            efficient_test(&records, a.d_a, a.d_b, a.eps)?
        }
    };
    #[derive(Serialize)]
    struct Report<'a, T> {
        units: &'a config::Units,
        input: HeaderReport,
        unitary_seed: Option<u64>,
        outcome: T,
    }
    let unitary_seed = if a.variant == EnergyTestVariant::Leverrier { a.seed } else { None };
    let report = Report { units: &UNITS, input: HeaderReport::new(&a.input, &h, &records), unitary_seed, outcome };
    write_json(a.report.as_deref(), &report)
}

fn fig1(a: Fig1Args) -> Outcome {
    let grid = parse_grid(&a.ngrid)?;
    let rows = fig1_curve(&grid, &Fig1Scheme::default_set(), a.eps)?;
    write_csv(&a.out, rows.into_iter().map(Fig1Csv::from))
}

#[derive(Serialize)]
#[serde(untagged)]
enum Statistics {
    Public(MomentEstimates),
    Local { alice: LocalSummary, bob: LocalSummary, public_term: f64, a_prime: f64, b_prime: f64 },
}

#[derive(Serialize)]
struct CmReport {
    convention: cvmdi::gaussian::Convention,
    /// Row-major 4×4 entries.
    entries: Vec<f64>,
    corr: f64,
    shrunk: bool,
    diagonal_raised: bool,
}

fn parse_k(s: &str, n: usize) -> Result<u64, Failure> {
    if s == "all" {
        return Ok(n as u64);
    }
    s.parse().map_err(|_| Failure::Validation(format!("--k must be a positive integer or `all`, got '{s}'")))
}

fn estimate(a: EstimateArgs) -> Outcome {
    let (h, records) = read_records(&a.input)?;
    let k = parse_k(&a.k, records.len())?;
    if k == 0 || k as usize > records.len() {
        return Err(Failure::Validation(format!("--k must lie in 1..={}", records.len())));
    }
    let prefactor = match a.mode {
        EstimateMode::Eb => EB_PREFACTOR,
        EstimateMode::Local => LOCAL_PREFACTOR,
    };
    let t = match (a.t, a.eps) {
        (Some(t), _) => t,
        (None, Some(eps)) => solve_t_with_prefactor(prefactor, k as f64, eps)?,
        (None, None) => unreachable!("clap requires one of --t, --eps"),
    };
    let (stats, bounds): (Statistics, CMBounds) = match a.mode {
        EstimateMode::Eb => {
            let m = compute_moments(&records, k)?;
            let b = eb_bounds(&m, t)?;
            (Statistics::Public(m), b)
        }
        EstimateMode::Local => {
            let [n_a, n_b, .., gain_a, gain_b] = h.params;
            let (ap, bp) = (gain_a * (n_a / (n_a + 1.0)).sqrt(), gain_b * (n_b / (n_b + 1.0)).sqrt());
            let used = &records[..k as usize];
            let (a0, b0, z) = PartyView::split(used)?;
            let alice = PartyView { party: Party::Alice, prepared: &a0, relay: &z }.summarize(k, ap, bp)?;
            let bob = PartyView { party: Party::Bob, prepared: &b0, relay: &z }.summarize(k, ap, bp)?;
            let public_term = public_c32_term(&z, k, ap, bp)?;
            let b = combine_local(&alice, &bob, public_term, n_a, n_b, t)?;
            (Statistics::Local { alice, bob, public_term, a_prime: ap, b_prime: bp }, b)
        }
    };
    let cm = symmetric_cm_assembly(&bounds)?;
    let (rate, _) = rate_from_bounds(&bounds, a.beta, 1.0)?;
    #[derive(Serialize)]
    struct Report<'a> {
        units: &'a config::Units,
        input: HeaderReport,
        mode: EstimateMode,
        k: u64,
        t: f64,
        confidence: f64,
        failure_probability: f64,
        statistics: Statistics,
        bounds: CMBounds,
        worst_case_cm: CmReport,
        rate: RateBreakdown,
    }
    let entries = cm.cm.entries();
    let report = Report {
        units: &UNITS,
        input: HeaderReport::new(&a.input, &h, &records),
        mode: a.mode,
        k,
        t,
        confidence: bounds.confidence,
        failure_probability: prefactor * (-(k as f64) * t * t / 8.0).exp(),
        statistics: stats,
        worst_case_cm: CmReport {
            convention: cm.cm.convention(),
            entries: (0..4).flat_map(|i| (0..4).map(move |j| entries[(i, j)])).collect(),
            corr: cm.corr,
            shrunk: cm.shrunk,
            diagonal_raised: cm.diagonal_raised,
        },
        bounds,
        rate,
    };
    write_json(a.report.as_deref(), &report)
}

fn tailcheck_cmd(a: TailcheckArgs) -> Outcome {
    let rows = tailcheck(a.k, a.t, a.trials, &reference_model(), a.seed)?;
    let failing = rows.iter().filter(|r| !r.passes(3.0)).count();
    write_csv(&a.out, rows.iter().map(TailCsv::from))?;
    eprintln!("{} of {} bounds within 3 standard errors", rows.len() - failing, rows.len());
    Ok(())
}

fn rate_table(cfg: &RunConfig, schemes: Option<&str>, ngrid: Option<&str>, out: &Path, default_grid: &str) -> Outcome {
    let params = cfg.params()?;
    let schemes = match schemes {
        Some(s) => parse_schemes(s)?,
        None => cfg.schemes()?.unwrap_or_else(|| Scheme::default_set().to_vec()),
    };
    let grid = parse_grid(ngrid.or(cfg.n_grid.as_deref()).unwrap_or(default_grid))?;
    let rows = fig2_curve(&params, &grid, &schemes, cfg.epsilon, cfg.beta)?;
    write_csv(out, rows.into_iter().map(RateCsv::from))
}

fn keyrate(a: KeyrateArgs) -> Outcome {
    let cfg = RunConfig::load(&a.config)?;
    rate_table(&cfg, a.schemes.as_deref(), a.ngrid.as_deref(), &a.out, "1e4:1e10:log")
}

fn fig2(a: Fig2Args) -> Outcome {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        // analytic; the seed is never used
        None => RunConfig::parse(r#"{"schema_version": 1, "seed": 0}"#)?,
    };
    rate_table(&cfg, None, a.ngrid.as_deref(), &a.out, "1e4:1e10:log")
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EnergyTest(a) => energy_test(a),
        Command::Fig1(a) => fig1(a),
        Command::Estimate(a) => estimate(a),
        Command::Tailcheck(a) => tailcheck_cmd(a),
        Command::Keyrate(a) => keyrate(a),
        Command::Fig2(a) => fig2(a),
        Command::Verify(a) => verify::run(a.quick),
    }
}

fn report_failure(f: &Failure, json: bool) {
    if json {
        let obj = serde_json::json!({ "error": { "kind": f.kind(), "code": f.code(), "message": f.message() } });
        eprintln!("{obj}");
    } else {
        eprintln!("error: {}", f.message());
    }
}

fn main() -> ExitCode {
    let json = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) if json => {
            report_failure(&Failure::Validation(e.render().to_string().trim().to_string()), true);
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let json = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f, json);
            ExitCode::from(f.code())
        }
    }
}
