//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical
//! failures and FAIL reports.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{bound_constants, equivalence_instance, lemma3_check, DELTA_LIMIT};
use crate::error::{Error, Result};
use crate::estimators::{
    constrained_ls_psd, nnls_psd, run_estimator, EstimatorKind, ResidualNorm, SolverConfig,
};
use crate::harness::{emit_outputs, format_report_csv, run_experiment, ExperimentConfig};
use crate::hermitian::{random_density_matrix, HermitianMatrix};
use crate::measurement::{
    born_probabilities, estimate_noise_bound_with_factor, format_record_csv, read_record_csv, sample_frequencies,
    MeasurementRecord, DEFAULT_NOISE_FACTOR,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sensing::{
    all_pauli_bases, estimate_rip, pauli_basis_povm, pauli_sensing_map, random_pauli_basis_set, read_operators,
    read_sensing_map, sensing_map_from_povms, write_operators, SensingMap,
};

#[derive(Parser, Debug)]
#[command(
    name = "psd-sense",
    version,
    about = "Low-rank density-matrix recovery from Pauli measurements",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON settings for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or output directory for `experiment`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a measurement record from a random state.
    Simulate(SimulateArgs),
    /// Run one estimator on a record.
    Estimate(EstimateArgs),
    /// Run a sweep from a JSON config.
    Experiment,
    /// Lower-bound the restricted isometry constant of a sensing map.
    Rip(RipArgs),
    /// Check the trace-minimization / fixed-trace least-squares equivalence.
    CheckLemma3(Lemma3Args),
    /// Evaluate error-bound constants and the noiseless error bound.
    CheckBounds(BoundsArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    qubits: Option<usize>,
    /// Comma-separated Pauli basis strings, e.g. `xz,yy`.
    #[arg(long, value_delimiter = ',')]
    bases: Option<Vec<String>>,
    /// Number of random bases (ignored when `--bases` is given).
    #[arg(long)]
    m: Option<usize>,
    /// Repetitions per basis; 0 writes exact probabilities.
    #[arg(long)]
    n_rep: Option<u64>,
    #[arg(long)]
    rank: Option<usize>,
    /// Also write the true state to this file.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct SimulateSettings {
    n_qubits: usize,
    /// Explicit basis strings; when empty, `m_bases` random ones are drawn.
    bases: Vec<String>,
    /// 0 means all `3ⁿ` bases.
    m_bases: usize,
    n_rep: u64,
    rank_of_truth: usize,
    noise_factor: f64,
    seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            bases: Vec::new(),
            m_bases: 0,
            n_rep: 0,
            rank_of_truth: 1,
            noise_factor: DEFAULT_NOISE_FACTOR,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Record CSV written by `simulate`.
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    estimator: Option<String>,
    /// Noise bound in record units; defaults to the record's own.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Trace for `constrained_ls_psd`.
    #[arg(long)]
    trace: Option<f64>,
    /// Operator file; by default the map is rebuilt from the record's Pauli labels.
    #[arg(long)]
    operators: Option<PathBuf>,
    /// Keep the Pauli POVMs unscaled.
    #[arg(long)]
    no_rescale: bool,
    /// State file (as written by `simulate --state-out`) to compare against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct EstimateSettings {
    estimator: EstimatorKind,
    epsilon: Option<f64>,
    trace: f64,
    rescale: bool,
    solver: SolverConfig,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::NnlsPsd,
            epsilon: None,
            trace: 1.0,
            rescale: true,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
struct RipArgs {
    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Operator file instead of random Pauli bases.
    #[arg(long)]
    operators: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct RipSettings {
    n_qubits: usize,
    m_bases: usize,
    rank: usize,
    samples: usize,
    rescale: bool,
    seed: u64,
}

impl Default for RipSettings {
    fn default() -> Self {
        Self {
            n_qubits: 3,
            m_bases: 10,
            rank: 1,
            samples: 200,
            rescale: true,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
struct Lemma3Args {
    /// Residual norm used in both programs.
    #[arg(long, value_parser = ["two", "max"])]
    norm: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct Lemma3Settings {
    dims: Vec<usize>,
    instances_per_dim: usize,
    n_rep: u64,
    /// Weight of the pure component in the full-rank test states.
    pure_weight: f64,
    noise_factor: f64,
    norm: ResidualNorm,
    seed: u64,
    solver: SolverConfig,
}

impl Default for Lemma3Settings {
    fn default() -> Self {
        Self {
            dims: vec![4, 8],
            instances_per_dim: 10,
            // Haar bases are poorly conditioned; sampling noise must be small
            // for the shifted least-squares point to stay PSD, while the ball
            // is kept at the size a 10^4-shot record would give.
            n_rep: 100_000_000,
            pure_weight: 0.4,
            noise_factor: 200.0,
            norm: ResidualNorm::Two,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Comma-separated δ values to tabulate.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct BoundsSettings {
    deltas: Vec<f64>,
    n_qubits: usize,
    m_bases: usize,
    rank_of_truth: usize,
    rip_samples: usize,
    seed: u64,
    solver: SolverConfig,
}

impl Default for BoundsSettings {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            n_qubits: 3,
            m_bases: 12,
            rank_of_truth: 1,
            rip_samples: 200,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

enum Outcome {
    Pass,
    Fail,
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Estimate(args) => estimate(cli, args),
        Command::Experiment => experiment(cli),
        Command::Rip(args) => rip(cli, args),
        Command::CheckLemma3(args) => check_lemma3(cli, args),
        Command::CheckBounds(args) => check_bounds(cli, args),
    }
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

/// Writes to `--out` when given, otherwise to stdout.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Outcome> {
    let mut s: SimulateSettings = load(cli.config.as_deref())?;
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(v) = args.qubits {
        s.n_qubits = v;
    }
    if let Some(v) = &args.bases {
        s.bases = v.clone();
    }
    if let Some(v) = args.m {
        s.m_bases = v;
        s.bases.clear();
    }
    if let Some(v) = args.n_rep {
        s.n_rep = v;
    }
    if let Some(v) = args.rank {
        s.rank_of_truth = v;
    }
    let n = s.n_qubits;
    if n == 0 || n > crate::harness::MAX_QUBITS {
        return Err(Error::Domain(format!("qubit count must be in [1, {}]", crate::harness::MAX_QUBITS)));
    }
    let bases = if !s.bases.is_empty() {
        s.bases.clone()
    } else if s.m_bases == 0 {
        all_pauli_bases(n)
    } else {
        random_pauli_basis_set(n, s.m_bases, derive_seed(s.seed, &[2]))?
    };
    let map = pauli_sensing_map(n, &bases, true)?;
    let mut rng = rng_from_seed(derive_seed(s.seed, &[1]));
    let truth = random_density_matrix(1 << n, s.rank_of_truth, &mut rng)?;
    let ideal = born_probabilities(&map, &truth)?;
    let record = if s.n_rep > 0 {
        let mut sampled = sample_frequencies(&ideal, s.n_rep, derive_seed(s.seed, &[3]))?;
        sampled.epsilon = estimate_noise_bound_with_factor(&sampled, s.noise_factor);
        sampled
    } else {
        ideal
    };
    if let Some(path) = &args.state_out {
        write_operators(path, &[("truth".to_string(), &truth)])?;
    }
    emit(cli, &format_record_csv(&record))?;
    Ok(Outcome::Pass)
}

/// Pauli map rebuilt from the basis labels stored in a record.
fn map_from_record(record: &MeasurementRecord, rescale: bool) -> Result<SensingMap> {
    let n = record.dim.trailing_zeros() as usize;
    if record.dim != 1 << n {
        return Err(Error::Domain(format!("record dimension {} is not a power of two", record.dim)));
    }
    let povms = record
        .layout
        .iter()
        .map(|(label, _)| pauli_basis_povm(n, label))
        .collect::<Result<Vec<_>>>()?;
    sensing_map_from_povms(&povms, rescale)
}

fn read_state(path: &Path) -> Result<HermitianMatrix> {
    let mut ops = read_operators(path)?;
    if ops.len() != 1 {
        return Err(Error::Parse(format!("{}: expected exactly one matrix", path.display())));
    }
    Ok(ops.remove(0).1)
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> Result<Outcome> {
    let mut s: EstimateSettings = load(cli.config.as_deref())?;
    if let Some(v) = cli.seed {
        s.solver.seed = v;
    }
    if let Some(name) = &args.estimator {
        s.estimator = name.parse()?;
    }
    if args.epsilon.is_some() {
        s.epsilon = args.epsilon;
    }
    if let Some(t) = args.trace {
        s.trace = t;
    }
    if args.no_rescale {
        s.rescale = false;
    }
    let record = read_record_csv(&args.record)?;
    let map = match &args.operators {
        Some(path) => read_sensing_map(path)?,
        None => map_from_record(&record, s.rescale)?,
    };
    let epsilon = s.epsilon.unwrap_or(record.epsilon);
    let result = if s.estimator == EstimatorKind::ConstrainedLsPsd {
        constrained_ls_psd(&map, &record, s.trace, &s.solver)?
    } else {
        run_estimator(s.estimator, &map, &record, epsilon, &s.solver)?
    };
    let reference = args.reference.as_deref().map(read_state).transpose()?;
    let text = result.to_record(&s.solver, reference.as_ref())?;
    emit(cli, &text)?;
    Ok(Outcome::Pass)
}

fn experiment(cli: &Cli) -> Result<Outcome> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Domain("experiment needs --config <file.json>".into()))?;
    let mut config = ExperimentConfig::from_json(&fs::read_to_string(path)?)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let report = run_experiment(&config)?;
    let paths = emit_outputs(&report, &config.output_dir)?;
    print!("{}", format_report_csv(&report.rows));
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(Outcome::Pass)
}

fn rip(cli: &Cli, args: &RipArgs) -> Result<Outcome> {
    let mut s: RipSettings = load(cli.config.as_deref())?;
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(v) = args.qubits {
        s.n_qubits = v;
    }
    if let Some(v) = args.m {
        s.m_bases = v;
    }
    if let Some(v) = args.rank {
        s.rank = v;
    }
    if let Some(v) = args.samples {
        s.samples = v;
    }
    let map = match &args.operators {
        Some(path) => read_sensing_map(path)?,
        None => {
            let bases = random_pauli_basis_set(s.n_qubits, s.m_bases, derive_seed(s.seed, &[2]))?;
            pauli_sensing_map(s.n_qubits, &bases, s.rescale)?
        }
    };
    let estimate = estimate_rip(&map, s.rank, s.samples, s.seed)?;
    let mut text = String::new();
    writeln!(text, "# delta_lower is a sampled lower bound on the restricted isometry constant").expect("string");
    writeln!(text, "{}", serde_json::to_string_pretty(&estimate)?).expect("string");
    emit(cli, &text)?;
    Ok(Outcome::Pass)
}

fn check_lemma3(cli: &Cli, args: &Lemma3Args) -> Result<Outcome> {
    let mut s: Lemma3Settings = load(cli.config.as_deref())?;
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(norm) = args.norm.as_deref() {
        s.norm = if norm == "max" { ResidualNorm::Max } else { ResidualNorm::Two };
    }
    let mut text = String::new();
    let mut all_pass = true;
    let mut count = 0;
    for &d in &s.dims {
        for k in 0..s.instances_per_dim {
            let seed = derive_seed(s.seed, &[d as u64, k as u64]);
            let (map, mut record) = equivalence_instance(d, s.pure_weight, s.n_rep, seed)?;
            record.epsilon = estimate_noise_bound_with_factor(&record, s.noise_factor);
            let report = lemma3_check(&map, &record, record.epsilon, s.norm, &s.solver)?;
            all_pass &= report.pass;
            count += 1;
            writeln!(text, "[instance d={d} k={k}]").expect("string");
            text.push_str(&report.to_text());
        }
    }
    writeln!(text, "[summary]").expect("string");
    writeln!(text, "instances={count}").expect("string");
    writeln!(text, "result={}", if all_pass { "PASS" } else { "FAIL" }).expect("string");
    emit(cli, &text)?;
    Ok(if all_pass { Outcome::Pass } else { Outcome::Fail })
}

fn check_bounds(cli: &Cli, args: &BoundsArgs) -> Result<Outcome> {
    let mut s: BoundsSettings = load(cli.config.as_deref())?;
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if let Some(v) = &args.deltas {
        s.deltas = v.clone();
    }
    let mut text = String::new();
    let mut ok = true;
    writeln!(text, "delta_4r,c0,c1").expect("string");
    for &delta in &s.deltas {
        match bound_constants(delta) {
            Ok(c) => writeln!(text, "{},{},{}", c.delta_4r, c.c0, c.c1),
            Err(e) => writeln!(text, "{delta},error,{e}"),
        }
        .expect("string");
    }
    let zero = bound_constants(0.0)?;
    let exact = zero.c0 == 4.0 && zero.c1 == 1.0;
    let limit_rejected = bound_constants(DELTA_LIMIT).is_err();
    ok &= exact && limit_rejected;
    writeln!(text, "constants_at_zero={}", pass_str(exact)).expect("string");
    writeln!(text, "limit_rejected={}", pass_str(limit_rejected)).expect("string");

    let n = s.n_qubits;
    let bases = random_pauli_basis_set(n, s.m_bases, derive_seed(s.seed, &[2]))?;
    let map = pauli_sensing_map(n, &bases, true)?;
    let mut rng = rng_from_seed(derive_seed(s.seed, &[1]));
    let truth = random_density_matrix(1 << n, s.rank_of_truth, &mut rng)?;
    let record = born_probabilities(&map, &truth)?;
    let result = nnls_psd(&map, &record, &s.solver)?;
    let error = result.frobenius_distance(&truth);
    let rip = estimate_rip(&map, (4 * s.rank_of_truth).min(1 << n), s.rip_samples, s.seed)?;
    let recovered = error < 1e-5;
    ok &= recovered;
    writeln!(text, "noiseless_error={error:e}").expect("string");
    writeln!(text, "delta_lower_4r={} (sampled lower bound)", rip.delta_lower).expect("string");
    match bound_constants(rip.delta_lower) {
        Ok(c) => writeln!(text, "c0_at_delta_lower={}", c.c0),
        Err(_) => writeln!(text, "c0_at_delta_lower=undefined"),
    }
    .expect("string");
    writeln!(text, "noiseless_recovery={}", pass_str(recovered)).expect("string");
    writeln!(text, "result={}", pass_str(ok)).expect("string");
    emit(cli, &text)?;
    Ok(if ok { Outcome::Pass } else { Outcome::Fail })
}

fn pass_str(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["psd-sense"]), 1);
        assert_eq!(run(["psd-sense", "bogus"]), 1);
        assert_eq!(run(["psd-sense", "simulate", "--bogus"]), 1);
        assert_eq!(run(["psd-sense", "--help"]), 0);
    }

    #[test]
    fn experiment_needs_a_config() {
        assert_eq!(run(["psd-sense", "experiment"]), 1);
    }

    #[test]
    fn settings_defaults_serialize() {
        let text = serde_json::to_string(&Lemma3Settings::default()).unwrap();
        let back: Lemma3Settings = serde_json::from_str(&text).unwrap();
        assert_eq!(back.dims, vec![4, 8]);
        assert!(serde_json::from_str::<SimulateSettings>(r#"{"nope": 1}"#).is_err());
    }
}
