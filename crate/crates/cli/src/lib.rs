//! Command-line driver. Every run that writes a file also writes
//! `<out>.manifest.json`; `bdg replay` re-runs a manifest and reproduces the
//! output byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bdg_core::chern::{chern_mu_scan, scan_table, ChernConfig, ChernMethod};
use bdg_core::disorder::{gap_closure_threshold, DisorderSpec};
use bdg_core::green::{
    fractional_moment_scan, localization_phase_diagram, MomentConfig, PhaseConfig,
};
use bdg_core::linalg::c;
use bdg_core::models::{build_model, central_gap, reduce_su2, ModelParams, PairingKind};
use bdg_core::operator::{assemble_bloch, TightBindingOperator};
use bdg_core::spectral::{sample_spectra, Ensemble};
use bdg_core::table::{sci, Table};
use bdg_core::verify::{self, Fault, VerifyOptions, VerifyReport};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub const ARTIFACT_VERSION: &str = concat!("bdg ", env!("CARGO_PKG_VERSION"));

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or input files.
    Usage(String),
    /// A computation failed or a verification check did not pass.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<bdg_core::Error> for CliError {
    fn from(e: bdg_core::Error) -> Self {
        match e {
            bdg_core::Error::InvalidParameter(_)
            | bdg_core::Error::TorusTooSmall { .. }
            | bdg_core::Error::Json(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bdg", version, about = "Random BdG lattice models: spectra, localization and Chern numbers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Bloch bands on a k-grid: k1, k2, E_0..E_n (ascending).
    Bands(BandsArgs),
    /// Central gap along a list of chemical potentials.
    GapScan(GapScanArgs),
    /// Integrated density of states of the disordered ensemble.
    Ids(IdsArgs),
    /// Density-of-states histogram of the disordered ensemble.
    Dos(DosArgs),
    /// Chern numbers along a list of chemical potentials.
    Chern(ChernArgs),
    /// Fractional-moment decay of the resolvent along e1.
    FmmDecay(FmmArgs),
    /// Localization verdicts on a (disorder, energy) grid.
    PhaseDiagram(PhaseArgs),
    /// Runs the invariant suite; exit code 1 if any check fails.
    Verify(VerifyArgs),
    /// Re-runs a manifest.
    Replay(ReplayArgs),
}

/// Comma-separated floats, or `lo:hi:n` for `n` evenly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

pub fn parse_float_list(s: &str) -> std::result::Result<FloatList, String> {
    let s = s.trim();
    if let Some((lo, rest)) = s.split_once(':') {
        let (hi, n) = rest
            .split_once(':')
            .ok_or_else(|| format!("range '{s}' must be lo:hi:n"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        let n: usize = n.trim().parse().map_err(|e| format!("bad point count: {e}"))?;
        if n == 0 {
            return Err("range needs at least one point".into());
        }
        if n == 1 {
            return Ok(FloatList(vec![lo]));
        }
        let step = (hi - lo) / (n - 1) as f64;
        return Ok(FloatList((0..n).map(|i| lo + step * i as f64).collect()));
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad number '{x}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err("numbers must be finite".into());
    }
    Ok(FloatList(v))
}

/// `{"delta":0.3,"mu":-0.5}` or `delta=0.3,mu=-0.5` (keys delta, mu, delta_xy).
pub fn parse_params(s: &str) -> std::result::Result<ModelParams, String> {
    let s = s.trim();
    let p: ModelParams = if s.starts_with('{') {
        serde_json::from_str(s).map_err(|e| e.to_string())?
    } else {
        let mut p = ModelParams::new(0.3, -0.5);
        for kv in s.split(',').filter(|x| !x.trim().is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("'{kv}' is not key=value"))?;
            let v: f64 = v.trim().parse().map_err(|e| format!("bad value for {k}: {e}"))?;
            match k.trim() {
                "delta" => p.delta = v,
                "mu" => p.mu = v,
                "delta_xy" => p.delta_xy = Some(v),
                other => return Err(format!("unknown parameter '{other}'")),
            }
        }
        p
    };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

/// Inline JSON, or a path to a JSON file.
pub fn parse_disorder(s: &str) -> std::result::Result<DisorderSpec, String> {
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        fs::read_to_string(s).map_err(|e| format!("cannot read {s}: {e}"))?
    };
    let spec = DisorderSpec::from_json(&text).map_err(|e| e.to_string())?;
    spec.resolve(1)
        .or_else(|_| spec.resolve(2))
        .map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_model(s: &str) -> std::result::Result<PairingKind, String> {
    s.parse().map_err(|e: bdg_core::Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<ChernMethod, String> {
    s.parse().map_err(|e: bdg_core::Error| e.to_string())
}

fn parse_fault(s: &str) -> std::result::Result<Fault, String> {
    s.parse().map_err(|e: bdg_core::Error| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Pairing model: s, s-star, px, pip+, pip-, p-spinful, p-triplet+,
    /// p-triplet-, dxy, dx2y2, did+, did-.
    #[arg(long, value_parser = parse_model)]
    #[serde(rename = "kind")]
    pub model: PairingKind,
    /// Model parameters, `delta=0.3,mu=-0.5` or JSON.
    #[arg(long, value_parser = parse_params, default_value = "delta=0.3,mu=-0.5")]
    pub params: ModelParams,
    /// Use the first spin block of a spin-singlet model (two bands).
    #[arg(long)]
    pub su2_block: bool,
}

impl ModelArgs {
    pub fn operator(&self) -> CliResult<TightBindingOperator> {
        self.operator_at(self.params.mu)
    }

    pub fn operator_at(&self, mu: f64) -> CliResult<TightBindingOperator> {
        let params = ModelParams { mu, ..self.params };
        let op = build_model(self.model, &params)?;
        if self.su2_block {
            Ok(reduce_su2(&op)?.0)
        } else {
            Ok(op)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EnsembleArgs {
    /// Disorder spec, inline JSON or a file path; omit for the clean model.
    #[arg(long, value_parser = parse_disorder)]
    pub disorder: Option<DisorderSpec>,
    /// Linear torus size.
    #[arg(long = "L", default_value_t = 16)]
    pub l: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub realizations: usize,
}

impl EnsembleArgs {
    fn ensemble(&self) -> Ensemble {
        Ensemble {
            l: [self.l, self.l],
            realizations: self.realizations,
            seed: self.seed,
        }
    }
}

/// Output and scheduling; not recorded in manifests.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct IoArgs {
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BandsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Points per direction of the k-grid on [-π, π).
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GapScanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Chemical potentials, `a,b,c` or `lo:hi:n`.
    #[arg(long, value_parser = parse_float_list, default_value = "-5:5:21")]
    pub mu_list: FloatList,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IdsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Energies, `a,b,c` or `lo:hi:n`.
    #[arg(long, value_parser = parse_float_list, default_value = "-1.6:1.6:9")]
    pub energies: FloatList,
    /// Also report the IDS of H² at E² (columns N2, stderr2).
    #[arg(long)]
    pub squared: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DosArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// Histogram half-range; defaults to just above the largest |E|.
    #[arg(long)]
    pub emax: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ChernArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Chemical potentials, `a,b,c` or `lo:hi:n`.
    #[arg(long, value_parser = parse_float_list)]
    pub mu_list: FloatList,
    /// transfer, berry, contour or realspace.
    #[arg(long, value_parser = parse_method, default_value = "transfer")]
    pub method: ChernMethod,
    /// k-grid of transfer/berry, or torus size of realspace.
    #[arg(long)]
    pub grid: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

impl ChernArgs {
    pub fn config(&self) -> ChernConfig {
        let mut cfg = ChernConfig::default_for(self.method);
        if let Some(n) = self.grid {
            match &mut cfg {
                ChernConfig::Transfer { k_grid } => *k_grid = n,
                ChernConfig::Berry { n_grid } => *n_grid = n,
                ChernConfig::Contour(p) => p.zero_grid = n,
                ChernConfig::Realspace { l } => *l = n,
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FmmArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub energy: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Fractional exponent in (0, 1).
    #[arg(long, default_value_t = 0.3)]
    pub s: f64,
    #[arg(long, default_value_t = 15)]
    pub max_dist: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, value_parser = parse_float_list, default_value = "0:2:11")]
    pub lambda_grid: FloatList,
    #[arg(long, value_parser = parse_float_list, default_value = "0:1.5:7")]
    pub e_grid: FloatList,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.3)]
    pub s: f64,
    #[arg(long, default_value_t = 10)]
    pub max_dist: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Seed of the statistical checks.
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    pub seed: u64,
    /// Run only the named checks (repeatable).
    #[arg(long = "check")]
    pub only: Vec<String>,
    #[arg(long, hide = true, value_parser = parse_fault)]
    pub inject_fault: Option<Fault>,
    #[command(flatten)]
    #[serde(skip)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output file; defaults to the recorded name next to the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Record of one run, written next to its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub artifact_version: String,
    /// The full invocation; replay uses only this.
    pub invocation: Command,
    /// Operator of the model at the given parameters, for reference.
    pub model: Option<serde_json::Value>,
    /// File name of the output, relative to the manifest.
    pub output: String,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

impl Command {
    fn io(&self) -> Option<&IoArgs> {
        match self {
            Command::Bands(a) => Some(&a.io),
            Command::GapScan(a) => Some(&a.io),
            Command::Ids(a) => Some(&a.io),
            Command::Dos(a) => Some(&a.io),
            Command::Chern(a) => Some(&a.io),
            Command::FmmDecay(a) => Some(&a.io),
            Command::PhaseDiagram(a) => Some(&a.io),
            Command::Verify(a) => Some(&a.io),
            Command::Replay(_) => None,
        }
    }

    fn io_mut(&mut self) -> Option<&mut IoArgs> {
        match self {
            Command::Bands(a) => Some(&mut a.io),
            Command::GapScan(a) => Some(&mut a.io),
            Command::Ids(a) => Some(&mut a.io),
            Command::Dos(a) => Some(&mut a.io),
            Command::Chern(a) => Some(&mut a.io),
            Command::FmmDecay(a) => Some(&mut a.io),
            Command::PhaseDiagram(a) => Some(&mut a.io),
            Command::Verify(a) => Some(&mut a.io),
            Command::Replay(_) => None,
        }
    }

    fn model(&self) -> Option<&ModelArgs> {
        match self {
            Command::Bands(a) => Some(&a.model),
            Command::GapScan(a) => Some(&a.model),
            Command::Ids(a) => Some(&a.model),
            Command::Dos(a) => Some(&a.model),
            Command::Chern(a) => Some(&a.model),
            Command::FmmDecay(a) => Some(&a.model),
            Command::PhaseDiagram(a) => Some(&a.model),
            Command::Verify(_) | Command::Replay(_) => None,
        }
    }
}

/// Result of a command: the table, status lines for stderr, and whether a
/// verification failed.
pub struct Outcome {
    pub table: Table,
    pub notes: Vec<String>,
    pub failed: bool,
}

impl Outcome {
    fn table(table: Table) -> Self {
        Self {
            table,
            notes: Vec::new(),
            failed: false,
        }
    }
}

/// Computes a command without touching the file system.
pub fn compute(cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::Bands(a) => bands(a),
        Command::GapScan(a) => gap_scan(a),
        Command::Ids(a) => ids(a),
        Command::Dos(a) => dos(a),
        Command::Chern(a) => chern(a),
        Command::FmmDecay(a) => fmm_decay(a),
        Command::PhaseDiagram(a) => phase_diagram(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be computed directly".into())),
    }
}

fn bands(a: &BandsArgs) -> CliResult<Outcome> {
    if a.grid == 0 {
        return Err(CliError::Usage("grid must be positive".into()));
    }
    let op = a.model.operator()?;
    let dim = op.fiber().dim();
    let mut header = vec!["k1".to_string(), "k2".to_string()];
    if dim == 2 {
        header.extend(["E_minus".to_string(), "E_plus".to_string()]);
    } else {
        header.extend((0..dim).map(|i| format!("E_{i}")));
    }
    let mut t = Table::new(&header);
    let step = 2.0 * std::f64::consts::PI / a.grid as f64;
    for i2 in 0..a.grid {
        for i1 in 0..a.grid {
            let k = [
                -std::f64::consts::PI + step * i1 as f64,
                -std::f64::consts::PI + step * i2 as f64,
            ];
            let mut row = vec![k[0], k[1]];
            row.extend(assemble_bloch(&op, k)?.eigenvalues());
            t.push(row);
        }
    }
    let gap = central_gap(&op, 64.max(a.grid))?;
    Ok(Outcome {
        table: t,
        notes: vec![format!("central gap {}", sci(gap))],
        failed: false,
    })
}

fn gap_scan(a: &GapScanArgs) -> CliResult<Outcome> {
    let mut t = Table::new(&["mu", "gap"]);
    for &mu in &a.mu_list.0 {
        let g = central_gap(&a.model.operator_at(mu)?, 64)?;
        t.push(vec![mu, g]);
    }
    Ok(Outcome::table(t))
}

fn ids(a: &IdsArgs) -> CliResult<Outcome> {
    let op = a.model.operator()?;
    let s = sample_spectra(&op, a.ensemble.disorder.as_ref(), &a.ensemble.ensemble(), a.squared)?;
    let n = s.ids(&a.energies.0)?;
    if !a.squared {
        return Ok(Outcome::table(n.to_table()));
    }
    let e2: Vec<f64> = n.energies.iter().map(|e| e * e).collect();
    let mut t = Table::new(&["E", "N", "stderr", "N2", "stderr2"]);
    for (i, e) in n.energies.iter().enumerate() {
        // N2 is evaluated one energy at a time: its grid E² is not sorted.
        let n2 = s.ids_squared(&e2[i..=i])?;
        t.push(vec![*e, n.values[i], n.stderr[i], n2.values[0], n2.stderr[0]]);
    }
    Ok(Outcome::table(t))
}

fn dos(a: &DosArgs) -> CliResult<Outcome> {
    let op = a.model.operator()?;
    let s = sample_spectra(&op, a.ensemble.disorder.as_ref(), &a.ensemble.ensemble(), false)?;
    let emax = a.emax.unwrap_or(s.max_abs() * (1.0 + 1e-9) + 1e-12);
    let h = s.dos(a.bins, emax)?;
    Ok(Outcome {
        notes: vec![format!("total weight {}", sci(h.total_weight))],
        table: h.to_table(),
        failed: false,
    })
}

fn chern(a: &ChernArgs) -> CliResult<Outcome> {
    let cfg = a.config();
    let entries = chern_mu_scan(
        |mu| a.model.operator_at(mu).map_err(|e| bdg_core::Error::InvalidParameter(e.to_string())),
        &a.mu_list.0,
        &cfg,
    );
    Ok(Outcome::table(scan_table(a.method, &entries)))
}

fn fmm_decay(a: &FmmArgs) -> CliResult<Outcome> {
    let op = a.model.operator()?;
    let cfg = MomentConfig {
        z: c(a.energy, a.epsilon),
        s: a.s,
        l: a.ensemble.l,
        realizations: a.ensemble.realizations,
        max_dist: a.max_dist,
        seed: a.ensemble.seed,
    };
    let d = fractional_moment_scan(&op, a.ensemble.disorder.as_ref(), &cfg)?;
    Ok(Outcome {
        notes: vec![format!(
            "rate {} +- {}, r2 {}, localized {}",
            sci(d.rate),
            sci(d.rate_err),
            sci(d.r_squared),
            d.is_localized(0.9)
        )],
        table: d.to_table(),
        failed: false,
    })
}

fn phase_diagram(a: &PhaseArgs) -> CliResult<Outcome> {
    let op = a.model.operator()?;
    let base = a.ensemble.disorder.clone().ok_or_else(|| {
        CliError::Usage("phase-diagram needs --disorder (its lambda is replaced by the grid)".into())
    })?;
    let cfg = PhaseConfig {
        s: a.s,
        epsilon: a.epsilon,
        l: a.ensemble.l,
        realizations: a.ensemble.realizations,
        max_dist: a.max_dist,
        seed: a.ensemble.seed,
    };
    let pd = localization_phase_diagram(&op, &base, &a.lambda_grid.0, &a.e_grid.0, &cfg)?;
    let threshold = gap_closure_threshold(a.model.params.mu.abs(), base.max_half_width())?;
    let mut t = Table::new(&[
        "lambda",
        "E",
        "verdict",
        "rate",
        "rate_err",
        "r2",
        "n_realizations",
        "lambda_over_threshold",
    ]);
    for cell in &pd.cells {
        t.push(vec![
            cell.lambda,
            cell.e,
            cell.verdict.code(),
            cell.rate,
            cell.rate_err,
            cell.r_squared,
            cell.n_realizations as f64,
            cell.lambda / threshold,
        ]);
    }
    Ok(Outcome {
        table: t,
        notes: vec![format!("gap-closure threshold mu/r = {}", sci(threshold))],
        failed: false,
    })
}

fn verify_cmd(a: &VerifyArgs) -> CliResult<Outcome> {
    let opts = VerifyOptions {
        seed: a.seed,
        fault: a.inject_fault,
    };
    let all = verify::checks();
    for name in &a.only {
        if !all.iter().any(|(n, _)| n == name) {
            let names: Vec<&str> = all.iter().map(|(n, _)| *n).collect();
            return Err(CliError::Usage(format!(
                "unknown check '{name}', expected one of {}",
                names.join(", ")
            )));
        }
    }
    let mut notes = Vec::new();
    let checks = all
        .into_iter()
        .filter(|(n, _)| a.only.is_empty() || a.only.iter().any(|o| o == n))
        .map(|(name, f)| {
            let c = verify::run_check(name, f, &opts);
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let line = format!("{tag} {} ({:.1}s) {}", c.name, c.seconds, c.detail);
            eprintln!("{line}");
            notes.push(line);
            c
        })
        .collect();
    let report = VerifyReport { checks };
    Ok(Outcome {
        table: report.to_table(),
        // Lines were already printed as the checks ran.
        notes: Vec::new(),
        failed: !report.all_passed(),
    })
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("threads must be positive".into()));
        }
        // A pool that is already set up (repeated calls in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Writes the table and, when a file is given, its manifest.
fn emit(cmd: &Command, outcome: &Outcome, out: Option<&Path>) -> CliResult<()> {
    let csv = outcome.table.to_csv();
    let Some(out) = out else {
        print!("{csv}");
        return Ok(());
    };
    fs::write(out, &csv).map_err(|e| io_error(out, e))?;
    let model = match cmd.model() {
        Some(m) => Some(
            serde_json::from_str::<serde_json::Value>(&m.operator()?.to_json()?)
                .map_err(|e| CliError::Failure(e.to_string()))?,
        ),
        None => None,
    };
    let manifest = ExperimentManifest {
        artifact_version: ARTIFACT_VERSION.into(),
        invocation: cmd.clone(),
        model,
        output: out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Failure(e.to_string()))?;
    let mpath = manifest_path(out);
    fs::write(&mpath, text + "\n").map_err(|e| io_error(&mpath, e))
}

fn execute(cmd: &Command, out: Option<&Path>) -> CliResult<bool> {
    let outcome = compute(cmd)?;
    for n in &outcome.notes {
        eprintln!("{n}");
    }
    emit(cmd, &outcome, out)?;
    Ok(outcome.failed)
}

fn replay(a: &ReplayArgs) -> CliResult<bool> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| io_error(&a.manifest, e))?;
    let manifest: ExperimentManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest: {e}")))?;
    if matches!(manifest.invocation, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    let out = match &a.out {
        Some(p) => p.clone(),
        None => a
            .manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join(&manifest.output),
    };
    configure_threads(a.threads)?;
    execute(&manifest.invocation, Some(&out))
}

/// Runs a parsed command line; `Ok(true)` means a verification failed.
pub fn run(mut cmd: Command) -> CliResult<bool> {
    if let Command::Replay(a) = &cmd {
        return replay(a);
    }
    let io = cmd.io().cloned().unwrap_or_default();
    configure_threads(io.threads)?;
    if let Some(io) = cmd.io_mut() {
        *io = IoArgs::default();
    }
    execute(&cmd, io.out.as_deref())
}

/// Entry point of the binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(false) => EXIT_OK,
        Ok(true) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_lists() {
        assert_eq!(parse_float_list("1, -2.5,3").unwrap().0, vec![1.0, -2.5, 3.0]);
        assert_eq!(parse_float_list("0:1:3").unwrap().0, vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_float_list("2:9:1").unwrap().0, vec![2.0]);
        assert!(parse_float_list("0:1").is_err());
        assert!(parse_float_list("a,b").is_err());
        assert!(parse_float_list("0:1:0").is_err());
    }

    #[test]
    fn params_in_both_forms() {
        let a = parse_params("delta=1,mu=2").unwrap();
        let b = parse_params(r#"{"delta":1.0,"mu":2.0}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_params("mu=0.1").unwrap().delta, 0.3);
        assert!(parse_params("nu=1").is_err());
        assert!(parse_params("mu=inf").is_err());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("/tmp/x/chern.csv")),
            PathBuf::from("/tmp/x/chern.csv.manifest.json")
        );
    }

    #[test]
    fn invocation_round_trips_without_io() {
        let cli = Cli::try_parse_from([
            "bdg", "chern", "--model", "did+", "--su2-block", "--params", "delta=1,mu=2",
            "--mu-list", "2,5", "--method", "berry", "--out", "x.csv", "--threads", "2",
        ])
        .unwrap();
        let json = serde_json::to_string(&cli.command).unwrap();
        assert!(!json.contains("x.csv"));
        let back: Command = serde_json::from_str(&json).unwrap();
        let Command::Chern(a) = back else { panic!("wrong command") };
        assert_eq!(a.mu_list.0, vec![2.0, 5.0]);
        assert_eq!(a.method, ChernMethod::Berry);
        assert!(a.model.su2_block);
        assert_eq!(a.io, IoArgs::default());
    }

    #[test]
    fn usage_errors_map_to_exit_two() {
        assert_eq!(main_with_args(["bdg", "bands", "--model", "q"]), EXIT_USAGE);
        assert_eq!(main_with_args(["bdg", "nonsense"]), EXIT_USAGE);
        assert_eq!(
            main_with_args(["bdg", "verify", "--check", "no-such-check"]),
            EXIT_USAGE
        );
    }
}
