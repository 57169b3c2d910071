//! Command-line front end: experiment drivers that turn an
//! [`ExperimentConfig`] into CSV files and a one-line summary.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::error::LabError;
use crate::extension::{extend, SpaceGrid};
use crate::maximize::{ratio, solve, Init, RunConfig, SolverRun};
use crate::measure::{parabolic_rescale, resample, DiscreteMeasure, Family};

pub use config::{parse_config, parse_config_str, Command, ConfigError, ExperimentConfig, Origin};

/// Improvement a larger truncation must show before it counts as evidence
/// that the smaller problem's supremum is not attained.
pub const NON_ATTAINMENT_MARGIN: f64 = 1e-5;

pub const THREADS_ENV: &str = "RESTRICTION_LAB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("out of validity: {0}")]
    OutOfValidity(String),
}

impl CliError {
    /// 2 for configuration and argument errors, 3 for numeric failure, 4 for
    /// requests outside the range where the operator is bounded.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lab(LabError::NumericFailure { .. }) => 3,
            CliError::OutOfValidity(_) => 4,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Output of a command: files to write and a summary for stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: String,
    pub files: Vec<(PathBuf, String)>,
}

impl Report {
    pub fn file(&self, suffix: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(p, _)| p.to_string_lossy().ends_with(suffix))
            .map(|(_, c)| c.as_str())
    }

    pub fn write(&self) -> CliResult<()> {
        for (path, contents) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(LabError::from)?;
            }
            std::fs::write(path, contents).map_err(LabError::from)?;
        }
        Ok(())
    }
}

fn output(cfg: &ExperimentConfig, suffix: &str) -> PathBuf {
    let mut name = cfg.output_prefix.clone().into_os_string();
    name.push(format!("_{suffix}"));
    PathBuf::from(name)
}

/// `#` lines identifying the producing binary and the effective config.
pub fn provenance(cfg: &ExperimentConfig) -> String {
    format!(
        "# generator=restriction-lab {}\n# command={}\n# config_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.command.name(),
        cfg.hash()
    )
}

fn with_footer(cfg: &ExperimentConfig, body: String) -> String {
    body + &provenance(cfg)
}

fn key_values(rows: &[(&str, String)]) -> String {
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn e(x: f64) -> String {
    format!("{x:.16e}")
}

/// Refuse exponents below the endpoint of a named family.
fn check_validity(cfg: &ExperimentConfig, p: f64) -> CliResult<()> {
    if let Some(p0) = cfg.family().endpoint_exponent() {
        if p < p0 {
            return Err(CliError::OutOfValidity(format!(
                "{} is only bounded into L^p for p >= {p0}; got p = {p}",
                cfg.family()
            )));
        }
    }
    Ok(())
}

fn single_m(cfg: &ExperimentConfig) -> f64 {
    cfg.ms().first().copied().unwrap_or(0.0)
}

fn setup(cfg: &ExperimentConfig, m: f64) -> CliResult<(DiscreteMeasure, SpaceGrid)> {
    let mu = cfg.build_measure(m)?;
    let grid = cfg.build_grid(&mu)?;
    Ok((mu, grid))
}

fn describe(cfg: &ExperimentConfig, m: f64) -> String {
    match cfg.family() {
        Family::Custom => "custom".into(),
        f => format!("{f} M={m}"),
    }
}

/// Operator-norm estimate for the configured measure and exponent.
pub fn cmd_norm(cfg: &ExperimentConfig) -> CliResult<Report> {
    check_validity(cfg, cfg.run.p)?;
    let m = single_m(cfg);
    let (mu, grid) = setup(cfg, m)?;
    let run = solve(&mu, &grid, &cfg.run)?;
    let summary = format!(
        "norm {} p={} estimate={:.15e} iterations={} converged={}",
        describe(cfg, m),
        cfg.run.p,
        run.final_ratio(),
        run.iterations(),
        run.converged
    );
    Ok(Report { summary, files: vec![(output(cfg, "norm.csv"), with_footer(cfg, run.to_csv()))] })
}

fn density_csv(mu: &DiscreteMeasure, run: &SolverRun) -> String {
    let mut header = vec!["atom".to_string()];
    header.extend((0..mu.dim()).map(|i| format!("point_{i}")));
    header.extend(["weight", "re", "im", "modulus"].map(String::from));
    let mut out = header.join(",") + "\n";
    for (j, (a, c)) in mu.atoms().iter().zip(&run.final_density.coeffs).enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(a.point.iter().map(|&x| e(x)));
        row.extend([e(a.weight), e(c.re), e(c.im), e(c.norm())]);
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Maximizer search: the run history, the final density and its field.
pub fn cmd_maximize(cfg: &ExperimentConfig) -> CliResult<Report> {
    check_validity(cfg, cfg.run.p)?;
    let m = single_m(cfg);
    let (mu, grid) = setup(cfg, m)?;
    let run = solve(&mu, &grid, &cfg.run)?;
    let field = extend(&mu, &run.final_density, &grid)?;
    let summary = format!(
        "maximize {} p={} ratio={:.15e} iterations={} converged={} tail_fraction={:.3e}",
        describe(cfg, m),
        cfg.run.p,
        run.final_ratio(),
        run.iterations(),
        run.converged,
        run.tail_fraction
    );
    let files = vec![
        (output(cfg, "run.csv"), with_footer(cfg, run.to_csv())),
        (output(cfg, "density.csv"), with_footer(cfg, density_csv(&mu, &run))),
        (output(cfg, "field.csv"), with_footer(cfg, field.to_csv(&grid))),
    ];
    Ok(Report { summary, files })
}

/// One row of an M scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub m: f64,
    pub resolution: usize,
    pub run: SolverRun,
    /// Ratio, on this row's problem, of the previous row's final density
    /// carried over by parabolic rescaling (parabola only).
    pub rescaled_start: Option<f64>,
}

/// Aitken extrapolation of the last three values of an increasing sequence
/// with geometrically shrinking gaps.
pub fn aitken_limit(values: &[f64]) -> Option<f64> {
    let [a, b, c] = values.get(values.len().checked_sub(3)?..)? else {
        return None;
    };
    let (g1, g2) = (b - a, c - b);
    if !(g1 > 0.0 && g2 > 0.0 && g2 < g1) {
        return None;
    }
    Some(c + g2 * g2 / (g1 - g2))
}

/// Solver runs of an M scan, before formatting.
pub fn scan_rows(cfg: &ExperimentConfig) -> CliResult<Vec<ScanRow>> {
    if cfg.family() == Family::Custom {
        return Err(LabError::InvalidArgument("scan-m needs a named family".into()).into());
    }
    check_validity(cfg, cfg.run.p)?;
    let ms = cfg.ms();
    if ms.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::InvalidArgument(format!("M list must be strictly ascending, got {ms:?}")).into());
    }
    let mut rows: Vec<ScanRow> = Vec::new();
    let mut prev: Option<(DiscreteMeasure, f64)> = None;
    for &m in &ms {
        let (mu, grid) = setup(cfg, m)?;
        let run = solve(&mu, &grid, &cfg.run)?;
        let rescaled_start = match (&prev, cfg.family()) {
            (Some((pmu, pm)), Family::Parabola1D) if cfg.run.p.is_finite() => {
                let last = &rows.last().unwrap().run.final_density;
                Some(rescaled_ratio(pmu, last, m / pm, &mu, &grid, cfg.run.p)?)
            }
            _ => None,
        };
        rows.push(ScanRow { m, resolution: mu.resolution().unwrap_or(mu.len()), run, rescaled_start });
        prev = Some((mu, m));
    }
    Ok(rows)
}

/// Rescale `h` from `from` by `lambda`, carry it onto `to` and normalize.
fn rescaled_density(
    from: &DiscreteMeasure,
    h: &crate::measure::Density,
    lambda: f64,
    to: &DiscreteMeasure,
) -> crate::Result<crate::measure::Density> {
    let (big, hs) = parabolic_rescale(from, h, lambda)?;
    to.normalized(&resample(&big, &hs, to)?)
}

fn rescaled_ratio(
    from: &DiscreteMeasure,
    h: &crate::measure::Density,
    lambda: f64,
    to: &DiscreteMeasure,
    grid: &SpaceGrid,
    p: f64,
) -> crate::Result<f64> {
    ratio(to, &rescaled_density(from, h, lambda, to)?, grid, p)
}

/// Best ratio per truncation `M`, with monotonicity and gap checks.
pub fn cmd_scan_m(cfg: &ExperimentConfig) -> CliResult<Report> {
    let rows = scan_rows(cfg)?;
    let mut csv = String::from(
        "M,resolution,ratio,iterations,converged,weak_mass,tail_fraction,rescaled_start,rescale_gain\n",
    );
    let mut files = Vec::new();
    for row in &rows {
        let r = &row.run;
        let (start, gain) = match row.rescaled_start {
            Some(s) => (e(s), e(r.final_ratio() - s)),
            None => (e(f64::NAN), e(f64::NAN)),
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            row.m,
            row.resolution,
            e(r.final_ratio()),
            r.iterations(),
            r.converged,
            e(r.diagnostics.weak_mass),
            e(r.tail_fraction),
            start,
            gain
        );
        files.push((output(cfg, &format!("scan_M{}.csv", row.m)), with_footer(cfg, r.to_csv())));
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.run.final_ratio()).collect();
    let gaps: Vec<f64> = ratios.windows(2).map(|w| w[1] - w[0]).collect();
    let mut summary = format!("scan-m {} p={}:", cfg.family(), cfg.run.p);
    for row in &rows {
        let _ = write!(summary, " R*({})={:.10}", row.m, row.run.final_ratio());
    }
    if !gaps.is_empty() {
        let increasing = gaps.iter().all(|&g| g > 0.0);
        let _ = writeln!(csv, "# increasing={increasing}");
        let _ = write!(summary, " increasing={increasing}");
    }
    if gaps.len() >= 2 {
        let shrinking = gaps.windows(2).all(|w| w[1] < w[0]);
        let _ = writeln!(csv, "# gaps_decreasing={shrinking}");
        let _ = write!(summary, " gaps_decreasing={shrinking}");
    }
    let gains: Vec<f64> =
        rows.iter().filter_map(|r| r.rescaled_start.map(|s| r.run.final_ratio() - s)).collect();
    if !gains.is_empty() {
        let improves = gains.iter().all(|&g| g > NON_ATTAINMENT_MARGIN);
        let _ = writeln!(csv, "# rescale_improves={improves}");
    }
    if let Some(limit) = aitken_limit(&ratios) {
        let _ = writeln!(csv, "# limit_estimate={}", e(limit));
        let _ = write!(summary, " limit_estimate={limit:.10}");
    }
    files.insert(0, (output(cfg, "scan.csv"), with_footer(cfg, csv)));
    Ok(Report { summary, files })
}

/// Contrast of the endpoint exponent with an exponent above it.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointVerdict {
    pub endpoint: SolverRun,
    pub above: SolverRun,
    /// "rescale" for the parabola, "scan" otherwise.
    pub witness: &'static str,
    pub witness_start: f64,
    pub witness_final: f64,
    /// Warm-started run on the doubled truncation (parabola only).
    pub witness_run: Option<SolverRun>,
}

impl EndpointVerdict {
    pub fn witness_gain(&self) -> f64 {
        self.witness_final - self.witness_start
    }

    pub fn non_attainment_witnessed(&self) -> bool {
        self.witness_gain() > NON_ATTAINMENT_MARGIN
    }
}

pub fn endpoint_verdict(cfg: &ExperimentConfig) -> CliResult<EndpointVerdict> {
    let Some(p0) = cfg.family().endpoint_exponent() else {
        return Err(LabError::InvalidArgument("endpoint-demo needs a named family".into()).into());
    };
    check_validity(cfg, cfg.run.p)?;
    let m = single_m(cfg);
    let (mu, grid) = setup(cfg, m)?;
    let at = |p: f64| RunConfig { p, ..cfg.run.clone() };
    let endpoint = solve(&mu, &grid, &at(p0))?;
    let above = solve(&mu, &grid, &at(p0 + 2.0))?;
    let (mu2, grid2) = setup(cfg, 2.0 * m)?;
    if cfg.family() == Family::Parabola1D {
        let h = rescaled_density(&mu, &endpoint.final_density, 2.0, &mu2)?;
        let start = ratio(&mu2, &h, &grid2, p0)?;
        let warm = solve(&mu2, &grid2, &RunConfig { init: Init::Provided(h), ..at(p0) })?;
        Ok(EndpointVerdict {
            witness: "rescale",
            witness_start: start,
            witness_final: warm.final_ratio(),
            witness_run: Some(warm),
            endpoint,
            above,
        })
    } else {
        let bigger = solve(&mu2, &grid2, &at(p0))?;
        Ok(EndpointVerdict {
            witness: "scan",
            witness_start: endpoint.final_ratio(),
            witness_final: bigger.final_ratio(),
            witness_run: None,
            endpoint,
            above,
        })
    }
}

/// Runs at `p₀` and `p₀ + 2` plus the non-attainment witness.
pub fn cmd_endpoint_demo(cfg: &ExperimentConfig) -> CliResult<Report> {
    let v = endpoint_verdict(cfg)?;
    let m = single_m(cfg);
    let (p0, p1) = (v.endpoint.p, v.above.p);
    let above_collapsed = v.above.converged && v.above.last_increment() < cfg.run.cauchy_tol;
    let rows = [
        ("family", cfg.family().to_string()),
        ("M", m.to_string()),
        ("p_endpoint", p0.to_string()),
        ("p_above", p1.to_string()),
        ("above_ratio", e(v.above.final_ratio())),
        ("above_converged", v.above.converged.to_string()),
        ("above_last_increment", e(v.above.last_increment())),
        ("above_weak_mass", e(v.above.diagnostics.weak_mass)),
        ("endpoint_ratio", e(v.endpoint.final_ratio())),
        ("endpoint_converged", v.endpoint.converged.to_string()),
        ("endpoint_last_increment", e(v.endpoint.last_increment())),
        ("witness", v.witness.to_string()),
        ("witness_M", (2.0 * m).to_string()),
        ("witness_start", e(v.witness_start)),
        ("witness_final", e(v.witness_final)),
        ("witness_gain", e(v.witness_gain())),
        ("non_attainment_witnessed", v.non_attainment_witnessed().to_string()),
        ("regimes_contrast", (above_collapsed && v.non_attainment_witnessed()).to_string()),
    ];
    let summary = format!(
        "endpoint-demo {}: p={p1} converged={} last_increment={:.3e}; p={p0} ratio {:.10} -> {:.10} at M={} (gain {:.3e}, {})",
        describe(cfg, m),
        v.above.converged,
        v.above.last_increment(),
        v.witness_start,
        v.witness_final,
        2.0 * m,
        v.witness_gain(),
        if v.non_attainment_witnessed() { "no maximizer at the endpoint" } else { "inconclusive" }
    );
    let mut files = vec![
        (output(cfg, "verdict.csv"), with_footer(cfg, key_values(&rows))),
        (output(cfg, &format!("endpoint_p{p0}.csv")), with_footer(cfg, v.endpoint.to_csv())),
        (output(cfg, &format!("endpoint_p{p1}.csv")), with_footer(cfg, v.above.to_csv())),
    ];
    if let Some(w) = &v.witness_run {
        files.push((output(cfg, "endpoint_witness.csv"), with_footer(cfg, w.to_csv())));
    }
    Ok(Report { summary, files })
}

/// Solver run followed by the full diagnostics block.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> CliResult<Report> {
    check_validity(cfg, cfg.run.p)?;
    let m = single_m(cfg);
    let (mu, grid) = setup(cfg, m)?;
    let run = solve(&mu, &grid, &cfg.run)?;
    let mut rows = vec![
        ("ratio".to_string(), e(run.final_ratio())),
        ("iterations".to_string(), run.iterations().to_string()),
        ("converged".to_string(), run.converged.to_string()),
        ("worst_ratio_decrease".to_string(), e(run.worst_ratio_decrease())),
    ];
    for line in run.diagnostics.to_key_values().lines() {
        let (k, v) = line.split_once('=').expect("key=value lines");
        rows.push((k.to_string(), v.to_string()));
    }
    let borrowed: Vec<(&str, String)> = rows.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let summary = format!(
        "diagnose {} p={}: {}",
        describe(cfg, m),
        cfg.run.p,
        rows.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    );
    let files = vec![
        (output(cfg, "diagnostics.csv"), with_footer(cfg, key_values(&borrowed))),
        (output(cfg, "run.csv"), with_footer(cfg, run.to_csv())),
    ];
    Ok(Report { summary, files })
}

pub fn execute(cfg: &ExperimentConfig) -> CliResult<Report> {
    match cfg.command {
        Command::Norm => cmd_norm(cfg),
        Command::Maximize => cmd_maximize(cfg),
        Command::ScanM => cmd_scan_m(cfg),
        Command::EndpointDemo => cmd_endpoint_demo(cfg),
        Command::Diagnose => cmd_diagnose(cfg),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Norm,
    Maximize,
    ScanM,
    EndpointDemo,
    Diagnose,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Norm => Command::Norm,
            CommandArg::Maximize => Command::Maximize,
            CommandArg::ScanM => Command::ScanM,
            CommandArg::EndpointDemo => Command::EndpointDemo,
            CommandArg::Diagnose => Command::Diagnose,
        }
    }
}

/// Fourier extension operator experiments.
#[derive(Debug, Parser)]
#[command(name = "restriction-lab", version)]
struct Args {
    command: CommandArg,
    /// Experiment file with [measure], [grid], [run] and [output] sections.
    #[arg(long)]
    config: PathBuf,
    /// Settings overriding the file, as --key=value or --section.key=value.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        LabError::InvalidArgument(format!("{THREADS_ENV} must be a nonnegative integer, got '{raw}'"))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run_args(args: &Args) -> CliResult<Report> {
    configure_threads()?;
    let mut overrides = Vec::with_capacity(args.overrides.len());
    for o in &args.overrides {
        match o.strip_prefix("--") {
            Some(flag) => overrides.push(flag.to_string()),
            None => {
                return Err(ConfigError {
                    origin: Origin::Flag(o.clone()),
                    message: "overrides take the form --key=value".into(),
                }
                .into())
            }
        }
    }
    let cfg = parse_config(args.command.into(), &args.config, &overrides)?;
    let report = execute(&cfg)?;
    report.write()?;
    Ok(report)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(err) => {
            let _ = err.print();
            return err.exit_code();
        }
    };
    match run_args(&args) {
        Ok(report) => {
            println!("{}", report.summary);
            0
        }
        Err(err) => {
            eprintln!("restriction-lab: {err}");
            err.exit_code()
        }
    }
}
