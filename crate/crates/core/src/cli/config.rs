//! Sectioned `key = value` experiment files.
//!
//! ```text
//! [measure]
//! family = parabola1d
//! M = 1, 2, 4, 8
//! resolution_per_m = 32
//!
//! [grid]
//! half_extent = 20, 20
//! points = 256, 256
//!
//! [run]
//! p = 6
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::maximize::{Init, RunConfig};
use crate::measure::{build_custom, build_family, parse_atom_table, Atom, DiscreteMeasure, Family};
use crate::extension::{fft_compatible_grid, SpaceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Norm,
    Maximize,
    ScanM,
    EndpointDemo,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Norm => "norm",
            Command::Maximize => "maximize",
            Command::ScanM => "scan-m",
            Command::EndpointDemo => "endpoint-demo",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag(String),
    Missing,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag(s) => write!(f, "flag --{s}"),
            Origin::Missing => f.write_str("config"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Origin,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.origin, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(origin: &Origin, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { origin: origin.clone(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Named {
        family: Family,
        /// Truncations; several only for `scan-m`.
        ms: Vec<f64>,
        resolution: Resolution,
    },
    Custom {
        path: PathBuf,
        atoms: Vec<Atom>,
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    Fixed(usize),
    /// Resolution proportional to `M`, keeping the atom spacing fixed.
    PerM(f64),
}

impl Resolution {
    pub fn at(self, m: f64) -> Result<usize, String> {
        match self {
            Resolution::Fixed(n) => Ok(n),
            Resolution::PerM(r) => {
                let n = r * m;
                if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
                    return Err(format!("resolution_per_m = {r} gives non-integer resolution {n} at M = {m}"));
                }
                Ok(n.round() as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub half_extent: Vec<f64>,
    pub points: Vec<usize>,
    /// When set, the spatial axes are laid out for the lattice FFT of this
    /// size: the spatial spacing follows from the atom spacing, `points[0]`
    /// is the spatial point count and only the last `half_extent` entry (the
    /// time axis) is used.
    pub fft_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub measure: MeasureSpec,
    pub grid: GridSpec,
    pub run: RunConfig,
    /// Whether `p` was set explicitly rather than defaulted.
    pub p_explicit: bool,
    pub output_prefix: PathBuf,
    canonical: String,
}

impl ExperimentConfig {
    /// Effective settings, one `section.key=value` per line, excluding the
    /// output section.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    /// SHA-256 of [`ExperimentConfig::canonical`] plus the command name.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.name().as_bytes());
        h.update(b"\n");
        h.update(self.canonical.as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn ms(&self) -> Vec<f64> {
        match &self.measure {
            MeasureSpec::Named { ms, .. } => ms.clone(),
            MeasureSpec::Custom { .. } => vec![],
        }
    }

    pub fn family(&self) -> Family {
        match &self.measure {
            MeasureSpec::Named { family, .. } => *family,
            MeasureSpec::Custom { .. } => Family::Custom,
        }
    }

    /// The configured measure at truncation `m` (ignored for custom measures).
    pub fn build_measure(&self, m: f64) -> crate::Result<DiscreteMeasure> {
        match &self.measure {
            MeasureSpec::Named { family, resolution, .. } => {
                let n = resolution.at(m).map_err(crate::LabError::InvalidArgument)?;
                build_family(*family, m, n)
            }
            MeasureSpec::Custom { atoms, dim, .. } => build_custom(atoms.clone(), *dim),
        }
    }

    /// The configured grid for `measure`.
    pub fn build_grid(&self, measure: &DiscreteMeasure) -> crate::Result<SpaceGrid> {
        let g = &self.grid;
        match g.fft_size {
            Some(n) => fft_compatible_grid(
                measure,
                n,
                g.points[0],
                *g.half_extent.last().unwrap(),
                *g.points.last().unwrap(),
            ),
            None => SpaceGrid::new(g.half_extent.clone(), g.points.clone()),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("measure", &["family", "M", "resolution", "resolution_per_m", "atoms"]),
    ("grid", &["half_extent", "points", "fft_size"]),
    ("run", &["p", "max_iters", "ratio_tol", "cauchy_tol", "recenter_every", "seed", "init"]),
    ("output", &["prefix"]),
];

type Raw = BTreeMap<(String, String), (String, Origin)>;

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, ks)| *s == section && ks.contains(&key))
}

fn read_file(text: &str) -> Result<Raw, ConfigError> {
    let mut raw = Raw::new();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(&origin, format!("malformed section header '{line}'"));
            };
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return err(&origin, format!("unknown section [{name}]"));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(&origin, format!("expected key = value, got '{line}'"));
        };
        let Some(sec) = &section else {
            return err(&origin, "key outside of any section");
        };
        let key = key.trim();
        if !known(sec, key) {
            return err(&origin, format!("unknown key '{key}' in [{sec}]"));
        }
        if raw.insert((sec.clone(), key.to_string()), (value.trim().to_string(), origin.clone())).is_some() {
            return err(&origin, format!("duplicate key '{key}' in [{sec}]"));
        }
    }
    Ok(raw)
}

/// Apply `key=value` or `section.key=value` overrides (leading dashes
/// already stripped). Bare keys must name exactly one section's key.
fn apply_overrides(raw: &mut Raw, overrides: &[String]) -> Result<(), ConfigError> {
    for flag in overrides {
        let origin = Origin::Flag(flag.clone());
        let Some((name, value)) = flag.split_once('=') else {
            return err(&origin, "overrides take the form --key=value");
        };
        let (section, key) = match name.split_once('.') {
            Some((s, k)) => (s.to_string(), k.to_string()),
            None => {
                let hits: Vec<&str> =
                    KEYS.iter().filter(|(_, ks)| ks.contains(&name)).map(|(s, _)| *s).collect();
                match hits.as_slice() {
                    [s] => (s.to_string(), name.to_string()),
                    [] => return err(&origin, format!("unknown key '{name}'")),
                    _ => return err(&origin, format!("ambiguous key '{name}'; qualify it with a section")),
                }
            }
        };
        if !known(&section, &key) {
            return err(&origin, format!("unknown key '{section}.{key}'"));
        }
        raw.insert((section, key), (value.trim().to_string(), origin));
    }
    Ok(())
}

struct Reader {
    raw: Raw,
    canonical: BTreeMap<String, String>,
}

impl Reader {
    fn get(&self, section: &str, key: &str) -> Option<&(String, Origin)> {
        self.raw.get(&(section.to_string(), key.to_string()))
    }

    fn parse<T>(
        &mut self,
        section: &str,
        key: &str,
        f: impl Fn(&str) -> Option<T>,
        what: &str,
    ) -> Result<Option<T>, ConfigError> {
        let Some((value, origin)) = self.get(section, key).cloned() else {
            return Ok(None);
        };
        match f(&value) {
            Some(v) => {
                let normal = value.split(',').map(str::trim).collect::<Vec<_>>().join(",");
                self.canonical.insert(format!("{section}.{key}"), normal);
                Ok(Some(v))
            }
            None => err(&origin, format!("malformed value '{value}' for {key}: expected {what}")),
        }
    }

    fn require<T>(
        &mut self,
        section: &str,
        key: &str,
        f: impl Fn(&str) -> Option<T>,
        what: &str,
    ) -> Result<T, ConfigError> {
        self.parse(section, key, f, what)?
            .map_or_else(|| err(&Origin::Missing, format!("missing required key {section}.{key}")), Ok)
    }

    fn origin(&self, section: &str, key: &str) -> Origin {
        self.get(section, key).map_or(Origin::Missing, |(_, o)| o.clone())
    }

    fn note(&mut self, key: &str, value: String) {
        self.canonical.insert(key.to_string(), value);
    }
}

fn real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn exponent(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ => real(s),
    }
}

fn count(s: &str) -> Option<usize> {
    s.parse().ok()
}

fn list<T>(f: fn(&str) -> Option<T>) -> impl Fn(&str) -> Option<Vec<T>> {
    move |s: &str| s.split(',').map(|x| f(x.trim())).collect::<Option<Vec<T>>>().filter(|v| !v.is_empty())
}

fn default_grid(family: Family) -> Option<(Vec<f64>, Vec<usize>)> {
    match family {
        Family::Parabola1D => Some((vec![20.0; 2], vec![256; 2])),
        Family::Paraboloid2D => Some((vec![10.0; 3], vec![64; 3])),
        Family::Cone3D => Some((vec![8.0; 4], vec![48; 4])),
        Family::Custom => None,
    }
}

/// Parse a config file's text with flag overrides. `base` resolves the
/// relative atom-table path of custom measures.
pub fn parse_config_str(
    command: Command,
    text: &str,
    base: &Path,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = read_file(text)?;
    apply_overrides(&mut raw, overrides)?;
    let mut r = Reader { raw, canonical: BTreeMap::new() };

    let family = r.require("measure", "family", |s| s.parse::<Family>().ok(), "a family name")?;
    let measure = if family == Family::Custom {
        for key in ["M", "resolution", "resolution_per_m"] {
            if r.get("measure", key).is_some() {
                return err(&r.origin("measure", key), format!("{key} does not apply to custom measures"));
            }
        }
        let rel: PathBuf = r.require("measure", "atoms", |s| Some(PathBuf::from(s)), "a path")?;
        let path = if rel.is_absolute() { rel } else { base.join(rel) };
        let origin = r.origin("measure", "atoms");
        let text = std::fs::read_to_string(&path)
            .or_else(|e| err(&origin, format!("cannot read atom table {}: {e}", path.display())))?;
        let atoms = parse_atom_table(&text).or_else(|e| err(&origin, e.to_string()))?;
        let dim = atoms[0].point.len();
        // the table's contents, not its location, identify the experiment
        r.note("measure.atoms", format!("{:x}", Sha256::digest(text.as_bytes())));
        MeasureSpec::Custom { path, atoms, dim }
    } else {
        if r.get("measure", "atoms").is_some() {
            return err(&r.origin("measure", "atoms"), "atoms applies only to family = custom");
        }
        let ms = r.require("measure", "M", list(real), "a positive number or comma-separated list")?;
        if ms.iter().any(|&m| m <= 0.0) {
            return err(&r.origin("measure", "M"), "truncations M must be positive");
        }
        if command != Command::ScanM && ms.len() > 1 {
            return err(&r.origin("measure", "M"), format!("{} takes a single M", command.name()));
        }
        let fixed = r.parse("measure", "resolution", count, "a positive integer")?;
        let per_m = r.parse("measure", "resolution_per_m", real, "a positive number")?;
        let resolution = match (fixed, per_m) {
            (Some(_), Some(_)) => {
                return err(&r.origin("measure", "resolution_per_m"), "set resolution or resolution_per_m, not both")
            }
            (Some(0), _) => return err(&r.origin("measure", "resolution"), "resolution must be positive"),
            (Some(n), None) => Resolution::Fixed(n),
            (None, Some(v)) if v > 0.0 => Resolution::PerM(v),
            (None, Some(_)) => {
                return err(&r.origin("measure", "resolution_per_m"), "resolution_per_m must be positive")
            }
            (None, None) => {
                let n = family.default_resolution();
                r.note("measure.resolution", n.to_string());
                Resolution::Fixed(n)
            }
        };
        for &m in &ms {
            resolution.at(m).or_else(|e| err(&r.origin("measure", "resolution_per_m"), e))?;
        }
        MeasureSpec::Named { family, ms, resolution }
    };
    let dim = match &measure {
        MeasureSpec::Named { family, .. } => family.ambient_dim().unwrap(),
        MeasureSpec::Custom { dim, .. } => *dim,
    };

    let fft_size = r.parse("grid", "fft_size", count, "a positive integer")?;
    let defaults = default_grid(family);
    let half_extent = match r.parse("grid", "half_extent", list(real), "comma-separated numbers")? {
        Some(v) => v,
        None => match &defaults {
            Some((h, _)) => {
                r.note("grid.half_extent", join(h));
                h.clone()
            }
            None => return err(&Origin::Missing, "missing required key grid.half_extent"),
        },
    };
    let points = match r.parse("grid", "points", list(count), "comma-separated integers")? {
        Some(v) => v,
        None => match &defaults {
            Some((_, p)) => {
                r.note("grid.points", join(p));
                p.clone()
            }
            None => return err(&Origin::Missing, "missing required key grid.points"),
        },
    };
    if points.len() != dim {
        return err(&r.origin("grid", "points"), format!("points needs {dim} entries, got {}", points.len()));
    }
    // with fft_size the spatial extents are derived, so the time extent alone suffices
    if half_extent.len() != dim && !(fft_size.is_some() && half_extent.len() == 1) {
        return err(
            &r.origin("grid", "half_extent"),
            format!("half_extent needs {dim} entries, got {}", half_extent.len()),
        );
    }
    if half_extent.iter().any(|&l| l <= 0.0) {
        return err(&r.origin("grid", "half_extent"), "half extents must be positive");
    }
    if points.iter().any(|&n| n < 2) {
        return err(&r.origin("grid", "points"), "every axis needs at least 2 points");
    }
    if let Some(n) = fft_size {
        if !matches!(family, Family::Parabola1D | Family::Paraboloid2D) {
            return err(&r.origin("grid", "fft_size"), "fft_size needs a lattice family (parabola1d or paraboloid2d)");
        }
        if n == 0 {
            return err(&r.origin("grid", "fft_size"), "fft_size must be positive");
        }
    }

    let d = RunConfig::default();
    let p_given = r.parse("run", "p", exponent, "a number or inf")?;
    let p_explicit = p_given.is_some();
    let p = p_given.unwrap_or_else(|| family.endpoint_exponent().unwrap_or(d.p));
    r.note("run.p", p.to_string());
    let mut field = |key: &str, f: fn(&str) -> Option<f64>, default: f64| -> Result<f64, ConfigError> {
        let v = r.parse("run", key, f, "a number")?.unwrap_or(default);
        r.note(&format!("run.{key}"), v.to_string());
        Ok(v)
    };
    let ratio_tol = field("ratio_tol", real, d.ratio_tol)?;
    let cauchy_tol = field("cauchy_tol", real, d.cauchy_tol)?;
    let mut int = |key: &str, default: u64| -> Result<u64, ConfigError> {
        let v = r.parse("run", key, |s| s.parse::<u64>().ok(), "a nonnegative integer")?.unwrap_or(default);
        r.note(&format!("run.{key}"), v.to_string());
        Ok(v)
    };
    let max_iters = int("max_iters", d.max_iters as u64)? as usize;
    let recenter_every = int("recenter_every", d.recenter_every as u64)? as usize;
    let seed = int("seed", d.seed)?;
    let init = r.parse("run", "init", |s| s.parse::<Init>().ok(), "gaussian or random")?.unwrap_or(d.init);
    r.note("run.init", init.name().to_string());
    let checks = [
        ("p", p > 2.0, "p must exceed 2"),
        ("ratio_tol", ratio_tol > 0.0, "ratio_tol must be positive"),
        ("cauchy_tol", cauchy_tol > 0.0, "cauchy_tol must be positive"),
        ("max_iters", max_iters > 0, "max_iters must be at least 1"),
        ("recenter_every", recenter_every > 0, "recenter_every must be at least 1"),
    ];
    if let Some((key, _, msg)) = checks.iter().find(|c| !c.1) {
        return err(&r.origin("run", key), *msg);
    }
    let run = RunConfig { p, max_iters, ratio_tol, cauchy_tol, recenter_every, seed, init };

    let prefix = r.get("output", "prefix").map(|(v, _)| v.clone()).unwrap_or_else(|| "restriction-lab".into());
    let output_prefix = {
        let p = PathBuf::from(prefix);
        if p.is_absolute() { p } else { base.join(p) }
    };

    let canonical = r.canonical.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    Ok(ExperimentConfig { command, measure, grid: GridSpec { half_extent, points, fft_size }, run, p_explicit, output_prefix, canonical })
}

/// Read and parse a config file.
pub fn parse_config(command: Command, path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).or_else(|e| {
        err(&Origin::Missing, format!("cannot read config {}: {e}", path.display()))
    })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config_str(command, &text, base, overrides)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
