//! Run configuration, diagnostics CSV and binary checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{local_mass, morawetz_action};
use crate::error::{Error, Result};
use crate::intervals::{CascadeResult, NonEvacuationReport, SixConstants};
use crate::nonlinearity::{HartreeModel, ModelParams};
use crate::radial::{h1dot_norm, lp_norm, FieldState, RadialGrid};

/// Largest supported dimension.
pub const MAX_DIM: usize = 32;
/// Largest supported number of radial nodes.
pub const MAX_POINTS: usize = 16_384;
/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "HARTREE_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub r_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Gaussian,
    Bump,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
    /// Whitespace- or comma-separated `r re [im]` rows, required for `profile = "table"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

fn default_profile() -> Profile {
    Profile::Gaussian
}

fn one() -> f64 {
    1.0
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            profile: Profile::Gaussian,
            amplitude: 1.0,
            width: 1.0,
            table: None,
        }
    }
}

/// Constants section; absent entries are filled from the dimension defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_morawetz_radius")]
    pub morawetz_radius: f64,
    /// Multiplier `A` of the Morawetz radius `A |I|^{1/2}`.
    #[serde(default = "one")]
    pub morawetz_multiplier: f64,
    /// Pass threshold for bubble ratios.
    #[serde(default = "one")]
    pub bubble_threshold: f64,
    /// Ratio `a` of the cascade hypothesis.
    #[serde(default = "default_cascade_ratio")]
    pub cascade_ratio: f64,
}

fn yes() -> bool {
    true
}

fn default_radii() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

fn default_morawetz_radius() -> f64 {
    4.0
}

fn default_cascade_ratio() -> f64 {
    0.5
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: true,
            radii: default_radii(),
            morawetz_radius: default_morawetz_radius(),
            morawetz_multiplier: 1.0,
            bubble_threshold: 1.0,
            cascade_ratio: default_cascade_ratio(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_output_dir(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub coupling: f64,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_gamma() -> f64 {
    4.0
}

impl RunConfig {
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            dim: self.n,
            gamma: self.gamma,
            coupling: self.coupling,
        }
    }

    pub fn constants(&self) -> SixConstants {
        let d = SixConstants::for_dimension(self.n);
        SixConstants {
            c1: self.constants.c1.unwrap_or(d.c1),
            c2: self.constants.c2.unwrap_or(d.c2),
            c3: self.constants.c3.unwrap_or(d.c3),
            eta: self.constants.eta.unwrap_or(d.eta),
        }
    }

    pub fn steps(&self) -> usize {
        (self.time.t_end / self.time.dt).round() as usize
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::new(self.n, self.grid.points, self.grid.r_max)
    }

    pub fn build_model(&self, grid: Arc<RadialGrid>) -> Result<HartreeModel> {
        HartreeModel::new(grid, self.model_params())
    }

    /// Initial datum at `t = 0`; table paths are resolved against `base`.
    pub fn initial_state(&self, grid: &Arc<RadialGrid>, base: &Path) -> Result<FieldState> {
        let InitialConfig {
            profile,
            amplitude,
            width,
            ref table,
        } = self.initial;
        Ok(match profile {
            Profile::Gaussian => FieldState::from_real_profile(grid.clone(), 0.0, |r| {
                let s = r / width;
                amplitude * (-s * s).exp()
            }),
            Profile::Bump => FieldState::from_real_profile(grid.clone(), 0.0, |r| {
                let s = r / width;
                if s < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }),
            Profile::Table => {
                let path = table.as_ref().ok_or_else(|| Error::Config {
                    line: 0,
                    message: "initial.table is required for profile = \"table\"".into(),
                })?;
                let path = if path.is_relative() {
                    base.join(path)
                } else {
                    path.clone()
                };
                let rows = read_profile_table(&path)?;
                FieldState::from_profile(grid.clone(), 0.0, |r| amplitude * interpolate_table(&rows, r / width))
            }
        })
    }

    /// Effective configuration, every default written out.
    pub fn emit(&self) -> String {
        let mut filled = self.clone();
        let c = self.constants();
        filled.constants = ConstantsConfig {
            c1: Some(c.c1),
            c2: Some(c.c2),
            c3: Some(c.c3),
            eta: Some(c.eta),
        };
        toml::to_string(&filled).expect("configuration is serializable")
    }

    fn validate(&self, text: &str) -> Result<()> {
        let fail = |section: &str, key: &str, message: String| Error::Config {
            line: key_line(text, section, key),
            message,
        };
        if !(5..=MAX_DIM).contains(&self.n) {
            return Err(fail("", "n", format!("n = {} must lie in [5, {MAX_DIM}]", self.n)));
        }
        if !(self.gamma > 0.0 && self.gamma < self.n as f64) {
            return Err(fail(
                "",
                "gamma",
                format!("gamma = {} must satisfy 0 < gamma < n = {}", self.gamma, self.n),
            ));
        }
        if !self.coupling.is_finite() {
            return Err(fail("", "coupling", "coupling must be finite".into()));
        }
        if !(16..=MAX_POINTS).contains(&self.grid.points) {
            return Err(fail(
                "grid",
                "points",
                format!("grid.points = {} must lie in [16, {MAX_POINTS}]", self.grid.points),
            ));
        }
        if !(self.grid.r_max > 0.0 && self.grid.r_max.is_finite()) {
            return Err(fail(
                "grid",
                "r_max",
                format!("grid.r_max = {} must be positive", self.grid.r_max),
            ));
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(fail("time", "dt", format!("time.dt = {} must be positive", t.dt)));
        }
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return Err(fail(
                "time",
                "t_end",
                format!("time.t_end = {} must be positive", t.t_end),
            ));
        }
        let steps = (t.t_end / t.dt).round();
        if steps < 1.0 || (steps * t.dt - t.t_end).abs() > 1e-9 * t.t_end {
            return Err(fail(
                "time",
                "t_end",
                format!(
                    "time.t_end = {} is not an integer multiple of time.dt = {}",
                    t.t_end, t.dt
                ),
            ));
        }
        if t.record_every == 0 || !(steps as usize).is_multiple_of(t.record_every) {
            return Err(fail(
                "time",
                "record_every",
                format!(
                    "time.record_every = {} must divide the step count {}",
                    t.record_every, steps
                ),
            ));
        }
        let i = &self.initial;
        if !i.amplitude.is_finite() {
            return Err(fail("initial", "amplitude", "initial.amplitude must be finite".into()));
        }
        if !(i.width > 0.0 && i.width.is_finite()) {
            return Err(fail(
                "initial",
                "width",
                format!("initial.width = {} must be positive", i.width),
            ));
        }
        if i.profile == Profile::Table && i.table.is_none() {
            return Err(fail(
                "initial",
                "profile",
                "profile = \"table\" requires initial.table".into(),
            ));
        }
        let c = self.constants();
        if let Err(e) = c.validate() {
            let key = if c.eta > 0.0 && c.eta < 1.0 { "c1" } else { "eta" };
            return Err(fail("constants", key, e.to_string()));
        }
        let d = &self.diagnostics;
        if let Some(r) = d.radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(fail(
                "diagnostics",
                "radii",
                format!("diagnostic radius {r} must be positive"),
            ));
        }
        if !(d.morawetz_radius > 0.0 && d.morawetz_radius.is_finite()) {
            return Err(fail(
                "diagnostics",
                "morawetz_radius",
                format!("diagnostics.morawetz_radius = {} must be positive", d.morawetz_radius),
            ));
        }
        if !(d.morawetz_multiplier >= 1.0 && d.morawetz_multiplier.is_finite()) {
            return Err(fail(
                "diagnostics",
                "morawetz_multiplier",
                format!(
                    "diagnostics.morawetz_multiplier = {} must be at least 1",
                    d.morawetz_multiplier
                ),
            ));
        }
        if !(d.bubble_threshold >= 0.0 && d.bubble_threshold.is_finite()) {
            return Err(fail(
                "diagnostics",
                "bubble_threshold",
                "bubble_threshold must be non-negative".into(),
            ));
        }
        if !(d.cascade_ratio > 0.0 && d.cascade_ratio < 1.0) {
            return Err(fail(
                "diagnostics",
                "cascade_ratio",
                format!("diagnostics.cascade_ratio = {} must lie in (0, 1)", d.cascade_ratio),
            ));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(fail("output", "dir", "output.dir must not be empty".into()));
        }
        Ok(())
    }
}

/// Strict parse of a configuration file: unknown keys, missing keys and out-of-range values are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(0, |s| line_at(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    config.validate(text)?;
    Ok(config)
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line on which `section.key` is assigned, either under `[section]` or as a dotted key; 0 if absent.
fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if current.is_empty() {
            lhs
        } else {
            format!("{current}.{lhs}")
        };
        let want = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if full == want {
            return k + 1;
        }
    }
    0
}

fn read_profile_table(path: &Path) -> Result<Vec<(f64, Complex64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config {
                line: k + 1,
                message: format!("{}: {e}", path.display()),
            })?;
        let value = match cols[..] {
            [r, re] => (r, Complex64::new(re, 0.0)),
            [r, re, im] => (r, Complex64::new(re, im)),
            _ => {
                return Err(Error::Config {
                    line: k + 1,
                    message: format!("{}: expected `r re [im]`", path.display()),
                })
            }
        };
        if let Some(&(prev, _)) = rows.last() {
            if !(value.0 > prev) {
                return Err(Error::Config {
                    line: k + 1,
                    message: format!("{}: radii must increase", path.display()),
                });
            }
        }
        rows.push(value);
    }
    if rows.is_empty() {
        return Err(Error::Config {
            line: 0,
            message: format!("{}: empty profile table", path.display()),
        });
    }
    Ok(rows)
}

/// Piecewise-linear interpolation, constant below the first radius and zero beyond the last.
fn interpolate_table(rows: &[(f64, Complex64)], r: f64) -> Complex64 {
    let k = rows.partition_point(|(x, _)| *x <= r);
    if k == 0 {
        return rows[0].1;
    }
    if k == rows.len() {
        return if r == rows[k - 1].0 {
            rows[k - 1].1
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let (x0, y0) = rows[k - 1];
    let (x1, y1) = rows[k];
    y0 + (y1 - y0) * ((r - x0) / (x1 - x0))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One diagnostics row.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub energy: f64,
    pub sup_abs: f64,
    /// `||u||_{2n/(n-2)}`.
    pub critical_norm: f64,
    pub h1dot: f64,
    pub local_mass: Vec<f64>,
    pub boundary_mass_fraction: f64,
    pub morawetz_action: f64,
}

impl DiagnosticsRecord {
    pub fn compute(model: &HartreeModel, u: &FieldState, radii: &[f64], morawetz_radius: f64) -> Result<Self> {
        let grid = model.grid();
        let n = grid.dim() as f64;
        let e = model.energy(u)?;
        Ok(DiagnosticsRecord {
            t: u.time(),
            mass: crate::nonlinearity::mass(grid, u)?,
            kinetic: e.kinetic,
            potential: e.potential,
            energy: e.total,
            sup_abs: u.values().iter().map(|v| v.norm()).fold(0.0, f64::max),
            critical_norm: lp_norm(grid, u, 2.0 * n / (n - 2.0))?,
            h1dot: h1dot_norm(grid, u)?,
            local_mass: radii.iter().map(|&r| local_mass(grid, u, r)).collect::<Result<_>>()?,
            boundary_mass_fraction: grid.boundary_mass_fraction(u),
            morawetz_action: morawetz_action(grid, u, morawetz_radius)?,
        })
    }

    pub fn header(radii: &[f64]) -> Vec<String> {
        let mut h: Vec<String> = [
            "t",
            "mass",
            "kinetic",
            "potential",
            "energy",
            "sup_abs",
            "critical_norm",
            "h1dot",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(radii.iter().map(|r| format!("local_mass_{r}")));
        h.push("boundary_mass_fraction".into());
        h.push("morawetz_action".into());
        h
    }

    pub fn fields(&self) -> Vec<f64> {
        let mut v = vec![
            self.t,
            self.mass,
            self.kinetic,
            self.potential,
            self.energy,
            self.sup_abs,
            self.critical_norm,
            self.h1dot,
        ];
        v.extend(&self.local_mass);
        v.push(self.boundary_mass_fraction);
        v.push(self.morawetz_action);
        v
    }
}

/// Seventeen significant digits; negative zero prints as zero.
pub fn format_float(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

/// CSV table of floats held in memory and written atomically.
#[derive(Debug)]
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
    width: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.iter().map(|s| s.as_ref()))
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(CsvTable {
            writer,
            width: header.len(),
        })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::invalid(
                "row",
                format!("{} fields for {} columns", row.len(), self.width),
            ));
        }
        if let Some(x) = row.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite diagnostics value {x}")));
        }
        self.writer
            .write_record(row.iter().map(|&x| format_float(x)))
            .map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer.into_inner().map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes()?)
    }
}

/// Reads a float CSV written by [`CsvTable`]: header plus rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        rows.push(
            record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Numerical(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, rows))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Numerical(format!("{other:?}")),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HRTL";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 8;

/// Grid description and time stored in a checkpoint header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub len: usize,
    pub r_max: f64,
    pub time: f64,
}

pub fn encode_checkpoint(u: &FieldState) -> Vec<u8> {
    let grid = u.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * u.values().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for x in [grid.dim() as f64, grid.len() as f64, grid.r_max(), u.time()] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for v in u.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn write_checkpoint(path: &Path, u: &FieldState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(u))
}

fn checkpoint_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn f64_at(bytes: &[u8], offset: usize) -> f64 {
    f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("eight bytes"))
}

pub fn decode_checkpoint_header(path: &Path, bytes: &[u8]) -> Result<CheckpointHeader> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(checkpoint_error(path, "bad magic, not a checkpoint file"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(checkpoint_error(
            path,
            format!("truncated header: {} bytes", bytes.len()),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(checkpoint_error(path, format!("unsupported format version {version}")));
    }
    let (dim, len) = (f64_at(bytes, 8), f64_at(bytes, 16));
    let header = CheckpointHeader {
        dim: dim as usize,
        len: len as usize,
        r_max: f64_at(bytes, 24),
        time: f64_at(bytes, 32),
    };
    if dim.fract() != 0.0 || len.fract() != 0.0 || dim < 1.0 || len < 1.0 || !header.r_max.is_finite() {
        return Err(checkpoint_error(path, "corrupt header"));
    }
    let expected = HEADER_LEN + 16 * header.len;
    if bytes.len() != expected {
        return Err(checkpoint_error(
            path,
            format!("truncated or oversized: {} bytes, expected {expected}", bytes.len()),
        ));
    }
    Ok(header)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    decode_checkpoint_header(path, &fs::read(path)?)
}

/// Reads a checkpoint onto `grid`, which must match the stored dimension, size and radius.
pub fn read_checkpoint(path: &Path, grid: &Arc<RadialGrid>) -> Result<FieldState> {
    let bytes = fs::read(path)?;
    let header = decode_checkpoint_header(path, &bytes)?;
    if header.dim != grid.dim() || header.len != grid.len() || header.r_max != grid.r_max() {
        return Err(Error::GridMismatch {
            dim: grid.dim(),
            len: grid.len(),
            r_max: grid.r_max(),
            found_dim: header.dim,
            found_len: header.len,
            found_r_max: header.r_max,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(16)
        .map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8)))
        .collect();
    FieldState::new(grid.clone(), values, header.time)
}

/// Interval lengths of a tiling file and its optional `a = ...` line.
#[derive(Clone, Debug, PartialEq)]
pub struct TilingFile {
    pub a: Option<f64>,
    pub lengths: Vec<f64>,
}

/// One length per line; `#` starts a comment; an optional `a = <ratio>` line.
pub fn parse_tiling(text: &str) -> Result<TilingFile> {
    let mut a = None;
    let mut lengths = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Config { line: k + 1, message };
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() != "a" {
                return Err(bad(format!("unknown key `{}`", key.trim())));
            }
            let v: f64 = value.trim().parse().map_err(|e| bad(format!("a: {e}")))?;
            if !(v > 0.0 && v < 1.0) {
                return Err(bad(format!("a = {v} must lie in (0, 1)")));
            }
            a = Some(v);
            continue;
        }
        let len: f64 = line.parse().map_err(|e| bad(format!("length: {e}")))?;
        if !(len > 0.0 && len.is_finite()) {
            return Err(bad(format!("length {len} must be positive")));
        }
        lengths.push(len);
    }
    if lengths.is_empty() {
        return Err(Error::Config {
            line: 0,
            message: "tiling has no intervals".into(),
        });
    }
    Ok(TilingFile { a, lengths })
}

/// Plain-text cascade report.
pub fn cascade_report(cascade: &CascadeResult, constants: &SixConstants, geometry: &NonEvacuationReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let total: f64 = cascade.lengths.iter().sum();
    let _ = writeln!(s, "# cascade");
    let _ = writeln!(s, "a = {}", format_float(cascade.a));
    let _ = writeln!(s, "intervals = {}", cascade.lengths.len());
    let _ = writeln!(s, "total_length = {}", format_float(total));
    let _ = writeln!(s, "index,start,length,generation,chain_position");
    for (j, &len) in cascade.lengths.iter().enumerate() {
        let pos = cascade
            .chain
            .iter()
            .position(|&c| c == j)
            .map_or(String::new(), |p| (p + 1).to_string());
        let _ = writeln!(
            s,
            "{j},{},{},{},{pos}",
            format_float(cascade.start_of(j)),
            format_float(len),
            cascade.generations[j]
        );
    }
    let chain: Vec<String> = cascade.chain.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, "k = {}", cascade.k());
    let _ = writeln!(s, "chain = {}", chain.join(" "));
    let _ = writeln!(s, "t_star = {}", format_float(cascade.t_star));
    let _ = writeln!(s, "k_lower_bound = {}", format_float(cascade.lower_bound()));
    let invariants = match cascade.check_invariants() {
        Ok(()) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    let _ = writeln!(s, "invariants = {invariants}");
    let _ = writeln!(s, "# non-evacuation");
    let _ = writeln!(
        s,
        "constants = c1 {} c2 {} c3 {} eta {}",
        constants.c1,
        constants.c2,
        constants.c3,
        format_float(constants.eta)
    );
    let _ = writeln!(s, "spacing = {}", geometry.spacing);
    let _ = writeln!(s, "chain_position,interval,log10_inner,log10_outer,critical_mass");
    for an in &geometry.annuli {
        let mass = an.critical_mass.map_or(String::new(), format_float);
        let _ = writeln!(
            s,
            "{},{},{},{},{mass}",
            an.chain_position,
            an.interval,
            format_float(an.log10_inner),
            format_float(an.log10_outer)
        );
    }
    let _ = writeln!(s, "disjoint = {}", geometry.disjoint);
    let _ = writeln!(s, "log10_k_bound = {}", format_float(geometry.log10_k_bound));
    let _ = writeln!(
        s,
        "log10_log10_j_bound = {}",
        format_float(geometry.log10_log10_j_bound)
    );
    let _ = writeln!(s, "k_within_bound = {}", geometry.k_within_bound);
    s
}
