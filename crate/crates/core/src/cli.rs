//! Command-line front end.
//!
//! Settings come from flags, an optional TOML file and built-in defaults,
//! in that order of precedence. Every run writes `results.csv`,
//! `manifest.json` and `errors.json` into the output directory.
//!
//! Exit codes: 0 success, 1 run failure, 2 invalid configuration,
//! 3 finished with failed rows.

use crate::correlations;
use crate::error::{Error, Result};
use crate::liouville::{self, EngineParams, Scaling};
use crate::macrocumulant::{self, moment_names, MacroParams, MomentState, SteadyOptions};
use crate::macrofluct;
use crate::studies::{self, Backend, Template, EXACT_COLUMNS, MACRO_COLUMNS};
use crate::thermo::{self, Mode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const THREADS_ENV: &str = "SPINPAIR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spinpair", version, about = "Collective spin-pair heat engine solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Finite-N steady-state thermodynamics
    Exact,
    /// Macroscopic fixed point, power, fluctuations and Jacobian gap
    Macro,
    /// Single ensemble with one bath: closed form vs moment equations
    Dissipative,
    /// Power variance: resolvent, time quadrature and macroscopic
    Fluctuations,
    /// Two-spin tomography, mutual information and concurrence
    Correlations,
    /// Heatmap over (delta_e, t_bar)
    Scan,
    /// Power-law exponent of P_N/P_1
    Scaling,
    /// Relaxation gaps, finite N and macroscopic
    Gap,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Exact => "exact",
            Command::Macro => "macro",
            Command::Dissipative => "dissipative",
            Command::Fluctuations => "fluctuations",
            Command::Correlations => "correlations",
            Command::Scan => "scan",
            Command::Scaling => "scaling",
            Command::Gap => "gap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    /// Energies in units of E1
    #[default]
    E1,
    /// Energies in units of omega0
    Omega0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScalingArg {
    None,
    HighTemperature,
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::None => Scaling::None,
            ScalingArg::HighTemperature => Scaling::HighTemperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendArg {
    Exact,
    Macro,
}

/// Real values: `9`, `1,2.5,4` or `lo:hi:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let count = parts[2].trim().parse::<usize>().map_err(|_| format!("bad count in {s:?}"))?;
            return Ok(FloatList(studies::linspace(parse(parts[0])?, parse(parts[1])?, count)));
        }
        s.split(',').map(parse).collect::<std::result::Result<_, _>>().map(FloatList)
    }
}

/// Sizes: `4`, `1,2,4` or `1-20`.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeList(pub Vec<usize>);

impl FromStr for SizeList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("not a size: {t:?}"));
        let mut out = Vec::new();
        for part in s.split(',') {
            match part.split_once('-') {
                Some((a, b)) => out.extend(parse(a)?..=parse(b)?),
                None => out.push(parse(part)?),
            }
        }
        Ok(SizeList(out))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawList<T> {
    One(T),
    Many(Vec<T>),
    Text(String),
}

impl<'de> Deserialize<'de> for FloatList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawList::<f64>::deserialize(d)? {
            RawList::One(v) => Ok(FloatList(vec![v])),
            RawList::Many(v) => Ok(FloatList(v)),
            RawList::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl<'de> Deserialize<'de> for SizeList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawList::<usize>::deserialize(d)? {
            RawList::One(v) => Ok(SizeList(vec![v])),
            RawList::Many(v) => Ok(SizeList(v)),
            RawList::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Every setting, as a flag and as a config-file key.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// TOML config file
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (falls back to SPINPAIR_THREADS, then all cores)
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, global = true)]
    pub units: Option<UnitSystem>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub e1: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub e2: Option<f64>,
    /// E2 − E1; list or lo:hi:count
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub delta_e: Option<FloatList>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub omega0: Option<FloatList>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub gamma0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta1: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta2: Option<f64>,
    /// (T1 + T2)/2; list or lo:hi:count
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub t_bar: Option<FloatList>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub delta_t: Option<f64>,
    /// Ensemble sizes: 4, 1,2,4 or 1-20
    #[arg(long, global = true)]
    pub n: Option<SizeList>,
    #[arg(long, value_enum, global = true)]
    pub scaling: Option<ScalingArg>,
    /// Inverse temperature times level spacing (dissipative)
    #[arg(long = "betaE", alias = "beta-e", global = true, allow_negative_numbers = true)]
    pub beta_e: Option<FloatList>,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendArg>,
    /// Scan columns to keep (comma separated)
    #[arg(long, value_delimiter = ',', global = true)]
    pub quantity: Option<Vec<String>>,
    /// Also integrate the power correlation in time
    #[arg(long, num_args = 0..=1, default_missing_value = "true", global = true)]
    pub quadrature: Option<bool>,
    /// Residual target for macroscopic fixed points
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub macro_tol: Option<f64>,
    /// Relative tolerance of the time-quadrature integrator
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub quad_rtol: Option<f64>,
}

pub const CONFIG_KEYS: [&str; 19] = [
    "out", "units", "e1", "e2", "delta_e", "omega0", "gamma0", "beta1", "beta2", "t_bar", "delta_t", "n", "scaling",
    "beta_e", "backend", "quantity", "quadrature", "macro_tol", "quad_rtol",
];

impl Settings {
    /// `self` wins wherever it is set.
    pub fn over(self, base: Settings) -> Settings {
        Settings {
            config: self.config.or(base.config),
            out: self.out.or(base.out),
            threads: self.threads.or(base.threads),
            units: self.units.or(base.units),
            e1: self.e1.or(base.e1),
            e2: self.e2.or(base.e2),
            delta_e: self.delta_e.or(base.delta_e),
            omega0: self.omega0.or(base.omega0),
            gamma0: self.gamma0.or(base.gamma0),
            beta1: self.beta1.or(base.beta1),
            beta2: self.beta2.or(base.beta2),
            t_bar: self.t_bar.or(base.t_bar),
            delta_t: self.delta_t.or(base.delta_t),
            n: self.n.or(base.n),
            scaling: self.scaling.or(base.scaling),
            beta_e: self.beta_e.or(base.beta_e),
            backend: self.backend.or(base.backend),
            quantity: self.quantity.or(base.quantity),
            quadrature: self.quadrature.or(base.quadrature),
            macro_tol: self.macro_tol.or(base.macro_tol),
            quad_rtol: self.quad_rtol.or(base.quad_rtol),
        }
    }
}

/// Parses a TOML config, reporting every unknown key at once.
pub fn parse_config(text: &str) -> std::result::Result<Settings, Vec<String>> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| vec![format!("config: {}", e.message())])?;
    let unknown: Vec<String> = table
        .keys()
        .filter(|k| !CONFIG_KEYS.contains(&k.as_str()))
        .map(|k| format!("unknown config key {k:?}"))
        .collect();
    if !unknown.is_empty() {
        return Err(unknown);
    }
    Settings::deserialize(toml::Value::Table(table)).map_err(|e| vec![format!("config: {}", e.message())])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Energies {
    Upper { e2: f64 },
    Spacing { delta_e: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperatures {
    Inverse { beta1: f64, beta2: f64 },
    Average { t_bar: Vec<f64>, delta_t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunTolerances {
    pub macro_tol: f64,
    pub quad_rtol: f64,
    pub residual: f64,
    pub positivity: f64,
    pub tomography_clip: f64,
    pub mean_tolerance: f64,
}

impl Default for RunTolerances {
    fn default() -> Self {
        RunTolerances {
            macro_tol: SteadyOptions::default().tol,
            quad_rtol: 1e-9,
            residual: 1e-10,
            positivity: liouville::POSITIVITY_TOL,
            tomography_clip: correlations::CLIP_TOLERANCE,
            mean_tolerance: macrofluct::MEAN_TOLERANCE,
        }
    }
}

impl fmt::Display for RunTolerances {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "macro_tol={:e} quad_rtol={:e} residual={:e} positivity={:e} tomography_clip={:e} mean_tolerance={:e}",
            self.macro_tol, self.quad_rtol, self.residual, self.positivity, self.tomography_clip, self.mean_tolerance
        )
    }
}

/// Fully resolved, validated configuration. Hashed for provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub units: UnitSystem,
    pub e1: f64,
    pub energies: Energies,
    pub temperatures: Temperatures,
    pub omega0: Vec<f64>,
    pub gamma0: f64,
    pub n: Vec<usize>,
    pub scaling: Scaling,
    pub beta_e: Vec<f64>,
    pub backend: Backend,
    pub quantity: Vec<String>,
    pub quadrature: bool,
    pub tolerances: RunTolerances,
}

/// One parameter point of the (ΔE, T̄, ω₀) product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub delta_e: f64,
    pub t_bar: Option<f64>,
    pub params: EngineParams,
}

struct Defaults {
    e1: f64,
    delta_e: f64,
    omega0: f64,
    gamma0: f64,
    t_bar: f64,
    delta_t: f64,
    scan_delta_e: (f64, f64),
    scan_t_bar: (f64, f64),
}

fn defaults(units: UnitSystem) -> Defaults {
    match units {
        UnitSystem::E1 => Defaults {
            e1: 1.0,
            delta_e: 9.0,
            omega0: 0.006,
            gamma0: 0.001,
            t_bar: 11.0,
            delta_t: 10.0,
            scan_delta_e: (0.0, 20.0),
            scan_t_bar: (6.0, 100.0),
        },
        UnitSystem::Omega0 => Defaults {
            e1: 100.0,
            delta_e: 125.0,
            omega0: 1.0,
            gamma0: 1.0,
            t_bar: 150.0,
            delta_t: 100.0,
            scan_delta_e: (0.0, 250.0),
            scan_t_bar: (60.0, 300.0),
        },
    }
}

pub const DEFAULT_GRID: usize = 32;

fn push_unique(v: &mut Vec<String>, s: String) {
    if !v.contains(&s) {
        v.push(s);
    }
}

impl RunConfig {
    /// Merges `flags` over `file` over defaults and validates the result,
    /// collecting every violation.
    pub fn resolve(command: Command, s: &Settings) -> std::result::Result<RunConfig, Vec<String>> {
        let mut v = Vec::new();
        let units = s.units.unwrap_or_default();
        let d = defaults(units);
        let e1 = s.e1.unwrap_or(d.e1);
        let grid = command == Command::Scan;
        let energies = match (&s.e2, &s.delta_e) {
            (Some(_), Some(_)) => {
                v.push("give either e2 or delta_e, not both".to_string());
                Energies::Spacing { delta_e: vec![d.delta_e] }
            }
            (Some(e2), None) => Energies::Upper { e2: *e2 },
            (None, Some(l)) => Energies::Spacing { delta_e: l.0.clone() },
            (None, None) if grid => Energies::Spacing {
                delta_e: studies::linspace(d.scan_delta_e.0, d.scan_delta_e.1, DEFAULT_GRID),
            },
            (None, None) => Energies::Spacing { delta_e: vec![d.delta_e] },
        };
        let has_beta = s.beta1.is_some() || s.beta2.is_some();
        let has_avg = s.t_bar.is_some() || s.delta_t.is_some();
        let temperatures = if has_beta {
            if has_avg {
                v.push("give either beta1/beta2 or t_bar/delta_t, not both".to_string());
            }
            match (s.beta1, s.beta2) {
                (Some(beta1), Some(beta2)) => Temperatures::Inverse { beta1, beta2 },
                _ => {
                    v.push("beta1 and beta2 must be given together".to_string());
                    Temperatures::Inverse { beta1: 1.0, beta2: 1.0 }
                }
            }
        } else {
            let t_bar = match &s.t_bar {
                Some(l) => l.0.clone(),
                None if grid => studies::linspace(d.scan_t_bar.0, d.scan_t_bar.1, DEFAULT_GRID),
                None => vec![d.t_bar],
            };
            Temperatures::Average { t_bar, delta_t: s.delta_t.unwrap_or(d.delta_t) }
        };
        let omega0 = s.omega0.as_ref().map(|l| l.0.clone()).unwrap_or_else(|| vec![d.omega0]);
        let n = match &s.n {
            Some(l) => l.0.clone(),
            None if command == Command::Scaling => (1..=20).collect(),
            None => vec![1],
        };
        let beta_e = s.beta_e.as_ref().map(|l| l.0.clone()).unwrap_or_else(|| vec![2.0]);
        let backend = match s.backend {
            Some(BackendArg::Macro) => Backend::Macro,
            _ => Backend::Exact,
        };
        let mut tolerances = RunTolerances::default();
        if let Some(t) = s.macro_tol {
            tolerances.macro_tol = t;
        }
        if let Some(t) = s.quad_rtol {
            tolerances.quad_rtol = t;
        }
        let cfg = RunConfig {
            command,
            units,
            e1,
            energies,
            temperatures,
            omega0,
            gamma0: s.gamma0.unwrap_or(d.gamma0),
            n,
            scaling: s.scaling.map(Scaling::from).unwrap_or_default(),
            beta_e,
            backend,
            quantity: s.quantity.clone().unwrap_or_default(),
            quadrature: s.quadrature.unwrap_or(false),
            tolerances,
        };
        cfg.check(&mut v);
        if s.threads == Some(0) {
            v.push("threads must be ≥ 1".to_string());
        }
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(v)
        }
    }

    fn check(&self, v: &mut Vec<String>) {
        match self.units {
            UnitSystem::E1 if self.e1 != 1.0 => v.push("e1 must be 1 when energies are in units of E1".to_string()),
            UnitSystem::Omega0 if self.omega0.iter().any(|w| *w != 1.0) => {
                v.push("omega0 must be 1 when energies are in units of omega0".to_string())
            }
            _ => {}
        }
        if let Energies::Spacing { delta_e } = &self.energies {
            if delta_e.is_empty() {
                v.push("delta_e list is empty".to_string());
            }
        }
        if let Temperatures::Average { t_bar, delta_t } = &self.temperatures {
            if t_bar.is_empty() {
                v.push("t_bar list is empty".to_string());
            }
            if t_bar.iter().any(|t| !(t - delta_t / 2.0 > 0.0)) {
                push_unique(v, "t_bar − delta_t/2 must be > 0".to_string());
            }
        }
        if self.omega0.is_empty() {
            v.push("omega0 list is empty".to_string());
        }
        if self.n.is_empty() {
            v.push("n list is empty".to_string());
        }
        for p in self.points() {
            let physical = p.params.beta1.is_finite() && p.params.beta1 > 0.0;
            if p.t_bar.is_some() && !physical {
                continue;
            }
            for m in (EngineParams { n: 1, ..p.params }).violations() {
                push_unique(v, m);
            }
        }
        if self.n.contains(&0) {
            v.push("N must be ≥ 1".to_string());
        }
        if self.beta_e.iter().any(|b| !(*b > 0.0)) {
            v.push("betaE must be > 0".to_string());
        }
        if !(self.tolerances.macro_tol > 0.0) {
            v.push("macro_tol must be > 0".to_string());
        }
        if !(self.tolerances.quad_rtol > 0.0 && self.tolerances.quad_rtol < 1.0) {
            v.push("quad_rtol must be in (0, 1)".to_string());
        }
        match self.command {
            Command::Scan => {
                if !matches!(self.energies, Energies::Spacing { .. }) || !matches!(self.temperatures, Temperatures::Average { .. }) {
                    v.push("scan needs delta_e and t_bar axes, not e2 or beta1/beta2".to_string());
                }
                if self.omega0.len() != 1 {
                    v.push("scan takes a single omega0".to_string());
                }
                if self.backend == Backend::Exact && self.n.len() != 1 {
                    v.push("exact scan takes a single n".to_string());
                }
                let known: &[&str] = match self.backend {
                    Backend::Exact => &EXACT_COLUMNS,
                    Backend::Macro => &MACRO_COLUMNS,
                };
                for q in &self.quantity {
                    if !known.contains(&q.as_str()) {
                        v.push(format!("unknown quantity {q:?} for this backend"));
                    }
                }
            }
            Command::Scaling => {
                if self.n.first() != Some(&1) || self.n.windows(2).any(|w| w[1] <= w[0]) {
                    v.push("scaling needs increasing n starting at 1".to_string());
                }
            }
            _ => {}
        }
    }

    pub fn points(&self) -> Vec<Point> {
        let des: Vec<(f64, Option<f64>)> = match &self.energies {
            Energies::Upper { e2 } => vec![(e2 - self.e1, Some(*e2))],
            Energies::Spacing { delta_e } => delta_e.iter().map(|d| (*d, None)).collect(),
        };
        let temps: Vec<(Option<f64>, f64, f64)> = match &self.temperatures {
            Temperatures::Inverse { beta1, beta2 } => vec![(None, *beta1, *beta2)],
            Temperatures::Average { t_bar, delta_t } => t_bar
                .iter()
                .map(|t| (Some(*t), 1.0 / (t - delta_t / 2.0), 1.0 / (t + delta_t / 2.0)))
                .collect(),
        };
        let mut out = Vec::new();
        for &(de, e2) in &des {
            for &(t_bar, beta1, beta2) in &temps {
                for &omega0 in &self.omega0 {
                    out.push(Point {
                        delta_e: de,
                        t_bar,
                        params: EngineParams {
                            e1: self.e1,
                            e2: e2.unwrap_or(self.e1 + de),
                            omega0,
                            gamma0: self.gamma0,
                            beta1,
                            beta2,
                            n: 1,
                            scaling: self.scaling,
                        },
                    });
                }
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions { tol: self.tolerances.macro_tol, ..SteadyOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Null,
}

impl Cell {
    fn opt(v: Option<f64>) -> Cell {
        v.map(Cell::Num).unwrap_or(Cell::Null)
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(x) if !x.is_finite() => String::new(),
            Cell::Num(x) => {
                let a = x.abs();
                if *x == 0.0 || (1e-4..1e15).contains(&a) {
                    format!("{x}")
                } else {
                    format!("{x:e}")
                }
            }
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Null => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self, header: &str) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(|e| Error::Io(e.to_string()))?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("utf-8");
        Ok(format!("{header}{body}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub row: Option<usize>,
}

impl ErrorRecord {
    fn from_error(e: &Error, row: Option<usize>) -> Self {
        ErrorRecord { kind: e.kind().into(), message: e.to_string(), row }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub summary: serde_json::Value,
    pub errors: Vec<ErrorRecord>,
}

fn mode_cell(m: Option<Mode>) -> Cell {
    m.map(|m| Cell::from(m.as_str())).unwrap_or(Cell::Null)
}

fn err_cell(e: &Option<String>) -> Cell {
    e.as_ref().map(|s| Cell::Text(s.clone())).unwrap_or(Cell::Null)
}

fn t_bar_cell(p: &Point) -> Cell {
    Cell::opt(p.t_bar)
}

fn collect_errors(table: &Table) -> Vec<ErrorRecord> {
    let col = table.columns.iter().position(|c| c == "error").expect("error column");
    table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match &r[col] {
            Cell::Text(m) => Some(ErrorRecord { kind: "row".into(), message: m.clone(), row: Some(i) }),
            _ => None,
        })
        .collect()
}

fn run_exact(cfg: &RunConfig) -> Outcome {
    let jobs: Vec<(Point, usize)> = cfg.points().into_iter().flat_map(|p| cfg.n.iter().map(move |&n| (p, n))).collect();
    let results: Vec<Result<thermo::ThermoReport>> =
        jobs.par_iter().map(|(p, n)| thermo::analyze(&p.params.with_n(*n))).collect();
    let mut t = Table::new(&[
        "delta_e", "t_bar", "e1", "e2", "omega0", "gamma0", "beta1", "beta2", "n", "power", "q_cold", "q_hot",
        "efficiency", "cop", "eta_carnot", "cop_carnot", "entropy_rate", "variance", "fano", "constancy", "mode",
        "residual", "clipped", "error",
    ]);
    for ((p, n), r) in jobs.iter().zip(results) {
        let e = &p.params;
        let mut row = vec![
            p.delta_e.into(),
            t_bar_cell(p),
            e.e1.into(),
            e.e2.into(),
            e.omega0.into(),
            e.gamma0.into(),
            e.beta1.into(),
            e.beta2.into(),
            (*n).into(),
        ];
        match r {
            Ok(r) => {
                row.extend([
                    r.power.into(),
                    r.q_cold.into(),
                    r.q_hot.into(),
                    r.efficiency.into(),
                    Cell::opt(r.cop),
                    r.eta_carnot.into(),
                    r.cop_carnot.into(),
                    r.entropy_rate.into(),
                    r.variance.into(),
                    r.fano.into(),
                    Cell::opt(r.constancy),
                    mode_cell(Some(r.mode)),
                    r.residual.into(),
                    Cell::from(if r.clipped { "true" } else { "false" }),
                    Cell::Null,
                ]);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(Cell::Null, 14));
                row.push(Cell::Text(e.to_string()));
            }
        }
        t.rows.push(row);
    }
    let errors = collect_errors(&t);
    Outcome { table: t, summary: serde_json::Value::Null, errors }
}

struct MacroRow {
    state: MomentState,
    residual: f64,
    power: f64,
    mode: Mode,
    variance: Option<f64>,
    constancy: Option<f64>,
    gain: Option<f64>,
    gap: Option<(f64, bool)>,
    notes: Vec<String>,
}

fn macro_point(p: &MacroParams, opts: SteadyOptions) -> Result<MacroRow> {
    let ss = macrocumulant::macro_steady_state(p, &MomentState::polarized_down(), opts)?;
    let s = ss.state;
    let mut notes = Vec::new();
    let mut keep = |r: Result<f64>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    };
    let power = macrocumulant::macro_power(&s, p);
    let mode = macrofluct::macro_mode(power, p);
    let variance = keep(macrofluct::macro_power_variance(&s, p), "variance");
    let constancy = if mode == Mode::HeatEngine {
        keep(macrofluct::macro_constancy(&s, p).map(|c| c.constancy), "constancy")
    } else {
        None
    };
    let gain = keep(studies::gain_ratio_at(&s, p).map(|g| g.gain), "gain");
    let gap = match macrocumulant::jacobian_gap_at(&s, p) {
        Ok(g) => Some((g.gap, g.stable)),
        Err(e) => {
            notes.push(format!("jacobian_gap: {e}"));
            None
        }
    };
    Ok(MacroRow { state: s, residual: ss.residual, power, mode, variance, constancy, gain, gap, notes })
}

fn run_macro(cfg: &RunConfig) -> Outcome {
    let points = cfg.points();
    let opts = cfg.steady_options();
    let results: Vec<Result<MacroRow>> =
        points.par_iter().map(|p| macro_point(&MacroParams::from_engine(&p.params), opts)).collect();
    let mut cols = vec![
        "delta_e", "t_bar", "e1", "e2", "omega0", "gamma0", "beta1e1", "beta2e2", "power", "mode", "variance",
        "constancy", "gain", "jacobian_gap", "stable", "casimir1", "casimir2", "residual",
    ];
    let names = moment_names();
    cols.extend(names.iter().map(String::as_str));
    cols.push("error");
    let mut t = Table::new(&cols);
    for (p, r) in points.iter().zip(results) {
        let m = MacroParams::from_engine(&p.params);
        let mut row: Vec<Cell> = vec![
            p.delta_e.into(),
            t_bar_cell(p),
            m.e1.into(),
            m.e2.into(),
            m.omega0.into(),
            m.gamma0.into(),
            m.beta1e1.into(),
            m.beta2e2.into(),
        ];
        match r {
            Ok(r) => {
                row.extend([
                    r.power.into(),
                    mode_cell(Some(r.mode)),
                    Cell::opt(r.variance),
                    Cell::opt(r.constancy),
                    Cell::opt(r.gain),
                    Cell::opt(r.gap.map(|g| g.0)),
                    r.gap.map(|g| Cell::from(if g.1 { "true" } else { "false" })).unwrap_or(Cell::Null),
                    r.state.casimir(0).into(),
                    r.state.casimir(1).into(),
                    r.residual.into(),
                ]);
                row.extend(r.state.0.iter().map(|v| Cell::Num(*v)));
                row.push(err_cell(&(!r.notes.is_empty()).then(|| r.notes.join("; "))));
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(Cell::Null, 10 + 27));
                row.push(Cell::Text(e.to_string()));
            }
        }
        t.rows.push(row);
    }
    let errors = collect_errors(&t);
    Outcome { table: t, summary: serde_json::Value::Null, errors }
}

fn run_dissipative(cfg: &RunConfig) -> Outcome {
    let g0 = cfg.gamma0;
    let mut t = Table::new(&[
        "beta_e", "gamma0", "mz", "mz2", "mx2", "quadrature_sum", "ode_mz", "ode_mz2", "ode_mx2", "max_abs_diff",
        "lambda_plus_re", "lambda_plus_im", "lambda_minus_re", "lambda_minus_im", "eig1_re", "eig1_im", "eig2_re",
        "eig2_im", "gap", "error",
    ]);
    let rows: Vec<Vec<Cell>> = cfg
        .beta_e
        .par_iter()
        .map(|&b| {
            let mut row: Vec<Cell> = vec![b.into(), g0.into()];
            let r = (|| -> Result<Vec<Cell>> {
                let a = macrocumulant::dissipative_ss_analytic(b)?;
                let o = macrocumulant::dissipative_ode_steady_state(b, g0)?;
                let j = macrocumulant::jacobian_dissipative(b, g0)?;
                let diff = (a.mz - o.mz).abs().max((a.mz2 - o.mz2).abs()).max((a.mx2 - o.mx2).abs());
                Ok(vec![
                    a.mz.into(),
                    a.mz2.into(),
                    a.mx2.into(),
                    (a.mz2 + 2.0 * a.mx2).into(),
                    o.mz.into(),
                    o.mz2.into(),
                    o.mx2.into(),
                    diff.into(),
                    j.lambda_plus.re.into(),
                    j.lambda_plus.im.into(),
                    j.lambda_minus.re.into(),
                    j.lambda_minus.im.into(),
                    j.eigenvalues[0].re.into(),
                    j.eigenvalues[0].im.into(),
                    j.eigenvalues[1].re.into(),
                    j.eigenvalues[1].im.into(),
                    j.gap.into(),
                    Cell::Null,
                ])
            })();
            match r {
                Ok(c) => row.extend(c),
                Err(e) => {
                    row.extend(std::iter::repeat_n(Cell::Null, 17));
                    row.push(Cell::Text(e.to_string()));
                }
            }
            row
        })
        .collect();
    t.rows = rows;
    let errors = collect_errors(&t);
    Outcome { table: t, summary: serde_json::Value::Null, errors }
}

fn finite_fluctuations(p: &EngineParams, quadrature: bool, rtol: f64) -> Result<(thermo::ThermoReport, Option<f64>)> {
    let (l, ss) = liouville::solve_pair(p)?;
    let r = thermo::report(&l, &ss)?;
    let q = if quadrature && r.variance > 0.0 {
        let g = liouville::gap(&l, 2)?;
        Some(thermo::power_variance_quadrature(&l, &ss, 40.0 / g, 4000, rtol)?)
    } else {
        None
    };
    Ok((r, q))
}

fn run_fluctuations(cfg: &RunConfig) -> Outcome {
    let points = cfg.points();
    let jobs: Vec<(Point, Option<usize>)> = points
        .iter()
        .flat_map(|p| cfg.n.iter().map(move |&n| (*p, Some(n))).chain(std::iter::once((*p, None))))
        .collect();
    let opts = cfg.steady_options();
    let rows: Vec<Vec<Cell>> = jobs
        .par_iter()
        .map(|(p, n)| {
            let mut row: Vec<Cell> = vec![
                Cell::from(if n.is_some() { "finite" } else { "macro" }),
                p.delta_e.into(),
                t_bar_cell(p),
                p.params.omega0.into(),
                n.map(Cell::from).unwrap_or(Cell::Null),
            ];
            match n {
                Some(n) => match finite_fluctuations(&p.params.with_n(*n), cfg.quadrature, cfg.tolerances.quad_rtol) {
                    Ok((r, q)) => {
                        let rel = q.filter(|_| r.variance > 0.0).map(|q| (q - r.variance).abs() / r.variance);
                        row.extend([
                            r.power.into(),
                            r.variance.into(),
                            Cell::opt(q),
                            Cell::opt(rel),
                            Cell::opt(r.constancy),
                            mode_cell(Some(r.mode)),
                            Cell::Null,
                        ]);
                    }
                    Err(e) => {
                        row.extend(std::iter::repeat_n(Cell::Null, 6));
                        row.push(Cell::Text(e.to_string()));
                    }
                },
                None => {
                    let m = MacroParams::from_engine(&p.params);
                    match macro_point(&m, opts) {
                        Ok(r) => row.extend([
                            r.power.into(),
                            Cell::opt(r.variance),
                            Cell::Null,
                            Cell::Null,
                            Cell::opt(r.constancy),
                            mode_cell(Some(r.mode)),
                            Cell::Null,
                        ]),
                        Err(e) => {
                            row.extend(std::iter::repeat_n(Cell::Null, 6));
                            row.push(Cell::Text(e.to_string()));
                        }
                    }
                }
            }
            row
        })
        .collect();
    let mut t = Table::new(&[
        "kind", "delta_e", "t_bar", "omega0", "n", "power", "variance", "variance_quadrature", "relative_difference",
        "constancy", "mode", "error",
    ]);
    t.rows = rows;
    let errors = collect_errors(&t);
    Outcome { table: t, summary: serde_json::Value::Null, errors }
}

fn run_correlations(cfg: &RunConfig) -> Outcome {
    let points = cfg.points();
    let opts = cfg.steady_options();
    let rows: Vec<(Vec<Cell>, Option<(f64, f64, f64)>)> = points
        .par_iter()
        .map(|p| {
            let m = MacroParams::from_engine(&p.params);
            let mut row: Vec<Cell> = vec![p.delta_e.into(), t_bar_cell(p), p.params.omega0.into()];
            let r = (|| -> Result<(f64, MomentState, correlations::TwoSpinState, f64, f64)> {
                let ss = macrocumulant::macro_steady_state(&m, &MomentState::polarized_down(), opts)?;
                let power = macrocumulant::macro_power(&ss.state, &m);
                let t = correlations::reduced_two_spin_state(&ss.state)?;
                let mi = correlations::mutual_information(&t)?;
                let c = correlations::concurrence(&t)?;
                Ok((power, ss.state, t, mi, c))
            })();
            match r {
                Ok((power, s, t, mi, c)) => {
                    row.extend([
                        s.first(0, macrocumulant::Z).into(),
                        s.first(1, macrocumulant::Z).into(),
                        power.into(),
                        mi.into(),
                        c.into(),
                        Cell::from(if t.clip_applied { "true" } else { "false" }),
                        t.min_eigenvalue.into(),
                        Cell::Null,
                    ]);
                    (row, Some((power, mi, c)))
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(Cell::Null, 7));
                    row.push(Cell::Text(e.to_string()));
                    (row, None)
                }
            }
        })
        .collect();
    let ok: Vec<(f64, f64, f64)> = rows.iter().filter_map(|r| r.1).collect();
    let (p, mi): (Vec<f64>, Vec<f64>) = ok.iter().map(|(p, m, _)| (*p, *m)).unzip();
    let abs_p: Vec<f64> = p.iter().map(|v| v.abs()).collect();
    let summary = json!({
        "entropy_unit": "nats",
        "points": ok.len(),
        "max_concurrence": ok.iter().map(|r| r.2).fold(0.0, f64::max),
        "spearman_mi_vs_abs_power": studies::spearman(&mi, &abs_p).ok(),
        "spearman_mi_vs_power": studies::spearman(&mi, &p).ok(),
    });
    let mut t = Table::new(&[
        "delta_e", "t_bar", "omega0", "mz1", "mz2", "power", "mutual_information", "concurrence", "clip_applied",
        "min_eigenvalue", "error",
    ]);
    t.rows = rows.into_iter().map(|r| r.0).collect();
    let errors = collect_errors(&t);
    Outcome { table: t, summary, errors }
}

fn run_scan(cfg: &RunConfig) -> Result<Outcome> {
    let (Energies::Spacing { delta_e }, Temperatures::Average { t_bar, delta_t }) = (&cfg.energies, &cfg.temperatures)
    else {
        return Err(Error::Config("scan needs delta_e and t_bar axes".into()));
    };
    let tpl = Template { e1: cfg.e1, delta_t: *delta_t, omega0: cfg.omega0[0], gamma0: cfg.gamma0 };
    let grid = studies::scan(&tpl, delta_e, t_bar, cfg.backend, cfg.n[0], cfg.scaling, cfg.steady_options())?;
    let keep: Vec<usize> = if cfg.quantity.is_empty() {
        (0..grid.columns.len()).collect()
    } else {
        cfg.quantity.iter().filter_map(|q| grid.column(q)).collect()
    };
    let mut cols: Vec<&str> = vec!["delta_e", "t_bar", "delta_e_star", "engine_side"];
    cols.extend(keep.iter().map(|&k| grid.columns[k].as_str()));
    cols.extend(["mode", "error"]);
    let mut t = Table::new(&cols);
    for c in &grid.cells {
        let star = thermo::delta_e_star(tpl.e1, c.t_bar, tpl.delta_t);
        let mut row: Vec<Cell> = vec![
            c.delta_e.into(),
            c.t_bar.into(),
            star.into(),
            Cell::from(if c.delta_e < star { "true" } else { "false" }),
        ];
        row.extend(keep.iter().map(|&k| Cell::opt(c.values[k])));
        row.push(mode_cell(c.mode));
        row.push(err_cell(&c.error));
        t.rows.push(row);
    }
    let flips: Vec<serde_json::Value> = if grid.column("power").is_some() {
        studies::boundary_sign_flips(&grid).into_iter().map(|(de, f)| json!({"delta_e": de, "flips": f})).collect()
    } else {
        Vec::new()
    };
    let summary = json!({
        "backend": cfg.backend,
        "cells": grid.cells.len(),
        "failed_cells": grid.failed().count(),
        "boundary": "delta_e_star = e1*delta_t/(t_bar - delta_t/2)",
        "sign_flips": flips,
    });
    let errors = collect_errors(&t);
    Ok(Outcome { table: t, summary, errors })
}

fn run_scaling(cfg: &RunConfig) -> Outcome {
    let points = cfg.points();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|i| cfg.n.iter().map(move |&n| (i, n))).collect();
    let reports: Vec<Result<thermo::ThermoReport>> =
        jobs.par_iter().map(|&(i, n)| thermo::analyze(&points[i].params.with_n(n))).collect();
    let mut t = Table::new(&["delta_e", "t_bar", "n", "power", "ratio", "mode", "error"]);
    let mut fits = Vec::new();
    let per = cfg.n.len();
    for (i, p) in points.iter().enumerate() {
        let chunk = &reports[i * per..(i + 1) * per];
        let p1 = chunk[0].as_ref().ok().map(|r| r.power);
        for (k, r) in chunk.iter().enumerate() {
            let mut row: Vec<Cell> = vec![p.delta_e.into(), t_bar_cell(p), cfg.n[k].into()];
            match r {
                Ok(r) => row.extend([
                    r.power.into(),
                    Cell::opt(p1.filter(|v| *v != 0.0).map(|v| r.power / v)),
                    mode_cell(Some(r.mode)),
                    Cell::Null,
                ]),
                Err(e) => row.extend([Cell::Null, Cell::Null, Cell::Null, Cell::Text(e.to_string())]),
            }
            t.rows.push(row);
        }
        let ok: std::result::Result<Vec<thermo::ThermoReport>, Error> = chunk.iter().cloned().collect();
        let fit = ok.and_then(|r| studies::fit_reports(&r));
        fits.push(match fit {
            Ok(f) => json!({"delta_e": p.delta_e, "t_bar": p.t_bar, "n_sat": f.n_sat, "alpha": f.alpha,
                "r_squared": f.r_squared, "sensitivity": f.sensitivity}),
            Err(e) => json!({"delta_e": p.delta_e, "t_bar": p.t_bar, "error": e.to_string(), "kind": e.kind()}),
        });
    }
    let mut errors = collect_errors(&t);
    for f in &fits {
        if let Some(m) = f.get("error").and_then(|m| m.as_str()) {
            errors.push(ErrorRecord { kind: "fit".into(), message: m.to_string(), row: None });
        }
    }
    Outcome { table: t, summary: json!({"n_sat_threshold": 0.05, "fits": fits}), errors }
}

fn run_gap(cfg: &RunConfig) -> Outcome {
    let points = cfg.points();
    let opts = cfg.steady_options();
    let jobs: Vec<(Point, Option<usize>)> = points
        .iter()
        .flat_map(|p| std::iter::once((*p, None)).chain(cfg.n.iter().map(move |&n| (*p, Some(n)))))
        .collect();
    let results: Vec<(Result<f64>, Option<Mode>)> = jobs
        .par_iter()
        .map(|(p, n)| match n {
            None => {
                let m = MacroParams::from_engine(&p.params);
                match macrocumulant::macro_steady_state(&m, &MomentState::polarized_down(), opts) {
                    Ok(ss) => {
                        let mode = macrofluct::macro_mode(macrocumulant::macro_power(&ss.state, &m), &m);
                        (macrocumulant::jacobian_gap_at(&ss.state, &m).map(|g| g.gap), Some(mode))
                    }
                    Err(e) => (Err(e), None),
                }
            }
            Some(n) => {
                let r = liouville::build(&p.params.with_n(*n)).and_then(|l| liouville::gap(&l, 2));
                (r, None)
            }
        })
        .collect();
    let mut t = Table::new(&["kind", "delta_e", "t_bar", "omega0", "n", "gap", "mode", "t_bar_star", "error"]);
    for ((p, n), (g, mode)) in jobs.iter().zip(&results) {
        let star = p.t_bar.map(|_| thermo::t_bar_star(p.params.e1, p.delta_e, delta_t_of(cfg)));
        t.rows.push(vec![
            Cell::from(if n.is_some() { "finite" } else { "macro" }),
            p.delta_e.into(),
            t_bar_cell(p),
            p.params.omega0.into(),
            n.map(Cell::from).unwrap_or(Cell::Null),
            Cell::opt(g.as_ref().ok().copied()),
            mode_cell(*mode),
            Cell::opt(star),
            g.as_ref().err().map(|e| Cell::Text(e.to_string())).unwrap_or(Cell::Null),
        ]);
    }
    // gap against t_bar for each delta_e, split into two linear pieces
    let mut fits = Vec::new();
    if let Energies::Spacing { delta_e } = &cfg.energies {
        for &de in delta_e {
            let (x, y): (Vec<f64>, Vec<f64>) = jobs
                .iter()
                .zip(&results)
                .filter(|((p, n), (g, _))| n.is_none() && p.delta_e == de && p.t_bar.is_some() && g.is_ok())
                .map(|((p, _), (g, _))| (p.t_bar.unwrap_or_default(), *g.as_ref().unwrap_or(&0.0)))
                .unzip();
            if let Ok(f) = studies::piecewise_linear(&x, &y, 3) {
                fits.push(json!({"delta_e": de, "break_at": f.break_at,
                    "t_bar_star": thermo::t_bar_star(cfg.e1, de, delta_t_of(cfg)),
                    "left": f.left, "right": f.right}));
            }
        }
    }
    let errors = collect_errors(&t);
    Outcome { table: t, summary: json!({"piecewise": fits}), errors }
}

fn delta_t_of(cfg: &RunConfig) -> f64 {
    match cfg.temperatures {
        Temperatures::Average { delta_t, .. } => delta_t,
        Temperatures::Inverse { beta1, beta2 } => 1.0 / beta2 - 1.0 / beta1,
    }
}

/// Dispatches one validated configuration.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    Ok(match cfg.command {
        Command::Exact => run_exact(cfg),
        Command::Macro => run_macro(cfg),
        Command::Dissipative => run_dissipative(cfg),
        Command::Fluctuations => run_fluctuations(cfg),
        Command::Correlations => run_correlations(cfg),
        Command::Scan => run_scan(cfg)?,
        Command::Scaling => run_scaling(cfg),
        Command::Gap => run_gap(cfg),
    })
}

pub fn header(cfg: &RunConfig) -> String {
    format!(
        "# spinpair {} command={} config_sha256={} units={}\n# tolerances: {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.command.as_str(),
        cfg.hash(),
        match cfg.units {
            UnitSystem::E1 => "e1",
            UnitSystem::Omega0 => "omega0",
        },
        cfg.tolerances
    )
}

fn manifest(cfg: &RunConfig, threads: usize, out: &Outcome) -> serde_json::Value {
    json!({
        "header": header(cfg).lines().map(|l| l.trim_start_matches("# ")).collect::<Vec<_>>(),
        "tool": "spinpair",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command,
        "config_sha256": cfg.hash(),
        "units": cfg.units,
        "conventions": {"hbar": 1, "k_b": 1, "entropy": "nats"},
        "tolerances": cfg.tolerances,
        "config": cfg,
        "threads": threads,
        "columns": out.table.columns,
        "rows": out.table.rows.len(),
        "errors": out.errors.len(),
        "summary": out.summary,
    })
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Threads from the flag, then the environment, then all cores.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> std::result::Result<usize, String> {
    if let Some(k) = flag {
        return Ok(k);
    }
    if let Some(s) = env {
        return match s.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        };
    }
    Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn fail(out: Option<&Path>, code: i32, errors: &[ErrorRecord]) -> i32 {
    for e in errors {
        eprintln!("error: {}", e.message);
    }
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join("errors.json"), &errors);
        }
    }
    code
}

fn config_errors(msgs: Vec<String>) -> Vec<ErrorRecord> {
    msgs.into_iter().map(|m| ErrorRecord { kind: "config".into(), message: m, row: None }).collect()
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let flags = cli.settings;
    let file = match &flags.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_config(&text) {
                Ok(s) => s,
                Err(v) => return fail(flags.out.as_deref(), 2, &config_errors(v)),
            },
            Err(e) => {
                let v = vec![format!("cannot read config {}: {e}", path.display())];
                return fail(flags.out.as_deref(), 2, &config_errors(v));
            }
        },
        None => Settings::default(),
    };
    let merged = flags.over(file);
    let out_dir = merged.out.clone().unwrap_or_else(|| PathBuf::from(format!("run-{}", cli.command.as_str())));
    let env = std::env::var(THREADS_ENV).ok();
    let mut violations = Vec::new();
    let threads = resolve_threads(merged.threads, env.as_deref()).unwrap_or_else(|m| {
        violations.push(m);
        1
    });
    let cfg = match RunConfig::resolve(cli.command, &merged) {
        Ok(c) if violations.is_empty() => c,
        Ok(_) => return fail(Some(&out_dir), 2, &config_errors(violations)),
        Err(v) => {
            violations.extend(v);
            return fail(Some(&out_dir), 2, &config_errors(violations));
        }
    };
    match run_config(&cfg, &out_dir, threads) {
        Ok(out) if out.errors.is_empty() => 0,
        Ok(out) => {
            for e in &out.errors {
                eprintln!("warning: row {}: {}", e.row.map(|r| r.to_string()).unwrap_or_default(), e.message);
            }
            3
        }
        Err(e) => fail(Some(&out_dir), 1, &[ErrorRecord::from_error(&e, None)]),
    }
}

/// Executes `cfg` on a pool of `threads` workers and writes the three
/// output files into `out_dir`.
pub fn run_config(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<Outcome> {
    // single solves stay sequential so results do not depend on `threads`
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    let out = pool.install(|| execute(cfg))?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("results.csv"), out.table.to_csv(&header(cfg))?)?;
    write_json(&out_dir.join("manifest.json"), &manifest(cfg, threads, &out))?;
    write_json(&out_dir.join("errors.json"), &out.errors)?;
    Ok(out)
}
