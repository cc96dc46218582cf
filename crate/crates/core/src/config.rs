//! TOML run configuration.
//!
//! Keys carry their unit as a suffix (`_mhz`, `_cm`, `_per_us`, `_rad`, ...).
//! Frequencies are written in cyclic MHz and stay that way in [`RunConfig`];
//! the `resolve_*` methods produce the angular quantities the solver uses.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::Result;
use crate::model::{mixing_angle, LossModel, MassCalibration, MassProfile, DEFAULT_KAPPA, DETUNING_PER_GAUSS_MHZ};
use crate::oracle::linear_zero_mode_width;
use crate::solver::{Boundary, EvolutionSpec, GaussianPair, Grid, Orientation};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("key `{key}` has a missing or wrong unit suffix; expected `{expected}`")]
    UnitSuffix { key: String, expected: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("`{key}` must be positive, got {value}")]
    NonPositiveGrid { key: String, value: String },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("file referenced by `{key}` does not exist: {path}")]
    MissingFile { key: String, path: String },
}

type CResult<T> = std::result::Result<T, ConfigError>;

// longest first so `_mhz_per_cm` wins over `_per_cm`-less forms
const UNIT_SUFFIXES: &[&str] = &[
    "_mhz_per_cm",
    "_khz_per_cm",
    "_mg_per_cm",
    "_g_per_cm",
    "_cm_per_us",
    "_per_us",
    "_mhz",
    "_khz",
    "_rad",
    "_cm",
    "_us",
    "_g",
];

fn unit_suffix(key: &str) -> Option<&'static str> {
    UNIT_SUFFIXES
        .iter()
        .copied()
        .find(|s| key.len() > s.len() && key.ends_with(s))
}

fn stem(key: &str) -> &str {
    match unit_suffix(key) {
        Some(s) => &key[..key.len() - s.len()],
        None => key,
    }
}

/// A table being consumed key by key; leftovers are reported as unknown.
struct Section {
    path: String,
    table: Table,
}

impl Section {
    fn new(path: &str, table: Table) -> Self {
        Self {
            path: path.to_string(),
            table,
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{}", self.path, k)
        }
    }

    fn bad(&self, k: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            key: self.key(k),
            reason: reason.into(),
        }
    }

    fn missing(&self, k: &str) -> ConfigError {
        if unit_suffix(k).is_some() {
            if let Some(other) = self.table.keys().find(|o| stem(o) == stem(k) && o.as_str() != k) {
                return ConfigError::UnitSuffix {
                    key: self.key(other),
                    expected: self.key(k),
                };
            }
        }
        ConfigError::MissingKey { key: self.key(k) }
    }

    fn take(&mut self, k: &str) -> Option<Value> {
        self.table.remove(k)
    }

    fn f64_opt(&mut self, k: &str) -> CResult<Option<f64>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::Float(v)) if v.is_finite() => Ok(Some(v)),
            Some(Value::Integer(v)) => Ok(Some(v as f64)),
            Some(v) => Err(self.bad(k, format!("expected a finite number, got {v}"))),
        }
    }

    fn f64_req(&mut self, k: &str) -> CResult<f64> {
        self.f64_opt(k)?.ok_or_else(|| self.missing(k))
    }

    fn usize_opt(&mut self, k: &str) -> CResult<Option<usize>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::Integer(v)) if v >= 0 => Ok(Some(v as usize)),
            Some(v) => Err(self.bad(k, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn bool_opt(&mut self, k: &str) -> CResult<Option<bool>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(v) => Err(self.bad(k, format!("expected true or false, got {v}"))),
        }
    }

    fn str_opt(&mut self, k: &str) -> CResult<Option<String>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.bad(k, format!("expected a string, got {v}"))),
        }
    }

    fn list_opt(&mut self, k: &str) -> CResult<Option<Vec<f64>>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Float(x) if x.is_finite() => Ok(x),
                    Value::Integer(x) => Ok(x as f64),
                    other => Err(self.bad(k, format!("expected numbers, got {other}"))),
                })
                .collect::<CResult<Vec<_>>>()
                .map(Some),
            Some(v) => Err(self.bad(k, format!("expected a list, got {v}"))),
        }
    }

    fn table_opt(&mut self, k: &str) -> CResult<Option<Section>> {
        match self.take(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(&self.key(k), t))),
            Some(v) => Err(self.bad(k, format!("expected a table, got {v}"))),
        }
    }

    fn table_req(&mut self, k: &str) -> CResult<Section> {
        self.table_opt(k)?
            .ok_or_else(|| ConfigError::MissingKey { key: self.key(k) })
    }

    /// Rejects whatever was not consumed.
    fn finish(self, known: &[&str]) -> CResult<()> {
        if let Some(k) = self.table.keys().next() {
            if let Some(expected) = known
                .iter()
                .find(|kn| unit_suffix(kn).is_some() && stem(kn) == stem(k) && *kn != k)
            {
                return Err(ConfigError::UnitSuffix {
                    key: self.key(k),
                    expected: self.key(expected),
                });
            }
            return Err(ConfigError::UnknownKey { key: self.key(k) });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub z_min_cm: f64,
    pub z_max_cm: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationConfig {
    Fitted,
    /// ω_m = (δ/2)·sin²θ with sin²θ = R/(1+R).
    Microscopic {
        coupling_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub v_g_cm_per_us: f64,
    pub kappa: f64,
    pub calibration: CalibrationConfig,
    pub orientation: Orientation,
    pub boundary: Boundary,
    pub gamma_plus_per_us: f64,
    pub gamma_minus_per_us: f64,
}

/// Mass profile in detuning units (cyclic MHz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassConfig {
    Constant {
        delta_mhz: f64,
    },
    Linear {
        slope_mhz_per_cm: f64,
        offset_mhz: f64,
        z_ref_cm: f64,
    },
    Tanh {
        amplitude_mhz: f64,
        center_cm: f64,
        width_cm: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConfig {
    Gaussian {
        center_plus_cm: f64,
        center_minus_cm: f64,
        width_plus_cm: f64,
        width_minus_cm: f64,
        amplitude_ratio: f64,
        phase_phi_rad: f64,
    },
    ZeroMode,
    /// Field snapshot CSV; stored as an absolute path.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauConfig {
    List(Vec<f64>),
    Range { start_us: f64, stop_us: f64, count: usize },
}

impl TauConfig {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TauConfig::List(v) => v.clone(),
            TauConfig::Range {
                start_us,
                stop_us,
                count,
            } => {
                if *count == 1 {
                    return vec![*start_us];
                }
                let step = (stop_us - start_us) / (*count - 1) as f64;
                (0..*count).map(|i| start_us + step * i as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub taus: TauConfig,
    /// One series per constant detuning; empty means use [mass] as given.
    pub deltas_mhz: Vec<f64>,
    pub fit_oscillation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    pub t_final_us: f64,
    /// Write a field snapshot every this many steps; 0 writes only the final field.
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroModeConfig {
    pub t_final_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapEnvelopes {
    ZeroMode,
    Initial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapConfig {
    pub phase_points: usize,
    pub envelopes: OverlapEnvelopes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuppressConfig {
    pub taus: TauConfig,
    pub slope_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub data_path: PathBuf,
    pub free_losses: bool,
    pub free_scale: bool,
    pub components: crate::fit::FitComponents,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionConfig {
    pub modes: Vec<i64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub mass: MassConfig,
    pub initial: InitialConfig,
    pub sweep: Option<SweepConfig>,
    pub evolve: Option<EvolveConfig>,
    pub zero_mode: Option<ZeroModeConfig>,
    pub overlap: Option<OverlapConfig>,
    pub suppress: Option<SuppressConfig>,
    pub fit: Option<FitConfig>,
    pub dispersion: Option<DispersionConfig>,
}

pub const DEFAULT_PHASE_POINTS: usize = 360;
pub const DEFAULT_SLOPE_FACTORS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];
pub const DEFAULT_DISPERSION_STEPS: usize = 2000;
pub const DEFAULT_ZERO_MODE_TIME_US: f64 = 10.0;

fn parse_orientation(s: &Section, k: &str, v: &str) -> CResult<Orientation> {
    match v {
        "paper" => Ok(Orientation::Paper),
        "intuitive" => Ok(Orientation::Intuitive),
        _ => Err(s.bad(k, format!("expected `paper` or `intuitive`, got `{v}`"))),
    }
}

pub fn orientation_name(o: Orientation) -> &'static str {
    match o {
        Orientation::Paper => "paper",
        Orientation::Intuitive => "intuitive",
    }
}

fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Periodic => "periodic",
        Boundary::Outflow => "outflow",
    }
}

fn resolve_path(s: &Section, k: &str, raw: &str, base: &Path) -> CResult<PathBuf> {
    let p = Path::new(raw);
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.is_file() {
        return Err(ConfigError::MissingFile {
            key: s.key(k),
            path: full.display().to_string(),
        });
    }
    Ok(fs::canonicalize(&full).unwrap_or(full))
}

fn parse_grid(mut s: Section) -> CResult<GridConfig> {
    let z_min_cm = s.f64_req("z_min_cm")?;
    let z_max_cm = s.f64_req("z_max_cm")?;
    let n_points = match s.take("n_points") {
        None => return Err(s.missing("n_points")),
        Some(Value::Integer(n)) if n > 0 => n as usize,
        Some(v) => {
            return Err(ConfigError::NonPositiveGrid {
                key: s.key("n_points"),
                value: v.to_string(),
            })
        }
    };
    if !(z_max_cm > z_min_cm) {
        return Err(ConfigError::NonPositiveGrid {
            key: s.key("z_max_cm"),
            value: format!("length {}", z_max_cm - z_min_cm),
        });
    }
    if n_points < 8 {
        return Err(s.bad("n_points", "need at least 8 cells"));
    }
    s.finish(&["z_min_cm", "z_max_cm", "n_points"])?;
    Ok(GridConfig {
        z_min_cm,
        z_max_cm,
        n_points,
    })
}

fn parse_physics(mut s: Section) -> CResult<PhysicsConfig> {
    let v_g_cm_per_us = s.f64_req("v_g_cm_per_us")?;
    if !(v_g_cm_per_us > 0.0) {
        return Err(s.bad("v_g_cm_per_us", "group velocity must be > 0"));
    }
    let kappa = s.f64_opt("kappa")?.unwrap_or(DEFAULT_KAPPA);
    if !(kappa > 0.0) {
        return Err(s.bad("kappa", "must be > 0"));
    }
    let calibration = match s.str_opt("calibration")?.as_deref() {
        None | Some("fitted") => {
            if s.table.contains_key("coupling_ratio") {
                return Err(s.bad("coupling_ratio", "only used with calibration = \"microscopic\""));
            }
            CalibrationConfig::Fitted
        }
        Some("microscopic") => {
            let r = s.f64_req("coupling_ratio")?;
            mixing_angle(r).map_err(|e| s.bad("coupling_ratio", e.to_string()))?;
            CalibrationConfig::Microscopic { coupling_ratio: r }
        }
        Some(o) => return Err(s.bad("calibration", format!("expected `fitted` or `microscopic`, got `{o}`"))),
    };
    let orientation = match s.str_opt("orientation")? {
        None => Orientation::default(),
        Some(v) => parse_orientation(&s, "orientation", &v)?,
    };
    let boundary = match s.str_opt("boundary")?.as_deref() {
        None => Boundary::default(),
        Some("periodic") => Boundary::Periodic,
        Some("outflow") => Boundary::Outflow,
        Some(o) => return Err(s.bad("boundary", format!("expected `periodic` or `outflow`, got `{o}`"))),
    };
    let (mut gp, mut gm) = (0.0, 0.0);
    if let Some(mut loss) = s.table_opt("loss")? {
        if let Some(g) = loss.f64_opt("gamma_per_us")? {
            if loss.table.contains_key("gamma_plus_per_us") || loss.table.contains_key("gamma_minus_per_us") {
                return Err(loss.bad("gamma_per_us", "give either gamma_per_us or the two component rates"));
            }
            (gp, gm) = (g, g);
        } else {
            gp = loss.f64_opt("gamma_plus_per_us")?.unwrap_or(0.0);
            gm = loss.f64_opt("gamma_minus_per_us")?.unwrap_or(0.0);
        }
        LossModel::new(gp, gm).map_err(|e| loss.bad("gamma_plus_per_us", e.to_string()))?;
        loss.finish(&["gamma_per_us", "gamma_plus_per_us", "gamma_minus_per_us"])?;
    }
    s.finish(&[
        "v_g_cm_per_us",
        "kappa",
        "calibration",
        "coupling_ratio",
        "orientation",
        "boundary",
        "loss",
    ])?;
    Ok(PhysicsConfig {
        v_g_cm_per_us,
        kappa,
        calibration,
        orientation,
        boundary,
        gamma_plus_per_us: gp,
        gamma_minus_per_us: gm,
    })
}

/// Reads a cyclic frequency given in MHz, kHz or (optionally) as a field.
fn cyclic(s: &mut Section, stem: &str, field_key: Option<(&str, f64)>, required: bool) -> CResult<Option<f64>> {
    let mhz = s.f64_opt(&format!("{stem}_mhz"))?;
    let khz = s.f64_opt(&format!("{stem}_khz"))?.map(|v| v / 1e3);
    let field = match field_key {
        Some((k, per_unit)) => s.f64_opt(k)?.map(|v| v * per_unit),
        None => None,
    };
    let given: Vec<f64> = [mhz, khz, field].into_iter().flatten().collect();
    match given.len() {
        0 if required => Err(s.missing(&format!("{stem}_mhz"))),
        0 => Ok(None),
        1 => Ok(Some(given[0])),
        _ => Err(s.bad(&format!("{stem}_mhz"), "value given in more than one unit")),
    }
}

fn parse_mass(mut s: Section, grid: &GridConfig) -> CResult<MassConfig> {
    let kind = s.str_opt("type")?.ok_or_else(|| s.missing("type"))?;
    let mid = 0.5 * (grid.z_min_cm + grid.z_max_cm);
    let mass = match kind.as_str() {
        "constant" => {
            let delta_mhz = cyclic(&mut s, "delta", Some(("field_g", DETUNING_PER_GAUSS_MHZ)), true)?.unwrap();
            s.finish(&["type", "delta_mhz", "delta_khz", "field_g"])?;
            MassConfig::Constant { delta_mhz }
        }
        "linear" => {
            let mhz = s.f64_opt("slope_mhz_per_cm")?;
            let khz = s.f64_opt("slope_khz_per_cm")?.map(|v| v / 1e3);
            let gradient = s
                .f64_opt("gradient_mg_per_cm")?
                .map(|g| g * 1e-3 * DETUNING_PER_GAUSS_MHZ);
            let given: Vec<f64> = [mhz, khz, gradient].into_iter().flatten().collect();
            let slope_mhz_per_cm = match given.as_slice() {
                [] => return Err(s.missing("slope_mhz_per_cm")),
                [v] => *v,
                _ => return Err(s.bad("slope_mhz_per_cm", "slope given more than once")),
            };
            let offset_mhz = cyclic(&mut s, "offset", None, false)?.unwrap_or(0.0);
            let z_ref_cm = s.f64_opt("z_ref_cm")?.unwrap_or(mid);
            s.finish(&[
                "type",
                "slope_mhz_per_cm",
                "slope_khz_per_cm",
                "gradient_mg_per_cm",
                "offset_mhz",
                "offset_khz",
                "z_ref_cm",
            ])?;
            MassConfig::Linear {
                slope_mhz_per_cm,
                offset_mhz,
                z_ref_cm,
            }
        }
        "tanh" => {
            let amplitude_mhz = cyclic(&mut s, "amplitude", None, true)?.unwrap();
            let center_cm = s.f64_opt("center_cm")?.unwrap_or(mid);
            let width_cm = s.f64_req("width_cm")?;
            if !(width_cm > 0.0) {
                return Err(s.bad("width_cm", "must be > 0"));
            }
            s.finish(&["type", "amplitude_mhz", "amplitude_khz", "center_cm", "width_cm"])?;
            MassConfig::Tanh {
                amplitude_mhz,
                center_cm,
                width_cm,
            }
        }
        other => return Err(s.bad("type", format!("expected constant, linear or tanh, got `{other}`"))),
    };
    Ok(mass)
}

fn parse_initial(mut s: Section, defaults: &GaussianPair, base: &Path) -> CResult<InitialConfig> {
    let kind = s.str_opt("type")?.unwrap_or_else(|| "gaussian".into());
    match kind.as_str() {
        "gaussian" => {
            let center_plus_cm = s.f64_opt("center_plus_cm")?.unwrap_or(defaults.center_plus);
            let center_minus_cm = s.f64_opt("center_minus_cm")?.unwrap_or(defaults.center_minus);
            let width_plus_cm = s.f64_opt("width_plus_cm")?.unwrap_or(defaults.width_plus);
            let width_minus_cm = s.f64_opt("width_minus_cm")?.unwrap_or(defaults.width_minus);
            for (k, w) in [("width_plus_cm", width_plus_cm), ("width_minus_cm", width_minus_cm)] {
                if !(w > 0.0) {
                    return Err(s.bad(k, "must be > 0"));
                }
            }
            let amplitude_ratio = s.f64_opt("amplitude_ratio")?.unwrap_or(1.0);
            if !(amplitude_ratio >= 0.0) {
                return Err(s.bad("amplitude_ratio", "must be ≥ 0"));
            }
            let phase_phi_rad = s.f64_opt("phase_phi_rad")?.unwrap_or(0.0);
            s.finish(&[
                "type",
                "center_plus_cm",
                "center_minus_cm",
                "width_plus_cm",
                "width_minus_cm",
                "amplitude_ratio",
                "phase_phi_rad",
            ])?;
            Ok(InitialConfig::Gaussian {
                center_plus_cm,
                center_minus_cm,
                width_plus_cm,
                width_minus_cm,
                amplitude_ratio,
                phase_phi_rad,
            })
        }
        "zero_mode" => {
            s.finish(&["type"])?;
            Ok(InitialConfig::ZeroMode)
        }
        "file" => {
            let raw = s.str_opt("path")?.ok_or_else(|| s.missing("path"))?;
            let path = resolve_path(&s, "path", &raw, base)?;
            s.finish(&["type", "path"])?;
            Ok(InitialConfig::File { path })
        }
        other => Err(s.bad("type", format!("expected gaussian, zero_mode or file, got `{other}`"))),
    }
}

fn parse_taus(s: &mut Section) -> CResult<TauConfig> {
    let list = s.list_opt("taus_us")?;
    let start = s.f64_opt("tau_start_us")?;
    let stop = s.f64_opt("tau_stop_us")?;
    let count = s.usize_opt("tau_count")?;
    let taus = match (list, start, stop, count) {
        (Some(v), None, None, None) => TauConfig::List(v),
        (None, Some(start_us), Some(stop_us), Some(count)) => {
            if count == 0 || (count > 1 && !(stop_us > start_us)) {
                return Err(s.bad("tau_count", "need count ≥ 1 and stop > start"));
            }
            TauConfig::Range {
                start_us,
                stop_us,
                count,
            }
        }
        (None, None, None, None) => return Err(s.missing("taus_us")),
        _ => {
            return Err(s.bad(
                "taus_us",
                "give either taus_us or all of tau_start_us, tau_stop_us, tau_count",
            ))
        }
    };
    let v = taus.values();
    if v.is_empty() || v[0] < 0.0 || v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(s.bad("taus_us", "storage times must be ≥ 0 and strictly increasing"));
    }
    Ok(taus)
}

const TAU_KEYS: [&str; 4] = ["taus_us", "tau_start_us", "tau_stop_us", "tau_count"];

fn with_tau_keys<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    TAU_KEYS.iter().copied().chain(extra.iter().copied()).collect()
}

impl RunConfig {
    /// Parses TOML text; relative file paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> CResult<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        // a run manifest embeds its config under [config]
        let table = match (table.get("config"), table.contains_key("tool")) {
            (Some(Value::Table(inner)), true) => inner.clone(),
            _ => table,
        };
        let mut root = Section::new("", table);
        let grid = parse_grid(root.table_req("grid")?)?;
        let physics = parse_physics(root.table_req("physics")?)?;
        let mass = parse_mass(root.table_req("mass")?, &grid)?;
        let defaults = default_envelopes(&grid, &physics, &mass);
        let initial = match root.table_opt("initial")? {
            Some(s) => parse_initial(s, &defaults, base)?,
            None => parse_initial(Section::new("initial", Table::new()), &defaults, base)?,
        };

        let sweep = match root.table_opt("sweep")? {
            None => None,
            Some(mut s) => {
                let taus = parse_taus(&mut s)?;
                let deltas_mhz = s.list_opt("deltas_mhz")?.unwrap_or_default();
                let fit_oscillation = s.bool_opt("fit_oscillation")?.unwrap_or(true);
                s.finish(&with_tau_keys(&["deltas_mhz", "fit_oscillation"]))?;
                Some(SweepConfig {
                    taus,
                    deltas_mhz,
                    fit_oscillation,
                })
            }
        };
        let evolve = match root.table_opt("evolve")? {
            None => None,
            Some(mut s) => {
                let t_final_us = s.f64_req("t_final_us")?;
                if !(t_final_us >= 0.0) {
                    return Err(s.bad("t_final_us", "must be ≥ 0"));
                }
                let snapshot_every = s.usize_opt("snapshot_every")?.unwrap_or(0);
                s.finish(&["t_final_us", "snapshot_every"])?;
                Some(EvolveConfig {
                    t_final_us,
                    snapshot_every,
                })
            }
        };
        let zero_mode = match root.table_opt("zero_mode")? {
            None => None,
            Some(mut s) => {
                let t_final_us = s.f64_opt("t_final_us")?.unwrap_or(DEFAULT_ZERO_MODE_TIME_US);
                if !(t_final_us >= 0.0) {
                    return Err(s.bad("t_final_us", "must be ≥ 0"));
                }
                s.finish(&["t_final_us"])?;
                Some(ZeroModeConfig { t_final_us })
            }
        };
        let overlap = match root.table_opt("overlap")? {
            None => None,
            Some(mut s) => {
                let phase_points = s.usize_opt("phase_points")?.unwrap_or(DEFAULT_PHASE_POINTS);
                if phase_points < 2 {
                    return Err(s.bad("phase_points", "need at least 2"));
                }
                let envelopes = match s.str_opt("envelopes")?.as_deref() {
                    None | Some("zero_mode") => OverlapEnvelopes::ZeroMode,
                    Some("initial") => OverlapEnvelopes::Initial,
                    Some(o) => return Err(s.bad("envelopes", format!("expected zero_mode or initial, got `{o}`"))),
                };
                s.finish(&["phase_points", "envelopes"])?;
                Some(OverlapConfig {
                    phase_points,
                    envelopes,
                })
            }
        };
        let suppress = match root.table_opt("suppress")? {
            None => None,
            Some(mut s) => {
                let taus = parse_taus(&mut s)?;
                let slope_factors = s
                    .list_opt("slope_factors")?
                    .unwrap_or_else(|| DEFAULT_SLOPE_FACTORS.to_vec());
                if slope_factors.is_empty() {
                    return Err(s.bad("slope_factors", "must not be empty"));
                }
                s.finish(&with_tau_keys(&["slope_factors"]))?;
                Some(SuppressConfig { taus, slope_factors })
            }
        };
        let fit = match root.table_opt("fit")? {
            None => None,
            Some(mut s) => {
                let raw = s.str_opt("data_path")?.ok_or_else(|| s.missing("data_path"))?;
                let data_path = resolve_path(&s, "data_path", &raw, base)?;
                let free_losses = s.bool_opt("free_losses")?.unwrap_or(false);
                let free_scale = s.bool_opt("free_scale")?.unwrap_or(false);
                let components = match s.str_opt("components")?.as_deref() {
                    None | Some("joint") => crate::fit::FitComponents::Joint,
                    Some("plus") => crate::fit::FitComponents::PlusOnly,
                    Some("minus") => crate::fit::FitComponents::MinusOnly,
                    Some(o) => return Err(s.bad("components", format!("expected joint, plus or minus, got `{o}`"))),
                };
                let ratio_min = s.f64_opt("ratio_min")?.unwrap_or(0.1);
                let ratio_max = s.f64_opt("ratio_max")?.unwrap_or(10.0);
                if !(ratio_min > 0.0 && ratio_max > ratio_min) {
                    return Err(s.bad("ratio_min", "need 0 < ratio_min < ratio_max"));
                }
                s.finish(&[
                    "data_path",
                    "free_losses",
                    "free_scale",
                    "components",
                    "ratio_min",
                    "ratio_max",
                ])?;
                Some(FitConfig {
                    data_path,
                    free_losses,
                    free_scale,
                    components,
                    ratio_min,
                    ratio_max,
                })
            }
        };
        let dispersion = match root.table_opt("dispersion")? {
            None => None,
            Some(mut s) => {
                let modes = match s.take("modes") {
                    None => vec![0, 1, 2],
                    Some(Value::Array(items)) => items
                        .into_iter()
                        .map(|v| match v {
                            Value::Integer(m) => Ok(m),
                            other => Err(s.bad("modes", format!("expected integers, got {other}"))),
                        })
                        .collect::<CResult<_>>()?,
                    Some(v) => return Err(s.bad("modes", format!("expected a list of integers, got {v}"))),
                };
                let steps = s.usize_opt("steps")?.unwrap_or(DEFAULT_DISPERSION_STEPS);
                if steps == 0 {
                    return Err(s.bad("steps", "must be ≥ 1"));
                }
                s.finish(&["modes", "steps"])?;
                Some(DispersionConfig { modes, steps })
            }
        };
        root.finish(&[
            "grid",
            "physics",
            "mass",
            "initial",
            "sweep",
            "evolve",
            "zero_mode",
            "overlap",
            "suppress",
            "fit",
            "dispersion",
        ])?;
        Ok(Self {
            grid,
            physics,
            mass,
            initial,
            sweep,
            evolve,
            zero_mode,
            overlap,
            suppress,
            fit,
            dispersion,
        })
    }

    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        let mut t = Table::new();
        t.insert("z_min_cm".into(), self.grid.z_min_cm.into());
        t.insert("z_max_cm".into(), self.grid.z_max_cm.into());
        t.insert("n_points".into(), (self.grid.n_points as i64).into());
        root.insert("grid".into(), t.into());

        let p = &self.physics;
        let mut t = Table::new();
        t.insert("v_g_cm_per_us".into(), p.v_g_cm_per_us.into());
        t.insert("kappa".into(), p.kappa.into());
        match p.calibration {
            CalibrationConfig::Fitted => {
                t.insert("calibration".into(), "fitted".into());
            }
            CalibrationConfig::Microscopic { coupling_ratio } => {
                t.insert("calibration".into(), "microscopic".into());
                t.insert("coupling_ratio".into(), coupling_ratio.into());
            }
        }
        t.insert("orientation".into(), orientation_name(p.orientation).into());
        t.insert("boundary".into(), boundary_name(p.boundary).into());
        let mut loss = Table::new();
        loss.insert("gamma_plus_per_us".into(), p.gamma_plus_per_us.into());
        loss.insert("gamma_minus_per_us".into(), p.gamma_minus_per_us.into());
        t.insert("loss".into(), loss.into());
        root.insert("physics".into(), t.into());

        let mut t = Table::new();
        match self.mass {
            MassConfig::Constant { delta_mhz } => {
                t.insert("type".into(), "constant".into());
                t.insert("delta_mhz".into(), delta_mhz.into());
            }
            MassConfig::Linear {
                slope_mhz_per_cm,
                offset_mhz,
                z_ref_cm,
            } => {
                t.insert("type".into(), "linear".into());
                t.insert("slope_mhz_per_cm".into(), slope_mhz_per_cm.into());
                t.insert("offset_mhz".into(), offset_mhz.into());
                t.insert("z_ref_cm".into(), z_ref_cm.into());
            }
            MassConfig::Tanh {
                amplitude_mhz,
                center_cm,
                width_cm,
            } => {
                t.insert("type".into(), "tanh".into());
                t.insert("amplitude_mhz".into(), amplitude_mhz.into());
                t.insert("center_cm".into(), center_cm.into());
                t.insert("width_cm".into(), width_cm.into());
            }
        }
        root.insert("mass".into(), t.into());

        let mut t = Table::new();
        match &self.initial {
            InitialConfig::Gaussian {
                center_plus_cm,
                center_minus_cm,
                width_plus_cm,
                width_minus_cm,
                amplitude_ratio,
                phase_phi_rad,
            } => {
                t.insert("type".into(), "gaussian".into());
                t.insert("center_plus_cm".into(), (*center_plus_cm).into());
                t.insert("center_minus_cm".into(), (*center_minus_cm).into());
                t.insert("width_plus_cm".into(), (*width_plus_cm).into());
                t.insert("width_minus_cm".into(), (*width_minus_cm).into());
                t.insert("amplitude_ratio".into(), (*amplitude_ratio).into());
                t.insert("phase_phi_rad".into(), (*phase_phi_rad).into());
            }
            InitialConfig::ZeroMode => {
                t.insert("type".into(), "zero_mode".into());
            }
            InitialConfig::File { path } => {
                t.insert("type".into(), "file".into());
                t.insert("path".into(), path.display().to_string().into());
            }
        }
        root.insert("initial".into(), t.into());

        let put_taus = |t: &mut Table, taus: &TauConfig| match taus {
            TauConfig::List(v) => {
                t.insert("taus_us".into(), Value::Array(v.iter().map(|&x| x.into()).collect()));
            }
            TauConfig::Range {
                start_us,
                stop_us,
                count,
            } => {
                t.insert("tau_start_us".into(), (*start_us).into());
                t.insert("tau_stop_us".into(), (*stop_us).into());
                t.insert("tau_count".into(), (*count as i64).into());
            }
        };
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| x.into()).collect());

        if let Some(c) = &self.sweep {
            let mut t = Table::new();
            put_taus(&mut t, &c.taus);
            t.insert("deltas_mhz".into(), floats(&c.deltas_mhz));
            t.insert("fit_oscillation".into(), c.fit_oscillation.into());
            root.insert("sweep".into(), t.into());
        }
        if let Some(c) = &self.evolve {
            let mut t = Table::new();
            t.insert("t_final_us".into(), c.t_final_us.into());
            t.insert("snapshot_every".into(), (c.snapshot_every as i64).into());
            root.insert("evolve".into(), t.into());
        }
        if let Some(c) = &self.zero_mode {
            let mut t = Table::new();
            t.insert("t_final_us".into(), c.t_final_us.into());
            root.insert("zero_mode".into(), t.into());
        }
        if let Some(c) = &self.overlap {
            let mut t = Table::new();
            t.insert("phase_points".into(), (c.phase_points as i64).into());
            let env = match c.envelopes {
                OverlapEnvelopes::ZeroMode => "zero_mode",
                OverlapEnvelopes::Initial => "initial",
            };
            t.insert("envelopes".into(), env.into());
            root.insert("overlap".into(), t.into());
        }
        if let Some(c) = &self.suppress {
            let mut t = Table::new();
            put_taus(&mut t, &c.taus);
            t.insert("slope_factors".into(), floats(&c.slope_factors));
            root.insert("suppress".into(), t.into());
        }
        if let Some(c) = &self.fit {
            let mut t = Table::new();
            t.insert("data_path".into(), c.data_path.display().to_string().into());
            t.insert("free_losses".into(), c.free_losses.into());
            t.insert("free_scale".into(), c.free_scale.into());
            let comp = match c.components {
                crate::fit::FitComponents::Joint => "joint",
                crate::fit::FitComponents::PlusOnly => "plus",
                crate::fit::FitComponents::MinusOnly => "minus",
            };
            t.insert("components".into(), comp.into());
            t.insert("ratio_min".into(), c.ratio_min.into());
            t.insert("ratio_max".into(), c.ratio_max.into());
            root.insert("fit".into(), t.into());
        }
        if let Some(c) = &self.dispersion {
            let mut t = Table::new();
            t.insert(
                "modes".into(),
                Value::Array(c.modes.iter().map(|&m| m.into()).collect()),
            );
            t.insert("steps".into(), (c.steps as i64).into());
            root.insert("dispersion".into(), t.into());
        }
        root
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_table()).expect("config tables always serialize")
    }

    pub fn resolve_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.z_min_cm, self.grid.z_max_cm, self.grid.n_points)
    }

    pub fn calibration(&self) -> Result<MassCalibration> {
        Ok(match self.physics.calibration {
            CalibrationConfig::Fitted => MassCalibration::Fitted {
                kappa: self.physics.kappa,
            },
            CalibrationConfig::Microscopic { coupling_ratio } => MassCalibration::Microscopic {
                mixing_angle: mixing_angle(coupling_ratio)?,
            },
        })
    }

    /// Mass profile in rad/µs.
    pub fn resolve_mass(&self) -> Result<MassProfile> {
        Ok(MassProfile::from_detuning_mhz(
            detuning_profile(&self.mass),
            self.calibration()?,
        ))
    }

    pub fn resolve_loss(&self) -> Result<LossModel> {
        LossModel::new(self.physics.gamma_plus_per_us, self.physics.gamma_minus_per_us)
    }

    pub fn resolve_spec(&self) -> Result<EvolutionSpec> {
        Ok(EvolutionSpec::new(
            self.resolve_grid()?,
            self.physics.v_g_cm_per_us,
            self.resolve_mass()?,
            self.resolve_loss()?,
            self.physics.boundary,
        )?
        .with_orientation(self.physics.orientation))
    }

    /// Gaussian envelopes of a `gaussian` initial block, or the defaults.
    pub fn envelopes(&self) -> GaussianPair {
        match &self.initial {
            InitialConfig::Gaussian {
                center_plus_cm,
                center_minus_cm,
                width_plus_cm,
                width_minus_cm,
                ..
            } => GaussianPair {
                center_plus: *center_plus_cm,
                center_minus: *center_minus_cm,
                width_plus: *width_plus_cm,
                width_minus: *width_minus_cm,
            },
            _ => default_envelopes(&self.grid, &self.physics, &self.mass),
        }
    }
}

fn detuning_profile(mass: &MassConfig) -> MassProfile {
    match *mass {
        MassConfig::Constant { delta_mhz } => MassProfile::constant(delta_mhz),
        MassConfig::Linear {
            slope_mhz_per_cm,
            offset_mhz,
            z_ref_cm,
        } => MassProfile::linear(slope_mhz_per_cm, offset_mhz, z_ref_cm),
        MassConfig::Tanh {
            amplitude_mhz,
            center_cm,
            width_cm,
        } => MassProfile::Tanh {
            amplitude: amplitude_mhz,
            center: center_cm,
            width: width_cm,
        },
    }
}

/// Both envelopes centred on the mass zero crossing with the zero-mode
/// width; without a crossing, the domain centre and a tenth of its length.
fn default_envelopes(grid: &GridConfig, physics: &PhysicsConfig, mass: &MassConfig) -> GaussianPair {
    let len = grid.z_max_cm - grid.z_min_cm;
    let fallback = GaussianPair::symmetric(grid.z_min_cm + 0.5 * len, 0.1 * len);
    let scale = match physics.calibration {
        CalibrationConfig::Fitted => physics.kappa,
        CalibrationConfig::Microscopic { coupling_ratio } => match mixing_angle(coupling_ratio) {
            Ok(theta) => MassCalibration::Microscopic { mixing_angle: theta }.scale(),
            Err(_) => return fallback,
        },
    };
    let profile = MassProfile::from_detuning_mhz(detuning_profile(mass), MassCalibration::Fitted { kappa: scale });
    let (Some(center), Some(slope)) = (profile.zero_crossing(), profile.slope_at_crossing()) else {
        return fallback;
    };
    match linear_zero_mode_width(slope, physics.v_g_cm_per_us) {
        Some(w) if center > grid.z_min_cm && center < grid.z_max_cm => GaussianPair::symmetric(center, w),
        _ => fallback,
    }
}

/// Reads and validates a config (or a run manifest) from disk.
pub fn load_config(path: &Path) -> CResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    RunConfig::from_toml_str(&text, base)
}

pub fn referenced_files(config: &RunConfig) -> BTreeSet<PathBuf> {
    let mut files = BTreeSet::new();
    if let InitialConfig::File { path } = &config.initial {
        files.insert(path.clone());
    }
    if let Some(f) = &config.fit {
        files.insert(f.data_path.clone());
    }
    files
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    const MINIMAL: &str = r#"
[grid]
z_min_cm = 0.0
z_max_cm = 5.0
n_points = 512

[physics]
v_g_cm_per_us = 1.0

[mass]
type = "constant"
delta_mhz = 0.35

[initial]
type = "gaussian"
"#;

    fn parse(text: &str) -> CResult<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.physics.kappa, DEFAULT_KAPPA);
        assert_eq!(c.physics.orientation, Orientation::Paper);
        assert_eq!(c.physics.boundary, Boundary::Periodic);
        assert_eq!((c.physics.gamma_plus_per_us, c.physics.gamma_minus_per_us), (0.0, 0.0));
        let InitialConfig::Gaussian {
            center_plus_cm,
            width_plus_cm,
            amplitude_ratio,
            phase_phi_rad,
            ..
        } = c.initial
        else {
            panic!()
        };
        assert_eq!(
            (center_plus_cm, width_plus_cm, amplitude_ratio, phase_phi_rad),
            (2.5, 0.5, 1.0, 0.0)
        );
    }

    #[test]
    fn constant_delta_is_converted_to_angular() {
        let c = parse(MINIMAL).unwrap();
        let MassProfile::Constant { omega } = c.resolve_mass().unwrap() else {
            panic!()
        };
        assert_relative_eq!(omega, 3.3 * TAU * 0.35, max_relative = 1e-15);
    }

    #[test]
    fn khz_and_field_units() {
        let khz = parse(&MINIMAL.replace("delta_mhz = 0.35", "delta_khz = 350.0")).unwrap();
        assert_eq!(khz.mass, MassConfig::Constant { delta_mhz: 0.35 });
        let g = parse(&MINIMAL.replace("delta_mhz = 0.35", "field_g = 1.0")).unwrap();
        assert_eq!(g.mass, MassConfig::Constant { delta_mhz: 1.09 });
        let both = parse(&MINIMAL.replace("delta_mhz = 0.35", "delta_mhz = 0.35\ndelta_khz = 350.0"));
        assert!(matches!(both, Err(ConfigError::InvalidValue { .. })));
    }

    #[test]
    fn missing_unit_suffix_names_the_key() {
        let text = MINIMAL.replace("v_g_cm_per_us = 1.0", "v_g_cm_per_us = 1.0\nloss = { gamma = 0.3 }");
        match parse(&text) {
            Err(ConfigError::UnitSuffix { key, expected }) => {
                assert_eq!(key, "physics.loss.gamma");
                assert_eq!(expected, "physics.loss.gamma_per_us");
            }
            other => panic!("{other:?}"),
        }
        match parse(&MINIMAL.replace("delta_mhz", "delta")) {
            Err(ConfigError::UnitSuffix { key, .. }) => assert_eq!(key, "mass.delta"),
            other => panic!("{other:?}"),
        }
        match parse(&MINIMAL.replace("z_max_cm", "z_max")) {
            Err(ConfigError::UnitSuffix { key, .. }) => assert_eq!(key, "grid.z_max"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn distinct_diagnostics() {
        assert!(matches!(
            parse(&MINIMAL.replace("v_g_cm_per_us = 1.0", "v_g_cm_per_us = 1.0\ncolor = 3")),
            Err(ConfigError::UnknownKey { key }) if key == "physics.color"
        ));
        assert!(matches!(
            parse(&MINIMAL.replace("v_g_cm_per_us = 1.0", "")),
            Err(ConfigError::MissingKey { key }) if key == "physics.v_g_cm_per_us"
        ));
        assert!(matches!(
            parse(&MINIMAL.replace("n_points = 512", "n_points = 0")),
            Err(ConfigError::NonPositiveGrid { key, .. }) if key == "grid.n_points"
        ));
        assert!(matches!(
            parse(&MINIMAL.replace("z_max_cm = 5.0", "z_max_cm = -1.0")),
            Err(ConfigError::NonPositiveGrid { .. })
        ));
        assert!(matches!(parse("[grid"), Err(ConfigError::Syntax(_))));
        assert!(matches!(
            parse(&format!("{MINIMAL}\n[fit]\ndata_path = \"/nonexistent/data.csv\"\n")),
            Err(ConfigError::MissingFile { .. })
        ));
    }

    #[test]
    fn linear_mass_defaults_envelopes_to_zero_mode() {
        let text = MINIMAL.replace(
            "type = \"constant\"\ndelta_mhz = 0.35",
            "type = \"linear\"\nslope_mhz_per_cm = 0.745\noffset_mhz = 0.35\nz_ref_cm = 2.5",
        );
        let c = parse(&text).unwrap();
        let env = c.envelopes();
        let paper = MassProfile::paper_linear(DEFAULT_KAPPA);
        assert_relative_eq!(env.center_plus, paper.zero_crossing().unwrap(), epsilon = 1e-12);
        let MassProfile::Linear { slope, .. } = paper else {
            panic!()
        };
        assert_relative_eq!(
            env.width_minus,
            linear_zero_mode_width(slope, 1.0).unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(c.resolve_mass().unwrap(), paper);

        let grad = parse(&text.replace("slope_mhz_per_cm = 0.745", "gradient_mg_per_cm = 435.0")).unwrap();
        let MassConfig::Linear { slope_mhz_per_cm, .. } = grad.mass else {
            panic!()
        };
        assert_relative_eq!(slope_mhz_per_cm, 0.47415, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        fs::write(&data, "tau_us,i_plus,i_minus\n0,0.5,0.5\n").unwrap();
        let full = format!(
            "{}\n[sweep]\ntau_start_us = 0.0\ntau_stop_us = 3.0\ntau_count = 61\ndeltas_mhz = [0.35, 0.7]\n\
             [evolve]\nt_final_us = 2.5\nsnapshot_every = 10\n[zero_mode]\n[overlap]\nphase_points = 33\n\
             [suppress]\ntaus_us = [0.0, 0.1, 0.7]\n[fit]\ndata_path = \"data.csv\"\nfree_scale = true\n\
             [dispersion]\nmodes = [0, 1, 3]\n",
            MINIMAL.replace(
                "v_g_cm_per_us = 1.0",
                "v_g_cm_per_us = 1.0\nkappa = 3.1\nloss = { gamma_per_us = 0.3 }"
            )
        );
        let path = dir.path().join("run.toml");
        fs::write(&path, full).unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.physics.gamma_minus_per_us, 0.3);
        let again = RunConfig::from_toml_str(&c.to_toml_string(), Path::new("/")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml_string(), c.to_toml_string());
    }

    #[test]
    fn tau_range_values() {
        let t = TauConfig::Range {
            start_us: 0.0,
            stop_us: 3.0,
            count: 61,
        };
        let v = t.values();
        assert_eq!(v.len(), 61);
        assert_eq!(v[0], 0.0);
        assert_relative_eq!(v[60], 3.0, epsilon = 1e-14);
    }
}
