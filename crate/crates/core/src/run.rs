//! Subcommand dispatch and reproducibility manifests.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::analysis::{
    oscillation_fit, overlap_vs_phase, phase_grid, storage_sweep, suppression_metric, write_overlap_csv, Component,
    SweepSeries,
};
use crate::config::{orientation_name, InitialConfig, MassConfig, OverlapEnvelopes, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::fit::{fit_phase_amplitude, simulate_observables, ExperimentSeries, FitTemplate};
use crate::model::MassProfile;
use crate::oracle::{
    dirac_dispersion, measure_phase_frequency, periodic_wavenumber, plane_wave_mode, zero_mode_envelope,
    zero_mode_oriented, Branch,
};
use crate::solver::{
    evolve, field_norm, init_gaussian_spinor, relative_l2_deviation, Boundary, EvolutionSpec, Propagator, SpinorField,
};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const WORKERS_ENV: &str = "SSL_DIRAC_WORKERS";
/// Fewest cells per wavelength accepted by `dispersion-check`.
pub const MIN_CELLS_PER_WAVELENGTH: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Evolve,
    Sweep,
    DispersionCheck,
    ZeroMode,
    Overlap,
    Suppress,
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Sweep => "sweep",
            Command::DispersionCheck => "dispersion-check",
            Command::ZeroMode => "zero-mode",
            Command::Overlap => "overlap",
            Command::Suppress => "suppress",
            Command::Fit => "fit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub input_hash: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    /// Angular quantities and realized times actually used.
    pub resolved: Table,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_toml_string(&self) -> String {
        let mut t = Table::new();
        t.insert("tool".into(), TOOL_NAME.into());
        t.insert("version".into(), TOOL_VERSION.into());
        t.insert("command".into(), self.command.clone().into());
        t.insert("input_hash".into(), self.input_hash.clone().into());
        t.insert("wall_clock_seconds".into(), self.wall_clock_seconds.into());
        t.insert(
            "outputs".into(),
            Value::Array(self.outputs.iter().map(|s| s.clone().into()).collect()),
        );
        t.insert("resolved".into(), self.resolved.clone().into());
        t.insert("config".into(), self.config.to_table().into());
        toml::to_string(&t).expect("manifest tables always serialize")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the config with file paths replaced by the hashes of their
/// contents, so it does not depend on where the inputs live.
pub fn input_hash(config: &RunConfig) -> Result<String> {
    let mut canonical = config.clone();
    let digest = |p: &Path| -> Result<PathBuf> { Ok(PathBuf::from(sha256_hex(&fs::read(p)?))) };
    if let InitialConfig::File { path } = &mut canonical.initial {
        *path = digest(path)?;
    }
    if let Some(f) = &mut canonical.fit {
        f.data_path = digest(&f.data_path)?;
    }
    Ok(sha256_hex(canonical.to_toml_string().as_bytes()))
}

/// Files written so far, removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf)?;
        self.written.push(path);
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    }

    fn discard(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs one subcommand, writing its outputs and `manifest.toml` into
/// `out_dir`. On failure every file this run created is removed.
pub fn run(config: &RunConfig, command: Command, out_dir: &Path, workers: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let wrap = |e: Error| Error::Command {
        command: command.name(),
        source: Box::new(e),
    };
    fs::create_dir_all(out_dir).map_err(|e| wrap(e.into()))?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| wrap(Error::Io(e.to_string())))?;
    let result = pool.install(|| -> Result<RunManifest> {
        let hash = input_hash(config)?;
        let resolved = dispatch(config, command, &mut out)?;
        let mut manifest = RunManifest {
            command: command.name().to_string(),
            input_hash: hash,
            wall_clock_seconds: 0.0,
            outputs: out.names(),
            resolved,
            config: config.clone(),
        };
        manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
        let text = manifest.to_toml_string();
        out.write(MANIFEST_FILE, |b| b.write_all(text.as_bytes()))?;
        Ok(manifest)
    });
    result.map_err(|e| {
        out.discard();
        wrap(e)
    })
}

fn dispatch(config: &RunConfig, command: Command, out: &mut Outputs) -> Result<Table> {
    let spec = config.resolve_spec()?;
    let mut resolved = common_resolved(&spec);
    match command {
        Command::Evolve => run_evolve(config, &spec, out, &mut resolved)?,
        Command::Sweep => run_sweep(config, &spec, out, &mut resolved)?,
        Command::DispersionCheck => run_dispersion(config, &spec, out, &mut resolved)?,
        Command::ZeroMode => run_zero_mode(config, &spec, out, &mut resolved)?,
        Command::Overlap => run_overlap(config, &spec, out)?,
        Command::Suppress => run_suppress(config, &spec, out, &mut resolved)?,
        Command::Fit => run_fit(config, &spec, out, &mut resolved)?,
    }
    Ok(resolved)
}

fn mass_table(mass: &MassProfile) -> Table {
    let mut t = Table::new();
    match *mass {
        MassProfile::Constant { omega } => {
            t.insert("type".into(), "constant".into());
            t.insert("omega_rad_per_us".into(), omega.into());
        }
        MassProfile::Linear { slope, offset, z_ref } => {
            t.insert("type".into(), "linear".into());
            t.insert("slope_rad_per_us_per_cm".into(), slope.into());
            t.insert("offset_rad_per_us".into(), offset.into());
            t.insert("z_ref_cm".into(), z_ref.into());
        }
        MassProfile::Tanh {
            amplitude,
            center,
            width,
        } => {
            t.insert("type".into(), "tanh".into());
            t.insert("amplitude_rad_per_us".into(), amplitude.into());
            t.insert("center_cm".into(), center.into());
            t.insert("width_cm".into(), width.into());
        }
    }
    t
}

fn common_resolved(spec: &EvolutionSpec) -> Table {
    let mut t = Table::new();
    t.insert("dt_us".into(), spec.dt().into());
    t.insert("dz_cm".into(), spec.grid().dz().into());
    t.insert("v_g_cm_per_us".into(), spec.v_g().into());
    t.insert("gamma_plus_per_us".into(), spec.loss().gamma_plus.into());
    t.insert("gamma_minus_per_us".into(), spec.loss().gamma_minus.into());
    t.insert("orientation".into(), orientation_name(spec.orientation()).into());
    t.insert("mass".into(), mass_table(spec.mass()).into());
    t
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| x.into()).collect())
}

fn build_initial(config: &RunConfig, spec: &EvolutionSpec) -> Result<SpinorField> {
    let grid = *spec.grid();
    match &config.initial {
        InitialConfig::Gaussian {
            amplitude_ratio,
            phase_phi_rad,
            ..
        } => init_gaussian_spinor(grid, &config.envelopes(), *amplitude_ratio, *phase_phi_rad),
        InitialConfig::ZeroMode => zero_mode_oriented(spec.mass(), spec.v_g(), grid, spec.orientation()),
        InitialConfig::File { path } => {
            let f = SpinorField::read_csv(BufReader::new(fs::File::open(path)?))?;
            let g = f.grid();
            let tol = 1e-9 * grid.len();
            if g.n_points() != grid.n_points()
                || (g.z_min() - grid.z_min()).abs() > tol
                || (g.z_max() - grid.z_max()).abs() > tol
            {
                return Err(Error::GridMismatch);
            }
            SpinorField::from_components(grid, f.plus, f.minus)
        }
    }
}

fn write_sweep(out: &mut Outputs, name: &str, series: &SweepSeries) -> Result<()> {
    out.write(name, |b| series.write_csv(b))
}

fn run_evolve(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let c = config.evolve.as_ref().ok_or_else(|| missing_block("evolve"))?;
    let initial = build_initial(config, spec)?;
    let every = if c.snapshot_every == 0 {
        spec.steps_for(c.t_final_us).max(1)
    } else {
        c.snapshot_every
    };
    let traj = evolve(&initial, spec, c.t_final_us, every)?;
    out.write("norms.csv", |b| {
        writeln!(b, "step,t_us,i_plus,i_minus,norm_total")?;
        for ((s, t), f) in traj.steps.iter().zip(&traj.times).zip(&traj.fields) {
            let (p, m) = crate::analysis::component_intensities(f);
            writeln!(b, "{s},{t},{p},{m},{}", field_norm(f).powi(2))?;
        }
        Ok(())
    })?;
    if c.snapshot_every > 0 {
        for (s, f) in traj.steps.iter().zip(&traj.fields) {
            out.write(&format!("field_{s:08}.csv"), |b| f.write_csv(b))?;
        }
    }
    out.write("final.csv", |b| traj.fields.last().unwrap().write_csv(b))?;
    resolved.insert("total_steps".into(), (traj.total_steps as i64).into());
    resolved.insert("t_final_us".into(), traj.t_final.into());
    Ok(())
}

fn missing_block(name: &'static str) -> Error {
    crate::config::ConfigError::MissingKey { key: name.into() }.into()
}

fn run_sweep(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let c = config.sweep.as_ref().ok_or_else(|| missing_block("sweep"))?;
    let taus = c.taus.values();
    let calibration = config.calibration()?;
    let specs: Vec<EvolutionSpec> = if c.deltas_mhz.is_empty() {
        vec![*spec]
    } else {
        c.deltas_mhz
            .iter()
            .map(|&d| (*spec).with_mass(MassProfile::from_detuning_mhz(MassProfile::constant(d), calibration)))
            .collect()
    };
    let series: Vec<SweepSeries> = specs
        .par_iter()
        .map(|s| storage_sweep(&build_initial(config, s)?, s, &taus))
        .collect::<Result<_>>()?;

    let mut per_series = Vec::new();
    for (i, s) in series.iter().enumerate() {
        write_sweep(out, &format!("sweep_{i}.csv"), s)?;
        let mut t = Table::new();
        t.insert("mass".into(), mass_table(s.spec.mass()).into());
        t.insert("taus_us".into(), floats(&s.taus));
        t.insert(
            "steps".into(),
            Value::Array(s.steps.iter().map(|&n| (n as i64).into()).collect()),
        );
        if c.fit_oscillation {
            for (component, tag) in [(Component::Plus, "plus"), (Component::Minus, "minus")] {
                let fit = oscillation_fit(s, component)?;
                out.write(&format!("oscillation_{tag}_{i}.txt"), |b| write!(b, "{fit}"))?;
            }
        }
        per_series.push(Value::Table(t));
    }
    resolved.insert("series".into(), Value::Array(per_series));
    Ok(())
}

fn run_dispersion(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let default = crate::config::DispersionConfig {
        modes: vec![0, 1, 2],
        steps: crate::config::DEFAULT_DISPERSION_STEPS,
    };
    let c = config.dispersion.as_ref().unwrap_or(&default);
    let MassProfile::Constant { omega } = *spec.mass() else {
        return Err(invalid("mass", "dispersion-check needs a constant mass"));
    };
    if spec.boundary() != Boundary::Periodic {
        return Err(invalid("boundary", "dispersion-check needs periodic boundaries"));
    }
    if spec.loss().gamma_plus != 0.0 || spec.loss().gamma_minus != 0.0 {
        return Err(invalid("loss", "dispersion-check needs zero loss"));
    }
    let grid = *spec.grid();
    let prop = Propagator::new(spec);
    let mut rows = Vec::new();
    for &m in &c.modes {
        if m != 0 && (grid.n_points() as f64) < MIN_CELLS_PER_WAVELENGTH * m.unsigned_abs() as f64 {
            return Err(invalid(
                "modes",
                format!("mode {m} has fewer than {MIN_CELLS_PER_WAVELENGTH} cells per wavelength"),
            ));
        }
        let k = periodic_wavenumber(&grid, m);
        let mode = plane_wave_mode(k, spec.v_g(), omega, spec.orientation(), Branch::Positive);
        let measured = measure_phase_frequency(&prop, &mode.field(grid)?, c.steps)?;
        let expected = dirac_dispersion(k, spec.v_g(), omega);
        rows.push((m, k, measured, expected, ((measured - expected) / expected).abs()));
    }
    out.write("dispersion.csv", |b| {
        writeln!(
            b,
            "mode,k_per_cm,omega_measured_rad_per_us,omega_expected_rad_per_us,relative_error"
        )?;
        for (m, k, w, e, r) in &rows {
            writeln!(b, "{m},{k},{w},{e},{r}")?;
        }
        Ok(())
    })?;
    resolved.insert("steps".into(), (c.steps as i64).into());
    Ok(())
}

fn run_zero_mode(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let t_final = config
        .zero_mode
        .as_ref()
        .map_or(crate::config::DEFAULT_ZERO_MODE_TIME_US, |c| c.t_final_us);
    let profile = zero_mode_oriented(spec.mass(), spec.v_g(), *spec.grid(), spec.orientation())?;
    let traj = evolve(&profile, spec, t_final, spec.steps_for(t_final).max(1))?;
    let last = traj.fields.last().unwrap();
    let deviation = relative_l2_deviation(last, &profile)?;
    out.write("zero_mode.csv", |b| profile.write_csv(b))?;
    out.write("zero_mode_evolved.csv", |b| last.write_csv(b))?;
    out.write("zero_mode_report.txt", |b| {
        writeln!(b, "t_final_us: {}", traj.t_final)?;
        writeln!(b, "steps: {}", traj.total_steps)?;
        writeln!(b, "relative_l2_deviation: {deviation}")?;
        writeln!(b, "final_norm: {}", field_norm(last))
    })?;
    resolved.insert("total_steps".into(), (traj.total_steps as i64).into());
    resolved.insert("t_final_us".into(), traj.t_final.into());
    Ok(())
}

fn run_overlap(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs) -> Result<()> {
    let default = crate::config::OverlapConfig {
        phase_points: crate::config::DEFAULT_PHASE_POINTS,
        envelopes: OverlapEnvelopes::ZeroMode,
    };
    let c = config.overlap.as_ref().unwrap_or(&default);
    let grid = *spec.grid();
    let zero_mode = zero_mode_oriented(spec.mass(), spec.v_g(), grid, spec.orientation())?;
    let (ep, em) = match c.envelopes {
        OverlapEnvelopes::ZeroMode => {
            let env = zero_mode_envelope(spec.mass(), spec.v_g(), &grid)?;
            (env.clone(), env)
        }
        OverlapEnvelopes::Initial => config.envelopes().envelopes(&grid)?,
    };
    let curve = overlap_vs_phase(&ep, &em, &zero_mode, &phase_grid(c.phase_points))?;
    out.write("overlap.csv", |b| write_overlap_csv(&curve, b))
}

fn run_suppress(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let c = config.suppress.as_ref().ok_or_else(|| missing_block("suppress"))?;
    let MassConfig::Linear {
        slope_mhz_per_cm,
        offset_mhz,
        z_ref_cm,
    } = config.mass
    else {
        return Err(invalid("mass", "suppress needs a linear mass profile"));
    };
    let calibration = config.calibration()?;
    let taus = c.taus.values();
    let initial = build_initial(config, spec)?;
    let series: Vec<(String, SweepSeries)> = c
        .slope_factors
        .par_iter()
        .map(|&f| {
            let mass = MassProfile::from_detuning_mhz(
                MassProfile::linear(f * slope_mhz_per_cm, offset_mhz, z_ref_cm),
                calibration,
            );
            Ok((f.to_string(), storage_sweep(&initial, &(*spec).with_mass(mass), &taus)?))
        })
        .collect::<Result<_>>()?;
    let contrasts = suppression_metric(&series)?;
    for (i, (_, s)) in series.iter().enumerate() {
        write_sweep(out, &format!("sweep_{i}.csv"), s)?;
    }
    out.write("suppress.csv", |b| {
        writeln!(b, "slope_factor,contrast")?;
        for (f, (_, contrast)) in c.slope_factors.iter().zip(&contrasts) {
            writeln!(b, "{f},{contrast}")?;
        }
        Ok(())
    })?;
    resolved.insert("taus_us".into(), floats(&series[0].1.taus));
    Ok(())
}

fn run_fit(config: &RunConfig, spec: &EvolutionSpec, out: &mut Outputs, resolved: &mut Table) -> Result<()> {
    let c = config.fit.as_ref().ok_or_else(|| missing_block("fit"))?;
    let data = ExperimentSeries::read_csv(BufReader::new(fs::File::open(&c.data_path)?))?;
    let mut template = FitTemplate::new(*spec, config.envelopes());
    template.free_losses = c.free_losses;
    template.free_scale = c.free_scale;
    template.components = c.components;
    template.ratio_range = (c.ratio_min, c.ratio_max);
    let result = fit_phase_amplitude(&data, &template)?;
    let (p, m) = simulate_observables(&template, &result.best, &data.taus)?;
    let predicted = ExperimentSeries {
        taus: data.taus.clone(),
        i_plus: p.iter().map(|v| v * result.scale).collect(),
        i_minus: m.iter().map(|v| v * result.scale).collect(),
        weights: None,
    };
    out.write("fit_report.txt", |b| write!(b, "{result}"))?;
    out.write("fit_profile.csv", |b| result.write_profile_csv(b))?;
    out.write("fit_prediction.csv", |b| predicted.write_csv(b))?;
    resolved.insert("data_points".into(), (data.len() as i64).into());
    Ok(())
}

/// Worker count from the flag, then the environment, then 1.
pub fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return if n == 0 {
            Err(invalid("workers", "must be ≥ 1"))
        } else {
            Ok(n)
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(invalid(
                "workers",
                format!("{WORKERS_ENV}={v} is not a positive integer"),
            )),
        },
        Err(_) => Ok(1),
    }
}
