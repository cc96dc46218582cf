//! Recovery of the initial relative phase Φ and amplitude ratio (and
//! optionally the two decay rates) from a measured storage-time series.
//!
//! The forward model is linear in the initial state, so for fixed losses
//! the two unit initial states (ĝ⁺, 0) and (0, ĝ⁻) are evolved once and
//! every (Φ, r) prediction is assembled from their intensities and cross
//! overlaps.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{snap_taus, storage_sweep};
use crate::error::{invalid, Error, Result};
use crate::model::LossModel;
use crate::simplex::{self, SimplexOptions};
use crate::solver::{init_gaussian_spinor, EvolutionSpec, GaussianPair, Propagator, SpinorField};

pub const PHASE_GRID_POINTS: usize = 64;
pub const RATIO_GRID_POINTS: usize = 16;
pub const PROFILE_HEADER: &str = "phi_rad,rms_residual";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSeries {
    pub taus: Vec<f64>,
    pub i_plus: Vec<f64>,
    pub i_minus: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl ExperimentSeries {
    pub fn new(taus: Vec<f64>, i_plus: Vec<f64>, i_minus: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = taus.len();
        if i_plus.len() != n || i_minus.len() != n || weights.as_ref().is_some_and(|w| w.len() != n) {
            return Err(invalid("data", "columns have different lengths"));
        }
        if n == 0 {
            return Err(Error::InsufficientData("empty series".into()));
        }
        let all = taus
            .iter()
            .chain(&i_plus)
            .chain(&i_minus)
            .chain(weights.iter().flatten());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("experiment series contains NaN or inf".into()));
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) || taus[0] < 0.0 {
            return Err(invalid("tau_us", "storage times must be ≥ 0 and strictly increasing"));
        }
        if i_plus.iter().chain(&i_minus).any(|&v| v < 0.0) {
            return Err(invalid("intensity", "intensities must be ≥ 0"));
        }
        if weights.iter().flatten().any(|&w| !(w > 0.0)) {
            return Err(invalid("weight", "weights must be > 0"));
        }
        Ok(Self {
            taus,
            i_plus,
            i_minus,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Parses `tau_us,i_plus,i_minus[,weight]`.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| invalid("data", e.to_string()))?
            .unwrap_or_default();
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let weighted = match cols.as_slice() {
            ["tau_us", "i_plus", "i_minus"] => false,
            ["tau_us", "i_plus", "i_minus", "weight"] => true,
            _ => {
                return Err(invalid(
                    "data",
                    format!(
                        "expected header `tau_us,i_plus,i_minus[,weight]`, got `{}`",
                        header.trim()
                    ),
                ))
            }
        };
        let width = if weighted { 4 } else { 3 };
        let (mut taus, mut ip, mut im, mut w) = (vec![], vec![], vec![], vec![]);
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| invalid("data", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid("data", format!("row {}: {e}", row + 2)))?;
            if vals.len() != width {
                return Err(invalid("data", format!("row {}: expected {width} columns", row + 2)));
            }
            taus.push(vals[0]);
            ip.push(vals[1]);
            im.push(vals[2]);
            if weighted {
                w.push(vals[3]);
            }
        }
        Self::new(taus, ip, im, weighted.then_some(w))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        match &self.weights {
            None => writeln!(out, "tau_us,i_plus,i_minus")?,
            Some(_) => writeln!(out, "tau_us,i_plus,i_minus,weight")?,
        }
        for i in 0..self.len() {
            write!(out, "{},{},{}", self.taus[i], self.i_plus[i], self.i_minus[i])?;
            if let Some(w) = &self.weights {
                write!(out, ",{}", w[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Which intensity curves enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitComponents {
    #[default]
    Joint,
    PlusOnly,
    MinusOnly,
}

/// Everything held fixed during a fit, plus which extras are free.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTemplate {
    /// Group velocity, mass profile, grid and the starting losses.
    pub spec: EvolutionSpec,
    pub envelopes: GaussianPair,
    pub free_losses: bool,
    /// Fit an overall multiplicative scale on the predictions.
    pub free_scale: bool,
    pub components: FitComponents,
    /// Range of the log-spaced amplitude-ratio grid.
    pub ratio_range: (f64, f64),
    pub simplex: SimplexOptions,
}

impl FitTemplate {
    pub fn new(spec: EvolutionSpec, envelopes: GaussianPair) -> Self {
        Self {
            spec,
            envelopes,
            free_losses: false,
            free_scale: false,
            components: FitComponents::Joint,
            ratio_range: (0.1, 10.0),
            simplex: SimplexOptions {
                x_tol: 1e-10,
                f_tol: 0.0,
                max_evals: 2000,
            },
        }
    }

    fn free_count(&self) -> usize {
        2 + if self.free_losses { 2 } else { 0 } + usize::from(self.free_scale)
    }
}

/// Maps Φ onto [0, π]. The propagator is real, so Ψ₀ and its complex
/// conjugate give identical intensities and Φ is only defined up to sign.
pub fn fold_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        TAU - w
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    /// Relative phase of Ψ⁻, folded into [0, π].
    pub phi: f64,
    pub amplitude_ratio: f64,
    pub loss: LossModel,
}

impl FitParams {
    pub fn new(phi: f64, amplitude_ratio: f64, loss: LossModel) -> Self {
        Self {
            phi: fold_phase(phi),
            amplitude_ratio,
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best: FitParams,
    pub scale: f64,
    pub rms_residual: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// RMS residual minimized over r at each coarse phase.
    pub phase_profile: Vec<(f64, f64)>,
}

impl FitResult {
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{PROFILE_HEADER}")?;
        for (phi, r) in &self.phase_profile {
            writeln!(out, "{phi},{r}")?;
        }
        Ok(())
    }
}

impl fmt::Display for FitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phi_rad: {}", self.best.phi)?;
        writeln!(f, "amplitude_ratio: {}", self.best.amplitude_ratio)?;
        writeln!(f, "gamma_plus_per_us: {}", self.best.loss.gamma_plus)?;
        writeln!(f, "gamma_minus_per_us: {}", self.best.loss.gamma_minus)?;
        writeln!(f, "scale: {}", self.scale)?;
        writeln!(f, "rms_residual: {}", self.rms_residual)?;
        writeln!(f, "evaluations: {}", self.evaluations)?;
        writeln!(f, "converged: {}", self.converged)
    }
}

/// Direct forward simulation: builds the initial spinor from (r, Φ) and runs
/// a storage sweep.
pub fn simulate_observables(template: &FitTemplate, params: &FitParams, taus: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = template.spec.with_loss(params.loss)?;
    let initial = init_gaussian_spinor(*spec.grid(), &template.envelopes, params.amplitude_ratio, params.phi)?;
    let series = storage_sweep(&initial, &spec, taus).map_err(|e| {
        invalid(
            "simulation",
            format!("Φ = {}, r = {}: {e}", params.phi, params.amplitude_ratio),
        )
    })?;
    Ok((series.i_plus, series.i_minus))
}

/// Per-τ overlaps of the two unit initial states after evolution.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    aa: Vec<[f64; 2]>,
    bb: Vec<[f64; 2]>,
    ab: Vec<[Complex64; 2]>,
}

impl ForwardModel {
    pub fn new(template: &FitTemplate, loss: LossModel, taus: &[f64]) -> Result<Self> {
        let spec = template.spec.with_loss(loss)?;
        let grid = *spec.grid();
        let (gp, gm) = template.envelopes.envelopes(&grid)?;
        let zeros = vec![0.0; grid.n_points()];
        let a0 = SpinorField::from_envelopes(grid, &gp, &zeros, 0.0)?;
        let b0 = SpinorField::from_envelopes(grid, &zeros, &gm, 0.0)?;
        let steps = snap_taus(&spec, taus)?;
        let prop = Propagator::new(&spec);
        let a = prop.snapshots_at(&a0, &steps)?;
        let b = prop.snapshots_at(&b0, &steps)?;
        let dz = grid.dz();
        let dot = |x: &[Complex64], y: &[Complex64]| -> Complex64 {
            x.iter().zip(y).map(|(u, v)| u.conj() * v).sum::<Complex64>() * dz
        };
        let sq = |x: &[Complex64]| -> f64 { dz * x.iter().map(|v| v.norm_sqr()).sum::<f64>() };
        Ok(Self {
            aa: a.iter().map(|f| [sq(&f.plus), sq(&f.minus)]).collect(),
            bb: b.iter().map(|f| [sq(&f.plus), sq(&f.minus)]).collect(),
            ab: a
                .iter()
                .zip(&b)
                .map(|(fa, fb)| [dot(&fa.plus, &fb.plus), dot(&fa.minus, &fb.minus)])
                .collect(),
        })
    }

    /// Intensities for Ψ₀ ∝ (ĝ⁺, r·e^{iΦ}·ĝ⁻).
    pub fn predict(&self, amplitude_ratio: f64, phi: f64) -> (Vec<f64>, Vec<f64>) {
        let r = amplitude_ratio;
        let norm = 1.0 / (1.0 + r * r);
        let rot = Complex64::from_polar(1.0, phi);
        let component = |k: usize| -> Vec<f64> {
            (0..self.aa.len())
                .map(|i| norm * (self.aa[i][k] + r * r * self.bb[i][k] + 2.0 * r * (rot * self.ab[i][k]).re))
                .collect()
        };
        (component(0), component(1))
    }
}

struct Objective<'a> {
    data: &'a ExperimentSeries,
    components: FitComponents,
    free_scale: bool,
}

impl Objective<'_> {
    /// (weighted SSE, fitted scale)
    fn evaluate(&self, pred: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
        let d = self.data;
        let (use_plus, use_minus) = match self.components {
            FitComponents::Joint => (true, true),
            FitComponents::PlusOnly => (true, false),
            FitComponents::MinusOnly => (false, true),
        };
        let pairs = || {
            (0..d.len()).flat_map(move |i| {
                let w = d.weight(i);
                let p = use_plus.then(|| (w, pred.0[i], d.i_plus[i]));
                let m = use_minus.then(|| (w, pred.1[i], d.i_minus[i]));
                p.into_iter().chain(m)
            })
        };
        let scale = if self.free_scale {
            let num: f64 = pairs().map(|(w, p, y)| w * p * y).sum();
            let den: f64 = pairs().map(|(w, p, _)| w * p * p).sum();
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        } else {
            1.0
        };
        let sse = pairs().map(|(w, p, y)| w * (scale * p - y).powi(2)).sum();
        (sse, scale)
    }

    fn weight_total(&self) -> f64 {
        let per_point = match self.components {
            FitComponents::Joint => 2.0,
            _ => 1.0,
        };
        per_point * (0..self.data.len()).map(|i| self.data.weight(i)).sum::<f64>()
    }
}

/// Coarse (Φ, r) grid scan followed by simplex refinement.
pub fn fit_phase_amplitude(data: &ExperimentSeries, template: &FitTemplate) -> Result<FitResult> {
    let free = template.free_count();
    if data.len() < 2 * free {
        return Err(Error::InsufficientData(format!(
            "{} data points for {free} free parameters; need at least {}",
            data.len(),
            2 * free
        )));
    }
    let (r_lo, r_hi) = template.ratio_range;
    if !(r_lo > 0.0 && r_hi > r_lo) {
        return Err(invalid("ratio_range", "need 0 < r_min < r_max"));
    }
    let base_loss = *template.spec.loss();
    let model = ForwardModel::new(template, base_loss, &data.taus)?;
    let objective = Objective {
        data,
        components: template.components,
        free_scale: template.free_scale,
    };
    let wsum = objective.weight_total();
    let to_rms = |sse: f64| (sse / wsum).sqrt();

    let phases: Vec<f64> = (0..PHASE_GRID_POINTS)
        .map(|i| TAU * i as f64 / PHASE_GRID_POINTS as f64)
        .collect();
    let ratio_step = (r_hi / r_lo).ln() / (RATIO_GRID_POINTS - 1) as f64;
    let ratios: Vec<f64> = (0..RATIO_GRID_POINTS)
        .map(|j| r_lo * (ratio_step * j as f64).exp())
        .collect();

    let cells: Vec<(usize, usize)> = (0..phases.len())
        .flat_map(|i| (0..ratios.len()).map(move |j| (i, j)))
        .collect();
    let grid_sse: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| objective.evaluate(&model.predict(ratios[j], phases[i])).0)
        .collect();
    let mut evaluations = grid_sse.len();

    // profile: refine ln r at each coarse phase, starting from its best grid ratio
    let profiled: Vec<(f64, f64, usize)> = phases
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let row = &grid_sse[i * ratios.len()..(i + 1) * ratios.len()];
            let j = (0..row.len())
                .min_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)))
                .unwrap();
            let res = simplex::minimize(
                |x| objective.evaluate(&model.predict(x[0].exp(), phi)).0,
                &[ratios[j].ln()],
                &[ratio_step],
                SimplexOptions {
                    x_tol: 1e-10,
                    f_tol: 0.0,
                    max_evals: 200,
                },
            );
            (res.x[0].exp(), res.f.min(row[j]), res.evals)
        })
        .collect();
    evaluations += profiled.iter().map(|p| p.2).sum::<usize>();
    let phase_profile = phases
        .iter()
        .zip(&profiled)
        .map(|(&phi, p)| (phi, to_rms(p.1)))
        .collect();
    let pi = (0..phases.len())
        .min_by(|&a, &b| profiled[a].1.total_cmp(&profiled[b].1).then(a.cmp(&b)))
        .unwrap();
    let r0 = profiled[pi].0;

    let mut x0 = vec![phases[pi], r0];
    let mut step = vec![TAU / PHASE_GRID_POINTS as f64, r0 * (ratio_step.exp() - 1.0)];
    if template.free_losses {
        x0.extend([base_loss.gamma_plus, base_loss.gamma_minus]);
        step.extend([
            0.1 * base_loss.gamma_plus.max(0.1),
            0.1 * base_loss.gamma_minus.max(0.1),
        ]);
    }

    let mut failure: Option<Error> = None;
    let refined = simplex::minimize(
        |x| {
            let pred = if template.free_losses {
                let loss = LossModel {
                    gamma_plus: x[2].abs(),
                    gamma_minus: x[3].abs(),
                };
                match ForwardModel::new(template, loss, &data.taus) {
                    Ok(m) => m.predict(x[1].abs(), x[0]),
                    Err(e) => {
                        failure.get_or_insert(e);
                        return f64::INFINITY;
                    }
                }
            } else {
                model.predict(x[1].abs(), x[0])
            };
            objective.evaluate(&pred).0
        },
        &x0,
        &step,
        template.simplex,
    );
    if let Some(e) = failure {
        if !refined.f.is_finite() {
            return Err(e);
        }
    }
    evaluations += refined.evals;

    let x = &refined.x;
    let loss = if template.free_losses {
        LossModel::new(x[2].abs(), x[3].abs())?
    } else {
        base_loss
    };
    let best = FitParams::new(x[0], x[1].abs(), loss);
    let final_model = if template.free_losses {
        ForwardModel::new(template, loss, &data.taus)?
    } else {
        model
    };
    let (sse, scale) = objective.evaluate(&final_model.predict(best.amplitude_ratio, best.phi));
    Ok(FitResult {
        best,
        scale,
        rms_residual: to_rms(sse),
        evaluations,
        converged: refined.converged,
        phase_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MassProfile, DEFAULT_KAPPA};
    use crate::oracle::linear_zero_mode_width;
    use crate::solver::{Boundary, Grid};
    use approx::assert_relative_eq;

    fn taus() -> Vec<f64> {
        (0..=40).map(|i| i as f64 * 0.05).collect()
    }

    fn jr_template() -> FitTemplate {
        let grid = Grid::new(0.0, 5.0, 512).unwrap();
        let mass = MassProfile::paper_linear(DEFAULT_KAPPA);
        let spec = EvolutionSpec::new(grid, 1.0, mass, LossModel::new(0.25, 0.35).unwrap(), Boundary::Outflow).unwrap();
        let MassProfile::Linear { slope, .. } = mass else {
            unreachable!()
        };
        let width = linear_zero_mode_width(slope, 1.0).unwrap();
        let center = mass.zero_crossing().unwrap();
        FitTemplate::new(
            spec,
            GaussianPair {
                center_plus: center - 0.1,
                center_minus: center + 0.1,
                width_plus: width * 1.2,
                width_minus: width,
            },
        )
    }

    fn synthetic(template: &FitTemplate, phi: f64, r: f64) -> ExperimentSeries {
        let t = taus();
        let (p, m) = simulate_observables(template, &FitParams::new(phi, r, *template.spec.loss()), &t).unwrap();
        ExperimentSeries::new(t, p, m, None).unwrap()
    }

    #[test]
    fn linear_superposition_matches_direct_simulation() {
        let tpl = jr_template();
        let t = taus();
        let model = ForwardModel::new(&tpl, *tpl.spec.loss(), &t).unwrap();
        for &(phi, r) in &[(0.0, 1.0), (PI, 1.0), (1.3, 0.4), (4.0, 2.5)] {
            let direct = simulate_observables(&tpl, &FitParams::new(phi, r, *tpl.spec.loss()), &t).unwrap();
            let fast = model.predict(r, phi);
            for i in 0..t.len() {
                assert!((direct.0[i] - fast.0[i]).abs() < 1e-12);
                assert!((direct.1[i] - fast.1[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulate_at_zero_returns_initial_intensities() {
        let tpl = jr_template();
        let (p, m) = simulate_observables(&tpl, &FitParams::new(0.7, 0.5, *tpl.spec.loss()), &[0.0]).unwrap();
        assert_relative_eq!(p[0], 1.0 / 1.25, epsilon = 1e-12);
        assert_relative_eq!(m[0], 0.25 / 1.25, epsilon = 1e-12);
    }

    #[test]
    fn aligned_phase_suppresses_oscillation() {
        let tpl = jr_template();
        let t: Vec<f64> = (0..=60).map(|i| i as f64 * 0.05).collect();
        let swing = |phi: f64| {
            let (p, _) = simulate_observables(&tpl, &FitParams::new(phi, 1.0, LossModel::lossless()), &t).unwrap();
            let d: Vec<f64> = p.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            d.iter().sum::<f64>()
        };
        assert!(swing(PI) < 0.5 * swing(0.0), "{} vs {}", swing(PI), swing(0.0));
    }

    #[test]
    fn noiseless_round_trip() {
        let tpl = jr_template();
        let data = synthetic(&tpl, PI, 1.0);
        let fit = fit_phase_amplitude(&data, &tpl).unwrap();
        assert!((fit.best.phi - PI).abs() < 0.01, "{fit}");
        assert!((fit.best.amplitude_ratio - 1.0).abs() < 0.005);
        assert!(fit.rms_residual < 1e-10, "{}", fit.rms_residual);
        assert!(fit.converged);
        let argmin = fit.phase_profile.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert_relative_eq!(argmin, PI, epsilon = 1e-12);
    }

    #[test]
    fn off_grid_round_trip_and_periodicity() {
        let tpl = jr_template();
        let a = fit_phase_amplitude(&synthetic(&tpl, 2.2, 0.63), &tpl).unwrap();
        assert!(
            (a.best.phi - 2.2).abs() < 1e-6 && (a.best.amplitude_ratio - 0.63).abs() < 1e-6,
            "{a}"
        );
        let b = fit_phase_amplitude(&synthetic(&tpl, 2.2 + TAU, 0.63), &tpl).unwrap();
        assert!((a.best.phi - b.best.phi).abs() < 1e-9);
        assert!((0.0..=PI).contains(&b.best.phi));
        let c = fit_phase_amplitude(&synthetic(&tpl, TAU - 2.2, 0.63), &tpl).unwrap();
        assert!((c.best.phi - 2.2).abs() < 1e-6, "{c}");
    }

    #[test]
    fn generating_point_beats_every_grid_cell() {
        let tpl = jr_template();
        let data = synthetic(&tpl, 1.0, 1.7);
        let fit = fit_phase_amplitude(&data, &tpl).unwrap();
        let model = ForwardModel::new(&tpl, *tpl.spec.loss(), &data.taus).unwrap();
        let obj = Objective {
            data: &data,
            components: FitComponents::Joint,
            free_scale: false,
        };
        let at_truth = obj.evaluate(&model.predict(1.7, 1.0)).0;
        for &(_, rms) in &fit.phase_profile {
            assert!(at_truth <= rms * rms * 2.0 * data.len() as f64);
        }
    }

    #[test]
    fn weight_scaling_keeps_minimizer() {
        let tpl = jr_template();
        let base = synthetic(&tpl, 2.9, 1.2);
        let noisy: Vec<f64> = base
            .i_plus
            .iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + 0.03 * ((i * 7) as f64).sin()))
            .collect();
        let w: Vec<f64> = (0..base.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let d1 =
            ExperimentSeries::new(base.taus.clone(), noisy.clone(), base.i_minus.clone(), Some(w.clone())).unwrap();
        let d2 = ExperimentSeries::new(
            base.taus.clone(),
            noisy,
            base.i_minus.clone(),
            Some(w.iter().map(|v| v * 4.0).collect()),
        )
        .unwrap();
        let f1 = fit_phase_amplitude(&d1, &tpl).unwrap();
        let f2 = fit_phase_amplitude(&d2, &tpl).unwrap();
        assert_eq!(f1.best, f2.best);
        assert_relative_eq!(f1.rms_residual, f2.rms_residual, max_relative = 1e-12);
    }

    #[test]
    fn free_scale_and_losses() {
        let mut tpl = jr_template();
        let truth = LossModel::new(0.2, 0.4).unwrap();
        let t = taus();
        let (p, m) = simulate_observables(&tpl, &FitParams::new(PI, 0.9, truth), &t).unwrap();
        let scaled = ExperimentSeries::new(
            t,
            p.iter().map(|v| 3.0 * v).collect(),
            m.iter().map(|v| 3.0 * v).collect(),
            None,
        )
        .unwrap();
        tpl.free_scale = true;
        tpl.free_losses = true;
        let fit = fit_phase_amplitude(&scaled, &tpl).unwrap();
        assert_relative_eq!(fit.scale, 3.0, max_relative = 1e-4);
        assert!((fit.best.loss.gamma_plus - 0.2).abs() < 1e-4, "{fit}");
        assert!((fit.best.loss.gamma_minus - 0.4).abs() < 1e-4, "{fit}");
    }

    #[test]
    fn result_independent_of_worker_count() {
        let tpl = jr_template();
        let data = synthetic(&tpl, 1.9, 0.8);
        let in_pool = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| fit_phase_amplitude(&data, &tpl).unwrap())
        };
        assert_eq!(in_pool(1), in_pool(4));
    }

    #[test]
    fn bad_data_rejected() {
        let t = vec![0.0, 0.1, 0.2];
        assert!(matches!(
            ExperimentSeries::new(t.clone(), vec![0.1, f64::NAN, 0.1], vec![0.1; 3], None),
            Err(Error::NonFiniteData(_))
        ));
        assert!(ExperimentSeries::new(vec![0.0, 0.2, 0.1], vec![0.1; 3], vec![0.1; 3], None).is_err());
        assert!(ExperimentSeries::new(t.clone(), vec![0.1; 3], vec![0.1; 2], None).is_err());
        assert!(ExperimentSeries::new(t.clone(), vec![0.1; 3], vec![0.1; 3], Some(vec![1.0, 0.0, 1.0])).is_err());
        let short = ExperimentSeries::new(t, vec![0.1; 3], vec![0.1; 3], None).unwrap();
        assert!(matches!(
            fit_phase_amplitude(&short, &jr_template()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn data_csv_round_trip() {
        let d = ExperimentSeries::new(vec![0.0, 0.5], vec![0.25, 0.125], vec![0.5, 0.1], Some(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(ExperimentSeries::read_csv(io::Cursor::new(buf)).unwrap(), d);
        assert!(ExperimentSeries::read_csv(io::Cursor::new("t,a,b\n0,1,1\n")).is_err());
    }
}
