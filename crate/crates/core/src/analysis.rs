//! Observables: integrated component intensities against storage time,
//! damped-oscillation parameters and the zero-mode overlap functional.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::simplex::{self, SimplexOptions};
use crate::solver::{inner_product, EvolutionSpec, Propagator, SpinorField};

pub const SWEEP_HEADER: &str = "tau_us,i_plus,i_minus,norm_total";
pub const OVERLAP_HEADER: &str = "phi_rad,overlap";

/// Number of log-spaced trial frequencies in the oscillation-fit scan.
pub const FREQUENCY_SCAN_POINTS: usize = 32;
/// Scan minima refined by the simplex stage.
const REFINED_STARTS: usize = 4;
pub const MIN_FIT_SAMPLES: usize = 8;

/// (∫|Ψ⁺|² dz, ∫|Ψ⁻|² dz)
pub fn component_intensities(field: &SpinorField) -> (f64, f64) {
    let dz = field.grid().dz();
    let p: f64 = field.plus.iter().map(|v| v.norm_sqr()).sum();
    let m: f64 = field.minus.iter().map(|v| v.norm_sqr()).sum();
    (dz * p, dz * m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSeries {
    /// Storage times actually simulated (step count × dt).
    pub taus: Vec<f64>,
    pub requested_taus: Vec<f64>,
    pub steps: Vec<usize>,
    pub i_plus: Vec<f64>,
    pub i_minus: Vec<f64>,
    pub spec: EvolutionSpec,
}

impl SweepSeries {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn component(&self, component: Component) -> &[f64] {
        match component {
            Component::Plus => &self.i_plus,
            Component::Minus => &self.i_minus,
        }
    }

    pub fn norm_total(&self) -> impl Iterator<Item = f64> + '_ {
        self.i_plus.iter().zip(&self.i_minus).map(|(p, m)| p + m)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SWEEP_HEADER}")?;
        for (i, total) in self.norm_total().enumerate() {
            writeln!(out, "{},{},{},{}", self.taus[i], self.i_plus[i], self.i_minus[i], total)?;
        }
        Ok(())
    }
}

/// Maps storage times onto the dt lattice. Times must be finite, ≥ 0 and
/// strictly increasing, and must stay distinct after snapping.
pub fn snap_taus(spec: &EvolutionSpec, taus: &[f64]) -> Result<Vec<usize>> {
    if taus.is_empty() {
        return Err(invalid("taus", "need at least one storage time"));
    }
    for (i, &t) in taus.iter().enumerate() {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid("taus", format!("storage time {t} is not a finite value ≥ 0")));
        }
        if i > 0 && !(t > taus[i - 1]) {
            return Err(invalid("taus", "storage times must be strictly increasing"));
        }
    }
    let steps: Vec<usize> = taus.iter().map(|&t| spec.steps_for(t)).collect();
    for i in 1..steps.len() {
        if steps[i] == steps[i - 1] {
            return Err(Error::TauCollision {
                requested: (taus[i - 1], taus[i]),
                step: steps[i],
            });
        }
    }
    Ok(steps)
}

/// Evolves once from `initial`, recording the component intensities at
/// every storage time.
pub fn storage_sweep(initial: &SpinorField, spec: &EvolutionSpec, taus: &[f64]) -> Result<SweepSeries> {
    if initial.grid() != spec.grid() {
        return Err(Error::GridMismatch);
    }
    let steps = snap_taus(spec, taus)?;
    let snaps = Propagator::new(spec).snapshots_at(initial, &steps)?;
    let (i_plus, i_minus) = snaps.iter().map(component_intensities).unzip();
    Ok(SweepSeries {
        taus: steps.iter().map(|&s| spec.time_of(s)).collect(),
        requested_taus: taus.to_vec(),
        steps,
        i_plus,
        i_minus,
        spec: *spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Plus,
    Minus,
}

/// Parameters of I(τ) = A·e^{−2·decay·τ}·(1 + C·cos(ωτ + φ₀))/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationParams {
    pub amplitude: f64,
    pub omega: f64,
    pub contrast: f64,
    pub decay: f64,
    pub phase0: f64,
    /// RMS of the fit residual.
    pub residual: f64,
    /// Set when the series carries no oscillation and ω is meaningless.
    pub omega_unspecified: bool,
}

impl OscillationParams {
    pub fn model(&self, tau: f64) -> f64 {
        damped_cosine(self.amplitude, self.omega, self.contrast, self.decay, self.phase0, tau)
    }
}

impl fmt::Display for OscillationParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "omega_rad_per_us: {}", self.omega)?;
        writeln!(f, "contrast: {}", self.contrast)?;
        writeln!(f, "decay_per_us: {}", self.decay)?;
        writeln!(f, "phase0_rad: {}", self.phase0)?;
        writeln!(f, "rms_residual: {}", self.residual)?;
        writeln!(f, "amplitude: {}", self.amplitude)?;
        writeln!(f, "omega_unspecified: {}", self.omega_unspecified)
    }
}

pub fn damped_cosine(amplitude: f64, omega: f64, contrast: f64, decay: f64, phase0: f64, tau: f64) -> f64 {
    0.5 * amplitude * (-2.0 * decay * tau).exp() * (1.0 + contrast * (omega * tau + phase0).cos())
}

/// Linear coefficients of e^{−2dτ}(a + b cos ωτ + c sin ωτ) for fixed (ω, d).
struct Projection {
    coeffs: [f64; 3],
    sse: f64,
}

fn project(taus: &[f64], values: &[f64], omega: f64, decay: f64) -> Option<Projection> {
    let n = taus.len();
    let basis = DMatrix::from_fn(n, 3, |i, j| {
        let e = (-2.0 * decay * taus[i]).exp();
        match j {
            0 => e,
            1 => e * (omega * taus[i]).cos(),
            _ => e * (omega * taus[i]).sin(),
        }
    });
    let y = DVector::from_column_slice(values);
    let svd = basis.clone().svd(true, true);
    let coeffs = svd.solve(&y, 1e-13).ok()?;
    let resid = &basis * &coeffs - &y;
    let sse = resid.norm_squared();
    sse.is_finite().then(|| Projection {
        coeffs: [coeffs[0], coeffs[1], coeffs[2]],
        sse,
    })
}

fn params_from(taus: &[f64], values: &[f64], omega: f64, decay: f64, p: &Projection) -> OscillationParams {
    let [a, b, c] = p.coeffs;
    let raw_contrast = if a > 0.0 { b.hypot(c) / a } else { 0.0 };
    let contrast = raw_contrast.clamp(0.0, 1.0);
    let phase0 = (-c).atan2(b);
    let amplitude = 2.0 * a;
    let residual = if contrast == raw_contrast {
        (p.sse / taus.len() as f64).sqrt()
    } else {
        rms(taus, values, |t| {
            damped_cosine(amplitude, omega, contrast, decay, phase0, t)
        })
    };
    OscillationParams {
        amplitude,
        omega,
        contrast,
        decay,
        phase0,
        residual,
        omega_unspecified: false,
    }
}

fn rms(taus: &[f64], values: &[f64], model: impl Fn(f64) -> f64) -> f64 {
    let sse: f64 = taus.iter().zip(values).map(|(&t, &v)| (model(t) - v).powi(2)).sum();
    (sse / taus.len() as f64).sqrt()
}

/// Least-squares fit of the damped cosine model to one component.
///
/// The linear parameters (A, C, φ₀) are eliminated by projection. The
/// nonlinear pair (ω, decay) is started from a scan over
/// [`FREQUENCY_SCAN_POINTS`] log-spaced frequencies between the longest
/// resolvable period and the sampling Nyquist limit, then refined with the
/// simplex method from the best few scan points. Ties go to the lowest ω.
pub fn oscillation_fit(series: &SweepSeries, component: Component) -> Result<OscillationParams> {
    fit_damped_cosine(&series.taus, series.component(component))
}

pub fn fit_damped_cosine(taus: &[f64], values: &[f64]) -> Result<OscillationParams> {
    if taus.len() != values.len() {
        return Err(invalid("series", "tau and intensity lengths differ"));
    }
    if taus.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "oscillation fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            taus.len()
        )));
    }
    if values.iter().chain(taus).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData("oscillation series".into()));
    }
    if taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("taus", "must be strictly increasing"));
    }

    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi - lo <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        return Ok(OscillationParams {
            amplitude: 2.0 * mean,
            omega: 0.0,
            contrast: 0.0,
            decay: 0.0,
            phase0: 0.0,
            residual: rms(taus, values, |_| mean),
            omega_unspecified: true,
        });
    }

    let span = taus[taus.len() - 1] - taus[0];
    let mut gaps: Vec<f64> = taus.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let median_gap = gaps[gaps.len() / 2];
    let omega_lo = std::f64::consts::PI / span;
    let omega_hi = std::f64::consts::PI / median_gap;
    let decay0 = decay_estimate(taus, values);

    let objective =
        |omega: f64, decay: f64| -> f64 { project(taus, values, omega, decay).map_or(f64::INFINITY, |p| p.sse) };

    let ratio = (omega_hi / omega_lo).ln() / (FREQUENCY_SCAN_POINTS - 1) as f64;
    let scan: Vec<(f64, f64)> = (0..FREQUENCY_SCAN_POINTS)
        .map(|i| {
            let w = omega_lo * (ratio * i as f64).exp();
            (w, objective(w, decay0))
        })
        .collect();

    // local minima of the scan, best first
    let mut starts: Vec<usize> = (0..scan.len())
        .filter(|&i| {
            let left = i == 0 || scan[i].1 <= scan[i - 1].1;
            let right = i + 1 == scan.len() || scan[i].1 <= scan[i + 1].1;
            left && right
        })
        .collect();
    starts.sort_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1).then(a.cmp(&b)));
    starts.truncate(REFINED_STARTS);

    let opts = SimplexOptions {
        x_tol: 1e-12,
        f_tol: 0.0,
        max_evals: 4000,
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for &i in &starts {
        let w0 = scan[i].0;
        let step = [w0 * (ratio.exp() - 1.0) * 0.5, 0.1 * (decay0.abs() + 0.1)];
        let r = simplex::minimize(|x| objective(x[0].abs(), x[1]), &[w0, decay0], &step, opts);
        let cand = (r.x[0].abs(), r.x[1], r.f);
        best = match best {
            Some(b) if b.2 < cand.2 || (b.2 == cand.2 && b.0 <= cand.0) => Some(b),
            _ => Some(cand),
        };
    }
    let (omega, decay, _) = best.expect("scan has at least one local minimum");
    let p = project(taus, values, omega, decay)
        .ok_or_else(|| Error::NonFiniteData("projection failed at the optimum".into()))?;
    Ok(params_from(taus, values, omega, decay, &p))
}

/// Decay rate from a straight-line fit of ln I against τ (I = e^{−2dτ}).
fn decay_estimate(taus: &[f64], values: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = taus
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        -0.5 * sxy / sxx
    }
}

/// |⟨Ψ₀, ψ_zero⟩|, the magnitude of the discrete inner product.
pub fn zero_mode_overlap(initial: &SpinorField, zero_mode: &SpinorField) -> Result<f64> {
    Ok(inner_product(initial, zero_mode)?.norm())
}

/// Overlap with the zero mode of (envelope⁺, e^{iΦ}·envelope⁻), normalized,
/// for each phase Φ.
pub fn overlap_vs_phase(
    envelope_plus: &[f64],
    envelope_minus: &[f64],
    zero_mode: &SpinorField,
    phases: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if envelope_plus.iter().chain(envelope_minus).any(|&v| !(v >= 0.0)) {
        return Err(invalid("envelope", "envelopes must be real and non-negative"));
    }
    phases
        .iter()
        .map(|&phi| {
            let f = SpinorField::from_envelopes(*zero_mode.grid(), envelope_plus, envelope_minus, phi)?;
            Ok((phi, zero_mode_overlap(&f, zero_mode)?))
        })
        .collect()
}

/// `n` evenly spaced phases covering [0, 2π).
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| std::f64::consts::TAU * i as f64 / n as f64).collect()
}

pub fn write_overlap_csv<W: Write>(curve: &[(f64, f64)], mut out: W) -> io::Result<()> {
    writeln!(out, "{OVERLAP_HEADER}")?;
    for (phi, o) in curve {
        writeln!(out, "{phi},{o}")?;
    }
    Ok(())
}

/// Oscillation contrast of I⁺ for each labelled sweep, in input order.
pub fn suppression_metric<S: AsRef<str>>(series: &[(S, SweepSeries)]) -> Result<Vec<(String, f64)>> {
    series
        .iter()
        .map(|(label, s)| {
            Ok((
                label.as_ref().to_string(),
                oscillation_fit(s, Component::Plus)?.contrast,
            ))
        })
        .collect()
}
