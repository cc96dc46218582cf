//! Closed-form reference solutions for checking the solver.

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::model::{sigma_y, sigma_z, MassProfile};
use crate::solver::{Grid, Orientation, Propagator, SpinorField};

/// Envelope amplitude at either grid edge, relative to the peak, above
/// which a zero mode counts as not localized on the grid.
pub const ZERO_MODE_EDGE_TOLERANCE: f64 = 1e-6;

/// Intensities of a uniform field started in (1, 0):
/// I⁺ = e^{−2γt}cos²(ω_m t), I⁻ = e^{−2γt}sin²(ω_m t).
pub fn uniform_rotation_intensities(omega_m: f64, gamma: f64, t: f64) -> (f64, f64) {
    let decay = (-2.0 * gamma * t).exp();
    let (s, c) = (omega_m * t).sin_cos();
    (decay * c * c, decay * s * s)
}

/// Positive branch √((v_g k)² + ω_m²).
pub fn dirac_dispersion(k: f64, v_g: f64, omega_m: f64) -> f64 {
    (v_g * k).hypot(omega_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWaveMode {
    pub k: f64,
    pub branch: Branch,
    pub omega: f64,
    /// Normalized eigenspinor of the symbol matrix.
    pub spinor: [Complex64; 2],
}

/// Eigenmode e^{ikz}·χ of the constant-mass Hamiltonian. The symbol matrix
/// is s·v_g·k·σz + ω_m·σy, where s = +1 when Ψ⁺ travels toward +z.
pub fn plane_wave_mode(k: f64, v_g: f64, omega_m: f64, orientation: Orientation, branch: Branch) -> PlaneWaveMode {
    let s = orientation.plus_direction();
    let symbol: Matrix2<Complex64> =
        sigma_z() * Complex64::new(s * v_g * k, 0.0) + sigma_y() * Complex64::new(omega_m, 0.0);
    let eig = symbol.symmetric_eigen();
    let pick = match branch {
        Branch::Positive => {
            if eig.eigenvalues[0] >= eig.eigenvalues[1] {
                0
            } else {
                1
            }
        }
        Branch::Negative => {
            if eig.eigenvalues[0] < eig.eigenvalues[1] {
                0
            } else {
                1
            }
        }
    };
    let v = eig.eigenvectors.column(pick);
    PlaneWaveMode {
        k,
        branch,
        omega: eig.eigenvalues[pick],
        spinor: [v[0], v[1]],
    }
}

impl PlaneWaveMode {
    /// Samples the mode on `grid`, normalized to unit norm.
    pub fn field(&self, grid: Grid) -> Result<SpinorField> {
        let (plus, minus) = grid
            .positions()
            .map(|z| {
                let phase = Complex64::from_polar(1.0, self.k * z);
                (phase * self.spinor[0], phase * self.spinor[1])
            })
            .unzip();
        let mut f = SpinorField::from_components(grid, plus, minus)?;
        f.normalize()?;
        Ok(f)
    }
}

/// Wavenumber of the `m`-th periodic harmonic of `grid`.
pub fn periodic_wavenumber(grid: &Grid, m: i64) -> f64 {
    std::f64::consts::TAU * m as f64 / grid.len()
}

/// Phase frequency ω of a state evolving as e^{−iωt}·ψ₀, measured by
/// accumulating the step-to-step phase of ⟨ψₙ, ψₙ₊₁⟩ over `steps` steps.
pub fn measure_phase_frequency(propagator: &Propagator, initial: &SpinorField, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(invalid("steps", "need at least one step"));
    }
    let mut field = initial.clone();
    let mut accumulated = 0.0;
    for _ in 0..steps {
        let prev = field.clone();
        propagator.step(&mut field);
        accumulated += crate::solver::inner_product(&prev, &field)?.arg();
    }
    Ok(-accumulated / (steps as f64 * propagator.spec().dt()))
}

/// Unnormalized envelope φ(z) = exp(−(1/v_g)∫ω_m ds), integrated with the
/// cumulative trapezoid rule from the first cell and scaled to peak 1.
pub fn zero_mode_envelope(mass: &MassProfile, v_g: f64, grid: &Grid) -> Result<Vec<f64>> {
    if !(v_g > 0.0) {
        return Err(invalid("v_g", "group velocity must be > 0"));
    }
    let dz = grid.dz();
    let omega: Vec<f64> = grid.positions().map(|z| mass.sample(z)).collect();
    let mut exponent = Vec::with_capacity(omega.len());
    let mut acc = 0.0;
    exponent.push(0.0);
    for w in omega.windows(2) {
        acc -= 0.5 * (w[0] + w[1]) * dz / v_g;
        exponent.push(acc);
    }
    let peak = exponent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::NotNormalizable("exponent is not finite".into()));
    }
    let env: Vec<f64> = exponent.iter().map(|e| (e - peak).exp()).collect();
    let edge = env[0].max(env[env.len() - 1]);
    if edge > ZERO_MODE_EDGE_TOLERANCE {
        return Err(Error::NotNormalizable(format!(
            "envelope is {edge:.3e} of its peak at the grid edge; the mass needs a single sign change from negative to positive inside the domain"
        )));
    }
    Ok(env)
}

/// Normalized zero mode φ(z)·(1, −1)/√2.
///
/// This is the stationary state for the [`Orientation::Paper`] convention
/// and a mass that increases through zero. Under the intuitive orientation
/// the stationary spinor is (1, 1) instead, see [`zero_mode_oriented`].
pub fn zero_mode_profile(mass: &MassProfile, v_g: f64, grid: Grid) -> Result<SpinorField> {
    zero_mode_oriented(mass, v_g, grid, Orientation::Paper)
}

pub fn zero_mode_oriented(mass: &MassProfile, v_g: f64, grid: Grid, orientation: Orientation) -> Result<SpinorField> {
    let env = zero_mode_envelope(mass, v_g, &grid)?;
    let sign = match orientation {
        Orientation::Paper => -1.0,
        Orientation::Intuitive => 1.0,
    };
    let minus: Vec<f64> = env.iter().map(|v| sign * v).collect();
    SpinorField::from_envelopes(grid, &env, &minus, 0.0)
}

/// Standard deviation √(v_g/α) of the Gaussian zero mode of a linear kink
/// with slope α.
pub fn linear_zero_mode_width(slope: f64, v_g: f64) -> Option<f64> {
    (slope > 0.0 && v_g > 0.0).then(|| (v_g / slope).sqrt())
}
