//! Mapping from atomic and optical quantities to the coefficients of the
//! slow-light Dirac equation.
//!
//! Units: lengths in cm, times in µs, every frequency handled here is
//! angular (rad/µs) unless the name says `mhz`. Lab quantities quoted as
//! cyclic MHz are converted once, through [`angular_from_mhz`].

use std::f64::consts::TAU;

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Two-photon detuning per unit magnetic field, MHz/G.
pub const DETUNING_PER_GAUSS_MHZ: f64 = 1.09;

/// Fitted ratio between the effective mass frequency and the two-photon
/// detuning used for the Dirac and JR benchmarks.
pub const DEFAULT_KAPPA: f64 = 3.3;

/// Group velocity of the benchmark runs, cm/µs.
pub const PAPER_GROUP_VELOCITY: f64 = 1.0;

/// Linear detuning profile of the JR benchmark: slope (MHz/cm), offset (MHz)
/// and reference position (cm).
pub const PAPER_SLOPE_MHZ_PER_CM: f64 = 0.745;
pub const PAPER_OFFSET_MHZ: f64 = 0.35;
pub const PAPER_Z_REF_CM: f64 = 2.5;

/// Field gradient reported for full oscillation suppression, G/cm.
pub const PAPER_GRADIENT_G_PER_CM: f64 = 0.435;

pub type Matrix2c = Matrix2<Complex64>;

pub fn angular_from_mhz(f_mhz: f64) -> f64 {
    TAU * f_mhz
}

pub fn mhz_from_angular(omega: f64) -> f64 {
    omega / TAU
}

/// v_g = c / (1 + R).
pub fn group_velocity(coupling_ratio: f64, vacuum_speed: f64) -> Result<f64> {
    if !(coupling_ratio >= 0.0) || !coupling_ratio.is_finite() {
        return Err(invalid(
            "coupling_ratio",
            format!("must be finite and ≥ 0, got {coupling_ratio}"),
        ));
    }
    if !(vacuum_speed > 0.0) || !vacuum_speed.is_finite() {
        return Err(invalid(
            "vacuum_speed",
            format!("must be finite and > 0, got {vacuum_speed}"),
        ));
    }
    Ok(vacuum_speed / (1.0 + coupling_ratio))
}

/// Polariton mixing angle θ = arctan(√R), in [0, π/2).
pub fn mixing_angle(coupling_ratio: f64) -> Result<f64> {
    if !(coupling_ratio >= 0.0) || !coupling_ratio.is_finite() {
        return Err(invalid(
            "coupling_ratio",
            format!("must be finite and ≥ 0, got {coupling_ratio}"),
        ));
    }
    Ok(coupling_ratio.sqrt().atan())
}

/// Microscopic effective mass as a frequency: ω_m = (δ/2)·sin²θ.
pub fn effective_mass_frequency(detuning: f64, mixing_angle: f64) -> f64 {
    let s = mixing_angle.sin();
    0.5 * detuning * s * s
}

/// Two-photon detuning (cyclic MHz) produced by a magnetic field in gauss.
pub fn detuning_from_field(field_gauss: f64) -> f64 {
    DETUNING_PER_GAUSS_MHZ * field_gauss
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    coupling_ratio: f64,
    vacuum_speed: f64,
    detuning: f64,
    group_velocity: f64,
    mixing_angle: f64,
}

impl PhysicalParams {
    /// `detuning` is angular (rad/µs).
    pub fn new(coupling_ratio: f64, vacuum_speed: f64, detuning: f64) -> Result<Self> {
        let group_velocity = group_velocity(coupling_ratio, vacuum_speed)?;
        let mixing_angle = mixing_angle(coupling_ratio)?;
        if !detuning.is_finite() {
            return Err(invalid("detuning", "must be finite"));
        }
        Ok(Self {
            coupling_ratio,
            vacuum_speed,
            detuning,
            group_velocity,
            mixing_angle,
        })
    }

    /// Picks R so that the group velocity equals `v_g`.
    pub fn with_group_velocity(v_g: f64, vacuum_speed: f64, detuning: f64) -> Result<Self> {
        if !(v_g > 0.0 && v_g <= vacuum_speed) {
            return Err(invalid("group_velocity", format!("need 0 < v_g ≤ c, got {v_g}")));
        }
        Self::new(vacuum_speed / v_g - 1.0, vacuum_speed, detuning)
    }

    pub fn coupling_ratio(&self) -> f64 {
        self.coupling_ratio
    }
    pub fn vacuum_speed(&self) -> f64 {
        self.vacuum_speed
    }
    pub fn detuning(&self) -> f64 {
        self.detuning
    }
    pub fn group_velocity(&self) -> f64 {
        self.group_velocity
    }
    pub fn mixing_angle(&self) -> f64 {
        self.mixing_angle
    }

    pub fn effective_mass_frequency(&self) -> f64 {
        effective_mass_frequency(self.detuning, self.mixing_angle)
    }
}

/// How a two-photon detuning becomes an effective mass frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassCalibration {
    /// ω_m = κ·δ with the fitted scale factor κ.
    Fitted { kappa: f64 },
    /// ω_m = (δ/2)·sin²θ.
    Microscopic { mixing_angle: f64 },
}

impl Default for MassCalibration {
    fn default() -> Self {
        MassCalibration::Fitted { kappa: DEFAULT_KAPPA }
    }
}

impl MassCalibration {
    /// Factor s with ω_m = s·δ (both angular).
    pub fn scale(&self) -> f64 {
        match *self {
            MassCalibration::Fitted { kappa } => kappa,
            MassCalibration::Microscopic { mixing_angle } => effective_mass_frequency(1.0, mixing_angle),
        }
    }

    pub fn mass_frequency(&self, detuning: f64) -> f64 {
        self.scale() * detuning
    }
}

/// Position-dependent mass term m_eff(z)·v_g², stored as an angular frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassProfile {
    Constant {
        omega: f64,
    },
    /// slope·(z − z_ref) + offset; slope in rad/µs per cm.
    Linear {
        slope: f64,
        offset: f64,
        z_ref: f64,
    },
    /// amplitude·tanh((z − center)/width)
    Tanh {
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

impl MassProfile {
    pub fn constant(omega: f64) -> Self {
        MassProfile::Constant { omega }
    }

    pub fn linear(slope: f64, offset: f64, z_ref: f64) -> Self {
        MassProfile::Linear { slope, offset, z_ref }
    }

    pub fn tanh(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(invalid("width", format!("tanh width must be > 0, got {width}")));
        }
        Ok(MassProfile::Tanh {
            amplitude,
            center,
            width,
        })
    }

    /// Converts a profile written in cyclic MHz (detuning units) into mass
    /// frequencies: every coefficient is multiplied by 2π·scale.
    pub fn from_detuning_mhz(detuning: MassProfile, calibration: MassCalibration) -> Self {
        detuning.scaled(TAU * calibration.scale())
    }

    /// The JR benchmark profile, κ·2π·(0.745 (z − 2.5) + 0.35) rad/µs.
    pub fn paper_linear(kappa: f64) -> Self {
        Self::paper_linear_scaled(kappa, 1.0)
    }

    /// Same offset and reference, slope multiplied by `slope_factor`.
    pub fn paper_linear_scaled(kappa: f64, slope_factor: f64) -> Self {
        Self::from_detuning_mhz(
            MassProfile::linear(slope_factor * PAPER_SLOPE_MHZ_PER_CM, PAPER_OFFSET_MHZ, PAPER_Z_REF_CM),
            MassCalibration::Fitted { kappa },
        )
    }

    pub fn scaled(self, factor: f64) -> Self {
        match self {
            MassProfile::Constant { omega } => MassProfile::Constant { omega: omega * factor },
            MassProfile::Linear { slope, offset, z_ref } => MassProfile::Linear {
                slope: slope * factor,
                offset: offset * factor,
                z_ref,
            },
            MassProfile::Tanh {
                amplitude,
                center,
                width,
            } => MassProfile::Tanh {
                amplitude: amplitude * factor,
                center,
                width,
            },
        }
    }

    pub fn sample(&self, z: f64) -> f64 {
        match *self {
            MassProfile::Constant { omega } => omega,
            MassProfile::Linear { slope, offset, z_ref } => slope * (z - z_ref) + offset,
            MassProfile::Tanh {
                amplitude,
                center,
                width,
            } => amplitude * ((z - center) / width).tanh(),
        }
    }

    /// Position where the mass changes sign, if there is exactly one.
    pub fn zero_crossing(&self) -> Option<f64> {
        match *self {
            MassProfile::Constant { .. } => None,
            MassProfile::Linear { slope, offset, z_ref } => (slope != 0.0).then(|| z_ref - offset / slope),
            MassProfile::Tanh { amplitude, center, .. } => (amplitude != 0.0).then_some(center),
        }
    }

    /// Slope of the mass at its zero crossing (rad/µs per cm).
    pub fn slope_at_crossing(&self) -> Option<f64> {
        match *self {
            MassProfile::Constant { .. } => None,
            MassProfile::Linear { slope, .. } => (slope != 0.0).then_some(slope),
            MassProfile::Tanh { amplitude, width, .. } => (amplitude != 0.0).then(|| amplitude / width),
        }
    }
}

/// Diagonal decay matrix diag(γ⁺, γ⁻), 1/µs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossModel {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl LossModel {
    pub fn new(gamma_plus: f64, gamma_minus: f64) -> Result<Self> {
        for (name, g) in [("gamma_plus", gamma_plus), ("gamma_minus", gamma_minus)] {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(invalid(name, format!("decay rate must be finite and ≥ 0, got {g}")));
            }
        }
        Ok(Self {
            gamma_plus,
            gamma_minus,
        })
    }

    pub fn scalar(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn is_scalar(&self) -> bool {
        self.gamma_plus == self.gamma_minus
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity() -> Matrix2c {
    Matrix2c::identity()
}

pub fn sigma_x() -> Matrix2c {
    Matrix2c::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.))
}

pub fn sigma_y() -> Matrix2c {
    Matrix2c::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.))
}

pub fn sigma_z() -> Matrix2c {
    Matrix2c::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.))
}

/// Coefficients (a_I, a_x, a_y, a_z) with M = a_I·I + a_x·σx + a_y·σy + a_z·σz.
pub fn pauli_components(m: &Matrix2c) -> [Complex64; 4] {
    [identity(), sigma_x(), sigma_y(), sigma_z()].map(|p| (p * m).trace() * 0.5)
}

/// Control-field matrix Ω₀(1 + iσx), the configuration that turns the
/// detuning term into a σy mass coupling.
pub fn balanced_control_matrix(omega0: f64) -> Matrix2c {
    (identity() + sigma_x() * c(0., 1.)) * c(omega0, 0.)
}

/// M = g²N·(δ/2)·(Ω²)⁻¹·σz for a 2×2 control-field matrix Ω.
///
/// The propagation equation reads (∂t − v_g σz ∂z)E = i·M·E, so the
/// Hamiltonian-side coupling is −M. For Ω = Ω₀(1 + iσx) this gives
/// M = −g²Nδ/(4Ω₀²)·σy, i.e. a +g²Nδ/(4Ω₀²)·σy mass term.
pub fn effective_coupling_operator(control: &Matrix2c, g2n: f64, detuning: f64) -> Result<Matrix2c> {
    let squared = control * control;
    let det = squared.determinant();
    let scale = squared.norm_squared();
    if !(det.norm() > 1e-12 * scale) {
        return Err(Error::SingularControl { det: det.norm() });
    }
    let inverse = squared
        .try_inverse()
        .ok_or(Error::SingularControl { det: det.norm() })?;
    Ok(inverse * sigma_z() * c(g2n * detuning / 2.0, 0.))
}
