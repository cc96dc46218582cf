//! Split-step propagation of the lossy slow-light Dirac equation
//!
//! ```text
//! i ∂t Ψ = ( ±i v_g σz ∂z + ω_m(z) σy − i diag(γ⁺, γ⁻) ) Ψ
//! ```
//!
//! on a uniform periodic or outflow grid. The time step is locked to the
//! grid (v_g·dt = dz) so advection is an exact one-cell shift of each
//! component. A step is Strang-split: half mass rotation, shift, half mass
//! rotation, then the exact exponential loss.

use std::io::{self, BufRead, Write};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::model::{LossModel, MassProfile};

/// Fields are checked for NaN/inf every this many steps.
pub const FINITE_CHECK_INTERVAL: usize = 256;

/// Relative tolerance on v_g·dt = dz when a step size is supplied explicitly.
pub const CFL_TOLERANCE: f64 = 1e-12;

pub const SNAPSHOT_HEADER: &str = "z_cm,re_plus,im_plus,re_minus,im_minus";

/// Uniform cell-centred grid on [z_min, z_max).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    z_min: f64,
    z_max: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(z_min: f64, z_max: f64, n_points: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite()) || !(z_max > z_min) {
            return Err(invalid(
                "grid",
                format!("need finite z_max > z_min, got [{z_min}, {z_max}]"),
            ));
        }
        if n_points < 8 {
            return Err(invalid("n_points", format!("need at least 8 cells, got {n_points}")));
        }
        Ok(Self { z_min, z_max, n_points })
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }
    pub fn n_points(&self) -> usize {
        self.n_points
    }
    pub fn len(&self) -> f64 {
        self.z_max - self.z_min
    }
    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / self.n_points as f64
    }

    /// Centre of cell `i`.
    pub fn z(&self, i: usize) -> f64 {
        self.z_min + (i as f64 + 0.5) * self.dz()
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.z(i))
    }

    /// Same domain with `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_points: self.n_points * factor,
            ..*self
        }
    }
}

/// Two complex components Ψ = (Ψ⁺, Ψ⁻) sampled at the cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    grid: Grid,
    pub plus: Vec<Complex64>,
    pub minus: Vec<Complex64>,
}

impl SpinorField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            plus: vec![Complex64::new(0.0, 0.0); n],
            minus: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_components(grid: Grid, plus: Vec<Complex64>, minus: Vec<Complex64>) -> Result<Self> {
        if plus.len() != grid.n_points() || minus.len() != grid.n_points() {
            return Err(invalid(
                "field",
                format!(
                    "component lengths {}/{} do not match grid size {}",
                    plus.len(),
                    minus.len(),
                    grid.n_points()
                ),
            ));
        }
        Ok(Self { grid, plus, minus })
    }

    /// Spatially uniform field equal to `spinor` in every cell.
    pub fn uniform(grid: Grid, spinor: [Complex64; 2]) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            plus: vec![spinor[0]; n],
            minus: vec![spinor[1]; n],
        }
    }

    /// Builds (envelope⁺, e^{iΦ}·envelope⁻) and normalizes the pair jointly.
    pub fn from_envelopes(grid: Grid, envelope_plus: &[f64], envelope_minus: &[f64], phase: f64) -> Result<Self> {
        let rot = Complex64::from_polar(1.0, phase);
        let plus = envelope_plus.iter().map(|&a| Complex64::new(a, 0.0)).collect();
        let minus = envelope_minus.iter().map(|&a| rot * a).collect();
        let mut field = Self::from_components(grid, plus, minus)?;
        field.normalize()?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn same_grid(&self, other: &SpinorField) -> bool {
        self.grid == other.grid
    }

    /// Rescales to unit norm.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = field_norm(self);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("field", format!("cannot normalize a field with norm {norm}")));
        }
        self.scale(1.0 / norm.sqrt());
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.plus.iter_mut().chain(self.minus.iter_mut()) {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.plus
            .iter()
            .chain(&self.minus)
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SNAPSHOT_HEADER}")?;
        for (i, (p, m)) in self.plus.iter().zip(&self.minus).enumerate() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.grid.z(i),
                p.re,
                p.im,
                m.re,
                m.im
            )?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`SpinorField::write_csv`]; the grid is
    /// reconstructed from the (uniform) cell centres.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| invalid("snapshot", e.to_string()))?
            .unwrap_or_default();
        if header.trim() != SNAPSHOT_HEADER {
            return Err(invalid(
                "snapshot",
                format!("expected header `{SNAPSHOT_HEADER}`, got `{header}`"),
            ));
        }
        let mut zs = Vec::new();
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| invalid("snapshot", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid("snapshot", format!("row {}: {e}", row + 2)))?;
            if vals.len() != 5 {
                return Err(invalid("snapshot", format!("row {}: expected 5 columns", row + 2)));
            }
            zs.push(vals[0]);
            plus.push(Complex64::new(vals[1], vals[2]));
            minus.push(Complex64::new(vals[3], vals[4]));
        }
        if zs.len() < 8 {
            return Err(invalid("snapshot", "need at least 8 rows"));
        }
        let n = zs.len();
        let dz = (zs[n - 1] - zs[0]) / (n - 1) as f64;
        for w in zs.windows(2) {
            if ((w[1] - w[0]) - dz).abs() > 1e-9 * dz.abs().max(1.0) {
                return Err(invalid("snapshot", "cell centres are not uniformly spaced"));
            }
        }
        let grid = Grid::new(zs[0] - 0.5 * dz, zs[n - 1] + 0.5 * dz, n)?;
        Self::from_components(grid, plus, minus)
    }
}

/// Discrete ∫(|Ψ⁺|² + |Ψ⁻|²) dz.
pub fn field_norm(field: &SpinorField) -> f64 {
    let sum: f64 = field.plus.iter().chain(&field.minus).map(|v| v.norm_sqr()).sum();
    field.grid.dz() * sum
}

/// Discrete ⟨a, b⟩ = ∫ (a⁺* b⁺ + a⁻* b⁻) dz.
pub fn inner_product(a: &SpinorField, b: &SpinorField) -> Result<Complex64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let sum: Complex64 = a
        .plus
        .iter()
        .zip(&b.plus)
        .chain(a.minus.iter().zip(&b.minus))
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(sum * a.grid.dz())
}

/// Relative L2 distance ‖a − b‖ / ‖b‖.
pub fn relative_l2_deviation(a: &SpinorField, b: &SpinorField) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let diff: f64 = a
        .plus
        .iter()
        .zip(&b.plus)
        .chain(a.minus.iter().zip(&b.minus))
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let reference: f64 = b.plus.iter().chain(&b.minus).map(|v| v.norm_sqr()).sum();
    Ok((diff / reference).sqrt())
}

/// Gaussian envelope parameters of the two initial components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub center_plus: f64,
    pub center_minus: f64,
    pub width_plus: f64,
    pub width_minus: f64,
}

impl GaussianPair {
    pub fn symmetric(center: f64, width: f64) -> Self {
        Self {
            center_plus: center,
            center_minus: center,
            width_plus: width,
            width_minus: width,
        }
    }

    /// Unit-norm samples of exp(−(z−c)²/(2w²)) for each component.
    pub fn envelopes(&self, grid: &Grid) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(self.width_plus > 0.0) || !(self.width_minus > 0.0) {
            return Err(invalid("width", "Gaussian widths must be > 0"));
        }
        let plus = unit_gaussian(grid, self.center_plus, self.width_plus)?;
        let minus = unit_gaussian(grid, self.center_minus, self.width_minus)?;
        Ok((plus, minus))
    }
}

fn unit_gaussian(grid: &Grid, center: f64, width: f64) -> Result<Vec<f64>> {
    let mut g: Vec<f64> = grid
        .positions()
        .map(|z| (-(z - center).powi(2) / (2.0 * width * width)).exp())
        .collect();
    let norm = grid.dz() * g.iter().map(|v| v * v).sum::<f64>();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid(
            "initial",
            format!("Gaussian centred at {center} cm with width {width} cm has no weight on the grid"),
        ));
    }
    let s = 1.0 / norm.sqrt();
    g.iter_mut().for_each(|v| *v *= s);
    Ok(g)
}

/// Ψ⁺ = ĝ⁺, Ψ⁻ = r·e^{iΦ}·ĝ⁻ with ĝ± the unit-norm Gaussian envelopes, then
/// scaled to total norm 1. The intensity ratio I⁻/I⁺ is therefore r².
pub fn init_gaussian_spinor(
    grid: Grid,
    envelopes: &GaussianPair,
    amplitude_ratio: f64,
    phase: f64,
) -> Result<SpinorField> {
    if !(amplitude_ratio >= 0.0) || !amplitude_ratio.is_finite() {
        return Err(invalid(
            "amplitude_ratio",
            format!("must be finite and ≥ 0, got {amplitude_ratio}"),
        ));
    }
    let (gp, gm) = envelopes.envelopes(&grid)?;
    let gm: Vec<f64> = gm.iter().map(|v| v * amplitude_ratio).collect();
    SpinorField::from_envelopes(grid, &gp, &gm, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Periodic,
    /// Amplitude leaving the domain is dropped and nothing enters.
    Outflow,
}

/// Which way Ψ⁺ travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// Ψ⁺ moves toward −z: i∂tΨ = (+i v_g σz ∂z + …)Ψ. The zero mode on a
    /// positive-slope kink is φ(z)·(1, −1).
    #[default]
    Paper,
    /// Ψ⁺ moves toward +z.
    Intuitive,
}

impl Orientation {
    /// +1 when Ψ⁺ moves toward +z.
    pub fn plus_direction(&self) -> f64 {
        match self {
            Orientation::Paper => -1.0,
            Orientation::Intuitive => 1.0,
        }
    }
}

/// Physics and numerics of one evolution. The step size is tied to the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSpec {
    grid: Grid,
    v_g: f64,
    mass: MassProfile,
    loss: LossModel,
    boundary: Boundary,
    orientation: Orientation,
    dt: f64,
}

impl EvolutionSpec {
    /// dt is derived as dz / v_g.
    pub fn new(grid: Grid, v_g: f64, mass: MassProfile, loss: LossModel, boundary: Boundary) -> Result<Self> {
        if !(v_g > 0.0) || !v_g.is_finite() {
            return Err(invalid(
                "v_g",
                format!("group velocity must be finite and > 0, got {v_g}"),
            ));
        }
        LossModel::new(loss.gamma_plus, loss.gamma_minus)?;
        Ok(Self {
            grid,
            v_g,
            mass,
            loss,
            boundary,
            orientation: Orientation::default(),
            dt: grid.dz() / v_g,
        })
    }

    /// Explicit step size; rejected unless v_g·dt matches dz.
    pub fn with_dt(
        grid: Grid,
        v_g: f64,
        mass: MassProfile,
        loss: LossModel,
        boundary: Boundary,
        dt: f64,
    ) -> Result<Self> {
        let spec = Self::new(grid, v_g, mass, loss, boundary)?;
        let advected = v_g * dt;
        let dz = grid.dz();
        if !((advected - dz).abs() <= CFL_TOLERANCE * dz) {
            return Err(Error::CflViolation { advected, dz });
        }
        Ok(spec)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_mass(mut self, mass: MassProfile) -> Self {
        self.mass = mass;
        self
    }

    pub fn with_loss(mut self, loss: LossModel) -> Result<Self> {
        self.loss = LossModel::new(loss.gamma_plus, loss.gamma_minus)?;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn v_g(&self) -> f64 {
        self.v_g
    }
    pub fn mass(&self) -> &MassProfile {
        &self.mass
    }
    pub fn loss(&self) -> &LossModel {
        &self.loss
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    pub fn orientation(&self) -> Orientation {
        self.orientation
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of whole steps closest to `t` (µs).
    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.dt).round().max(0.0) as usize
    }

    pub fn time_of(&self, steps: usize) -> f64 {
        steps as f64 * self.dt
    }
}

/// Precomputed per-cell rotation and loss factors for one [`EvolutionSpec`].
#[derive(Debug, Clone)]
pub struct Propagator {
    spec: EvolutionSpec,
    cos_half: Vec<f64>,
    sin_half: Vec<f64>,
    decay_plus: f64,
    decay_minus: f64,
}

impl Propagator {
    pub fn new(spec: &EvolutionSpec) -> Self {
        let half = 0.5 * spec.dt;
        let (cos_half, sin_half) = spec
            .grid
            .positions()
            .map(|z| {
                let (s, c) = (spec.mass.sample(z) * half).sin_cos();
                (c, s)
            })
            .unzip();
        Self {
            spec: *spec,
            cos_half,
            sin_half,
            decay_plus: (-spec.loss.gamma_plus * spec.dt).exp(),
            decay_minus: (-spec.loss.gamma_minus * spec.dt).exp(),
        }
    }

    pub fn spec(&self) -> &EvolutionSpec {
        &self.spec
    }

    /// exp(−iθσy) per cell: (p, m) → (c·p − s·m, s·p + c·m).
    fn rotate(&self, field: &mut SpinorField) {
        for (((p, m), &c), &s) in field
            .plus
            .iter_mut()
            .zip(field.minus.iter_mut())
            .zip(&self.cos_half)
            .zip(&self.sin_half)
        {
            let (a, b) = (*p, *m);
            *p = a * c - b * s;
            *m = a * s + b * c;
        }
    }

    fn advect(&self, field: &mut SpinorField) {
        let outflow = self.spec.boundary == Boundary::Outflow;
        let (up, down) = match self.spec.orientation {
            Orientation::Intuitive => (&mut field.plus, &mut field.minus),
            Orientation::Paper => (&mut field.minus, &mut field.plus),
        };
        let zero = Complex64::new(0.0, 0.0);
        up.rotate_right(1);
        down.rotate_left(1);
        if outflow {
            up[0] = zero;
            let last = down.len() - 1;
            down[last] = zero;
        }
    }

    fn damp(&self, field: &mut SpinorField) {
        if self.decay_plus != 1.0 {
            field.plus.iter_mut().for_each(|v| *v *= self.decay_plus);
        }
        if self.decay_minus != 1.0 {
            field.minus.iter_mut().for_each(|v| *v *= self.decay_minus);
        }
    }

    /// One Strang step in place.
    pub fn step(&self, field: &mut SpinorField) {
        debug_assert_eq!(field.grid, self.spec.grid);
        self.rotate(field);
        self.advect(field);
        self.rotate(field);
        self.damp(field);
    }

    /// Advances `field` by `n` steps; `start` is the global index of the
    /// first step, used only for error reporting.
    pub fn advance(&self, field: &mut SpinorField, n: usize, start: usize) -> Result<()> {
        for k in 1..=n {
            self.step(field);
            let global = start + k;
            if global.is_multiple_of(FINITE_CHECK_INTERVAL) && !field.is_finite() {
                return Err(Error::NonFinite { step: global });
            }
        }
        if n > 0 && !field.is_finite() {
            return Err(Error::NonFinite { step: start + n });
        }
        Ok(())
    }

    /// Copies of the field at each requested step count (non-decreasing).
    pub fn snapshots_at(&self, initial: &SpinorField, steps: &[usize]) -> Result<Vec<SpinorField>> {
        let mut field = initial.clone();
        let mut done = 0;
        let mut out = Vec::with_capacity(steps.len());
        for &target in steps {
            if target < done {
                return Err(invalid("steps", "snapshot steps must be non-decreasing"));
            }
            self.advance(&mut field, target - done, done)?;
            done = target;
            out.push(field.clone());
        }
        Ok(out)
    }
}

fn check_field(field: &SpinorField, spec: &EvolutionSpec) -> Result<()> {
    if field.grid != spec.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// One step of `spec` applied to a copy of `field`.
pub fn step(field: &SpinorField, spec: &EvolutionSpec) -> Result<SpinorField> {
    check_field(field, spec)?;
    let mut next = field.clone();
    Propagator::new(spec).step(&mut next);
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub fields: Vec<SpinorField>,
    /// Step count actually taken; the realized final time is steps·dt.
    pub total_steps: usize,
    pub t_final: f64,
}

/// Runs to the step count nearest `t_final`, keeping every
/// `snapshot_every`-th state plus the initial and final ones.
pub fn evolve(field: &SpinorField, spec: &EvolutionSpec, t_final: f64, snapshot_every: usize) -> Result<Trajectory> {
    check_field(field, spec)?;
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(invalid("t_final", format!("must be finite and ≥ 0, got {t_final}")));
    }
    if snapshot_every == 0 {
        return Err(invalid("snapshot_every", "must be ≥ 1"));
    }
    let total = spec.steps_for(t_final);
    let mut steps: Vec<usize> = (0..=total).step_by(snapshot_every).collect();
    if *steps.last().unwrap() != total {
        steps.push(total);
    }
    let fields = Propagator::new(spec).snapshots_at(field, &steps)?;
    Ok(Trajectory {
        times: steps.iter().map(|&s| spec.time_of(s)).collect(),
        steps,
        fields,
        total_steps: total,
        t_final: spec.time_of(total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(0.0, 5.0, 64).unwrap()
    }

    fn pulse(grid: Grid) -> SpinorField {
        init_gaussian_spinor(
            grid,
            &GaussianPair {
                center_plus: 2.0,
                center_minus: 3.0,
                width_plus: 0.3,
                width_minus: 0.5,
            },
            0.7,
            1.1,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0.0, 5.0, 7).is_err());
        assert!(Grid::new(1.0, 1.0, 16).is_err());
        let g = Grid::new(0.0, 5.0, 10).unwrap();
        assert_eq!(g.dz(), 0.5);
        assert_eq!(g.z(0), 0.25);
    }

    #[test]
    fn gaussian_initial_state() {
        let g = Grid::new(0.0, 5.0, 256).unwrap();
        let f = pulse(g);
        assert_relative_eq!(field_norm(&f), 1.0, epsilon = 1e-12);

        let same = init_gaussian_spinor(g, &GaussianPair::symmetric(2.5, 0.4), 1.0, PI).unwrap();
        for (p, m) in same.plus.iter().zip(&same.minus) {
            assert!((p + m).norm() < 1e-15);
        }
        assert!(init_gaussian_spinor(g, &GaussianPair::symmetric(2.5, 0.0), 1.0, 0.0).is_err());
        assert!(init_gaussian_spinor(g, &GaussianPair::symmetric(2.5, 0.4), -1.0, 0.0).is_err());
        // all weight far outside the cell underflows to zero
        assert!(init_gaussian_spinor(g, &GaussianPair::symmetric(1e4, 0.1), 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_field_has_zero_norm() {
        assert_eq!(field_norm(&SpinorField::zeros(grid())), 0.0);
    }

    #[test]
    fn explicit_dt_must_match_grid() {
        let g = grid();
        let mass = MassProfile::constant(1.0);
        let dt = g.dz() / 2.0;
        assert!(EvolutionSpec::with_dt(g, 2.0, mass, LossModel::lossless(), Boundary::Periodic, dt).is_ok());
        let err = EvolutionSpec::with_dt(g, 1.0, mass, LossModel::lossless(), Boundary::Periodic, dt).unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
        assert!(EvolutionSpec::new(g, 0.0, mass, LossModel::lossless(), Boundary::Periodic).is_err());
    }

    #[test]
    fn full_wrap_restores_field() {
        let g = grid();
        let f0 = pulse(g);
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::constant(0.0),
            LossModel::lossless(),
            Boundary::Periodic,
        )
        .unwrap();
        let traj = evolve(&f0, &spec, spec.time_of(g.n_points()), 1000).unwrap();
        assert_eq!(traj.total_steps, g.n_points());
        let last = traj.fields.last().unwrap();
        assert_eq!(last, &f0);
    }

    #[test]
    fn advection_is_a_circular_shift() {
        let g = grid();
        let f0 = pulse(g);
        for orientation in [Orientation::Paper, Orientation::Intuitive] {
            let spec = EvolutionSpec::new(
                g,
                1.3,
                MassProfile::constant(0.0),
                LossModel::lossless(),
                Boundary::Periodic,
            )
            .unwrap()
            .with_orientation(orientation);
            let k = 5;
            let out = Propagator::new(&spec).snapshots_at(&f0, &[k]).unwrap().pop().unwrap();
            let n = g.n_points();
            let dir = orientation.plus_direction() as isize;
            for i in 0..n {
                let src_plus = ((i as isize - dir * k as isize).rem_euclid(n as isize)) as usize;
                let src_minus = ((i as isize + dir * k as isize).rem_euclid(n as isize)) as usize;
                assert_eq!(out.plus[i], f0.plus[src_plus]);
                assert_eq!(out.minus[i], f0.minus[src_minus]);
            }
        }
    }

    #[test]
    fn exact_loss_factor() {
        let g = grid();
        let f0 = pulse(g);
        let grid_dt = 0.01;
        let v_g = g.dz() / grid_dt;
        let loss = LossModel::new(1.0, 0.0).unwrap();
        let spec =
            EvolutionSpec::with_dt(g, v_g, MassProfile::constant(0.0), loss, Boundary::Periodic, grid_dt).unwrap();
        let f1 = step(&f0, &spec).unwrap();
        let factor = (-0.01f64).exp();
        let dir = spec.orientation().plus_direction() as isize;
        let n = g.n_points() as isize;
        for i in 0..g.n_points() {
            let src = ((i as isize - dir).rem_euclid(n)) as usize;
            assert_relative_eq!(f1.plus[i].norm(), f0.plus[src].norm() * factor, max_relative = 1e-14);
        }
    }

    #[test]
    fn uniform_field_rotates_exactly() {
        let g = grid();
        let omega = 3.0;
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::constant(omega),
            LossModel::lossless(),
            Boundary::Periodic,
        )
        .unwrap();
        let a = Complex64::new(0.6, 0.1);
        let b = Complex64::new(-0.2, 0.7);
        let f0 = SpinorField::uniform(g, [a, b]);
        let f1 = step(&f0, &spec).unwrap();
        let (s, c) = (omega * spec.dt()).sin_cos();
        for i in 0..g.n_points() {
            assert!((f1.plus[i] - (a * c - b * s)).norm() < 1e-15);
            assert!((f1.minus[i] - (a * s + b * c)).norm() < 1e-15);
        }
    }

    #[test]
    fn scalar_loss_norm_decay() {
        let g = Grid::new(0.0, 5.0, 128).unwrap();
        let f0 = pulse(g);
        let gamma = 0.4;
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::paper_linear(3.3),
            LossModel::scalar(gamma).unwrap(),
            Boundary::Periodic,
        )
        .unwrap();
        let n = 300;
        let f = Propagator::new(&spec).snapshots_at(&f0, &[n]).unwrap().pop().unwrap();
        let expected = (-2.0 * gamma * n as f64 * spec.dt()).exp();
        assert!((field_norm(&f) - expected).abs() < 1e-10);
    }

    #[test]
    fn outflow_never_gains_norm() {
        let g = Grid::new(0.0, 2.0, 64).unwrap();
        let f0 = pulse(Grid::new(0.0, 2.0, 64).unwrap());
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::tanh(9.0, 1.0, 0.2).unwrap(),
            LossModel::lossless(),
            Boundary::Outflow,
        )
        .unwrap();
        let steps: Vec<usize> = (0..200).collect();
        let snaps = Propagator::new(&spec).snapshots_at(&f0, &steps).unwrap();
        for w in snaps.windows(2) {
            assert!(field_norm(&w[1]) <= field_norm(&w[0]) * (1.0 + 1e-14));
        }
        assert!(field_norm(snaps.last().unwrap()) < 0.5);
    }

    #[test]
    fn evolve_zero_time_and_rounding() {
        let g = grid();
        let f0 = pulse(g);
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::constant(2.0),
            LossModel::lossless(),
            Boundary::Periodic,
        )
        .unwrap();
        let t0 = evolve(&f0, &spec, 0.0, 1).unwrap();
        assert_eq!(t0.times, vec![0.0]);
        assert_eq!(t0.fields[0], f0);

        let t = evolve(&f0, &spec, 10.4 * spec.dt(), 4).unwrap();
        assert_eq!(t.total_steps, 10);
        assert_eq!(t.steps, vec![0, 4, 8, 10]);
        assert_relative_eq!(t.t_final, 10.0 * spec.dt());
        assert!(evolve(&f0, &spec, -1.0, 1).is_err());
    }

    #[test]
    fn non_finite_is_reported_with_step() {
        let g = grid();
        let mut f0 = pulse(g);
        f0.plus[3] = Complex64::new(f64::NAN, 0.0);
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::constant(2.0),
            LossModel::lossless(),
            Boundary::Periodic,
        )
        .unwrap();
        let err = evolve(&f0, &spec, spec.time_of(300), 1000).unwrap_err();
        assert_eq!(err, Error::NonFinite { step: 256 });
    }

    #[test]
    fn deterministic_runs() {
        let g = Grid::new(0.0, 5.0, 200).unwrap();
        let f0 = pulse(g);
        let spec = EvolutionSpec::new(
            g,
            1.0,
            MassProfile::paper_linear(3.3),
            LossModel::new(0.2, 0.5).unwrap(),
            Boundary::Outflow,
        )
        .unwrap();
        let a = evolve(&f0, &spec, 3.0, 50).unwrap();
        let b = evolve(&f0, &spec, 3.0, 50).unwrap();
        assert_eq!(a.fields, b.fields);
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let g = Grid::new(-1.0, 4.0, 32).unwrap();
        let f = pulse(g);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(SNAPSHOT_HEADER));
        let back = SpinorField::read_csv(io::Cursor::new(buf)).unwrap();
        assert_eq!(back.plus, f.plus);
        assert_eq!(back.minus, f.minus);
        assert_eq!(back.grid().n_points(), 32);
        assert_relative_eq!(back.grid().dz(), g.dz(), epsilon = 1e-12);
    }
}
