//! Fourier-optics model of the receiver: deformable mirror, modal transform,
//! pupil and focal fields, and single-mode fiber coupling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fourier::{fftshift, Fft2};
use crate::grid::PupilGrid;
use crate::zernike::ZernikeBasis;
use crate::{Error, Result};

/// Classical flat-wavefront optimum of circular-pupil to Gaussian-mode coupling.
pub const FLAT_COUPLING_OPTIMUM: f64 = 0.8145;

/// Actuators per ring of the default mirror, centre outwards.
pub const DEFAULT_RINGS: [usize; 4] = [1, 8, 12, 19];
/// Outer ring radius of the default mirror in pupil radii.
pub const DEFAULT_OUTER_RADIUS: f64 = 1.2;

/// Pupil diameter and sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilGeometry {
    /// Aperture diameter `D`, meters.
    pub aperture: f64,
    /// Pixels across the aperture.
    pub grid_size: usize,
}

impl PupilGeometry {
    pub fn new(aperture: f64, grid_size: usize) -> Self {
        PupilGeometry {
            aperture,
            grid_size,
        }
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.aperture / self.grid_size as f64
    }
}

/// Deformable mirror with Gaussian influence functions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableMirror {
    /// Actuator centres in normalized pupil coordinates (pupil radius 1).
    positions: Vec<[f64; 2]>,
    /// Inter-actuator spacing in normalized pupil coordinates.
    spacing: f64,
    /// Influence width in units of `spacing`.
    influence_sigma: f64,
    /// Radians of phase per unit voltage at an actuator centre.
    voltage_gain: f64,
    /// Symmetric clamp `|u_j| <= voltage_limit`.
    voltage_limit: f64,
}

impl DeformableMirror {
    /// Concentric rings at evenly spaced radii out to `outer_radius` (pupil
    /// radius 1); a ring of one actuator sits at the centre. Odd rings are
    /// rotated half a pitch.
    pub fn ring_layout(
        ring_counts: &[usize],
        outer_radius: f64,
        influence_sigma: f64,
        voltage_gain: f64,
        voltage_limit: f64,
    ) -> Result<Self> {
        if ring_counts.is_empty() || ring_counts.contains(&0) {
            return Err(Error::config("every actuator ring needs at least one actuator"));
        }
        if !(outer_radius > 0.0) {
            return Err(Error::config("outer actuator ring radius must be positive"));
        }
        let rings = ring_counts.len();
        let spacing = if rings > 1 {
            outer_radius / (rings - 1) as f64
        } else {
            outer_radius
        };
        let mut positions = Vec::new();
        for (i, &count) in ring_counts.iter().enumerate() {
            if i == 0 && count == 1 {
                positions.push([0.0, 0.0]);
                continue;
            }
            let radius = if i == 0 { spacing / 2.0 } else { i as f64 * spacing };
            let offset = if i % 2 == 1 { PI / count as f64 } else { 0.0 };
            for k in 0..count {
                let a = 2.0 * PI * k as f64 / count as f64 + offset;
                positions.push([radius * a.cos(), radius * a.sin()]);
            }
        }
        Self::from_positions(positions, spacing, influence_sigma, voltage_gain, voltage_limit)
    }

    /// Arbitrary actuator centres; `spacing` is the nominal inter-actuator
    /// distance in normalized pupil coordinates.
    pub fn from_positions(
        positions: Vec<[f64; 2]>,
        spacing: f64,
        influence_sigma: f64,
        voltage_gain: f64,
        voltage_limit: f64,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::config("a mirror needs at least one actuator"));
        }
        if !(spacing > 0.0) || !(influence_sigma > 0.0) || !(voltage_gain > 0.0) || !(voltage_limit > 0.0) {
            return Err(Error::config(
                "spacing, influence width, voltage gain and voltage limit must be positive",
            ));
        }
        Ok(DeformableMirror {
            positions,
            spacing,
            influence_sigma,
            voltage_gain,
            voltage_limit,
        })
    }

    /// 40 actuators in rings of 1, 8, 12 and 19 with the outer ring at 1.2
    /// pupil radii, σ = 0.7 spacing.
    pub fn forty_actuator() -> Self {
        Self::ring_layout(&DEFAULT_RINGS, DEFAULT_OUTER_RADIUS, 0.7, 1.0, 10.0)
            .expect("valid default layout")
    }

    pub fn actuator_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn voltage_gain(&self) -> f64 {
        self.voltage_gain
    }

    pub fn voltage_limit(&self) -> f64 {
        self.voltage_limit
    }

    /// Influence functions on the disk pixels of a `grid_size` pupil grid.
    pub fn sample(&self, grid_size: usize) -> SampledMirror {
        let grid = PupilGrid::new(grid_size);
        let sigma = self.influence_sigma * self.spacing;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let n_act = self.actuator_count();
        let mut influence = Vec::with_capacity(grid.area() * n_act);
        for &i in grid.inside() {
            let (x, y) = (grid.x()[i], grid.y()[i]);
            for p in &self.positions {
                let d2 = (x - p[0]).powi(2) + (y - p[1]).powi(2);
                influence.push(self.voltage_gain * (-d2 * inv).exp());
            }
        }
        SampledMirror {
            mirror: self.clone(),
            grid,
            influence,
        }
    }
}

/// A mirror's influence functions sampled on one pupil grid.
#[derive(Debug, Clone)]
pub struct SampledMirror {
    mirror: DeformableMirror,
    grid: PupilGrid,
    /// `area × actuators`, pixel-major.
    influence: Vec<f64>,
}

/// Voltages after clamping, with the count of clamped actuators.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampedVoltages {
    pub voltages: Vec<f64>,
    pub saturated: usize,
}

impl SampledMirror {
    pub fn mirror(&self) -> &DeformableMirror {
        &self.mirror
    }

    pub fn grid(&self) -> &PupilGrid {
        &self.grid
    }

    pub fn actuator_count(&self) -> usize {
        self.mirror.actuator_count()
    }

    /// Influence of actuator `j` at disk pixel `p` (index into `grid.inside()`).
    pub fn influence(&self, p: usize, j: usize) -> f64 {
        self.influence[p * self.actuator_count() + j]
    }

    pub fn clamp(&self, u: &[f64]) -> ClampedVoltages {
        let lim = self.mirror.voltage_limit;
        let mut saturated = 0;
        let voltages = u
            .iter()
            .map(|&v| {
                if v.abs() > lim {
                    saturated += 1;
                    v.clamp(-lim, lim)
                } else {
                    v
                }
            })
            .collect();
        ClampedVoltages {
            voltages,
            saturated,
        }
    }

    /// Mirror phase on the disk pixels only (ordered as `grid.inside()`).
    pub fn disk_phase(&self, u: &[f64], out: &mut [f64]) {
        let n_act = self.actuator_count();
        assert_eq!(u.len(), n_act, "voltage vector length");
        for (o, row) in out.iter_mut().zip(self.influence.chunks_exact(n_act)) {
            *o = row.iter().zip(u).map(|(f, v)| f * v).sum();
        }
    }

    /// Full-grid mirror phase `Σ u_j g f_j(x)`, zero off the disk. No clamping.
    pub fn phase(&self, u: &[f64]) -> Vec<f64> {
        let mut disk = vec![0.0; self.grid.area()];
        self.disk_phase(u, &mut disk);
        let mut out = vec![0.0; self.grid.len()];
        for (&i, v) in self.grid.inside().iter().zip(disk) {
            out[i] = v;
        }
        out
    }
}

/// Full-grid mirror phase for voltages `u` on a `grid_size` grid.
pub fn dm_phase(dm: &DeformableMirror, u: &[f64], grid_size: usize) -> Vec<f64> {
    dm.sample(grid_size).phase(u)
}

/// Linear map from modal coefficients to voltages, `u = a × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalMap {
    /// `mode_count` rows of `actuator_count` voltages.
    rows: Vec<Vec<f64>>,
    /// Per-mode RMS reproduction error relative to the mode's RMS.
    fit_residuals: Vec<f64>,
    condition: f64,
}

/// Relative residual above which a mode is considered unreproducible.
pub const UNREPRODUCIBLE_RESIDUAL: f64 = 0.5;

impl ModalMap {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::config("modal map rows must be non-empty and equal length"));
        }
        let n = rows.len();
        Ok(ModalMap {
            rows,
            fit_residuals: vec![0.0; n],
            condition: 1.0,
        })
    }

    /// `n × n` identity: modal coefficients are the voltages themselves.
    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        ModalMap::from_rows(rows).expect("non-empty identity")
    }

    pub fn mode_count(&self) -> usize {
        self.rows.len()
    }

    pub fn actuator_count(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn fit_residuals(&self) -> &[f64] {
        &self.fit_residuals
    }

    /// Modes whose residual exceeds [`UNREPRODUCIBLE_RESIDUAL`].
    pub fn flagged_modes(&self) -> Vec<usize> {
        self.fit_residuals
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > UNREPRODUCIBLE_RESIDUAL)
            .map(|(k, _)| k)
            .collect()
    }

    /// Condition number of the unregularized influence normal matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `u = a × M`.
    pub fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.mode_count() {
            return Err(Error::config(format!(
                "{} modal coefficients for a {}-mode map",
                a.len(),
                self.mode_count()
            )));
        }
        let mut u = vec![0.0; self.actuator_count()];
        for (c, row) in a.iter().zip(&self.rows) {
            for (v, m) in u.iter_mut().zip(row) {
                *v += c * m;
            }
        }
        Ok(u)
    }
}

/// Condition number above which the influence matrix is rejected.
pub const MAX_INFLUENCE_CONDITION: f64 = 1e12;

/// Least-squares voltages reproducing each basis mode on the mirror.
pub fn fit_modal_map(mirror: &SampledMirror, basis: &ZernikeBasis) -> Result<ModalMap> {
    if mirror.grid().size() != basis.grid_size() {
        return Err(Error::Geometry(format!(
            "mirror sampled on {} px, basis on {} px",
            mirror.grid().size(),
            basis.grid_size()
        )));
    }
    let inside = mirror.grid().inside();
    let n_act = mirror.actuator_count();
    let f = DMatrix::from_fn(inside.len(), n_act, |p, j| mirror.influence(p, j));
    let ftf = f.transpose() * &f;
    let sv = ftf.clone().svd(false, false).singular_values;
    let (hi, lo) = (sv.max(), sv.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_INFLUENCE_CONDITION {
        return Err(Error::Numerical(format!(
            "influence matrix is ill-conditioned (condition number {condition:.3e})"
        )));
    }
    let reg = 1e-9 * hi;
    let mut normal = ftf;
    for j in 0..n_act {
        normal[(j, j)] += reg;
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized influence matrix is not positive definite".into()))?;
    let mut rows = Vec::with_capacity(basis.mode_count());
    let mut fit_residuals = Vec::with_capacity(basis.mode_count());
    for k in 0..basis.mode_count() {
        let z = DVector::from_iterator(inside.len(), inside.iter().map(|&i| basis.sample(k)[i]));
        let u = chol.solve(&(f.transpose() * &z));
        let err = (&f * &u - &z).norm();
        let norm = z.norm();
        fit_residuals.push(if norm > 0.0 { err / norm } else { 0.0 });
        rows.push(u.iter().copied().collect());
    }
    Ok(ModalMap {
        rows,
        fit_residuals,
        condition,
    })
}

/// Unit-amplitude disk field with phase `screen − dm + k(θx·x + θy·y)`.
///
/// `tilt` is in radians of angle; `screen_window` and `dm_phase` are full
/// `grid_size²` grids in radians at `wavelength`.
pub fn pupil_field(
    screen_window: &[f64],
    dm_phase: &[f64],
    tilt: [f64; 2],
    geometry: &PupilGeometry,
    wavelength: f64,
) -> Result<Vec<Complex64>> {
    let n = geometry.grid_size;
    if screen_window.len() != n * n || dm_phase.len() != n * n {
        return Err(Error::Geometry(format!(
            "pupil is {n}x{n} but phase maps have {} and {} samples",
            screen_window.len(),
            dm_phase.len()
        )));
    }
    let grid = PupilGrid::new(n);
    let k = 2.0 * PI / wavelength;
    let half = geometry.aperture / 2.0;
    let mut field = vec![Complex64::new(0.0, 0.0); n * n];
    for &i in grid.inside() {
        let tilt_phase = k * half * (tilt[0] * grid.x()[i] + tilt[1] * grid.y()[i]);
        field[i] = Complex64::from_polar(1.0, screen_window[i] - dm_phase[i] + tilt_phase);
    }
    Ok(field)
}

/// Single-mode fiber behind a focusing mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberModel {
    /// Focal length `f`, meters.
    pub focal_length: f64,
    /// Gaussian mode field radius in the focal plane, meters.
    pub mode_field_radius: f64,
    pub wavelength: f64,
}

impl FiberModel {
    pub fn new(focal_length: f64, mode_field_radius: f64, wavelength: f64) -> Result<Self> {
        if !(focal_length > 0.0) || !(mode_field_radius > 0.0) || !(wavelength > 0.0) {
            return Err(Error::config(
                "focal length, mode field radius and wavelength must be positive",
            ));
        }
        Ok(FiberModel {
            focal_length,
            mode_field_radius,
            wavelength,
        })
    }

    /// Radius of the fiber mode back-propagated to the pupil: `λ f / (π w)`.
    pub fn pupil_mode_radius(&self) -> f64 {
        self.wavelength * self.focal_length / (PI * self.mode_field_radius)
    }
}

/// Complex focal-plane field on a centred square grid.
#[derive(Debug, Clone)]
pub struct FocalField {
    pub field: Vec<Complex64>,
    pub size: usize,
    /// Meters per focal-plane pixel.
    pub pixel_pitch: f64,
}

impl FocalField {
    pub fn power(&self) -> f64 {
        self.field.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Focal-plane coordinates (x, y) of pixel `(row, col)` in meters.
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        let h = (self.size / 2) as f64;
        (
            (col as f64 - h) * self.pixel_pitch,
            (row as f64 - h) * self.pixel_pitch,
        )
    }
}

/// Smallest zero-padding factor that puts ≥ 8 pixels across the Airy core.
pub const MIN_PADDING: f64 = 8.0 / 2.44;

/// Fraunhofer propagation of a pupil field to the focal plane.
///
/// The pupil is zero-padded by `padding`; focal pixel pitch is
/// `λ f / (N_fft Δx_pupil)`. The transform is unitary, so total power is
/// conserved.
pub fn focal_field(
    pupil: &[Complex64],
    geometry: &PupilGeometry,
    focal_length: f64,
    wavelength: f64,
    padding: usize,
) -> Result<FocalField> {
    let n = geometry.grid_size;
    if pupil.len() != n * n {
        return Err(Error::Geometry(format!(
            "pupil field has {} samples for a {n}x{n} grid",
            pupil.len()
        )));
    }
    if (padding as f64) < MIN_PADDING {
        return Err(Error::config(format!(
            "padding {padding} leaves fewer than 8 focal pixels across the Airy core (need ≥ {MIN_PADDING:.2})"
        )));
    }
    let big = n * padding;
    let off = (big - n) / 2;
    let mut data = vec![Complex64::new(0.0, 0.0); big * big];
    for r in 0..n {
        for c in 0..n {
            data[(r + off) * big + c + off] = pupil[r * n + c];
        }
    }
    // the DFT origin sits at the padded centre; pupil pixel centres are offset
    // by half a pixel, corrected below by a focal-plane phase ramp
    let h = big / 2;
    let mut shifted = vec![Complex64::new(0.0, 0.0); big * big];
    for r in 0..big {
        for c in 0..big {
            shifted[((r + big - h) % big) * big + (c + big - h) % big] = data[r * big + c];
        }
    }
    Fft2::new(big).forward(&mut shifted);
    fftshift(&mut shifted, big);
    let scale = 1.0 / big as f64;
    let half_pixel = -PI / big as f64;
    for r in 0..big {
        for c in 0..big {
            let kx = c as f64 - h as f64;
            let ky = r as f64 - h as f64;
            let ramp = Complex64::from_polar(scale, half_pixel * (kx + ky));
            shifted[r * big + c] *= ramp;
        }
    }
    Ok(FocalField {
        field: shifted,
        size: big,
        pixel_pitch: wavelength * focal_length / (big as f64 * geometry.pixel_pitch()),
    })
}

/// Normalized overlap `|⟨E, M⟩|² / (⟨E, E⟩⟨M, M⟩)` with the Gaussian fiber mode.
pub fn coupling_efficiency(focal: &FocalField, fiber: &FiberModel) -> Result<f64> {
    let w2 = fiber.mode_field_radius.powi(2);
    let (mut overlap, mut e_pow, mut m_pow) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for r in 0..focal.size {
        for c in 0..focal.size {
            let (x, y) = focal.coords(r, c);
            let m = (-(x * x + y * y) / w2).exp();
            let e = focal.field[r * focal.size + c];
            overlap += e * m;
            e_pow += e.norm_sqr();
            m_pow += m * m;
        }
    }
    if e_pow == 0.0 || m_pow == 0.0 {
        return Err(Error::UndefinedMetric("zero-power field".into()));
    }
    Ok((overlap.norm_sqr() / (e_pow * m_pow)).min(1.0))
}

/// Coupling efficiency evaluated in the pupil plane.
///
/// The fiber mode back-propagated to the pupil is a Gaussian of radius
/// `λf/(πw)`, so by Parseval the focal-plane overlap equals the pupil-plane
/// overlap with that Gaussian. This is an `O(area)` evaluation per call.
#[derive(Debug, Clone)]
pub struct PupilCoupler {
    /// Pupil-mode amplitude on the disk pixels (ordered as `grid.inside()`).
    weights: Vec<f64>,
    /// `Σ G²` over the whole (unapertured) pupil plane.
    mode_power: f64,
}

impl PupilCoupler {
    pub fn new(grid: &PupilGrid, geometry: &PupilGeometry, fiber: &FiberModel) -> Self {
        let big_w = fiber.pupil_mode_radius() / geometry.pixel_pitch();
        let half = grid.size() as f64 / 2.0;
        let weights = grid
            .inside()
            .iter()
            .map(|&i| {
                let (x, y) = (grid.x()[i] * half, grid.y()[i] * half);
                (-(x * x + y * y) / (big_w * big_w)).exp()
            })
            .collect();
        // same half-integer lattice, extended until the Gaussian is negligible
        let reach = (6.0 * big_w).ceil().max(half) as i64 + 1;
        let mut mode_power = 0.0;
        for r in -reach..reach {
            for c in -reach..reach {
                let (x, y) = (r as f64 + 0.5, c as f64 + 0.5);
                mode_power += (-2.0 * (x * x + y * y) / (big_w * big_w)).exp();
            }
        }
        PupilCoupler {
            weights,
            mode_power,
        }
    }

    /// `η` for a unit-amplitude disk field with the given disk-pixel phase.
    pub fn efficiency(&self, disk_phase: &[f64]) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (w, p) in self.weights.iter().zip(disk_phase) {
            let (s, c) = p.sin_cos();
            re += w * c;
            im += w * s;
        }
        (re * re + im * im) / (self.weights.len() as f64 * self.mode_power)
    }

    /// `η` for an arbitrary field sampled on the disk pixels.
    pub fn efficiency_of_field(&self, disk_field: &[Complex64]) -> Result<f64> {
        let power: f64 = disk_field.iter().map(|z| z.norm_sqr()).sum();
        if power == 0.0 {
            return Err(Error::UndefinedMetric("zero-power field".into()));
        }
        let overlap: Complex64 = self.weights.iter().zip(disk_field).map(|(w, e)| e * w).sum();
        Ok(overlap.norm_sqr() / (power * self.mode_power))
    }
}

/// Result of [`optimize_mode_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeRadiusOptimum {
    pub mode_field_radius: f64,
    pub efficiency: f64,
    /// Golden-section bracket in meters.
    pub bracket: (f64, f64),
}

/// Golden-section search for the fiber mode radius maximizing flat-wavefront
/// coupling, using the focal-plane overlap.
pub fn optimize_mode_radius(
    geometry: &PupilGeometry,
    focal_length: f64,
    wavelength: f64,
    padding: usize,
) -> Result<ModeRadiusOptimum> {
    let n = geometry.grid_size;
    let flat = pupil_field(&vec![0.0; n * n], &vec![0.0; n * n], [0.0, 0.0], geometry, wavelength)?;
    let focal = focal_field(&flat, geometry, focal_length, wavelength, padding)?;
    let scale = wavelength * focal_length / geometry.aperture;
    let eta = |w: f64| -> Result<f64> {
        coupling_efficiency(&focal, &FiberModel::new(focal_length, w, wavelength)?)
    };
    let bracket = (0.3 * scale, 2.0 * scale);
    let (mut a, mut b) = bracket;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eta(c)?, eta(d)?);
    while (b - a) > 1e-7 * scale {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eta(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eta(d)?;
        }
    }
    let w = (a + b) / 2.0;
    Ok(ModeRadiusOptimum {
        mode_field_radius: w,
        efficiency: eta(w)?,
        bracket,
    })
}

/// Residual tip/tilt of the fine tracking loop: an Ornstein–Uhlenbeck process
/// per axis, i.e. white Gaussian noise through a one-pole low-pass filter,
/// with stationary RMS `rms` (radians).
#[derive(Debug, Clone)]
pub struct TiltJitter {
    rms: f64,
    bandwidth: f64,
    state: [f64; 2],
    rng: ChaCha8Rng,
}

impl TiltJitter {
    pub fn new(rms: f64, bandwidth: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = if rms > 0.0 {
            [rms * rng.sample::<f64, _>(StandardNormal), rms * rng.sample::<f64, _>(StandardNormal)]
        } else {
            [0.0, 0.0]
        };
        TiltJitter {
            rms,
            bandwidth,
            state,
            rng,
        }
    }

    pub fn current(&self) -> [f64; 2] {
        self.state
    }

    pub fn advance(&mut self, dt: f64) -> [f64; 2] {
        if self.rms > 0.0 && dt > 0.0 {
            let a = (-2.0 * PI * self.bandwidth * dt).exp();
            let kick = self.rms * (1.0 - a * a).sqrt();
            for s in self.state.iter_mut() {
                *s = a * *s + kick * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> PupilGeometry {
        PupilGeometry::new(0.4, 32)
    }

    #[test]
    fn forty_actuator_layout() {
        let dm = DeformableMirror::forty_actuator();
        assert_eq!(dm.actuator_count(), 40);
        let radii: Vec<f64> = dm.positions().iter().map(|p| p[0].hypot(p[1])).collect();
        assert!(radii.iter().all(|r| *r <= 1.2 + 1e-12));
        assert_eq!(radii.iter().filter(|r| **r > 1.0).count(), 19);
        assert!((dm.spacing() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mirror_phase_is_linear_and_local() {
        let dm = DeformableMirror::forty_actuator();
        let s = dm.sample(64);
        assert!(s.phase(&vec![0.0; 40]).iter().all(|v| *v == 0.0));

        let mut e = vec![0.0; 40];
        e[0] = 1.0;
        let bump = s.phase(&e);
        let peak = bump.iter().cloned().fold(0.0, f64::max);
        // centre actuator sits between the four central pixels
        let g = s.grid();
        let nearest = g.inside().iter().map(|&i| g.x()[i].hypot(g.y()[i])).fold(1.0, f64::min);
        let sigma = 0.7 * dm.spacing();
        let expect = (-nearest * nearest / (2.0 * sigma * sigma)).exp();
        assert!((peak - expect).abs() < 1e-12);

        let ua: Vec<f64> = (0..40).map(|j| (j as f64 * 0.7).sin()).collect();
        let ub: Vec<f64> = (0..40).map(|j| (j as f64 * 1.3).cos()).collect();
        let sum: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a + b).collect();
        let (pa, pb, ps) = (s.phase(&ua), s.phase(&ub), s.phase(&sum));
        for i in 0..pa.len() {
            assert!((ps[i] - pa[i] - pb[i]).abs() <= 1e-12 * (1.0 + ps[i].abs()));
        }
        let scaled: Vec<f64> = ua.iter().map(|v| 2.5 * v).collect();
        for (x, y) in s.phase(&scaled).iter().zip(&pa) {
            assert!((x - 2.5 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_counts_saturation() {
        let dm = DeformableMirror::ring_layout(&[1, 6], 1.0, 0.7, 1.0, 1.0).unwrap();
        let s = dm.sample(16);
        let c = s.clamp(&[0.5, 2.0, -3.0, 1.0, 0.0, -0.2, 1.5]);
        assert_eq!(c.saturated, 3);
        assert_eq!(c.voltages, vec![0.5, 1.0, -1.0, 1.0, 0.0, -0.2, 1.0]);
    }

    #[test]
    fn modal_map_fits_low_order_modes() {
        let dm = DeformableMirror::forty_actuator();
        let s = dm.sample(64);
        let basis = ZernikeBasis::new((2..=13).collect(), 64).unwrap();
        let map = fit_modal_map(&s, &basis).unwrap();
        assert_eq!((map.mode_count(), map.actuator_count()), (12, 40));
        for (k, r) in map.fit_residuals().iter().enumerate() {
            assert!(*r < 0.15, "mode {} residual {r}", basis.modes()[k]);
        }
        assert!(map.flagged_modes().is_empty());

        // the stored residual is what the mirror actually reproduces
        let inside = s.grid().inside();
        for k in [0, 5, 11] {
            let u = map.apply(&one_hot(12, k)).unwrap();
            let ph = s.phase(&u);
            let z = basis.sample(k);
            let err: f64 = inside.iter().map(|&i| (ph[i] - z[i]).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = inside.iter().map(|&i| z[i].powi(2)).sum::<f64>().sqrt();
            assert!((err / norm - map.fit_residuals()[k]).abs() < 1e-9);
        }
    }

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    #[test]
    fn piston_is_reproducible() {
        let s = DeformableMirror::forty_actuator().sample(64);
        let map = fit_modal_map(&s, &ZernikeBasis::new(vec![1], 64).unwrap()).unwrap();
        assert!(map.fit_residuals()[0] < 0.05, "{}", map.fit_residuals()[0]);
    }

    #[test]
    fn high_order_mode_is_flagged() {
        // n = 14 has ripples at about twice the actuator spacing frequency
        let s = DeformableMirror::forty_actuator().sample(64);
        let j = 14 * 15 / 2 + 1; // first mode of radial order 14
        let map = fit_modal_map(&s, &ZernikeBasis::new(vec![j], 64).unwrap()).unwrap();
        assert!(map.fit_residuals()[0] > 0.5, "{}", map.fit_residuals()[0]);
        assert_eq!(map.flagged_modes(), vec![0]);
    }

    #[test]
    fn degenerate_mirror_is_ill_conditioned() {
        // two rings at the same radius with identical angles: duplicated actuators
        let mut dm = DeformableMirror::ring_layout(&[1, 6], 1.0, 0.7, 1.0, 1.0).unwrap();
        let dup = dm.positions[1];
        dm.positions.push(dup);
        let err = fit_modal_map(&dm.sample(32), &ZernikeBasis::new(vec![2], 32).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("condition")));
    }

    #[test]
    fn flat_pupil_and_perfect_correction() {
        let g = geometry();
        let n = g.grid_size;
        let flat = pupil_field(&vec![0.0; n * n], &vec![0.0; n * n], [0.0, 0.0], &g, 1.57e-6).unwrap();
        let screen: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.1).sin()).collect();
        let corrected = pupil_field(&screen, &screen, [0.0, 0.0], &g, 1.57e-6).unwrap();
        assert_eq!(flat, corrected);
        let grid = PupilGrid::new(n);
        for (i, z) in flat.iter().enumerate() {
            let expect = if grid.mask()[i] { 1.0 } else { 0.0 };
            assert_eq!(z.re, expect);
        }
        assert!(pupil_field(&screen, &[0.0; 3], [0.0, 0.0], &g, 1.57e-6).is_err());
    }

    #[test]
    fn focal_field_conserves_energy() {
        let g = geometry();
        let n = g.grid_size;
        let screen: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.37).cos() * 2.0).collect();
        let p = pupil_field(&screen, &vec![0.0; n * n], [1e-6, -2e-6], &g, 1.57e-6).unwrap();
        let f = focal_field(&p, &g, 2.0, 1.57e-6, 4).unwrap();
        let pp: f64 = p.iter().map(|z| z.norm_sqr()).sum();
        assert!((f.power() - pp).abs() < 1e-10 * pp);

        let zero = focal_field(&vec![Complex64::new(0.0, 0.0); n * n], &g, 2.0, 1.57e-6, 4).unwrap();
        assert_eq!(zero.power(), 0.0);
        let fiber = FiberModel::new(2.0, 5e-6, 1.57e-6).unwrap();
        assert!(matches!(coupling_efficiency(&zero, &fiber), Err(Error::UndefinedMetric(_))));
        assert!(matches!(focal_field(&p, &g, 2.0, 1.57e-6, 3), Err(Error::Config { .. })));
    }

    fn radial_profile(f: &FocalField) -> Vec<f64> {
        // intensity along +x from the centre
        let h = f.size / 2;
        (0..h).map(|c| f.field[h * f.size + h + c].norm_sqr()).collect()
    }

    #[test]
    fn airy_first_zero() {
        let g = PupilGeometry::new(0.4, 64);
        let n = g.grid_size;
        let p = pupil_field(&vec![0.0; n * n], &vec![0.0; n * n], [0.0, 0.0], &g, 1.57e-6).unwrap();
        let f = focal_field(&p, &g, 2.0, 1.57e-6, 8).unwrap();
        let prof = radial_profile(&f);
        let first_min = (1..prof.len() - 1)
            .find(|&i| prof[i] < prof[i - 1] && prof[i] <= prof[i + 1])
            .unwrap();
        let expect = 1.22 * 1.57e-6 * 2.0 / 0.4 / f.pixel_pitch;
        assert!((first_min as f64 - expect).abs() <= 1.0, "{first_min} vs {expect}");
        // the centred flat field is real
        let imag: f64 = f.field.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let peak: f64 = f.field.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(imag < 1e-9 * peak);
    }

    #[test]
    fn tilt_shifts_the_spot() {
        let g = PupilGeometry::new(0.4, 64);
        let n = g.grid_size;
        let lambda = 1.57e-6;
        let f_len = 2.0;
        let padding = 8;
        let pitch = lambda * f_len / (n as f64 * padding as f64 * g.pixel_pitch());
        let theta = 6.0 * pitch / f_len;
        let p = pupil_field(&vec![0.0; n * n], &vec![0.0; n * n], [theta, 0.0], &g, lambda).unwrap();
        let f = focal_field(&p, &g, f_len, lambda, padding).unwrap();
        let (imax, _) = f
            .field
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, z)| if z.norm_sqr() > bv { (i, z.norm_sqr()) } else { (bi, bv) });
        let (x, y) = f.coords(imax / f.size, imax % f.size);
        assert!((x - f_len * theta).abs() <= f.pixel_pitch, "{x}");
        assert!(y.abs() <= f.pixel_pitch);
    }

    #[test]
    fn coupling_invariances() {
        let g = geometry();
        let n = g.grid_size;
        let screen: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.05).sin()).collect();
        let p = pupil_field(&screen, &vec![0.0; n * n], [0.0, 0.0], &g, 1.57e-6).unwrap();
        let f = focal_field(&p, &g, 2.0, 1.57e-6, 4).unwrap();
        let fiber = FiberModel::new(2.0, 5.6e-6, 1.57e-6).unwrap();
        let eta = coupling_efficiency(&f, &fiber).unwrap();
        let scaled = FocalField {
            field: f.field.iter().map(|z| z * Complex64::from_polar(3.7, 1.1)).collect(),
            ..f.clone()
        };
        let eta2 = coupling_efficiency(&scaled, &fiber).unwrap();
        assert!((eta - eta2).abs() <= 1e-12 * eta);
        assert!((0.0..=1.0).contains(&eta));
    }

    #[test]
    fn field_equal_to_mode_couples_fully() {
        let fiber = FiberModel::new(2.0, 8e-6, 1.57e-6).unwrap();
        let size = 64;
        let mut f = FocalField {
            field: vec![Complex64::new(0.0, 0.0); size * size],
            size,
            pixel_pitch: 1e-6,
        };
        for r in 0..size {
            for c in 0..size {
                let (x, y) = f.coords(r, c);
                f.field[r * size + c] = Complex64::new((-(x * x + y * y) / 64e-12).exp(), 0.0);
            }
        }
        assert!((coupling_efficiency(&f, &fiber).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_statistics() {
        let mut j = TiltJitter::new(2.5e-6, 50.0, 7);
        let n = 200_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let s = j.advance(1e-3);
            acc[0] += s[0] * s[0];
            acc[1] += s[1] * s[1];
        }
        for a in acc {
            let rms = (a / n as f64).sqrt();
            assert!((rms - 2.5e-6).abs() < 0.05 * 2.5e-6, "{rms}");
        }
        let mut off = TiltJitter::new(0.0, 50.0, 7);
        assert_eq!(off.advance(1e-3), [0.0, 0.0]);
    }

    #[test]
    fn flat_wavefront_optimum() {
        let g = PupilGeometry::new(0.4, 64);
        let opt = optimize_mode_radius(&g, 2.0, 1.57e-6, 8).unwrap();
        // analytic optimum: β = R/W = 1.1209 with W = λf/(πw)
        let w_expect = 2.0 * 1.1209 * 1.57e-6 * 2.0 / (PI * 0.4);
        assert!((opt.efficiency - FLAT_COUPLING_OPTIMUM).abs() < 5e-3, "{}", opt.efficiency);
        assert!((opt.mode_field_radius / w_expect - 1.0).abs() < 0.02);
        assert!(opt.bracket.0 < opt.mode_field_radius && opt.mode_field_radius < opt.bracket.1);
    }

    #[test]
    fn pupil_and_focal_routes_agree() {
        let g = PupilGeometry::new(0.4, 32);
        let n = g.grid_size;
        let lambda = 1.57e-6;
        let fiber = FiberModel::new(2.0, 0.7137 * lambda * 2.0 / 0.4, lambda).unwrap();
        let grid = PupilGrid::new(n);
        let coupler = PupilCoupler::new(&grid, &g, &fiber);
        for seed in 0..4u64 {
            let screen = crate::turbulence::generate_screen(0.15, 25.0, 128, 0.4 / 32.0, seed).unwrap();
            let window: Vec<f64> = (0..n * n).map(|i| screen.at((i / n) as i64, (i % n) as i64)).collect();
            let p = pupil_field(&window, &vec![0.0; n * n], [0.0, 0.0], &g, lambda).unwrap();
            let focal = coupling_efficiency(&focal_field(&p, &g, 2.0, lambda, 8).unwrap(), &fiber).unwrap();
            let disk: Vec<f64> = grid.inside().iter().map(|&i| window[i]).collect();
            let fast = coupler.efficiency(&disk);
            assert!((fast - focal).abs() < 5e-3, "seed {seed}: {fast} vs {focal}");
        }
    }
}
