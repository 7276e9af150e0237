//! Kolmogorov / von Kármán phase screens, frozen-flow evolution and the
//! angle-of-arrival Fried-parameter estimator.
//!
//! Screens are synthesized in the Fourier domain with six levels of
//! subharmonics added for low-order fidelity. Phase is in radians at the
//! screen's reference wavelength.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fourier::{bin_frequency, Fft2};
use crate::{Error, Result};

/// Kolmogorov phase structure-function coefficient: `D(r) = 6.88 (r/r0)^{5/3}`.
pub const STRUCTURE_COEFFICIENT: f64 = 6.88;

/// Levels of 3×3 subharmonic frequencies added below the FFT grid's first bin.
pub const SUBHARMONIC_LEVELS: usize = 6;

/// Power for a subharmonic cell of width `width` centred on `(fx, fy)`.
///
/// At these frequencies `f·r ≪ 1`, so a cell adds structure in proportion to
/// `f²·PSD`; the cell's `f²`-weighted mean PSD is placed at its centre.
fn subharmonic_psd(fx: f64, fy: f64, width: f64, r0: f64, outer_scale: f64) -> f64 {
    const M: usize = 8;
    let mut acc = 0.0;
    for i in 0..M {
        let u = fx + width * ((i as f64 + 0.5) / M as f64 - 0.5);
        for j in 0..M {
            let v = fy + width * ((j as f64 + 0.5) / M as f64 - 0.5);
            acc += (u * u + v * v) * phase_psd(u.hypot(v), r0, outer_scale);
        }
    }
    acc / (M * M) as f64 / (fx * fx + fy * fy)
}

/// Fried parameter at `wavelength_target` given its value at `wavelength_ref`.
pub fn scale_r0(r0_ref: f64, wavelength_ref: f64, wavelength_target: f64) -> f64 {
    r0_ref * (wavelength_target / wavelength_ref).powf(1.2)
}

/// von Kármán phase power spectral density at spatial frequency `f` (cycles/m).
///
/// `outer_scale = f64::INFINITY` gives the pure Kolmogorov spectrum.
pub fn phase_psd(f: f64, r0: f64, outer_scale: f64) -> f64 {
    let f0_sq = if outer_scale.is_finite() {
        outer_scale.powi(-2)
    } else {
        0.0
    };
    0.023 * r0.powf(-5.0 / 3.0) * (f * f + f0_sq).powf(-11.0 / 6.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenParams {
    /// Fried parameter at `wavelength_ref`, meters.
    pub r0: f64,
    /// Outer scale in meters; `f64::INFINITY` allowed.
    pub outer_scale: f64,
    /// Pixels per side; must be even.
    pub size: usize,
    /// Meters per pixel.
    pub pixel_pitch: f64,
    pub wavelength_ref: f64,
    pub seed: u64,
    /// When set, the screen must span at least four apertures.
    pub aperture: Option<f64>,
    /// Add low-frequency subharmonics. They restore large-scale power but
    /// make the screen non-periodic, so a wrapping frozen flow sees a seam.
    pub subharmonics: bool,
}

impl ScreenParams {
    pub fn new(r0: f64, outer_scale: f64, size: usize, pixel_pitch: f64, seed: u64) -> Self {
        ScreenParams {
            r0,
            outer_scale,
            size,
            pixel_pitch,
            wavelength_ref: 810e-9,
            seed,
            aperture: None,
            subharmonics: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return Err(Error::Domain(format!("r0 must be positive, got {}", self.r0)));
        }
        if !(self.outer_scale > 0.0) {
            return Err(Error::Domain(format!(
                "outer scale must be positive, got {}",
                self.outer_scale
            )));
        }
        if self.size < 2 || self.size % 2 != 0 {
            return Err(Error::Domain(format!(
                "screen side must be even and at least 2, got {}",
                self.size
            )));
        }
        if !(self.pixel_pitch > 0.0) || !(self.wavelength_ref > 0.0) {
            return Err(Error::Domain("pixel pitch and wavelength must be positive".into()));
        }
        if let Some(d) = self.aperture {
            let extent = self.size as f64 * self.pixel_pitch;
            if extent < 4.0 * d {
                return Err(Error::config(format!(
                    "screen spans {extent:.3} m but frozen-flow scrolling needs at least 4·D = {:.3} m",
                    4.0 * d
                )));
            }
        }
        Ok(())
    }
}

/// A square phase screen in radians at its reference wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseScreen {
    phase: Vec<f64>,
    size: usize,
    pixel_pitch: f64,
    r0: f64,
    wavelength_ref: f64,
    outer_scale: f64,
    seed: u64,
}

impl PhaseScreen {
    pub fn generate(params: &ScreenParams) -> Result<Self> {
        params.validate()?;
        let n = params.size;
        let dx = params.pixel_pitch;
        let df = 1.0 / (n as f64 * dx);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut gauss = || -> Complex64 {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        };

        let mut spectrum = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            let fy = bin_frequency(r, n) as f64 * df;
            for c in 0..n {
                let fx = bin_frequency(c, n) as f64 * df;
                let g = gauss();
                if r == 0 && c == 0 {
                    continue;
                }
                let amp = phase_psd(fx.hypot(fy), params.r0, params.outer_scale).sqrt() * df;
                spectrum[r * n + c] = g * amp;
            }
        }
        Fft2::new(n).inverse(&mut spectrum);
        let mut phase: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
        drop(spectrum);

        // Subharmonics: separable phasors over pixel coordinates centred on the screen.
        let coords: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * dx).collect();
        let mut low = vec![0.0; n * n];
        let levels = if params.subharmonics { SUBHARMONIC_LEVELS } else { 0 };
        for level in 1..=levels {
            let dfp = df / 3f64.powi(level as i32);
            for a in -1i32..=1 {
                for b in -1i32..=1 {
                    let g = gauss();
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let (fx, fy) = (a as f64 * dfp, b as f64 * dfp);
                    let cn = g * subharmonic_psd(fx, fy, dfp, params.r0, params.outer_scale).sqrt() * dfp;
                    let ex: Vec<Complex64> = coords
                        .iter()
                        .map(|&x| Complex64::from_polar(1.0, 2.0 * PI * fx * x))
                        .collect();
                    for (r, &y) in coords.iter().enumerate() {
                        let row = cn * Complex64::from_polar(1.0, 2.0 * PI * fy * y);
                        let out = &mut low[r * n..(r + 1) * n];
                        for (o, e) in out.iter_mut().zip(&ex) {
                            *o += (row * e).re;
                        }
                    }
                }
            }
        }
        let low_mean = low.iter().sum::<f64>() / low.len() as f64;
        let hi_mean = phase.iter().sum::<f64>() / phase.len() as f64;
        for (p, l) in phase.iter_mut().zip(&low) {
            *p += l - low_mean - hi_mean;
        }

        Ok(PhaseScreen {
            phase,
            size: n,
            pixel_pitch: dx,
            r0: params.r0,
            wavelength_ref: params.wavelength_ref,
            outer_scale: params.outer_scale,
            seed: params.seed,
        })
    }

    /// Wraps an existing grid, e.g. a screen read back from disk.
    pub fn from_grid(
        phase: Vec<f64>,
        size: usize,
        pixel_pitch: f64,
        r0: f64,
        wavelength_ref: f64,
        outer_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if phase.len() != size * size {
            return Err(Error::Geometry(format!(
                "{} samples for a {size}x{size} screen",
                phase.len()
            )));
        }
        Ok(PhaseScreen {
            phase,
            size,
            pixel_pitch,
            r0,
            wavelength_ref,
            outer_scale,
            seed,
        })
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    /// Side length in meters.
    pub fn extent(&self) -> f64 {
        self.size as f64 * self.pixel_pitch
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn wavelength_ref(&self) -> f64 {
        self.wavelength_ref
    }

    pub fn outer_scale(&self) -> f64 {
        self.outer_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Periodic lookup.
    pub fn at(&self, row: i64, col: i64) -> f64 {
        let n = self.size as i64;
        self.phase[(row.rem_euclid(n) * n + col.rem_euclid(n)) as usize]
    }

    /// Multiplies the phase by `s` (e.g. an amplitude ablation).
    pub fn scaled(&self, s: f64) -> Self {
        PhaseScreen {
            phase: self.phase.iter().map(|p| p * s).collect(),
            ..self.clone()
        }
    }

    /// Writes `<stem>.bin` (little-endian f64, row-major) and `<stem>.hdr`.
    pub fn write_binary(&self, stem: &Path) -> Result<()> {
        let header = format!(
            "grid_size = {}\npixel_pitch = {:e}\nr0 = {:e}\nwavelength = {:e}\nouter_scale = {}\nseed = {}\n",
            self.size,
            self.pixel_pitch,
            self.r0,
            self.wavelength_ref,
            if self.outer_scale.is_finite() {
                format!("{:e}", self.outer_scale)
            } else {
                "inf".to_string()
            },
            self.seed
        );
        crate::io::write_grid(&stem.with_extension("bin"), &self.phase)?;
        crate::io::atomic_write(&stem.with_extension("hdr"), header.as_bytes())
    }

    /// Reads a screen written by [`PhaseScreen::write_binary`].
    pub fn read_binary(stem: &Path) -> Result<Self> {
        let header = std::fs::read_to_string(stem.with_extension("hdr"))?;
        let mut fields = std::collections::HashMap::new();
        for line in header.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| Error::config(format!("screen header lacks '{k}'")))?
                .parse::<f64>()
                .map_err(|_| Error::config(format!("screen header field '{k}' is not a number")))
        };
        let size = get("grid_size")? as usize;
        let phase = crate::io::read_grid(&stem.with_extension("bin"))?;
        PhaseScreen::from_grid(
            phase,
            size,
            get("pixel_pitch")?,
            get("r0")?,
            get("wavelength")?,
            get("outer_scale")?,
            get("seed")? as u64,
        )
    }
}

/// Shorthand for [`PhaseScreen::generate`] at an 810 nm reference wavelength.
pub fn generate_screen(
    r0: f64,
    outer_scale: f64,
    grid_size: usize,
    pixel_pitch: f64,
    seed: u64,
) -> Result<PhaseScreen> {
    PhaseScreen::generate(&ScreenParams::new(r0, outer_scale, grid_size, pixel_pitch, seed))
}

/// Mean squared phase difference at integer pixel lags, averaged over both
/// axes and every pixel pair inside the grid. Pairs are not wrapped because a
/// subharmonic screen is not periodic.
pub fn structure_function(screen: &PhaseScreen, lags: &[usize]) -> Vec<f64> {
    let n = screen.size();
    let p = screen.phase();
    lags.iter()
        .map(|&lag| {
            if lag >= n {
                return f64::NAN;
            }
            let mut acc = 0.0;
            for r in 0..n {
                for c in 0..n - lag {
                    acc += (p[r * n + c + lag] - p[r * n + c]).powi(2);
                    acc += (p[(c + lag) * n + r] - p[c * n + r]).powi(2);
                }
            }
            acc / (2 * n * (n - lag)) as f64
        })
        .collect()
}

/// Taylor frozen flow: a fixed screen translated by the wind past a square
/// aperture window.
///
/// The pattern seen at time `t` is `φ(x − v·t)`. Sub-pixel shifts are
/// interpolated bilinearly; the screen is periodic and the first wrap logs a
/// warning because later samples repeat earlier statistics.
#[derive(Debug, Clone)]
pub struct FrozenFlow {
    screen: PhaseScreen,
    window: usize,
    wind: [f64; 2],
    /// Accumulated shift in pixels, (x, y).
    shift: [f64; 2],
    origin: [f64; 2],
    wrapped: bool,
}

impl FrozenFlow {
    pub fn new(screen: PhaseScreen, window: usize, wind: [f64; 2]) -> Result<Self> {
        if window > screen.size() {
            return Err(Error::config(format!(
                "aperture window of {window} px exceeds the {} px screen",
                screen.size()
            )));
        }
        Ok(FrozenFlow {
            screen,
            window,
            wind,
            shift: [0.0, 0.0],
            origin: [0.0, 0.0],
            wrapped: false,
        })
    }

    /// Moves the window to the upwind edge of the screen, so the first
    /// traversal never straddles the periodic boundary. Needed for screens
    /// with subharmonics, which are not periodic.
    pub fn upwind_start(mut self) -> Self {
        let span = (self.screen.size() - self.window) as f64;
        for axis in 0..2 {
            self.origin[axis] = if self.wind[axis] > 0.0 { -span } else { 0.0 };
            self.shift[axis] = self.origin[axis];
        }
        self
    }

    pub fn screen(&self) -> &PhaseScreen {
        &self.screen
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    pub fn wind(&self) -> [f64; 2] {
        self.wind
    }

    pub fn set_wind(&mut self, wind: [f64; 2]) {
        self.wind = wind;
    }

    /// Total translation so far, in pixels.
    pub fn shift(&self) -> [f64; 2] {
        [self.shift[0] - self.origin[0], self.shift[1] - self.origin[1]]
    }

    /// True once the aperture has traversed a full screen period.
    pub fn has_wrapped(&self) -> bool {
        self.wrapped
    }

    /// Advances the flow by `dt` seconds.
    pub fn advance(&mut self, dt: f64) {
        let pitch = self.screen.pixel_pitch();
        for axis in 0..2 {
            let mut s = self.shift[axis] + self.wind[axis] * dt / pitch;
            let nearest = s.round();
            if (s - nearest).abs() < 1e-9 {
                s = nearest;
            }
            self.shift[axis] = s;
        }
        let n = self.screen.size() as f64;
        let travelled = [
            (self.shift[0] - self.origin[0]).abs(),
            (self.shift[1] - self.origin[1]).abs(),
        ];
        if !self.wrapped && (travelled[0] >= n || travelled[1] >= n) {
            self.wrapped = true;
            log::warn!(
                "frozen-flow screen (seed {}) wrapped after {:.1} m; later samples repeat earlier turbulence",
                self.screen.seed(),
                self.screen.extent()
            );
        }
    }

    /// Consuming form of [`FrozenFlow::advance`].
    pub fn evolve(mut self, dt: f64) -> Self {
        self.advance(dt);
        self
    }

    /// Samples the current aperture window into `out` (row-major, `window²`).
    pub fn sample_window(&self, out: &mut [f64]) {
        let w = self.window;
        assert_eq!(out.len(), w * w);
        let n = self.screen.size() as i64;
        let p = self.screen.phase();
        // window pixel (r, c) reads the screen at (r - sy, c - sx)
        let bx = (-self.shift[0]).floor();
        let by = (-self.shift[1]).floor();
        let (fx, fy) = (-self.shift[0] - bx, -self.shift[1] - by);
        let (bx, by) = (bx as i64, by as i64);
        let idx = |v: i64| v.rem_euclid(n) as usize;
        let nu = n as usize;
        if fx == 0.0 && fy == 0.0 {
            for r in 0..w {
                let row = idx(r as i64 + by) * nu;
                for c in 0..w {
                    out[r * w + c] = p[row + idx(c as i64 + bx)];
                }
            }
            return;
        }
        let cols: Vec<(usize, usize)> = (0..w as i64)
            .map(|c| (idx(c + bx), idx(c + bx + 1)))
            .collect();
        for r in 0..w {
            let r0 = idx(r as i64 + by) * nu;
            let r1 = idx(r as i64 + by + 1) * nu;
            for (c, &(c0, c1)) in cols.iter().enumerate() {
                let top = p[r0 + c0] * (1.0 - fx) + p[r0 + c1] * fx;
                let bottom = p[r1 + c0] * (1.0 - fx) + p[r1 + c1] * fx;
                out[r * w + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }

    pub fn window_phase(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.window * self.window];
        self.sample_window(&mut out);
        out
    }
}

/// Atmospheric condition and link geometry for one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceScenario {
    /// Fried parameter at 810 nm, meters.
    pub r0_at_810nm: f64,
    /// Receiver aperture diameter `D`, meters.
    pub aperture: f64,
    /// Wind velocity (x, y), m/s.
    pub wind: [f64; 2],
    pub signal_wavelength: f64,
    pub outer_scale: f64,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub loop_rate: f64,
}

pub const REFERENCE_WAVELENGTH: f64 = 810e-9;

impl Default for TurbulenceScenario {
    fn default() -> Self {
        TurbulenceScenario {
            r0_at_810nm: 0.074,
            aperture: 0.4,
            wind: [5.0, 0.0],
            signal_wavelength: 1570e-9,
            outer_scale: 25.0,
            duration: 20.0,
            loop_rate: 500.0,
        }
    }
}

impl TurbulenceScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0_at_810nm > 0.0) || !(self.aperture > 0.0) {
            return Err(Error::config("D/r0 must be positive"));
        }
        if !(self.loop_rate > 0.0) {
            return Err(Error::config("loop rate must be positive"));
        }
        if !(self.signal_wavelength > 0.0) || !(self.outer_scale > 0.0) || self.duration < 0.0 {
            return Err(Error::config("wavelength and outer scale must be positive"));
        }
        Ok(())
    }

    pub fn d_over_r0(&self) -> f64 {
        self.aperture / self.r0_at_810nm
    }

    /// Fried parameter at the signal wavelength.
    pub fn r0_signal(&self) -> f64 {
        scale_r0(self.r0_at_810nm, REFERENCE_WAVELENGTH, self.signal_wavelength)
    }
}

/// Screen sampling used to synthesize angle-of-arrival records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaSampling {
    pub pixels_across: usize,
    pub screen_size: usize,
}

impl Default for AoaSampling {
    fn default() -> Self {
        AoaSampling {
            pixels_across: 4,
            screen_size: 2048,
        }
    }
}

/// Mean phase gradient over the disk inscribed in a `w × w` window, rad/m,
/// from finite differences between neighbouring disk pixels.
///
/// For a uniformly illuminated pupil this is `k` times the focal-spot
/// centroid displacement divided by the focal length.
pub fn mean_gradient(window: &[f64], w: usize, mask: &[bool], pitch: f64) -> [f64; 2] {
    let (mut gx, mut nx, mut gy, mut ny) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..w {
        for c in 0..w {
            let i = r * w + c;
            if !mask[i] {
                continue;
            }
            if c + 1 < w && mask[i + 1] {
                gx += window[i + 1] - window[i];
                nx += 1;
            }
            if r + 1 < w && mask[i + w] {
                gy += window[i + w] - window[i];
                ny += 1;
            }
        }
    }
    [gx / (nx.max(1) as f64 * pitch), gy / (ny.max(1) as f64 * pitch)]
}

/// Aperture-averaged wavefront tilt angles (radians, x and y) seen through a
/// frozen-flow screen at `sample_rate` Hz.
///
/// The aperture starts on the upwind edge; records longer than one screen
/// traversal cross the non-periodic seam and are flagged with a warning.
pub fn angle_of_arrival_series(
    scenario: &TurbulenceScenario,
    n_samples: usize,
    sample_rate: f64,
    seed: u64,
    sampling: AoaSampling,
) -> Result<Vec<[f64; 2]>> {
    scenario.validate()?;
    if !(sample_rate > 0.0) {
        return Err(Error::config("sample rate must be positive"));
    }
    let pitch = scenario.aperture / sampling.pixels_across as f64;
    let mut params = ScreenParams::new(
        scenario.r0_at_810nm,
        scenario.outer_scale,
        sampling.screen_size,
        pitch,
        seed,
    );
    params.wavelength_ref = REFERENCE_WAVELENGTH;
    params.aperture = Some(scenario.aperture);
    let screen = PhaseScreen::generate(&params)?;
    let w = sampling.pixels_across;
    let grid = crate::grid::PupilGrid::new(w);
    let k = 2.0 * PI / REFERENCE_WAVELENGTH;
    let mut flow = FrozenFlow::new(screen, w, scenario.wind)?.upwind_start();
    let mut window = vec![0.0; w * w];
    let dt = 1.0 / sample_rate;
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        flow.sample_window(&mut window);
        let g = mean_gradient(&window, w, grid.mask(), pitch);
        out.push([g[0] / k, g[1] / k]);
        flow.advance(dt);
    }
    Ok(out)
}

/// `δ_α`: per-axis sample standard deviation, pooled as the root of the mean
/// of the two axis variances.
pub fn angle_deviation(series: &[[f64; 2]]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Domain("angle-of-arrival series needs at least two samples".into()));
    }
    let n = series.len() as f64;
    // shifted by the first sample so a constant series gives exactly zero
    let var = |axis: usize| {
        let d = |s: &[f64; 2]| s[axis] - series[0][axis];
        let mean = series.iter().map(d).sum::<f64>() / n;
        series.iter().map(|s| (d(s) - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(((var(0) + var(1)) / 2.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R0Estimate {
    pub r0: f64,
    pub d_over_r0: f64,
}

/// Fried parameter from the angle-of-arrival deviation:
/// `r0 = 3.18 k^{-6/5} D^{-1/5} δ_α^{-6/5}`.
pub fn estimate_r0(delta_alpha: f64, aperture: f64, wavenumber: f64) -> Result<R0Estimate> {
    if delta_alpha == 0.0 {
        return Err(Error::NoTurbulence);
    }
    if !(delta_alpha > 0.0) || !(aperture > 0.0) || !(wavenumber > 0.0) {
        return Err(Error::Domain(
            "angle deviation, aperture and wavenumber must be positive".into(),
        ));
    }
    let r0 = 3.18 * wavenumber.powf(-1.2) * aperture.powf(-0.2) * delta_alpha.powf(-1.2);
    Ok(R0Estimate {
        r0,
        d_over_r0: aperture / r0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r0_wavelength_scaling() {
        assert_eq!(scale_r0(0.074, 810e-9, 810e-9), 0.074);
        let r = scale_r0(0.074, 810e-9, 1570e-9);
        // (1570/810)^1.2 = 2.2128...
        assert!((r - 0.074 * (1570.0f64 / 810.0).powf(1.2)).abs() < 1e-15);
        assert!((r - 0.164).abs() < 0.001);
        assert!((scale_r0(0.042, 810e-9, 1570e-9) - 0.093).abs() < 0.001);
        let back = scale_r0(r, 1570e-9, 810e-9);
        assert!((back - 0.074).abs() < 1e-15);
    }

    #[test]
    fn odd_or_tiny_screens_rejected() {
        assert!(generate_screen(0.1, 25.0, 63, 0.01, 1).is_err());
        assert!(generate_screen(0.0, 25.0, 64, 0.01, 1).is_err());
        let mut p = ScreenParams::new(0.1, 25.0, 64, 0.01, 1);
        p.aperture = Some(0.4);
        assert!(matches!(PhaseScreen::generate(&p), Err(Error::Config { .. })));
        p.aperture = Some(0.16);
        assert!(PhaseScreen::generate(&p).is_ok());
    }

    #[test]
    fn screens_are_deterministic_and_seed_dependent() {
        let a = generate_screen(0.074, 25.0, 64, 0.01, 1).unwrap();
        let b = generate_screen(0.074, 25.0, 64, 0.01, 1).unwrap();
        let c = generate_screen(0.074, 25.0, 64, 0.01, 2).unwrap();
        assert_eq!(a.phase(), b.phase());
        assert_ne!(a.phase(), c.phase());
        let mean = a.phase().iter().sum::<f64>() / a.phase().len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn huge_r0_gives_negligible_aberration() {
        let s = generate_screen(10.0 * 0.64, 25.0, 64, 0.01, 3).unwrap();
        let var = s.phase().iter().map(|p| p * p).sum::<f64>() / s.phase().len() as f64;
        // piston-removed Kolmogorov variance over an aperture the size of the screen
        let bound = 1.0299 * 0.1f64.powf(5.0 / 3.0);
        assert!(var < bound, "{var} vs {bound}");
    }

    #[test]
    fn zero_wind_is_identity() {
        let s = generate_screen(0.1, 25.0, 64, 0.01, 4).unwrap();
        let flow = FrozenFlow::new(s, 16, [0.0, 0.0]).unwrap();
        let before = flow.window_phase();
        let after = flow.evolve(0.5).window_phase();
        assert_eq!(before, after);
    }

    #[test]
    fn one_pixel_shift_is_exact_roll() {
        let s = generate_screen(0.1, 25.0, 64, 0.00625, 4).unwrap();
        let wind = 5.0;
        let dt = 0.00625 / wind;
        let flow = FrozenFlow::new(s.clone(), 16, [wind, 0.0]).unwrap();
        let moved = flow.evolve(dt).window_phase();
        for r in 0..16i64 {
            for c in 0..16i64 {
                assert_eq!(moved[(r * 16 + c) as usize], s.at(r, c - 1));
            }
        }
    }

    #[test]
    fn half_pixel_shift_interpolates() {
        let s = generate_screen(0.1, 25.0, 64, 0.01, 5).unwrap();
        let flow = FrozenFlow::new(s.clone(), 8, [0.0, 1.0]).unwrap();
        let moved = flow.evolve(0.005).window_phase();
        for r in 0..8i64 {
            for c in 0..8i64 {
                let expect = 0.5 * (s.at(r, c) + s.at(r - 1, c));
                assert!((moved[(r * 8 + c) as usize] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upwind_start_stays_off_the_seam() {
        let s = generate_screen(0.1, 25.0, 32, 0.01, 7).unwrap();
        let flow = FrozenFlow::new(s.clone(), 8, [1.0, -1.0]).unwrap().upwind_start();
        assert_eq!(flow.shift(), [0.0, 0.0]);
        let w = flow.window_phase();
        assert_eq!(w[0], s.at(0, 24));
        let mut flow = flow;
        flow.advance(0.24);
        assert_eq!(flow.window_phase()[0], s.at(24, 0));
        assert!(!flow.has_wrapped());
        flow.advance(0.09);
        assert!(flow.has_wrapped());
    }

    #[test]
    fn wrap_is_flagged() {
        let s = generate_screen(0.1, 25.0, 32, 0.01, 6).unwrap();
        let mut flow = FrozenFlow::new(s, 8, [1.0, 0.0]).unwrap();
        flow.advance(0.31);
        assert!(!flow.has_wrapped());
        flow.advance(0.02);
        assert!(flow.has_wrapped());
    }

    #[test]
    fn estimator_homogeneity_and_wavelength_pairs() {
        let k = 2.0 * PI / 810e-9;
        let a = estimate_r0(2e-6, 0.4, k).unwrap();
        let b = estimate_r0(4e-6, 0.4, k).unwrap();
        assert!((b.r0 / a.r0 - 2f64.powf(-1.2)).abs() < 1e-12);

        // invert the estimator for a target r0 and feed it back
        let invert = |r0: f64| (3.18 * k.powf(-1.2) * 0.4f64.powf(-0.2) / r0).powf(1.0 / 1.2);
        let e = estimate_r0(invert(0.074), 0.4, k).unwrap();
        assert!((e.r0 - 0.074).abs() < 1e-12);
        assert!((e.d_over_r0 - 5.4).abs() < 0.01);
        let e = estimate_r0(invert(0.042), 0.4, k).unwrap();
        assert!((e.d_over_r0 - 9.5).abs() < 0.03);
    }

    #[test]
    fn zero_deviation_means_no_turbulence() {
        assert!(matches!(estimate_r0(0.0, 0.4, 1e7), Err(Error::NoTurbulence)));
        assert!(matches!(estimate_r0(-1.0, 0.4, 1e7), Err(Error::Domain(_))));
    }

    #[test]
    fn frozen_screen_gives_constant_series() {
        let mut sc = TurbulenceScenario::default();
        sc.wind = [0.0, 0.0];
        let sampling = AoaSampling {
            pixels_across: 16,
            screen_size: 128,
        };
        let s = angle_of_arrival_series(&sc, 50, 1000.0, 9, sampling).unwrap();
        assert!(s.iter().all(|v| v == &s[0]));
        assert!(matches!(
            angle_deviation(&s).and_then(|d| estimate_r0(d, 0.4, 1.0)),
            Err(Error::NoTurbulence)
        ));
    }

    #[test]
    fn binary_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_screen(0.1, f64::INFINITY, 32, 0.01, 8).unwrap();
        let stem = dir.path().join("screen");
        s.write_binary(&stem).unwrap();
        let bytes = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), 32 * 32 * 8);
        assert_eq!(f64::from_le_bytes(bytes[..8].try_into().unwrap()), s.phase()[0]);
        let back = PhaseScreen::read_binary(&stem).unwrap();
        assert_eq!(back, s);
    }
}
