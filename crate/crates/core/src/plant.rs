//! The receiver as seen by the optimizer: turbulence (or a static
//! aberration) through the tracking loop and the deformable mirror, measured
//! as fiber-coupled power.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::PupilGrid;
use crate::optics::{
    optimize_mode_radius, DeformableMirror, FiberModel, ModalMap, PupilCoupler, PupilGeometry,
    SampledMirror, TiltJitter,
};
use crate::turbulence::{mean_gradient, FrozenFlow, PhaseScreen, ScreenParams, TurbulenceScenario};
use crate::zernike::ZernikeBasis;
use crate::{Error, Result};

/// One metric reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    /// Measured metric, including detector noise.
    pub j: f64,
    /// Noise-free coupling efficiency at the measurement instant.
    pub eta: f64,
    /// Actuators clamped for this reading.
    pub saturated: usize,
}

/// Anything the optimizers can probe with a voltage vector.
pub trait MetricEvaluator {
    fn evaluate(&mut self, voltages: &[f64]) -> MetricSample;

    /// Lets simulated time pass without a reading.
    fn idle(&mut self, _dt: f64) {}

    /// Delay between applying a command and reading the metric.
    fn latency(&self) -> f64 {
        0.0
    }
}

impl<F: FnMut(&[f64]) -> f64> MetricEvaluator for F {
    fn evaluate(&mut self, voltages: &[f64]) -> MetricSample {
        let j = self(voltages);
        MetricSample {
            j,
            eta: j,
            saturated: 0,
        }
    }
}

/// Static description of a receiver; [`Plant::new`] instantiates it for a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub scenario: TurbulenceScenario,
    /// Pupil pixels across the aperture.
    pub pupil_pixels: usize,
    /// Phase-screen side in pixels.
    pub screen_size: usize,
    /// Subharmonic low-frequency compensation of the screen.
    pub subharmonics: bool,
    pub focal_length: f64,
    /// `None` selects the flat-wavefront optimum.
    pub mode_field_radius: Option<f64>,
    /// Zero-padding for the focal-plane mode-radius search.
    pub padding: usize,
    pub mirror: DeformableMirror,
    /// Tracking loop removes the aperture-averaged tilt of the turbulence.
    pub apt_removes_tilt: bool,
    /// Residual tracking jitter, radians RMS per axis.
    pub jitter_rms: f64,
    /// Jitter low-pass corner, Hz.
    pub jitter_bandwidth: f64,
    /// Relative σ of multiplicative detector noise on `J`.
    pub metric_noise: f64,
    /// Readout latency, seconds.
    pub readout_latency: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            scenario: TurbulenceScenario::default(),
            pupil_pixels: 32,
            screen_size: 2048,
            subharmonics: false,
            focal_length: 2.0,
            mode_field_radius: None,
            padding: 4,
            mirror: DeformableMirror::forty_actuator(),
            apt_removes_tilt: true,
            jitter_rms: 2.5e-6,
            jitter_bandwidth: 50.0,
            metric_noise: 0.01,
            readout_latency: 900e-6,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.pupil_pixels < 16 || self.pupil_pixels % 2 != 0 {
            return Err(Error::config("pupil grid must be even and at least 16 px"));
        }
        if !(self.focal_length > 0.0) {
            return Err(Error::config("focal length must be positive"));
        }
        if let Some(w) = self.mode_field_radius {
            if !(w > 0.0) {
                return Err(Error::config("mode field radius must be positive"));
            }
        }
        if self.jitter_rms < 0.0 || !(self.jitter_bandwidth > 0.0) {
            return Err(Error::config(
                "jitter RMS must be non-negative and its bandwidth positive",
            ));
        }
        if !(self.metric_noise >= 0.0) || !(self.readout_latency >= 0.0) {
            return Err(Error::config("metric noise and readout latency must be non-negative"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> PupilGeometry {
        PupilGeometry::new(self.scenario.aperture, self.pupil_pixels)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.scenario.aperture / self.pupil_pixels as f64
    }

    /// Fiber with the configured or flat-wavefront-optimal mode radius.
    pub fn fiber(&self) -> Result<FiberModel> {
        let lambda = self.scenario.signal_wavelength;
        let w = match self.mode_field_radius {
            Some(w) => w,
            None => {
                optimize_mode_radius(&self.geometry(), self.focal_length, lambda, self.padding)?
                    .mode_field_radius
            }
        };
        FiberModel::new(self.focal_length, w, lambda)
    }

    /// Phase screen at the signal wavelength for a turbulence seed.
    pub fn screen(&self, seed: u64) -> Result<PhaseScreen> {
        let mut p = ScreenParams::new(
            self.scenario.r0_signal(),
            self.scenario.outer_scale,
            self.screen_size,
            self.pixel_pitch(),
            seed,
        );
        p.wavelength_ref = self.scenario.signal_wavelength;
        p.aperture = Some(self.scenario.aperture);
        p.subharmonics = self.subharmonics;
        PhaseScreen::generate(&p)
    }
}

/// Independent generator for stream `stream` of a run seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const JITTER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone)]
enum Source {
    Flow(FrozenFlow),
    /// Fixed disk-pixel phase.
    Static(Vec<f64>),
}

/// A seeded receiver instance.
#[derive(Debug, Clone)]
pub struct Plant {
    source: Source,
    grid: PupilGrid,
    mirror: SampledMirror,
    coupler: PupilCoupler,
    fiber: FiberModel,
    jitter: TiltJitter,
    noise: ChaCha8Rng,
    metric_noise: f64,
    apt_removes_tilt: bool,
    /// `k·D/2`: jitter angle to phase slope across the normalized pupil.
    tilt_scale: f64,
    pitch: f64,
    latency: f64,
    time: f64,
    window: Vec<f64>,
    disk: Vec<f64>,
    dm: Vec<f64>,
}

impl Plant {
    /// Generates the screen for `seed` and builds the receiver.
    pub fn new(config: &PlantConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let screen = config.screen(seed)?;
        Self::with_screen(config, screen, seed)
    }

    /// Builds the receiver around an existing screen at the signal wavelength.
    pub fn with_screen(config: &PlantConfig, screen: PhaseScreen, seed: u64) -> Result<Self> {
        config.validate()?;
        let flow = FrozenFlow::new(screen, config.pupil_pixels, config.scenario.wind)?;
        Self::build(config, Source::Flow(flow), seed)
    }

    /// Receiver looking through a fixed full-grid aberration instead of turbulence.
    pub fn with_static_phase(config: &PlantConfig, phase: &[f64], seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.pupil_pixels;
        if phase.len() != n * n {
            return Err(Error::Geometry(format!(
                "static phase has {} samples for a {n}x{n} pupil",
                phase.len()
            )));
        }
        let grid = PupilGrid::new(n);
        let disk = grid.inside().iter().map(|&i| phase[i]).collect();
        Self::build(config, Source::Static(disk), seed)
    }

    fn build(config: &PlantConfig, source: Source, seed: u64) -> Result<Self> {
        let n = config.pupil_pixels;
        let grid = PupilGrid::new(n);
        let fiber = config.fiber()?;
        let coupler = PupilCoupler::new(&grid, &config.geometry(), &fiber);
        let mut jitter_seed = substream(seed, JITTER_STREAM);
        let area = grid.area();
        Ok(Plant {
            source,
            mirror: config.mirror.sample(n),
            coupler,
            fiber,
            jitter: TiltJitter::new(config.jitter_rms, config.jitter_bandwidth, jitter_seed.random()),
            noise: substream(seed, NOISE_STREAM),
            metric_noise: config.metric_noise,
            apt_removes_tilt: config.apt_removes_tilt,
            tilt_scale: PI * config.scenario.aperture / config.scenario.signal_wavelength,
            pitch: config.pixel_pitch(),
            latency: config.readout_latency,
            time: 0.0,
            window: vec![0.0; n * n],
            disk: vec![0.0; area],
            dm: vec![0.0; area],
            grid,
        })
    }

    pub fn grid(&self) -> &PupilGrid {
        &self.grid
    }

    pub fn mirror(&self) -> &SampledMirror {
        &self.mirror
    }

    pub fn fiber(&self) -> &FiberModel {
        &self.fiber
    }

    pub fn actuator_count(&self) -> usize {
        self.mirror.actuator_count()
    }

    /// Simulated seconds since construction.
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Coupling of an aberration-free pupil through this receiver.
    pub fn flat_efficiency(&self) -> f64 {
        self.coupler.efficiency(&vec![0.0; self.grid.area()])
    }

    /// True once a frozen-flow source has wrapped around its screen.
    pub fn has_wrapped(&self) -> bool {
        matches!(&self.source, Source::Flow(f) if f.has_wrapped())
    }

    /// Turbulence phase after the tracking loop, on the disk pixels, without jitter.
    pub fn residual_phase(&mut self) -> Vec<f64> {
        self.load_disk_phase();
        self.disk.clone()
    }

    fn load_disk_phase(&mut self) {
        match &self.source {
            Source::Static(p) => self.disk.copy_from_slice(p),
            Source::Flow(flow) => {
                flow.sample_window(&mut self.window);
                for (d, &i) in self.disk.iter_mut().zip(self.grid.inside()) {
                    *d = self.window[i];
                }
                if self.apt_removes_tilt {
                    let n = self.grid.size();
                    let g = mean_gradient(&self.window, n, self.grid.mask(), self.pitch);
                    let half = self.grid.size() as f64 / 2.0 * self.pitch;
                    let (sx, sy) = (g[0] * half, g[1] * half);
                    for (d, &i) in self.disk.iter_mut().zip(self.grid.inside()) {
                        *d -= sx * self.grid.x()[i] + sy * self.grid.y()[i];
                    }
                }
            }
        }
    }

    /// Reads the metric now for the given voltages (clamped to the mirror limits).
    pub fn measure(&mut self, voltages: &[f64]) -> MetricSample {
        self.load_disk_phase();
        let tilt = self.jitter.current();
        if tilt != [0.0, 0.0] {
            let (tx, ty) = (self.tilt_scale * tilt[0], self.tilt_scale * tilt[1]);
            for (d, &i) in self.disk.iter_mut().zip(self.grid.inside()) {
                *d += tx * self.grid.x()[i] + ty * self.grid.y()[i];
            }
        }
        let mut saturated = 0;
        if voltages.iter().any(|v| *v != 0.0) {
            let clamped = self.mirror.clamp(voltages);
            saturated = clamped.saturated;
            self.mirror.disk_phase(&clamped.voltages, &mut self.dm);
            for (d, m) in self.disk.iter_mut().zip(&self.dm) {
                *d -= m;
            }
        }
        let eta = self.coupler.efficiency(&self.disk);
        let j = if self.metric_noise > 0.0 {
            eta * (1.0 + self.metric_noise * self.noise.sample::<f64, _>(StandardNormal))
        } else {
            eta
        };
        MetricSample { j, eta, saturated }
    }

    /// Advances turbulence and jitter by `dt` seconds.
    pub fn advance(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        if let Source::Flow(f) = &mut self.source {
            f.advance(dt);
        }
        self.jitter.advance(dt);
        self.time += dt;
    }

    /// Modal coefficients of the best `basis` fit to the current residual phase,
    /// mapped to voltages. This is the ceiling a modal corrector can reach on
    /// a frozen screen.
    pub fn best_modal_voltages(&mut self, basis: &ZernikeBasis, map: &ModalMap) -> Result<Vec<f64>> {
        if basis.grid_size() != self.grid.size() {
            return Err(Error::Geometry("basis and pupil grids differ".into()));
        }
        self.load_disk_phase();
        let mut full = vec![0.0; self.grid.len()];
        for (&i, d) in self.grid.inside().iter().zip(&self.disk) {
            full[i] = *d;
        }
        let fit = basis.fit(&full)?;
        map.apply(&fit.coefficients)
    }
}

impl MetricEvaluator for Plant {
    /// Applies the command, waits one readout latency, then reads.
    fn evaluate(&mut self, voltages: &[f64]) -> MetricSample {
        self.advance(self.latency);
        self.measure(voltages)
    }

    fn idle(&mut self, dt: f64) {
        self.advance(dt);
    }

    fn latency(&self) -> f64 {
        self.latency
    }
}
