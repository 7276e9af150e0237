//! Scenario configuration: a sectioned TOML file, validated before any
//! computation starts.
//!
//! Unknown keys are rejected. Errors carry the line of the offending key
//! when it can be located in the source text.

use serde::Deserialize;

use crate::control::{LoopTiming, Optimizer, OptimizerKind};
use crate::metrics::ReferenceValues;
use crate::optics::{DeformableMirror, DEFAULT_OUTER_RADIUS, DEFAULT_RINGS, MIN_PADDING};
use crate::plant::PlantConfig;
use crate::turbulence::TurbulenceScenario;
use crate::zernike::parse_mode_list;
use crate::{Error, Result};

/// Names of the bundled presets.
pub const PRESETS: [&str; 4] = ["d_r0_5p4", "d_r0_9p5", "race_static", "race_identity"];

fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "d_r0_5p4" => Some(include_str!("../presets/d_r0_5p4.toml")),
        "d_r0_9p5" => Some(include_str!("../presets/d_r0_9p5.toml")),
        "race_static" => Some(include_str!("../presets/race_static.toml")),
        "race_identity" => Some(include_str!("../presets/race_identity.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    /// Simulated seconds per run.
    pub duration: f64,
    /// Base seed; seed `i` of an ensemble is `seed + i`.
    pub seed: u64,
    pub output: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "scenario".into(),
            duration: 20.0,
            seed: 1,
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceSection {
    pub r0_810nm: f64,
    pub outer_scale: f64,
    /// m/s.
    pub wind_speed: f64,
    /// Heading of the wind from the +x axis, degrees.
    pub wind_direction_deg: f64,
    /// Number of independent screens (seeds) per experiment.
    pub seeds: usize,
    pub screen_size: usize,
    pub subharmonics: bool,
}

impl Default for TurbulenceSection {
    fn default() -> Self {
        let s = TurbulenceScenario::default();
        TurbulenceSection {
            r0_810nm: s.r0_at_810nm,
            outer_scale: s.outer_scale,
            wind_speed: s.wind[0].hypot(s.wind[1]),
            wind_direction_deg: s.wind[1].atan2(s.wind[0]).to_degrees(),
            seeds: 1,
            screen_size: 2048,
            subharmonics: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    /// Aperture diameter, m.
    pub aperture: f64,
    pub focal_length: f64,
    pub signal_wavelength: f64,
    /// Pupil samples across the aperture.
    pub pupil_pixels: usize,
    pub padding: usize,
    /// Fiber mode-field radius, m; optimized for a flat wavefront when absent.
    pub mode_field_radius: Option<f64>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            aperture: 0.4,
            focal_length: 2.0,
            signal_wavelength: 1570e-9,
            pupil_pixels: 32,
            padding: 4,
            mode_field_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorSection {
    pub rings: Vec<usize>,
    /// Optional cross-check against the ring counts.
    pub actuators: Option<usize>,
    /// Radius of the outermost ring, pupil radii.
    pub outer_ring_radius: f64,
    /// Gaussian influence width in actuator spacings.
    pub influence_sigma: f64,
    /// Phase (rad) per volt at the actuator centre.
    pub voltage_gain: f64,
    pub voltage_limit: f64,
}

impl Default for MirrorSection {
    fn default() -> Self {
        MirrorSection {
            rings: DEFAULT_RINGS.to_vec(),
            actuators: None,
            outer_ring_radius: DEFAULT_OUTER_RADIUS,
            influence_sigma: 0.7,
            voltage_gain: 1.0,
            voltage_limit: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    /// Noll modes driven by the modal optimizer, e.g. `"4-15"`.
    pub modes: String,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection { modes: "4-15".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub loop_rate: f64,
    pub readout_latency: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        let t = LoopTiming::default();
        TimingSection {
            loop_rate: t.iteration_rate,
            readout_latency: t.readout_latency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// `"mspgd"` or `"spgd"`.
    pub kind: String,
    pub gain: f64,
    pub amplitude: f64,
    /// Replace gain and amplitude by an autotune winner before running.
    pub autotune: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: "mspgd".into(),
            gain: 20.0,
            amplitude: 0.07,
            autotune: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AptSection {
    pub remove_tilt: bool,
    /// Residual tracking jitter per axis, rad RMS.
    pub jitter_rms: f64,
    /// Jitter low-pass corner, Hz.
    pub jitter_bandwidth: f64,
}

impl Default for AptSection {
    fn default() -> Self {
        AptSection {
            remove_tilt: true,
            jitter_rms: 2.5e-6,
            jitter_bandwidth: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Relative RMS of the multiplicative detector noise.
    pub metric: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { metric: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutotuneSection {
    pub amplitudes: Vec<f64>,
    pub gains: Vec<f64>,
    pub trial_duration: f64,
}

impl Default for AutotuneSection {
    fn default() -> Self {
        AutotuneSection {
            amplitudes: vec![0.03, 0.05, 0.07, 0.1],
            gains: vec![5.0, 10.0, 20.0, 40.0],
            trial_duration: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceSection {
    pub trials: usize,
    pub duration: f64,
    /// RMS of the static aberration, rad.
    pub aberration_rms: f64,
    pub aberration_modes: String,
    pub spgd_gain: f64,
    pub spgd_amplitude: f64,
    /// Drive the modal optimizer through an identity map over all actuators.
    pub identity_map: bool,
}

impl Default for RaceSection {
    fn default() -> Self {
        RaceSection {
            trials: 20,
            duration: 4.0,
            aberration_rms: 1.0,
            aberration_modes: "4-9".into(),
            spgd_gain: 10.0,
            spgd_amplitude: 0.1,
            identity_map: false,
        }
    }
}

/// Synthesis of angle-of-arrival records for the r0 estimate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoaSection {
    pub pixels_across: usize,
    pub screen_size: usize,
    pub samples: usize,
    pub seeds: usize,
    pub outer_scale: f64,
}

impl Default for AoaSection {
    fn default() -> Self {
        AoaSection {
            pixels_across: 4,
            screen_size: 2048,
            samples: 2000,
            seeds: 51,
            outer_scale: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub improvement_db: f64,
    pub rsd_open: f64,
    pub rsd_closed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub turbulence: TurbulenceSection,
    pub geometry: GeometrySection,
    pub mirror: MirrorSection,
    pub basis: BasisSection,
    pub timing: TimingSection,
    pub optimizer: OptimizerSection,
    pub apt: AptSection,
    pub noise: NoiseSection,
    pub autotune: AutotuneSection,
    pub race: RaceSection,
    pub aoa: AoaSection,
    pub reference: Option<ReferenceSection>,
}

/// First violated rule: section, key and message.
type Violation = (&'static str, &'static str, String);

fn positive(v: f64) -> bool {
    v > 0.0 && !v.is_nan()
}

impl ScenarioConfig {
    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.check(Some(text))?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| {
            Error::config(format!("unknown preset '{name}'; available: {}", PRESETS.join(", ")))
        })?;
        Self::parse(text)
    }

    /// Source text of a bundled preset.
    pub fn preset_source(name: &str) -> Option<&'static str> {
        preset_text(name)
    }

    /// Validates a configuration built in code.
    pub fn validate(&self) -> Result<()> {
        self.check(None)
    }

    fn check(&self, text: Option<&str>) -> Result<()> {
        match self.violation() {
            None => Ok(()),
            Some((section, key, message)) => Err(Error::Config {
                line: text.and_then(|t| line_of_key(t, section, key)),
                message: format!("[{section}] {key}: {message}"),
            }),
        }
    }

    fn violation(&self) -> Option<Violation> {
        let run = &self.run;
        if !(run.duration >= 0.0) || !run.duration.is_finite() {
            return Some(("run", "duration", "must be a finite number of seconds".into()));
        }
        if run.duration == 0.0 {
            return Some(("run", "duration", "0 s gives an empty series".into()));
        }
        if run.name.trim().is_empty() {
            return Some(("run", "name", "must not be empty".into()));
        }

        let t = &self.turbulence;
        if !positive(t.r0_810nm) || !t.r0_810nm.is_finite() {
            return Some(("turbulence", "r0_810nm", "must be positive".into()));
        }
        if !positive(t.outer_scale) {
            return Some(("turbulence", "outer_scale", "must be positive (inf allowed)".into()));
        }
        if !(t.wind_speed >= 0.0) || !t.wind_speed.is_finite() {
            return Some(("turbulence", "wind_speed", "must be non-negative".into()));
        }
        if !t.wind_direction_deg.is_finite() {
            return Some(("turbulence", "wind_direction_deg", "must be finite".into()));
        }
        if t.seeds == 0 {
            return Some(("turbulence", "seeds", "at least one seed is needed".into()));
        }

        let g = &self.geometry;
        if !positive(g.aperture) {
            return Some(("geometry", "aperture", "must be positive".into()));
        }
        if !positive(g.focal_length) {
            return Some(("geometry", "focal_length", "must be positive".into()));
        }
        if !positive(g.signal_wavelength) {
            return Some(("geometry", "signal_wavelength", "must be positive".into()));
        }
        if g.pupil_pixels < 16 || g.pupil_pixels % 2 != 0 {
            return Some(("geometry", "pupil_pixels", "must be even and at least 16".into()));
        }
        if (g.padding as f64) < MIN_PADDING {
            return Some((
                "geometry",
                "padding",
                format!("must be at least {} to resolve the fiber mode", MIN_PADDING.ceil()),
            ));
        }
        if let Some(w) = g.mode_field_radius {
            if !positive(w) {
                return Some(("geometry", "mode_field_radius", "must be positive".into()));
            }
        }
        if t.screen_size % 2 != 0 || t.screen_size < 4 * g.pupil_pixels {
            return Some((
                "turbulence",
                "screen_size",
                format!("must be even and span at least four apertures ({} px)", 4 * g.pupil_pixels),
            ));
        }

        let m = &self.mirror;
        if m.rings.is_empty() || m.rings.contains(&0) {
            return Some(("mirror", "rings", "every ring needs at least one actuator".into()));
        }
        if let Some(n) = m.actuators {
            let total: usize = m.rings.iter().sum();
            if n != total {
                return Some((
                    "mirror",
                    "actuators",
                    format!("{n} does not match the {total} actuators of the rings"),
                ));
            }
        }
        for (key, v) in [
            ("outer_ring_radius", m.outer_ring_radius),
            ("influence_sigma", m.influence_sigma),
            ("voltage_gain", m.voltage_gain),
            ("voltage_limit", m.voltage_limit),
        ] {
            if !positive(v) {
                return Some(("mirror", key, "must be positive".into()));
            }
        }

        if let Err(e) = parse_mode_list(&self.basis.modes) {
            return Some(("basis", "modes", error_message(e)));
        }

        let tm = &self.timing;
        if !positive(tm.loop_rate) {
            return Some(("timing", "loop_rate", "must be positive".into()));
        }
        if !positive(tm.readout_latency) {
            return Some(("timing", "readout_latency", "must be positive".into()));
        }
        if let Err(e) = self.loop_timing().validate() {
            return Some(("timing", "readout_latency", error_message(e)));
        }

        let o = &self.optimizer;
        if o.kind.parse::<OptimizerKind>().is_err() {
            return Some(("optimizer", "kind", format!("unknown optimizer '{}'", o.kind)));
        }
        if !positive(o.gain) {
            return Some(("optimizer", "gain", "must be positive".into()));
        }
        if !positive(o.amplitude) {
            return Some(("optimizer", "amplitude", "must be positive".into()));
        }

        let a = &self.apt;
        if !(a.jitter_rms >= 0.0) {
            return Some(("apt", "jitter_rms", "must be non-negative".into()));
        }
        if !positive(a.jitter_bandwidth) {
            return Some(("apt", "jitter_bandwidth", "must be positive".into()));
        }
        if !(self.noise.metric >= 0.0) {
            return Some(("noise", "metric", "must be non-negative".into()));
        }

        let at = &self.autotune;
        if at.amplitudes.is_empty() || at.amplitudes.iter().any(|v| !positive(*v)) {
            return Some(("autotune", "amplitudes", "must be a non-empty list of positive values".into()));
        }
        if at.gains.is_empty() || at.gains.iter().any(|v| !(*v >= 0.0)) {
            return Some(("autotune", "gains", "must be a non-empty list of non-negative values".into()));
        }
        if !(at.trial_duration >= crate::control::MIN_TRIAL_DURATION) {
            return Some((
                "autotune",
                "trial_duration",
                format!("must be at least {} s", crate::control::MIN_TRIAL_DURATION),
            ));
        }

        let r = &self.race;
        if r.trials == 0 {
            return Some(("race", "trials", "at least one trial is needed".into()));
        }
        if !positive(r.duration) {
            return Some(("race", "duration", "must be positive".into()));
        }
        if !positive(r.aberration_rms) {
            return Some(("race", "aberration_rms", "must be positive".into()));
        }
        if let Err(e) = parse_mode_list(&r.aberration_modes) {
            return Some(("race", "aberration_modes", error_message(e)));
        }
        if !positive(r.spgd_gain) {
            return Some(("race", "spgd_gain", "must be positive".into()));
        }
        if !positive(r.spgd_amplitude) {
            return Some(("race", "spgd_amplitude", "must be positive".into()));
        }

        let q = &self.aoa;
        if q.pixels_across < 2 {
            return Some(("aoa", "pixels_across", "must be at least 2".into()));
        }
        if q.screen_size % 2 != 0 || q.screen_size < 4 * q.pixels_across {
            return Some(("aoa", "screen_size", "must be even and span at least four apertures".into()));
        }
        if q.samples < 2 {
            return Some(("aoa", "samples", "must be at least 2".into()));
        }
        if q.seeds == 0 {
            return Some(("aoa", "seeds", "at least one seed is needed".into()));
        }
        if !positive(q.outer_scale) {
            return Some(("aoa", "outer_scale", "must be positive (inf allowed)".into()));
        }
        None
    }

    pub fn scenario(&self) -> TurbulenceScenario {
        let t = &self.turbulence;
        let heading = t.wind_direction_deg.to_radians();
        TurbulenceScenario {
            r0_at_810nm: t.r0_810nm,
            aperture: self.geometry.aperture,
            wind: [t.wind_speed * heading.cos(), t.wind_speed * heading.sin()],
            signal_wavelength: self.geometry.signal_wavelength,
            outer_scale: t.outer_scale,
            duration: self.run.duration,
            loop_rate: self.timing.loop_rate,
        }
    }

    pub fn loop_timing(&self) -> LoopTiming {
        LoopTiming {
            iteration_rate: self.timing.loop_rate,
            readout_latency: self.timing.readout_latency,
        }
    }

    pub fn mirror(&self) -> Result<DeformableMirror> {
        let m = &self.mirror;
        DeformableMirror::ring_layout(
            &m.rings,
            m.outer_ring_radius,
            m.influence_sigma,
            m.voltage_gain,
            m.voltage_limit,
        )
    }

    pub fn plant_config(&self) -> Result<PlantConfig> {
        let g = &self.geometry;
        Ok(PlantConfig {
            scenario: self.scenario(),
            pupil_pixels: g.pupil_pixels,
            screen_size: self.turbulence.screen_size,
            subharmonics: self.turbulence.subharmonics,
            focal_length: g.focal_length,
            mode_field_radius: g.mode_field_radius,
            padding: g.padding,
            mirror: self.mirror()?,
            apt_removes_tilt: self.apt.remove_tilt,
            jitter_rms: self.apt.jitter_rms,
            jitter_bandwidth: self.apt.jitter_bandwidth,
            metric_noise: self.noise.metric,
            readout_latency: self.timing.readout_latency,
        })
    }

    pub fn modes(&self) -> Result<Vec<usize>> {
        parse_mode_list(&self.basis.modes)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        self.optimizer.kind.parse()
    }

    /// Seeds of the ensemble.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.turbulence.seeds as u64).map(|i| self.run.seed.wrapping_add(i)).collect()
    }

    pub fn reference(&self) -> Option<ReferenceValues> {
        self.reference.map(|r| ReferenceValues {
            improvement_db: r.improvement_db,
            rsd_open: r.rsd_open,
            rsd_closed: r.rsd_closed,
        })
    }

    /// Optimizer with the configured tuning; the modal map is fitted here.
    pub fn build_optimizer(&self, plant: &PlantConfig) -> Result<Optimizer> {
        let (gain, amp) = (self.optimizer.gain, self.optimizer.amplitude);
        match self.optimizer_kind()? {
            OptimizerKind::Spgd => Ok(Optimizer::spgd(gain, amp)),
            OptimizerKind::Mspgd => {
                let basis = crate::zernike::ZernikeBasis::new(self.modes()?, plant.pupil_pixels)?;
                let map = crate::optics::fit_modal_map(&plant.mirror.sample(plant.pupil_pixels), &basis)?;
                for k in map.flagged_modes() {
                    log::warn!(
                        "Zernike mode {} is poorly reproduced by the mirror (fit residual {:.2})",
                        basis.modes()[k],
                        map.fit_residuals()[k]
                    );
                }
                Ok(Optimizer::mspgd(gain, amp, map))
            }
        }
    }
}

fn error_message(e: Error) -> String {
    match e {
        Error::Config { message, .. } => message,
        other => other.to_string(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, or of the section header when the
/// key is absent.
fn line_of_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}
