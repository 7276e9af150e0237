//! SPGD and modal SPGD, the latency-accurate loop scheduler and the
//! (amplitude, gain) grid autotuner.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::{csv_document, fmt_f64};
use crate::optics::ModalMap;
use crate::plant::{substream, MetricEvaluator, MetricSample, Plant};
use crate::{Error, Result};

/// Parameter space the optimizer walks in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    /// Actuator voltages directly.
    Spgd,
    /// Zernike coefficients mapped to voltages by a modal map.
    Mspgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Spgd => "spgd",
            OptimizerKind::Mspgd => "mspgd",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spgd" => Ok(OptimizerKind::Spgd),
            "mspgd" | "m-spgd" => Ok(OptimizerKind::Mspgd),
            other => Err(Error::config(format!(
                "unknown optimizer {other:?}, expected spgd or mspgd"
            ))),
        }
    }
}

/// Mutable optimizer state.
#[derive(Debug, Clone)]
pub struct ControlState {
    params: Vec<f64>,
    gain: f64,
    amplitude: f64,
    iteration: u64,
    rng: ChaCha8Rng,
    kind: OptimizerKind,
}

impl ControlState {
    /// Zero-initialized parameters (flat mirror).
    pub fn new(kind: OptimizerKind, dimension: usize, gain: f64, amplitude: f64, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::config("optimizer needs at least one parameter"));
        }
        if !(gain >= 0.0) || !gain.is_finite() {
            return Err(Error::config(format!("gain must be non-negative, got {gain}")));
        }
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::config(format!(
                "perturbation amplitude must be positive, got {amplitude}"
            )));
        }
        Ok(ControlState {
            params: vec![0.0; dimension],
            gain,
            amplitude,
            iteration: 0,
            rng: substream(seed, 0),
            kind,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::config("parameter vector dimension mismatch"));
        }
        self.params = params;
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }
}

/// Bernoulli ±`amplitude` vector.
pub fn perturbation(dimension: usize, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..dimension)
        .map(|_| if rng.random::<bool>() { amplitude } else { -amplitude })
        .collect()
}

/// Everything measured and decided in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub plus: MetricSample,
    pub minus: MetricSample,
    pub delta_j: f64,
    pub perturbation: Vec<f64>,
}

/// Applies `x ← x + G·δJ·δ` exactly as the loop does.
pub fn apply_update(params: &mut [f64], gain: f64, delta_j: f64, delta: &[f64]) {
    let scale = gain * delta_j;
    for (x, d) in params.iter_mut().zip(delta) {
        *x += scale * d;
    }
}

fn step(
    state: &mut ControlState,
    map: Option<&ModalMap>,
    eval: &mut dyn MetricEvaluator,
) -> Result<StepRecord> {
    let mut rng = state.rng.clone();
    let delta = perturbation(state.params.len(), state.amplitude, &mut rng);
    let shifted = |sign: f64| -> Vec<f64> {
        state.params.iter().zip(&delta).map(|(x, d)| x + sign * d).collect()
    };
    let to_voltages = |p: Vec<f64>| -> Result<Vec<f64>> {
        match map {
            Some(m) => m.apply(&p),
            None => Ok(p),
        }
    };
    let up = to_voltages(shifted(1.0))?;
    let down = to_voltages(shifted(-1.0))?;
    let plus = eval.evaluate(&up);
    let minus = eval.evaluate(&down);
    let delta_j = plus.j - minus.j;
    if !delta_j.is_finite() {
        return Err(Error::NonFiniteMetric {
            iteration: state.iteration,
        });
    }
    apply_update(&mut state.params, state.gain, delta_j, &delta);
    state.rng = rng;
    state.iteration += 1;
    Ok(StepRecord {
        plus,
        minus,
        delta_j,
        perturbation: delta,
    })
}

/// One SPGD iteration on voltages: measure at `u+δu` then `u−δu`, then
/// `u ← u + G·δJ·δu`. A non-finite reading aborts the step and leaves the
/// state untouched.
pub fn spgd_step(state: &mut ControlState, eval: &mut dyn MetricEvaluator) -> Result<StepRecord> {
    step(state, None, eval)
}

/// One modal iteration: voltages `(a ± δa) × M`, update `a ← a + G·δJ·δa`.
pub fn mspgd_step(
    state: &mut ControlState,
    map: &ModalMap,
    eval: &mut dyn MetricEvaluator,
) -> Result<StepRecord> {
    if map.mode_count() != state.params.len() {
        return Err(Error::config(format!(
            "modal map has {} modes but the optimizer has {} coefficients",
            map.mode_count(),
            state.params.len()
        )));
    }
    step(state, Some(map), eval)
}

/// Loop rate and readout delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopTiming {
    /// Hz.
    pub iteration_rate: f64,
    /// Seconds between applying a command and reading the metric.
    pub readout_latency: f64,
}

impl Default for LoopTiming {
    fn default() -> Self {
        LoopTiming {
            iteration_rate: 500.0,
            readout_latency: 900e-6,
        }
    }
}

impl LoopTiming {
    pub const MEASUREMENTS_PER_ITERATION: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if !(self.iteration_rate > 0.0) || !(self.readout_latency >= 0.0) {
            return Err(Error::config("loop rate must be positive and latency non-negative"));
        }
        let period = 1.0 / self.iteration_rate;
        if 2.0 * self.readout_latency > period * (1.0 + 1e-9) {
            return Err(Error::config(format!(
                "two readouts of {:.0} µs do not fit in a {:.0} µs iteration",
                self.readout_latency * 1e6,
                period * 1e6
            )));
        }
        Ok(())
    }

    /// Idle time after the two readouts.
    pub fn slack(&self) -> f64 {
        (1.0 / self.iteration_rate - 2.0 * self.readout_latency).max(0.0)
    }

    /// Whole iterations in `duration` seconds.
    pub fn iterations(&self, duration: f64) -> usize {
        (duration * self.iteration_rate + 1e-9).floor().max(0.0) as usize
    }
}

/// Optimizer choice and its tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub gain: f64,
    pub amplitude: f64,
    /// Required for [`OptimizerKind::Mspgd`].
    pub map: Option<ModalMap>,
}

impl Optimizer {
    pub fn spgd(gain: f64, amplitude: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Spgd,
            gain,
            amplitude,
            map: None,
        }
    }

    pub fn mspgd(gain: f64, amplitude: f64, map: ModalMap) -> Self {
        Optimizer {
            kind: OptimizerKind::Mspgd,
            gain,
            amplitude,
            map: Some(map),
        }
    }

    pub fn with_tuning(&self, gain: f64, amplitude: f64) -> Self {
        Optimizer {
            gain,
            amplitude,
            ..self.clone()
        }
    }

    fn dimension(&self, actuators: usize) -> Result<usize> {
        match (self.kind, &self.map) {
            (OptimizerKind::Spgd, _) => Ok(actuators),
            (OptimizerKind::Mspgd, Some(m)) => {
                if m.actuator_count() != actuators {
                    return Err(Error::config(format!(
                        "modal map drives {} actuators but the mirror has {actuators}",
                        m.actuator_count()
                    )));
                }
                Ok(m.mode_count())
            }
            (OptimizerKind::Mspgd, None) => Err(Error::config("modal optimizer needs a modal map")),
        }
    }
}

/// One logged loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: u64,
    /// Time of the update, seconds.
    pub time: f64,
    pub j_plus: f64,
    pub j_minus: f64,
    pub delta_j: f64,
    /// Parameters after the update.
    pub params: Vec<f64>,
    /// Mean noise-free efficiency over the iteration's two readings.
    pub eta: f64,
    pub saturated: usize,
}

/// Output of one open- or closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopRun {
    pub rows: Vec<TrajectoryRow>,
    /// Metric evaluations performed.
    pub measurements: usize,
    /// Iterations skipped because of a non-finite reading.
    pub faults: usize,
    /// Saturated actuator readings over all actuator readings.
    pub saturation_fraction: f64,
}

impl LoopRun {
    /// `η` series at the loop rate.
    pub fn eta(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eta).collect()
    }

    /// Trajectory CSV: iteration, time_s, J_plus, J_minus, deltaJ,
    /// param_1..param_k, eta, saturated_count.
    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map(|r| r.params.len()).unwrap_or(0);
        let mut header: Vec<String> = ["iteration", "time_s", "J_plus", "J_minus", "deltaJ"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=k).map(|i| format!("param_{i}")));
        header.push("eta".into());
        header.push("saturated_count".into());
        csv_document(
            &header,
            self.rows.iter().map(|r| {
                let mut row = vec![
                    r.iteration.to_string(),
                    fmt_f64(r.time),
                    fmt_f64(r.j_plus),
                    fmt_f64(r.j_minus),
                    fmt_f64(r.delta_j),
                ];
                row.extend(r.params.iter().map(|p| fmt_f64(*p)));
                row.push(fmt_f64(r.eta));
                row.push(r.saturated.to_string());
                row
            }),
        )
    }
}

/// Closed loop for `duration` seconds. Each iteration applies `+δ`, waits one
/// readout latency and measures, applies `−δ`, waits and measures, updates,
/// then idles for the rest of the period.
pub fn run_closed_loop(
    plant: &mut Plant,
    optimizer: &Optimizer,
    timing: &LoopTiming,
    duration: f64,
    seed: u64,
) -> Result<LoopRun> {
    timing.validate()?;
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::config("duration must be non-negative"));
    }
    if (plant.latency() - timing.readout_latency).abs() > 1e-12 {
        return Err(Error::config("plant and loop disagree on the readout latency"));
    }
    let actuators = plant.actuator_count();
    let dim = optimizer.dimension(actuators)?;
    let mut state = ControlState::new(optimizer.kind, dim, optimizer.gain, optimizer.amplitude, seed)?;
    let n = timing.iterations(duration);
    let mut run = LoopRun {
        rows: Vec::with_capacity(n),
        ..LoopRun::default()
    };
    let mut saturated_total = 0usize;
    for _ in 0..n {
        let rec = match (optimizer.kind, &optimizer.map) {
            (OptimizerKind::Mspgd, Some(m)) => mspgd_step(&mut state, m, plant),
            _ => spgd_step(&mut state, plant),
        };
        run.measurements += LoopTiming::MEASUREMENTS_PER_ITERATION;
        match rec {
            Ok(rec) => {
                plant.idle(timing.slack());
                saturated_total += rec.plus.saturated + rec.minus.saturated;
                run.rows.push(TrajectoryRow {
                    iteration: state.iteration() - 1,
                    time: plant.time(),
                    j_plus: rec.plus.j,
                    j_minus: rec.minus.j,
                    delta_j: rec.delta_j,
                    params: state.params().to_vec(),
                    eta: 0.5 * (rec.plus.eta + rec.minus.eta),
                    saturated: rec.plus.saturated.max(rec.minus.saturated),
                });
            }
            Err(Error::NonFiniteMetric { iteration }) => {
                log::warn!("non-finite metric at iteration {iteration}; step skipped");
                run.faults += 1;
                plant.idle(timing.slack());
            }
            Err(e) => return Err(e),
        }
    }
    if run.measurements > 0 {
        run.saturation_fraction = saturated_total as f64 / (run.measurements * actuators) as f64;
    }
    Ok(run)
}

/// The same pipeline and readout instants with the mirror held flat.
pub fn run_open_loop(plant: &mut Plant, timing: &LoopTiming, duration: f64) -> Result<LoopRun> {
    timing.validate()?;
    if duration < 0.0 || !duration.is_finite() {
        return Err(Error::config("duration must be non-negative"));
    }
    let flat = vec![0.0; plant.actuator_count()];
    let n = timing.iterations(duration);
    let mut run = LoopRun {
        rows: Vec::with_capacity(n),
        ..LoopRun::default()
    };
    for m in 0..n {
        let plus = plant.evaluate(&flat);
        let minus = plant.evaluate(&flat);
        plant.idle(timing.slack());
        run.measurements += LoopTiming::MEASUREMENTS_PER_ITERATION;
        run.rows.push(TrajectoryRow {
            iteration: m as u64,
            time: plant.time(),
            j_plus: plus.j,
            j_minus: minus.j,
            delta_j: plus.j - minus.j,
            params: Vec::new(),
            eta: 0.5 * (plus.eta + minus.eta),
            saturated: 0,
        });
    }
    Ok(run)
}

/// One autotune trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneCell {
    pub amplitude: f64,
    pub gain: f64,
    pub mean_eta: f64,
}

/// Full score table of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneReport {
    /// Row-major over (amplitude, gain).
    pub cells: Vec<AutotuneCell>,
    pub amplitudes: Vec<f64>,
    pub gains: Vec<f64>,
    /// Open-loop mean on the same turbulence.
    pub open_loop_mean: f64,
    /// Index of the best cell that beat the open loop.
    pub winner: Option<usize>,
}

impl AutotuneReport {
    pub fn best(&self) -> Result<&AutotuneCell> {
        self.winner.map(|i| &self.cells[i]).ok_or(Error::NoStableParameters)
    }

    /// True when the winner sits on the edge of a grid axis with more than
    /// one value, suggesting the grid should be extended.
    pub fn on_boundary(&self) -> bool {
        let Some(w) = self.winner else { return false };
        let (ia, ig) = (w / self.gains.len(), w % self.gains.len());
        let edge = |i: usize, n: usize| n > 1 && (i == 0 || i == n - 1);
        edge(ia, self.amplitudes.len()) || edge(ig, self.gains.len())
    }

    pub fn to_csv(&self) -> String {
        csv_document(
            &["amplitude".into(), "gain".into(), "mean_eta".into(), "beats_open_loop".into(), "winner".into()],
            self.cells.iter().enumerate().map(|(i, c)| {
                vec![
                    fmt_f64(c.amplitude),
                    fmt_f64(c.gain),
                    fmt_f64(c.mean_eta),
                    (c.mean_eta > self.open_loop_mean).to_string(),
                    (Some(i) == self.winner).to_string(),
                ]
            }),
        )
    }
}

/// Minimum simulated trial length for a meaningful autotune score.
pub const MIN_TRIAL_DURATION: f64 = 2.0;

/// Grid search over (amplitude, gain). Every cell sees the same turbulence
/// (`plant` is cloned) and its own optimizer seed; the winner maximizes mean
/// coupled power and must beat the open loop on that turbulence.
pub fn autotune(
    plant: &Plant,
    optimizer: &Optimizer,
    timing: &LoopTiming,
    amplitudes: &[f64],
    gains: &[f64],
    trial_duration: f64,
    seed: u64,
) -> Result<AutotuneReport> {
    if amplitudes.is_empty() || gains.is_empty() {
        return Err(Error::config("autotune grids must be non-empty"));
    }
    if trial_duration < MIN_TRIAL_DURATION {
        return Err(Error::config(format!(
            "autotune trials must last at least {MIN_TRIAL_DURATION} s"
        )));
    }
    let open = run_open_loop(&mut plant.clone(), timing, trial_duration)?;
    let open_loop_mean = mean(&open.eta());
    let pairs: Vec<(usize, f64, f64)> = amplitudes
        .iter()
        .flat_map(|&a| gains.iter().map(move |&g| (a, g)))
        .enumerate()
        .map(|(i, (a, g))| (i, a, g))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(i, amplitude, gain)| {
            let mut p = plant.clone();
            let opt = optimizer.with_tuning(gain, amplitude);
            let cell_seed = seed.wrapping_add(1 + i as u64);
            let run = run_closed_loop(&mut p, &opt, timing, trial_duration, cell_seed)?;
            let eta = run.eta();
            let mean_eta = if eta.len() == run.measurements / 2 { mean(&eta) } else { f64::NAN };
            Ok(AutotuneCell {
                amplitude,
                gain,
                mean_eta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let winner = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.mean_eta.is_finite() && c.mean_eta > open_loop_mean)
        .max_by(|a, b| a.1.mean_eta.total_cmp(&b.1.mean_eta))
        .map(|(i, _)| i);
    Ok(AutotuneReport {
        cells,
        amplitudes: amplitudes.to_vec(),
        gains: gains.to_vec(),
        open_loop_mean,
        winner,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn perturbation_has_two_point_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = perturbation(12, 0.1, &mut rng);
        assert_eq!(d.len(), 12);
        assert!(d.iter().all(|v| v.abs() == 0.1));
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturbation(12, 0.1, &mut again), d);
    }

    #[test]
    fn flat_metric_leaves_parameters() {
        let mut s = ControlState::new(OptimizerKind::Spgd, 5, 3.0, 0.1, 0).unwrap();
        let mut calls = 0;
        let mut flat = |_: &[f64]| {
            calls += 1;
            0.5
        };
        let r = spgd_step(&mut s, &mut flat).unwrap();
        assert_eq!(r.delta_j, 0.0);
        assert_eq!(s.params(), &[0.0; 5]);
        assert_eq!(s.iteration(), 1);
        assert_eq!(calls, 2);
    }

    #[test]
    fn zero_gain_still_measures() {
        let mut s = ControlState::new(OptimizerKind::Spgd, 3, 0.0, 0.2, 0).unwrap();
        let mut f = |u: &[f64]| u.iter().sum::<f64>();
        let r = spgd_step(&mut s, &mut f).unwrap();
        assert_ne!(r.delta_j, 0.0);
        assert_eq!(s.params(), &[0.0; 3]);
    }

    #[test]
    fn plus_is_measured_before_minus() {
        let mut s = ControlState::new(OptimizerKind::Spgd, 4, 1.0, 0.1, 9).unwrap();
        let mut seen = Vec::new();
        let mut f = |u: &[f64]| {
            seen.push(u.to_vec());
            0.0
        };
        let r = spgd_step(&mut s, &mut f).unwrap();
        assert_eq!(seen[0], r.perturbation);
        assert_eq!(seen[1], r.perturbation.iter().map(|d| -d).collect::<Vec<_>>());
    }

    #[test]
    fn non_finite_metric_aborts_without_side_effects() {
        let mut s = ControlState::new(OptimizerKind::Spgd, 4, 1.0, 0.1, 9).unwrap();
        let before = s.clone();
        let mut bad = |_: &[f64]| f64::NAN;
        assert!(matches!(spgd_step(&mut s, &mut bad), Err(Error::NonFiniteMetric { iteration: 0 })));
        assert_eq!(s.params(), before.params());
        assert_eq!(s.iteration(), 0);
        let mut f = |u: &[f64]| u[0];
        let mut g = |u: &[f64]| u[0];
        let mut t = before.clone();
        assert_eq!(spgd_step(&mut s, &mut f).unwrap(), spgd_step(&mut t, &mut g).unwrap());
    }

    #[test]
    fn quadratic_converges() {
        let target = [0.3, -0.2, 0.5, 0.1];
        let mut s = ControlState::new(OptimizerKind::Spgd, 4, 5.0, 0.01, 3).unwrap();
        let mut f = |u: &[f64]| -u.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for _ in 0..10_000 {
            spgd_step(&mut s, &mut f).unwrap();
        }
        for (x, t) in s.params().iter().zip(&target) {
            assert!((x - t).abs() < 0.01, "{x} vs {t}");
        }
    }

    #[test]
    fn modal_step_rejects_mismatched_map() {
        let mut s = ControlState::new(OptimizerKind::Mspgd, 3, 1.0, 0.1, 0).unwrap();
        let mut f = |_: &[f64]| 0.0;
        assert!(mspgd_step(&mut s, &ModalMap::identity(4), &mut f).unwrap_err().is_config());
    }

    #[test]
    fn identity_map_matches_spgd() {
        let mut a = ControlState::new(OptimizerKind::Spgd, 6, 2.0, 0.05, 4).unwrap();
        let mut b = ControlState::new(OptimizerKind::Mspgd, 6, 2.0, 0.05, 4).unwrap();
        let map = ModalMap::identity(6);
        let mut f = |u: &[f64]| (-u.iter().map(|v| (v - 0.2).powi(2)).sum::<f64>()).exp();
        let mut g = |u: &[f64]| (-u.iter().map(|v| (v - 0.2).powi(2)).sum::<f64>()).exp();
        for _ in 0..200 {
            assert_eq!(spgd_step(&mut a, &mut f).unwrap(), mspgd_step(&mut b, &map, &mut g).unwrap());
        }
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn timing_must_fit() {
        assert!(LoopTiming::default().validate().is_ok());
        let bad = LoopTiming {
            iteration_rate: 500.0,
            readout_latency: 1.1e-3,
        };
        assert!(bad.validate().unwrap_err().is_config());
        assert_eq!(LoopTiming::default().iterations(20.0), 10_000);
        assert!((LoopTiming::default().slack() - 200e-6).abs() < 1e-15);
    }
}
