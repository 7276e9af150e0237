//! Experiments assembled from a [`ScenarioConfig`]: paired open/closed-loop
//! ensembles, optimizer races, autotune and Fried-parameter estimation, with
//! their file artifacts.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::control::{autotune, run_closed_loop, run_open_loop, AutotuneReport, LoopRun, Optimizer};
use crate::io::{atomic_write, csv_document, fmt_f64};
use crate::metrics::{improvement_db, mean, median, rsd, RunSummary};
use crate::optics::ModalMap;
use crate::plant::{substream, Plant};
use crate::plot;
use crate::turbulence::{
    angle_deviation, angle_of_arrival_series, estimate_r0, scale_r0, AoaSampling, REFERENCE_WAVELENGTH,
};
use crate::zernike::{parse_mode_list, ZernikeBasis};
use crate::{Error, Result};

/// Offset between a turbulence seed and the optimizer seed of the same run.
const OPTIMIZER_SEED_OFFSET: u64 = 1 << 32;
/// Offset of the autotune trial seeds.
const AUTOTUNE_SEED_OFFSET: u64 = 1 << 33;
/// Generator stream that draws static race aberrations.
const ABERRATION_STREAM: u64 = 4;

/// Open and closed loop on the same turbulence, jitter and noise.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub open: LoopRun,
    pub closed: LoopRun,
    pub mean_open: f64,
    pub mean_closed: f64,
    pub improvement_db: f64,
    pub rsd_open: f64,
    pub rsd_closed: f64,
}

impl SeedRun {
    fn new(seed: u64, open: LoopRun, closed: LoopRun) -> Result<Self> {
        let (o, c) = (open.eta(), closed.eta());
        Ok(SeedRun {
            seed,
            mean_open: mean(&o)?,
            mean_closed: mean(&c)?,
            improvement_db: improvement_db(&o, &c)?,
            rsd_open: rsd(&o)?,
            rsd_closed: rsd(&c)?,
            open,
            closed,
        })
    }

    pub fn rsd_reduction(&self) -> f64 {
        self.rsd_open - self.rsd_closed
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub name: String,
    pub runs: Vec<SeedRun>,
    /// Statistics of all seeds' series pooled.
    pub summary: RunSummary,
    pub median_improvement_db: f64,
    /// Median over seeds of open minus closed RSD, percentage points.
    pub median_rsd_reduction: f64,
    pub gain: f64,
    pub amplitude: f64,
    pub autotune: Option<AutotuneReport>,
    pub loop_rate: f64,
}

impl Simulation {
    pub fn closed_rsd_below_open_in_every_seed(&self) -> bool {
        self.runs.iter().all(|r| r.rsd_closed < r.rsd_open)
    }

    fn per_seed_csv(&self) -> String {
        let header: Vec<String> = [
            "seed",
            "mean_eta_open",
            "mean_eta_closed",
            "improvement_db",
            "rsd_open",
            "rsd_closed",
            "saturation_fraction",
            "faults",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        csv_document(
            &header,
            self.runs.iter().map(|r| {
                vec![
                    r.seed.to_string(),
                    fmt_f64(r.mean_open),
                    fmt_f64(r.mean_closed),
                    fmt_f64(r.improvement_db),
                    fmt_f64(r.rsd_open),
                    fmt_f64(r.rsd_closed),
                    fmt_f64(r.closed.saturation_fraction),
                    r.closed.faults.to_string(),
                ]
            }),
        )
    }

    /// Summary record plus the ensemble medians.
    pub fn report(&self) -> String {
        let mut s = self.summary.to_key_value();
        s.push_str(&format!("gain = {}\n", fmt_f64(self.gain)));
        s.push_str(&format!("amplitude = {}\n", fmt_f64(self.amplitude)));
        s.push_str(&format!("median_improvement_db = {}\n", fmt_f64(self.median_improvement_db)));
        s.push_str(&format!("median_rsd_reduction = {}\n", fmt_f64(self.median_rsd_reduction)));
        s.push_str(&format!(
            "closed_rsd_below_open_all_seeds = {}\n",
            self.closed_rsd_below_open_in_every_seed()
        ));
        s
    }

    /// Writes every artifact into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("summary.txt"), self.report().as_bytes())?;
        atomic_write(&dir.join("summary.csv"), self.summary.to_csv().as_bytes())?;
        atomic_write(&dir.join("seeds.csv"), self.per_seed_csv().as_bytes())?;
        atomic_write(&dir.join("histogram_open.csv"), self.summary.histogram_open.to_csv().as_bytes())?;
        atomic_write(
            &dir.join("histogram_closed.csv"),
            self.summary.histogram_closed.to_csv().as_bytes(),
        )?;
        for r in &self.runs {
            atomic_write(&dir.join(format!("trajectory_open_seed{}.csv", r.seed)), r.open.to_csv().as_bytes())?;
            atomic_write(
                &dir.join(format!("trajectory_closed_seed{}.csv", r.seed)),
                r.closed.to_csv().as_bytes(),
            )?;
        }
        if let Some(first) = self.runs.first() {
            let (o, c) = (first.open.eta(), first.closed.eta());
            let p = plot::trace(
                &format!("{} (D/r0 = {:.1}), seed {}", self.name, self.summary.d_over_r0, first.seed),
                self.loop_rate,
                &[("open_loop", &o), ("closed_loop", &c)],
            );
            atomic_write(&dir.join("trace.svg"), p.svg.as_bytes())?;
            atomic_write(&dir.join("trace.csv"), p.csv.as_bytes())?;
        }
        let p = plot::histograms(
            &format!("{}: coupling efficiency distribution", self.name),
            &[
                ("open_loop", &self.summary.histogram_open),
                ("closed_loop", &self.summary.histogram_closed),
            ],
        );
        atomic_write(&dir.join("histogram.svg"), p.svg.as_bytes())?;
        atomic_write(&dir.join("histogram.csv"), p.csv.as_bytes())?;
        if let Some(a) = &self.autotune {
            atomic_write(&dir.join("autotune.csv"), a.to_csv().as_bytes())?;
        }
        Ok(())
    }
}

/// Creates `dir` and checks that it accepts files.
pub fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("output directory '{}' is not usable: {e}", dir.display())))?;
    let probe = dir.join(format!(".write-probe-{}", std::process::id()));
    std::fs::write(&probe, b"")
        .map_err(|e| Error::config(format!("output directory '{}' is not writable: {e}", dir.display())))?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

fn first_seed_plant(cfg: &ScenarioConfig) -> Result<Plant> {
    Plant::new(&cfg.plant_config()?, cfg.run.seed)
}

/// Grid search over the `[autotune]` grid on the first seed's turbulence.
pub fn autotune_scenario(cfg: &ScenarioConfig) -> Result<AutotuneReport> {
    cfg.validate()?;
    let pc = cfg.plant_config()?;
    let optimizer = cfg.build_optimizer(&pc)?;
    let plant = first_seed_plant(cfg)?;
    let a = &cfg.autotune;
    autotune(
        &plant,
        &optimizer,
        &cfg.loop_timing(),
        &a.amplitudes,
        &a.gains,
        a.trial_duration,
        cfg.run.seed.wrapping_add(AUTOTUNE_SEED_OFFSET),
    )
}

/// Paired open/closed loops for every seed of the ensemble.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Simulation> {
    cfg.validate()?;
    let pc = cfg.plant_config()?;
    let timing = cfg.loop_timing();
    let mut optimizer = cfg.build_optimizer(&pc)?;
    let tuned = if cfg.optimizer.autotune {
        let report = autotune_scenario(cfg)?;
        let best = report.best()?;
        if report.on_boundary() {
            log::warn!("autotune winner lies on the grid boundary; consider extending the grid");
        }
        optimizer = optimizer.with_tuning(best.gain, best.amplitude);
        Some(report)
    } else {
        None
    };
    let duration = cfg.run.duration;
    let runs = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let plant = Plant::new(&pc, seed)?;
            let open = run_open_loop(&mut plant.clone(), &timing, duration)?;
            let mut closed_plant = plant;
            let closed = run_closed_loop(
                &mut closed_plant,
                &optimizer,
                &timing,
                duration,
                seed.wrapping_add(OPTIMIZER_SEED_OFFSET),
            )?;
            if closed_plant.has_wrapped() {
                log::warn!("seed {seed}: the run outlasted one screen traversal");
            }
            SeedRun::new(seed, open, closed)
        })
        .collect::<Result<Vec<_>>>()?;

    let pooled = |f: fn(&SeedRun) -> &LoopRun| runs.iter().flat_map(|r| f(r).eta()).collect::<Vec<_>>();
    let (open, closed) = (pooled(|r| &r.open), pooled(|r| &r.closed));
    let mut summary = RunSummary::from_series(
        &cfg.run.name,
        cfg.scenario().d_over_r0(),
        &open,
        &closed,
        duration,
        runs.iter().map(|r| r.seed).collect(),
    )?;
    summary.reference = cfg.reference();
    let dbs: Vec<f64> = runs.iter().map(|r| r.improvement_db).collect();
    let reductions: Vec<f64> = runs.iter().map(SeedRun::rsd_reduction).collect();
    Ok(Simulation {
        name: cfg.run.name.clone(),
        median_improvement_db: median(&dbs)?,
        median_rsd_reduction: median(&reductions)?,
        gain: optimizer.gain,
        amplitude: optimizer.amplitude,
        autotune: tuned,
        loop_rate: timing.iteration_rate,
        summary,
        runs,
    })
}

/// Trailing-mean window used when timing convergence.
pub const CONVERGENCE_WINDOW: usize = 10;
/// Fewer race trials than this make the medians unreliable.
pub const MIN_RACE_TRIALS: usize = 5;

/// Mean over the final tenth of a series (at least one sample).
pub fn plateau(eta: &[f64]) -> f64 {
    let k = (eta.len() / 10).max(1).min(eta.len());
    eta[eta.len() - k..].iter().sum::<f64>() / k as f64
}

/// First iteration count at which the trailing mean over
/// [`CONVERGENCE_WINDOW`] iterations reaches `target`.
pub fn iterations_to_reach(eta: &[f64], target: f64) -> Option<usize> {
    let mut acc = 0.0;
    for i in 0..eta.len() {
        acc += eta[i];
        if i >= CONVERGENCE_WINDOW {
            acc -= eta[i - CONVERGENCE_WINDOW];
        }
        let n = (i + 1).min(CONVERGENCE_WINDOW);
        if acc / n as f64 >= target {
            return Some(i + 1);
        }
    }
    None
}

/// One race trial; iteration counts are `None` when 90% was never reached.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceTrial {
    pub seed: u64,
    /// The larger of the two optimizers' plateaus.
    pub plateau: f64,
    pub spgd_plateau: f64,
    pub mspgd_plateau: f64,
    pub spgd_iterations: Option<usize>,
    pub mspgd_iterations: Option<usize>,
}

impl RaceTrial {
    /// `Less` when the modal optimizer converged in fewer evaluations.
    pub fn outcome(&self) -> std::cmp::Ordering {
        let key = |v: Option<usize>| v.unwrap_or(usize::MAX);
        key(self.mspgd_iterations).cmp(&key(self.spgd_iterations))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaceVerdict {
    ModalFaster,
    ZonalFaster,
    Tie,
}

impl RaceVerdict {
    pub fn describe(self) -> &'static str {
        match self {
            RaceVerdict::ModalFaster => "M-SPGD converges faster",
            RaceVerdict::ZonalFaster => "SPGD converges faster",
            RaceVerdict::Tie => "statistical tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceReport {
    pub name: String,
    pub trials: Vec<RaceTrial>,
    /// Median metric evaluations to 90% of plateau; censored trials count
    /// as the full run.
    pub spgd_median_evaluations: f64,
    pub mspgd_median_evaluations: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided sign-test p-value over decided trials.
    pub p_value: f64,
    pub verdict: RaceVerdict,
    pub insufficient_sample: bool,
    pub evaluations_per_run: usize,
}

/// Two-sided exact sign test for `wins` against `losses`.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    // P(X <= k), X ~ Binomial(n, 1/2), via log-space terms
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

impl RaceReport {
    pub fn win_fraction(&self) -> f64 {
        self.wins as f64 / self.trials.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<usize>| v.map(|n| (2 * n).to_string()).unwrap_or_else(|| "none".into());
        let header: Vec<String> = [
            "seed",
            "plateau",
            "spgd_plateau",
            "mspgd_plateau",
            "spgd_evaluations",
            "mspgd_evaluations",
            "outcome",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        csv_document(
            &header,
            self.trials.iter().map(|t| {
                let outcome = match t.outcome() {
                    std::cmp::Ordering::Less => "mspgd",
                    std::cmp::Ordering::Greater => "spgd",
                    std::cmp::Ordering::Equal => "tie",
                };
                vec![
                    t.seed.to_string(),
                    fmt_f64(t.plateau),
                    fmt_f64(t.spgd_plateau),
                    fmt_f64(t.mspgd_plateau),
                    cell(t.spgd_iterations),
                    cell(t.mspgd_iterations),
                    outcome.into(),
                ]
            }),
        )
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenario = {}\n", self.name));
        s.push_str(&format!("trials = {}\n", self.trials.len()));
        s.push_str(&format!("spgd_median_evaluations = {}\n", fmt_f64(self.spgd_median_evaluations)));
        s.push_str(&format!("mspgd_median_evaluations = {}\n", fmt_f64(self.mspgd_median_evaluations)));
        s.push_str(&format!("mspgd_wins = {}\n", self.wins));
        s.push_str(&format!("mspgd_losses = {}\n", self.losses));
        s.push_str(&format!("ties = {}\n", self.ties));
        s.push_str(&format!("sign_test_p = {}\n", fmt_f64(self.p_value)));
        s.push_str(&format!("verdict = {}\n", self.verdict.describe()));
        s.push_str(&format!("insufficient_sample = {}\n", self.insufficient_sample));
        if self.insufficient_sample {
            s.push_str(&format!(
                "warning = fewer than {MIN_RACE_TRIALS} trials; medians are not meaningful\n"
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("race.csv"), self.to_csv().as_bytes())?;
        atomic_write(&dir.join("race_summary.txt"), self.report().as_bytes())
    }
}

/// Static aberration over `modes` with the given RMS (rad), full grid.
pub fn static_aberration(modes: &[usize], rms: f64, grid_size: usize, seed: u64) -> Result<Vec<f64>> {
    let basis = ZernikeBasis::new(modes.to_vec(), grid_size)?;
    let mut rng = substream(seed, ABERRATION_STREAM);
    let c: Vec<f64> = (0..modes.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c: Vec<f64> = c.iter().map(|x| x * rms / norm).collect();
    basis.synthesize(&c)
}

/// SPGD against M-SPGD on identical static aberrations, noise and
/// optimizer seeds.
pub fn race(cfg: &ScenarioConfig) -> Result<RaceReport> {
    cfg.validate()?;
    let pc = cfg.plant_config()?;
    let timing = cfg.loop_timing();
    let r = &cfg.race;
    let modal = if r.identity_map {
        Optimizer::mspgd(
            cfg.optimizer.gain,
            cfg.optimizer.amplitude,
            ModalMap::identity(pc.mirror.actuator_count()),
        )
    } else {
        let mut c = cfg.clone();
        c.optimizer.kind = "mspgd".into();
        c.build_optimizer(&pc)?
    };
    let zonal = Optimizer::spgd(r.spgd_gain, r.spgd_amplitude);
    let modes = parse_mode_list(&r.aberration_modes)?;
    let seeds: Vec<u64> = (0..r.trials as u64).map(|i| cfg.run.seed.wrapping_add(i)).collect();
    let trials = seeds
        .into_par_iter()
        .map(|seed| {
            let phase = static_aberration(&modes, r.aberration_rms, pc.pupil_pixels, seed)?;
            let plant = Plant::with_static_phase(&pc, &phase, seed)?;
            let opt_seed = seed.wrapping_add(OPTIMIZER_SEED_OFFSET);
            let z = run_closed_loop(&mut plant.clone(), &zonal, &timing, r.duration, opt_seed)?.eta();
            let m = run_closed_loop(&mut plant.clone(), &modal, &timing, r.duration, opt_seed)?.eta();
            if z.is_empty() || m.is_empty() {
                return Err(Error::UndefinedMetric("race duration gives an empty series".into()));
            }
            let (pz, pm) = (plateau(&z), plateau(&m));
            let common = pz.max(pm);
            Ok(RaceTrial {
                seed,
                plateau: common,
                spgd_plateau: pz,
                mspgd_plateau: pm,
                spgd_iterations: iterations_to_reach(&z, 0.9 * common),
                mspgd_iterations: iterations_to_reach(&m, 0.9 * common),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_iter = timing.iterations(r.duration);
    let evals = |v: Option<usize>| 2.0 * v.unwrap_or(n_iter) as f64;
    let wins = trials.iter().filter(|t| t.outcome().is_lt()).count();
    let losses = trials.iter().filter(|t| t.outcome().is_gt()).count();
    let ties = trials.len() - wins - losses;
    let p_value = sign_test(wins, losses);
    let verdict = if p_value >= 0.05 {
        RaceVerdict::Tie
    } else if wins > losses {
        RaceVerdict::ModalFaster
    } else {
        RaceVerdict::ZonalFaster
    };
    Ok(RaceReport {
        name: cfg.run.name.clone(),
        spgd_median_evaluations: median(&trials.iter().map(|t| evals(t.spgd_iterations)).collect::<Vec<_>>())?,
        mspgd_median_evaluations: median(&trials.iter().map(|t| evals(t.mspgd_iterations)).collect::<Vec<_>>())?,
        wins,
        losses,
        ties,
        p_value,
        verdict,
        insufficient_sample: trials.len() < MIN_RACE_TRIALS,
        evaluations_per_run: 2 * n_iter,
        trials,
    })
}

/// Fried parameter inferred from angle-of-arrival records.
#[derive(Debug, Clone, PartialEq)]
pub struct R0Report {
    /// Angle-of-arrival deviation, rad (median over records).
    pub delta_alpha: f64,
    pub aperture: f64,
    pub r0_810nm: f64,
    pub d_over_r0_810nm: f64,
    pub signal_wavelength: f64,
    pub r0_signal: f64,
    pub d_over_r0_signal: f64,
    /// Per-record estimates at 810 nm: (seed, δ, r0).
    pub records: Vec<(u64, f64, f64)>,
}

impl R0Report {
    fn from_records(records: Vec<(u64, f64, f64)>, aperture: f64, signal_wavelength: f64) -> Result<Self> {
        let deltas: Vec<f64> = records.iter().map(|r| r.1).collect();
        let r0s: Vec<f64> = records.iter().map(|r| r.2).collect();
        let r0 = median(&r0s)?;
        let r0_signal = scale_r0(r0, REFERENCE_WAVELENGTH, signal_wavelength);
        Ok(R0Report {
            delta_alpha: median(&deltas)?,
            aperture,
            r0_810nm: r0,
            d_over_r0_810nm: aperture / r0,
            signal_wavelength,
            r0_signal,
            d_over_r0_signal: aperture / r0_signal,
            records,
        })
    }

    pub fn report(&self) -> String {
        format!(
            "delta_alpha_rad = {}\nr0_810nm_m = {}\nd_over_r0_810nm = {}\nsignal_wavelength_m = {}\nr0_signal_m = {}\nd_over_r0_signal = {}\nrecords = {}\n",
            fmt_f64(self.delta_alpha),
            fmt_f64(self.r0_810nm),
            fmt_f64(self.d_over_r0_810nm),
            fmt_f64(self.signal_wavelength),
            fmt_f64(self.r0_signal),
            fmt_f64(self.d_over_r0_signal),
            self.records.len()
        )
    }

    pub fn to_csv(&self) -> String {
        csv_document(
            &["seed".into(), "delta_alpha_rad".into(), "r0_810nm_m".into()],
            self.records.iter().map(|(s, d, r)| vec![s.to_string(), fmt_f64(*d), fmt_f64(*r)]),
        )
    }
}

fn wavenumber() -> f64 {
    2.0 * std::f64::consts::PI / REFERENCE_WAVELENGTH
}

/// Estimate from one record of (x, y) tilt angles in radians at 810 nm.
pub fn estimate_r0_from_series(series: &[[f64; 2]], aperture: f64, signal_wavelength: f64) -> Result<R0Report> {
    let delta = angle_deviation(series)?;
    let e = estimate_r0(delta, aperture, wavenumber())?;
    R0Report::from_records(vec![(0, delta, e.r0)], aperture, signal_wavelength)
}

/// Reads a CSV of two angle columns (rad), with or without a header.
pub fn read_angle_series(text: &str) -> Result<Vec<[f64; 2]>> {
    crate::io::read_numeric_csv(text)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| match row.as_slice() {
            [x, y] => Ok([*x, *y]),
            _ => Err(Error::Config {
                line: None,
                message: format!("angle record {} has {} columns, expected 2", i + 1, row.len()),
            }),
        })
        .collect()
}

/// Synthesizes one record per `[aoa]` seed through a frozen-flow screen
/// (one pixel of flow per sample) and estimates r0 from each.
pub fn estimate_r0_from_scenario(cfg: &ScenarioConfig) -> Result<R0Report> {
    cfg.validate()?;
    let q = &cfg.aoa;
    let mut scenario = cfg.scenario();
    scenario.outer_scale = q.outer_scale;
    let rate = cfg.timing.loop_rate;
    scenario.wind = [scenario.aperture / q.pixels_across as f64 * rate, 0.0];
    let sampling = AoaSampling {
        pixels_across: q.pixels_across,
        screen_size: q.screen_size,
    };
    if q.samples + q.pixels_across > q.screen_size {
        log::warn!("angle-of-arrival record is longer than one screen traversal");
    }
    let k = wavenumber();
    let seeds: Vec<u64> = (0..q.seeds as u64).map(|i| cfg.run.seed.wrapping_add(i)).collect();
    let records = seeds
        .into_par_iter()
        .map(|seed| {
            let series = angle_of_arrival_series(&scenario, q.samples, rate, seed, sampling)?;
            let delta = angle_deviation(&series)?;
            Ok((seed, delta, estimate_r0(delta, scenario.aperture, k)?.r0))
        })
        .collect::<Result<Vec<_>>>()?;
    R0Report::from_records(records, scenario.aperture, scenario.signal_wavelength)
}
