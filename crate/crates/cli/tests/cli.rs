use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mspgd_core::config::ScenarioConfig;

fn mspgd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspgd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The moderate preset shrunk to two seeds on a small screen.
fn small_scenario(dir: &Path, extra: &str) -> String {
    let text = ScenarioConfig::preset_source("d_r0_5p4")
        .unwrap()
        .replace("seeds = 10", "seeds = 2")
        .replace("screen_size = 2048", "screen_size = 512")
        .replace("duration = 20.0", "duration = 2.0")
        .replace("trial_duration = 4.0", "trial_duration = 2.0");
    let path = dir.join("small.toml");
    fs::write(&path, format!("{text}\n{extra}")).unwrap();
    path.display().to_string()
}

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nname = \"x\"\n\n[turbulence]\nr0_810nm = 0.074\nwind_sped = 5.0\n").unwrap();
    let o = mspgd(&["--config", cfg.to_str().unwrap(), "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
    assert!(stderr(&o).contains("wind_sped"));
}

#[test]
fn non_positive_quantity_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("aperture = 0.4", "aperture = -0.4");
    fs::write(&cfg, text).unwrap();
    let o = mspgd(&["--config", &cfg, "--out", "out", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("aperture"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn zero_duration_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspgd(&["--preset", "d_r0_5p4", "--duration", "0", "--out", "out", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty series"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn repeated_simulation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path(), "");
    for out in ["a", "b"] {
        let o = mspgd(&["--config", &cfg, "--seed", "7", "--out", out, "simulate"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("reference"));
    }
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "seeds.csv") && names.iter().any(|n| n == "histogram.svg"));
    for n in names {
        let (a, b) = (dir.path().join("a").join(&n), dir.path().join("b").join(&n));
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{n:?}");
    }
}

#[test]
fn absurd_gain_has_no_stable_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("amplitudes = [0.03, 0.05, 0.07, 0.1]", "amplitudes = [0.07]")
        .replace("gains = [5.0, 10.0, 20.0, 40.0]", "gains = [1e6]");
    fs::write(&cfg, text).unwrap();
    let o = mspgd(&["--config", &cfg, "--out", "out", "autotune"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("no stable parameters"));
    assert!(dir.path().join("out/autotune.csv").exists());
}

#[test]
fn single_cell_grid_echoes_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("amplitudes = [0.03, 0.05, 0.07, 0.1]", "amplitudes = [0.05]")
        .replace("gains = [5.0, 10.0, 20.0, 40.0]", "gains = [10.0]");
    fs::write(&cfg, text).unwrap();
    let o = mspgd(&["--config", &cfg, "--out", "out", "autotune"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("amplitude = 0.05\n") && s.contains("gain = 10.0\n"), "{s}");
}

#[test]
fn constant_angle_record_has_no_turbulence() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("angles.csv");
    fs::write(&series, "x_rad,y_rad\n".to_string() + &"1e-6,2e-6\n".repeat(20)).unwrap();
    let o = mspgd(&["estimate-r0", "--series", series.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no measurable turbulence"));
}

#[test]
fn angle_record_gives_r0() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("angles.csv");
    let rows: String = (0..200)
        .map(|i| {
            let t = i as f64 * 0.7;
            format!("{:e},{:e}\n", 4e-6 * t.sin(), 4e-6 * (1.3 * t).cos())
        })
        .collect();
    fs::write(&series, rows).unwrap();
    let o = mspgd(&["estimate-r0", "--series", series.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("r0_810nm_m = ") && stdout(&o).contains("r0_signal_m = "));
}

#[test]
fn presets_are_listed_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspgd(&["presets"], dir.path());
    assert!(o.status.success());
    for p in ["d_r0_5p4", "d_r0_9p5", "race_static", "race_identity"] {
        assert!(stdout(&o).contains(p));
    }
    let o = mspgd(&["presets", "d_r0_9p5"], dir.path());
    assert!(stdout(&o).contains("r0_810nm = 0.042"));
    let o = mspgd(&["presets", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identity_map_race_is_a_tie() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspgd(&["--preset", "race_identity", "--out", "out", "race"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("verdict = statistical tie"), "{}", stdout(&o));
    assert!(dir.path().join("out/race.csv").exists());
}

#[test]
fn single_trial_race_flags_its_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.toml");
    let text = ScenarioConfig::preset_source("race_static")
        .unwrap()
        .replace("trials = 20", "trials = 1");
    fs::write(&cfg, text).unwrap();
    let o = mspgd(&["--config", cfg.to_str().unwrap(), "--duration", "1", "--out", "out", "race"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("insufficient_sample = true"));
}

#[test]
fn zero_jobs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspgd(&["--jobs", "0", "presets"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
