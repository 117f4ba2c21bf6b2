use std::path::{Path, PathBuf};
use std::process::Command;

use icvi_cli::{run_from, CliError};
use tempfile::TempDir;

const TRUTH: &str = "[truth]\nk0_m_s = 2.62\nactivation_energy_J_mol = 1.46e5\ntortuosity = 6.78\npore_radius_m = 1e-5\n";

const SMALL: &str = "
[grid]
nr = 4
nz = 8

[training]
epochs = 2

[ensemble]
members = 2

[[conditions]]
temperature_K = 1250.0
total_pressure_Pa = 1600.0
duration_h = 35.0
observe_every_h = 17.5

[[conditions]]
temperature_K = 1300.0
total_pressure_Pa = 800.0
duration_h = 35.0
observe_every_h = 17.5
";

fn setup(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("{TRUTH}{SMALL}{extra}")).unwrap();
    (dir, cfg)
}

fn icvi(cfg: &Path, out: &Path, rest: &[&str]) -> Result<(), CliError> {
    let mut args = vec![
        "icvi".to_string(),
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(rest.iter().map(|s| s.to_string()));
    run_from(args)
}

fn code(r: Result<(), CliError>) -> i32 {
    r.map_or_else(|e| e.exit_code(), |_| 0)
}

#[test]
fn zero_noise_synth_writes_identical_clean_and_noisy_files() {
    let (dir, cfg) = setup("[noise]\nrelative_sigma = 0.0\n");
    let out = dir.path().join("out");
    icvi(&cfg, &out, &["synth"]).unwrap();
    let noisy = std::fs::read(out.join("measurements.csv")).unwrap();
    assert_eq!(
        noisy,
        std::fs::read(out.join("measurements_clean.csv")).unwrap()
    );
    let text = String::from_utf8(noisy).unwrap();
    assert!(text.starts_with(
        "run_id,time_s,segment_id,value_kg,observable_kind,temperature_K,partial_pressure_Pa,total_pressure_Pa,cycle_index\n"
    ));
    assert!(!text.contains('\r'));
    // 2 runs, 2 times, 3 segments
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(out.join("measurements.manifest.json").exists());
}

#[test]
fn nine_condition_grid_gives_nine_runs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/twin.toml");
    icvi(&cfg, &out, &["synth"]).unwrap();
    let ds = icvi_core::io::read_measurements(out.join("measurements.csv")).unwrap();
    assert_eq!(ds.runs.len(), 9);
}

#[test]
fn missing_truth_is_a_schema_error_without_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    match icvi(&cfg, &out, &["synth"]) {
        Err(CliError::Config { pointer, .. }) => assert_eq!(pointer, "/truth"),
        r => panic!("{r:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_with_schema_code() {
    let (dir, cfg) = setup("[solver]\ndt_hours = 2.0\n");
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_icvi"))
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "synth",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("/solver/dt_hours"));
    assert!(!out.exists());
}

#[test]
fn train_without_dataset_flag_fails() {
    let (dir, cfg) = setup("");
    assert!(matches!(
        icvi(&cfg, dir.path(), &["train"]),
        Err(CliError::MissingFlag("dataset"))
    ));
}

#[test]
fn mismatched_segments_fail_before_training() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("out");
    icvi(&cfg, &out, &["synth"]).unwrap();
    let (_two_dir, two) = setup("[segments]\nz_fractions = [0.0, 0.5, 1.0]\n");
    let ds = out.join("measurements.csv");
    let r = icvi(&two, &out, &["--dataset", ds.to_str().unwrap(), "train"]);
    assert_eq!(code(r), 3);
    assert!(!out.join("checkpoint.json").exists());
}

#[test]
fn training_is_repeatable_and_predictions_follow() {
    let (dir, cfg) = setup("[[predict]]\nid = \"replay\"\ntemperature_K = 1250.0\ntotal_pressure_Pa = 1600.0\nduration_h = 35.0\nobserve_every_h = 17.5\n");
    let out = dir.path().join("out");
    icvi(&cfg, &out, &["synth"]).unwrap();
    let ds = out.join("measurements.csv");
    let ds = ds.to_str().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    icvi(
        &cfg,
        &out,
        &[
            "--dataset",
            ds,
            "--checkpoint",
            a.to_str().unwrap(),
            "train",
        ],
    )
    .unwrap();
    icvi(
        &cfg,
        &out,
        &[
            "--dataset",
            ds,
            "--checkpoint",
            b.to_str().unwrap(),
            "train",
        ],
    )
    .unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ck = icvi_core::io::read_checkpoint(&a).unwrap();
    assert_eq!(ck.members.len(), 2);
    let records = std::fs::read_to_string(out.join("train_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 2);

    icvi(
        &cfg,
        &out,
        &["--checkpoint", a.to_str().unwrap(), "predict"],
    )
    .unwrap();
    let traj = std::fs::read_to_string(out.join("predict_replay.csv")).unwrap();
    assert!(traj.starts_with("time_s,quantity,segment_or_location,mean,variance,ci_half_width\n"));
    assert!(traj.contains(",mass,segment_2,"));
    assert!(traj.contains(",porosity,center,"));
    assert!(traj.contains(",ks,surface,"));
    let manifest = std::fs::read_to_string(out.join("predict_replay.csv.manifest.json")).unwrap();
    assert!(manifest.contains("\"regime\": \"interpolation\""));
    assert!(manifest.contains("sha256:"));
    let fields = std::fs::read_to_string(out.join("fields_replay/porosity_mean_000.csv")).unwrap();
    assert!(fields.starts_with("r_m,z_m,value\n"));
    assert_eq!(fields.lines().count(), 1 + 32);

    icvi(
        &cfg,
        &out,
        &[
            "--checkpoint",
            a.to_str().unwrap(),
            "predict",
            "--temperature",
            "1400",
            "--total-pressure",
            "1600",
        ],
    )
    .unwrap();
    let manifest =
        std::fs::read_to_string(out.join("predict_T1400_P1600.csv.manifest.json")).unwrap();
    assert!(manifest.contains("\"regime\": \"extrapolation\""));

    // a 1x1 sweep reproduces the prediction
    let sweep = "[sweep]\ntemperature_K = [1250.0, 1250.0]\npartial_pressure_Pa = [1600.0, 1600.0]\nnt = 1\nnp = 1\nduration_h = 35.0\nobserve_every_h = 17.5\n";
    let (_swept_dir, swept) = setup(sweep);
    icvi(
        &swept,
        &out,
        &["--checkpoint", a.to_str().unwrap(), "sweep"],
    )
    .unwrap();
    let point = std::fs::read_to_string(out.join("sweep/point_000.csv")).unwrap();
    let porosity = |t: &str| {
        t.lines()
            .filter(|l| l.contains(",porosity,"))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert!(!porosity(&point).is_empty());
    assert_eq!(porosity(&point), porosity(&traj));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.contains(",interpolation,"));
}

#[test]
fn malformed_checkpoint_exits_with_data_code() {
    let (dir, cfg) = setup("[[predict]]\ntemperature_K = 1250.0\ntotal_pressure_Pa = 1600.0\nduration_h = 35.0\nobserve_every_h = 17.5\n");
    let ck = dir.path().join("ck.json");
    std::fs::write(&ck, "{\"version\": 1, \"members\": [").unwrap();
    let r = icvi(
        &cfg,
        &dir.path().join("out"),
        &["--checkpoint", ck.to_str().unwrap(), "predict"],
    );
    assert!(
        matches!(r, Err(CliError::Core(icvi_core::Error::Checkpoint(_)))),
        "{r:?}"
    );
    assert_eq!(code(r), 3);
    let r = icvi(
        &cfg,
        &dir.path().join("out"),
        &[
            "--checkpoint",
            dir.path().join("nope.json").to_str().unwrap(),
            "predict",
        ],
    );
    assert_eq!(code(r), 5);
}

#[test]
fn predict_needs_both_temperature_and_pressure() {
    let (dir, cfg) = setup("");
    let r = icvi(
        &cfg,
        dir.path(),
        &["--checkpoint", "x.json", "predict", "--temperature", "1250"],
    );
    assert!(matches!(r, Err(CliError::MissingFlag("total-pressure"))));
}

#[test]
fn gradcheck_rejects_oversized_profile() {
    let (dir, cfg) = setup("[gradcheck]\nnr = 16\n");
    match icvi(&cfg, dir.path(), &["gradcheck"]) {
        Err(e @ CliError::Config { .. }) => {
            assert_eq!(e.exit_code(), 2);
            assert!(e.to_string().contains("/gradcheck"));
        }
        r => panic!("{r:?}"),
    }
}

#[test]
fn gradcheck_negative_control_exits_with_failure_code() {
    let (dir, cfg) = setup("[gradcheck]\nsteps = 2\n");
    assert_eq!(code(icvi(&cfg, dir.path(), &["gradcheck"])), 0);
    let r = icvi(&cfg, dir.path(), &["gradcheck", "--corrupt-adjoint"]);
    assert!(matches!(r, Err(CliError::GradcheckFailed(_))));
    assert_eq!(code(r), 6);
}

const CYCLE: &str = "
[[cycles]]
temperature_K = 1250.0
total_pressure_Pa = 1600.0
duration_h = 35.0
observe_every_h = 17.5
";

fn whole_mass(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.contains(",mass,whole,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn zero_trim_cycles_give_a_monotone_mass_curve() {
    let cycles = format!("{CYCLE}trim = {{ radial_m = 0.0 }}\n{CYCLE}{CYCLE}");
    let (dir, cfg) = setup(&cycles);
    let out = dir.path().join("out");
    icvi(&cfg, &out, &["multicycle"]).unwrap();
    let mass = whole_mass(&out.join("multicycle.csv"));
    assert_eq!(mass.len(), 3 * 3);
    assert!(mass
        .windows(2)
        .all(|w| w[1].1 >= w[0].1 && w[1].0 >= w[0].0));
    let ledger = std::fs::read_to_string(out.join("machining.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1);
}

#[test]
fn trim_beyond_the_preform_is_a_geometry_error() {
    let cycles = format!("{CYCLE}trim = {{ radial_m = 0.05 }}\n{CYCLE}");
    let (dir, cfg) = setup(&cycles);
    let r = icvi(&cfg, &dir.path().join("out"), &["multicycle"]);
    assert!(
        matches!(r, Err(CliError::Core(icvi_core::Error::InvalidGeometry(_)))),
        "{r:?}"
    );
    assert_eq!(code(r), 2);
}

#[test]
fn seed_flag_overrides_noise_stream() {
    let (dir, cfg) = setup("");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    icvi(&cfg, &a, &["--seed", "5", "synth"]).unwrap();
    icvi(&cfg, &b, &["--seed", "6", "synth"]).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_ne!(read(&a, "measurements.csv"), read(&b, "measurements.csv"));
    assert_eq!(
        read(&a, "measurements_clean.csv"),
        read(&b, "measurements_clean.csv")
    );
}
