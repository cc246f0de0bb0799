use std::path::Path;
use std::process::Command;

use cplab::config::{ExperimentConfig, ModelChoice, NcmChoice, Noise, Pair, SyntheticSection};
use cplab::report;
use cplab::runner::{self, Cell, DataCell, DataSource, RunSettings};
use cplab_core::data::NoiseKind;

fn tiny(pairs: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.repetitions = 3;
    cfg.sizes = vec![100];
    cfg.epsilons = vec![0.1];
    cfg.pairs = pairs.iter().map(|p| p.parse().unwrap()).collect();
    cfg.synthetic = Some(SyntheticSection {
        noises: vec![Noise(NoiseKind::HomoGauss)],
        test_size: 500,
        ..SyntheticSection::default()
    });
    cfg.training.epochs = 100;
    cfg.training.gp_steps = 5;
    cfg
}

fn settings(cfg: &ExperimentConfig) -> RunSettings {
    RunSettings {
        record_fit_time: false,
        ..RunSettings::from_config(cfg)
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn one_cell_three_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&["quantile-qr"]);
    let out = runner::run_sweep(&cfg, dir.path(), &settings(&cfg)).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.summaries.len(), 1);
    assert_eq!(report::read_raw(&dir.path().join(report::RAW_FILE)).unwrap().len(), 3);
    assert_eq!(report::read_summary(&dir.path().join(report::SUMMARY_FILE)).unwrap().len(), 1);
    assert!(report::read_failures(&dir.path().join(report::FAILURES_FILE)).unwrap().is_empty());
    let reps: Vec<usize> = out.records.iter().map(|r| r.rep).collect();
    assert_eq!(reps, [0, 1, 2]);
}

#[test]
fn interrupted_sweep_resumes_to_identical_output() {
    let cfg = tiny(&["absolute-nn", "quantile-qr"]);
    let full = tempfile::tempdir().unwrap();
    runner::run_sweep(&cfg, full.path(), &settings(&cfg)).unwrap();
    let expected = read(&full.path().join(report::RAW_FILE));

    // Keep the header and two finished rows, as if killed mid-run.
    let partial = tempfile::tempdir().unwrap();
    let kept: Vec<&str> = expected.lines().take(3).collect();
    std::fs::write(partial.path().join(report::RAW_FILE), kept.join("\n") + "\n").unwrap();
    let out = runner::run_sweep(&cfg, partial.path(), &settings(&cfg)).unwrap();
    assert_eq!(out.resumed, 2);
    assert_eq!(read(&partial.path().join(report::RAW_FILE)), expected);
    assert_eq!(
        read(&partial.path().join(report::SUMMARY_FILE)),
        read(&full.path().join(report::SUMMARY_FILE))
    );

    let again = runner::run_sweep(&cfg, partial.path(), &settings(&cfg)).unwrap();
    assert_eq!((again.jobs_run, again.resumed), (0, 6));
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let mut cfg = tiny(&["absolute-nn", "normalized-nn", "quantile-qr"]);
    cfg.sizes = vec![100, 150];
    cfg.epsilons = vec![0.1, 0.2];
    let mut texts = Vec::new();
    for workers in [1, 3] {
        cfg.workers = workers;
        let dir = tempfile::tempdir().unwrap();
        runner::run_sweep(&cfg, dir.path(), &settings(&cfg)).unwrap();
        texts.push([report::RAW_FILE, report::SUMMARY_FILE, report::CONVERGENCE_FILE].map(|f| read(&dir.path().join(f))));
    }
    assert_eq!(texts[0], texts[1]);
}

fn homo_cell(n: usize, pair: Pair, epsilon: f64) -> Cell {
    Cell {
        data: DataCell {
            source: DataSource::Synthetic {
                dim: 1,
                noise: NoiseKind::HomoGauss,
                noise_level: 0.3,
                test_size: 5000,
            },
            n,
        },
        pair,
        epsilon,
    }
}

#[test]
fn run_cell_is_deterministic() {
    let cfg = tiny(&["normalized-nn"]);
    let cell = homo_cell(100, Pair::new(NcmChoice::Normalized, ModelChoice::Nn), 0.1);
    let a = runner::run_cell(&cell, 4, &settings(&cfg));
    let b = runner::run_cell(&cell, 4, &settings(&cfg));
    assert!(a.is_ok());
    assert_eq!(a, b);
    assert_eq!(a.efficiency.to_bits(), b.efficiency.to_bits());

    // Wall-clock fit time is the only field allowed to differ.
    let timed = RunSettings::from_config(&cfg);
    assert!(runner::run_cell(&cell, 4, &timed).same_outcome(&a));
}

#[test]
fn homoscedastic_network_width_at_eighty_percent() {
    let cfg = ExperimentConfig::desk();
    let cell = homo_cell(1000, Pair::new(NcmChoice::Absolute, ModelChoice::Nn), 0.2);
    let r = runner::run_cell(&cell, 0, &settings(&cfg));
    assert!((0.6..=1.0).contains(&r.efficiency), "{}", r.efficiency);
}

#[test]
fn a_cell_where_every_repetition_fails_is_reported() {
    let mut cfg = tiny(&["quantile-qr"]);
    // Four proper rows cannot fit boosted trees.
    cfg.sizes = vec![5];
    let dir = tempfile::tempdir().unwrap();
    let out = runner::run_sweep(&cfg, dir.path(), &settings(&cfg)).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.failures.len(), 3);
    assert_eq!(out.dead_cells().len(), 1);
    let rows = report::read_failures(&dir.path().join(report::FAILURES_FILE)).unwrap();
    assert!(rows.iter().all(|r| !r.error.is_empty()));
}

fn cplab(args: &[&str], env_out: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cplab"));
    cmd.args(args).env("RUST_LOG", "warn");
    match env_out {
        Some(p) => cmd.env("CPLAB_OUT_DIR", p),
        None => cmd.env_remove("CPLAB_OUT_DIR"),
    };
    cmd.output().unwrap()
}

#[test]
fn cli_exit_codes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let out_dir = dir.path().join("out");

    std::fs::write(&cfg_path, "nonsense_key = 1\n").unwrap();
    assert_eq!(cplab(&["run", "-c", cfg_path.to_str().unwrap()], None).status.code(), Some(2));
    assert_eq!(cplab(&["run", "-c", "/nonexistent.toml"], None).status.code(), Some(2));
    assert_eq!(cplab(&["run", "--preset", "huge"], None).status.code(), Some(2));

    std::fs::write(
        &cfg_path,
        "repetitions = 2\nsizes = [100]\nepsilons = [0.1]\npairs = [\"quantile-qr\"]\n\
         [synthetic]\nnoises = [\"homo_gauss\"]\ntest_size = 200\n",
    )
    .unwrap();
    // The output directory comes from the environment when neither flag nor file sets it.
    let run = cplab(&["run", "-c", cfg_path.to_str().unwrap(), "--no-fit-time"], Some(&out_dir));
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = read(&out_dir.join(report::SUMMARY_FILE));
    let convergence = read(&out_dir.join(report::CONVERGENCE_FILE));
    let outliers = read(&out_dir.join(report::OUTLIERS_FILE));
    for f in [report::SUMMARY_FILE, report::CONVERGENCE_FILE, report::OUTLIERS_FILE] {
        std::fs::remove_file(out_dir.join(f)).unwrap();
    }
    let dir_arg = out_dir.to_str().unwrap();
    for sub in ["summarize", "convergence", "outliers"] {
        assert_eq!(cplab(&[sub, dir_arg], None).status.code(), Some(0));
    }
    assert_eq!(read(&out_dir.join(report::SUMMARY_FILE)), summary);
    assert_eq!(read(&out_dir.join(report::CONVERGENCE_FILE)), convergence);
    assert_eq!(read(&out_dir.join(report::OUTLIERS_FILE)), outliers);

    assert_ne!(cplab(&["summarize", dir.path().to_str().unwrap()], None).status.code(), Some(0));

    std::fs::write(&cfg_path, "sizes = [5]\npairs = [\"quantile-qr\"]\nrepetitions = 1\n").unwrap();
    let dead = cplab(&["run", "-c", cfg_path.to_str().unwrap(), "-o", dir_arg], None);
    assert_eq!(dead.status.code(), Some(1));
}

#[test]
fn cli_generates_synthetic_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = ["gen-data", "--noise", "right_skew", "--dim", "2", "--n", "40", "--test-size", "30", "-o", d];
    assert_eq!(cplab(&args, None).status.code(), Some(0));
    let train = read(&dir.path().join("train.csv"));
    let test = read(&dir.path().join("test.csv"));
    assert_eq!(train.lines().count(), 41);
    assert_eq!(test.lines().count(), 31);
    assert_eq!(train.lines().next().unwrap().split(',').count(), 3);

    let bad = ["gen-data", "--noise", "hetero_non_gauss", "--dim", "2", "-o", d];
    assert_eq!(cplab(&bad, None).status.code(), Some(2));
}

#[test]
fn show_config_round_trips() {
    let out = cplab(&["show-config", "--preset", "full", "--repetitions", "7"], None);
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.repetitions, 7);
    assert_eq!(cfg.sizes.len(), 10);
}
