//! End-to-end checks of the `fflow` binary: artifact round-trips, dry runs,
//! exit codes, and the image-conversion path.

use std::path::{Path, PathBuf};
use std::process::Command;

use fflow_cli::config::{Experiment, RunConfig};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fflow")
}

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_mean_config() -> RunConfig {
    let mut cfg = RunConfig::preset(Experiment::GaussianFlow);
    cfg.data_d = 4;
    cfg.layer_sizes = vec![4, 3, 1];
    cfg.grid_points = 5;
    cfg.n_per_theta = 200;
    cfg.fi_n_samples = 2_000;
    cfg.epochs = 2;
    cfg.checkpoint_stride = 1;
    cfg.learning_rate = 1e-3;
    cfg.delta_d = 4;
    cfg.max_dim = 4 + 3 * 4;
    cfg
}

#[test]
fn gen_writes_loadable_artifacts() {
    let dir = out_dir("cli-gen");
    let config = dir.join("cfg.txt");
    std::fs::write(&config, tiny_mean_config().to_flat()).unwrap();
    let output = Command::new(bin())
        .args(["gen", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("analytic FI of this family: 4"));

    let (train, mixing) = fflow_core::container::read_dataset(&dir.join("train.ffd")).unwrap();
    assert_eq!(train.n_blocks(), 5);
    assert_eq!(train.d(), 4);
    assert!(mixing.is_none());
    let (triplet, _) = fflow_core::container::read_dataset(&dir.join("fi_triplet.ffd")).unwrap();
    assert_eq!(triplet.n_blocks(), 3);

    // The generated triplet file feeds estimate-fi unchanged.
    let est_dir = dir.join("est");
    let output = Command::new(bin())
        .args([
            "estimate-fi",
            "--config",
            config.to_str().unwrap(),
            "--data",
            dir.join("fi_triplet.ffd").to_str().unwrap(),
            "--out",
            est_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(est_dir.join("trace.csv").exists());
    assert!(est_dir.join("estimate.json").exists());
}

#[test]
fn dry_run_prints_prediction_without_artifacts() {
    let dir = out_dir("cli-dry");
    let output = Command::new(bin())
        .args([
            "estimate-fi",
            "--preset",
            "fig3_std",
            "--dry-run",
            "--out",
            dir.join("none").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("predicted rel_std"), "{stdout}");
    assert!(!dir.join("none").exists(), "dry run must not write artifacts");
}

#[test]
fn flow_exit_code_distinguishes_nonconverged() {
    let dir = out_dir("cli-flow-exit");
    let mut cfg = tiny_mean_config();
    // Cap the ladder below three stages so cells cannot converge.
    cfg.max_dim = cfg.data_d + cfg.delta_d;
    let config = dir.join("cfg.txt");
    std::fs::write(&config, cfg.to_flat()).unwrap();
    let run_dir = dir.join("run");
    let run = |extra: &[&str]| {
        let mut args = vec![
            "flow",
            "--config",
            config.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        Command::new(bin()).args(&args).output().unwrap()
    };
    let strict = run(&[]);
    assert_eq!(strict.status.code(), Some(3), "expected the non-converged exit code");
    let permissive = run(&["--allow-nonconverged"]);
    assert!(permissive.status.success());
    // Verdicts stay in the report either way.
    let csv = std::fs::read_to_string(dir.join("run/flow.csv")).unwrap();
    assert!(csv.contains("not_converged"), "{csv}");
}

#[test]
fn convert_images_roundtrip_and_loader() {
    let dir = out_dir("cli-convert");
    let input = dir.join("frames");
    std::fs::create_dir_all(&input).unwrap();
    let width = 30;
    let height = 22;
    // Three positions, a handful of frames each, with a position-dependent
    // gradient so the loader has signal to standardize.
    for (name, level) in [("-0.3", 10.0f32), ("0", 12.0), ("0.3", 14.0)] {
        let mut text = String::new();
        for f in 0..4 {
            let frame: Vec<String> = (0..width * height)
                .map(|px| format!("{}", level + (px % 7) as f32 + f as f32 * 0.25))
                .collect();
            text.push_str(&frame.join(","));
            text.push('\n');
        }
        std::fs::write(input.join(format!("{name}.csv")), text).unwrap();
    }
    let container = dir.join("images.ffi");
    let output = Command::new(bin())
        .args([
            "convert-images",
            "--input",
            input.to_str().unwrap(),
            "--out",
            container.to_str().unwrap(),
            "--width",
            "30",
            "--height",
            "22",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let c = fflow_core::container::read_image_container(&container).unwrap();
    assert_eq!(c.positions, vec![-0.3, 0.0, 0.3]);
    assert_eq!(c.n_frames(0), 4);

    // Loadable as a standardized grid dataset with the full-frame window.
    let opts = fflow_core::container::ImageLoadOptions {
        crop_rows: 18,
        crop_cols: 24,
        row_offset: None,
        col_offset: None,
    };
    let ds = fflow_core::container::load_image_container_with(&container, opts).unwrap();
    assert_eq!(ds.d(), 432);
    assert_eq!(ds.n_blocks(), 3);
}

#[test]
fn rejects_unknown_preset_and_missing_config() {
    let out = Command::new(bin())
        .args(["gen", "--preset", "nonexistent", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(bin()).args(["gen"]).output().unwrap();
    assert!(!out.status.success());
}
