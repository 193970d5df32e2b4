use std::path::Path;
use std::process::Command;

use sccnn::data::{encode_idx, IdxTensor};
use sccnn::nn::Variant;
use sccnn_cli::experiment::{run_ablation, train_model, MnistData};
use sccnn_cli::ExperimentConfig;

fn sccnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sccnn"))
}

/// Writes a small synthetic MNIST-shaped dataset: `per_class` images of each
/// digit, where digit `d` lights up column band `d` plus deterministic noise.
fn write_synthetic(dir: &Path, per_class: usize) {
    let n = per_class * 10;
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let d = i % 10;
        labels.push(d as u8);
        for r in 0..28 {
            for c in 0..28 {
                let band = c / 3 == d || r / 3 == d;
                let noise = ((i * 131 + r * 17 + c * 7) % 23) as u8;
                pixels.push(if band { 200 + noise } else { noise });
            }
        }
    }
    let images = IdxTensor {
        dims: vec![n, 28, 28],
        data: pixels,
    };
    let labels = IdxTensor {
        dims: vec![n],
        data: labels,
    };
    for prefix in ["train", "t10k"] {
        std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&images)).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&labels)).unwrap();
    }
}

fn synthetic_config(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        epochs: 3,
        train_per_class: 4,
        test_per_class: 4,
        embed: 4,
        conv_channels: 2,
        seeds: vec![1, 2],
        output: dir.join("out"),
        ..ExperimentConfig::default()
    };
    c.set_data_dir(dir);
    c
}

#[test]
fn build_complex_canonicalizes_face_lists() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("faces.txt");
    std::fs::write(&input, "2 1 3\n0 2 1 # first\n").unwrap();
    let out = sccnn().arg("build-complex").arg(&input).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        body,
        ["0", "1", "2", "3", "0 1", "0 2", "1 2", "1 3", "2 3", "0 1 2", "1 2 3"]
    );

    std::fs::write(&input, "0 1 2 3\n").unwrap();
    let out = sccnn().arg("build-complex").arg(&input).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn inspect_operators_prints_coordinates() {
    let out = sccnn()
        .args(["inspect-operators", "--grid", "28,28,4,4", "--operator", "b1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# counts 49 156 144"));
    assert_eq!(lines.next(), Some("## b1"));
    assert_eq!(lines.next(), Some("# 49 156 312"));
    assert_eq!(lines.count(), 312);
}

#[test]
fn gradcheck_exit_status_reflects_corruption() {
    let small = ["--embed", "4", "--conv-channels", "3", "--variants", "gconv-conv1d-fc"];
    let ok = sccnn().arg("gradcheck").args(small).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = sccnn()
        .arg("gradcheck")
        .args(small)
        .args(["--inject-fault", "sparse-skips-transpose"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "epochs = 0\nbatch_size = 0\n").unwrap();
    let out = sccnn()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size must be positive"));

    let out = sccnn()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--batch-size", "8", "--data-dir"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fetch-data"));
}

#[test]
fn training_is_reproducible_and_untrained_models_are_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), 12);
    let config = synthetic_config(dir.path());
    let data = MnistData::load(&config).unwrap();

    let (_, _, a) = train_model(&config, Variant::ScconvConv1dFc, 1, &data, |_, _| {}).unwrap();
    let (_, _, b) = train_model(&config, Variant::ScconvConv1dFc, 1, &data, |_, _| {}).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.loss_trace.len(), 3);
    assert_eq!((a.train_samples, a.test_samples), (40, 40));
    assert!((0.0..=100.0).contains(&a.accuracy));

    let untrained = ExperimentConfig {
        epochs: 0,
        test_per_class: 12,
        ..config
    };
    let mut accs = Vec::new();
    for seed in 1..=5 {
        let (_, _, r) = train_model(&untrained, Variant::Conv1dFc, seed, &data, |_, _| {}).unwrap();
        assert!(r.loss_trace.is_empty());
        accs.push(r.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(mean < 30.0, "untrained accuracy {accs:?}");
}

#[test]
fn ablation_writes_csv_json_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), 6);
    let config = synthetic_config(dir.path());
    let data = MnistData::load(&config).unwrap();

    let mut seen = Vec::new();
    let summary = run_ablation(&config, &data, false, |r, reused| {
        seen.push((r.variant, r.seed, reused))
    })
    .unwrap();
    assert_eq!(seen.len(), 6);
    assert!(seen.iter().all(|s| !s.2));
    assert_eq!(summary.variants.len(), 3);
    for v in &summary.variants {
        assert_eq!(v.runs, 2);
        assert!(v.std >= 0.0);
    }

    let csv = std::fs::read_to_string(config.output.join("runs.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("variant,seed,accuracy,epochs,wall_clock_s"));
    let first: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(&first[..2], ["conv1d-fc", "1"]);
    assert_eq!(first[3], "3");
    assert_eq!(rows.count(), 5);
    assert!(config.output.join("summary.json").exists());
    assert!(config.output.join("checkpoints/scconv-conv1d-fc-seed2.json").exists());

    // a resumed ablation reuses every finished run and reproduces the summary
    let mut reused = 0;
    let again = run_ablation(&config, &data, true, |_, r| reused += usize::from(r)).unwrap();
    assert_eq!(reused, 6);
    assert_eq!(again.variants, summary.variants);

    let single = ExperimentConfig {
        seeds: vec![3],
        variants: vec![Variant::Conv1dFc],
        output: dir.path().join("single"),
        ..config
    };
    let s = run_ablation(&single, &data, false, |_, _| {}).unwrap();
    assert_eq!(s.variants[0].runs, 1);
    assert_eq!(s.variants[0].std, 0.0);
}
