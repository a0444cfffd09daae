//! Black-box tests of the command-line binary: exit codes, file
//! contracts, and diagnostics, driven through real process invocations.

use colorunet::colorspace::RgbImage;
use colorunet::render::write_rgb_png;
use std::path::{Path, PathBuf};
use std::process::Output;

fn run(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_colorunet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Small four-color corpus, distinct enough that a 4-bin fit succeeds.
fn write_corpus(dir: &Path, count: usize, side: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let palette: [[f32; 3]; 4] = [
        [0.82, 0.16, 0.12],
        [0.12, 0.24, 0.86],
        [0.05, 0.78, 0.16],
        [0.90, 0.86, 0.12],
    ];
    for i in 0..count {
        let img = RgbImage::from_fn(side, side, |x, y| {
            let half = side / 2;
            let q = match ((x + i) % side < half, y < half) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            palette[q]
        })
        .unwrap();
        write_rgb_png(&dir.join(format!("img_{i}.png")), &img).unwrap();
    }
}

fn write_gray(path: &Path, w: usize, h: usize) {
    let img = RgbImage::from_fn(w, h, |x, _| {
        let v = if x < w / 2 { 0.55 } else { 0.25 };
        [v, v, v]
    })
    .unwrap();
    write_rgb_png(path, &img).unwrap();
}

/// Fits a discretizer and trains a tiny model; returns their paths.
fn train_fixture(root: &Path) -> (PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    write_corpus(&corpus, 4, 16);
    let disc_dir = root.join("disc");
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&corpus),
        "--out",
        &s(&disc_dir),
        "--n",
        "4",
        "--frame",
        "16",
        "--val-fraction",
        "0",
        "--threads",
        "1",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_dir = root.join("run");
    let out = run(&[
        "train",
        "--images",
        &s(&corpus),
        "--discretizer",
        &s(&disc_dir.join("discretizer.cdsc")),
        "--out",
        &s(&run_dir),
        "--frame",
        "16",
        "--base-filters",
        "2",
        "--batch",
        "2",
        "--phase1-steps",
        "2",
        "--phase2-steps",
        "0",
        "--val-every",
        "0",
        "--no-augment",
        "--threads",
        "1",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (
        disc_dir.join("discretizer.cdsc"),
        run_dir.join("model.cunw"),
    )
}

#[test]
fn invalid_temperature_is_a_config_error() {
    let out = run(&[
        "colorize",
        "--input",
        "probe.png",
        "--checkpoint",
        "model.cunw",
        "--discretizer",
        "disc.cdsc",
        "--out",
        "out",
        "--temperature",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("temperature"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.cfg");
    std::fs::write(&cfg, "images = corpus\nbogus_knob = 3\n").unwrap();
    let out = run(&[
        "fit-discretizer",
        "--config",
        &s(&cfg),
        "--out",
        &s(&root.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus_knob"), "{}", stderr(&out));
}

#[test]
fn missing_image_directory_is_a_data_error() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&root.path().join("no_such_dir")),
        "--out",
        &s(&root.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn requesting_more_bins_than_the_corpus_occupies_reports_the_deficit() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    // Two flat-color images occupy exactly two chroma cells.
    for (i, color) in [[0.9f32, 0.1, 0.1], [0.1, 0.1, 0.9]].iter().enumerate() {
        let img = RgbImage::from_fn(16, 16, |_, _| *color).unwrap();
        write_rgb_png(&corpus.join(format!("img_{i}.png")), &img).unwrap();
    }
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&corpus),
        "--out",
        &s(&root.path().join("out")),
        "--n",
        "32",
        "--frame",
        "16",
        "--val-fraction",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("fewer than"), "{msg}");
    assert!(msg.contains("32"), "{msg}");
}

#[test]
fn divergent_training_exits_numeric_and_keeps_last_good_state() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    write_corpus(&corpus, 4, 16);
    let disc_dir = root.path().join("disc");
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&corpus),
        "--out",
        &s(&disc_dir),
        "--n",
        "4",
        "--frame",
        "16",
        "--val-fraction",
        "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_dir = root.path().join("run");
    let out = run(&[
        "train",
        "--images",
        &s(&corpus),
        "--discretizer",
        &s(&disc_dir.join("discretizer.cdsc")),
        "--out",
        &s(&run_dir),
        "--frame",
        "16",
        "--base-filters",
        "2",
        "--batch",
        "2",
        "--phase1-steps",
        "3",
        "--phase2-steps",
        "0",
        "--phase1-lr",
        "1e25",
        "--val-every",
        "0",
        "--no-augment",
        "--threads",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("iteration"), "{msg}");
    assert!(
        run_dir.join("last_good.cunw").is_file(),
        "last good parameters were not preserved"
    );
}

#[test]
fn augmentation_multiplies_training_samples_sevenfold() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    write_corpus(&corpus, 4, 16);
    let disc_dir = root.path().join("disc");
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&corpus),
        "--out",
        &s(&disc_dir),
        "--n",
        "4",
        "--frame",
        "16",
        "--val-fraction",
        "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let sample_count = |augment: &str| -> (u64, u64) {
        let run_dir = root.path().join(format!("run{augment}"));
        let out = run(&[
            "train",
            "--images",
            &s(&corpus),
            "--discretizer",
            &s(&disc_dir.join("discretizer.cdsc")),
            "--out",
            &s(&run_dir),
            "--frame",
            "16",
            "--base-filters",
            "2",
            "--batch",
            "2",
            "--phase1-steps",
            "2",
            "--phase2-steps",
            "0",
            "--val-every",
            "0",
            "--val-fraction",
            "0",
            augment,
            "--threads",
            "1",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let log = std::fs::read_to_string(run_dir.join("training_log.csv")).unwrap();
        let grab = |key: &str| -> u64 {
            log.lines()
                .find_map(|l| l.strip_prefix(&format!("# {key} = ")))
                .unwrap_or_else(|| panic!("{key} missing from log header"))
                .parse()
                .unwrap()
        };
        (grab("train_images"), grab("train_samples"))
    };

    let (images, plain) = sample_count("--no-augment");
    assert_eq!(plain, images);
    let (images, augmented) = sample_count("--augment");
    assert_eq!(augmented, 7 * images, "sevenfold expansion");
}

#[test]
fn colorize_writes_one_image_per_temperature_and_confidence_maps() {
    let root = tempfile::tempdir().unwrap();
    let (disc, model) = train_fixture(root.path());
    let probe = root.path().join("probe.png");
    write_gray(&probe, 20, 12);
    let color_dir = root.path().join("color");
    let out = run(&[
        "colorize",
        "--input",
        &s(&probe),
        "--checkpoint",
        &s(&model),
        "--discretizer",
        &s(&disc),
        "--out",
        &s(&color_dir),
        "--temperature",
        "0.4",
        "--temperature",
        "1",
        "--confidence",
        "--histogram",
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in [
        "probe_t0.4.png",
        "probe_t1.png",
        "probe_top1.png",
        "probe_ratio.png",
        "probe_histogram.csv",
    ] {
        assert!(color_dir.join(name).is_file(), "{name} missing");
    }
    // Outputs keep the native size of the input.
    let reread = image::open(color_dir.join("probe_t0.4.png")).unwrap();
    assert_eq!((reread.width(), reread.height()), (20, 12));
}

#[test]
fn video_gaps_are_rejected_with_the_missing_indices() {
    let root = tempfile::tempdir().unwrap();
    let (disc, model) = train_fixture(root.path());
    let frames = root.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for idx in [0u32, 1, 3, 6] {
        write_gray(&frames.join(format!("frame_{idx:06}.png")), 16, 16);
    }
    let out = run(&[
        "colorize-video",
        "--frames",
        &s(&frames),
        "--checkpoint",
        &s(&model),
        "--discretizer",
        &s(&disc),
        "--out",
        &s(&root.path().join("video_out")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("missing frame indices: 2, 4, 5"),
        "{}",
        stderr(&out)
    );

    // Filling the gaps makes the same invocation succeed and produce
    // one recolored frame per input plus the stability report.
    for idx in [2u32, 4, 5] {
        write_gray(&frames.join(format!("frame_{idx:06}.png")), 16, 16);
    }
    let video_out = root.path().join("video_out");
    let out = run(&[
        "colorize-video",
        "--frames",
        &s(&frames),
        "--checkpoint",
        &s(&model),
        "--discretizer",
        &s(&disc),
        "--out",
        &s(&video_out),
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for idx in 0..=6u32 {
        assert!(video_out.join(format!("frame_{idx:06}.png")).is_file());
    }
    let stability = std::fs::read_to_string(video_out.join("stability.csv")).unwrap();
    // Header plus one row per transition.
    assert_eq!(stability.lines().count(), 1 + 6, "{stability}");
}

#[test]
fn analyze_rejects_empty_and_malformed_logs_with_line_numbers() {
    let root = tempfile::tempdir().unwrap();
    let log = root.path().join("training_log.csv");

    std::fs::write(&log, "# train_samples = 3\niter,phase,lr,train_loss,val_loss\n").unwrap();
    let out = run(&[
        "analyze",
        "--log",
        &s(&log),
        "--out",
        &s(&root.path().join("a1")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("no data rows"), "{}", stderr(&out));

    std::fs::write(
        &log,
        "iter,phase,lr,train_loss,val_loss\n1,1,0.001,3.4,\n2,1,0.001,not_a_number,\n",
    )
    .unwrap();
    let out = run(&[
        "analyze",
        "--log",
        &s(&log),
        "--out",
        &s(&root.path().join("a2")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains(":3:"), "{}", stderr(&out));
}

#[test]
fn analyze_draws_a_loss_curve_from_a_real_log() {
    let root = tempfile::tempdir().unwrap();
    let log = root.path().join("training_log.csv");
    let mut text = String::from("iter,phase,lr,train_loss,val_loss\n");
    for i in 1..=20 {
        let loss = 3.0 / (1.0 + i as f64 * 0.2);
        let val = if i % 5 == 0 {
            format!("{:.6}", loss + 0.1)
        } else {
            String::new()
        };
        text.push_str(&format!("{i},1,0.001,{loss:.6},{val}\n"));
    }
    std::fs::write(&log, text).unwrap();
    let out_dir = root.path().join("analysis");
    let out = run(&["analyze", "--log", &s(&log), "--out", &s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("loss_curve.png").is_file());
}

#[test]
fn manifest_reruns_reproduce_the_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    write_corpus(&corpus, 4, 16);
    let out1 = root.path().join("out1");
    let out = run(&[
        "fit-discretizer",
        "--images",
        &s(&corpus),
        "--out",
        &s(&out1),
        "--n",
        "4",
        "--frame",
        "16",
        "--val-fraction",
        "0",
        "--threads",
        "1",
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // The manifest doubles as a config file; only the output directory
    // changes on the rerun.
    let out2 = root.path().join("out2");
    let out = run(&[
        "fit-discretizer",
        "--config",
        &s(&out1.join("run_manifest.txt")),
        "--out",
        &s(&out2),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["discretizer.cdsc", "bins.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert!(a == b, "{name} differs between original and manifest rerun");
    }
}
