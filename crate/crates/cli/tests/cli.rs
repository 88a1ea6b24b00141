use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use datc::container::{load_mask, load_tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};

const QUICK: [&str; 6] = ["--burn-in", "60", "--samples", "10", "--rank-init", "6"];

fn datc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_small(dir: &Path, out: &str, seed: &str) {
    let o = datc(
        dir,
        &[
            "synth",
            "--rank",
            "2",
            "--residual",
            "mixture_nonzero",
            "--missing",
            "0.5",
            "--dims",
            "8,7,6",
            "--seed",
            seed,
            "--out",
            out,
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn smooth_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            (x * 255 / w) as u8,
            (y * 255 / h) as u8,
            ((x + y) * 127 / (w + h)) as u8 + 64,
        ])
    })
}

#[test]
fn synth_writes_four_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = datc(
        dir.path(),
        &[
            "synth",
            "--rank",
            "5",
            "--residual",
            "mixture_nonzero",
            "--missing",
            "0.9",
            "--seed",
            "7",
            "--out",
            "s",
        ],
    );
    assert_eq!(code(&o), 0);
    let mut files: Vec<String> = fs::read_dir(dir.path().join("s"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "ground_truth.json",
            "manifest.json",
            "mask.dtm",
            "observed.dtc",
            "truth.dtc"
        ]
    );
    let mask = load_mask(dir.path().join("s/mask.dtm")).unwrap();
    assert_eq!(mask.observed_count(), 2700);
    let truth: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("s/ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth["true_rank"], 5);
    assert_eq!(truth["lambda"].as_array().unwrap().len(), 5);
    assert_eq!(truth["assignments"].as_array().unwrap().len(), 27_000);
}

#[test]
fn synth_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "a", "3");
    synth_small(dir.path(), "b", "3");
    synth_small(dir.path(), "c", "4");
    for f in ["truth.dtc", "observed.dtc", "mask.dtm", "ground_truth.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_ne!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["synth", "--rank", "5", "--residual", "sparse", "--missing", "1.0"],
        vec!["synth", "--rank", "5", "--residual", "bogus", "--missing", "0.5"],
        vec!["synth", "--rank", "40", "--residual", "sparse", "--missing", "0.5"],
        vec!["inpaint", "--input", "x.png"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&datc(dir.path(), &args)), 2, "{args:?}");
    }
}

#[test]
fn complete_reports_rank_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "s", "1");
    let mut args = vec![
        "complete",
        "--observed",
        "s/observed.dtc",
        "--mask",
        "s/mask.dtm",
        "--truth",
        "s/truth.dtc",
        "--out",
        "c",
    ];
    args.extend(QUICK);
    let o = datc(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("estimated rank: "), "{text}");
    assert!(text.contains("rre="), "{text}");
    let c = dir.path().join("c");
    for f in [
        "completed.dtc",
        "uncertainty.dtc",
        "lambda.csv",
        "mixture.json",
        "trace.csv",
        "metrics.csv",
        "manifest.json",
    ] {
        assert!(c.join(f).exists(), "{f}");
    }
    assert_eq!(load_tensor(c.join("completed.dtc")).unwrap().dims(), &[8, 7, 6]);
    let trace = fs::read_to_string(c.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# spatial=false\niter,rre,active_rank,D,seconds\n"));
    assert_eq!(trace.lines().count(), 2 + 70);
    let metrics = fs::read_to_string(c.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("dataset,missing_ratio,rre,psnr,ssim,seconds,seed\nobserved,0.5,"));
}

#[test]
fn spatial_flag_is_recorded_in_trace() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "s", "1");
    let mut args = vec![
        "complete",
        "--observed",
        "s/observed.dtc",
        "--mask",
        "s/mask.dtm",
        "--spatial",
        "on",
        "--out",
        "c",
    ];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 0);
    let trace = fs::read_to_string(dir.path().join("c/trace.csv")).unwrap();
    assert!(trace.starts_with("# spatial=true\n"));
}

#[test]
fn input_problems_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "s", "1");
    let o = datc(
        dir.path(),
        &[
            "complete",
            "--observed",
            "s/observed.dtc",
            "--mask",
            "missing.dtm",
            "--out",
            "c",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.dtm"));

    let o = datc(
        dir.path(),
        &[
            "synth",
            "--rank",
            "2",
            "--residual",
            "zero",
            "--missing",
            "0.5",
            "--dims",
            "8,7,5",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = datc(
        dir.path(),
        &[
            "complete",
            "--observed",
            "s/observed.dtc",
            "--mask",
            "t/mask.dtm",
            "--out",
            "c",
        ],
    );
    assert_eq!(code(&o), 3);

    fs::write(dir.path().join("junk.dtc"), b"not a tensor").unwrap();
    let o = datc(
        dir.path(),
        &[
            "complete",
            "--observed",
            "junk.dtc",
            "--mask",
            "s/mask.dtm",
            "--out",
            "c",
        ],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn chains_write_per_chain_and_pooled_results() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "s", "2");
    let mut args = vec![
        "complete",
        "--observed",
        "s/observed.dtc",
        "--mask",
        "s/mask.dtm",
        "--chains",
        "2",
        "--out",
        "c",
    ];
    args.extend(QUICK);
    let o = datc(dir.path(), &args);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(
        text.contains("chain 0 (seed 0)") && text.contains("chain 1 (seed 1)"),
        "{text}"
    );
    let c = dir.path().join("c");
    for f in [
        "chain_0/completed.dtc",
        "chain_1/trace.csv",
        "chains.json",
        "completed.dtc",
        "uncertainty.dtc",
    ] {
        assert!(c.join(f).exists(), "{f}");
    }
    let a = load_tensor(c.join("chain_0/completed.dtc")).unwrap();
    let b = load_tensor(c.join("chain_1/completed.dtc")).unwrap();
    let pooled = load_tensor(c.join("completed.dtc")).unwrap();
    for ((x, y), p) in a.values().iter().zip(b.values()).zip(pooled.values()) {
        assert!((0.5 * (x + y) - p).abs() < 1e-12);
    }
}

#[test]
fn replay_reproduces_outputs_and_checks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "s", "5");
    let mut args = vec![
        "complete",
        "--observed",
        "s/observed.dtc",
        "--mask",
        "s/mask.dtm",
        "--out",
        "c",
    ];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 0);
    let o = datc(dir.path(), &["replay", "c/manifest.json", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["completed.dtc", "uncertainty.dtc", "lambda.csv", "mixture.json"] {
        assert_eq!(
            fs::read(dir.path().join("c").join(f)).unwrap(),
            fs::read(dir.path().join("r").join(f)).unwrap(),
            "{f}"
        );
    }
    synth_small(dir.path(), "s", "6");
    assert_eq!(
        code(&datc(dir.path(), &["replay", "c/manifest.json", "--out", "r2"])),
        3
    );
}

#[test]
fn inpaint_random_missing_writes_image_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    smooth_image(20, 16).save(dir.path().join("img.png")).unwrap();
    let mut args = vec!["inpaint", "--input", "img.png", "--missing", "0.5", "--out", "o"];
    args.extend(QUICK);
    let o = datc(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ssim="));
    let done = image::open(dir.path().join("o/completed.png")).unwrap();
    assert_eq!((done.width(), done.height()), (20, 16));
    let metrics = fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "img");
    assert_eq!(row[1], "0.5");
    assert!(!row[4].is_empty());
}

#[test]
fn inpaint_mask_image_excludes_marked_pixels() {
    let dir = tempfile::tempdir().unwrap();
    smooth_image(12, 10).save(dir.path().join("img.png")).unwrap();
    let mask = GrayImage::from_fn(12, 10, |x, _| Luma([if x < 3 { 255 } else { 0 }]));
    mask.save(dir.path().join("mask.png")).unwrap();
    let mut args = vec!["inpaint", "--input", "img.png", "--mask", "mask.png", "--out", "o"];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 0);
    let observed = image::open(dir.path().join("o/observed.png")).unwrap().to_rgb8();
    let original = smooth_image(12, 10);
    for (x, y, px) in observed.enumerate_pixels() {
        if x < 3 {
            assert_eq!(px.0, [0, 0, 0]);
        } else {
            assert_eq!(px, original.get_pixel(x, y));
        }
    }
}

#[test]
fn inpaint_marker_colour_and_grayscale() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = smooth_image(12, 10);
    for x in 0..12 {
        img.put_pixel(x, 4, Rgb([255, 0, 255]));
    }
    img.save(dir.path().join("marked.png")).unwrap();
    let mut args = vec!["inpaint", "--input", "marked.png", "--marker", "ff00ff", "--out", "o"];
    args.extend(QUICK);
    let o = datc(dir.path(), &args);
    assert_eq!(code(&o), 0);
    assert!(!dir.path().join("o/metrics.csv").exists());

    let gray = GrayImage::from_fn(12, 10, |x, y| Luma([(x * 20 + y) as u8]));
    gray.save(dir.path().join("gray.png")).unwrap();
    let mut args = vec!["inpaint", "--input", "gray.png", "--missing", "0.3", "--out", "g"];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 0);
    assert_eq!(
        load_tensor(dir.path().join("g/completed.dtc")).unwrap().dims(),
        &[10, 12, 1]
    );
}

#[test]
fn video_stacks_frames_into_four_modes() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for t in 0..3 {
        smooth_image(10, 8).save(frames.join(format!("f{t}.png"))).unwrap();
    }
    let mut args = vec!["video", "--frames", "frames", "--missing", "0.5", "--out", "v"];
    args.extend(QUICK);
    let o = datc(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        load_tensor(dir.path().join("v/completed.dtc")).unwrap().dims(),
        &[8, 10, 3, 3]
    );
    for t in 0..3 {
        assert!(dir.path().join(format!("v/frames/frame_{t:04}.png")).exists());
    }

    let single = dir.path().join("single");
    fs::create_dir(&single).unwrap();
    smooth_image(10, 8).save(single.join("only.png")).unwrap();
    let mut args = vec!["video", "--frames", "single", "--missing", "0.5", "--out", "s"];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 0);
    assert_eq!(
        load_tensor(dir.path().join("s/completed.dtc")).unwrap().dims(),
        &[8, 10, 3]
    );

    smooth_image(9, 8).save(frames.join("f9.png")).unwrap();
    let mut args = vec!["video", "--frames", "frames", "--missing", "0.5", "--out", "bad"];
    args.extend(QUICK);
    assert_eq!(code(&datc(dir.path(), &args)), 3);
}
