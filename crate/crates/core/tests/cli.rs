use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kwsfcm::image::{decode, encode_pgm, encode_ppm, ColorImage, GrayImage, Image};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kwsfcm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stripes(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, _| [40u8, 128, 220][x * 3 / w])
}

fn write_pgm(dir: &Path, name: &str, img: &GrayImage) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, encode_pgm(img)).unwrap();
    p
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{} = ", key)))
        .unwrap_or_else(|| panic!("{} missing from report", key))
}

#[test]
fn segment_writes_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(30, 20));
    let out = dir.path().join("out");
    let o = run(&[
        "segment",
        "--algo",
        "kwsfcm",
        "--c",
        "3",
        s(&input),
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["labels.pgm", "centroids.pgm", "trace.csv", "report.txt"] {
        assert!(out.join(f).is_file(), "{} missing", f);
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "c"), "3");
    assert_eq!(value(&report, "algo"), "kwsfcm");
    assert_eq!(value(&report, "converged"), "true");
    let labels = match decode(&fs::read(out.join("labels.pgm")).unwrap()).unwrap() {
        Image::Gray(g) => g,
        _ => panic!("labels must be gray"),
    };
    let mut levels = labels.pixels().to_vec();
    levels.sort();
    levels.dedup();
    assert_eq!(levels, vec![0, 128, 255]);
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "iteration,J,v_1,v_2,v_3"));
}

#[test]
fn zero_clusters_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(12, 12));
    let o = run(&["segment", "--c", "0", s(&input), s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_zero_clusters_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(12, 12));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "c = 0\n").unwrap();
    let o = run(&[
        "segment",
        "--config",
        s(&cfg),
        s(&input),
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "segment",
        s(&dir.path().join("nope.pgm")),
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn segment_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = GrayImage::from_fn(25, 25, |x, y| ((x * 37 + y * 91) % 256) as u8);
    let input = write_pgm(dir.path(), "in.pgm", &noisy);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "segment",
            "--c",
            "2",
            "--init",
            "random:7",
            s(&input),
            s(out),
        ]);
        assert!(o.status.success());
    }
    for f in ["labels.pgm", "centroids.pgm", "trace.csv", "report.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{}",
            f
        );
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(18, 12));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# experiment\nalgo = fcm\nc = 2\nm = 2.5\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "segment",
        "--config",
        s(&cfg),
        "--c",
        "3",
        "--set",
        "alpha=1.5",
        s(&input),
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "algo"), "fcm");
    assert_eq!(value(&report, "c"), "3");
    assert_eq!(value(&report, "m"), "2.5");
    assert_eq!(value(&report, "alpha"), "1.5");
}

#[test]
fn dump_damping_writes_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(21, 21));
    let out = dir.path().join("o");
    assert!(run(&["segment", "--dump-damping", s(&input), s(&out)])
        .status
        .success());
    assert!(out.join("damping.pgm").is_file());
}

#[test]
fn color_with_identical_channels_stays_gray() {
    let dir = tempfile::tempdir().unwrap();
    let g = stripes(24, 16);
    let color = ColorImage::new(g.clone(), g.clone(), g).unwrap();
    let input = dir.path().join("in.ppm");
    fs::write(&input, encode_ppm(&color)).unwrap();
    let out = dir.path().join("o");
    let o = run(&["segment-color", "--c", "3", s(&input), s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seg = match decode(&fs::read(out.join("segmented.ppm")).unwrap()).unwrap() {
        Image::Color(c) => c,
        _ => panic!("expected a color image"),
    };
    assert_eq!((seg.width(), seg.height()), (24, 16));
    assert_eq!(seg.red, seg.green);
    assert_eq!(seg.green, seg.blue);
    let traces: Vec<String> = ["red", "green", "blue"]
        .iter()
        .map(|c| fs::read_to_string(out.join(format!("trace_{}.csv", c))).unwrap())
        .collect();
    // identical content apart from the channel comment line
    fn body(t: &str) -> Vec<&str> {
        t.lines().filter(|l| !l.starts_with("# channel")).collect()
    }
    assert_eq!(body(&traces[0]), body(&traces[1]));
    assert_eq!(body(&traces[1]), body(&traces[2]));
}

#[test]
fn segment_color_rejects_gray() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(12, 12));
    let o = run(&["segment-color", s(&input), s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn noise_writes_metadata_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &GrayImage::filled(20, 20, 128));
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    for out in [&a, &b] {
        let o = run(&[
            "noise",
            "--kind",
            "salt_pepper",
            "--level",
            "0.3",
            "--seed",
            "5",
            s(&input),
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let meta = fs::read_to_string(dir.path().join("a.pgm.meta")).unwrap();
    assert_eq!(value(&meta, "noise.kind"), "salt_pepper");
    assert_eq!(value(&meta, "noise.level"), "0.3");
    assert_eq!(value(&meta, "noise.seed"), "5");
    let o = run(&[
        "noise",
        "--kind",
        "salt_pepper",
        "--level",
        "2",
        s(&input),
        s(&a),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_self_reference_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(30, 20));
    let out = dir.path().join("o");
    let o = run(&[
        "pipeline",
        "--algo",
        "fcm",
        "--c",
        "3",
        "--runs",
        "1",
        "--noise-kind",
        "gaussian",
        "--noise-level",
        "0",
        s(&input),
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "sa.mean"), "100");
}

#[test]
fn pipeline_lists_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_pgm(dir.path(), "in.pgm", &stripes(30, 12));
    let out = dir.path().join("o");
    let o = run(&[
        "pipeline",
        "--runs",
        "25",
        "--noise-kind",
        "salt_pepper",
        "--noise-level",
        "0.1",
        "--noise-seed",
        "100",
        "--c",
        "3",
        s(&input),
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("runs.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        rows[0],
        "run,seed,sa,entropy,eqf,iterations,converged,centroids"
    );
    assert_eq!(rows.len(), 26);
    assert!(rows[25].starts_with("24,124,"));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "sa.defined_runs"), "25");
    assert_eq!(value(&report, "runs"), "25");
}

#[test]
fn eval_reports_requested_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_pgm(dir.path(), "map.pgm", &stripes(30, 20));
    let shifted = GrayImage::from_fn(30, 20, |x, _| [5u8, 90, 250][x * 3 / 30]);
    let reference = write_pgm(dir.path(), "ref.pgm", &shifted);
    let report_path = dir.path().join("eval.txt");
    let edges = dir.path().join("edges.pgm");
    let o = run(&[
        "eval",
        s(&map),
        "--sa",
        s(&reference),
        "--entropy",
        "--image",
        s(&map),
        "--eqf",
        "--dump-edges",
        s(&edges),
        "--out",
        s(&report_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = fs::read_to_string(&report_path).unwrap();
    assert_eq!(value(&r, "sa"), "100");
    assert_eq!(value(&r, "entropy.region"), "0");
    let layout: f64 = value(&r, "entropy.layout").parse().unwrap();
    assert!((layout - 3f64.ln()).abs() < 1e-12);
    assert_eq!(value(&r, "eqf"), "1");
    assert!(edges.is_file());
}

#[test]
fn eval_entropy_needs_image() {
    let dir = tempfile::tempdir().unwrap();
    let map = write_pgm(dir.path(), "map.pgm", &stripes(12, 12));
    assert_eq!(run(&["eval", s(&map), "--entropy"]).status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = GrayImage::from_fn(70, 60, |x, y| ((x * 53 + y * 29 + x * y) % 256) as u8);
    let input = write_pgm(dir.path(), "in.pgm", &noisy);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{}", threads));
        let o = bin()
            .env("KWSFCM_THREADS", threads)
            .args(["segment", "--c", "3", s(&input), s(&out)])
            .output()
            .unwrap();
        assert!(o.status.success());
        outputs.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
