//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line to
//! stderr (uncaptured) before asserting.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use kwsfcm::cli::config::RunConfig;
use kwsfcm::cli::run::{reference_map, run_pipeline, segment_with};
use kwsfcm::clustering::{
    fcm_segment, kwsfcm_segment_with, update_partition, Algorithm, Centroids, ClusterParams,
    KwsfcmOptions,
};
use kwsfcm::image::{encode_pgm, GrayImage};
use kwsfcm::kernel::KernelParams;
use kwsfcm::metrics::{entropy_measure, eqf, inverse_blurriness, segmentation_accuracy, EqfParams};
use kwsfcm::noise::{add_noise, NoiseKind, NoiseSpec};
use kwsfcm::susan::{build_mask, damping_field, solve_t, SusanParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Serializes the heavy criteria so timings are not skewed.
static HEAVY: Mutex<()> = Mutex::new(());

fn verdict(id: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{}] {} {}", tag, id, detail);
    assert!(pass, "{} failed: {}", id, detail);
}

fn two_region(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, _| if x < w / 2 { 60 } else { 180 })
}

fn salt_pepper(img: &GrayImage, level: f64, seed: u64) -> GrayImage {
    add_noise(img, &NoiseSpec::new(NoiseKind::SaltPepper, level, seed)).unwrap()
}

#[test]
fn ac01_susan_threshold() {
    let t = solve_t(1.0 / 16.0, 255.0, 6).unwrap();
    // closed form: exp(-(255/t)^6) = 1/16
    let oracle = 255.0 / 16f64.ln().powf(1.0 / 6.0);
    let pass = (t - 215.1424).abs() <= 1e-3 && (t - oracle).abs() < 1e-9;
    verdict(
        "AC1",
        pass,
        &format!(
            "t = {:.6}, target 215.1424 +/- 1e-3, closed form {:.6}",
            t, oracle
        ),
    );
}

#[test]
fn ac02_mask_structure() {
    let mask = build_mask();
    let mut rows = [0usize; 7];
    let mut rings = [0usize; 5];
    for &(dx, dy) in mask.offsets() {
        rows[(dy + 3) as usize] += 1;
        rings[(dx.abs() + dy.abs()) as usize] += 1;
    }
    let total = mask.total_weight();
    let pass = mask.len() == 37
        && rows == [3, 5, 7, 7, 7, 5, 3]
        && rings == [1, 4, 8, 12, 12]
        && total == 16.0;
    verdict(
        "AC2",
        pass,
        &format!(
            "{} offsets, rows {:?}, rings {:?}, sum w = {}",
            mask.len(),
            rows,
            rings,
            total
        ),
    );
}

#[test]
fn ac03_uniform_degeneracy() {
    let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let img = GrayImage::filled(64, 64, 117);
    let start = Instant::now();
    let field = damping_field(&img, &build_mask(), &SusanParams::default());
    let areas_ok = field.area().iter().all(|&a| a == 16.0);
    let damping_ok = field.damping().iter().all(|&s| s == 0.0);
    let seg = kwsfcm_segment_with(
        &img,
        &ClusterParams::with_clusters(1),
        &KernelParams::default(),
        &SusanParams::default(),
        &KwsfcmOptions::default(),
        |_| {},
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let one_cluster = seg.map.labels().iter().all(|&l| l == 0);
    let pass = areas_ok
        && field.sigma() == 0.0
        && damping_ok
        && seg.trace.converged
        && one_cluster
        && elapsed < 1.0;
    verdict(
        "AC3",
        pass,
        &format!(
            "areas all 16: {}, sigma = {}, s all 0: {}, converged: {} in {} iters, one cluster: {}, {:.3}s (< 1s)",
            areas_ok,
            field.sigma(),
            damping_ok,
            seg.trace.converged,
            seg.trace.iterations(),
            one_cluster,
            elapsed
        ),
    );
}

#[test]
fn ac04_kkt_grid_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let params = ClusterParams::with_clusters(2);
    let kparams = KernelParams::default();
    let sparams = SusanParams::default();
    let sigma2 = kparams.sigma * kparams.sigma;
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / sigma2).exp();
    let instances = 30;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..instances {
        let (w, h) = [(8, 1), (4, 2), (2, 3), (3, 2), (7, 1)][rng.random_range(0..5)];
        let px: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let img = GrayImage::new(w, h, px).unwrap();
        let field = damping_field(&img, &build_mask(), &sparams);
        let v = Centroids(vec![
            rng.random_range(0.0..255.0),
            rng.random_range(0.0..255.0),
        ]);
        let u = update_partition(&img, &field, &v, &params, &kparams).unwrap();
        for p in 0..img.len() {
            let x = f64::from(img.pixels()[p]);
            let xm = field.weighted_mean()[p];
            let s = field.damping()[p];
            let d: Vec<f64> = v
                .values()
                .iter()
                .map(|&vi| s * (1.0 - k(x, vi)) + params.alpha * (1.0 - k(xm, vi)))
                .collect();
            let f = |u0: f64| u0.powf(params.m) * d[0] + (1.0 - u0).powf(params.m) * d[1];
            let got = f(u.get(0, p));
            let grid_best = (0..=100)
                .map(|g| f(g as f64 * 0.01))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(got - grid_best);
            if got > grid_best + 1e-3 {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures == 0 && elapsed < 10.0;
    verdict(
        "AC4",
        pass,
        &format!(
            "{} instances, {} columns above grid optimum + 1e-3, worst excess {:.3e}, {:.3}s (< 10s)",
            instances, failures, worst, elapsed
        ),
    );
}

struct NoisyStudy {
    sa_kwsfcm: Vec<f64>,
    sa_fcm: Vec<f64>,
    e_kwsfcm: Vec<f64>,
    e_fcm: Vec<f64>,
    iterations: Vec<usize>,
    converged: Vec<bool>,
    final_shift: Vec<f64>,
    worst_column_error: f64,
    out_of_range: usize,
    elapsed: f64,
}

/// The 25-run study shared by AC5, AC6, AC7 and AC9.
fn noisy_study() -> NoisyStudy {
    let start = Instant::now();
    let clean = two_region(100, 100);
    let mut cfg = RunConfig::default();
    let reference = reference_map(&clean, &cfg).unwrap();
    let mut study = NoisyStudy {
        sa_kwsfcm: vec![],
        sa_fcm: vec![],
        e_kwsfcm: vec![],
        e_fcm: vec![],
        iterations: vec![],
        converged: vec![],
        final_shift: vec![],
        worst_column_error: 0.0,
        out_of_range: 0,
        elapsed: 0.0,
    };
    for seed in 0..25u64 {
        let noisy = salt_pepper(&clean, 0.2, 1000 + seed);
        cfg.algo = Algorithm::Kwsfcm;
        let mut col_err: f64 = 0.0;
        let mut bad = 0usize;
        let seg = segment_with(&noisy, &cfg, |state| {
            col_err = col_err.max(state.partition.max_column_error());
            bad += state
                .partition
                .columns()
                .flatten()
                .filter(|u| !(0.0..=1.0).contains(*u))
                .count();
        })
        .unwrap();
        study.worst_column_error = study.worst_column_error.max(col_err);
        study.out_of_range += bad;
        let fcm = fcm_segment(&noisy, &cfg.cluster).unwrap();
        study
            .sa_kwsfcm
            .push(segmentation_accuracy(&seg.map, &reference).unwrap());
        study
            .sa_fcm
            .push(segmentation_accuracy(&fcm.map, &reference).unwrap());
        study.e_kwsfcm.push(
            entropy_measure(&noisy, &seg.map, std::f64::consts::E)
                .unwrap()
                .combined,
        );
        study.e_fcm.push(
            entropy_measure(&noisy, &fcm.map, std::f64::consts::E)
                .unwrap()
                .combined,
        );
        study.iterations.push(seg.trace.iterations());
        study.converged.push(seg.trace.converged);
        study.final_shift.push(
            seg.trace
                .records
                .last()
                .map_or(f64::NAN, |r| r.centroid_shift),
        );
    }
    study.elapsed = start.elapsed().as_secs_f64();
    study
}

fn study() -> &'static NoisyStudy {
    use std::sync::OnceLock;
    static STUDY: OnceLock<NoisyStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
        noisy_study()
    })
}

#[test]
fn ac05_desk_scale_accuracy() {
    let s = study();
    let mean = s.sa_kwsfcm.iter().sum::<f64>() / 25.0;
    let wins = s
        .sa_kwsfcm
        .iter()
        .zip(&s.sa_fcm)
        .filter(|(k, f)| k >= f)
        .count();
    let min = s.sa_kwsfcm.iter().copied().fold(f64::INFINITY, f64::min);
    let fcm_mean = s.sa_fcm.iter().sum::<f64>() / 25.0;
    let pass = mean >= 99.0 && wins >= 23 && s.elapsed < 120.0;
    verdict(
        "AC5",
        pass,
        &format!(
            "mean SA {:.4} (min {:.4}, >= 99.0), fcm mean {:.4}, kwsfcm >= fcm on {}/25 (>= 23), {:.1}s (< 120s)",
            mean, min, fcm_mean, wins, s.elapsed
        ),
    );
}

#[test]
fn ac06_entropy_direction() {
    let s = study();
    let wins = s
        .e_kwsfcm
        .iter()
        .zip(&s.e_fcm)
        .filter(|(k, f)| k <= f)
        .count();
    let mk = s.e_kwsfcm.iter().sum::<f64>() / 25.0;
    let mf = s.e_fcm.iter().sum::<f64>() / 25.0;
    verdict(
        "AC6",
        wins >= 23,
        &format!(
            "E(kwsfcm) <= E(fcm) on {}/25 (>= 23), mean E kwsfcm {:.4}, fcm {:.4} (natural log)",
            wins, mk, mf
        ),
    );
}

#[test]
fn ac07_convergence() {
    let s = study();
    let all = s.converged.iter().all(|&c| c)
        && s.iterations.iter().all(|&n| n <= 100)
        && s.final_shift.iter().all(|&d| d < 1e-3);
    let max_iter = s.iterations.iter().max().copied().unwrap_or(0);
    let worst = s.final_shift.iter().copied().fold(0.0, f64::max);
    verdict(
        "AC7",
        all,
        &format!(
            "converged {}/25, max iterations {} (<= 100), largest final shift {:.3e} (< 1e-3)",
            s.converged.iter().filter(|&&c| c).count(),
            max_iter,
            worst
        ),
    );
}

fn box_blur5(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut sum = 0u32;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                sum += u32::from(img.get_clamped(x as isize + dx, y as isize + dy));
            }
        }
        (f64::from(sum) / 25.0).round() as u8
    })
}

#[test]
fn ac08_eqf_properties() {
    let start = Instant::now();
    // (a) unit interval on random images that have edges
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut defined, mut inside, mut tries) = (0, 0, 0);
    while defined < 50 && tries < 500 {
        tries += 1;
        let (w, h) = (rng.random_range(9..40), rng.random_range(9..40));
        let blocks = rng.random_range(1..6);
        let levels: Vec<u8> = (0..blocks * blocks).map(|_| rng.random()).collect();
        let grain = rng.random_range(0..60u8);
        let img = GrayImage::from_fn(w, h, |x, y| {
            let b = levels[(y * blocks / h) * blocks + x * blocks / w];
            b.saturating_add(rng.random_range(0..=grain))
        });
        let gamma = [20.0, 40.0, 80.0, 160.0][rng.random_range(0..4)];
        if let Ok(r) = eqf(&img, &EqfParams::with_gamma(gamma)) {
            defined += 1;
            if (0.0..=1.0).contains(&r.eqf) {
                inside += 1;
            }
        }
    }
    let part_a = defined == 50 && inside == 50;

    // (b) hard step beats its box-blurred version at every gamma
    let step = GrayImage::from_fn(64, 32, |x, _| if x < 32 { 0 } else { 255 });
    let blurred = box_blur5(&step);
    let mut pairs = Vec::new();
    let mut part_b = true;
    for gamma in [20.0, 40.0, 80.0, 160.0] {
        let p = EqfParams::with_gamma(gamma);
        let hard = eqf(&step, &p).map(|r| r.eqf);
        let soft = eqf(&blurred, &p).map(|r| r.eqf);
        match (hard, soft) {
            (Ok(h), Ok(s)) => {
                part_b &= h > s;
                pairs.push(format!("g{}: {:.4} > {:.4}", gamma, h, s));
            }
            (h, s) => {
                part_b = false;
                pairs.push(format!("g{}: {:?} vs {:?}", gamma, h, s));
            }
        }
    }

    // (c) |128 - 32| / 32
    let br = inverse_blurriness(128.0, 64.0);
    let part_c = (br - 3.0).abs() < 1e-12;
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "AC8",
        part_a && part_b && part_c && elapsed < 30.0,
        &format!(
            "(a) {}/{} defined in [0,1]; (b) {}; (c) BR = {}; {:.2}s (< 30s)",
            inside,
            defined,
            pairs.join(", "),
            br,
            elapsed
        ),
    );
}

#[test]
fn ac09_partition_sanity() {
    let s = study();
    let pass = s.worst_column_error <= 1e-9 && s.out_of_range == 0;
    verdict(
        "AC9",
        pass,
        &format!(
            "worst |sum_i u_ik - 1| over all iterations of 25 runs = {:.3e} (<= 1e-9), memberships outside [0,1]: {}",
            s.worst_column_error, s.out_of_range
        ),
    );
}

fn run_cli_pipeline(input: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_kwsfcm"))
        .args([
            "pipeline",
            "--noise-kind",
            "salt_pepper",
            "--noise-level",
            "0.2",
        ])
        .args(["--noise-seed", "41", "--runs", "4"])
        .arg(input)
        .arg(out)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

#[test]
fn ac10_determinism() {
    let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("clean.pgm");
    std::fs::write(&input, encode_pgm(&two_region(60, 40))).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = run_cli_pipeline(&input, &a) && run_cli_pipeline(&input, &b);
    let mut identical = ran;
    for name in ["report.txt", "runs.csv", "reference.pgm"] {
        let fa = std::fs::read(a.join(name)).unwrap_or_default();
        let fb = std::fs::read(b.join(name)).unwrap_or_default();
        identical &= !fa.is_empty() && fa == fb;
    }

    // library pipeline is also repeatable
    let mut cfg = RunConfig::default();
    cfg.noise = Some(NoiseSpec::new(NoiseKind::SaltPepper, 0.2, 41));
    cfg.runs = 3;
    let clean = two_region(60, 40);
    let lib_repeat = run_pipeline(&clean, &cfg).unwrap().to_text()
        == run_pipeline(&clean, &cfg).unwrap().to_text();

    // serial vs parallel, and different pool sizes
    let noisy = salt_pepper(&two_region(100, 100), 0.2, 5);
    let run = |parallel: bool| {
        let mut c = RunConfig::default();
        c.cluster.parallel = parallel;
        segment_with(&noisy, &c, |_| {}).unwrap()
    };
    let serial = run(false);
    let parallel = run(true);
    let pool = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| run(true))
    };
    let one = pool(1);
    let four = pool(4);
    let du = serial.partition.max_abs_diff(&parallel.partition);
    let dv = serial.centroids.max_abs_diff(&parallel.centroids);
    let pools_equal = one.partition == four.partition && one.centroids == four.centroids;
    let pass = identical && lib_repeat && du <= 1e-9 && dv <= 1e-9 && pools_equal;
    verdict(
        "AC10",
        pass,
        &format!(
            "CLI reports byte-identical: {}, library repeat identical: {}, serial vs parallel |du| = {:.3e}, |dv| = {:.3e} (<= 1e-9), 1 vs 4 threads identical: {}",
            identical, lib_repeat, du, dv, pools_equal
        ),
    );
}

#[test]
fn ac11_scaling() {
    let _g = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = RunConfig::default();
    cfg.cluster.parallel = false;
    let time = |n: usize| {
        let noisy = salt_pepper(&two_region(n, n), 0.2, 11);
        let mut samples: Vec<f64> = (0..5)
            .map(|_| {
                let t = Instant::now();
                let seg = segment_with(&noisy, &cfg, |_| {}).unwrap();
                std::hint::black_box(&seg);
                t.elapsed().as_secs_f64()
            })
            .collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        samples[2]
    };
    let small = time(100);
    let large = time(300);
    let ratio = large / small;
    verdict(
        "AC11",
        (4.0..=20.0).contains(&ratio),
        &format!(
            "median 100x100 {:.4}s, 300x300 {:.4}s, ratio {:.2} (in [4, 20])",
            small, large, ratio
        ),
    );
}

#[test]
fn damping_off_equals_weighted_mean_model() {
    // with s = 1 everywhere the solver must match an explicit unit-damping field
    let img = salt_pepper(&two_region(40, 30), 0.1, 3);
    let params = ClusterParams {
        parallel: false,
        ..ClusterParams::default()
    };
    let off = kwsfcm_segment_with(
        &img,
        &params,
        &KernelParams::default(),
        &SusanParams::default(),
        &KwsfcmOptions {
            damping: false,
            ..KwsfcmOptions::default()
        },
        |_| {},
    )
    .unwrap();
    let field = damping_field(&img, &build_mask(), &SusanParams::default()).without_damping();
    assert!(field.damping().iter().all(|&s| s == 1.0));
    let explicit = kwsfcm::clustering::kwsfcm_segment_field(
        &img,
        &field,
        &params,
        &KernelParams::default(),
        |_| {},
    )
    .unwrap();
    assert_eq!(off.centroids, explicit.centroids);
}

#[test]
fn label_permutation_invariance() {
    let img = salt_pepper(&two_region(40, 30), 0.15, 9);
    let params = |init: Vec<f64>| ClusterParams {
        init: kwsfcm::clustering::Init::Explicit(init),
        parallel: false,
        ..ClusterParams::default()
    };
    let run = |p: ClusterParams| {
        kwsfcm_segment_with(
            &img,
            &p,
            &KernelParams::default(),
            &SusanParams::default(),
            &KwsfcmOptions::default(),
            |_| {},
        )
        .unwrap()
    };
    let a = run(params(vec![80.0, 160.0]));
    let b = run(params(vec![160.0, 80.0]));
    assert!((a.centroids.values()[0] - b.centroids.values()[1]).abs() < 1e-9);
    assert!((a.centroids.values()[1] - b.centroids.values()[0]).abs() < 1e-9);
    assert_eq!(segmentation_accuracy(&a.map, &b.map).unwrap(), 100.0);
}

#[test]
fn partition_step_never_raises_objective() {
    let img = salt_pepper(&two_region(50, 50), 0.2, 21);
    let mut cfg = RunConfig::default();
    cfg.cluster.clusters = 3;
    let seg = segment_with(&img, &cfg, |_| {}).unwrap();
    assert_eq!(seg.trace.partition_step_violations(1e-12), 0);
}
