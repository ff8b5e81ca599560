//! Command-line front end: `noise`, `segment`, `segment-color`, `eval`,
//! `pipeline`.
//!
//! Exit status is 0 on success, 2 on usage or configuration errors and 1 on
//! runtime failures. Every artifact echoes the effective configuration.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::clustering::Segmentation;
use crate::image::{
    encode_pgm_with_comments, encode_ppm_with_comments, load_gray, load_image, ColorImage,
    GrayImage, Image, SegmentationMap,
};
use crate::metrics::{entropy_measure, eqf, segmentation_accuracy};
use crate::noise::{add_noise, NoiseKind, NoiseSpec};
use crate::susan::{damping_field, CircularMask};

pub use config::{ConfigError, RunConfig};
pub use run::{run_pipeline, segment, PipelineReport, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "kwsfcm",
    version,
    about = "Noise-robust fuzzy clustering segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt an image with seeded noise.
    Noise(NoiseArgs),
    /// Segment a gray image.
    Segment(SegmentArgs),
    /// Segment each channel of a color image and recombine.
    SegmentColor(SegmentArgs),
    /// Score an existing segmentation.
    Eval(EvalArgs),
    /// Reference, noise, segment and score over several seeded runs.
    Pipeline(PipelineArgs),
}

/// Parameter flags shared by the segmenting subcommands. Precedence:
/// defaults, then `--config`, then `--set`, then the named flags.
#[derive(Debug, Default, Args)]
pub struct ParamArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// kwsfcm, fcm or kfcm_s.
    #[arg(long)]
    pub algo: Option<String>,
    /// Number of clusters.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub c: Option<u64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// equispaced, random:<seed> or a comma-separated list.
    #[arg(long)]
    pub init: Option<String>,
    /// Disable data-parallel iteration passes.
    #[arg(long)]
    pub serial: bool,
    /// gaussian_rbf or polynomial.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub kernel_sigma: Option<f64>,
    #[arg(long)]
    pub kernel_degree: Option<u32>,
    /// Override the SUSAN brightness threshold.
    #[arg(long)]
    pub t: Option<f64>,
    /// circular, uniform or cartesian mask weights.
    #[arg(long)]
    pub weights: Option<String>,
    /// Set every damping coefficient to 1.
    #[arg(long)]
    pub no_damping: bool,
    #[arg(long)]
    pub eqf_gamma: Option<f64>,
    #[arg(long)]
    pub eqf_window: Option<usize>,
    #[arg(long)]
    pub eqf_alpha_k: Option<f64>,
    #[arg(long)]
    pub eqf_threshold: Option<f64>,
    /// e, 2, 10 or any positive base.
    #[arg(long)]
    pub entropy_base: Option<String>,
}

impl ParamArgs {
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{}'", kv)))?;
            cfg.set(k.trim(), v)?;
        }
        let flags: [(&str, Option<String>); 17] = [
            ("algo", self.algo.clone()),
            ("c", self.c.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("max_iter", self.max_iter.map(|v| v.to_string())),
            ("init", self.init.clone()),
            ("kernel.kind", self.kernel.clone()),
            ("kernel.sigma", self.kernel_sigma.map(|v| v.to_string())),
            ("kernel.degree", self.kernel_degree.map(|v| v.to_string())),
            ("susan.t", self.t.map(|v| v.to_string())),
            ("susan.weights", self.weights.clone()),
            ("eqf.gamma", self.eqf_gamma.map(|v| v.to_string())),
            ("eqf.window", self.eqf_window.map(|v| v.to_string())),
            ("eqf.alpha_k", self.eqf_alpha_k.map(|v| v.to_string())),
            ("eqf.threshold", self.eqf_threshold.map(|v| v.to_string())),
            ("entropy.base", self.entropy_base.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.serial {
            cfg.cluster.parallel = false;
        }
        if self.no_damping {
            cfg.damping = false;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// salt_pepper, gaussian, poisson, speckle or rician.
    #[arg(long)]
    pub kind: NoiseKind,
    #[arg(long, default_value_t = 0.0)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Also write the damping coefficients as damping.pgm.
    #[arg(long)]
    pub dump_damping: bool,
    pub input: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Segmentation as a PGM; each distinct gray level is one region.
    pub map: PathBuf,
    /// Image the segmentation was computed from (needed for --entropy).
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Reference segmentation PGM for accuracy.
    #[arg(long)]
    pub sa: Option<PathBuf>,
    #[arg(long)]
    pub entropy: bool,
    /// Edge quality factor of the map image.
    #[arg(long)]
    pub eqf: bool,
    /// Write the EQF edge bitmap here.
    #[arg(long)]
    pub dump_edges: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub noise_kind: Option<NoiseKind>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: Option<u64>,
    pub input: PathBuf,
    pub out_dir: PathBuf,
}

/// Parses `args` (program name first), executes, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

/// Caps the rayon pool at `KWSFCM_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("KWSFCM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Noise(a) => cmd_noise(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::SegmentColor(a) => cmd_segment_color(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {}", path.display(), e)))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {}", dir.display(), e)))
}

fn commented_csv(header: &str, csv: &str) -> String {
    let mut out: String = header.lines().map(|l| format!("# {}\n", l)).collect();
    out.push_str(csv);
    out
}

fn finalize(mut cfg: RunConfig, input: &Path, output: &Path) -> Result<RunConfig, CliError> {
    cfg.input = Some(input.to_path_buf());
    cfg.output = Some(output.to_path_buf());
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

/// The output location is left out so reruns elsewhere stay byte-identical.
fn paths_echo(cfg: &RunConfig) -> String {
    let input = cfg
        .input
        .as_ref()
        .map_or(String::new(), |p| p.display().to_string());
    format!("input = {}\n", input)
}

fn cmd_noise(a: &NoiseArgs) -> Result<(), CliError> {
    let spec = NoiseSpec::new(a.kind, a.level, a.seed);
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let img = load_image(&a.input).map_err(runtime)?;
    let mut meta = format!("input = {}\n", a.input.display());
    meta.push_str(&spec.metadata());
    let bytes = match img {
        Image::Gray(g) => {
            encode_pgm_with_comments(&add_noise(&g, &spec).map_err(runtime)?, &[meta.clone()])
        }
        Image::Color(c) => {
            // channel k draws from seed + k
            meta.push_str("noise.channel_seeds = seed, seed + 1, seed + 2\n");
            let [r, g, b] = c.channels();
            let mut out = Vec::with_capacity(3);
            for (k, ch) in [r, g, b].into_iter().enumerate() {
                let s = NoiseSpec {
                    seed: a.seed.wrapping_add(k as u64),
                    ..spec
                };
                out.push(add_noise(ch, &s).map_err(runtime)?);
            }
            let blue = out.pop().expect("three channels");
            let green = out.pop().expect("three channels");
            let red = out.pop().expect("three channels");
            let color = ColorImage::new(red, green, blue).map_err(runtime)?;
            encode_ppm_with_comments(&color, &[meta.clone()])
        }
    };
    write(&a.output, bytes)?;
    let mut sidecar = a.output.clone().into_os_string();
    sidecar.push(".meta");
    write(Path::new(&sidecar), meta)
}

fn segmentation_report(seg: &Segmentation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "iterations = {}", seg.trace.iterations());
    let _ = writeln!(out, "converged = {}", seg.trace.converged);
    if let Some(last) = seg.trace.records.last() {
        let _ = writeln!(out, "objective = {}", last.objective);
        let _ = writeln!(out, "final_shift = {}", last.centroid_shift);
    }
    let v: Vec<String> = seg
        .centroids
        .values()
        .iter()
        .map(|x| x.to_string())
        .collect();
    let _ = writeln!(out, "centroids = {}", v.join(","));
    let mut sizes = vec![0usize; seg.map.clusters()];
    for &l in seg.map.labels() {
        sizes[l] += 1;
    }
    let s: Vec<String> = sizes.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(out, "cluster_sizes = {}", s.join(","));
    out
}

fn cmd_segment(a: &SegmentArgs) -> Result<(), CliError> {
    let cfg = finalize(a.params.to_config()?, &a.input, &a.out_dir)?;
    let img = load_gray(&a.input).map_err(runtime)?;
    let seg = segment(&img, &cfg).map_err(runtime)?;
    ensure_dir(&a.out_dir)?;
    let header = format!("{}{}", cfg.echo(), paths_echo(&cfg));
    let h = [header.clone()];
    write(
        &a.out_dir.join("labels.pgm"),
        encode_pgm_with_comments(&seg.map.to_indexed_gray(), &h),
    )?;
    write(
        &a.out_dir.join("centroids.pgm"),
        encode_pgm_with_comments(&run::render(&seg), &h),
    )?;
    write(
        &a.out_dir.join("trace.csv"),
        commented_csv(&header, &seg.trace.to_csv()),
    )?;
    if a.dump_damping {
        let field = damping_field(&img, &CircularMask::new(cfg.weights), &cfg.susan);
        let field = if cfg.damping {
            field
        } else {
            field.without_damping()
        };
        write(
            &a.out_dir.join("damping.pgm"),
            encode_pgm_with_comments(&field.damping_heatmap(), &h),
        )?;
    }
    let mut report = header;
    let _ = writeln!(report, "width = {}\nheight = {}", img.width(), img.height());
    report.push_str(&segmentation_report(&seg));
    write(&a.out_dir.join("report.txt"), report)
}

const CHANNELS: [&str; 3] = ["red", "green", "blue"];

fn cmd_segment_color(a: &SegmentArgs) -> Result<(), CliError> {
    let cfg = finalize(a.params.to_config()?, &a.input, &a.out_dir)?;
    let img = match load_image(&a.input).map_err(runtime)? {
        Image::Color(c) => c,
        Image::Gray(_) => {
            return Err(CliError::Runtime(
                "segment-color expects a PPM input".into(),
            ))
        }
    };
    let header = format!("{}{}", cfg.echo(), paths_echo(&cfg));
    ensure_dir(&a.out_dir)?;
    let mut rendered: Vec<GrayImage> = Vec::with_capacity(3);
    let mut report = header.clone();
    let _ = writeln!(report, "width = {}\nheight = {}", img.width(), img.height());
    for (name, channel) in CHANNELS.iter().zip(img.channels()) {
        let seg = segment(channel, &cfg).map_err(runtime)?;
        write(
            &a.out_dir.join(format!("trace_{}.csv", name)),
            commented_csv(
                &format!("{}channel = {}\n", header, name),
                &seg.trace.to_csv(),
            ),
        )?;
        for line in segmentation_report(&seg).lines() {
            let _ = writeln!(report, "{}.{}", name, line);
        }
        rendered.push(run::render(&seg));
    }
    let blue = rendered.pop().expect("three channels");
    let green = rendered.pop().expect("three channels");
    let red = rendered.pop().expect("three channels");
    let out = ColorImage::new(red, green, blue).map_err(runtime)?;
    write(
        &a.out_dir.join("segmented.ppm"),
        encode_ppm_with_comments(&out, &[header]),
    )?;
    write(&a.out_dir.join("report.txt"), report)
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let cfg = a.params.to_config()?;
    cfg.validate().map_err(CliError::Usage)?;
    if a.entropy && a.image.is_none() {
        return Err(CliError::Usage("--entropy needs --image".into()));
    }
    let map_img = load_gray(&a.map).map_err(runtime)?;
    let map = SegmentationMap::from_gray_levels(&map_img);
    let mut out = String::new();
    let _ = writeln!(out, "map = {}", a.map.display());
    let _ = writeln!(out, "regions = {}", map.clusters());
    if let Some(ref_path) = &a.sa {
        let reference = SegmentationMap::from_gray_levels(&load_gray(ref_path).map_err(runtime)?);
        let sa = segmentation_accuracy(&map, &reference).map_err(runtime)?;
        let _ = writeln!(out, "reference = {}", ref_path.display());
        let _ = writeln!(out, "sa = {}", sa);
    }
    if a.entropy {
        let path = a.image.as_ref().expect("checked above");
        let img = load_gray(path).map_err(runtime)?;
        let r = entropy_measure(&img, &map, cfg.entropy_base).map_err(runtime)?;
        let _ = writeln!(out, "image = {}", path.display());
        let _ = writeln!(
            out,
            "entropy.base = {}",
            config::format_base(cfg.entropy_base)
        );
        let _ = writeln!(out, "entropy.region = {}", r.region_entropy);
        let _ = writeln!(out, "entropy.layout = {}", r.layout_entropy);
        let _ = writeln!(out, "entropy.combined = {}", r.combined);
        for (j, region) in r.regions.iter().enumerate() {
            let _ = writeln!(
                out,
                "entropy.region_{} = {} (size {})",
                j, region.entropy, region.size
            );
        }
    }
    if a.eqf || a.dump_edges.is_some() {
        let r = eqf(&map_img, &cfg.eqf).map_err(runtime)?;
        let p = &cfg.eqf;
        let _ = writeln!(
            out,
            "eqf.window = {}\neqf.alpha_k = {}\neqf.gamma = {}\neqf.threshold = {}\neqf.levels = {}\neqf.ignore_flat = {}",
            p.window, p.alpha_k, p.gamma, p.threshold, p.levels, p.ignore_flat
        );
        let _ = writeln!(out, "eqf.homogeneity = {}", r.homogeneity);
        let _ = writeln!(out, "eqf.k = {}", r.threshold_k);
        let _ = writeln!(out, "eqf.edge_count = {}", r.edge_count);
        let _ = writeln!(out, "eqf.final_edge_count = {}", r.final_edge_count);
        let _ = writeln!(out, "eqf.blur_count = {}", r.blur_count);
        let _ = writeln!(out, "eqf.blur_ratio = {}", r.blur_ratio);
        let _ = writeln!(out, "eqf = {}", r.eqf);
        if let Some(path) = &a.dump_edges {
            write(
                path,
                encode_pgm_with_comments(&r.edge_bitmap(), &[out.clone()]),
            )?;
        }
    }
    match &a.out {
        Some(path) => write(path, out),
        None => {
            print!("{}", out);
            Ok(())
        }
    }
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<(), CliError> {
    let mut cfg = a.params.to_config()?;
    if let Some(k) = a.noise_kind {
        cfg.set("noise.kind", k.name())?;
    }
    if let Some(l) = a.noise_level {
        cfg.set("noise.level", &l.to_string())?;
    }
    if let Some(s) = a.noise_seed {
        cfg.set("noise.seed", &s.to_string())?;
    }
    if let Some(r) = a.runs {
        cfg.set("runs", &r.to_string())?;
    }
    let cfg = finalize(cfg, &a.input, &a.out_dir)?;
    let clean = load_gray(&a.input).map_err(runtime)?;
    let report = run_pipeline(&clean, &cfg).map_err(runtime)?;
    ensure_dir(&a.out_dir)?;
    let header = format!("{}{}", cfg.echo(), paths_echo(&cfg));
    let reference = run::reference_map(&clean, &cfg).map_err(runtime)?;
    write(
        &a.out_dir.join("reference.pgm"),
        encode_pgm_with_comments(&reference.to_indexed_gray(), std::slice::from_ref(&header)),
    )?;
    write(
        &a.out_dir.join("runs.csv"),
        commented_csv(&header, &report.to_csv()),
    )?;
    let mut text = report.to_text();
    text.push_str(&paths_echo(&cfg));
    write(&a.out_dir.join("report.txt"), text)
}
