//! Command-line front end: `synth`, `sr`, `eval`, `bench` and `align`.
//!
//! Every command reads the same flat [`RunConfig`]; precedence is
//! defaults < `--config` file < `--set key=value` < dedicated flags.

pub mod config;
pub mod io;
pub mod pipeline;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{sample_motions, synthesize_linear, unprocess, ColorPipelineParams};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::image::{ColorSpace, RgbImage};
use crate::motion::MotionParams;
use crate::registration::Alignment;
use crate::scene::{textured_scene, FIXED_SCENE_SEED};

pub use config::{BenchMethod, Lambda, Method, RunConfig, KEYS};
pub use io::{BurstMeta, BurstOnDisk};

#[derive(Debug, Parser)]
#[command(name = "burstsr", version, about = "Model-based burst super-resolution toolkit")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for synthesis and ensemble shuffles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a RAW burst with ground truth from an sRGB image or the built-in scene.
    Synth(SynthArgs),
    /// Reconstruct a high-resolution linear RGB image from a burst directory.
    Sr(SrArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
    /// Run baseline and solvers over a corpus of burst directories.
    Bench(BenchArgs),
    /// Register a burst and dump the estimated motions.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output burst directory.
    pub out_dir: PathBuf,
    /// 8- or 16-bit sRGB PNG; the built-in textured scene is used when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed of the built-in scene.
    #[arg(long)]
    pub scene_seed: Option<u64>,
    /// Frames per burst.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Integer super-resolution factor.
    #[arg(long)]
    pub sr_factor: Option<usize>,
    /// LR frame size as HxW or a single number for square frames.
    #[arg(long)]
    pub lr_size: Option<String>,
    /// Largest per-frame shift in LR pixels.
    #[arg(long)]
    pub max_translation: Option<f64>,
    /// Largest per-frame rotation in degrees.
    #[arg(long)]
    pub max_rotation: Option<f64>,
    /// `on`, `off`, or use `--set shot_slope=..` / `read_var=..`.
    #[arg(long)]
    pub noise: Option<String>,
    /// Bayer layout: RGGB, GRBG, GBRG or BGGR.
    #[arg(long)]
    pub cfa: Option<String>,
    /// Optics kernel: delta, box, bilinear or gaussian.
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// hqs or pgd.
    #[arg(long)]
    pub method: Option<String>,
    /// none, tikhonov or tv.
    #[arg(long)]
    pub prior: Option<String>,
    /// Regularization weight or `auto`.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Average over identity, transpose and shuffled bursts.
    #[arg(long)]
    pub tta: bool,
    /// Refine motions inside HQS.
    #[arg(long)]
    pub motion_refine: bool,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    pub burst_dir: PathBuf,
    /// Output 16-bit linear RGB PNG.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Diagnostics JSON (default: output path with a .json extension).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Use the ground-truth motions from meta.json instead of registering.
    #[arg(long)]
    pub use_gt_motion: bool,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Flow-align and colour-correct the prediction before scoring.
    #[arg(long)]
    pub aligned: bool,
    /// Signal peak for PSNR.
    #[arg(long)]
    pub peak: Option<f64>,
    /// Report path (default: prediction path with a .metrics.json suffix).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory whose subdirectories are burst directories with gt.png.
    pub corpus: PathBuf,
    /// Where the reports go (default: the corpus directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated subset of baseline,hqs,pgd,hqs+tta.
    #[arg(long)]
    pub methods: Option<String>,
    /// Score with flow alignment and colour correction.
    #[arg(long)]
    pub aligned: bool,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    pub burst_dir: PathBuf,
    /// JSON output (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// translation, euclidean or affine.
    #[arg(long)]
    pub motion_model: Option<String>,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn pair(s: &str) -> Result<(&str, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))
}

fn solve_overrides(s: &SolveArgs, out: &mut Vec<(&'static str, String)>) {
    if let Some(v) = &s.method {
        out.push(("method", v.clone()));
    }
    if let Some(v) = &s.prior {
        out.push(("prior", v.clone()));
    }
    if let Some(v) = &s.lambda {
        out.push(("lambda", v.clone()));
    }
    if s.tta {
        out.push(("tta", "on".into()));
    }
    if s.motion_refine {
        out.push(("motion_refine", "on".into()));
    }
}

fn lr_size(v: &str) -> Result<(String, String)> {
    let (h, w) = v.split_once(['x', 'X']).unwrap_or((v, v));
    Ok((h.trim().to_string(), w.trim().to_string()))
}

fn flag_overrides(cmd: &Command) -> Result<Vec<(&'static str, String)>> {
    let mut out = Vec::new();
    match cmd {
        Command::Synth(a) => {
            let mut put = |k: &'static str, v: Option<String>| {
                if let Some(v) = v {
                    out.push((k, v));
                }
            };
            put("frames", a.frames.map(|v| v.to_string()));
            put("sr_factor", a.sr_factor.map(|v| v.to_string()));
            put("max_translation", a.max_translation.map(|v| v.to_string()));
            put("max_rotation", a.max_rotation.map(|v| v.to_string()));
            put("noise", a.noise.clone());
            put("cfa", a.cfa.clone());
            put("kernel", a.kernel.clone());
            if let Some(s) = &a.lr_size {
                let (h, w) = lr_size(s)?;
                out.push(("lr_height", h));
                out.push(("lr_width", w));
            }
        }
        Command::Sr(a) => solve_overrides(&a.solve, &mut out),
        Command::Eval(a) => {
            if a.aligned {
                out.push(("aligned", "on".into()));
            }
            if let Some(p) = a.peak {
                out.push(("peak", p.to_string()));
            }
        }
        Command::Bench(a) => {
            solve_overrides(&a.solve, &mut out);
            if let Some(m) = &a.methods {
                out.push(("bench_methods", m.clone()));
            }
            if a.aligned {
                out.push(("aligned", "on".into()));
            }
        }
        Command::Align(a) => {
            if let Some(m) = &a.motion_model {
                out.push(("motion_model", m.clone()));
            }
        }
    }
    Ok(out)
}

/// Builds the effective config: defaults, file, `--set`, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(cli.set.iter().map(|s| pair(s)).collect::<Result<Vec<_>>>()?)?;
    cfg.apply(flag_overrides(&cli.command)?)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg).map(drop),
        Command::Sr(a) => cmd_sr(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg).map(drop),
        Command::Bench(a) => cmd_bench(a, &cfg).map(drop),
        Command::Align(a) => cmd_align(a, &cfg),
    })
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

/// Writes a synthetic burst directory; returns what was written.
pub fn cmd_synth(a: &SynthArgs, cfg: &RunConfig) -> Result<BurstOnDisk> {
    let sc = &cfg.synth;
    let srgb = match &a.input {
        Some(p) => io::read_rgb(p, ColorSpace::Srgb)?,
        None => {
            let (gh, gw) = sc.hr_dims();
            let m = sc.required_margin();
            textured_scene(gh + 2 * m, gw + 2 * m, a.scene_seed.unwrap_or(FIXED_SCENE_SEED))
        }
    };
    let linear = unprocess(&srgb, &ColorPipelineParams::default())?;
    // Stored ground truth is 16-bit, so keep the linear image in range from the start.
    let linear = RgbImage::linear(linear.grid().map(|v| v.clamp(0.0, 1.0)))?;
    let sample = synthesize_linear(&linear, sc, &sample_motions(sc))?;
    let meta = BurstMeta {
        cfa: sc.cfa,
        frames: sc.frames,
        sr_factor: sc.sr_factor,
        lr_height: sc.lr_dims.0,
        lr_width: sc.lr_dims.1,
        kernel: sc.kernel,
        noise: sample.noise,
        gt_motions: Some(sample.gt_motions),
        seed: Some(sc.seed),
    };
    let out = BurstOnDisk { burst: sample.burst, meta, gt: Some(sample.gt_linear) };
    out.write(&a.out_dir)?;
    println!(
        "wrote {} frames of {}x{} and a {}x{} ground truth to {}",
        sc.frames,
        sc.lr_dims.0,
        sc.lr_dims.1,
        sc.hr_dims().0,
        sc.hr_dims().1,
        a.out_dir.display()
    );
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SrReport<'a> {
    burst: String,
    motion_source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    registration: Option<Vec<Alignment>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve: Option<pipeline::SolveInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_sr(a: &SrArgs, cfg: &RunConfig) -> Result<()> {
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| a.out.with_extension("json"));
    let mut report = SrReport {
        burst: a.burst_dir.display().to_string(),
        motion_source: if a.use_gt_motion { "ground_truth" } else { "registration" },
        registration: None,
        solve: None,
        error: None,
    };
    let result = sr_inner(a, cfg, &mut report);
    if let Err(e) = &result {
        report.error = Some(e.to_string());
    }
    io::write_json(&diag_path, &report)?;
    result
}

fn sr_inner(a: &SrArgs, cfg: &RunConfig, report: &mut SrReport<'_>) -> Result<()> {
    let disk = BurstOnDisk::read(&a.burst_dir)?;
    let model = pipeline::observation_model(&disk.burst, &disk.meta, cfg)?;
    let motions: Vec<MotionParams> = if a.use_gt_motion {
        disk.meta
            .gt_motions
            .clone()
            .ok_or_else(|| Error::format(a.burst_dir.join("meta.json"), "--use-gt-motion but no gt_motions recorded"))?
    } else {
        let (align, hr) = pipeline::register(&disk.burst, disk.meta.sr_factor, cfg)?;
        report.registration = Some(align);
        hr
    };
    let (x, info) = pipeline::reconstruct(&disk.burst, &motions, &model, &disk.meta.noise, cfg)?;
    let (h, w) = x.dims();
    report.solve = Some(info);
    io::write_rgb(&a.out, &x)?;
    println!("wrote {h}x{w} reconstruction to {}", a.out.display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> Result<MetricReport> {
    let pred = io::read_rgb(&a.pred, ColorSpace::LinearSensor)?;
    let gt = io::read_rgb(&a.gt, ColorSpace::LinearSensor)?;
    let report = pipeline::evaluate(&pred, &gt, cfg)?;
    let path = a.json.clone().unwrap_or_else(|| with_extension(&a.pred, ".metrics.json"));
    io::write_json(&path, &report)?;
    println!(
        "psnr {:.4} dB  ssim {:.6}  valid {:.4}{}",
        report.psnr_db,
        report.ssim,
        report.valid_fraction,
        if report.flags.is_empty() { String::new() } else { format!("  flags {}", report.flags.join(",")) }
    );
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub sample: String,
    pub method: BenchMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub method: BenchMethod,
    pub samples: usize,
    pub failures: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: String,
    pub summary: Vec<BenchSummary>,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    sample: String,
    method: BenchMethod,
    seconds: f64,
}

fn list_samples(corpus: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(corpus).map_err(|e| Error::io(corpus, e))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(corpus, err))?;
        let p = e.path();
        if p.join("meta.json").is_file() {
            out.push((e.file_name().to_string_lossy().into_owned(), p));
        }
    }
    out.sort();
    Ok(out)
}

fn bench_sample(path: &Path, cfg: &RunConfig) -> (Vec<(BenchMethod, Result<MetricReport>)>, Vec<f64>) {
    let fail_all = |e: &Error| {
        let rows = cfg.bench_methods.iter().map(|&m| (m, Err(Error::Config(e.to_string())))).collect();
        (rows, vec![0.0; cfg.bench_methods.len()])
    };
    let disk = match BurstOnDisk::read(path) {
        Ok(d) => d,
        Err(e) => return fail_all(&e),
    };
    let Some(gt) = disk.gt.as_ref() else {
        return fail_all(&Error::format(path, "no gt.png"));
    };
    let needs_motion = cfg.bench_methods.iter().any(|m| *m != BenchMethod::Baseline);
    let setup = || -> Result<_> {
        let model = pipeline::observation_model(&disk.burst, &disk.meta, cfg)?;
        let motions = if needs_motion { pipeline::register(&disk.burst, disk.meta.sr_factor, cfg)?.1 } else { vec![] };
        Ok((model, motions))
    };
    let t0 = Instant::now();
    let (model, motions) = match setup() {
        Ok(v) => v,
        Err(e) => return fail_all(&e),
    };
    let reg_secs = t0.elapsed().as_secs_f64();
    let mut rows = Vec::new();
    let mut secs = Vec::new();
    for &m in &cfg.bench_methods {
        let t = Instant::now();
        let out = match m {
            BenchMethod::Baseline => Ok(pipeline::baseline(&disk.burst, disk.meta.sr_factor)),
            _ => {
                let mut c = cfg.clone();
                c.method = if m == BenchMethod::Pgd { Method::Pgd } else { Method::Hqs };
                c.tta = m == BenchMethod::HqsTta;
                pipeline::reconstruct(&disk.burst, &motions, &model, &disk.meta.noise, &c).map(|r| r.0)
            }
        };
        rows.push((m, out.and_then(|x| pipeline::evaluate(&x, gt, cfg))));
        let extra = if m == BenchMethod::Baseline { 0.0 } else { reg_secs };
        secs.push(t.elapsed().as_secs_f64() + extra);
    }
    (rows, secs)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs the benchmark; writes `bench_report.json`, `bench_report.txt` and
/// `bench_timing.json` (runtimes are kept apart so reports are reproducible).
pub fn cmd_bench(a: &BenchArgs, cfg: &RunConfig) -> Result<BenchReport> {
    let samples = list_samples(&a.corpus)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("no samples in {}", a.corpus.display())));
    }
    let results: Vec<_> = samples.par_iter().map(|(_, p)| bench_sample(p, cfg)).collect();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for ((name, _), (res, secs)) in samples.iter().zip(results) {
        for ((m, r), s) in res.into_iter().zip(secs) {
            timing.push(Timing { sample: name.clone(), method: m, seconds: s });
            let (metrics, error) = match r {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(BenchRow { sample: name.clone(), method: m, metrics, error });
        }
    }
    let summary: Vec<BenchSummary> = cfg
        .bench_methods
        .iter()
        .map(|&m| {
            let ok: Vec<&MetricReport> = rows.iter().filter(|r| r.method == m).filter_map(|r| r.metrics.as_ref()).collect();
            BenchSummary {
                method: m,
                samples: samples.len(),
                failures: samples.len() - ok.len(),
                mean_psnr_db: mean(&ok.iter().map(|r| r.psnr_db).collect::<Vec<_>>()),
                mean_ssim: mean(&ok.iter().map(|r| r.ssim).collect::<Vec<_>>()),
            }
        })
        .collect();
    let report = BenchReport { config: cfg.to_text(), summary, rows };

    let out_dir = a.out_dir.clone().unwrap_or_else(|| a.corpus.clone());
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    io::write_json(&out_dir.join("bench_report.json"), &report)?;
    let table = bench_table(&report);
    fs::write(out_dir.join("bench_report.txt"), &table).map_err(|e| Error::io(out_dir.join("bench_report.txt"), e))?;
    io::write_json(&out_dir.join("bench_timing.json"), &timing)?;
    print!("{table}");
    for (m, total) in cfg.bench_methods.iter().map(|&m| (m, timing.iter().filter(|t| t.method == m).map(|t| t.seconds).sum::<f64>())) {
        println!("{:<10} {:>8.2} s total", m.as_str(), total);
    }
    let failures: usize = report.summary.iter().map(|s| s.failures).sum();
    if failures > 0 {
        for r in report.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!("{} / {}: {}", r.sample, r.method.as_str(), r.error.as_deref().unwrap_or(""));
        }
        return Err(Error::Numerical { iteration: 0, detail: format!("{failures} sample/method runs failed") });
    }
    Ok(report)
}

/// Plain-text table of per-method means followed by per-sample rows.
pub fn bench_table(r: &BenchReport) -> String {
    let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8} {:>9} {:>8} {:>8}", "method", "samples", "failures", "psnr_db", "ssim");
    for m in &r.summary {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>9} {:>8} {:>8}",
            m.method.as_str(),
            m.samples,
            m.failures,
            fmt(m.mean_psnr_db, 2),
            fmt(m.mean_ssim, 4)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:<10} {:>8} {:>8}", "sample", "method", "psnr_db", "ssim");
    for row in &r.rows {
        let m = row.metrics.as_ref();
        let _ = writeln!(
            s,
            "{:<24} {:<10} {:>8} {:>8}",
            row.sample,
            row.method.as_str(),
            m.map_or("failed".to_string(), |m| format!("{:.2}", m.psnr_db)),
            fmt(m.map(|m| m.ssim), 4)
        );
    }
    s
}

#[derive(Debug, Serialize)]
struct AlignEntry {
    frame: usize,
    alignment: Alignment,
    motion_hr: MotionParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_motion_hr: Option<MotionParams>,
}

pub fn cmd_align(a: &AlignArgs, cfg: &RunConfig) -> Result<()> {
    let disk = BurstOnDisk::read(&a.burst_dir)?;
    let (align, hr) = pipeline::register(&disk.burst, disk.meta.sr_factor, cfg)?;
    let entries: Vec<AlignEntry> = align
        .into_iter()
        .zip(hr)
        .enumerate()
        .map(|(k, (alignment, motion_hr))| AlignEntry {
            frame: k,
            alignment,
            motion_hr,
            gt_motion_hr: disk.meta.gt_motions.as_ref().map(|g| g[k].clone()),
        })
        .collect();
    match &a.out {
        Some(p) => {
            io::write_json(p, &entries)?;
            println!("wrote {} alignments to {}", entries.len(), p.display());
        }
        None => {
            let text = serde_json::to_string_pretty(&entries).map_err(|e| Error::Config(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}
