use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use crffuse_core::config::{parse_config, Config};
use crffuse_core::eval::{compute_metrics, synth_scene, synth_side_outputs, METRICS_CSV_HEADER};
use crffuse_core::filter::{FilterBackend, KernelFilter, EXACT_PIXEL_LIMIT};
use crffuse_core::fusion::{train, Dataset, FusionModel, Scene};
use crffuse_core::{extract_features, CrfParams, DepthMap, KernelSpec, ModelKind, RgbImage, SideOutputStack};

use crate::gradcheck::check_all;
use crate::io::{read_pfm, read_ppm, write_atomic, write_pfm, write_ppm};
use crate::manifest::RunManifest;
use crate::params::{parse_params, render_params};

pub const SEED_ENV: &str = "CRFFUSE_SEED";

#[derive(Debug, Parser)]
#[command(name = "crffuse", version, about = "Multi-scale depth fusion with continuous CRFs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene: image.ppm, gt.pfm and side_1..L.pfm (coarse first)
    Synth(SynthArgs),
    /// Fuse a scene directory's side outputs into one depth map
    Fuse(FuseArgs),
    /// Learn the kernel weights on synthetic or on-disk scenes
    Train(TrainArgs),
    /// Depth metrics for (prediction, ground truth) pairs as CSV
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Time exact against lattice filtering on synthetic bilateral requests
    BenchFilter(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (defaults to a unified model with default settings)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed; CRFFUSE_SEED overrides this
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene directory holding image.ppm and side_1..L.pfm
    #[arg(long)]
    pub input: PathBuf,
    /// Trained parameters; the config's initial weights otherwise
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Prediction PFM; the manifest goes to `<out>.manifest`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of scene directories (each with image.ppm, gt.pfm, side_*.pfm);
    /// `scenes` synthetic scenes with seeds seed, seed+1, ... otherwise
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for params.txt, loss.csv and manifest.txt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prediction PFM, paired in order with --gt
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Metrics CSV; stdout otherwise
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene directory with image.ppm, gt.pfm and side_*.pfm; the built-in 8x8 fixture otherwise
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Square image sides, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    pub sizes: Vec<usize>,
    /// CSV output; stdout otherwise
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs it. Returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth_cmd(a).map(|_| 0),
        Command::Fuse(a) => fuse_cmd(a).map(|_| 0),
        Command::Train(a) => train_cmd(a).map(|_| 0),
        Command::Eval(a) => eval_cmd(a).map(|_| 0),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::BenchFilter(a) => bench_cmd(a).map(|_| 0),
    }
}

/// Loads the config and applies the seed override chain.
pub fn resolve_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => Config::new(ModelKind::Unified),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?),
        Err(_) => None,
    };
    if let Some(seed) = env_seed.or(common.seed) {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

pub fn side_path(dir: &Path, l: usize) -> PathBuf {
    dir.join(format!("side_{}.pfm", l + 1))
}

/// Reads image.ppm and side_1.pfm, side_2.pfm, ... up to the first gap.
pub fn load_inputs(dir: &Path) -> Result<(RgbImage, SideOutputStack, Vec<PathBuf>)> {
    let image_path = dir.join("image.ppm");
    let image = read_ppm(&image_path)?;
    let mut paths = vec![image_path];
    let mut maps = Vec::new();
    while side_path(dir, maps.len()).exists() {
        let p = side_path(dir, maps.len());
        maps.push(read_pfm(&p)?);
        paths.push(p);
    }
    ensure!(!maps.is_empty(), "no side outputs (side_1.pfm, ...) in {}", dir.display());
    let stack = SideOutputStack::new(maps).with_context(|| format!("side outputs in {}", dir.display()))?;
    ensure!(
        image.width() == stack.width() && image.height() == stack.height(),
        "image is {}x{} but side outputs are {}x{} in {}",
        image.width(),
        image.height(),
        stack.width(),
        stack.height(),
        dir.display()
    );
    Ok((image, stack, paths))
}

fn load_scene(dir: &Path) -> Result<Scene> {
    let (image, stack, _) = load_inputs(dir)?;
    let gt = read_pfm(&dir.join("gt.pfm"))?;
    Scene::new(image, stack, gt).with_context(|| format!("scene {}", dir.display()))
}

fn build_model(cfg: &Config, params: CrfParams) -> Result<FusionModel> {
    ensure!(
        params.kind() == cfg.model,
        "params are for a {} model but the config asks for {}",
        params.kind().name(),
        cfg.model.name()
    );
    Ok(FusionModel::new(params, cfg.kernel_spec()?, cfg.passing_structure()?, cfg.backend)?)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let spec = cfg.synth_spec(cfg.seed);
    let t = Instant::now();
    let (image, gt) = synth_scene(&spec)?;
    let stack = synth_side_outputs(&gt, &spec)?;
    let mut m = RunManifest::new("synth", &cfg);
    m.time("synth", t.elapsed().as_secs_f64());

    let image_path = a.out.join("image.ppm");
    write_ppm(&image_path, &image)?;
    let gt_path = a.out.join("gt.pfm");
    write_pfm(&gt_path, &gt)?;
    m.outputs.extend([image_path, gt_path]);
    for (l, map) in stack.scales().iter().enumerate() {
        let p = side_path(&a.out, l);
        write_pfm(&p, map)?;
        m.outputs.push(p);
    }
    m.write(&a.out.join("manifest.txt"))
}

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let (image, stack, inputs) = load_inputs(&a.input)?;
    ensure!(
        stack.num_scales() == cfg.scales,
        "{} has {} side outputs, config expects {}",
        a.input.display(),
        stack.num_scales(),
        cfg.scales
    );
    let params = match &a.params {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_params(&text).with_context(|| format!("malformed params file {}", p.display()))?
        }
        None => cfg.initial_params()?,
    };
    let model = build_model(&cfg, params)?;

    let mut m = RunManifest::new("fuse", &cfg);
    m.inputs = inputs;
    m.inputs.extend(a.params.clone());
    let t = Instant::now();
    let kernels = model.prepare(&image)?;
    m.time("prepare", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let pred = model.forward(&stack, &kernels)?.prediction();
    m.time("forward", t.elapsed().as_secs_f64());

    write_pfm(&a.out, &pred)?;
    m.outputs.push(a.out.clone());
    let mut manifest = a.out.clone().into_os_string();
    manifest.push(".manifest");
    m.write(Path::new(&manifest))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let mut m = RunManifest::new("train", &cfg);
    let t = Instant::now();
    let scenes = match &a.data {
        Some(dir) => {
            let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            dirs.retain(|p| p.is_dir());
            dirs.sort();
            ensure!(!dirs.is_empty(), "no scene directories in {}", dir.display());
            m.inputs = dirs.clone();
            dirs.iter().map(|d| load_scene(d)).collect::<Result<Vec<_>>>()?
        }
        None => (0..cfg.scenes as u64)
            .map(|k| {
                let spec = cfg.synth_spec(cfg.seed.wrapping_add(k));
                let (image, gt) = synth_scene(&spec)?;
                let stack = synth_side_outputs(&gt, &spec)?;
                Ok(Scene::new(image, stack, gt)?)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if let Some(s) = scenes.iter().find(|s| s.stack.num_scales() != cfg.scales) {
        bail!("scene has {} side outputs, config expects {}", s.stack.num_scales(), cfg.scales);
    }
    m.time("load", t.elapsed().as_secs_f64());

    let model = build_model(&cfg, cfg.initial_params()?)?;
    let t = Instant::now();
    let report = train(&Dataset::new(scenes), &model, &cfg.train, cfg.seed)?;
    m.time("train", t.elapsed().as_secs_f64());

    let params_path = a.out.join("params.txt");
    write_atomic(&params_path, render_params(&report.params).as_bytes())?;
    let mut csv = String::from("step,epoch,loss\n");
    for r in &report.history {
        csv.push_str(&format!("{},{},{}\n", r.step, r.epoch, r.loss));
    }
    let loss_path = a.out.join("loss.csv");
    write_atomic(&loss_path, csv.as_bytes())?;
    println!(
        "trained {} steps: loss {} -> {}",
        report.history.len(),
        report.initial_loss,
        report.final_loss
    );
    m.outputs.extend([params_path, loss_path]);
    m.write(&a.out.join("manifest.txt"))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    ensure!(
        a.pred.len() == a.gt.len(),
        "got {} --pred and {} --gt files; they pair up in order",
        a.pred.len(),
        a.gt.len()
    );
    let mut csv = format!("{METRICS_CSV_HEADER}\n");
    for (p, g) in a.pred.iter().zip(&a.gt) {
        let (pred, gt) = (read_pfm(p)?, read_pfm(g)?);
        let r = compute_metrics(&pred, &gt, cfg.min_valid_depth)
            .with_context(|| format!("comparing {} with {}", p.display(), g.display()))?;
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<i32> {
    let cfg = resolve_config(&a.common)?;
    let (image, stack, gt) = match &a.fixtures {
        Some(dir) => {
            let s = load_scene(dir)?;
            (s.image, s.stack, s.gt)
        }
        None => crate::fixtures::gradcheck_scene()?,
    };
    let cases = check_all(&cfg, &image, &stack, &gt, a.step)?;
    let mut worst: f64 = 0.0;
    for c in &cases {
        println!(
            "{:<8} {:<11} beta {:.3e}  s {:.3e}",
            c.kind.name(),
            c.structure.name(),
            c.worst_beta,
            c.worst_s
        );
        worst = worst.max(c.worst());
    }
    println!("worst relative error: {worst:.3e}");
    Ok(if worst < a.tolerance { 0 } else { 1 })
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let k = cfg.kernels;
    let spec = KernelSpec::unified(k.theta_spatial, k.theta_pos, k.theta_col)?;
    let mut csv = String::from("size,backend,seconds,rel_error\n");
    for &size in &a.sizes {
        ensure!(size > 0, "sizes must be positive");
        ensure!(
            size * size <= EXACT_PIXEL_LIMIT,
            "size {size} exceeds the exact filter's {EXACT_PIXEL_LIMIT}-pixel limit"
        );
        let synth = crffuse_core::eval::SynthSpec { width: size, height: size, ..cfg.synth_spec(cfg.seed) };
        let (image, gt) = synth_scene(&synth)?;
        let features = extract_features(&image, &spec)?;
        // the bilateral kernel is the expensive one
        let f = features.kernel(0);
        let (exact, exact_secs) = timed_filter(f, FilterBackend::Exact, &gt)?;
        let (lattice, lattice_secs) = timed_filter(f, FilterBackend::Lattice, &gt)?;
        let num: f64 = lattice.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = exact.iter().map(|v| v * v).sum();
        csv.push_str(&format!("{size},exact,{exact_secs:.6},0\n"));
        csv.push_str(&format!("{size},lattice,{lattice_secs:.6},{}\n", (num / den).sqrt()));
    }
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Build plus one application, timed together.
fn timed_filter(f: &crffuse_core::Features, backend: FilterBackend, values: &DepthMap) -> Result<(Vec<f64>, f64)> {
    let t = Instant::now();
    let out = KernelFilter::build(f, backend).apply(values.values(), false)?;
    Ok((out, t.elapsed().as_secs_f64()))
}
