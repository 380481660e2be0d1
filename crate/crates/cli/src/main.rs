use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use upsr_core::analysis::{psnr, residual_histogram, ssim};
use upsr_core::config::{PredictorKind, RunConfig};
use upsr_core::degradation::degrade_pair;
use upsr_core::denoiser::train::write_log_csv;
use upsr_core::denoiser::{
    load_model, oracle_denoiser, save_model, train, train_predictor, Denoiser, Optimizer,
    ResidualBase, TinyNetDenoiser, TrainPair,
};
use upsr_core::diffusion::{run_reverse_chain_observed, StepDumper};
use upsr_core::resample::bicubic_resize;
use upsr_core::verify::{run_suite, Mutation, VerifyOptions};
use upsr_core::{Image, RngState};

#[derive(Parser, Debug)]
#[command(
    name = "upsr",
    version,
    about = "Uncertainty-weighted residual-shifting diffusion for super-resolution"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Debug)]
struct Common {
    /// Root seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of diffusion steps T.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    eta1: Option<f64>,
    #[arg(long = "etaT", global = true)]
    eta_t: Option<f64>,
    /// Schedule shape exponent.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Weight at zero uncertainty.
    #[arg(long, global = true)]
    bu: Option<f64>,
    /// Uncertainty at which the weight saturates.
    #[arg(long, global = true)]
    psimax: Option<f64>,
    #[arg(long, global = true, value_enum)]
    predictor: Option<PredictorArg>,
    /// Model file for the learned predictor.
    #[arg(long, global = true)]
    predictor_model: Option<PathBuf>,
    /// Disable uncertainty weighting (every weight is 1).
    #[arg(long, global = true)]
    no_unw: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PredictorArg {
    Identity,
    Smooth,
    Learned,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoleArg {
    Denoiser,
    Predictor,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ResidualArg {
    State,
    Condition,
    Prediction,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize degraded pairs from a directory of HR PNGs.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Train a denoiser (or a predictor) on paired HR / y0 directories.
    Train {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        y0: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV; defaults to the model path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "denoiser")]
        role: RoleArg,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerArg>,
        /// Input the network output is added to.
        #[arg(long, value_enum)]
        residual: Option<ResidualArg>,
    },
    /// Super-resolve one image with the diffusion chain.
    Sr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Denoiser model file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Ground-truth image; uses the exact oracle instead of a model.
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Bicubic upsampling factor applied to the input first.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Directory for per-step PNGs and `steps.csv`.
        #[arg(long)]
        dump_steps: Option<PathBuf>,
        #[arg(long)]
        uncertainty_map: Option<PathBuf>,
        #[arg(long)]
        weight_map: Option<PathBuf>,
    },
    /// Run the self-check suite and write a JSON report.
    Verify {
        /// Only run checks whose `group/name` contains this string.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte Carlo draws per moment check.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// PSNR and SSIM between two images or two directories of images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of |y0 - hr| over paired directories.
    Hist {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        y0: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        bin_width: f64,
        #[arg(long, default_value_t = 0.4)]
        cutoff: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_json_file(p)
            .with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.steps {
        cfg.schedule.steps = v;
    }
    if let Some(v) = c.kappa {
        cfg.schedule.kappa = v;
    }
    if let Some(v) = c.eta1 {
        cfg.schedule.eta1 = v;
    }
    if let Some(v) = c.eta_t {
        cfg.schedule.eta_t = v;
    }
    if let Some(v) = c.p {
        cfg.schedule.p = v;
    }
    if let Some(v) = c.bu {
        cfg.weighting.b_u = v;
    }
    if let Some(v) = c.psimax {
        cfg.weighting.psi_max = v;
    }
    if c.no_unw {
        cfg.weighting.b_u = 1.0;
    }
    if let Some(p) = c.predictor {
        cfg.predictor = match p {
            PredictorArg::Identity => PredictorKind::Identity,
            PredictorArg::Smooth => PredictorKind::Smooth,
            PredictorArg::Learned => PredictorKind::Learned,
        };
    }
    if let Some(p) = &c.predictor_model {
        cfg.predictor_model = Some(p.clone());
    }
    cfg.train.weighting = cfg.weighting;
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

/// PNG files directly inside `dir`, sorted by name.
fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e
            .with_context(|| format!("reading directory {}", dir.display()))?
            .path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn cmd_degrade(cfg: &RunConfig, input: &Path, out: &Path, scale: Option<usize>) -> Result<()> {
    let mut dcfg = cfg.degradation.clone();
    if let Some(s) = scale {
        dcfg.scale = s;
    }
    dcfg.seed = cfg.seed;
    dcfg.validate()?;
    let files = list_pngs(input)?;
    if files.is_empty() {
        bail!("no input images in {}", input.display());
    }
    let (lr_dir, y0_dir) = (out.join("lr"), out.join("y0"));
    create_dir(&lr_dir)?;
    create_dir(&y0_dir)?;
    let manifest_path = out.join("manifest.csv");
    let mut manifest = csv_writer(&manifest_path)?;
    manifest.write_record([
        "filename",
        "seed",
        "blur_sigma",
        "noise_sigma",
        "jpeg_quality",
        "second_blur_sigma",
        "second_noise_sigma",
    ])?;
    let root = RngState::new(cfg.seed).split("degrade");
    for f in &files {
        let name = file_name(f);
        let hr = Image::read_png(f)?;
        let mut rng = root.split(&name);
        let pair = degrade_pair(&hr, &dcfg, &mut rng)
            .with_context(|| format!("degrading {}", f.display()))?;
        pair.lr.write_png(lr_dir.join(&name))?;
        pair.y0.write_png(y0_dir.join(&name))?;
        let p = &pair.params;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        manifest.write_record([
            name.clone(),
            cfg.seed.to_string(),
            p.blur_sigma.to_string(),
            p.noise_sigma.to_string(),
            p.jpeg_quality.map(|q| q.to_string()).unwrap_or_default(),
            opt(p.second_blur_sigma),
            opt(p.second_noise_sigma),
        ])?;
    }
    manifest.flush()?;
    info!("wrote {} pairs to {}", files.len(), out.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(f))
}

/// Pairs HR and y0 files by name; every HR file needs a y0 partner.
fn load_pairs(hr_dir: &Path, y0_dir: &Path) -> Result<Vec<(String, Image, Image)>> {
    let files = list_pngs(hr_dir)?;
    if files.is_empty() {
        bail!("no input images in {}", hr_dir.display());
    }
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let name = file_name(&f);
        let y = y0_dir.join(&name);
        if !y.exists() {
            bail!("{} has no partner {}", f.display(), y.display());
        }
        out.push((name, Image::read_png(&f)?, Image::read_png(&y)?));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &mut RunConfig,
    hr: &Path,
    y0: &Path,
    out: &Path,
    log_path: Option<&Path>,
    role: RoleArg,
    overrides: TrainOverrides,
) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = overrides.iterations {
        t.iterations = v;
    }
    if let Some(v) = overrides.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = overrides.lr {
        t.learning_rate = v;
    }
    if let Some(v) = overrides.lambda {
        t.lambda = v;
    }
    if let Some(v) = overrides.patch {
        t.patch_size = v;
    }
    if let Some(v) = overrides.hidden {
        t.arch.hidden = v;
    }
    if let Some(r) = overrides.residual {
        t.arch.residual = match r {
            ResidualArg::State => ResidualBase::State,
            ResidualArg::Condition => ResidualBase::Condition,
            ResidualArg::Prediction => ResidualBase::Prediction,
        };
    }
    if let Some(o) = overrides.optimizer {
        t.optimizer = match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        };
    }
    cfg.validate()?;
    let pairs: Vec<TrainPair> = load_pairs(hr, y0)?
        .into_iter()
        .map(|(_, x0, y0)| TrainPair { x0, y0 })
        .collect();
    if let Some(first) = pairs.first() {
        cfg.train.arch.image_channels = first.x0.channels();
    }
    let rng = RngState::new(cfg.seed).split("train");
    let outcome = match role {
        RoleArg::Denoiser => {
            let schedule = cfg.schedule.build()?;
            let predictor = cfg.build_predictor()?;
            train(&pairs, predictor.as_ref(), &schedule, &cfg.train, &rng)?
        }
        RoleArg::Predictor => train_predictor(&pairs, &cfg.train, &rng)?,
    };
    save_model(&outcome.model, out)?;
    let log_path = log_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("log.csv"));
    let f = std::fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    write_log_csv(&outcome.log, f)?;
    if let (Some(a), Some(b)) = (outcome.log.first(), outcome.log.last()) {
        info!(
            "loss {:.6} -> {:.6} over {} iterations",
            a.loss,
            b.loss,
            outcome.log.len()
        );
    }
    Ok(())
}

struct TrainOverrides {
    iterations: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lambda: Option<f64>,
    patch: Option<usize>,
    hidden: Option<usize>,
    optimizer: Option<OptimizerArg>,
    residual: Option<ResidualArg>,
}

struct SrArgs<'a> {
    input: &'a Path,
    out: &'a Path,
    model: Option<&'a Path>,
    oracle: Option<&'a Path>,
    scale: usize,
    dump_steps: Option<&'a Path>,
    uncertainty_map: Option<&'a Path>,
    weight_map: Option<&'a Path>,
}

fn cmd_sr(cfg: &RunConfig, a: SrArgs<'_>) -> Result<()> {
    cfg.validate()?;
    let schedule = cfg.schedule.build()?;
    let input = Image::read_png(a.input)?;
    if a.scale == 0 {
        bail!("--scale must be >= 1");
    }
    let y0 = if a.scale == 1 {
        input
    } else {
        bicubic_resize(&input, input.height() * a.scale, input.width() * a.scale)?.clamp01()
    };
    let rng = RngState::new(cfg.seed).split("sr");
    let mut denoiser: Box<dyn Denoiser> =
        match (a.oracle, a.model.or(cfg.denoiser_model.as_deref())) {
            (Some(gt), _) => {
                let x0 = Image::read_png(gt)?;
                x0.ensure_same_shape(&y0, "oracle ground truth")?;
                Box::new(oracle_denoiser(x0, 0.0, rng.split("oracle"))?)
            }
            (None, Some(m)) => Box::new(
                TinyNetDenoiser::new(&load_model(m)?)
                    .with_context(|| format!("loading {}", m.display()))?,
            ),
            (None, None) => bail!("need --model or --oracle"),
        };
    let predictor = cfg.build_predictor()?;
    let mut dumper = StepDumper::new(a.dump_steps)?;
    let out = run_reverse_chain_observed(
        &y0,
        predictor.as_ref(),
        denoiser.as_mut(),
        &schedule,
        &cfg.weighting,
        &rng,
        &mut |tr| dumper.record(tr),
    )?;
    out.image.write_png(a.out)?;
    if let Some(d) = a.dump_steps {
        dumper.write_csv(d.join("steps.csv"))?;
    }
    if let Some(p) = a.uncertainty_map {
        out.uncertainty.write_heatmap(p)?;
    }
    if let Some(p) = a.weight_map {
        out.weights.write_heatmap(p)?;
    }
    Ok(())
}

fn cmd_verify(
    cfg: &RunConfig,
    filter: Option<String>,
    out: Option<&Path>,
    samples: usize,
    inject_bug: bool,
) -> Result<bool> {
    let opts = VerifyOptions {
        seed: cfg.seed,
        filter,
        mutation: inject_bug.then_some(Mutation::InflateNoise),
        samples,
        schedule: cfg.schedule,
    };
    let report = run_suite(&opts)?;
    let json = report.to_json()?;
    match out {
        Some(p) => std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    for c in &report.checks {
        eprintln!(
            "{} {}/{}",
            if c.passed { "pass" } else { "FAIL" },
            c.group,
            c.name
        );
    }
    if report.total == 0 {
        eprintln!("no checks matched the filter");
    }
    Ok(report.passed)
}

fn cmd_metrics(a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.is_dir() {
        let files = list_pngs(a)?;
        if files.is_empty() {
            bail!("no input images in {}", a.display());
        }
        files
            .into_iter()
            .map(|f| (file_name(&f), b.join(file_name(&f)), f))
            .map(|(n, pb, pa)| (n, pa, pb))
            .collect()
    } else {
        vec![(file_name(a), a.to_path_buf(), b.to_path_buf())]
    };
    let mut rows = Vec::new();
    for (name, pa, pb) in pairs {
        let (ia, ib) = (Image::read_png(&pa)?, Image::read_png(&pb)?);
        let p = psnr(&ia, &ib)
            .with_context(|| format!("comparing {} and {}", pa.display(), pb.display()))?;
        let s = ssim(&ia, &ib)
            .with_context(|| format!("comparing {} and {}", pa.display(), pb.display()))?;
        rows.push((name, p, s));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "psnr", "ssim"])?;
    for (n, p, s) in &rows {
        w.write_record([n.clone(), p.to_string(), s.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    emit(out, &bytes)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .context("writing to stdout")
        }
    }
}

fn cmd_hist(hr: &Path, y0: &Path, bin_width: f64, cutoff: f64, out: Option<&Path>) -> Result<()> {
    let pairs = load_pairs(hr, y0)?;
    let refs: Vec<(&Image, &Image)> = pairs.iter().map(|(_, x, y)| (y, x)).collect();
    let h = residual_histogram(&refs, bin_width, cutoff)?;
    let mut buf = Vec::new();
    h.write_csv(&mut buf)?;
    info!("{} samples, {} above cutoff", h.total, h.overflow);
    emit(out, &buf)
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    let mut cfg = run_config(&cli.common)?;
    match cli.command {
        Command::Degrade { input, out, scale } => cmd_degrade(&cfg, &input, &out, scale)?,
        Command::Train {
            hr,
            y0,
            out,
            log,
            role,
            iterations,
            batch_size,
            lr,
            lambda,
            patch,
            hidden,
            optimizer,
            residual,
        } => cmd_train(
            &mut cfg,
            &hr,
            &y0,
            &out,
            log.as_deref(),
            role,
            TrainOverrides {
                iterations,
                batch_size,
                lr,
                lambda,
                patch,
                hidden,
                optimizer,
                residual,
            },
        )?,
        Command::Sr {
            input,
            out,
            model,
            oracle,
            scale,
            dump_steps,
            uncertainty_map,
            weight_map,
        } => cmd_sr(
            &cfg,
            SrArgs {
                input: &input,
                out: &out,
                model: model.as_deref(),
                oracle: oracle.as_deref(),
                scale,
                dump_steps: dump_steps.as_deref(),
                uncertainty_map: uncertainty_map.as_deref(),
                weight_map: weight_map.as_deref(),
            },
        )?,
        Command::Verify {
            filter,
            out,
            samples,
            inject_bug,
        } => return cmd_verify(&cfg, filter, out.as_deref(), samples, inject_bug),
        Command::Metrics { a, b, out } => cmd_metrics(&a, &b, out.as_deref())?,
        Command::Hist {
            hr,
            y0,
            bin_width,
            cutoff,
            out,
        } => cmd_hist(&hr, &y0, bin_width, cutoff, out.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
