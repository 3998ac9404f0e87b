mod manifest;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fixsearch::analysis::{self, Feature, Sampling};
use fixsearch::gabor::{apply_bank, GaborBankConfig};
use fixsearch::glcm::{glcm_feature_maps, GlcmConfig, Offset};
use fixsearch::gmm::CovarianceType;
use fixsearch::imagio::{self, load_image_auto, save_overlay, save_raw, GrayImage, ImageFormat};
use fixsearch::peaks::{bank_maxima, CandidateSet, ChannelRule};
use fixsearch::phantom::{generate, DensityClass, GroundTruth, PhantomSpec};
use fixsearch::pipelines::{run_pipeline, PipelineKind, RunConfig};
use fixsearch::Error;

use manifest::Run;

#[derive(Parser)]
#[command(name = "fixsearch", version, about = "Fixation-candidate search on grayscale slices")]
struct Cli {
    /// Worker threads (0 = one per core). Never changes output bytes.
    #[arg(long, global = true, env = "FIXSEARCH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic slice with an inserted lesion.
    Phantom(PhantomArgs),
    /// GLCM mean and contrast maps.
    Glcm(GlcmArgs),
    /// Gabor bank responses and their regional maxima.
    Gabor(GaborArgs),
    /// Texture clustering mask, then Gabor maxima screened by the mask.
    PipelineA(PipelineArgs),
    /// Gabor maxima clustered on Gabor and texture features.
    PipelineB(PipelineArgs),
    /// Gabor maxima kept above a score threshold.
    PipelineThresh(PipelineArgs),
    /// Pearson correlation between two features.
    Correlate(CorrelateArgs),
    /// Fraction of observers whose early mean gaze lies near a candidate.
    Gaze(GazeArgs),
    /// Greedy matching agreement between two candidate sets.
    Agree(AgreeArgs),
    /// Draw candidate markers over an image.
    Overlay(OverlayArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full phantom spec as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the evaluation-suite density and lesion placement for this seed.
    #[arg(long)]
    suite_member: bool,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    n_blobs: Option<usize>,
    #[arg(long, value_parser = parse_density)]
    density: Option<DensityClass>,
    #[arg(long)]
    lesion_x: Option<f64>,
    #[arg(long)]
    lesion_y: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    spicules: Option<usize>,
    #[arg(long)]
    pitch_mm: Option<f64>,
    /// raw-f32, pgm16 or pgm8.
    #[arg(long, default_value = "raw-f32", value_parser = parse_format)]
    format: ImageFormat,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    /// Print the resolved spec and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct GlcmArgs {
    #[arg(long, required_unless_present = "dump_config")]
    image: Option<PathBuf>,
    /// GLCM config as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Pixel offset as `dx,dy`.
    #[arg(long, value_parser = parse_offset, allow_hyphen_values = true)]
    offset: Option<Offset>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct GaborArgs {
    #[arg(long, required_unless_present = "dump_config")]
    image: Option<PathBuf>,
    /// Filter bank as a JSON array; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Build the default four-orientation bank for this target diameter (pixels).
    #[arg(long)]
    diameter: Option<f64>,
    /// Border excluded from maxima (default: half the largest support).
    #[arg(long)]
    margin: Option<usize>,
    /// Minimum maxima spacing (default: half the envelope width).
    #[arg(long)]
    min_separation: Option<f64>,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required_unless_present = "dump_config")]
    image: Option<PathBuf>,
    /// Run config as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Known lesion position `x,y` for evaluation-mode cluster selection.
    #[arg(long, value_parser = parse_point)]
    lesion_hint: Option<(f64, f64)>,
    /// Phantom ground truth JSON; its center becomes the lesion hint.
    #[arg(long, conflicts_with = "lesion_hint")]
    truth: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Gabor target diameter in pixels.
    #[arg(long)]
    diameter: Option<f64>,
    /// Mixture components for this pipeline's clustering step.
    #[arg(long)]
    k: Option<usize>,
    /// full or diagonal.
    #[arg(long, value_parser = parse_covariance)]
    covariance: Option<CovarianceType>,
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long)]
    min_separation: Option<f64>,
    /// Search maxima of absolute Gabor responses.
    #[arg(long)]
    rectify: bool,
    /// Absolute score threshold (pipeline-thresh).
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Threshold percentile of initial scores when no tau is given (pipeline-thresh).
    #[arg(long)]
    percentile: Option<f64>,
    /// any, all or max (pipeline-thresh).
    #[arg(long)]
    channel_rule: Option<ChannelRule>,
    /// Arm length of overlay markers.
    #[arg(long, default_value_t = 6)]
    marker: usize,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Input image; repeat to pool sites over several images.
    #[arg(long, required_unless_present_any = ["suite", "dump_config"])]
    image: Vec<PathBuf>,
    /// Pool over generated evaluation-suite phantoms with seeds 0..N instead.
    #[arg(long, conflicts_with = "image")]
    suite: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature pair `a,b` from glcm_mean, glcm_contrast, gabor_max, gabor<i>.
    #[arg(long, default_value = "glcm_mean,gabor_max")]
    pair: String,
    /// per-tile or per-candidate.
    #[arg(long, default_value = "per-tile")]
    sampling: String,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct GazeArgs {
    /// CSV with header `observer_id,t_ms,x,y,valid`.
    #[arg(long)]
    gaze: PathBuf,
    /// Candidate CSV, e.g. a pipeline's final.csv.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    radius: f64,
    #[arg(long, default_value_t = 2000.0)]
    early_window_ms: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AgreeArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 6)]
    marker: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_density(s: &str) -> Result<DensityClass, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ImageFormat, String> {
    match s {
        "raw-f32" => Ok(ImageFormat::RawF32),
        "pgm16" => Ok(ImageFormat::Pgm16),
        "pgm8" => Ok(ImageFormat::Pgm8),
        _ => Err(format!("format must be raw-f32|pgm16|pgm8, got {s:?}")),
    }
}

fn parse_covariance(s: &str) -> Result<CovarianceType, String> {
    match s {
        "full" => Ok(CovarianceType::Full),
        "diagonal" => Ok(CovarianceType::Diagonal),
        _ => Err(format!("covariance must be full|diagonal, got {s:?}")),
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad value {v:?} in {s:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_offset(s: &str) -> Result<Offset, String> {
    parse_pair::<i32>(s).map(|(dx, dy)| Offset::new(dx, dy))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{what} {}: {e}", path.display())))?)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    // a closed pipe (e.g. `| head`) is not an error for a dump
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn lap(run: &mut Run, stage: &str, t: &mut Instant) {
    run.timings_ms.insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
    *t = Instant::now();
}

fn load_input(run: &mut Run, path: &Path) -> Result<GrayImage> {
    run.input(path);
    if ImageFormat::from_path(path) == Some(ImageFormat::RawF32) {
        run.input(&imagio::raw_header_path(path));
    }
    Ok(load_image_auto(path)?)
}

fn save_raw_output(run: &mut Run, img: &GrayImage, name: &str) -> Result<()> {
    let path = run.output(name);
    run.output(&format!("{name}.json"));
    Ok(save_raw(img, &path)?)
}

fn read_candidates(run: &mut Run, path: &Path) -> Result<CandidateSet> {
    run.input(path);
    let f = File::open(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    Ok(CandidateSet::read_csv(BufReader::new(f), 0, 0)?)
}

fn write_candidates(run: &mut Run, name: &str, set: &CandidateSet) -> Result<()> {
    let mut buf = Vec::new();
    set.write_csv(&mut buf)?;
    run.write(name, &buf)
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => read_json::<PhantomSpec>(p, "phantom spec")?,
        None if a.suite_member => PhantomSpec::suite_member(a.seed),
        None => PhantomSpec { seed: a.seed, ..Default::default() },
    };
    if a.config.is_some() {
        spec.seed = a.seed;
    }
    macro_rules! set {
        ($field:expr, $v:expr) => {
            if let Some(v) = $v {
                $field = v;
            }
        };
    }
    set!(spec.width, a.width);
    set!(spec.height, a.height);
    set!(spec.n_blobs, a.n_blobs);
    set!(spec.density_class, a.density);
    set!(spec.lesion.center.0, a.lesion_x);
    set!(spec.lesion.center.1, a.lesion_y);
    set!(spec.lesion.radius, a.radius);
    set!(spec.lesion.contrast, a.contrast);
    set!(spec.lesion.spicules, a.spicules);
    set!(spec.pitch_mm, a.pitch_mm);
    spec.validate()?;
    if a.dump_config {
        return print_json(&spec);
    }
    let mut run = Run::new("phantom", a.out.as_deref().expect("required by clap"))?;
    let mut t = Instant::now();
    let (img, truth) = generate(&spec)?;
    lap(&mut run, "generate", &mut t);
    match a.format {
        ImageFormat::RawF32 => save_raw_output(&mut run, &img, "phantom.raw")?,
        fmt => {
            let path = run.output("phantom.pgm");
            imagio::save_pgm(&img, &path, fmt)?;
        }
    }
    run.write_json("truth.json", &truth)?;
    run.finish(serde_json::to_value(&spec)?)
}

fn cmd_glcm(a: GlcmArgs) -> Result<()> {
    let mut cfg: GlcmConfig = match &a.config {
        Some(p) => read_json(p, "glcm config")?,
        None => GlcmConfig::default(),
    };
    cfg.levels = a.levels.unwrap_or(cfg.levels);
    cfg.window = a.window.unwrap_or(cfg.window);
    cfg.stride = a.stride.or(cfg.stride);
    cfg.offset = a.offset.unwrap_or(cfg.offset);
    cfg.validate()?;
    cfg.stride = Some(cfg.stride());
    if a.dump_config {
        return print_json(&cfg);
    }
    let mut run = Run::new("glcm", a.out.as_deref().expect("required by clap"))?;
    let img = load_input(&mut run, a.image.as_deref().expect("required by clap"))?;
    let mut t = Instant::now();
    let maps = glcm_feature_maps(&img, &cfg)?;
    lap(&mut run, "glcm", &mut t);
    save_raw_output(&mut run, &maps.mean, "glcm_mean.raw")?;
    save_raw_output(&mut run, &maps.contrast, "glcm_contrast.raw")?;
    let mut tiles = String::from("tile,x0,y0,mean,contrast\n");
    for (i, f) in maps.tiles.iter().enumerate() {
        let (x0, y0) = maps.layout.tile_origin(i);
        tiles += &format!("{i},{x0},{y0},{},{}\n", f.mean, f.contrast);
    }
    run.write("tiles.csv", tiles.as_bytes())?;
    run.finish(serde_json::to_value(cfg)?)
}

fn cmd_gabor(a: GaborArgs) -> Result<()> {
    let bank: GaborBankConfig = match (&a.config, a.diameter) {
        (_, Some(d)) => GaborBankConfig::for_target_diameter(d),
        (Some(p), None) => read_json(p, "gabor bank")?,
        (None, None) => GaborBankConfig::default(),
    };
    bank.validate()?;
    let margin = a.margin.unwrap_or(bank.max_support() / 2);
    let min_sep = a.min_separation.unwrap_or(bank.ws() / 2.0);
    let config = serde_json::json!({ "bank": bank, "margin": margin, "min_separation": min_sep });
    if a.dump_config {
        return print_json(&config);
    }
    let mut run = Run::new("gabor", a.out.as_deref().expect("required by clap"))?;
    let img = load_input(&mut run, a.image.as_deref().expect("required by clap"))?;
    let mut t = Instant::now();
    let stack = apply_bank(&img, &bank)?;
    lap(&mut run, "correlate", &mut t);
    let maxima = bank_maxima(&stack, margin, min_sep)?;
    lap(&mut run, "maxima", &mut t);
    for (i, ch) in stack.channels.iter().enumerate() {
        save_raw_output(&mut run, ch, &format!("gabor{i}.raw"))?;
    }
    write_candidates(&mut run, "initial.csv", &maxima)?;
    run.warnings.extend(maxima.warnings.iter().cloned());
    run.finish(config)
}

fn pipeline_config(a: &PipelineArgs, kind: PipelineKind) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.truth {
        let truth: GroundTruth = read_json(p, "ground truth")?;
        cfg.lesion_hint = Some(truth.center);
    }
    cfg.lesion_hint = a.lesion_hint.or(cfg.lesion_hint);
    cfg.glcm.levels = a.levels.unwrap_or(cfg.glcm.levels);
    cfg.glcm.window = a.window.unwrap_or(cfg.glcm.window);
    cfg.glcm.stride = a.stride.or(cfg.glcm.stride);
    if let Some(d) = a.diameter {
        cfg.gabor = GaborBankConfig::for_target_diameter(d);
    }
    let gmm = if kind == PipelineKind::B { &mut cfg.gmm_b } else { &mut cfg.gmm_a };
    gmm.k = a.k.unwrap_or(gmm.k);
    gmm.covariance = a.covariance.unwrap_or(gmm.covariance);
    cfg.peaks.margin = a.margin.or(cfg.peaks.margin);
    cfg.peaks.min_separation = a.min_separation.or(cfg.peaks.min_separation);
    cfg.peaks.rectify |= a.rectify;
    cfg.threshold.tau = a.tau.or(cfg.threshold.tau);
    cfg.threshold.percentile = a.percentile.unwrap_or(cfg.threshold.percentile);
    cfg.threshold.channel_rule = a.channel_rule.unwrap_or(cfg.threshold.channel_rule);
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn cmd_pipeline(a: PipelineArgs, kind: PipelineKind, name: &str) -> Result<()> {
    let cfg = pipeline_config(&a, kind)?;
    if a.dump_config {
        return print_json(&cfg);
    }
    let mut run = Run::new(name, a.out.as_deref().expect("required by clap"))?;
    let img = load_input(&mut run, a.image.as_deref().expect("required by clap"))?;
    let report = run_pipeline(kind, &img, &cfg)?;
    run.timings_ms.extend(report.timings.clone());
    let mut t = Instant::now();
    run.write("report.json", (report.to_json() + "\n").as_bytes())?;
    write_candidates(&mut run, "initial.csv", &report.initial)?;
    write_candidates(&mut run, "final.csv", &report.final_set)?;
    if let Some(labels) = &report.labels {
        let mut buf = Vec::new();
        labels.write_csv(&mut buf)?;
        run.write("labels.csv", &buf)?;
    }
    if let Some(mask) = &report.mask {
        let path = run.output("mask.pgm");
        mask.save_pgm(&path)?;
    }
    let path = run.output("overlay.png");
    save_overlay(&img, &report.final_set, a.marker, &path)?;
    lap(&mut run, "write", &mut t);
    run.warnings.extend(report.warnings.iter().cloned());
    run.warnings.extend(report.initial.warnings.iter().cloned());
    run.finish(serde_json::to_value(&cfg)?)
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let pair: (Feature, Feature) = parse_pair(&a.pair).map_err(Error::InvalidConfig)?;
    let sampling: Sampling = a.sampling.parse()?;
    let config = serde_json::json!({
        "run": cfg.resolved(),
        "pair": [pair.0.to_string(), pair.1.to_string()],
        "sampling": sampling,
        "suite": a.suite,
    });
    if a.dump_config {
        return print_json(&config);
    }
    let mut run = Run::new("correlate", a.out.as_deref().expect("required by clap"))?;
    let mut t = Instant::now();
    let images = match a.suite {
        Some(n) => (0..n)
            .map(|seed| generate(&PhantomSpec::suite_member(seed)).map(|(img, _)| img))
            .collect::<Result<Vec<_>, _>>()?,
        None => a.image.iter().map(|p| load_input(&mut run, p)).collect::<Result<Vec<_>>>()?,
    };
    lap(&mut run, "load", &mut t);
    let report = analysis::pooled_feature_correlation(&images, &cfg, pair, sampling)?;
    lap(&mut run, "correlate", &mut t);
    run.write_json("correlation.json", &report)?;
    run.finish(config)
}

fn cmd_gaze(a: GazeArgs) -> Result<()> {
    let mut run = Run::new("gaze", &a.out)?;
    run.input(&a.gaze);
    let f = File::open(&a.gaze).map_err(|e| Error::Data(format!("reading {}: {e}", a.gaze.display())))?;
    let gaze = analysis::read_gaze_csv(BufReader::new(f))?;
    let set = read_candidates(&mut run, &a.candidates)?;
    let report = analysis::gaze_containment(&gaze, &set, a.radius, a.early_window_ms)?;
    run.write_json("gaze.json", &report)?;
    run.finish(serde_json::json!({ "radius": a.radius, "early_window_ms": a.early_window_ms }))
}

fn cmd_agree(a: AgreeArgs) -> Result<()> {
    let mut run = Run::new("agree", &a.out)?;
    let sa = read_candidates(&mut run, &a.a)?;
    let sb = read_candidates(&mut run, &a.b)?;
    let report = analysis::candidate_agreement(&sa, &sb, a.tol)?;
    run.write_json("agreement.json", &report)?;
    run.finish(serde_json::json!({ "tol": a.tol }))
}

fn cmd_overlay(a: OverlayArgs) -> Result<()> {
    let mut run = Run::new("overlay", &a.out)?;
    let img = load_input(&mut run, &a.image)?;
    let set = read_candidates(&mut run, &a.candidates)?;
    let path = run.output("overlay.png");
    save_overlay(&img, &set, a.marker, &path)?;
    run.finish(serde_json::json!({ "marker": a.marker }))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Glcm(a) => cmd_glcm(a),
        Command::Gabor(a) => cmd_gabor(a),
        Command::PipelineA(a) => cmd_pipeline(a, PipelineKind::A, "pipeline-a"),
        Command::PipelineB(a) => cmd_pipeline(a, PipelineKind::B, "pipeline-b"),
        Command::PipelineThresh(a) => cmd_pipeline(a, PipelineKind::Threshold, "pipeline-thresh"),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Gaze(a) => cmd_gaze(a),
        Command::Agree(a) => cmd_agree(a),
        Command::Overlay(a) => cmd_overlay(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_usage));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
