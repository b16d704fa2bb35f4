use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pbm_core::bsif::FilterBank;
use pbm_core::detection::{self, DetectionSet, Eye, FallbackParams};
use pbm_core::eval::{self, Label, ScoreRecord, ScoreSet};
use pbm_core::imaging::{self, ClaheParams, GrayImage, IrisMask};
use pbm_core::matching::{self, ComparisonResult, MatchConfig, Sample};
use pbm_core::report;
use pbm_core::synth::{self, SynthParams};
use pbm_service::store::{Store, SystemClock};
use pbm_service::workflow::{PoolFilter, DEFAULT_LOW_PMI_HOURS};
use pbm_service::{App, ServiceConfig};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "pbm", version, about = "Patch-based iris matching with interpretable evidence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare two samples and print the score
    Compare(CompareArgs),
    /// Score every pair listed in a CSV file
    Batch(BatchArgs),
    /// ROC, AUC, EER and d' for a score file
    Eval(EvalArgs),
    /// Render a stored comparison result as SVG
    Render(RenderArgs),
    /// Render detections over the iris crop as SVG
    RenderDetections(RenderDetectionsArgs),
    /// Detect patches with the non-learned fallback detector
    Detect(DetectArgs),
    /// Check detection files against the schema and geometry rules
    ValidateDetections {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write a random zero-mean, unit-norm filter bank
    MakeBank(MakeBankArgs),
    /// Generate a synthetic dataset (images, masks, detections, pair list)
    Synth(SynthArgs),
    /// Run the comparison and trial service
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct MatchOpts {
    /// Filter bank file; a built-in placeholder bank (5 filters, 17x17) is used when omitted
    #[arg(long, env = "PBM_FILTER_BANK")]
    filter_bank: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    angle_tol: f64,
    #[arg(long, default_value_t = 5)]
    max_pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    overlap_frac: f64,
    #[arg(long, default_value_t = imaging::DEFAULT_CROP_SIDE)]
    crop_side: usize,
    #[arg(long, default_value_t = 2.0)]
    clip_limit: f64,
    /// CLAHE tiles as COLSxROWS
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    tile_grid: (usize, usize),
    /// Keep only the N most confident detections per side
    #[arg(long)]
    top_n_detections: Option<usize>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X', ','])
        .ok_or_else(|| format!("expected COLSxROWS, got {s}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

impl MatchOpts {
    fn config(&self) -> Result<MatchConfig> {
        let c = MatchConfig {
            angle_tol_deg: self.angle_tol,
            max_pairs: self.max_pairs,
            overlap_frac: self.overlap_frac,
            crop_side: self.crop_side,
            clahe: ClaheParams {
                tile_grid: self.tile_grid,
                clip_limit: self.clip_limit,
            },
            top_n_detections: self.top_n_detections,
        };
        c.validate()?;
        Ok(c)
    }

    fn bank(&self) -> Result<FilterBank> {
        match &self.filter_bank {
            Some(p) => FilterBank::load(p).with_context(|| format!("loading filter bank {}", p.display())),
            None => {
                eprintln!("note: no --filter-bank given, using the built-in placeholder bank");
                Ok(FilterBank::placeholder(5, 17, 0)?)
            }
        }
    }
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    image_a: PathBuf,
    #[arg(long)]
    mask_a: PathBuf,
    #[arg(long)]
    det_a: PathBuf,
    #[arg(long)]
    image_b: PathBuf,
    #[arg(long)]
    mask_b: PathBuf,
    #[arg(long)]
    det_b: PathBuf,
    #[command(flatten)]
    opts: MatchOpts,
    /// Write the full result as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write SVG evidence
    #[arg(long)]
    svg: Option<PathBuf>,
}

struct Loaded {
    image: GrayImage,
    mask: IrisMask,
    dets: DetectionSet,
}

fn load_side(image: &Path, mask: &Path, det: &Path) -> Result<Loaded> {
    Ok(Loaded {
        image: GrayImage::load_png(image)?,
        mask: IrisMask::load_png(mask)?,
        dets: detection::parse_detections(det)?,
    })
}

impl Loaded {
    fn sample(&self) -> Sample<'_> {
        Sample {
            image: &self.image,
            mask: &self.mask,
            detections: &self.dets,
        }
    }

    fn eye_key(&self) -> String {
        format!("{}_{:?}", self.dets.subject_id, self.dets.eye)
    }
}

fn write_evidence(path: &Path, result: &ComparisonResult, a: &GrayImage, b: &GrayImage) -> Result<()> {
    let side = result.params.crop_side;
    let svg = report::render_comparison(
        result,
        &report::crop_for_display(a, result.crop_offset_a, side)?,
        &report::crop_for_display(b, result.crop_offset_b, side)?,
    )?;
    fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let config = args.opts.config()?;
    let bank = args.opts.bank()?;
    let a = load_side(&args.image_a, &args.mask_a, &args.det_a)?;
    let b = load_side(&args.image_b, &args.mask_b, &args.det_b)?;
    let result = matching::compare(a.sample(), b.sample(), &bank, &config)?;
    println!("score {:.6}", result.score);
    if result.no_evidence {
        println!("no evidence: no patch pair passed the angle and overlap gates");
    }
    for p in &result.pairs {
        println!(
            "  {} <-> {}  distance {:.4}  offset ({}, {})  overlap {}",
            p.id_a, p.id_b, p.distance, p.offset.0, p.offset.1, p.overlap_area
        );
    }
    if let Some(out) = &args.out {
        fs::write(out, result.to_json()?).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(svg) = &args.svg {
        write_evidence(svg, &result, &a.image, &b.image)?;
    }
    Ok(())
}

#[derive(Args)]
struct BatchArgs {
    /// CSV with columns pair_id,image_a,mask_a,det_a,image_b,mask_b,det_b (paths relative to the CSV)
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    opts: MatchOpts,
    /// Score CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-pair result JSON
    #[arg(long)]
    results_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PairRow {
    pair_id: String,
    image_a: PathBuf,
    mask_a: PathBuf,
    det_a: PathBuf,
    image_b: PathBuf,
    mask_b: PathBuf,
    det_b: PathBuf,
}

fn cmd_batch(args: BatchArgs) -> Result<()> {
    let config = args.opts.config()?;
    let bank = args.opts.bank()?;
    let base = args.pairs.parent().unwrap_or(Path::new(".")).to_path_buf();
    let rows: Vec<PairRow> = csv::Reader::from_path(&args.pairs)?
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("reading {}", args.pairs.display()))?;
    if let Some(dir) = &args.results_dir {
        fs::create_dir_all(dir)?;
    }
    let records: Vec<ScoreRecord> = rows
        .par_iter()
        .map(|r| -> Result<ScoreRecord> {
            let a = load_side(&base.join(&r.image_a), &base.join(&r.mask_a), &base.join(&r.det_a))?;
            let b = load_side(&base.join(&r.image_b), &base.join(&r.mask_b), &base.join(&r.det_b))?;
            let result = matching::compare(a.sample(), b.sample(), &bank, &config)
                .with_context(|| format!("pair {}", r.pair_id))?;
            if let Some(dir) = &args.results_dir {
                fs::write(dir.join(format!("{}.json", r.pair_id)), result.to_json()?)?;
            }
            let (sa, sb) = (a.eye_key(), b.eye_key());
            Ok(ScoreRecord {
                pair_id: r.pair_id.clone(),
                label: if sa == sb { Label::Genuine } else { Label::Impostor },
                subject_a: sa,
                subject_b: sb,
                score: result.score,
                no_evidence: result.no_evidence,
            })
        })
        .collect::<Result<_>>()?;
    let set = ScoreSet::new(records)?;
    set.save_csv(&args.out)?;
    println!("scored {} pairs -> {}", set.records().len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Drop no-evidence comparisons from the ROC outputs (both modes are always printed)
    #[arg(long)]
    exclude_no_evidence: bool,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    roc_csv: Option<PathBuf>,
    #[arg(long)]
    roc_svg: Option<PathBuf>,
}

fn print_metrics(title: &str, m: &eval::Metrics) {
    println!("{title}");
    println!("  genuine {}  impostor {}  no-evidence {}", m.n_genuine, m.n_impostor, m.n_no_evidence);
    println!("  AUC {:.4}  EER {:.2}%", m.auc, m.eer * 100.0);
    match m.dprime {
        Some(d) => println!("  d' {d:.3}"),
        None => println!("  d' n/a (fewer than two scores in a class)"),
    }
}

fn roc_svg(curve: &eval::RocCurve) -> String {
    const S: f64 = 400.0;
    const M: f64 = 40.0;
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", M + p.far * S, M + p.frr * S))
        .collect();
    let size = S + 2.0 * M;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{S}\" height=\"{S}\" fill=\"none\" stroke=\"#888888\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{e}\" y2=\"{e}\" stroke=\"#CCCCCC\" stroke-dasharray=\"4 4\"/>\n\
         <polyline class=\"roc\" points=\"{}\" fill=\"none\" stroke=\"#00008B\" stroke-width=\"2\"/>\n\
         <text x=\"{M}\" y=\"{t}\" font-family=\"monospace\" font-size=\"12\">FAR (x) vs FRR (y)</text>\n</svg>\n",
        pts.join(" "),
        e = M + S,
        t = M - 10.0,
    )
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let all = ScoreSet::load_csv(&args.scores)?;
    let excluded = all.without_no_evidence();
    let (m_all, c_all) = eval::evaluate(&all)?;
    print_metrics("including no-evidence comparisons (score 0.5)", &m_all);
    let excluded_metrics = eval::evaluate(&excluded);
    match &excluded_metrics {
        Ok((m, _)) => print_metrics("excluding no-evidence comparisons", m),
        Err(e) => println!("excluding no-evidence comparisons\n  not computable: {e}"),
    }
    let curve = if args.exclude_no_evidence {
        &excluded_metrics.as_ref().map_err(|e| anyhow!("{e}"))?.1
    } else {
        &c_all
    };
    if let Some(p) = &args.json {
        let v = serde_json::json!({
            "included": m_all,
            "excluded": excluded_metrics.as_ref().ok().map(|(m, _)| m),
            "roc_mode": if args.exclude_no_evidence { "excluded" } else { "included" },
        });
        fs::write(p, serde_json::to_string_pretty(&v)?)?;
    }
    if let Some(p) = &args.roc_csv {
        fs::write(p, curve.to_csv())?;
    }
    if let Some(p) = &args.roc_svg {
        fs::write(p, roc_svg(curve))?;
    }
    Ok(())
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    image_a: PathBuf,
    #[arg(long)]
    image_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let text = fs::read_to_string(&args.result).with_context(|| format!("reading {}", args.result.display()))?;
    let result = ComparisonResult::from_json(&text)?;
    let a = GrayImage::load_png(&args.image_a)?;
    let b = GrayImage::load_png(&args.image_b)?;
    write_evidence(&args.out, &result, &a, &b)
}

#[derive(Args)]
struct RenderDetectionsArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long, default_value_t = imaging::DEFAULT_CROP_SIDE)]
    crop_side: usize,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_render_detections(args: RenderDetectionsArgs) -> Result<()> {
    let side = load_side(&args.image, &args.mask, &args.det)?;
    let masked = imaging::apply_mask(&side.image, &side.mask)?;
    let crop = imaging::crop_to_iris(&masked, &side.mask, args.crop_side)?;
    let svg = report::render_detections(&crop.image, &side.dets.detections)?;
    fs::write(&args.out, svg)?;
    Ok(())
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long, default_value = "unknown")]
    subject: String,
    #[arg(long, default_value = "L", value_parser = parse_eye)]
    eye: Eye,
    #[arg(long, default_value_t = 0.0)]
    pmi_hours: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    window: usize,
    #[arg(long, default_value_t = imaging::DEFAULT_CROP_SIDE)]
    crop_side: usize,
    #[arg(long, default_value_t = 2.0)]
    clip_limit: f64,
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    tile_grid: (usize, usize),
}

fn parse_eye(s: &str) -> Result<Eye, String> {
    match s {
        "L" | "l" => Ok(Eye::L),
        "R" | "r" => Ok(Eye::R),
        _ => Err(format!("eye must be L or R, got {s}")),
    }
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let image = GrayImage::load_png(&args.image)?;
    let mask = IrisMask::load_png(&args.mask)?;
    let clahe = ClaheParams {
        tile_grid: args.tile_grid,
        clip_limit: args.clip_limit,
    };
    let pre = imaging::preprocess(&image, &mask, args.crop_side, &clahe)?;
    let params = FallbackParams {
        k: args.k,
        window: args.window,
        ..FallbackParams::default()
    };
    let found = detection::fallback_detect(&pre.image, &pre.mask, &params)?;
    let image_id = args.image_id.unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let set = DetectionSet::new(
        image_id,
        args.subject,
        args.eye,
        args.pmi_hours,
        args.crop_side,
        args.crop_side,
        found,
    )?;
    set.save(&args.out)?;
    println!("{} detections -> {}", set.detections.len(), args.out.display());
    Ok(())
}

fn cmd_validate(files: &[PathBuf]) -> Result<()> {
    let mut failed = 0;
    for f in files {
        match detection::parse_detections(f) {
            Ok(set) => println!("ok    {} ({} detections)", f.display(), set.detections.len()),
            Err(e) => {
                failed += 1;
                println!("error {}: {e}", f.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files failed validation", files.len());
    }
    Ok(())
}

#[derive(Args)]
struct MakeBankArgs {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 17)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    /// Captures per identity
    #[arg(long, default_value_t = 2)]
    captures: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest in-plane rotation (degrees) applied to later captures' detections
    #[arg(long, default_value_t = 10.0)]
    max_rotation: f64,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let p = SynthParams::default();
    let clahe = ClaheParams::default();
    let fallback = FallbackParams::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut names = Vec::new();
    for i in 0..args.identities {
        let id = synth::identity(i, args.seed, &p)?;
        for c in 0..args.captures {
            let img = synth::capture(&id, p.capture_noise, &mut rng)?;
            let deg = if c == 0 {
                0.0
            } else {
                rng.random_range(-args.max_rotation..=args.max_rotation)
            };
            let name = format!("{}_{c}", id.subject_id);
            let mut dets = synth::detect_on_crop(
                &name,
                &id.subject_id,
                &img,
                &id.mask,
                imaging::DEFAULT_CROP_SIDE,
                &clahe,
                &fallback,
                deg,
            )?;
            dets.pmi_hours = 12.0 * c as f64;
            img.save_png(args.out.join(format!("{name}.png")))?;
            id.mask.save_png(args.out.join(format!("{name}_mask.png")))?;
            dets.save(args.out.join(format!("{name}.json")))?;
            names.push(name);
        }
    }
    let mut w = csv::Writer::from_path(args.out.join("pairs.csv"))?;
    w.write_record(["pair_id", "image_a", "mask_a", "det_a", "image_b", "mask_b", "det_b"])?;
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            w.write_record([
                format!("{a}__{b}"),
                format!("{a}.png"),
                format!("{a}_mask.png"),
                format!("{a}.json"),
                format!("{b}.png"),
                format!("{b}_mask.png"),
                format!("{b}.json"),
            ])?;
        }
    }
    w.flush()?;
    println!("{} samples -> {}", names.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PBM_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "PBM_BIND", default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    /// Holds log.ndjson and the assets/ tree served under /files
    #[arg(long, env = "PBM_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, env = "PBM_SEED", default_value_t = 0)]
    seed: u64,
    /// Pairs enter trial plans only if one side is at most this many hours post-mortem
    #[arg(long, env = "PBM_LOW_PMI_HOURS", default_value_t = DEFAULT_LOW_PMI_HOURS)]
    low_pmi_hours: f64,
    /// Admit every registered pair into trial plans
    #[arg(long)]
    no_pmi_filter: bool,
    #[command(flatten)]
    opts: MatchOpts,
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let assets = args.data_dir.join("assets");
    fs::create_dir_all(&assets).with_context(|| format!("creating {}", assets.display()))?;
    let store = Store::open(args.data_dir.join("log.ndjson"), Box::new(SystemClock))?;
    let config = ServiceConfig {
        asset_dir: assets,
        seed: args.seed,
        match_config: args.opts.config()?,
        bank: args.opts.bank()?,
        pool_filter: if args.no_pmi_filter {
            PoolFilter::All
        } else {
            PoolFilter::LowPmi {
                max_hours: args.low_pmi_hours,
            }
        },
    };
    let app = Arc::new(App::new(store, config)?);
    let addr = SocketAddr::new(args.bind, args.port);
    tokio::runtime::Runtime::new()?.block_on(pbm_service::api::serve(addr, app))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Compare(a) => cmd_compare(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::RenderDetections(a) => cmd_render_detections(a),
        Command::Detect(a) => cmd_detect(a),
        Command::ValidateDetections { files } => cmd_validate(&files),
        Command::MakeBank(a) => {
            FilterBank::placeholder(a.n, a.size, a.seed)?.save(&a.out)?;
            println!("{} filters of {}x{} -> {}", a.n, a.size, a.size, a.out.display());
            Ok(())
        }
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a),
    }
}
