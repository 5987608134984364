//! `dimclust`: generate data, compute nearest-neighbor distances, and fit
//! or search dimensional-cluster models from the command line.

mod config;
mod failure;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dimclust::em::Init;
use dimclust::generators::{self, CantorSampleSpec, WalkSpec};
use dimclust::io::csv::{read_column, write_cloud, write_column, CsvOptions};
use dimclust::io::histogram::{histogram_nn, write_histogram, LogBins};
use dimclust::io::image::{image_to_cloud, write_pnm, ImageCloudSpec, ImageMode};
use dimclust::io::result::{feature_cluster_mask, fingerprint, write_result, ResultDocument};
use dimclust::nn::{nn_distances_with, Engine, Metric};
use dimclust::pipeline::{prepare, run_distances, subsample_indices, Selection};
use dimclust::{FitConfig, ModelStructure, NnDistanceSet};
use serde_json::json;

use crate::failure::{Failure, Kind};
use crate::manifest::{InputRecord, Manifest};

#[derive(Debug, Parser)]
#[command(name = "dimclust", version, about = "Clustering by local intrinsic dimension")]
struct Cli {
    /// Base random seed for generators, restarts and subsampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// key=value file of fit settings, applied before command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Write the n-th nearest-neighbor distance of every row.
    Nn(NnArgs),
    /// Fit a structure (or search for one) and write a result document.
    Fit(FitArgs),
    /// Cluster the pixels of a P5/P6 image and write its feature mask.
    Image(ImageArgs),
}

#[derive(Debug, Subcommand)]
enum GenerateKind {
    /// Samples of the middle-thirds Cantor measure.
    Cantor {
        #[arg(long, default_value_t = 50_000)]
        count: usize,
        #[arg(long, default_value_t = 35)]
        depth: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random walk alternating line and plane phases.
    Walk {
        /// Four phase lengths: line, plane, line, plane.
        #[arg(long, value_delimiter = ',', default_values_t = [2000usize, 2000, 2000, 2000])]
        segment_lengths: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        step_scale: f64,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth labels (1 or 2 per row); defaults to `<out>.labels.csv`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Uniform points in the unit cube.
    Cube {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CloudInput {
    #[arg(long)]
    input: PathBuf,
    /// The first CSV row is a header.
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = Metric::Euclidean)]
    metric: Metric,
    #[arg(long, default_value_t = Engine::Auto)]
    engine: Engine,
    /// Neighbor order.
    #[arg(short = 'n', long = "order", default_value_t = 1)]
    order: usize,
}

#[derive(Debug, Args)]
struct NnArgs {
    #[command(flatten)]
    cloud: CloudInput,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "selection", multiple = false)]
struct SelectionArgs {
    /// Fixed structure, e.g. `2,1`.
    #[arg(long, group = "selection")]
    structure: Option<String>,
    /// Greedy AIC search starting from `(1)`.
    #[arg(long, group = "selection")]
    search: bool,
}

impl SelectionArgs {
    fn resolve(&self, default_search: bool) -> Result<Selection, Failure> {
        match (&self.structure, self.search) {
            (Some(s), _) => Ok(Selection::Fixed(ModelStructure::parse(s)?)),
            (None, true) => Ok(Selection::Search),
            (None, false) if default_search => Ok(Selection::Search),
            (None, false) => Err(Failure::usage("one of --structure or --search is required")),
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    newton_max_inner: Option<usize>,
    #[arg(long)]
    max_components: Option<usize>,
    #[arg(long)]
    init: Option<Init>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    cloud: CloudInput,
    /// The input holds one distance per row instead of points.
    #[arg(long)]
    distances: bool,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    fit: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write a log-binned distance histogram with model masses.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Geometric histogram bins (ignored with --cantor-count).
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Use ternary bins and add the exact Cantor masses for this many samples.
    #[arg(long)]
    cantor_count: Option<usize>,
}

#[derive(Debug, Args)]
struct ImageArgs {
    #[arg(long)]
    input: PathBuf,
    /// Expected channel layout; defaults to whatever the file holds.
    #[arg(long)]
    mode: Option<ImageMode>,
    /// Multiplier for pixel coordinates (channel values stay 0-255).
    #[arg(long, default_value_t = 1.0)]
    coordinate_scale: f64,
    /// Cluster this many uniformly chosen pixels instead of all of them.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = Engine::Auto)]
    engine: Engine,
    #[arg(short = 'n', long = "order", default_value_t = 1)]
    order: usize,
    /// Fixed structure; the default is a search.
    #[arg(long, conflicts_with = "search")]
    structure: Option<String>,
    #[arg(long)]
    search: bool,
    #[command(flatten)]
    fit: ConfigArgs,
    /// Writes `<prefix>.json`, `<prefix>.mask.pgm` and `<prefix>.manifest.json`.
    #[arg(long)]
    out_prefix: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("usage error").to_string();
            let first = first.trim_start_matches("error: ").to_string();
            eprintln!("{}", Failure::usage(first).to_line());
            return ExitCode::from(Kind::Usage.exit_code() as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_line());
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure threads: {e}")))?;
    }
    match &cli.command {
        Command::Generate { kind } => cmd_generate(&cli, kind),
        Command::Nn(args) => cmd_nn(&cli, args),
        Command::Fit(args) => cmd_fit(&cli, args),
        Command::Image(args) => cmd_image(&cli, args),
    }
}

fn fit_config(cli: &Cli, args: &ConfigArgs) -> Result<FitConfig, Failure> {
    let mut c = FitConfig::default();
    if let Some(path) = &cli.config {
        config::load(&mut c, path)?;
    }
    c.seed = cli.seed;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { c.$f = v; })* };
    }
    set!(tol, max_iter, restarts, d_min, d_max, newton_max_inner, max_components, init);
    c.validate()?;
    Ok(c)
}

fn read_input(path: &Path) -> Result<(Vec<u8>, InputRecord), Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let record = InputRecord { path: path.display().to_string(), fingerprint: fingerprint(&bytes) };
    Ok((bytes, record))
}

fn cmd_generate(cli: &Cli, kind: &GenerateKind) -> Result<(), Failure> {
    let seed = cli.seed;
    match kind {
        GenerateKind::Cantor { count, depth, out } => {
            let spec = CantorSampleSpec { count: *count, depth: *depth, seed };
            write_cloud(out, &generators::sample_cantor(&spec)?)?;
            Manifest::new("generate cantor", seed, json!(spec)).output(out).write_next_to(out)?;
        }
        GenerateKind::Walk { segment_lengths, step_scale, out, labels } => {
            let lengths: [usize; 4] = segment_lengths
                .as_slice()
                .try_into()
                .map_err(|_| Failure::usage("--segment-lengths takes exactly four values"))?;
            let spec = WalkSpec { segment_lengths: lengths, step_scale: *step_scale, seed, ..Default::default() };
            let (cloud, truth) = generators::generate_walk(&spec)?;
            let labels_path = labels.clone().unwrap_or_else(|| with_suffix(out, ".labels.csv"));
            write_cloud(out, &cloud)?;
            let values: Vec<f64> = truth.iter().map(|&l| l as f64).collect();
            write_column(&labels_path, None, &values)?;
            Manifest::new("generate walk", seed, json!(spec)).output(out).output(&labels_path).write_next_to(out)?;
        }
        GenerateKind::Cube { dim, count, out } => {
            write_cloud(out, &generators::sample_uniform_cube(*dim, *count, seed)?)?;
            Manifest::new("generate cube", seed, json!({ "dim": dim, "count": count, "seed": seed }))
                .output(out)
                .write_next_to(out)?;
        }
    }
    Ok(())
}

fn cmd_nn(cli: &Cli, args: &NnArgs) -> Result<(), Failure> {
    let c = &args.cloud;
    let (bytes, input) = read_input(&c.input)?;
    let cloud = dimclust::io::csv::parse_csv(&bytes, CsvOptions { has_header: c.header, metric: c.metric })?;
    let dists = nn_distances_with(&cloud, c.order, c.engine)?;
    let zeros = dists.distances().iter().filter(|&&r| r == 0.0).count();
    if zeros > 0 {
        log::warn!("{zeros} zero distances (duplicate points) will be dropped at fit time");
    }
    write_column(&args.out, None, dists.distances())?;
    Manifest::new(
        "nn",
        cli.seed,
        json!({ "order": c.order, "metric": c.metric, "engine": c.engine, "header": c.header }),
    )
    .input(input)
    .output(&args.out)
    .extra("zero_distances", json!(zeros))
    .write_next_to(&args.out)?;
    println!("{}", json!({ "rows": dists.len(), "zero_distances": zeros }));
    Ok(())
}

/// Distances read from a one-column file, zeros dropped, with the rows kept.
fn distances_from_column(path: &Path, has_header: bool, order: usize) -> Result<(NnDistanceSet, Vec<usize>), Failure> {
    let values = read_column(path, has_header)?;
    if let Some(bad) = values.iter().position(|&r| r < 0.0) {
        return Err(Failure::data(format!("negative distance {} on row {}", values[bad], bad + 1)));
    }
    let (indices, kept): (Vec<usize>, Vec<f64>) = values.into_iter().enumerate().filter(|&(_, r)| r > 0.0).unzip();
    if kept.is_empty() {
        return Err(Failure::data("every distance is zero"));
    }
    Ok((NnDistanceSet::new(order, kept)?, indices))
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<(), Failure> {
    let config = fit_config(cli, &args.fit)?;
    let selection = args.selection.resolve(false)?;
    let c = &args.cloud;
    let (bytes, input) = read_input(&c.input)?;
    let (data, indices) = if args.distances {
        distances_from_column(&c.input, c.header, c.order)?
    } else {
        let cloud = dimclust::io::csv::parse_csv(&bytes, CsvOptions { has_header: c.header, metric: c.metric })?;
        let prepared = prepare(&cloud, c.order, c.engine)?;
        (prepared.data, prepared.indices)
    };
    let doc = run_distances(&data, indices, &selection, &config, input.fingerprint.clone())?;
    write_result(&doc, &args.out)?;
    let mut manifest = Manifest::new(
        "fit",
        cli.seed,
        json!({
            "order": c.order,
            "metric": c.metric,
            "engine": c.engine,
            "header": c.header,
            "distances": args.distances,
            "selection": selection_label(&selection),
            "bins": args.bins,
            "cantor_count": args.cantor_count,
        }),
    )
    .config(&config)
    .input(input)
    .output(&args.out);
    if let Some(path) = &args.histogram {
        write_fit_histogram(&data, &doc, path, args.bins, args.cantor_count)?;
        manifest = manifest.output(path);
    }
    manifest.write_next_to(&args.out)?;
    report(&doc)
}

fn write_fit_histogram(
    data: &NnDistanceSet,
    doc: &ResultDocument,
    path: &Path,
    bins: usize,
    cantor_count: Option<usize>,
) -> Result<(), Failure> {
    let bins = match cantor_count {
        Some(_) => LogBins::ternary_covering(data)?,
        None => {
            let (lo, hi) = data.distances().iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &r| (a.min(r), b.max(r)));
            let hi = if hi > lo { hi } else { lo * 2.0 };
            LogBins::geometric(lo * (1.0 - 1e-9), hi, bins)?
        }
    };
    let params =
        dimclust::MixtureParams::new(doc.structure.clone(), doc.dims.clone(), doc.rates.clone(), doc.weights.clone())?;
    let rows = histogram_nn(data, &bins, Some(&params), cantor_count)?;
    write_histogram(path, &rows)?;
    Ok(())
}

fn cmd_image(cli: &Cli, args: &ImageArgs) -> Result<(), Failure> {
    let config = fit_config(cli, &args.fit)?;
    let selection = SelectionArgs { structure: args.structure.clone(), search: args.search }.resolve(true)?;
    let (bytes, input) = read_input(&args.input)?;
    let spec = ImageCloudSpec { source: args.input.clone(), mode: args.mode, coordinate_scale: args.coordinate_scale };
    let (cloud, image) = image_to_cloud(&spec)?;
    if bytes.is_empty() || cloud.len() < 2 {
        return Err(Failure::data(format!(
            "{} has {} pixel(s); at least 2 are needed",
            args.input.display(),
            cloud.len()
        )));
    }
    let pixels: Vec<usize> = match args.subsample {
        Some(0) => return Err(Failure::usage("--subsample must be at least 1")),
        Some(k) => subsample_indices(cloud.len(), k, cli.seed),
        None => (0..cloud.len()).collect(),
    };
    let cloud = if pixels.len() < cloud.len() { cloud.select(&pixels) } else { cloud };
    let prepared = prepare(&cloud, args.order, args.engine)?;
    let point_pixels = prepared.indices.iter().map(|&i| pixels[i]).collect();
    let doc = run_distances(&prepared.data, point_pixels, &selection, &config, input.fingerprint.clone())?;

    let json_path = with_suffix(&args.out_prefix, ".json");
    let mask_path = with_suffix(&args.out_prefix, ".mask.pgm");
    write_result(&doc, &json_path)?;
    let mask = feature_cluster_mask(&doc, image.width, image.height)?;
    write_pnm(&mask_path, &mask.to_pnm())?;
    Manifest::new(
        "image",
        cli.seed,
        json!({
            "mode": image.mode,
            "coordinate_scale": args.coordinate_scale,
            "subsample": args.subsample,
            "engine": args.engine,
            "order": args.order,
            "selection": selection_label(&selection),
        }),
    )
    .config(&config)
    .input(input)
    .output(&json_path)
    .output(&mask_path)
    .write_to(&with_suffix(&args.out_prefix, ".manifest.json"))?;
    report(&doc)
}

fn selection_label(s: &Selection) -> String {
    match s {
        Selection::Fixed(structure) => structure.to_string(),
        Selection::Search => "search".into(),
    }
}

/// Prints a one-line summary; a fit that hit the iteration cap (or a
/// dimension clamp) is reported as a failure after its outputs are written.
fn report(doc: &ResultDocument) -> Result<(), Failure> {
    println!(
        "{}",
        json!({
            "structure": doc.structure.to_string(),
            "dims": doc.dims,
            "aic": doc.aic,
            "loglike": doc.loglike,
            "iterations": doc.iterations,
            "converged": doc.converged,
        })
    );
    if doc.converged {
        Ok(())
    } else {
        Err(Failure {
            kind: Kind::NotConverged,
            message: format!("fit of {} stopped after {} iterations without converging", doc.structure, doc.iterations),
        })
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
