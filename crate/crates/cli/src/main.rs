use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use parcelca_core::calibrator::{classification_accuracy, parse_covariates, read_samples_csv};
use parcelca_core::fixture::{demo_template, write_fixture_suite, GridFixture};
use parcelca_core::geo::{MultiPolygon, Polygon};
use parcelca_core::io::{read_boundary, read_polygons};
use parcelca_core::pipeline::{run_city_in, write_parcels, CityConfig, ParcelOptions, Pipeline, PipelineConfig};
use parcelca_core::road_ingest::{load_network, snap_network, trim_dangles};
use parcelca_core::{
    aggregate, aggregator, buffer_roads, extract_parcels, fit_logistic, head_tail_break, overlap_rate, rank_size_fit,
    run_batch, ClassTable, Error, FitOptions,
};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "parcelca", version)]
#[command(about = "Parcel-level urban growth simulation and urban area delineation", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for every city in a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads, 0 for one per core
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Generate synthetic input data
    GenFixture {
        #[command(subcommand)]
        kind: FixtureKind,
    },
    /// Fit a logistic development-probability model on labeled samples
    Calibrate {
        /// CSV with one column per covariate plus a 0/1 `urban` column
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "ln_size,accessibility_km,poi_density_norm")]
        covariates: String,
        #[arg(long, default_value_t = 1e-6)]
        lambda: f64,
        /// Where to write the fitted model JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut a boundary into parcels along buffered roads
    Parcelize {
        #[command(flatten)]
        roads: RoadArgs,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        sliver_floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate urban growth for a single city
    Simulate(SimulateArgs),
    /// Merge urban parcels into urban-area polygons
    Aggregate {
        /// Polygon file; features with a `state` property other than `urban` are skipped
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 500.0)]
        dist: f64,
        #[arg(long, default_value_t = 10_000.0)]
        min_area: f64,
        #[arg(long, default_value = "city")]
        city_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation statistics
    Validate {
        #[command(subcommand)]
        check: ValidateCheck,
    },
}

#[derive(Subcommand)]
enum FixtureKind {
    /// Square city cut into n x n blocks by straight roads
    Grid {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 300.0)]
        cell: f64,
        /// Growth budget as a share of the city area
        #[arg(long, default_value_t = 0.3)]
        budget_share: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "fixture")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ValidateCheck {
    /// Rank-size power-law fit; prints `n_used,alpha,r_squared,degenerate,breakpoints`
    Ranksize {
        /// CSV whose `size` or `area_m2` column (else the first column) holds the sizes
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        head_only: bool,
    },
    /// Share of our area covered by a reference; prints `ours_m2,shared_m2,overlap_rate`
    Overlap {
        #[arg(long)]
        ours: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

#[derive(Args)]
struct RoadArgs {
    #[arg(long)]
    roads: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    snap_tolerance: f64,
    #[arg(long, default_value_t = 200.0)]
    dangle_min: f64,
    /// CSV with `class,width_m`
    #[arg(long)]
    class_table: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    roads: RoadArgs,
    #[arg(long)]
    pois: PathBuf,
    #[arg(long)]
    boundary: PathBuf,
    /// Polygon files of protected land (water, steep slopes)
    #[arg(long)]
    constraints: Vec<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    sliver_floor: f64,
    #[arg(long, default_value_t = 50.0)]
    capture_radius: f64,
    /// "x,y" in the input coordinate system; defaults to the boundary centroid
    #[arg(long)]
    city_center: Option<String>,
    #[arg(long, default_value = "city")]
    city_id: String,
    /// Land budget in m²
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 0.8)]
    p_thd: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 500.0)]
    radius: f64,
    #[arg(long, default_value_t = 50)]
    max_rounds: u32,
    /// Model JSON path or preset name
    #[arg(long, default_value = "beijing2010")]
    model: String,
    #[arg(long, default_value_t = 500.0)]
    dist: f64,
    #[arg(long, default_value_t = 10_000.0)]
    min_area: f64,
    #[arg(long)]
    out: PathBuf,
}

fn class_table(path: &Option<PathBuf>) -> Result<ClassTable> {
    Ok(match path {
        Some(p) => ClassTable::from_csv(p)?,
        None => ClassTable::default(),
    })
}

fn parse_center(s: &str) -> Result<[f64; 2]> {
    let (x, y) = s.split_once(',').context("city center must be \"x,y\"")?;
    Ok([x.trim().parse()?, y.trim().parse()?])
}

fn run(config: &Path, out: &Path, jobs: usize) -> Result<ExitCode> {
    let pipeline = match Pipeline::from_path(config) {
        Ok(p) => p,
        Err(e @ (Error::Config(_) | Error::Io { .. })) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => return Err(e.into()),
    };
    let manifest = run_batch(&pipeline, out, jobs)?;
    for c in &manifest.cities {
        match (&c.failed_stage, &c.error) {
            (Some(stage), Some(err)) => eprintln!("{}: failed at {stage:?}: {err}", c.city_id),
            _ => println!(
                "{}: {} parcels, {} urban ({:.0} m² of {:.0} m² budget), urban area {:.0} m², {} rounds",
                c.city_id, c.parcel_count, c.urban_parcel_count, c.urban_parcel_area_m2, c.budget_m2, c.urban_area_m2, c.rounds
            ),
        }
    }
    Ok(if manifest.any_failed() {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    })
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut config = PipelineConfig::from_toml("")?;
    config.model = args.model;
    config.class_table = args.roads.class_table;
    config.ca.p_thd = args.p_thd;
    config.ca.beta = args.beta;
    config.ca.neighborhood_radius_m = args.radius;
    config.ca.max_rounds = args.max_rounds;
    config.parcels = ParcelOptions {
        snap_tolerance_m: args.roads.snap_tolerance,
        dangle_min_m: args.roads.dangle_min,
        sliver_floor_m2: args.sliver_floor,
        capture_radius_m: args.capture_radius,
    };
    config.aggregate.dist_m = args.dist;
    config.aggregate.min_area_m2 = args.min_area;
    config.cities.push(CityConfig {
        id: args.city_id,
        roads: args.roads.roads,
        pois: args.pois,
        boundary: args.boundary,
        center: args.city_center.as_deref().map(parse_center).transpose()?,
        budget_m2: args.budget,
        constraints: args.constraints,
        seed: Some(args.seed),
    });
    let source = config.to_toml()?;
    let pipeline = match Pipeline::new(config, source.as_bytes()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let report = run_city_in(&pipeline, &pipeline.config.cities[0], &args.out);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PARTIAL)
    })
}

fn parcelize(roads: RoadArgs, boundary: &Path, sliver_floor: f64, out: &Path) -> Result<()> {
    let table = class_table(&roads.class_table)?;
    let boundary = read_boundary(boundary)?;
    let loaded = load_network(&roads.roads, &table)?;
    let snapped = snap_network(&loaded.network, roads.snap_tolerance);
    let trimmed = trim_dangles(&snapped, roads.dangle_min);
    let buffer = buffer_roads(&trimmed.network, &table)?;
    let set = extract_parcels(&boundary, &buffer, sliver_floor);
    write_parcels(out, &set.parcels, None, false)?;
    println!(
        "{} segments ({} dangles trimmed, {} unknown classes), {} faces, {} parcels after dropping {:.1} m² of slivers",
        trimmed.network.len(),
        trimmed.removed,
        loaded.class_warnings,
        set.pre_sliver_count,
        set.parcels.len(),
        set.sliver_area_m2
    );
    Ok(())
}

fn calibrate(samples: &Path, covariates: &str, lambda: f64, out: Option<&Path>) -> Result<()> {
    let covariates = parse_covariates(covariates)?;
    let rows = read_samples_csv(samples, &covariates)?;
    let opts = FitOptions {
        lambda,
        ..FitOptions::default()
    };
    let (model, report) = fit_logistic(&rows, &covariates, &opts)?;
    if let Some(path) = out {
        model.write_json_file(path)?;
    }
    let accuracy = classification_accuracy(&model, &rows, 0.5)?;
    let summary = serde_json::json!({ "model": model, "report": report, "accuracy": accuracy });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn aggregate_file(input: &Path, dist: f64, min_area: f64, city_id: &str, out: &Path) -> Result<()> {
    let polys: Vec<Polygon<f64>> = read_polygons(input)?
        .into_iter()
        .filter(|r| r.properties.get("state").and_then(|s| s.as_str()).is_none_or(|s| s == "urban"))
        .map(|r| r.geometry)
        .collect();
    let ua = aggregate(city_id, &polys, dist, min_area);
    aggregator::write_urban_area(&ua, out)?;
    println!("{} parcels -> {} polygons, {:.1} m²", polys.len(), ua.polygons.len(), ua.total_area_m2);
    Ok(())
}

fn read_sizes(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "size" || h == "area_m2")
        .unwrap_or(0);
    let mut sizes = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or_default();
        sizes.push(
            field
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: row {} is not a number: {field:?}", path.display(), i + 1))?,
        );
    }
    Ok(sizes)
}

fn multi(path: &Path) -> Result<MultiPolygon<f64>> {
    Ok(MultiPolygon::new(read_polygons(path)?.into_iter().map(|r| r.geometry).collect()))
}

fn validate(check: ValidateCheck) -> Result<()> {
    match check {
        ValidateCheck::Ranksize { input, head_only } => {
            let sizes = read_sizes(&input)?;
            let fit = rank_size_fit(&sizes, head_only)?;
            let breaks: Vec<String> = head_tail_break(&sizes).iter().map(|b| b.to_string()).collect();
            println!(
                "{},{},{},{},{}",
                fit.n_used,
                fit.alpha,
                fit.r_squared,
                fit.degenerate,
                breaks.join(";")
            );
        }
        ValidateCheck::Overlap { ours, reference } => {
            use parcelca_core::geo::{Area, BooleanOps};
            let ours = multi(&ours)?;
            let reference = multi(&reference)?;
            let rate = overlap_rate(&ours, &reference)?;
            let shared = ours.intersection(&reference).unsigned_area();
            println!("{},{},{}", ours.unsigned_area(), shared, rate);
        }
    }
    Ok(())
}

fn gen_grid(n: usize, cell: f64, budget_share: f64, seed: u64, out: &Path) -> Result<()> {
    if n == 0 || !(cell > 0.0) || !(budget_share > 0.0 && budget_share <= 1.0) {
        bail!("need n > 0, cell > 0 and budget share in (0, 1]");
    }
    let grid = GridFixture {
        budget_share,
        seed,
        ..GridFixture::new(n, cell)
    };
    let id = format!("grid{n}");
    let path = write_fixture_suite(out, &[(id.as_str(), grid)], &demo_template())?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, jobs } => return run(&config, &out, jobs),
        Command::Simulate(args) => return simulate(args),
        Command::GenFixture {
            kind:
                FixtureKind::Grid {
                    n,
                    cell,
                    budget_share,
                    seed,
                    out,
                },
        } => gen_grid(n, cell, budget_share, seed, &out)?,
        Command::Calibrate {
            samples,
            covariates,
            lambda,
            out,
        } => calibrate(&samples, &covariates, lambda, out.as_deref())?,
        Command::Parcelize {
            roads,
            boundary,
            sliver_floor,
            out,
        } => parcelize(roads, &boundary, sliver_floor, &out)?,
        Command::Aggregate {
            input,
            dist,
            min_area,
            city_id,
            out,
        } => aggregate_file(&input, dist, min_area, &city_id, &out)?,
        Command::Validate { check } => validate(check)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
