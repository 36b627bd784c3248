//! Batch orchestration: ingest, parcelize, attributes, CA, aggregation and
//! validation for every configured city.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geo::{MultiPolygon, Point, Polygon};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::aggregator::{aggregate, write_urban_area, DEFAULT_AGGREGATION_DIST_M, DEFAULT_MIN_AREA_M2};
use crate::ca_engine::{write_round_log_csv, CaEngine, CaParams, StopReason};
use crate::calibrator::LogisticModel;
use crate::error::{Error, Result};
use crate::io;
use crate::parcel_attrs::{compute_attributes, write_attributes_csv, CityContext, DEFAULT_CAPTURE_RADIUS_M};
use crate::parcelizer::{buffer_roads, extract_parcels, Parcel, ParcelState, DEFAULT_SLIVER_FLOOR_M2};
use crate::rng::city_seed;
use crate::road_ingest::{
    load_network, load_pois, snap_network, trim_dangles, ClassTable, DEFAULT_DANGLE_MIN_M, DEFAULT_SNAP_TOLERANCE_M,
};
use crate::validator::{rank_size_fit, PowerLawFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParcelOptions {
    pub snap_tolerance_m: f64,
    pub dangle_min_m: f64,
    pub sliver_floor_m2: f64,
    pub capture_radius_m: f64,
}

impl Default for ParcelOptions {
    fn default() -> Self {
        Self {
            snap_tolerance_m: DEFAULT_SNAP_TOLERANCE_M,
            dangle_min_m: DEFAULT_DANGLE_MIN_M,
            sliver_floor_m2: DEFAULT_SLIVER_FLOOR_M2,
            capture_radius_m: DEFAULT_CAPTURE_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateOptions {
    pub dist_m: f64,
    pub min_area_m2: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            dist_m: DEFAULT_AGGREGATION_DIST_M,
            min_area_m2: DEFAULT_MIN_AREA_M2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityConfig {
    pub id: String,
    pub roads: PathBuf,
    pub pois: PathBuf,
    pub boundary: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    pub budget_m2: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<PathBuf>,
    /// Overrides the seed derived from the global seed and the city id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Preset name or path to a model JSON file.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_table: Option<PathBuf>,
    #[serde(default)]
    pub ca: CaParams,
    #[serde(default)]
    pub parcels: ParcelOptions,
    #[serde(default)]
    pub aggregate: AggregateOptions,
    #[serde(default, rename = "city")]
    pub cities: Vec<CityConfig>,
}

fn default_seed() -> u64 {
    42
}

fn default_model() -> String {
    "beijing2010".into()
}

/// Configuration with files loaded and paths resolved, ready to run.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub class_table: ClassTable,
    pub model: LogisticModel,
    pub digest: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(t) = &mut self.class_table {
            *t = resolve(base, t);
        }
        if !LogisticModel::preset(&self.model).is_some() {
            self.model = resolve(base, Path::new(&self.model)).to_string_lossy().into_owned();
        }
        for c in &mut self.cities {
            c.roads = resolve(base, &c.roads);
            c.pois = resolve(base, &c.pois);
            c.boundary = resolve(base, &c.boundary);
            for p in &mut c.constraints {
                *p = resolve(base, p);
            }
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        if self.cities.is_empty() {
            return Err(Error::Config("no cities configured".into()));
        }
        self.ca.validate()?;
        let p = &self.parcels;
        if !(p.snap_tolerance_m > 0.0) || !(p.dangle_min_m >= 0.0) || !(p.sliver_floor_m2 >= 0.0) || !(p.capture_radius_m >= 0.0)
        {
            return Err(Error::Config("parcel options must be non-negative (snap tolerance positive)".into()));
        }
        if !(self.aggregate.dist_m >= 0.0) || !(self.aggregate.min_area_m2 >= 0.0) {
            return Err(Error::Config("aggregation options must be non-negative".into()));
        }
        let mut ids = HashSet::new();
        for c in &self.cities {
            if c.id.is_empty() || c.id.contains(['/', '\\']) || c.id == "." || c.id == ".." {
                return Err(Error::Config(format!("invalid city id `{}`", c.id)));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Config(format!("duplicate city id `{}`", c.id)));
            }
            if !(c.budget_m2 > 0.0) {
                return Err(Error::Config(format!("{}: budget_m2 must be positive", c.id)));
            }
            let mut seen = HashSet::new();
            for path in [&c.roads, &c.pois, &c.boundary].into_iter().chain(&c.constraints) {
                if !path.is_file() {
                    return Err(Error::Config(format!("{}: missing input file {}", c.id, path.display())));
                }
                if !seen.insert(path) {
                    return Err(Error::Config(format!("{}: {} referenced twice", c.id, path.display())));
                }
            }
        }
        Ok(())
    }
}

impl Pipeline {
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Config("config is not UTF-8".into()))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Self::new(config, &bytes)
    }

    /// `source` is hashed into the manifest digest.
    pub fn new(config: PipelineConfig, source: &[u8]) -> Result<Self> {
        config.validate()?;
        let class_table = match &config.class_table {
            Some(p) => ClassTable::from_csv(p).map_err(|e| Error::Config(format!("class table: {e}")))?,
            None => ClassTable::default(),
        };
        let model = match LogisticModel::preset(&config.model) {
            Some(m) => m,
            None => LogisticModel::from_json_file(Path::new(&config.model))
                .map_err(|e| Error::Config(format!("model: {e}")))?,
        };
        let digest = Sha256::digest(source).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            config,
            class_table,
            model,
            digest,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Parcelize,
    Attributes,
    Simulate,
    Aggregate,
    Validate,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityReport {
    pub city_id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub budget_m2: f64,
    pub class_warnings: usize,
    pub pois_dropped: usize,
    pub pre_sliver_count: usize,
    pub parcel_count: usize,
    pub urban_parcel_count: usize,
    /// Sum of CA-selected parcel areas; never above the budget.
    pub urban_parcel_area_m2: f64,
    /// Area after aggregation, which absorbs street space and may exceed the budget.
    pub urban_area_m2: f64,
    pub urban_area_polygons: usize,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_size: Option<PowerLawFit>,
    pub wall_time_s: f64,
}

impl CityReport {
    fn new(city: &CityConfig) -> Self {
        Self {
            city_id: city.id.clone(),
            ok: false,
            failed_stage: None,
            error: None,
            budget_m2: city.budget_m2,
            class_warnings: 0,
            pois_dropped: 0,
            pre_sliver_count: 0,
            parcel_count: 0,
            urban_parcel_count: 0,
            urban_parcel_area_m2: 0.0,
            urban_area_m2: 0.0,
            urban_area_polygons: 0,
            rounds: 0,
            stop_reason: None,
            rank_size: None,
            wall_time_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config_digest: String,
    pub succeeded: usize,
    pub failed: usize,
    /// Rank-size fit of urban parcel counts across cities above the mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub city_rank_size: Option<PowerLawFit>,
    pub cities: Vec<CityReport>,
}

impl RunManifest {
    pub fn any_failed(&self) -> bool {
        self.failed > 0
    }
}

struct StageError(Stage, Error);

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError(stage, e))
    }
}

pub const PARCELS_FILE: &str = "parcels.geojson";
pub const URBAN_PARCELS_FILE: &str = "urban_parcels.geojson";
pub const URBAN_AREA_FILE: &str = "urban_area.geojson";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const RANK_SIZE_FILE: &str = "ranksize.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_parcels(path: &Path, parcels: &[Parcel], states: Option<&[ParcelState]>, only_urban: bool) -> Result<()> {
    let features = parcels
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let state = states.map_or(p.state, |s| s[i]);
            if only_urban && !state.is_urban() {
                return None;
            }
            let props = json!({
                "id": p.id,
                "area_m2": p.area_m2,
                "state": state.as_str(),
                "suitable": !p.constrained,
            });
            Some(io::polygon_feature(&p.geometry, props.as_object().cloned().unwrap_or_default()))
        })
        .collect();
    io::write_features(path, features)
}

fn write_rank_size(path: &Path, fit: &Result<PowerLawFit>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_used", "alpha", "r_squared", "degenerate"])?;
    match fit {
        Ok(f) => w.write_record([
            f.n_used.to_string(),
            f.alpha.to_string(),
            f.r_squared.to_string(),
            f.degenerate.to_string(),
        ])?,
        Err(Error::InsufficientData { got, .. }) => w.write_record([got.to_string(), String::new(), String::new(), String::new()])?,
        Err(_) => {}
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_constraints(paths: &[PathBuf]) -> Result<MultiPolygon<f64>> {
    let mut polys = Vec::new();
    for p in paths {
        polys.extend(io::read_polygons(p)?.into_iter().map(|r| r.geometry));
    }
    Ok(MultiPolygon::new(polys))
}

fn run_stages(
    pipeline: &Pipeline,
    city: &CityConfig,
    dir: &Path,
    report: &mut CityReport,
) -> std::result::Result<(), StageError> {
    let cfg = &pipeline.config;
    let opts = &cfg.parcels;

    let boundary: Polygon<f64> = io::read_boundary(&city.boundary).at(Stage::Ingest)?;
    let loaded = load_network(&city.roads, &pipeline.class_table).at(Stage::Ingest)?;
    report.class_warnings = loaded.class_warnings;
    let snapped = snap_network(&loaded.network, opts.snap_tolerance_m);
    let network = trim_dangles(&snapped, opts.dangle_min_m).network;
    let poi_load = load_pois(&city.pois, &boundary).at(Stage::Ingest)?;
    report.pois_dropped = poi_load.dropped;
    let constraints = load_constraints(&city.constraints).at(Stage::Ingest)?;

    let buffer = buffer_roads(&network, &pipeline.class_table).at(Stage::Parcelize)?;
    let set = extract_parcels(&boundary, &buffer, opts.sliver_floor_m2);
    report.pre_sliver_count = set.pre_sliver_count;
    report.parcel_count = set.parcels.len();
    let mut parcels = set.parcels;
    if parcels.is_empty() {
        return Err(StageError(Stage::Parcelize, Error::EmptyInput("no parcels left after removing roads")));
    }

    let center = city.center.map(|[x, y]| Point::new(x, y));
    let ctx = CityContext::new(&city.id, boundary, center, city.budget_m2, constraints).at(Stage::Attributes)?;
    compute_attributes(&mut parcels, &poi_load.pois, &ctx, opts.capture_radius_m).at(Stage::Attributes)?;

    let params = CaParams {
        rng_seed: city.seed.unwrap_or_else(|| city_seed(cfg.seed, &city.id)),
        ..cfg.ca.clone()
    };
    let engine = CaEngine::new(&parcels, &ctx, &pipeline.model, &params).at(Stage::Simulate)?;
    let suitable: Vec<bool> = (0..parcels.len()).map(|i| engine.mask().is_suitable(i)).collect();
    let outcome = engine.run();
    for ((p, s), ok) in parcels.iter_mut().zip(&outcome.states).zip(suitable) {
        p.state = *s;
        p.constrained = !ok;
    }
    let urban: Vec<&Parcel> = parcels.iter().filter(|p| p.state.is_urban()).collect();
    report.urban_parcel_count = urban.len();
    report.urban_parcel_area_m2 = urban.iter().map(|p| p.area_m2).sum();
    report.rounds = outcome.update_rounds();
    report.stop_reason = Some(outcome.stop_reason);

    let urban_geoms: Vec<Polygon<f64>> = urban.iter().map(|p| p.geometry.clone()).collect();
    let ua = aggregate(&city.id, &urban_geoms, cfg.aggregate.dist_m, cfg.aggregate.min_area_m2);
    report.urban_area_m2 = ua.total_area_m2;
    report.urban_area_polygons = ua.polygons.len();

    let sizes: Vec<f64> = urban.iter().map(|p| p.area_m2).collect();
    let fit = rank_size_fit(&sizes, false);
    report.rank_size = fit.as_ref().ok().copied();

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).at(Stage::Write)?;
    write_parcels(&dir.join(PARCELS_FILE), &parcels, None, false).at(Stage::Write)?;
    write_parcels(&dir.join(URBAN_PARCELS_FILE), &parcels, None, true).at(Stage::Write)?;
    write_urban_area(&ua, &dir.join(URBAN_AREA_FILE)).at(Stage::Write)?;
    write_round_log_csv(&dir.join(ROUNDS_FILE), &outcome.rounds).at(Stage::Write)?;
    write_attributes_csv(&dir.join(ATTRIBUTES_FILE), &parcels).at(Stage::Write)?;
    write_rank_size(&dir.join(RANK_SIZE_FILE), &fit).at(Stage::Validate)?;
    Ok(())
}

/// Runs one city end to end, writing into `out_dir/<city id>/`. Stage
/// failures are recorded in the report rather than returned.
pub fn run_city(pipeline: &Pipeline, city: &CityConfig, out_dir: &Path) -> CityReport {
    run_city_in(pipeline, city, &out_dir.join(&city.id))
}

/// Like [`run_city`] but writes directly into `dir`.
pub fn run_city_in(pipeline: &Pipeline, city: &CityConfig, dir: &Path) -> CityReport {
    let started = Instant::now();
    let mut report = CityReport::new(city);
    match run_stages(pipeline, city, dir, &mut report) {
        Ok(()) => report.ok = true,
        Err(StageError(stage, e)) => {
            log::error!("{}: {stage:?} failed: {e}", city.id);
            report.failed_stage = Some(stage);
            report.error = Some(e.to_string());
        }
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    report
}

/// Runs every city on a pool of `jobs` workers (0 = all cores) and writes
/// the manifest into `out_dir`.
pub fn run_batch(pipeline: &Pipeline, out_dir: &Path, jobs: usize) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let cities: Vec<CityReport> = pool.install(|| {
        pipeline
            .config
            .cities
            .par_iter()
            .map(|c| run_city(pipeline, c, out_dir))
            .collect()
    });
    let succeeded = cities.iter().filter(|c| c.ok).count();
    let counts: Vec<f64> = cities
        .iter()
        .filter(|c| c.ok)
        .map(|c| c.urban_parcel_count as f64)
        .collect();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: pipeline.digest.clone(),
        succeeded,
        failed: cities.len() - succeeded,
        city_rank_size: rank_size_fit(&counts, true).ok(),
        cities,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [[city]]
            id = "a"
            roads = "r.geojson"
            pois = "p.geojson"
            boundary = "b.geojson"
            budget_m2 = 1e6
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.model, "beijing2010");
        assert_eq!(cfg.ca, CaParams::default());
        assert_eq!(cfg.cities.len(), 1);
    }

    #[test]
    fn rejects_unknown_keys_and_empty_city_list() {
        assert!(PipelineConfig::from_toml("sed = 1").is_err());
        let cfg = PipelineConfig::from_toml("seed = 1").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_input_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("p.toml");
        std::fs::write(
            &cfg_path,
            "[[city]]\nid = \"a\"\nroads = \"nope.geojson\"\npois = \"p.geojson\"\nboundary = \"b.geojson\"\nbudget_m2 = 5.0\n",
        )
        .unwrap();
        match Pipeline::from_path(&cfg_path) {
            Err(Error::Config(msg)) => assert!(msg.contains("nope.geojson")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
