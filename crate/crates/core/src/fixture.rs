//! Synthetic grid cities for demos, tests and benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use geo::{coord, LineString, Point, Polygon, Rect};
use geojson::{Feature, Geometry, GeometryValue, JsonObject};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{polygon_feature, write_features};
use crate::pipeline::{CityConfig, PipelineConfig};
use crate::rng::{hash_str, CounterRng};
use crate::road_ingest::RoadClass;

/// A square city cut by full-span straight roads into `n * n` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFixture {
    pub n: usize,
    pub cell_m: f64,
    /// Lower-left corner. Defaults to UTM-like magnitudes so the input
    /// is never mistaken for longitude/latitude.
    pub origin: [f64; 2],
    /// Growth budget as a share of the city area.
    pub budget_share: f64,
    /// Expected POIs in the central block; decays with distance.
    pub peak_pois_per_cell: f64,
    pub seed: u64,
    /// Adds a protected lake covering most of the top-right block.
    pub lake: bool,
}

impl Default for GridFixture {
    fn default() -> Self {
        Self {
            n: 10,
            cell_m: 300.0,
            origin: [500_000.0, 4_400_000.0],
            budget_share: 0.3,
            peak_pois_per_cell: 15.0,
            seed: 7,
            lake: true,
        }
    }
}

impl GridFixture {
    pub fn new(n: usize, cell_m: f64) -> Self {
        Self {
            n,
            cell_m,
            ..Self::default()
        }
    }

    pub fn side_m(&self) -> f64 {
        self.n as f64 * self.cell_m
    }

    pub fn boundary(&self) -> Polygon<f64> {
        let [x0, y0] = self.origin;
        let s = self.side_m();
        Rect::new(coord! { x: x0, y: y0 }, coord! { x: x0 + s, y: y0 + s }).to_polygon()
    }

    pub fn center(&self) -> [f64; 2] {
        let h = self.side_m() / 2.0;
        [self.origin[0] + h, self.origin[1] + h]
    }

    pub fn budget_m2(&self) -> f64 {
        self.budget_share * self.side_m() * self.side_m()
    }

    fn line_class(&self, k: usize) -> RoadClass {
        if k == self.n / 2 {
            0
        } else if k % 4 == 0 {
            1
        } else if k % 2 == 0 {
            2
        } else {
            3
        }
    }

    /// Interior grid lines, each spanning the whole city.
    pub fn roads(&self) -> Vec<(LineString<f64>, RoadClass)> {
        let [x0, y0] = self.origin;
        let s = self.side_m();
        let mut out = Vec::with_capacity(2 * self.n.saturating_sub(1));
        for k in 1..self.n {
            let t = k as f64 * self.cell_m;
            let class = self.line_class(k);
            out.push((LineString::from(vec![(x0 + t, y0), (x0 + t, y0 + s)]), class));
            out.push((LineString::from(vec![(x0, y0 + t), (x0 + s, y0 + t)]), class));
        }
        out
    }

    pub fn pois(&self) -> Vec<Point<f64>> {
        let rng = CounterRng::new(self.seed);
        let [cx, cy] = self.center();
        let decay = (self.side_m() / 4.0).max(self.cell_m);
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let cell = (i * self.n + j) as u64;
                let x = self.origin[0] + (i as f64 + 0.5) * self.cell_m;
                let y = self.origin[1] + (j as f64 + 0.5) * self.cell_m;
                let d = (x - cx).hypot(y - cy);
                let lambda = self.peak_pois_per_cell * (-d / decay).exp();
                let count = (lambda + rng.open01(0, cell)).floor() as u64;
                for k in 0..count {
                    let u = rng.open01(1 + 2 * k, cell);
                    let v = rng.open01(2 + 2 * k, cell);
                    out.push(Point::new(
                        self.origin[0] + (i as f64 + u) * self.cell_m,
                        self.origin[1] + (j as f64 + v) * self.cell_m,
                    ));
                }
            }
        }
        out
    }

    pub fn lake_polygon(&self) -> Option<Polygon<f64>> {
        if !self.lake || self.n < 2 {
            return None;
        }
        let inset = self.cell_m * 0.2;
        let s = self.side_m();
        let [x0, y0] = self.origin;
        let lo = s - self.cell_m + inset;
        let hi = s - inset;
        Some(Rect::new(coord! { x: x0 + lo, y: y0 + lo }, coord! { x: x0 + hi, y: y0 + hi }).to_polygon())
    }

    /// Writes the city's input files under `dir/<id>/` and returns a city
    /// entry with paths relative to `dir`.
    pub fn write(&self, dir: &Path, id: &str) -> Result<CityConfig> {
        let rel = PathBuf::from(id);
        let city_dir = dir.join(&rel);
        fs::create_dir_all(&city_dir).map_err(|e| Error::io(&city_dir, e))?;

        let roads = self
            .roads()
            .into_iter()
            .enumerate()
            .map(|(i, (line, class))| {
                let mut f = feature(GeometryValue::from(&line), json!({ "class": class }));
                f.id = Some(geojson::feature::Id::Number(i.into()));
                f
            })
            .collect();
        write_features(&city_dir.join("roads.geojson"), roads)?;

        let pois = self
            .pois()
            .iter()
            .map(|p| feature(GeometryValue::from(p), json!({ "category": "synthetic" })))
            .collect();
        write_features(&city_dir.join("pois.geojson"), pois)?;

        write_features(
            &city_dir.join("boundary.geojson"),
            vec![polygon_feature(&self.boundary(), props(json!({ "city_id": id })))],
        )?;

        let mut constraints = Vec::new();
        if let Some(lake) = self.lake_polygon() {
            write_features(
                &city_dir.join("constraints.geojson"),
                vec![polygon_feature(&lake, props(json!({ "kind": "water" })))],
            )?;
            constraints.push(rel.join("constraints.geojson"));
        }

        Ok(CityConfig {
            id: id.to_string(),
            roads: rel.join("roads.geojson"),
            pois: rel.join("pois.geojson"),
            boundary: rel.join("boundary.geojson"),
            center: Some(self.center()),
            budget_m2: self.budget_m2(),
            constraints,
            seed: None,
        })
    }
}

fn props(v: serde_json::Value) -> JsonObject {
    v.as_object().cloned().unwrap_or_default()
}

fn feature(value: GeometryValue, properties: serde_json::Value) -> Feature {
    Feature {
        geometry: Some(Geometry::new(value)),
        properties: Some(props(properties)),
        ..Default::default()
    }
}

/// Writes every city plus a `pipeline.toml` referencing them; returns the
/// config path. Each city gets a seed derived from its id.
pub fn write_fixture_suite(dir: &Path, cities: &[(&str, GridFixture)], template: &PipelineConfig) -> Result<PathBuf> {
    let mut config = template.clone();
    config.cities = cities
        .iter()
        .map(|(id, g)| {
            let g = GridFixture {
                seed: g.seed ^ hash_str(id),
                ..g.clone()
            };
            g.write(dir, id)
        })
        .collect::<Result<_>>()?;
    let path = dir.join("pipeline.toml");
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Global settings for fixture batches. Synthetic grids give every parcel
/// dozens of neighbors, so the neighborhood share right after seeding is
/// tiny; a shorter radius, lower threshold and heavier stochastic tail
/// keep growth going past the seed round.
pub fn demo_template() -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml("").expect("empty config parses");
    cfg.ca.p_thd = 0.6;
    cfg.ca.beta = 3.0;
    cfg.ca.neighborhood_radius_m = 300.0;
    cfg
}

/// The three-city demo batch: a 10 x 10 grid and two smaller variants.
pub fn demo_suite() -> Vec<(&'static str, GridFixture)> {
    vec![
        ("grid10", GridFixture::new(10, 300.0)),
        (
            "grid8",
            GridFixture {
                origin: [520_000.0, 4_410_000.0],
                ..GridFixture::new(8, 250.0)
            },
        ),
        (
            "grid12",
            GridFixture {
                origin: [540_000.0, 4_420_000.0],
                lake: false,
                ..GridFixture::new(12, 200.0)
            },
        ),
    ]
}
