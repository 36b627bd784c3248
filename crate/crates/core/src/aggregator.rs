//! Merging urban parcels into urban-area polygons by morphological closing.

use std::path::Path;

use geo::orient::{Direction, Orient};
use geo::{Area, BooleanOps, Buffer, LineString, MultiPolygon, Polygon};
use serde_json::json;

use crate::error::Result;
use crate::geometry::buffer_style;
use crate::io;

pub const DEFAULT_AGGREGATION_DIST_M: f64 = 500.0;
pub const DEFAULT_MIN_AREA_M2: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct UrbanArea {
    pub city_id: String,
    pub polygons: Vec<Polygon<f64>>,
    pub total_area_m2: f64,
}

impl UrbanArea {
    pub fn empty(city_id: impl Into<String>) -> Self {
        Self {
            city_id: city_id.into(),
            polygons: Vec::new(),
            total_area_m2: 0.0,
        }
    }

    pub fn as_multi_polygon(&self) -> MultiPolygon<f64> {
        MultiPolygon::new(self.polygons.clone())
    }
}

fn fill_small_holes(poly: Polygon<f64>, min_area: f64) -> Polygon<f64> {
    let (exterior, holes) = poly.into_inner();
    let holes: Vec<LineString<f64>> = holes
        .into_iter()
        .filter(|h| Polygon::new(h.clone(), vec![]).unsigned_area() >= min_area)
        .collect();
    Polygon::new(exterior, holes)
}

/// Closing with a structuring radius of `dist / 2`: parcels whose
/// boundaries are closer than `dist` merge, along with the street space
/// between them. Holes smaller than `min_area` are then filled and
/// components smaller than `min_area` dropped.
pub fn aggregate(city_id: &str, parcels: &[Polygon<f64>], dist: f64, min_area: f64) -> UrbanArea {
    if parcels.is_empty() {
        return UrbanArea::empty(city_id);
    }
    // union and buffering use a non-zero fill rule, so ring orientation matters
    let input = MultiPolygon::new(parcels.to_vec()).orient(Direction::Default);
    let closed = if dist > 0.0 {
        let half = dist / 2.0;
        let grown = input.buffer_with_style(buffer_style(half));
        let shrunk = grown.buffer_with_style(buffer_style(-half));
        // polygonal arcs can shave input corners; the union restores extensivity
        shrunk.union(&input)
    } else {
        geo::unary_union(input.iter())
    };
    let polygons: Vec<Polygon<f64>> = closed
        .into_iter()
        .map(|p| fill_small_holes(p, min_area))
        .filter(|p| p.unsigned_area() >= min_area)
        .collect();
    let total_area_m2 = polygons.iter().map(Area::unsigned_area).sum();
    UrbanArea {
        city_id: city_id.to_string(),
        polygons,
        total_area_m2,
    }
}

/// Recorded on every output feature: the minimum-area filter runs after holes are filled.
pub const MIN_AREA_RULE: &str = "after_hole_filling";

pub fn write_urban_area(ua: &UrbanArea, path: &Path) -> Result<()> {
    let features = ua
        .polygons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let props = json!({
                "city_id": ua.city_id,
                "polygon_index": i,
                "area_m2": p.unsigned_area(),
                "min_area_rule": MIN_AREA_RULE,
            });
            io::polygon_feature(p, props.as_object().cloned().unwrap_or_default())
        })
        .collect();
    io::write_features(path, features)
}

pub fn read_urban_area(path: &Path) -> Result<UrbanArea> {
    let records = io::read_polygons(path)?;
    let city_id = records
        .first()
        .and_then(|r| r.properties.get("city_id"))
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let polygons: Vec<Polygon<f64>> = records.into_iter().map(|r| r.geometry).collect();
    let total_area_m2 = polygons.iter().map(Area::unsigned_area).sum();
    Ok(UrbanArea {
        city_id,
        polygons,
        total_area_m2,
    })
}
