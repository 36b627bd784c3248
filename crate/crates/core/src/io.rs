//! GeoJSON feature files in a projected, metric coordinate system.

use std::fs;
use std::path::Path;

use geo::orient::{Direction, Orient};
use geo::{BoundingRect, LineString, MultiPolygon, Point, Polygon};
use geojson::{Feature, FeatureCollection, GeoJson, Geometry, GeometryValue, JsonObject};

use crate::error::{Error, Result};

/// One geometry part read from a feature file, with its source feature's metadata.
#[derive(Debug, Clone)]
pub struct Record<G> {
    /// Feature id if present, else `#<index>`.
    pub label: String,
    pub index: usize,
    pub geometry: G,
    pub properties: JsonObject,
}

fn feature_label(f: &Feature, index: usize) -> String {
    match &f.id {
        Some(geojson::feature::Id::String(s)) => s.clone(),
        Some(geojson::feature::Id::Number(n)) => n.to_string(),
        None => format!("#{index}"),
    }
}

fn input_err(path: &Path, feature: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        feature: feature.into(),
        reason: reason.into(),
    }
}

pub fn read_collection(path: &Path) -> Result<FeatureCollection> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| input_err(path, "-", e.to_string()))?;
    let fc = match gj {
        GeoJson::FeatureCollection(fc) => fc,
        GeoJson::Feature(f) => FeatureCollection::new([f]),
        GeoJson::Geometry(g) => FeatureCollection::new([Feature::from(g)]),
    };
    if declares_geographic_crs(&fc) {
        return Err(Error::GeographicCoordinates(path.to_path_buf()));
    }
    Ok(fc)
}

fn declares_geographic_crs(fc: &FeatureCollection) -> bool {
    let Some(crs) = fc.foreign_members.as_ref().and_then(|m| m.get("crs")) else {
        return false;
    };
    let s = crs.to_string().to_ascii_uppercase();
    s.contains("4326") || s.contains("CRS84") || s.contains("4490")
}

/// Coordinates that all fit inside lon/lat ranges and span less than two
/// units are treated as degrees; no real road network is two meters across.
fn looks_geographic<'a>(coords: impl Iterator<Item = &'a geo::Coord<f64>>) -> bool {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for c in coords {
        any = true;
        lo = [lo[0].min(c.x), lo[1].min(c.y)];
        hi = [hi[0].max(c.x), hi[1].max(c.y)];
    }
    if !any {
        return false;
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    lo[0] >= -180.0 && hi[0] <= 180.0 && lo[1] >= -90.0 && hi[1] <= 90.0 && span > 0.0 && span < 2.0
}

fn check_planar<'a>(path: &Path, coords: impl Iterator<Item = &'a geo::Coord<f64>>) -> Result<()> {
    if looks_geographic(coords) {
        Err(Error::GeographicCoordinates(path.to_path_buf()))
    } else {
        Ok(())
    }
}

fn geometry_value<'a>(path: &Path, f: &'a Feature, label: &str) -> Result<&'a GeometryValue> {
    f.geometry
        .as_ref()
        .map(|g| &g.value)
        .ok_or_else(|| input_err(path, label, "feature has no geometry"))
}

pub fn read_lines(path: &Path) -> Result<Vec<Record<LineString<f64>>>> {
    let fc = read_collection(path)?;
    let mut out = Vec::new();
    for (index, f) in fc.features.iter().enumerate() {
        let label = feature_label(f, index);
        let parts: Vec<LineString<f64>> = match geometry_value(path, f, &label)? {
            v @ GeometryValue::LineString { .. } => vec![LineString::try_from(v)
                .map_err(|e| input_err(path, &label, e.to_string()))?],
            v @ GeometryValue::MultiLineString { .. } => geo::MultiLineString::try_from(v)
                .map_err(|e| input_err(path, &label, e.to_string()))?
                .0,
            other => {
                return Err(input_err(
                    path,
                    &label,
                    format!("expected a line geometry, found {}", other.type_name()),
                ))
            }
        };
        let properties = f.properties.clone().unwrap_or_default();
        out.extend(parts.into_iter().map(|geometry| Record {
            label: label.clone(),
            index,
            geometry,
            properties: properties.clone(),
        }));
    }
    check_planar(path, out.iter().flat_map(|r| r.geometry.0.iter()))?;
    Ok(out)
}

pub fn read_points(path: &Path) -> Result<Vec<Record<Point<f64>>>> {
    let fc = read_collection(path)?;
    let mut out = Vec::new();
    for (index, f) in fc.features.iter().enumerate() {
        let label = feature_label(f, index);
        let parts: Vec<Point<f64>> = match geometry_value(path, f, &label)? {
            v @ GeometryValue::Point { .. } => {
                vec![Point::try_from(v).map_err(|e| input_err(path, &label, e.to_string()))?]
            }
            v @ GeometryValue::MultiPoint { .. } => geo::MultiPoint::try_from(v)
                .map_err(|e| input_err(path, &label, e.to_string()))?
                .0,
            other => {
                return Err(input_err(
                    path,
                    &label,
                    format!("expected a point geometry, found {}", other.type_name()),
                ))
            }
        };
        let properties = f.properties.clone().unwrap_or_default();
        out.extend(parts.into_iter().map(|geometry| Record {
            label: label.clone(),
            index,
            geometry,
            properties: properties.clone(),
        }));
    }
    check_planar(path, out.iter().map(|r| &r.geometry.0))?;
    Ok(out)
}

/// Multi-polygons are split into parts. Exteriors come back counter-clockwise
/// and holes clockwise, whatever the file used.
pub fn read_polygons(path: &Path) -> Result<Vec<Record<Polygon<f64>>>> {
    let fc = read_collection(path)?;
    let mut out = Vec::new();
    for (index, f) in fc.features.iter().enumerate() {
        let label = feature_label(f, index);
        let parts: Vec<Polygon<f64>> = match geometry_value(path, f, &label)? {
            v @ GeometryValue::Polygon { .. } => {
                vec![Polygon::try_from(v).map_err(|e| input_err(path, &label, e.to_string()))?]
            }
            v @ GeometryValue::MultiPolygon { .. } => MultiPolygon::try_from(v)
                .map_err(|e| input_err(path, &label, e.to_string()))?
                .0,
            other => {
                return Err(input_err(
                    path,
                    &label,
                    format!("expected a polygon geometry, found {}", other.type_name()),
                ))
            }
        };
        let properties = f.properties.clone().unwrap_or_default();
        out.extend(parts.into_iter().map(|geometry| Record {
            label: label.clone(),
            index,
            geometry: geometry.orient(Direction::Default),
            properties: properties.clone(),
        }));
    }
    check_planar(path, out.iter().flat_map(|r| r.geometry.exterior().0.iter()))?;
    Ok(out)
}

/// Reads a file expected to hold exactly one polygon.
pub fn read_boundary(path: &Path) -> Result<Polygon<f64>> {
    let mut polys = read_polygons(path)?;
    match polys.len() {
        1 => Ok(polys.pop().unwrap().geometry),
        0 => Err(Error::EmptyInput("boundary file has no polygon")),
        n => Err(input_err(
            path,
            "-",
            format!("boundary must be a single polygon, found {n}"),
        )),
    }
}

pub fn polygon_feature(poly: &Polygon<f64>, properties: JsonObject) -> Feature {
    Feature {
        geometry: Some(Geometry::new(GeometryValue::from(poly))),
        properties: Some(properties),
        ..Default::default()
    }
}

pub fn write_features(path: &Path, features: Vec<Feature>) -> Result<()> {
    let fc = FeatureCollection::new(features);
    let text = serde_json::to_string(&fc)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn bounding_box(polys: &[Polygon<f64>]) -> Option<geo::Rect<f64>> {
    polys
        .iter()
        .filter_map(|p| p.bounding_rect())
        .reduce(|a, b| {
            geo::Rect::new(
                geo::coord! {x: a.min().x.min(b.min().x), y: a.min().y.min(b.min().y)},
                geo::coord! {x: a.max().x.max(b.max().x), y: a.max().y.max(b.max().y)},
            )
        })
}
