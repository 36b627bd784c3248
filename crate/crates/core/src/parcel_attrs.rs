//! Per-parcel covariates: log size, compactness, accessibility and POI density.

use std::path::Path;

use geo::{Area, BooleanOps, Centroid, Distance, Euclidean, Intersects, MultiPolygon, Point, Polygon};
use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{envelope, expand};
use crate::parcelizer::Parcel;
use crate::road_ingest::PointOfInterest;

pub const DEFAULT_CAPTURE_RADIUS_M: f64 = 50.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    /// ln(area in m²)
    pub ln_size: f64,
    /// perimeter² / area; 4π for a circle
    pub compactness: f64,
    /// centroid to city center, km
    pub accessibility_km: f64,
    /// raw density over the city maximum, in [0, 1]
    pub poi_density_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CityContext {
    pub city_id: String,
    pub boundary: Polygon<f64>,
    pub center: Point<f64>,
    pub total_budget_m2: f64,
    pub constraint_polygons: MultiPolygon<f64>,
}

impl CityContext {
    /// `center` falls back to the boundary centroid when not given.
    pub fn new(
        city_id: impl Into<String>,
        boundary: Polygon<f64>,
        center: Option<Point<f64>>,
        total_budget_m2: f64,
        constraint_polygons: MultiPolygon<f64>,
    ) -> Result<Self> {
        let city_id = city_id.into();
        let area = boundary.unsigned_area();
        if !(area > 0.0) {
            return Err(Error::Config(format!("{city_id}: boundary has no area")));
        }
        let center = match center {
            Some(c) => c,
            None => boundary
                .centroid()
                .ok_or_else(|| Error::Config(format!("{city_id}: boundary has no centroid")))?,
        };
        if !boundary.intersects(&center) {
            return Err(Error::Config(format!("{city_id}: city center lies outside the boundary")));
        }
        if !(total_budget_m2 > 0.0) {
            return Err(Error::Config(format!("{city_id}: budget must be positive")));
        }
        if total_budget_m2 > area {
            return Err(Error::Config(format!(
                "{city_id}: budget {total_budget_m2} m² exceeds boundary area {area:.1} m²"
            )));
        }
        Ok(Self {
            city_id,
            boundary,
            center,
            total_budget_m2,
            constraint_polygons,
        })
    }

    /// Constraint polygons clipped to the boundary.
    pub fn clipped_constraints(&self) -> MultiPolygon<f64> {
        if self.constraint_polygons.0.is_empty() {
            return MultiPolygon::new(vec![]);
        }
        self.constraint_polygons.intersection(&self.boundary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryAttrs {
    pub ln_size: f64,
    pub compactness: f64,
    pub accessibility_km: f64,
}

pub fn compute_geometry_attrs(parcel: &Parcel, ctx: &CityContext) -> Result<GeometryAttrs> {
    if !(parcel.area_m2 > 0.0) {
        return Err(Error::Invariant(format!("parcel {} has zero area", parcel.id)));
    }
    let centroid = parcel
        .geometry
        .centroid()
        .ok_or_else(|| Error::Invariant(format!("parcel {} has no centroid", parcel.id)))?;
    Ok(GeometryAttrs {
        ln_size: parcel.area_m2.ln(),
        compactness: parcel.perimeter_m * parcel.perimeter_m / parcel.area_m2,
        accessibility_km: Euclidean.distance(&centroid, &ctx.center) / 1000.0,
    })
}

/// POIs inside each parcel or within `capture_radius` of its boundary, per
/// hectare. A POI near several parcels counts for each of them.
pub fn compute_poi_density(parcels: &[Parcel], pois: &[PointOfInterest], capture_radius: f64) -> Vec<f64> {
    let tree = RTree::bulk_load(
        pois.iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.location.x(), p.location.y()], i))
            .collect(),
    );
    parcels
        .par_iter()
        .map(|parcel| {
            let search: AABB<[f64; 2]> = expand(&envelope(&parcel.geometry), capture_radius);
            let count = tree
                .locate_in_envelope(&search)
                .filter(|hit| {
                    let loc = &pois[hit.data].location;
                    if capture_radius == 0.0 {
                        parcel.geometry.intersects(loc)
                    } else {
                        Euclidean.distance(loc, &parcel.geometry) <= capture_radius
                    }
                })
                .count();
            count as f64 / (parcel.area_m2 / 10_000.0)
        })
        .collect()
}

/// Divides by the maximum; an all-zero input stays zero.
pub fn normalize_density(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        raw.iter().map(|d| d / max).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Fills every parcel's attribute vector.
pub fn compute_attributes(
    parcels: &mut [Parcel],
    pois: &[PointOfInterest],
    ctx: &CityContext,
    capture_radius: f64,
) -> Result<()> {
    let geom: Vec<GeometryAttrs> = parcels
        .par_iter()
        .map(|p| compute_geometry_attrs(p, ctx))
        .collect::<Result<_>>()?;
    let density = normalize_density(&compute_poi_density(parcels, pois, capture_radius));
    for ((p, g), d) in parcels.iter_mut().zip(geom).zip(density) {
        p.attributes = AttributeVector {
            ln_size: g.ln_size,
            compactness: g.compactness,
            accessibility_km: g.accessibility_km,
            poi_density_norm: d,
        };
    }
    Ok(())
}

pub fn write_attributes_csv(path: &Path, parcels: &[Parcel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parcel_id", "ln_size", "compactness", "accessibility_km", "poi_density_norm"])?;
    for p in parcels {
        let a = &p.attributes;
        w.write_record([
            p.id.to_string(),
            a.ln_size.to_string(),
            a.compactness.to_string(),
            a.accessibility_km.to_string(),
            a.poi_density_norm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
