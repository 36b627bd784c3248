//! Road buffering and parcel (face) extraction.

use std::cmp::Ordering;

use geo::{Area, BooleanOps, Buffer, Centroid, LineString, MultiLineString, MultiPolygon, Polygon};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{buffer_style, polygon_perimeter};
use crate::parcel_attrs::AttributeVector;
use crate::road_ingest::{ClassTable, RoadClass, RoadNetwork};

pub const DEFAULT_SLIVER_FLOOR_M2: f64 = 100.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParcelState {
    #[default]
    NonUrban,
    Urban,
}

impl ParcelState {
    pub fn is_urban(self) -> bool {
        self == ParcelState::Urban
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParcelState::NonUrban => "non_urban",
            ParcelState::Urban => "urban",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parcel {
    pub id: usize,
    pub geometry: Polygon<f64>,
    pub area_m2: f64,
    pub perimeter_m: f64,
    pub attributes: AttributeVector,
    pub state: ParcelState,
    /// Development forbidden (steep slope, water).
    pub constrained: bool,
}

impl Parcel {
    pub fn new(id: usize, geometry: Polygon<f64>) -> Self {
        let area_m2 = geometry.unsigned_area();
        let perimeter_m = polygon_perimeter(&geometry);
        Self {
            id,
            geometry,
            area_m2,
            perimeter_m,
            attributes: AttributeVector::default(),
            state: ParcelState::NonUrban,
            constrained: false,
        }
    }
}

/// Buffers each segment by half its class width (round caps and joins) and
/// unions the result.
pub fn buffer_roads(net: &RoadNetwork, class_table: &ClassTable) -> Result<MultiPolygon<f64>> {
    let mut by_class: Vec<(RoadClass, Vec<LineString<f64>>)> = Vec::new();
    for seg in net.segments() {
        if class_table.width(seg.class).is_none() {
            return Err(Error::MissingClass(seg.class));
        }
        match by_class.iter_mut().find(|(c, _)| *c == seg.class) {
            Some((_, lines)) => lines.push(seg.polyline.clone()),
            None => by_class.push((seg.class, vec![seg.polyline.clone()])),
        }
    }
    by_class.sort_by_key(|(c, _)| *c);
    let parts: Vec<MultiPolygon<f64>> = by_class
        .into_par_iter()
        .map(|(class, lines)| {
            let half = class_table.width(class).unwrap() / 2.0;
            MultiLineString(lines).buffer_with_style(buffer_style(half))
        })
        .collect();
    Ok(match parts.len() {
        0 => MultiPolygon::new(vec![]),
        1 => parts.into_iter().next().unwrap(),
        _ => geo::unary_union(parts.iter()),
    })
}

#[derive(Debug, Clone)]
pub struct ParcelSet {
    pub parcels: Vec<Parcel>,
    /// Faces found before the sliver filter.
    pub pre_sliver_count: usize,
    pub sliver_area_m2: f64,
}

/// Faces of `boundary` minus `road_buffer`, smallest slivers discarded, ids
/// ordered by descending area then centroid.
pub fn extract_parcels(
    boundary: &Polygon<f64>,
    road_buffer: &MultiPolygon<f64>,
    sliver_floor_m2: f64,
) -> ParcelSet {
    let faces = if road_buffer.0.is_empty() {
        MultiPolygon::new(vec![boundary.clone()])
    } else {
        boundary.difference(road_buffer)
    };
    let pre_sliver_count = faces.0.len();

    let mut sliver_area_m2 = 0.0;
    let mut kept: Vec<(Polygon<f64>, f64, (f64, f64))> = Vec::with_capacity(faces.0.len());
    for face in faces {
        let area = face.unsigned_area();
        if area < sliver_floor_m2 {
            sliver_area_m2 += area;
            continue;
        }
        let c = face.centroid().map_or((0.0, 0.0), |p| (p.x(), p.y()));
        kept.push((face, area, c));
    }
    kept.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.2 .0.total_cmp(&b.2 .0))
            .then(a.2 .1.total_cmp(&b.2 .1))
            .then(Ordering::Equal)
    });
    let parcels = kept
        .into_iter()
        .enumerate()
        .map(|(id, (geom, _, _))| Parcel::new(id, geom))
        .collect();
    ParcelSet {
        parcels,
        pre_sliver_count,
        sliver_area_m2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_ingest::RoadSegment;
    use geo::{coord, Rect};

    fn seg(id: u64, class: u8, pts: &[(f64, f64)]) -> RoadSegment {
        RoadSegment::new(id, LineString::from(pts.to_vec()), class).unwrap()
    }

    fn square(side: f64) -> Polygon<f64> {
        Rect::new(coord! {x: 0., y: 0.}, coord! {x: side, y: side}).to_polygon()
    }

    #[test]
    fn straight_segment_buffer_area() {
        let net = RoadNetwork::new(vec![seg(0, 2, &[(0., 0.), (1000., 0.)])]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let expected = 20.0 * 1000.0 + std::f64::consts::PI * 100.0;
        assert!((buf.unsigned_area() - expected).abs() / expected < 0.01);
    }

    #[test]
    fn empty_network_buffers_to_nothing() {
        let buf = buffer_roads(&RoadNetwork::default(), &ClassTable::default()).unwrap();
        assert!(buf.0.is_empty());
    }

    #[test]
    fn crossing_segments_union_to_one_polygon() {
        let net = RoadNetwork::new(vec![
            seg(0, 3, &[(-100., 0.), (100., 0.)]),
            seg(1, 0, &[(0., -100.), (0., 100.)]),
        ]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        assert_eq!(buf.0.len(), 1);
    }

    #[test]
    fn missing_class_is_config_error() {
        let net = RoadNetwork::new(vec![seg(0, 9, &[(0., 0.), (10., 0.)])]);
        assert!(matches!(buffer_roads(&net, &ClassTable::default()), Err(Error::MissingClass(9))));
    }

    #[test]
    fn cross_gives_four_parcels() {
        let net = RoadNetwork::new(vec![
            seg(0, 3, &[(500., -50.), (500., 1050.)]),
            seg(1, 3, &[(-50., 500.), (1050., 500.)]),
        ]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let set = extract_parcels(&square(1000.), &buf, DEFAULT_SLIVER_FLOOR_M2);
        assert_eq!(set.pre_sliver_count, 4);
        assert_eq!(set.parcels.len(), 4);
        for p in &set.parcels {
            assert!((p.area_m2 - 495.0 * 495.0).abs() < 1e-6 * p.area_m2);
        }
    }

    #[test]
    fn no_roads_gives_boundary() {
        let set = extract_parcels(&square(300.), &MultiPolygon::new(vec![]), 100.0);
        assert_eq!(set.parcels.len(), 1);
        assert!((set.parcels[0].area_m2 - 90_000.0).abs() < 1e-9);
        assert_eq!(set.parcels[0].state, ParcelState::NonUrban);
    }

    #[test]
    fn closed_loop_gives_inside_and_outside() {
        // V=4, E=4 for the loop; with the boundary ring as a separate
        // component (V=4, E=4) Euler gives F = E - V + 1 + C = 3, so 2 bounded faces
        let net = RoadNetwork::new(vec![seg(0, 3, &[(300., 300.), (700., 300.), (700., 700.), (300., 700.), (300., 300.)])]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let set = extract_parcels(&square(1000.), &buf, 100.0);
        assert_eq!(set.parcels.len(), 2);
        assert_eq!(set.parcels[0].geometry.interiors().len(), 1);
    }

    #[test]
    fn fully_covered_boundary_is_empty() {
        let net = RoadNetwork::new(vec![seg(0, 0, &[(0., 10.), (30., 10.)])]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let set = extract_parcels(&square(20.), &buf, 100.0);
        assert!(set.parcels.is_empty());
    }

    #[test]
    fn slivers_dropped_and_accounted() {
        let net = RoadNetwork::new(vec![seg(0, 3, &[(-50., 94.5), (150., 94.5)])]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let set = extract_parcels(&square(100.), &buf, 100.0);
        // strip above the road is 0.5 m x 100 m
        assert_eq!(set.pre_sliver_count, 2);
        assert_eq!(set.parcels.len(), 1);
        assert!((set.sliver_area_m2 - 50.0).abs() < 1.0);
    }

    #[test]
    fn ids_are_deterministic() {
        let net = RoadNetwork::new(vec![
            seg(0, 3, &[(300., -50.), (300., 1050.)]),
            seg(1, 2, &[(-50., 650.), (1050., 650.)]),
        ]);
        let buf = buffer_roads(&net, &ClassTable::default()).unwrap();
        let a = extract_parcels(&square(1000.), &buf, 100.0);
        let b = extract_parcels(&square(1000.), &buf, 100.0);
        assert_eq!(a.parcels, b.parcels);
        for w in a.parcels.windows(2) {
            assert!(w[0].area_m2 >= w[1].area_m2);
        }
    }
}
