//! Shared setup for the benchmarks.

use parcelca_core::fixture::GridFixture;
use parcelca_core::geo::{MultiPolygon, Point};
use parcelca_core::road_ingest::{PointOfInterest, RoadNetwork, RoadSegment};
use parcelca_core::{buffer_roads, compute_attributes, extract_parcels, CityContext, ClassTable, Parcel};

pub fn grid_network(g: &GridFixture) -> RoadNetwork {
    RoadNetwork::new(
        g.roads()
            .into_iter()
            .enumerate()
            .map(|(i, (line, class))| RoadSegment::new(i as u64, line, class).expect("grid roads are valid"))
            .collect(),
    )
}

/// Parcels of an `n x n` grid city with attributes filled in, plus its context.
pub fn grid_city(n: usize, cell_m: f64) -> (Vec<Parcel>, CityContext) {
    let g = GridFixture::new(n, cell_m);
    let table = ClassTable::default();
    let buffer = buffer_roads(&grid_network(&g), &table).expect("default table covers grid classes");
    let mut parcels = extract_parcels(&g.boundary(), &buffer, 100.0).parcels;
    let pois: Vec<PointOfInterest> = g
        .pois()
        .into_iter()
        .enumerate()
        .map(|(i, p)| PointOfInterest {
            id: i.to_string(),
            location: p,
            category: None,
        })
        .collect();
    let [cx, cy] = g.center();
    let lake = MultiPolygon::new(g.lake_polygon().into_iter().collect());
    let ctx = CityContext::new("bench", g.boundary(), Some(Point::new(cx, cy)), g.budget_m2(), lake).expect("valid fixture");
    compute_attributes(&mut parcels, &pois, &ctx, 50.0).expect("non-degenerate parcels");
    (parcels, ctx)
}
