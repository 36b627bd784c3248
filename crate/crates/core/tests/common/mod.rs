#![allow(dead_code)]

use parcelca_core::fixture::GridFixture;
use parcelca_core::geo::{coord, Coord, LineString, MultiPolygon, Point, Polygon, Rect};
use parcelca_core::road_ingest::{ClassTable, PointOfInterest, RoadNetwork, RoadSegment};
use parcelca_core::{buffer_roads, compute_attributes, extract_parcels, CaParams, CityContext, Parcel};
use rand::Rng;

pub const ORACLE_EPS: f64 = 1e-7;

/// Straight roads spanning a square city, described independently of the
/// parcel machinery so face counts can be derived by hand.
#[derive(Debug, Clone)]
pub struct Arrangement {
    pub side: f64,
    /// Chord endpoints on the boundary.
    pub chords: Vec<(Coord<f64>, Coord<f64>)>,
}

fn boundary_point(side: f64, which: u8, t: f64) -> Coord<f64> {
    match which {
        0 => coord! { x: t, y: 0.0 },
        1 => coord! { x: side, y: t },
        2 => coord! { x: t, y: side },
        _ => coord! { x: 0.0, y: t },
    }
}

fn cross(o: Coord<f64>, a: Coord<f64>, b: Coord<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn dist_to_segment(p: Coord<f64>, a: Coord<f64>, b: Coord<f64>) -> f64 {
    let d = b - a;
    let len2 = d.x * d.x + d.y * d.y;
    let t = (((p.x - a.x) * d.x + (p.y - a.y) * d.y) / len2).clamp(0.0, 1.0);
    let q = a + d * t;
    (p.x - q.x).hypot(p.y - q.y)
}

/// Proper crossing point of two segments, if any.
fn crossing(a: (Coord<f64>, Coord<f64>), b: (Coord<f64>, Coord<f64>)) -> Option<Coord<f64>> {
    let d1 = cross(b.0, b.1, a.0);
    let d2 = cross(b.0, b.1, a.1);
    let d3 = cross(a.0, a.1, b.0);
    let d4 = cross(a.0, a.1, b.1);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        let t = d1 / (d1 - d2);
        Some(a.0 + (a.1 - a.0) * t)
    } else {
        None
    }
}

impl Arrangement {
    pub fn sides(&self) -> Vec<(Coord<f64>, Coord<f64>)> {
        let s = self.side;
        let c = [coord! {x: 0.0, y: 0.0}, coord! {x: s, y: 0.0}, coord! {x: s, y: s}, coord! {x: 0.0, y: s}];
        (0..4).map(|i| (c[i], c[(i + 1) % 4])).collect()
    }

    fn all_segments(&self) -> Vec<(Coord<f64>, Coord<f64>)> {
        let mut segs = self.chords.clone();
        segs.extend(self.sides());
        segs
    }

    /// Distinct vertices of the planar arrangement of chords and boundary.
    pub fn vertices(&self) -> Vec<Coord<f64>> {
        let mut pts: Vec<Coord<f64>> = Vec::new();
        let mut push = |p: Coord<f64>| {
            if !pts.iter().any(|q| (q.x - p.x).abs() < ORACLE_EPS && (q.y - p.y).abs() < ORACLE_EPS) {
                pts.push(p);
            }
        };
        for (a, b) in self.all_segments() {
            push(a);
            push(b);
        }
        for i in 0..self.chords.len() {
            for j in i + 1..self.chords.len() {
                if let Some(p) = crossing(self.chords[i], self.chords[j]) {
                    push(p);
                }
            }
        }
        pts
    }

    /// Bounded faces of the arrangement via Euler's formula for planar
    /// graphs: V - E + F = 1 + C, so bounded faces F - 1 = E - V + C.
    pub fn euler_bounded_faces(&self) -> usize {
        let verts = self.vertices();
        let segs = self.all_segments();
        let mut parent: Vec<usize> = (0..segs.len()).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        let mut edges = 0usize;
        for v in &verts {
            let on: Vec<usize> = (0..segs.len())
                .filter(|&s| dist_to_segment(*v, segs[s].0, segs[s].1) < ORACLE_EPS)
                .collect();
            for w in on.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        for s in &segs {
            let k = verts.iter().filter(|v| dist_to_segment(**v, s.0, s.1) < ORACLE_EPS).count();
            edges += k - 1;
        }
        let components = (0..segs.len()).filter(|&i| find(&mut parent, i) == i).count();
        edges + components - verts.len()
    }

    /// Every vertex keeps `clearance` from each segment it does not lie on,
    /// so no face is thin enough to disappear under the road buffer.
    pub fn well_separated(&self, clearance: f64) -> bool {
        let segs = self.all_segments();
        self.vertices().iter().all(|v| {
            segs.iter().all(|s| {
                let d = dist_to_segment(*v, s.0, s.1);
                d < ORACLE_EPS || d >= clearance
            })
        })
    }

    pub fn random(rng: &mut impl Rng, side: f64, chords: usize) -> Self {
        let chords = (0..chords)
            .map(|_| {
                let s1: u8 = rng.gen_range(0..4);
                let s2 = (s1 + rng.gen_range(1..4)) % 4;
                let t1 = rng.gen_range(0.05..0.95) * side;
                let t2 = rng.gen_range(0.05..0.95) * side;
                (boundary_point(side, s1, t1), boundary_point(side, s2, t2))
            })
            .collect();
        Self { side, chords }
    }

    /// Rejection-samples a well-separated arrangement.
    pub fn random_separated(rng: &mut impl Rng, side: f64, chords: usize, clearance: f64) -> Self {
        loop {
            let a = Self::random(rng, side, chords);
            if a.well_separated(clearance) {
                return a;
            }
        }
    }

    pub fn boundary(&self) -> Polygon<f64> {
        Rect::new(coord! {x: 0.0, y: 0.0}, coord! {x: self.side, y: self.side}).to_polygon()
    }

    /// Roads extend `overhang` past the boundary on both ends.
    pub fn network(&self, class: u8, overhang: f64) -> RoadNetwork {
        let segs = self
            .chords
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let d = b - a;
                let u = d / d.x.hypot(d.y);
                let line = LineString::new(vec![a - u * overhang, b + u * overhang]);
                RoadSegment::new(i as u64, line, class).unwrap()
            })
            .collect();
        RoadNetwork::new(segs)
    }
}

/// A small randomized city ready for simulation.
pub struct SmallCity {
    pub parcels: Vec<Parcel>,
    pub ctx: CityContext,
    pub params: CaParams,
}

fn random_pois(rng: &mut impl Rng, boundary: &Rect<f64>, n: usize) -> Vec<PointOfInterest> {
    (0..n)
        .map(|i| PointOfInterest {
            id: i.to_string(),
            location: Point::new(
                rng.gen_range(boundary.min().x..boundary.max().x),
                rng.gen_range(boundary.min().y..boundary.max().y),
            ),
            category: None,
        })
        .collect()
}

/// Either a jittered grid or a random straight-road arrangement, with
/// random POIs, an optional protected patch and random CA parameters.
pub fn random_small_city(rng: &mut impl Rng, index: usize) -> SmallCity {
    let table = ClassTable::default();
    let (boundary, network) = if index % 2 == 0 {
        let g = GridFixture {
            origin: [0.0, 0.0],
            lake: false,
            ..GridFixture::new(rng.gen_range(3..=20), rng.gen_range(80.0..300.0))
        };
        let segs = g
            .roads()
            .into_iter()
            .enumerate()
            .map(|(i, (l, c))| RoadSegment::new(i as u64, l, c).unwrap())
            .collect();
        (g.boundary(), RoadNetwork::new(segs))
    } else {
        let (side, chords) = (rng.gen_range(1500.0..4000.0), rng.gen_range(1..=18));
        let a = Arrangement::random(rng, side, chords);
        (a.boundary(), a.network(3, 50.0))
    };
    let buffer = buffer_roads(&network, &table).unwrap();
    let mut parcels = extract_parcels(&boundary, &buffer, 100.0).parcels;
    assert!(parcels.len() <= 500);

    let rect = Rect::new(boundary.exterior().0[0], boundary.exterior().0[2]);
    let area = rect.width() * rect.height();
    let poi_count = rng.gen_range(0..400);
    let pois = random_pois(rng, &rect, poi_count);
    let constraints = if rng.gen_bool(0.6) {
        let w = rect.width() * rng.gen_range(0.1..0.4);
        let x = rng.gen_range(rect.min().x..rect.max().x - w);
        let y = rng.gen_range(rect.min().y..rect.max().y - w);
        MultiPolygon::new(vec![Rect::new(coord! {x: x, y: y}, coord! {x: x + w, y: y + w}).to_polygon()])
    } else {
        MultiPolygon::new(vec![])
    };
    let budget = area * rng.gen_range(0.02..0.8);
    let ctx = CityContext::new(format!("city{index}"), boundary, None, budget, constraints).unwrap();
    compute_attributes(&mut parcels, &pois, &ctx, 50.0).unwrap();
    let params = CaParams {
        beta: rng.gen_range(0.0..4.0),
        p_thd: rng.gen_range(0.05..0.95),
        neighborhood_radius_m: rng.gen_range(100.0..800.0),
        rng_seed: rng.gen(),
        max_rounds: rng.gen_range(5..60),
        ..CaParams::default()
    };
    SmallCity { parcels, ctx, params }
}
