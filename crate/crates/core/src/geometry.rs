//! Small planar-geometry helpers shared by the pipeline stages.

use geo::algorithm::buffer::{BufferStyle, LineCap, LineJoin};
use geo::{BoundingRect, Coord, Euclidean, Intersects, Length, Line, LineString, Polygon};
use rstar::{Envelope, AABB};

/// Arc discretization used for every round cap and join.
pub const BUFFER_SEGMENTS_PER_QUARTER: usize = 16;

pub fn buffer_style(distance: f64) -> BufferStyle<f64> {
    let angle = std::f64::consts::FRAC_PI_2 / BUFFER_SEGMENTS_PER_QUARTER as f64;
    BufferStyle::new(distance)
        .line_cap(LineCap::Round(angle))
        .line_join(LineJoin::Round(angle))
}

/// Length of every ring, holes included.
pub fn polygon_perimeter(poly: &Polygon<f64>) -> f64 {
    std::iter::once(poly.exterior())
        .chain(poly.interiors())
        .map(|ring| Euclidean.length(ring))
        .sum()
}

pub fn ring_lines(poly: &Polygon<f64>) -> impl Iterator<Item = Line<f64>> + '_ {
    std::iter::once(poly.exterior())
        .chain(poly.interiors())
        .flat_map(LineString::lines)
}

pub fn envelope(poly: &Polygon<f64>) -> AABB<[f64; 2]> {
    match poly.bounding_rect() {
        Some(r) => AABB::from_corners([r.min().x, r.min().y], [r.max().x, r.max().y]),
        None => AABB::from_point([f64::NAN, f64::NAN]),
    }
}

pub fn expand(env: &AABB<[f64; 2]>, by: f64) -> AABB<[f64; 2]> {
    let (lo, hi) = (env.lower(), env.upper());
    AABB::from_corners([lo[0] - by, lo[1] - by], [hi[0] + by, hi[1] + by])
}

pub fn point_segment_distance(p: Coord<f64>, a: Coord<f64>, b: Coord<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = a + ab * t;
    (p.x - q.x).hypot(p.y - q.y)
}

fn orient(a: Coord<f64>, b: Coord<f64>, c: Coord<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: Line<f64>, b: Line<f64>) -> bool {
    let d1 = orient(b.start, b.end, a.start);
    let d2 = orient(b.start, b.end, a.end);
    let d3 = orient(a.start, a.end, b.start);
    let d4 = orient(a.start, a.end, b.end);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn segment_distance(a: Line<f64>, b: Line<f64>) -> f64 {
    if segments_cross(a, b) {
        return 0.0;
    }
    point_segment_distance(a.start, b.start, b.end)
        .min(point_segment_distance(a.end, b.start, b.end))
        .min(point_segment_distance(b.start, a.start, a.end))
        .min(point_segment_distance(b.end, a.start, a.end))
}

/// True when the closed polygons come within `radius` of each other.
pub fn polygons_within_distance(a: &Polygon<f64>, b: &Polygon<f64>, radius: f64) -> bool {
    let eb = expand(&envelope(b), radius);
    for la in ring_lines(a) {
        let la_env = AABB::from_corners([la.start.x, la.start.y], [la.end.x, la.end.y]);
        if !la_env.intersects(&eb) {
            continue;
        }
        let la_env = expand(&la_env, radius);
        for lb in ring_lines(b) {
            let lb_env = AABB::from_corners([lb.start.x, lb.start.y], [lb.end.x, lb.end.y]);
            if lb_env.intersects(&la_env) && segment_distance(la, lb) <= radius {
                return true;
            }
        }
    }
    // one polygon nested inside the other without boundary contact
    let first = |p: &Polygon<f64>| p.exterior().0.first().copied();
    matches!(first(b), Some(c) if a.intersects(&c)) || matches!(first(a), Some(c) if b.intersects(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use geo::{coord, Rect};

    #[test]
    fn perimeter_counts_holes() {
        let outer = Rect::new(coord! {x: 0., y: 0.}, coord! {x: 10., y: 10.}).to_polygon();
        let hole = Rect::new(coord! {x: 2., y: 2.}, coord! {x: 4., y: 4.}).to_polygon();
        let p = Polygon::new(outer.exterior().clone(), vec![hole.exterior().clone()]);
        assert_relative_eq!(polygon_perimeter(&p), 48.0);
    }

    #[test]
    fn segment_distances() {
        let a = Line::new(coord! {x: 0., y: 0.}, coord! {x: 10., y: 0.});
        let b = Line::new(coord! {x: 5., y: 3.}, coord! {x: 5., y: 8.});
        assert_relative_eq!(segment_distance(a, b), 3.0);
        let c = Line::new(coord! {x: 5., y: -3.}, coord! {x: 5., y: 8.});
        assert_eq!(segment_distance(a, c), 0.0);
        let d = Line::new(coord! {x: 13., y: 4.}, coord! {x: 20., y: 4.});
        assert_relative_eq!(segment_distance(a, d), 5.0);
    }

    #[test]
    fn nested_polygons_are_within_any_distance() {
        let outer = Rect::new(coord! {x: 0., y: 0.}, coord! {x: 100., y: 100.}).to_polygon();
        let inner = Rect::new(coord! {x: 40., y: 40.}, coord! {x: 60., y: 60.}).to_polygon();
        assert!(polygons_within_distance(&outer, &inner, 1.0));
        assert!(polygons_within_distance(&inner, &outer, 1.0));
    }
}
