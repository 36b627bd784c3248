//! Road network and POI loading, endpoint snapping and dangle trimming.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use geo::{Coord, Euclidean, Intersects, Length, LineString, Point, Polygon};
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_SNAP_TOLERANCE_M: f64 = 20.0;
pub const DEFAULT_DANGLE_MIN_M: f64 = 200.0;

pub type RoadClass = u8;

/// Road reserve width per hierarchy class, 0 being the highest class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    widths: BTreeMap<RoadClass, f64>,
}

impl Default for ClassTable {
    fn default() -> Self {
        Self {
            widths: BTreeMap::from([(0, 40.0), (1, 30.0), (2, 20.0), (3, 10.0)]),
        }
    }
}

impl ClassTable {
    pub fn new(widths: impl IntoIterator<Item = (RoadClass, f64)>) -> Result<Self> {
        let widths: BTreeMap<_, _> = widths.into_iter().collect();
        if widths.is_empty() {
            return Err(Error::Config("class table is empty".into()));
        }
        if let Some((c, w)) = widths.iter().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!("class {c} has non-positive width {w}")));
        }
        Ok(Self { widths })
    }

    /// Reads a `class,width_m` CSV with a header row.
    pub fn from_csv(path: &Path) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Row {
            class: RoadClass,
            width_m: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let rows = rdr
            .deserialize::<Row>()
            .map(|r| r.map(|r| (r.class, r.width_m)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn width(&self, class: RoadClass) -> Option<f64> {
        self.widths.get(&class).copied()
    }

    pub fn contains(&self, class: RoadClass) -> bool {
        self.widths.contains_key(&class)
    }

    /// The numerically largest class, i.e. the lowest in the hierarchy.
    pub fn lowest_class(&self) -> RoadClass {
        *self.widths.keys().next_back().expect("class table is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (RoadClass, f64)> + '_ {
        self.widths.iter().map(|(c, w)| (*c, *w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: u64,
    pub polyline: LineString<f64>,
    pub class: RoadClass,
}

impl RoadSegment {
    /// Drops consecutive duplicate vertices; fails if fewer than two remain.
    pub fn new(id: u64, polyline: LineString<f64>, class: RoadClass) -> Result<Self> {
        let polyline = dedup_consecutive(polyline);
        if polyline.0.len() < 2 {
            return Err(Error::Invariant(format!(
                "segment {id} has fewer than two distinct points"
            )));
        }
        Ok(Self { id, polyline, class })
    }

    pub fn length(&self) -> f64 {
        Euclidean.length(&self.polyline)
    }

    pub fn start(&self) -> Coord<f64> {
        self.polyline.0[0]
    }

    pub fn end(&self) -> Coord<f64> {
        *self.polyline.0.last().unwrap()
    }

    pub fn is_loop(&self) -> bool {
        NodeKey::from(self.start()) == NodeKey::from(self.end())
    }
}

fn dedup_consecutive(mut ls: LineString<f64>) -> LineString<f64> {
    ls.0.dedup();
    ls
}

/// Exact-coordinate key for a network node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey(u64, u64);

impl From<Coord<f64>> for NodeKey {
    fn from(c: Coord<f64>) -> Self {
        // +0.0 and -0.0 must collide
        let norm = |v: f64| if v == 0.0 { 0.0f64 } else { v };
        NodeKey(norm(c.x).to_bits(), norm(c.y).to_bits())
    }
}

impl NodeKey {
    pub fn coord(self) -> Coord<f64> {
        Coord {
            x: f64::from_bits(self.0),
            y: f64::from_bits(self.1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    nodes: BTreeMap<NodeKey, Vec<u64>>,
}

impl RoadNetwork {
    pub fn new(segments: Vec<RoadSegment>) -> Self {
        let mut nodes: BTreeMap<NodeKey, Vec<u64>> = BTreeMap::new();
        for s in &segments {
            nodes.entry(s.start().into()).or_default().push(s.id);
            nodes.entry(s.end().into()).or_default().push(s.id);
        }
        Self { segments, nodes }
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<RoadSegment> {
        self.segments
    }

    /// Endpoint nodes and the ids of incident segments; a loop appears twice at its node.
    pub fn nodes(&self) -> &BTreeMap<NodeKey, Vec<u64>> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn degree(&self, node: NodeKey) -> usize {
        self.nodes.get(&node).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(RoadSegment::length).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub network: RoadNetwork,
    /// Features whose class was missing or absent from the class table.
    pub class_warnings: usize,
}

fn class_of(props: &serde_json::Map<String, Value>) -> Option<RoadClass> {
    let v = props.get("class").or_else(|| props.get("hierarchy"))?;
    match v {
        Value::Number(n) => n.as_u64().and_then(|c| RoadClass::try_from(c).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn load_network(path: &Path, class_table: &ClassTable) -> Result<LoadedNetwork> {
    let records = io::read_lines(path)?;
    if records.is_empty() {
        return Err(Error::EmptyNetwork(path.to_path_buf()));
    }
    let mut warnings = 0;
    let mut segments = Vec::with_capacity(records.len());
    for (id, rec) in records.into_iter().enumerate() {
        let class = match class_of(&rec.properties) {
            Some(c) if class_table.contains(c) => c,
            _ => {
                warnings += 1;
                class_table.lowest_class()
            }
        };
        let seg = RoadSegment::new(id as u64, rec.geometry, class).map_err(|_| Error::Input {
            path: path.to_path_buf(),
            feature: rec.label.clone(),
            reason: "line has fewer than two distinct points".into(),
        })?;
        segments.push(seg);
    }
    if warnings > 0 {
        log::warn!("{}: {warnings} features defaulted to the lowest road class", path.display());
    }
    Ok(LoadedNetwork {
        network: RoadNetwork::new(segments),
        class_warnings: warnings,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// Groups points into transitive clusters of the within-`tol` graph.
/// Returns a cluster label per point, labels numbered by first occurrence.
fn cluster_points(points: &[Coord<f64>], tol: f64) -> (Vec<usize>, bool) {
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, c)| GeomWithData::new([c.x, c.y], i))
            .collect(),
    );
    let mut uf = UnionFind::new(points.len());
    let mut merged = false;
    for (i, c) in points.iter().enumerate() {
        for other in tree.locate_within_distance([c.x, c.y], tol * tol) {
            if other.data != i {
                merged |= uf.union(i, other.data);
            }
        }
    }
    let mut label_of_root = HashMap::new();
    let labels = (0..points.len())
        .map(|i| {
            let root = uf.find(i);
            let next = label_of_root.len();
            *label_of_root.entry(root).or_insert(next)
        })
        .collect();
    (labels, merged)
}

/// Merges every group of endpoints connected by the within-`tolerance`
/// relation into one node at the centroid of the group, repeating until no
/// two nodes are within tolerance.
pub fn snap_network(net: &RoadNetwork, tolerance: f64) -> RoadNetwork {
    assert!(tolerance > 0.0, "snap tolerance must be positive");
    let endpoints: Vec<Coord<f64>> = net
        .segments
        .iter()
        .flat_map(|s| [s.start(), s.end()])
        .collect();
    if endpoints.is_empty() {
        return net.clone();
    }

    // cluster id per original endpoint
    let mut membership: Vec<usize> = (0..endpoints.len()).collect();
    let mut reps = endpoints.clone();
    loop {
        let (labels, merged) = cluster_points(&reps, tolerance);
        if !merged {
            break;
        }
        let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
        for m in membership.iter_mut() {
            *m = labels[*m];
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_clusters];
        for (e, &m) in endpoints.iter().zip(&membership) {
            sums[m].0 += e.x;
            sums[m].1 += e.y;
            sums[m].2 += 1;
        }
        reps = sums
            .iter()
            .map(|&(sx, sy, n)| Coord {
                x: sx / n as f64,
                y: sy / n as f64,
            })
            .collect();
    }

    let segments = net
        .segments
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let mut pts = s.polyline.0.clone();
            pts[0] = reps[membership[2 * i]];
            let last = pts.len() - 1;
            pts[last] = reps[membership[2 * i + 1]];
            // a two-point segment collapsed onto one node is dropped
            RoadSegment::new(s.id, LineString(pts), s.class).ok()
        })
        .collect();
    RoadNetwork::new(segments)
}

#[derive(Debug, Clone)]
pub struct Trimmed {
    pub network: RoadNetwork,
    /// Passes that removed at least one segment.
    pub iterations: usize,
    pub removed: usize,
}

/// Repeatedly removes segments shorter than `min_length` that have a free
/// (degree-1) endpoint, until no such segment remains. Loops are kept.
pub fn trim_dangles(net: &RoadNetwork, min_length: f64) -> Trimmed {
    let mut current = net.clone();
    let mut iterations = 0;
    let mut removed = 0;
    loop {
        let before = current.len();
        let keep: Vec<RoadSegment> = current
            .segments
            .iter()
            .filter(|s| {
                let dangling = current.degree(s.start().into()) == 1
                    || current.degree(s.end().into()) == 1;
                !(dangling && !s.is_loop() && s.length() < min_length)
            })
            .cloned()
            .collect();
        if keep.len() == before {
            break;
        }
        removed += before - keep.len();
        iterations += 1;
        current = RoadNetwork::new(keep);
    }
    Trimmed {
        network: current,
        iterations,
        removed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOfInterest {
    pub id: String,
    pub location: Point<f64>,
    /// Carried through; POIs are counted without weighting.
    pub category: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PoiLoad {
    pub pois: Vec<PointOfInterest>,
    pub dropped: usize,
}

/// Keeps the points on or inside `boundary`.
pub fn clip_pois(pois: Vec<PointOfInterest>, boundary: &Polygon<f64>) -> PoiLoad {
    let total = pois.len();
    let pois: Vec<_> = pois
        .into_iter()
        .filter(|p| boundary.intersects(&p.location))
        .collect();
    PoiLoad {
        dropped: total - pois.len(),
        pois,
    }
}

pub fn load_pois(path: &Path, boundary: &Polygon<f64>) -> Result<PoiLoad> {
    let pois = io::read_points(path)?
        .into_iter()
        .map(|r| PointOfInterest {
            id: r.label,
            location: r.geometry,
            category: r
                .properties
                .get("category")
                .and_then(Value::as_str)
                .map(str::to_owned),
        })
        .collect();
    Ok(clip_pois(pois, boundary))
}
