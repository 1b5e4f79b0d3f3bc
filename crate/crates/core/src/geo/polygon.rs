//! Planar polygon geometry: shoelace area, area-weighted centroids and
//! point-in-polygon tests with explicit boundary detection.

use serde::{Deserialize, Serialize};

use super::Location;

/// A simple polygon with optional holes. Rings are stored open (the closing
/// vertex of GeoJSON rings is dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holes: Vec<Vec<[f64; 2]>>,
}

/// Polygon or multipolygon boundary of a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub polygons: Vec<Polygon>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn contains(&self, p: Location) -> bool {
        p.x1 >= self.min[0] && p.x1 <= self.max[0] && p.x2 >= self.min[1] && p.x2 <= self.max[1]
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }

    pub fn extent(&self) -> f64 {
        (self.max[0] - self.min[0]).max(self.max[1] - self.min[1])
    }
}

fn open_ring(mut ring: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

impl Polygon {
    pub fn new(exterior: Vec<[f64; 2]>, holes: Vec<Vec<[f64; 2]>>) -> Self {
        Polygon {
            exterior: open_ring(exterior),
            holes: holes.into_iter().map(open_ring).collect(),
        }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`, counter-clockwise.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], Vec::new())
    }

    fn rings(&self) -> impl Iterator<Item = &Vec<[f64; 2]>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }
}

/// Signed area and area-weighted centroid moment of a ring. Coordinates are
/// shifted by `origin` first to keep the cross products well conditioned.
fn ring_moments(ring: &[[f64; 2]], origin: [f64; 2]) -> (f64, [f64; 2]) {
    let n = ring.len();
    if n < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let mut twice_area = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for k in 0..n {
        let (x0, y0) = (ring[k][0] - origin[0], ring[k][1] - origin[1]);
        let next = ring[(k + 1) % n];
        let (x1, y1) = (next[0] - origin[0], next[1] - origin[1]);
        let cross = x0 * y1 - x1 * y0;
        twice_area += cross;
        mx += (x0 + x1) * cross;
        my += (y0 + y1) * cross;
    }
    // moment = area * centroid = (1/6) * sum(...)
    (0.5 * twice_area, [mx / 6.0, my / 6.0])
}

impl Geometry {
    pub fn polygon(p: Polygon) -> Self {
        Geometry { polygons: vec![p] }
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polygons.iter().flat_map(|p| p.rings().flatten())
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.vertices();
        let first = it.next()?;
        let mut bb = BoundingBox {
            min: *first,
            max: *first,
        };
        for v in it {
            bb.min[0] = bb.min[0].min(v[0]);
            bb.min[1] = bb.min[1].min(v[1]);
            bb.max[0] = bb.max[0].max(v[0]);
            bb.max[1] = bb.max[1].max(v[1]);
        }
        Some(bb)
    }

    /// Total area and centroid. Holes subtract from both; parts of a
    /// multipolygon combine by area weight.
    pub fn area_centroid(&self) -> (f64, Location) {
        let origin = self.vertices().next().copied().unwrap_or([0.0, 0.0]);
        let mut area = 0.0;
        let mut moment = [0.0, 0.0];
        for poly in &self.polygons {
            for (k, ring) in poly.rings().enumerate() {
                let (a, m) = ring_moments(ring, origin);
                // Orientation is not trusted: exterior counts positive, holes negative.
                let sign = if k == 0 { a.signum() } else { -a.signum() };
                area += sign * a;
                moment[0] += sign * m[0];
                moment[1] += sign * m[1];
            }
        }
        if area == 0.0 {
            return (0.0, Location::new(origin[0], origin[1]));
        }
        (
            area,
            Location::new(origin[0] + moment[0] / area, origin[1] + moment[1] / area),
        )
    }

    pub fn contains(&self, p: Location) -> Containment {
        let Some(bb) = self.bounding_box() else {
            return Containment::Outside;
        };
        if !bb.contains(p) {
            return Containment::Outside;
        }
        let tol = 1e-12 * bb.extent().max(p.x1.abs()).max(p.x2.abs()).max(1e-300);
        let mut inside = false;
        for poly in &self.polygons {
            let mut crossings = 0usize;
            for ring in poly.rings() {
                match ring_crossings(ring, p, tol) {
                    None => return Containment::Boundary,
                    Some(c) => crossings += c,
                }
            }
            if crossings % 2 == 1 {
                inside = true;
            }
        }
        if inside {
            Containment::Inside
        } else {
            Containment::Outside
        }
    }
}

/// Number of ring edges crossed by a ray from `p` towards +x, or `None` when
/// `p` lies on an edge.
fn ring_crossings(ring: &[[f64; 2]], p: Location, tol: f64) -> Option<usize> {
    let n = ring.len();
    let mut count = 0;
    for k in 0..n {
        let a = ring[k];
        let b = ring[(k + 1) % n];
        if on_segment(a, b, p, tol) {
            return None;
        }
        if (a[1] > p.x2) != (b[1] > p.x2) {
            let x_cross = a[0] + (p.x2 - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p.x1 < x_cross {
                count += 1;
            }
        }
    }
    Some(count)
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: Location, tol: f64) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let (px, py) = (p.x1 - a[0], p.x2 - a[1]);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return px.hypot(py) <= tol;
    }
    let cross = dx * py - dy * px;
    if cross.abs() > tol * len {
        return false;
    }
    let dot = dx * px + dy * py;
    dot >= -tol * len && dot <= len * len + tol * len
}
