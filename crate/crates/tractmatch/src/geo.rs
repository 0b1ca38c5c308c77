//! Geometry primitives and a radius-query index over geographic points.
//!
//! Everything here treats the Earth as a sphere of radius 6,371,000 m; at the
//! sub-kilometre scales this crate works with, ellipsoidal corrections are far
//! below the data's own positional noise. Local planar work (centroids, disc
//! sampling) uses an equirectangular projection anchored at the feature.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// A WGS84 coordinate. Construction rejects out-of-range values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<GeoPoint> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Geometry(format!("latitude {lat} out of [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Geometry(format!(
                "longitude {lon} out of [-180, 180]"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Great-circle distance in metres (haversine, spherical Earth).
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let d_lat = (b.lat - a.lat).to_radians();
    let d_lon = (b.lon - a.lon).to_radians();
    let h = (d_lat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (d_lon * 0.5).sin().powi(2);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    EARTH_RADIUS_M * c
}

/// A polygon: one exterior ring plus zero or more hole rings.
///
/// Rings are stored open (the closing edge back to the first vertex is
/// implicit). Every ring must have at least three distinct vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
    bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    fn of(points: &[GeoPoint]) -> BoundingBox {
        let mut bb = BoundingBox {
            lat_min: f64::INFINITY,
            lat_max: f64::NEG_INFINITY,
            lon_min: f64::INFINITY,
            lon_max: f64::NEG_INFINITY,
        };
        for p in points {
            bb.lat_min = bb.lat_min.min(p.lat);
            bb.lat_max = bb.lat_max.max(p.lat);
            bb.lon_min = bb.lon_min.min(p.lon);
            bb.lon_max = bb.lon_max.max(p.lon);
        }
        bb
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.lat_min
            && p.lat <= self.lat_max
            && p.lon >= self.lon_min
            && p.lon <= self.lon_max
    }
}

fn validate_ring(ring: &[GeoPoint]) -> Result<Vec<GeoPoint>> {
    // Accept closed input rings; closure stays implicit internally.
    let mut ring = ring.to_vec();
    if ring.len() >= 2
        && ring.first().map(|p| (p.lat, p.lon)) == ring.last().map(|p| (p.lat, p.lon))
    {
        ring.pop();
    }
    let mut distinct: Vec<(u64, u64)> = ring
        .iter()
        .map(|p| (p.lat.to_bits(), p.lon.to_bits()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Geometry(format!(
            "ring has {} distinct vertices, need at least 3",
            distinct.len()
        )));
    }
    Ok(ring)
}

impl Polygon {
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Polygon> {
        let exterior = validate_ring(&exterior)?;
        let holes = holes
            .iter()
            .map(|h| validate_ring(h))
            .collect::<Result<Vec<_>>>()?;
        let bbox = BoundingBox::of(&exterior);
        Ok(Polygon {
            exterior,
            holes,
            bbox,
        })
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Planar area in square metres (exterior minus holes), equirectangular
    /// projection at the bounding-box centre.
    pub fn area_sq_m(&self) -> f64 {
        let (lat_c, lon_c, cos_c) = self.projection_anchor();
        let ext = ring_area(&self.exterior, lat_c, lon_c, cos_c).abs();
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_area(h, lat_c, lon_c, cos_c).abs())
            .sum();
        ext - holes
    }

    fn projection_anchor(&self) -> (f64, f64, f64) {
        let lat_c = 0.5 * (self.bbox.lat_min + self.bbox.lat_max);
        let lon_c = 0.5 * (self.bbox.lon_min + self.bbox.lon_max);
        (lat_c, lon_c, lat_c.to_radians().cos())
    }
}

fn project(p: GeoPoint, lat_c: f64, lon_c: f64, cos_c: f64) -> (f64, f64) {
    (
        (p.lon - lon_c) * cos_c * METERS_PER_DEG,
        (p.lat - lat_c) * METERS_PER_DEG,
    )
}

fn ring_area(ring: &[GeoPoint], lat_c: f64, lon_c: f64, cos_c: f64) -> f64 {
    let mut twice_area = 0.0;
    for i in 0..ring.len() {
        let (x0, y0) = project(ring[i], lat_c, lon_c, cos_c);
        let (x1, y1) = project(ring[(i + 1) % ring.len()], lat_c, lon_c, cos_c);
        twice_area += x0 * y1 - x1 * y0;
    }
    0.5 * twice_area
}

fn ring_centroid(ring: &[GeoPoint], lat_c: f64, lon_c: f64, cos_c: f64) -> (f64, f64, f64) {
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..ring.len() {
        let (x0, y0) = project(ring[i], lat_c, lon_c, cos_c);
        let (x1, y1) = project(ring[(i + 1) % ring.len()], lat_c, lon_c, cos_c);
        let cross = x0 * y1 - x1 * y0;
        twice_area += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let area = 0.5 * twice_area;
    if area == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (cx / (6.0 * area), cy / (6.0 * area), area)
}

/// Ray-cast parity of the eastward horizontal ray from `p` against one ring.
fn ring_crossings_odd(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut odd = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let lon_at = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if lon_at > p.lon {
                odd = !odd;
            }
        }
    }
    odd
}

/// Even-odd containment: inside the exterior and outside every hole.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    if !poly.bbox.contains(p) {
        return false;
    }
    let mut inside = ring_crossings_odd(p, &poly.exterior);
    for hole in &poly.holes {
        if ring_crossings_odd(p, hole) {
            inside = !inside;
        }
    }
    inside
}

/// Area-weighted centroid (exterior minus holes) on an equirectangular
/// projection anchored at the polygon's bounding-box centre.
pub fn centroid(poly: &Polygon) -> Result<GeoPoint> {
    let (lat_c, lon_c, cos_c) = poly.projection_anchor();
    let (ex, ey, ea) = ring_centroid(&poly.exterior, lat_c, lon_c, cos_c);
    let ea = ea.abs();
    let mut num_x = ea * ex;
    let mut num_y = ea * ey;
    let mut den = ea;
    for hole in &poly.holes {
        let (hx, hy, ha) = ring_centroid(hole, lat_c, lon_c, cos_c);
        let ha = ha.abs();
        num_x -= ha * hx;
        num_y -= ha * hy;
        den -= ha;
    }
    if den.partial_cmp(&f64::EPSILON) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Geometry("degenerate polygon: zero area".into()));
    }
    let x = num_x / den;
    let y = num_y / den;
    GeoPoint::new(
        lat_c + y / METERS_PER_DEG,
        lon_c + x / (METERS_PER_DEG * cos_c),
    )
}

/// Uniform sample of `n` points over the disc of `radius_m` metres around
/// `center`: radius drawn as `radius_m * sqrt(u)`, angle uniform, applied on
/// the local tangent plane. Deterministic for a given seed.
pub fn sample_points_in_disc(
    center: GeoPoint,
    radius_m: f64,
    n: usize,
    seed: u64,
) -> Vec<GeoPoint> {
    assert!(radius_m > 0.0, "radius must be positive");
    assert!(n >= 1, "need at least one sample");
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.next_f64();
        let v = rng.next_f64();
        // Shrink by 1e-9 so projection round-off can never push a sample
        // past the nominal radius.
        let rho = radius_m * u.sqrt() * (1.0 - 1e-9);
        let theta = std::f64::consts::TAU * v;
        let dx = rho * theta.cos();
        let dy = rho * theta.sin();
        let d_lat = dy / METERS_PER_DEG;
        // Longitude scale taken at the midpoint latitude; first-order
        // distortion of the plain cos(lat0) version cancels.
        let mid_lat = (center.lat + d_lat * 0.5).to_radians();
        let d_lon = dx / (METERS_PER_DEG * mid_lat.cos());
        let lat = (center.lat + d_lat).clamp(-90.0, 90.0);
        let mut lon = center.lon + d_lon;
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        points.push(GeoPoint { lat, lon });
    }
    points
}

/// Immutable spatial index over points with attached record ids.
///
/// Uniform lat/lon cell buckets sized to the maximum expected query radius;
/// radius queries enumerate the cells overlapping the query disc's bounding
/// box and filter by exact haversine distance, so results match a linear scan
/// exactly for any radius.
#[derive(Debug, Clone)]
pub struct PointIndex {
    entries: Vec<(GeoPoint, usize)>,
    cells: HashMap<(i64, i64), Vec<u32>>,
    cell_deg_lat: f64,
    cell_deg_lon: f64,
}

impl PointIndex {
    /// Build an index sized for queries up to `max_radius_m`. Larger radii
    /// remain correct; they just scan more cells.
    pub fn build(
        points: impl IntoIterator<Item = (GeoPoint, usize)>,
        max_radius_m: f64,
    ) -> PointIndex {
        assert!(max_radius_m > 0.0, "max radius must be positive");
        let entries: Vec<(GeoPoint, usize)> = points.into_iter().collect();
        let max_abs_lat = entries
            .iter()
            .map(|(p, _)| p.lat.abs())
            .fold(0.0_f64, f64::max);
        // Conservative longitude scale: the narrowest metre-per-degree over
        // the data's latitude range, clamped away from the poles.
        let cos_floor = (max_abs_lat + 1.0).min(89.9).to_radians().cos();
        let cell_deg_lat = max_radius_m / METERS_PER_DEG;
        let cell_deg_lon = max_radius_m / (METERS_PER_DEG * cos_floor);
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, (p, _)) in entries.iter().enumerate() {
            let key = (
                (p.lat / cell_deg_lat).floor() as i64,
                (p.lon / cell_deg_lon).floor() as i64,
            );
            cells.entry(key).or_default().push(i as u32);
        }
        PointIndex {
            entries,
            cells,
            cell_deg_lat,
            cell_deg_lon,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Conservative lat/lon half-extents (degrees) of a disc of `r_m` metres.
    fn query_box(center: GeoPoint, r_m: f64) -> (f64, f64) {
        let theta = r_m / EARTH_RADIUS_M;
        let d_lat = theta.to_degrees() + 1e-9;
        let edge_lat = center.lat.abs() + d_lat;
        let d_lon = if edge_lat >= 89.9 {
            360.0
        } else {
            let s = (theta.sin() / edge_lat.to_radians().cos()).min(1.0);
            s.asin().to_degrees() + 1e-9
        };
        (d_lat, d_lon)
    }

    /// Exact count of indexed points within `r_m` metres of `center`.
    pub fn count_within_radius(&self, center: GeoPoint, r_m: f64) -> usize {
        assert!(r_m > 0.0, "radius must be positive");
        let mut count = 0;
        self.for_each_candidate(center, r_m, |p, _| {
            if haversine_m(center, p) <= r_m {
                count += 1;
            }
        });
        count
    }

    /// Record ids of indexed points within `r_m` metres of `center`.
    pub fn ids_within_radius(&self, center: GeoPoint, r_m: f64) -> Vec<usize> {
        let mut ids = Vec::new();
        self.for_each_candidate(center, r_m, |p, id| {
            if haversine_m(center, p) <= r_m {
                ids.push(id);
            }
        });
        ids.sort_unstable();
        ids
    }

    fn for_each_candidate(
        &self,
        center: GeoPoint,
        r_m: f64,
        mut visit: impl FnMut(GeoPoint, usize),
    ) {
        if self.entries.is_empty() {
            return;
        }
        let (d_lat, d_lon) = Self::query_box(center, r_m);
        let lat_lo = ((center.lat - d_lat) / self.cell_deg_lat).floor() as i64;
        let lat_hi = ((center.lat + d_lat) / self.cell_deg_lat).floor() as i64;
        // Longitude may wrap; enumerate one or two contiguous spans.
        let spans: Vec<(f64, f64)> = if d_lon >= 180.0 {
            vec![(-180.0, 180.0)]
        } else {
            let lo = center.lon - d_lon;
            let hi = center.lon + d_lon;
            if lo < -180.0 {
                vec![(-180.0, hi), (lo + 360.0, 180.0)]
            } else if hi > 180.0 {
                vec![(lo, 180.0), (-180.0, hi - 360.0)]
            } else {
                vec![(lo, hi)]
            }
        };
        for lat_cell in lat_lo..=lat_hi {
            for (lo, hi) in &spans {
                let lon_lo = (lo / self.cell_deg_lon).floor() as i64;
                let lon_hi = (hi / self.cell_deg_lon).floor() as i64;
                for lon_cell in lon_lo..=lon_hi {
                    if let Some(bucket) = self.cells.get(&(lat_cell, lon_cell)) {
                        for &i in bucket {
                            let (p, id) = self.entries[i as usize];
                            visit(p, id);
                        }
                    }
                }
            }
        }
    }
}
