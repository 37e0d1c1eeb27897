//! Coordinates, distances and polygon predicates.
//!
//! Geographic points are WGS84 degrees. Planar work happens in a local
//! equirectangular frame centred on a reference point, which is accurate to
//! well under half a percent of distance at city scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IUGG mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
/// IUGG mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6_371.008_8;
/// Largest separation (degrees, per axis) accepted by [`project`].
pub const MAX_PROJECTION_SPAN_DEG: f64 = 5.0;
/// Default home-location grid resolution.
pub const DEFAULT_GRID_M: f64 = 100.0;

/// Tolerance (metres) for treating a point as lying on a polygon edge.
const BOUNDARY_EPS_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Projects `p` into the equirectangular frame centred on `reference`.
pub fn project(p: GeoPoint, reference: GeoPoint) -> Result<PlanarPoint> {
    p.validate()?;
    reference.validate()?;
    let dlat = p.lat - reference.lat;
    let dlon = p.lon - reference.lon;
    if dlat.abs() > MAX_PROJECTION_SPAN_DEG || dlon.abs() > MAX_PROJECTION_SPAN_DEG {
        return Err(Error::OutOfProjectionRange { lat: p.lat, lon: p.lon });
    }
    Ok(PlanarPoint {
        x: EARTH_RADIUS_M * reference.lat.to_radians().cos() * dlon.to_radians(),
        y: EARTH_RADIUS_M * dlat.to_radians(),
    })
}

/// Inverse of [`project`].
pub fn unproject(p: PlanarPoint, reference: GeoPoint) -> Result<GeoPoint> {
    reference.validate()?;
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(Error::InvalidGeometry(format!("non-finite planar point {p:?}")));
    }
    let lat = reference.lat + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = reference.lon + (p.x / (EARTH_RADIUS_M * reference.lat.to_radians().cos())).to_degrees();
    GeoPoint::new(lat, lon)
}

/// Great-circle distance in kilometres (haversine form).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

/// A planar frame shared by every stage that needs metric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Result<Self> {
        origin.validate()?;
        Ok(LocalFrame { origin })
    }

    /// Frame centred on the bounding-box centre of `points`.
    pub fn around<I: IntoIterator<Item = GeoPoint>>(points: I) -> Result<Self> {
        let mut bounds: Option<(f64, f64, f64, f64)> = None;
        for p in points {
            p.validate()?;
            bounds = Some(match bounds {
                None => (p.lat, p.lat, p.lon, p.lon),
                Some((a, b, c, d)) => (a.min(p.lat), b.max(p.lat), c.min(p.lon), d.max(p.lon)),
            });
        }
        let (lat0, lat1, lon0, lon1) = bounds.ok_or(Error::EmptyInput("frame points"))?;
        LocalFrame::new(GeoPoint {
            lat: (lat0 + lat1) / 2.0,
            lon: (lon0 + lon1) / 2.0,
        })
    }

    pub fn project(&self, p: GeoPoint) -> Result<PlanarPoint> {
        project(p, self.origin)
    }

    pub fn unproject(&self, p: PlanarPoint) -> Result<GeoPoint> {
        unproject(p, self.origin)
    }

    pub fn project_polygon(&self, poly: &GeoPolygon) -> Result<PolygonM> {
        let ring = |r: &[GeoPoint]| r.iter().map(|p| self.project(*p)).collect::<Result<Vec<_>>>();
        PolygonM::with_holes(
            ring(&poly.exterior)?,
            poly.holes.iter().map(|h| ring(h)).collect::<Result<Vec<_>>>()?,
        )
    }
}

/// A polygon in geographic coordinates, as read from GeoJSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPolygon {
    pub exterior: Vec<GeoPoint>,
    #[serde(default)]
    pub holes: Vec<Vec<GeoPoint>>,
}

impl GeoPolygon {
    /// Area-weighted centroid and area (m²), computed in a frame centred on
    /// the first exterior vertex.
    pub fn centroid_area(&self) -> Result<(GeoPoint, f64)> {
        let first = *self
            .exterior
            .first()
            .ok_or_else(|| Error::InvalidGeometry("polygon has no vertices".into()))?;
        let frame = LocalFrame::new(first)?;
        let planar = frame.project_polygon(self)?;
        let (c, area) = polygon_centroid_area(&planar)?;
        Ok((frame.unproject(c)?, area))
    }
}

/// A simple polygon in metres. Rings are implicitly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonM {
    exterior: Vec<PlanarPoint>,
    holes: Vec<Vec<PlanarPoint>>,
}

fn normalize_ring(mut ring: Vec<PlanarPoint>, what: &str) -> Result<Vec<PlanarPoint>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "{what} ring has {} distinct vertices, need at least 3",
            ring.len()
        )));
    }
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidGeometry(format!("{what} ring has non-finite vertex")));
    }
    if signed_area(&ring).abs() <= 0.0 {
        return Err(Error::InvalidGeometry(format!("{what} ring has zero area")));
    }
    if ring_self_intersects(&ring) {
        return Err(Error::InvalidGeometry(format!("{what} ring self-intersects")));
    }
    Ok(ring)
}

impl PolygonM {
    pub fn new(exterior: Vec<PlanarPoint>) -> Result<Self> {
        Self::with_holes(exterior, Vec::new())
    }

    pub fn with_holes(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Result<Self> {
        let exterior = normalize_ring(exterior, "exterior")?;
        let holes = holes
            .into_iter()
            .map(|h| normalize_ring(h, "hole"))
            .collect::<Result<Vec<_>>>()?;
        let poly = PolygonM { exterior, holes };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidGeometry("holes cover the whole polygon".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle with corners `min` and `max`.
    pub fn rectangle(min: PlanarPoint, max: PlanarPoint) -> Result<Self> {
        Self::new(vec![
            min,
            PlanarPoint::new(max.x, min.y),
            max,
            PlanarPoint::new(min.x, max.y),
        ])
    }

    pub fn exterior(&self) -> &[PlanarPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<PlanarPoint>] {
        &self.holes
    }

    fn rings(&self) -> impl Iterator<Item = &[PlanarPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    fn edges(&self) -> impl Iterator<Item = (PlanarPoint, PlanarPoint)> + '_ {
        self.rings().flat_map(ring_edges)
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.exterior).abs() - self.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
    }

    /// True if `p` lies on any ring edge.
    pub fn on_boundary(&self, p: PlanarPoint) -> bool {
        self.edges().any(|(a, b)| segment_distance(p, a, b) <= BOUNDARY_EPS_M)
    }

    /// Strict interior test under the even–odd rule (boundary excluded).
    pub fn contains_strictly(&self, p: PlanarPoint) -> bool {
        !self.on_boundary(p) && self.rings().filter(|r| ray_crossings_odd(p, r)).count() % 2 == 1
    }
}

fn ring_edges(ring: &[PlanarPoint]) -> impl Iterator<Item = (PlanarPoint, PlanarPoint)> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

fn signed_area(ring: &[PlanarPoint]) -> f64 {
    ring_edges(ring).map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
}

fn ray_crossings_odd(p: PlanarPoint, ring: &[PlanarPoint]) -> bool {
    let mut inside = false;
    for (a, b) in ring_edges(ring) {
        if (a.y > p.y) != (b.y > p.y) {
            let x_at = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_at {
                inside = !inside;
            }
        }
    }
    inside
}

fn orientation(a: PlanarPoint, b: PlanarPoint, c: PlanarPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(a: PlanarPoint, b: PlanarPoint, c: PlanarPoint, d: PlanarPoint) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    // collinear overlaps
    (o1 == 0.0 && segment_distance(c, a, b) == 0.0)
        || (o2 == 0.0 && segment_distance(d, a, b) == 0.0)
        || (o3 == 0.0 && segment_distance(a, c, d) == 0.0)
        || (o4 == 0.0 && segment_distance(b, c, d) == 0.0)
}

fn ring_self_intersects(ring: &[PlanarPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn segment_distance(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&PlanarPoint::new(a.x + t * dx, a.y + t * dy))
}

/// Even–odd containment. Points on an edge count as inside.
pub fn point_in_polygon(p: PlanarPoint, poly: &PolygonM) -> bool {
    poly.on_boundary(p) || poly.rings().filter(|r| ray_crossings_odd(p, r)).count() % 2 == 1
}

/// Zero inside the polygon, otherwise the distance to the nearest edge.
pub fn distance_to_polygon_m(p: PlanarPoint, poly: &PolygonM) -> f64 {
    if point_in_polygon(p, poly) {
        return 0.0;
    }
    poly.edges()
        .map(|(a, b)| segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Area-weighted centroid and shoelace area, holes subtracted.
pub fn polygon_centroid_area(poly: &PolygonM) -> Result<(PlanarPoint, f64)> {
    // Shift to the first vertex to keep the cross products well conditioned.
    let shift = poly.exterior[0];
    let moments = |ring: &[PlanarPoint]| {
        let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for (p, q) in ring_edges(ring) {
            let (px, py) = (p.x - shift.x, p.y - shift.y);
            let (qx, qy) = (q.x - shift.x, q.y - shift.y);
            let cross = px * qy - qx * py;
            a2 += cross;
            cx += (px + qx) * cross;
            cy += (py + qy) * cross;
        }
        // normalise orientation so every ring contributes a positive area
        let s = a2.signum();
        (s * a2 / 2.0, s * cx / 6.0, s * cy / 6.0)
    };
    let (mut area, mut mx, mut my) = moments(&poly.exterior);
    for hole in &poly.holes {
        let (a, x, y) = moments(hole);
        area -= a;
        mx -= x;
        my -= y;
    }
    if !(area > 0.0) {
        return Err(Error::InvalidGeometry("polygon has zero area".into()));
    }
    Ok((PlanarPoint::new(mx / area + shift.x, my / area + shift.y), area))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: i64,
    pub iy: i64,
}

impl GridCell {
    pub fn center(&self, resolution: f64) -> PlanarPoint {
        PlanarPoint::new((self.ix as f64 + 0.5) * resolution, (self.iy as f64 + 0.5) * resolution)
    }
}

/// Floor-snaps a planar point onto a square grid of `resolution` metres.
pub fn snap_to_grid(p: PlanarPoint, resolution: f64) -> Result<GridCell> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid resolution must be positive, got {resolution}"
        )));
    }
    Ok(GridCell {
        ix: (p.x / resolution).floor() as i64,
        iy: (p.y / resolution).floor() as i64,
    })
}
