//! Locations on the circle and the sphere, and the two distance metrics.
//!
//! Latitude/longitude are degrees at the API boundary; circle angles are
//! radians. Great-circle distances use the arcsin-of-chord form, which is
//! well conditioned near zero separation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Distance metric on the sphere surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GreatCircle,
    Chordal,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::GreatCircle => write!(f, "great_circle"),
            Metric::Chordal => write!(f, "chordal"),
        }
    }
}

/// S^d_r for d in {1, 2}. Radius is km for d=2 by convention, dimensionless
/// for the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SphereRepr", into = "SphereRepr")]
pub struct Sphere {
    dimension: u8,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct SphereRepr {
    d: u8,
    r: f64,
}

impl TryFrom<SphereRepr> for Sphere {
    type Error = Error;
    fn try_from(v: SphereRepr) -> Result<Self> {
        Sphere::new(v.d, v.r)
    }
}

impl From<Sphere> for SphereRepr {
    fn from(s: Sphere) -> Self {
        SphereRepr {
            d: s.dimension,
            r: s.radius,
        }
    }
}

impl Sphere {
    pub fn new(dimension: u8, radius: f64) -> Result<Self> {
        if !(dimension == 1 || dimension == 2) {
            return Err(Error::InvalidSphere(format!(
                "dimension must be 1 or 2, got {dimension}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSphere(format!(
                "radius must be positive and finite, got {radius}"
            )));
        }
        Ok(Sphere { dimension, radius })
    }

    /// Unit circle S^1_1.
    pub fn unit_circle() -> Self {
        Sphere {
            dimension: 1,
            radius: 1.0,
        }
    }

    /// Earth-sized sphere S^2_R, R = 6371 km.
    pub fn earth() -> Self {
        Sphere {
            dimension: 2,
            radius: EARTH_RADIUS_KM,
        }
    }

    pub fn dimension(&self) -> u8 {
        self.dimension
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest attainable great-circle distance, pi * r.
    pub fn max_great_circle(&self) -> f64 {
        std::f64::consts::PI * self.radius
    }

    /// Largest attainable chordal distance, 2r.
    pub fn max_chordal(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn max_distance(&self, metric: Metric) -> f64 {
        match metric {
            Metric::GreatCircle => self.max_great_circle(),
            Metric::Chordal => self.max_chordal(),
        }
    }
}

/// A point on S^1 (angle, radians) or S^2 (latitude/longitude, degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    LatLon { lat: f64, lon: f64 },
    Angle(f64),
}

impl Location {
    /// Circle point; the angle is reduced to [0, 2*pi).
    pub fn angle(a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::InvalidLocation(format!("angle must be finite, got {a}")));
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut r = a % two_pi;
        if r < 0.0 {
            r += two_pi;
        }
        // The remainder can round up to exactly 2*pi for inputs just below 0.
        if r >= two_pi {
            r = 0.0;
        }
        Ok(Location::Angle(r))
    }

    /// Sphere point; longitude is reduced to (-180, 180], poles get longitude 0.
    pub fn lat_lon(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidLocation(format!(
                "coordinates must be finite, got ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidLocation(format!(
                "latitude must lie in [-90, 90], got {lat}"
            )));
        }
        let lon = if lat.abs() == 90.0 {
            0.0
        } else {
            let mut l = lon % 360.0;
            if l <= -180.0 {
                l += 360.0;
            } else if l > 180.0 {
                l -= 360.0;
            }
            l
        };
        Ok(Location::LatLon { lat, lon })
    }

    pub fn dimension(&self) -> u8 {
        match self {
            Location::Angle(_) => 1,
            Location::LatLon { .. } => 2,
        }
    }

    /// Latitude in degrees (sphere points only).
    pub fn latitude(&self) -> Option<f64> {
        match self {
            Location::LatLon { lat, .. } => Some(*lat),
            Location::Angle(_) => None,
        }
    }

    pub fn longitude(&self) -> Option<f64> {
        match self {
            Location::LatLon { lon, .. } => Some(*lon),
            Location::Angle(_) => None,
        }
    }
}

fn check_dimension(a: &Location, b: &Location, s: &Sphere) -> Result<()> {
    if a.dimension() != s.dimension() || b.dimension() != s.dimension() {
        return Err(Error::LocationDimension {
            expected: s.dimension(),
        });
    }
    Ok(())
}

/// Central angle in [0, pi] between two circle angles.
fn circle_angle(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let d = (a - b).abs() % two_pi;
    d.min(two_pi - d)
}

/// Chord length between two sphere points on the unit sphere, via the
/// haversine-style formula. Stable for small separations.
fn unit_chord(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (la1, lo1, la2, lo2) = (
        lat1.to_radians(),
        lon1.to_radians(),
        lat2.to_radians(),
        lon2.to_radians(),
    );
    let slat = ((la1 - la2) / 2.0).sin();
    let slon = ((lo1 - lo2) / 2.0).sin();
    let h = slat * slat + la1.cos() * la2.cos() * slon * slon;
    2.0 * h.max(0.0).sqrt()
}

/// Great-circle distance, in the sphere's length unit. Lies in [0, pi*r].
pub fn great_circle_distance(a: &Location, b: &Location, s: &Sphere) -> Result<f64> {
    check_dimension(a, b, s)?;
    match (a, b) {
        (Location::Angle(x), Location::Angle(y)) => Ok(s.radius() * circle_angle(*x, *y)),
        (Location::LatLon { lat: la1, lon: lo1 }, Location::LatLon { lat: la2, lon: lo2 }) => {
            let half_chord = unit_chord(*la1, *lo1, *la2, *lo2) / 2.0;
            Ok(2.0 * s.radius() * half_chord.min(1.0).asin())
        }
        _ => Err(Error::LocationDimension {
            expected: s.dimension(),
        }),
    }
}

/// Chordal (straight-line) distance. Lies in [0, 2r]; equals
/// 2r*sin(theta/(2r)) for great-circle distance theta.
pub fn chordal_distance(a: &Location, b: &Location, s: &Sphere) -> Result<f64> {
    check_dimension(a, b, s)?;
    match (a, b) {
        (Location::Angle(x), Location::Angle(y)) => {
            Ok(2.0 * s.radius() * (circle_angle(*x, *y) / 2.0).sin())
        }
        (Location::LatLon { lat: la1, lon: lo1 }, Location::LatLon { lat: la2, lon: lo2 }) => {
            Ok(s.radius() * unit_chord(*la1, *lo1, *la2, *lo2))
        }
        _ => Err(Error::LocationDimension {
            expected: s.dimension(),
        }),
    }
}

pub fn distance(a: &Location, b: &Location, s: &Sphere, metric: Metric) -> Result<f64> {
    match metric {
        Metric::GreatCircle => great_circle_distance(a, b, s),
        Metric::Chordal => chordal_distance(a, b, s),
    }
}

/// Symmetric pairwise distance matrix with zero diagonal.
pub fn distance_matrix(locs: &[Location], s: &Sphere, metric: Metric) -> Result<DMatrix<f64>> {
    if locs.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let n = locs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(&locs[i], &locs[j], s, metric)?;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(m)
}

/// Rectangular distance matrix between two location sets.
pub fn cross_distance_matrix(
    rows: &[Location],
    cols: &[Location],
    s: &Sphere,
    metric: Metric,
) -> Result<DMatrix<f64>> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            m[(i, j)] = distance(&rows[i], &cols[j], s, metric)?;
        }
    }
    Ok(m)
}
