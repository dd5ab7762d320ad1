//! Regular lat-lon grid datasets.
//!
//! File format: plain CSV. The first row is a label cell followed by the
//! longitudes; every following row is a latitude followed by that row's
//! values. Latitudes ascend.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTransform {
    #[default]
    None,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    /// Degrees, ascending, within [-90, 90].
    pub latitudes: Vec<f64>,
    /// Degrees, as stored in the file.
    pub longitudes: Vec<f64>,
    /// Row i holds latitude i, column j longitude j.
    pub values: DMatrix<f64>,
    pub transform: GridTransform,
    pub provenance: String,
}

impl GridDataset {
    pub fn new(
        latitudes: Vec<f64>,
        longitudes: Vec<f64>,
        values: DMatrix<f64>,
        provenance: &str,
    ) -> Result<Self> {
        if values.nrows() != latitudes.len() || values.ncols() != longitudes.len() {
            return Err(Error::Grid(format!(
                "value matrix is {}x{} but axes have {} latitudes and {} longitudes",
                values.nrows(),
                values.ncols(),
                latitudes.len(),
                longitudes.len()
            )));
        }
        if latitudes.is_empty() || longitudes.is_empty() {
            return Err(Error::Grid("grid axes must be nonempty".to_string()));
        }
        if latitudes.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(Error::Grid("latitudes must lie in [-90, 90]".to_string()));
        }
        if latitudes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Grid("latitudes must be strictly ascending".to_string()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Grid("grid contains non-finite values".to_string()));
        }
        Ok(GridDataset {
            latitudes,
            longitudes,
            values,
            transform: GridTransform::None,
            provenance: provenance.to_string(),
        })
    }

    /// Reads a grid CSV, applying the requested transform.
    pub fn load(path: &Path, transform: GridTransform) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)?;
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Grid("empty grid file".to_string()))??;
        if header.len() < 2 {
            return Err(Error::Grid(
                "header row must hold a label and at least one longitude".to_string(),
            ));
        }
        let longitudes: Vec<f64> = header
            .iter()
            .skip(1)
            .map(|s| parse_cell(s, "longitude"))
            .collect::<Result<_>>()?;
        let mut latitudes = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in records {
            let record = record?;
            if record.len() != longitudes.len() + 1 {
                return Err(Error::Grid(format!(
                    "row {} has {} cells, expected {}",
                    latitudes.len() + 2,
                    record.len(),
                    longitudes.len() + 1
                )));
            }
            latitudes.push(parse_cell(&record[0], "latitude")?);
            rows.push(
                record
                    .iter()
                    .skip(1)
                    .map(|s| parse_cell(s, "value"))
                    .collect::<Result<_>>()?,
            );
        }
        let nlat = latitudes.len();
        let nlon = longitudes.len();
        let values = DMatrix::from_fn(nlat, nlon, |i, j| rows[i][j]);
        let mut ds = GridDataset::new(latitudes, longitudes, values, path.to_string_lossy().as_ref())?;
        if transform == GridTransform::Sqrt {
            if let Some(v) = ds.values.iter().find(|v| **v < 0.0) {
                return Err(Error::Grid(format!(
                    "negative value {v} cannot be square-root transformed"
                )));
            }
            ds.values.apply(|v| *v = v.sqrt());
            ds.transform = GridTransform::Sqrt;
        }
        Ok(ds)
    }

    /// Writes the current values (post-transform) in the same CSV layout.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["lat/lon".to_string()];
        header.extend(self.longitudes.iter().map(|v| format!("{v}")));
        writer.write_record(&header)?;
        for (i, lat) in self.latitudes.iter().enumerate() {
            let mut row = vec![format!("{lat}")];
            row.extend((0..self.longitudes.len()).map(|j| format!("{}", self.values[(i, j)])));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.latitudes.len() * self.longitudes.len()
    }

    /// Cell locations in row-major order (latitude outer, longitude inner).
    pub fn locations(&self) -> Result<Vec<Location>> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &lat in &self.latitudes {
            for &lon in &self.longitudes {
                out.push(Location::lat_lon(lat, lon)?);
            }
        }
        Ok(out)
    }

    /// Values flattened to match `locations()`.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cells());
        for i in 0..self.latitudes.len() {
            for j in 0..self.longitudes.len() {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }
}

/// Reads a points CSV: header `lat,lon,value` (sphere) or `angle,value`
/// (circle), one record per line.
pub fn load_points(path: &Path) -> Result<Vec<(Location, f64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> =
        reader.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let sphere_layout = match header.as_slice() {
        [a, b, c] if a == "lat" && b == "lon" && c == "value" => true,
        [a, b] if a == "angle" && b == "value" => false,
        _ => {
            return Err(Error::Grid(format!(
                "points header must be lat,lon,value or angle,value, got {header:?}"
            )))
        }
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let loc = if sphere_layout {
            Location::lat_lon(
                parse_cell(&record[0], "lat")?,
                parse_cell(&record[1], "lon")?,
            )?
        } else {
            Location::angle(parse_cell(&record[0], "angle")?)?
        };
        let value = parse_cell(&record[record.len() - 1], "value")?;
        out.push((loc, value));
    }
    Ok(out)
}

/// Writes a points CSV in the layout matching the locations; mixing circle
/// and sphere points is rejected.
pub fn save_points(path: &Path, data: &[(Location, f64)]) -> Result<()> {
    let sphere_layout = match data.first() {
        Some((Location::LatLon { .. }, _)) => true,
        Some((Location::Angle(_), _)) => false,
        None => return Err(Error::EmptyLocations),
    };
    let mut writer = csv::Writer::from_path(path)?;
    if sphere_layout {
        writer.write_record(["lat", "lon", "value"])?;
    } else {
        writer.write_record(["angle", "value"])?;
    }
    for (loc, value) in data {
        match loc {
            Location::LatLon { lat, lon } if sphere_layout => {
                writer.write_record(&[format!("{lat}"), format!("{lon}"), format!("{value}")])?;
            }
            Location::Angle(a) if !sphere_layout => {
                writer.write_record(&[format!("{a}"), format!("{value}")])?;
            }
            _ => {
                return Err(Error::Grid(
                    "points file cannot mix circle and sphere locations".to_string(),
                ))
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn parse_cell(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Grid(format!("cannot parse {what} cell {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Grid(format!("{what} cell {s:?} is not finite")));
    }
    Ok(v)
}
