//! Population-density rasters and candidate-site evaluation.
//!
//! Raster files are plain text. The first non-comment line is
//! `lon_min lon_max lat_min lat_max cell_size_deg`; each following line is one
//! row of densities in persons/km^2, north to south, west to east. `NA` marks
//! a missing cell, counted and treated as zero. Lines starting with `#` are
//! ignored.
//!
//! Distances use a local equirectangular projection (111.32 km per degree of
//! latitude, longitude scaled by the cosine of latitude), which is accurate
//! well below 1% over extents of a degree or two away from the poles.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KM_PER_DEG_LAT: f64 = 111.32;
/// Sub-samples per axis for cells cut by a region boundary.
const SUBSAMPLES: usize = 4;
pub const SITES_CSV_HEADER: &str = "rank,lon,lat,mean_density,covered_persons,radius_km";

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("disk at ({lon}, {lat}) with radius {radius_km} km lies outside the raster")]
    OutOfBounds { lon: f64, lat: f64, radius_km: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRaster {
    pub bounds: Bounds,
    pub cell_size_deg: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, north to south. Missing cells hold 0.
    pub densities: Vec<f64>,
    pub missing_cells: usize,
}

fn grid_count(span: f64, cell: f64, axis: &str) -> Result<usize, GeoError> {
    let n = span / cell;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-6 * r.max(1.0) {
        return Err(GeoError::InconsistentDimensions(format!(
            "{axis} extent {span} is not a whole number of {cell}-degree cells"
        )));
    }
    Ok(r as usize)
}

impl PopulationRaster {
    pub fn new(bounds: Bounds, cell_size_deg: f64, densities: Vec<f64>) -> Result<Self, GeoError> {
        if !(cell_size_deg > 0.0) || !(bounds.lon_max > bounds.lon_min) || !(bounds.lat_max > bounds.lat_min) {
            return Err(GeoError::InvalidArgument("bounds must be increasing and cell size positive".into()));
        }
        let cols = grid_count(bounds.lon_max - bounds.lon_min, cell_size_deg, "longitude")?;
        let rows = grid_count(bounds.lat_max - bounds.lat_min, cell_size_deg, "latitude")?;
        if densities.len() != rows * cols {
            return Err(GeoError::InconsistentDimensions(format!(
                "expected {rows} x {cols} cells, got {}",
                densities.len()
            )));
        }
        if densities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(GeoError::InvalidArgument("densities must be finite and non-negative".into()));
        }
        Ok(Self {
            bounds,
            cell_size_deg,
            rows,
            cols,
            densities,
            missing_cells: 0,
        })
    }

    /// Fills a raster from a density function of `(lon, lat)` at cell centres.
    pub fn from_fn(bounds: Bounds, cell_size_deg: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self, GeoError> {
        let cols = grid_count(bounds.lon_max - bounds.lon_min, cell_size_deg, "longitude")?;
        let rows = grid_count(bounds.lat_max - bounds.lat_min, cell_size_deg, "latitude")?;
        let mut d = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let lat = bounds.lat_max - (i as f64 + 0.5) * cell_size_deg;
                let lon = bounds.lon_min + (j as f64 + 0.5) * cell_size_deg;
                d.push(f(lon, lat));
            }
        }
        Self::new(bounds, cell_size_deg, d)
    }

    pub fn density(&self, row: usize, col: usize) -> f64 {
        self.densities[row * self.cols + col]
    }

    /// `(lon, lat)` of a cell's south-west corner.
    fn cell_origin(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.bounds.lon_min + col as f64 * self.cell_size_deg,
            self.bounds.lat_max - (row + 1) as f64 * self.cell_size_deg,
        )
    }

    pub fn cell_area_km2(&self, row: usize) -> f64 {
        let lat = self.bounds.lat_max - (row as f64 + 0.5) * self.cell_size_deg;
        let side = self.cell_size_deg * KM_PER_DEG_LAT;
        side * side * lat.to_radians().cos()
    }

    pub fn total_population(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.cell_area_km2(i) * self.densities[i * self.cols..(i + 1) * self.cols].iter().sum::<f64>())
            .sum()
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        let b = &self.bounds;
        writeln!(w, "{} {} {} {} {}", b.lon_min, b.lon_max, b.lat_min, b.lat_max, self.cell_size_deg)?;
        for row in self.densities.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn parse_raster(text: &str) -> Result<PopulationRaster, GeoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(GeoError::ParseError {
        line: 1,
        reason: "missing header".into(),
    })?;
    let h: Vec<f64> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| GeoError::ParseError {
            line: hline,
            reason: "header must be `lon_min lon_max lat_min lat_max cell_size_deg`".into(),
        })?;
    if h.len() != 5 {
        return Err(GeoError::ParseError {
            line: hline,
            reason: format!("header has {} fields, expected 5", h.len()),
        });
    }
    let bounds = Bounds {
        lon_min: h[0],
        lon_max: h[1],
        lat_min: h[2],
        lat_max: h[3],
    };
    if !(h[4] > 0.0) || !(bounds.lon_max > bounds.lon_min) || !(bounds.lat_max > bounds.lat_min) {
        return Err(GeoError::ParseError {
            line: hline,
            reason: "bounds must be increasing and cell size positive".into(),
        });
    }
    let cols = grid_count(bounds.lon_max - bounds.lon_min, h[4], "longitude")?;
    let rows = grid_count(bounds.lat_max - bounds.lat_min, h[4], "latitude")?;

    let mut densities = Vec::with_capacity(rows * cols);
    let mut missing = 0;
    let mut seen_rows = 0;
    for (no, line) in lines {
        seen_rows += 1;
        let before = densities.len();
        for tok in line.split_whitespace() {
            if tok.eq_ignore_ascii_case("na") {
                missing += 1;
                densities.push(0.0);
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| GeoError::ParseError {
                line: no,
                reason: format!("bad density {tok:?}"),
            })?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(GeoError::ParseError {
                    line: no,
                    reason: format!("density {v} must be finite and non-negative"),
                });
            }
            densities.push(v);
        }
        let n = densities.len() - before;
        if n != cols {
            return Err(GeoError::InconsistentDimensions(format!(
                "line {no} has {n} values, header implies {cols}"
            )));
        }
    }
    if seen_rows != rows {
        return Err(GeoError::InconsistentDimensions(format!(
            "found {seen_rows} rows, header implies {rows}"
        )));
    }
    let mut r = PopulationRaster::new(bounds, h[4], densities)?;
    r.missing_cells = missing;
    Ok(r)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<PopulationRaster, GeoError> {
    parse_raster(&std::fs::read_to_string(path)?)
}

/// An area over which population is integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Disk { lon: f64, lat: f64, radius_km: f64 },
    /// Longitude/latitude box.
    Rect(Bounds),
}

impl Region {
    fn bounding_box(&self) -> Bounds {
        match *self {
            Region::Rect(b) => b,
            Region::Disk { lon, lat, radius_km } => {
                let dlat = radius_km / KM_PER_DEG_LAT;
                let dlon = radius_km / (KM_PER_DEG_LAT * lat.to_radians().cos());
                Bounds {
                    lon_min: lon - dlon,
                    lon_max: lon + dlon,
                    lat_min: lat - dlat,
                    lat_max: lat + dlat,
                }
            }
        }
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        match *self {
            Region::Rect(b) => lon >= b.lon_min && lon < b.lon_max && lat >= b.lat_min && lat < b.lat_max,
            Region::Disk {
                lon: lon0,
                lat: lat0,
                radius_km,
            } => {
                let (x, y) = project(lon0, lat0, lon, lat);
                x * x + y * y <= radius_km * radius_km
            }
        }
    }

    /// Covered fraction of the cell with south-west corner `(lon, lat)`.
    fn cell_fraction(&self, lon: f64, lat: f64, size: f64) -> f64 {
        let corners = [(lon, lat), (lon + size, lat), (lon, lat + size), (lon + size, lat + size)];
        match *self {
            Region::Rect(b) => {
                if lon >= b.lon_min && lon + size <= b.lon_max && lat >= b.lat_min && lat + size <= b.lat_max {
                    return 1.0;
                }
            }
            Region::Disk {
                lon: lon0,
                lat: lat0,
                radius_km,
            } => {
                let (x0, y0) = project(lon0, lat0, lon, lat);
                let (x1, y1) = project(lon0, lat0, lon + size, lat + size);
                let far = corners
                    .iter()
                    .map(|&(a, b)| {
                        let (x, y) = project(lon0, lat0, a, b);
                        x * x + y * y
                    })
                    .fold(0.0, f64::max);
                let nx = 0f64.clamp(x0, x1);
                let ny = 0f64.clamp(y0, y1);
                let r2 = radius_km * radius_km;
                if far <= r2 {
                    return 1.0;
                }
                if nx * nx + ny * ny >= r2 {
                    return 0.0;
                }
            }
        }
        let step = size / SUBSAMPLES as f64;
        let mut hits = 0;
        for a in 0..SUBSAMPLES {
            for b in 0..SUBSAMPLES {
                if self.contains(lon + (a as f64 + 0.5) * step, lat + (b as f64 + 0.5) * step) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64
    }
}

/// Local east/north offsets [km] of `(lon, lat)` from `(lon0, lat0)`.
fn project(lon0: f64, lat0: f64, lon: f64, lat: f64) -> (f64, f64) {
    (
        (lon - lon0) * KM_PER_DEG_LAT * lat0.to_radians().cos(),
        (lat - lat0) * KM_PER_DEG_LAT,
    )
}

/// Population and raster area inside a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub persons: f64,
    pub area_km2: f64,
}

pub fn integrate(raster: &PopulationRaster, region: &Region) -> Integral {
    let bb = region.bounding_box();
    let c = raster.cell_size_deg;
    let b = &raster.bounds;
    let col_lo = (((bb.lon_min - b.lon_min) / c).floor().max(0.0) as usize).min(raster.cols);
    let col_hi = (((bb.lon_max - b.lon_min) / c).ceil().max(0.0) as usize).min(raster.cols);
    let row_lo = (((b.lat_max - bb.lat_max) / c).floor().max(0.0) as usize).min(raster.rows);
    let row_hi = (((b.lat_max - bb.lat_min) / c).ceil().max(0.0) as usize).min(raster.rows);

    let mut persons = 0.0;
    let mut area = 0.0;
    for i in row_lo..row_hi {
        let cell_area = raster.cell_area_km2(i);
        for j in col_lo..col_hi {
            let (lon, lat) = raster.cell_origin(i, j);
            let f = region.cell_fraction(lon, lat, c);
            if f > 0.0 {
                area += f * cell_area;
                persons += f * cell_area * raster.density(i, j);
            }
        }
    }
    Integral { persons, area_km2: area }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEvaluation {
    pub lon: f64,
    pub lat: f64,
    pub radius_km: f64,
    pub covered_persons: f64,
    /// Persons per km^2 over the part of the disk inside the raster.
    pub mean_density: f64,
    /// Disk area inside the raster [km^2].
    pub coverage_area_km2: f64,
    /// The disk extends beyond the raster.
    pub partial: bool,
}

/// Shortest distance [km] from a point to the raster edges, negative outside.
fn edge_clearance(raster: &PopulationRaster, lon: f64, lat: f64) -> f64 {
    let b = &raster.bounds;
    let kx = KM_PER_DEG_LAT * lat.to_radians().cos();
    [
        (lon - b.lon_min) * kx,
        (b.lon_max - lon) * kx,
        (lat - b.lat_min) * KM_PER_DEG_LAT,
        (b.lat_max - lat) * KM_PER_DEG_LAT,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

pub fn evaluate_site(raster: &PopulationRaster, lon: f64, lat: f64, radius_km: f64) -> Result<SiteEvaluation, GeoError> {
    if !(radius_km > 0.0 && radius_km.is_finite()) {
        return Err(GeoError::InvalidArgument("radius must be positive".into()));
    }
    let Integral { persons, area_km2 } = integrate(raster, &Region::Disk { lon, lat, radius_km });
    if area_km2 <= 0.0 {
        return Err(GeoError::OutOfBounds { lon, lat, radius_km });
    }
    Ok(SiteEvaluation {
        lon,
        lat,
        radius_km,
        covered_persons: persons,
        mean_density: persons / area_km2,
        coverage_area_km2: area_km2,
        partial: edge_clearance(raster, lon, lat) < radius_km,
    })
}

fn separation_km(a: &SiteEvaluation, b: &SiteEvaluation) -> f64 {
    let lat0 = 0.5 * (a.lat + b.lat);
    let (x, y) = project(a.lon, lat0, b.lon, b.lat);
    let (_, y0) = project(a.lon, lat0, a.lon, a.lat);
    x.hypot(y - y0)
}

/// Candidate centres on a `radius / 2` lattice, ranked by how close their mean
/// density is to `target_rho` (ties broken by latitude, then longitude), then
/// greedily thinned so reported sites are at least `radius_km` apart.
pub fn find_sites(raster: &PopulationRaster, target_rho: f64, radius_km: f64, top_n: usize) -> Result<Vec<SiteEvaluation>, GeoError> {
    if !(target_rho >= 0.0) || !(radius_km > 0.0 && radius_km.is_finite()) {
        return Err(GeoError::InvalidArgument("target density must be >= 0 and radius positive".into()));
    }
    let b = raster.bounds;
    let mid_lat = 0.5 * (b.lat_min + b.lat_max);
    let dlat = 0.5 * radius_km / KM_PER_DEG_LAT;
    let dlon = 0.5 * radius_km / (KM_PER_DEG_LAT * mid_lat.to_radians().cos());
    let n_lat = ((b.lat_max - b.lat_min) / dlat).ceil().max(1.0) as usize;
    let n_lon = ((b.lon_max - b.lon_min) / dlon).ceil().max(1.0) as usize;
    let centers: Vec<(f64, f64)> = (0..n_lat)
        .flat_map(|i| {
            (0..n_lon).map(move |j| {
                (
                    (b.lon_min + (j as f64 + 0.5) * dlon).min(b.lon_max),
                    (b.lat_min + (i as f64 + 0.5) * dlat).min(b.lat_max),
                )
            })
        })
        .collect();

    let mut evals: Vec<SiteEvaluation> = centers
        .par_iter()
        .filter_map(|&(lon, lat)| evaluate_site(raster, lon, lat, radius_km).ok())
        .collect();
    evals.sort_by(|x, y| {
        (x.mean_density - target_rho)
            .abs()
            .total_cmp(&(y.mean_density - target_rho).abs())
            .then(x.lat.total_cmp(&y.lat))
            .then(x.lon.total_cmp(&y.lon))
    });

    let mut chosen: Vec<SiteEvaluation> = Vec::new();
    for e in evals {
        if chosen.len() >= top_n {
            break;
        }
        if chosen.iter().all(|c| separation_km(c, &e) >= radius_km) {
            chosen.push(e);
        }
    }
    Ok(chosen)
}

pub fn write_sites_csv<W: Write>(sites: &[SiteEvaluation], mut w: W) -> io::Result<()> {
    writeln!(w, "{SITES_CSV_HEADER}")?;
    for (i, s) in sites.iter().enumerate() {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.4},{:.1},{}",
            i + 1,
            s.lon,
            s.lat,
            s.mean_density,
            s.covered_persons,
            s.radius_km
        )?;
    }
    Ok(())
}

/// Disk area `pi r^2` [km^2].
pub fn disk_area_km2(radius_km: f64) -> f64 {
    PI * radius_km * radius_km
}
