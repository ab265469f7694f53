//! Parameter sweeps over BS type, band, user count and EIRP.
//!
//! A grid file is a TOML document:
//!
//! ```toml
//! seed = 1
//! drops = 200
//! min_radius_m = 35.0
//! distance_km = 12.5          # fallback evaluation radius
//! coverage_target_mbps = 10   # optional: DL coverage search per family
//! coverage_percentile = 5
//! bs_type = ["legacy", "htbs"]
//! num_users = [20, 50, 100]
//! eirp_dbm = [40, 33, 30, 23]
//!
//! [[band]]
//! carrier_frequency_mhz = 700
//! bandwidth_mhz = 10
//! duplex = "fdd"
//!
//! [base]                      # scenario keys applied to every cell
//! noise_figure_db = 7
//!
//! [[distance]]                # evaluation radius for one family
//! bs_type = "htbs"
//! num_users = 100
//! carrier_frequency_mhz = 700
//! km = 12.5
//! ```
//!
//! Omitted lists default to the reference values. A *family* is one
//! `(bs_type, band, num_users)` combination; all EIRP cells of a family share
//! the evaluation radius and the drop seeds, so rates along a row are
//! directly comparable.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::{coverage_search, format_sig3, ul_rate_experiment, CoverageSearch, DropEnsemble, Link, McError};
use crate::scenario::{self, validate, Band, BsType, ConfigError, ConfigErrors, Duplex};
use crate::seeding::{derive, Stream};

pub const SWEEP_CSV_HEADER: &str = "bs_type,K,fc_mhz,W_mhz,duplex,eirp_dbm,d_eval_km,rate_p5_mbps,rate_p50_mbps,rate_p95_mbps,rate_mean_mbps,dcov_km,warnings";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBand {
    pub carrier_frequency_mhz: f64,
    pub bandwidth_mhz: f64,
    pub duplex: Duplex,
}

impl From<Band> for SweepBand {
    fn from(b: Band) -> Self {
        Self {
            carrier_frequency_mhz: b.carrier_mhz(),
            bandwidth_mhz: b.bandwidth_mhz(),
            duplex: b.duplex(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceOverride {
    pub bs_type: BsType,
    pub num_users: usize,
    pub carrier_frequency_mhz: f64,
    pub km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub seed: u64,
    pub drops: usize,
    pub min_radius_m: f64,
    pub distance_km: Option<f64>,
    pub coverage_target_mbps: Option<f64>,
    pub coverage_percentile: f64,
    pub bs_types: Vec<BsType>,
    pub num_users: Vec<usize>,
    pub bands: Vec<SweepBand>,
    pub eirp_dbm: Vec<f64>,
    pub base: Table,
    pub distances: Vec<DistanceOverride>,
}

impl SweepGrid {
    /// The full reference grid: 2 types x 3 bands x 3 user counts x 4 EIRPs.
    pub fn reference(seed: u64, drops: usize) -> Self {
        Self {
            seed,
            drops,
            min_radius_m: super::DEFAULT_MIN_RADIUS_M,
            distance_km: None,
            coverage_target_mbps: None,
            coverage_percentile: super::DEFAULT_PERCENTILE,
            bs_types: vec![BsType::Legacy, BsType::Htbs],
            num_users: vec![20, 50, 100],
            bands: Band::ALL.iter().map(|&b| b.into()).collect(),
            eirp_dbm: vec![40.0, 33.0, 30.0, 23.0],
            base: Table::new(),
            distances: Vec::new(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.bs_types.len() * self.bands.len() * self.num_users.len() * self.eirp_dbm.len()
    }

    fn families(&self) -> Vec<(BsType, SweepBand, usize)> {
        let mut out = Vec::new();
        for &t in &self.bs_types {
            for &b in &self.bands {
                for &k in &self.num_users {
                    out.push((t, b, k));
                }
            }
        }
        out
    }

    fn cell_document(&self, bs_type: BsType, band: SweepBand, k: usize, eirp: f64) -> Table {
        let mut doc = scenario::reference_document(bs_type, k, Band::Fc700);
        doc.insert("carrier_frequency_mhz".into(), Value::Float(band.carrier_frequency_mhz));
        doc.insert("bandwidth_mhz".into(), Value::Float(band.bandwidth_mhz));
        doc.insert("duplex".into(), Value::String(band.duplex.to_string()));
        for (key, v) in &self.base {
            doc.insert(key.clone(), v.clone());
        }
        doc.insert("eirp_max_dbm".into(), Value::Float(eirp));
        doc
    }

    fn explicit_distance_km(&self, bs_type: BsType, band: SweepBand, k: usize) -> Option<f64> {
        self.distances
            .iter()
            .find(|d| d.bs_type == bs_type && d.num_users == k && d.carrier_frequency_mhz == band.carrier_frequency_mhz)
            .map(|d| d.km)
    }
}

fn grid_error(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::RangeViolation {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Parses a grid file; see the module docs for the format.
pub fn parse_grid(text: &str) -> Result<SweepGrid, ConfigErrors> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![grid_error("<document>", e.message())]))?;
    let mut grid = SweepGrid::reference(0, super::DEFAULT_NUM_DROPS);
    let mut errors = Vec::new();

    for (key, value) in &doc {
        match key.as_str() {
            "seed" => match value.as_integer() {
                Some(s) if s >= 0 => grid.seed = s as u64,
                _ => errors.push(grid_error(key, "expected a non-negative integer")),
            },
            "drops" => match value.as_integer() {
                Some(n) if n >= 1 => grid.drops = n as usize,
                _ => errors.push(grid_error(key, "expected a positive integer")),
            },
            "min_radius_m" => match as_f64(value) {
                Some(x) if x >= 10.0 => grid.min_radius_m = x,
                _ => errors.push(grid_error(key, "expected a number >= 10")),
            },
            "distance_km" => match as_f64(value) {
                Some(x) if x > 0.0 => grid.distance_km = Some(x),
                _ => errors.push(grid_error(key, "expected a positive number")),
            },
            "coverage_target_mbps" => match as_f64(value) {
                Some(x) if x > 0.0 => grid.coverage_target_mbps = Some(x),
                _ => errors.push(grid_error(key, "expected a positive number")),
            },
            "coverage_percentile" => match as_f64(value) {
                Some(x) if (0.0..=100.0).contains(&x) => grid.coverage_percentile = x,
                _ => errors.push(grid_error(key, "expected a number in [0, 100]")),
            },
            "bs_type" => match value.as_array().map(|a| a.iter().map(|v| v.as_str().map(str::parse)).collect::<Option<Result<Vec<BsType>, _>>>()) {
                Some(Some(Ok(v))) if !v.is_empty() => grid.bs_types = v,
                _ => errors.push(grid_error(key, "expected a non-empty list of \"legacy\"/\"htbs\"")),
            },
            "num_users" => match value.as_array().map(|a| a.iter().map(|v| v.as_integer().filter(|k| *k >= 1).map(|k| k as usize)).collect::<Option<Vec<_>>>()) {
                Some(Some(v)) if !v.is_empty() => grid.num_users = v,
                _ => errors.push(grid_error(key, "expected a non-empty list of positive integers")),
            },
            "eirp_dbm" => match value.as_array().map(|a| a.iter().map(as_f64).collect::<Option<Vec<_>>>()) {
                Some(Some(v)) if !v.is_empty() => grid.eirp_dbm = v,
                _ => errors.push(grid_error(key, "expected a non-empty list of numbers")),
            },
            "band" => match value.as_array() {
                Some(items) if !items.is_empty() => {
                    let mut bands = Vec::new();
                    for item in items {
                        let t = item.as_table();
                        let fc = t.and_then(|t| t.get("carrier_frequency_mhz")).and_then(as_f64);
                        let w = t.and_then(|t| t.get("bandwidth_mhz")).and_then(as_f64);
                        let dx = t
                            .and_then(|t| t.get("duplex"))
                            .and_then(Value::as_str)
                            .and_then(|s| s.parse::<Duplex>().ok());
                        match (fc, w, dx) {
                            (Some(fc), Some(w), Some(duplex)) => bands.push(SweepBand {
                                carrier_frequency_mhz: fc,
                                bandwidth_mhz: w,
                                duplex,
                            }),
                            _ => errors.push(grid_error(
                                "band",
                                "each band needs carrier_frequency_mhz, bandwidth_mhz and duplex",
                            )),
                        }
                    }
                    grid.bands = bands;
                }
                _ => errors.push(grid_error(key, "expected a non-empty array of tables")),
            },
            "base" => match value.as_table() {
                Some(t) => {
                    for k in t.keys() {
                        if !scenario::KEYS.contains(&k.as_str()) || k == "eirp_max_dbm" {
                            errors.push(ConfigError::UnknownKey(format!("base.{k}")));
                        }
                    }
                    grid.base = t.clone();
                }
                None => errors.push(grid_error(key, "expected a table of scenario keys")),
            },
            "distance" => match value.as_array() {
                Some(items) => {
                    for item in items {
                        match item.clone().try_into::<DistanceOverride>() {
                            Ok(d) if d.km > 0.0 => grid.distances.push(d),
                            _ => errors.push(grid_error(
                                "distance",
                                "each entry needs bs_type, num_users, carrier_frequency_mhz and km > 0",
                            )),
                        }
                    }
                }
                None => errors.push(grid_error(key, "expected an array of tables")),
            },
            other => errors.push(ConfigError::UnknownKey(other.to_string())),
        }
    }
    if errors.is_empty() {
        Ok(grid)
    } else {
        Err(ConfigErrors(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bs_type: BsType,
    pub num_users: usize,
    pub fc_mhz: f64,
    pub w_mhz: f64,
    pub duplex: Duplex,
    pub eirp_dbm: f64,
    pub d_eval_km: Option<f64>,
    pub rate_p5_mbps: Option<f64>,
    pub rate_p50_mbps: Option<f64>,
    pub rate_p95_mbps: Option<f64>,
    pub rate_mean_mbps: Option<f64>,
    pub dcov_km: Option<f64>,
    pub warnings: Vec<String>,
}

fn family_radius(
    grid: &SweepGrid,
    bs_type: BsType,
    band: SweepBand,
    k: usize,
    seed: u64,
) -> Result<(f64, Option<f64>, Vec<String>), String> {
    if let Some(km) = grid.explicit_distance_km(bs_type, band, k) {
        return Ok((km, None, Vec::new()));
    }
    if let Some(target) = grid.coverage_target_mbps {
        let eirp = grid.eirp_dbm[0];
        let s = validate(&grid.cell_document(bs_type, band, k, eirp)).map_err(|e| e.to_string())?;
        let mut ens = DropEnsemble::new(grid.drops, 1.0, seed);
        ens.min_radius_m = grid.min_radius_m;
        let search = CoverageSearch::default();
        return match coverage_search(&s, &ens, target * 1e6, grid.coverage_percentile, Link::Dl, &search) {
            Ok(r) => Ok((r.d_cov_m / 1e3, Some(r.d_cov_m / 1e3), r.warnings)),
            Err(McError::NoUpperBracket(r)) => {
                let mut w = r.warnings.clone();
                w.push("coverage saturated at maximum search radius".into());
                Ok((r.d_cov_m / 1e3, Some(r.d_cov_m / 1e3), w))
            }
            Err(e) => Err(format!("coverage search failed: {e}")),
        };
    }
    grid.distance_km
        .map(|km| (km, None, Vec::new()))
        .ok_or_else(|| "no evaluation distance configured".to_string())
}

fn run_family(grid: &SweepGrid, index: usize, bs_type: BsType, band: SweepBand, k: usize) -> Vec<SweepRow> {
    let seed = derive(grid.seed, Stream::Family, index as u64);
    let blank = |eirp: f64| SweepRow {
        bs_type,
        num_users: k,
        fc_mhz: band.carrier_frequency_mhz,
        w_mhz: band.bandwidth_mhz,
        duplex: band.duplex,
        eirp_dbm: eirp,
        d_eval_km: None,
        rate_p5_mbps: None,
        rate_p50_mbps: None,
        rate_p95_mbps: None,
        rate_mean_mbps: None,
        dcov_km: None,
        warnings: Vec::new(),
    };
    let (d_km, dcov_km, family_warnings) = match family_radius(grid, bs_type, band, k, seed) {
        Ok(r) => r,
        Err(e) => {
            return grid
                .eirp_dbm
                .iter()
                .map(|&eirp| SweepRow {
                    warnings: vec![format!("error: {e}")],
                    ..blank(eirp)
                })
                .collect()
        }
    };
    grid.eirp_dbm
        .par_iter()
        .map(|&eirp| {
            let mut row = SweepRow {
                d_eval_km: Some(d_km),
                dcov_km,
                warnings: family_warnings.clone(),
                ..blank(eirp)
            };
            let outcome = validate(&grid.cell_document(bs_type, band, k, eirp))
                .map_err(McError::from)
                .and_then(|s| {
                    let mut ens = DropEnsemble::new(grid.drops, d_km * 1e3, seed);
                    ens.min_radius_m = grid.min_radius_m;
                    ul_rate_experiment(&s, &ens)
                });
            match outcome {
                Ok(summary) => {
                    row.rate_p5_mbps = Some(summary.p5_bps / 1e6);
                    row.rate_p50_mbps = Some(summary.p50_bps / 1e6);
                    row.rate_p95_mbps = Some(summary.p95_bps / 1e6);
                    row.rate_mean_mbps = Some(summary.mean_bps / 1e6);
                    for w in summary.warnings {
                        if !row.warnings.contains(&w) {
                            row.warnings.push(w);
                        }
                    }
                }
                Err(e) => row.warnings.push(format!("error: {e}")),
            }
            row
        })
        .collect()
}

/// Runs every cell of the grid. Cell failures are recorded in the row's
/// warnings and the sweep continues. Rows come back in grid order.
pub fn run_sweep(grid: &SweepGrid) -> Vec<SweepRow> {
    grid.families()
        .into_par_iter()
        .enumerate()
        .flat_map_iter(|(i, (t, b, k))| run_family(grid, i, t, b, k))
        .collect()
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let warnings = r.warnings.join(";").replace([',', '\n', '\r'], " ");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.bs_type,
            r.num_users,
            r.fc_mhz,
            r.w_mhz,
            r.duplex,
            r.eirp_dbm,
            opt(r.d_eval_km, |x| format!("{x:.3}")),
            opt(r.rate_p5_mbps, format_sig3),
            opt(r.rate_p50_mbps, format_sig3),
            opt(r.rate_p95_mbps, format_sig3),
            opt(r.rate_mean_mbps, format_sig3),
            opt(r.dcov_km, |x| format!("{x:.3}")),
            warnings
        )?;
    }
    Ok(())
}
