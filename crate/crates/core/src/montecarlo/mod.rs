//! Experiment engine: random user drops, pooled percentile statistics,
//! coverage-distance search and parameter sweeps.
//!
//! Drop `i` of an ensemble always draws its positions and its channel from
//! streams derived from `(master_seed, i)`. Changing the disk radius moves
//! the same users radially and reuses the same fading, which makes the
//! percentile-versus-radius curve smooth enough for plain bisection.

mod coverage;
mod sweep;

pub use coverage::{coverage_search, search_radius, Bracket, CoverageResult, CoverageSearch};
pub use sweep::{parse_grid, run_sweep, write_sweep_csv, DistanceOverride, SweepBand, SweepGrid, SweepRow, SWEEP_CSV_HEADER};

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelGenerator, ChannelModel, UserDrop, UserPosition};
use crate::downlink::{self, DownlinkError};
use crate::scenario::{ConfigErrors, Scenario};
use crate::seeding::{stream_rng, Stream};
use crate::uplink::{self, UplinkError};

pub const DEFAULT_MIN_RADIUS_M: f64 = 35.0;
pub const DEFAULT_NUM_DROPS: usize = 200;
pub const DEFAULT_PERCENTILE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("percentile of an empty rate pool")]
    EmptyPool,
    #[error("invalid drop ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("target {target_bps} bps unreachable: percentile rate is {rate_bps} bps at the minimum radius {radius_m} m")]
    TargetUnreachable { radius_m: f64, rate_bps: f64, target_bps: f64 },
    #[error("no upper bracket: percentile rate still meets the target at the maximum radius {} m", .0.d_cov_m)]
    NoUpperBracket(Box<CoverageResult>),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Uplink(#[from] UplinkError),
    #[error(transparent)]
    Downlink(#[from] DownlinkError),
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigErrors),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Ul,
    Dl,
}

impl std::str::FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ul" => Ok(Link::Ul),
            "dl" => Ok(Link::Dl),
            other => Err(format!("expected \"ul\" or \"dl\", got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEnsemble {
    pub num_drops: usize,
    pub disk_radius_m: f64,
    pub min_radius_m: f64,
    pub master_seed: u64,
}

impl DropEnsemble {
    pub fn new(num_drops: usize, disk_radius_m: f64, master_seed: u64) -> Self {
        Self {
            num_drops,
            disk_radius_m,
            min_radius_m: DEFAULT_MIN_RADIUS_M,
            master_seed,
        }
    }

    pub fn with_radius(&self, disk_radius_m: f64) -> Self {
        Self {
            disk_radius_m,
            ..self.clone()
        }
    }

    pub fn check(&self) -> Result<(), McError> {
        if self.num_drops == 0 {
            return Err(McError::InvalidEnsemble("at least one drop is required".into()));
        }
        if !(self.disk_radius_m > self.min_radius_m) {
            return Err(McError::InvalidEnsemble(format!(
                "disk radius {} m must exceed the minimum radius {} m",
                self.disk_radius_m, self.min_radius_m
            )));
        }
        Ok(())
    }
}

/// Draws `num_users` positions uniformly over the annulus
/// `min_radius <= r <= disk_radius` (area-uniform, azimuth uniform).
pub fn drop<R: Rng + ?Sized>(rng: &mut R, ensemble: &DropEnsemble, num_users: usize, user_height_m: f64) -> UserDrop {
    let r2_max = ensemble.disk_radius_m.powi(2);
    let r2_min = ensemble.min_radius_m.powi(2);
    let positions = (0..num_users)
        .map(|_| {
            let u: f64 = rng.random();
            let azimuth_rad = rng.random_range(-PI..PI);
            UserPosition {
                distance_2d_m: (u * (r2_max - r2_min) + r2_min).sqrt(),
                azimuth_rad,
            }
        })
        .collect();
    UserDrop {
        positions,
        user_height_m,
    }
}

/// Nearest-rank percentile: the value of rank `ceil(q/100 * n)` (at least 1)
/// in ascending order.
pub fn percentile_rate(rates: &[f64], percentile: f64) -> Result<f64, McError> {
    if rates.is_empty() {
        return Err(McError::EmptyPool);
    }
    let n = rates.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut scratch = rates.to_vec();
    let (_, value, _) = scratch.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub p5_bps: f64,
    pub p50_bps: f64,
    pub p95_bps: f64,
    pub mean_bps: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

/// Per-user rates pooled over every drop, in drop order.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePool {
    pub rates_bps: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RatePool {
    pub fn summarize(&self) -> Result<ExperimentSummary, McError> {
        let mean = self.rates_bps.iter().sum::<f64>() / self.rates_bps.len().max(1) as f64;
        Ok(ExperimentSummary {
            p5_bps: percentile_rate(&self.rates_bps, 5.0)?,
            p50_bps: percentile_rate(&self.rates_bps, 50.0)?,
            p95_bps: percentile_rate(&self.rates_bps, 95.0)?,
            mean_bps: mean,
            samples: self.rates_bps.len(),
            warnings: self.warnings.clone(),
        })
    }
}

/// Runs every drop of the ensemble for one link direction.
pub fn rate_pool(scenario: &Scenario, ensemble: &DropEnsemble, link: Link) -> Result<RatePool, McError> {
    rate_pool_with(scenario, ensemble, link, &ChannelModel::default())
}

pub fn rate_pool_with(
    scenario: &Scenario,
    ensemble: &DropEnsemble,
    link: Link,
    model: &ChannelModel,
) -> Result<RatePool, McError> {
    ensemble.check()?;
    let generator = ChannelGenerator::new(scenario, model.clone());
    let per_drop: Vec<(Vec<f64>, Vec<String>)> = (0..ensemble.num_drops)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let mut drop_rng = stream_rng(ensemble.master_seed, Stream::Drop, i);
            let users = drop(&mut drop_rng, ensemble, scenario.num_users, scenario.user_height_m);
            let mut channel_rng = stream_rng(ensemble.master_seed, Stream::Channel, i);
            let channel = generator.generate(&mut channel_rng, &users)?;
            let report = match link {
                Link::Ul => uplink::evaluate(&channel.h, &channel.large_scale.beta, scenario)?,
                Link::Dl => downlink::evaluate(&channel.h, scenario)?,
            };
            Ok((report.rate_bps, channel.warnings))
        })
        .collect::<Result<_, McError>>()?;

    let mut rates_bps = Vec::with_capacity(ensemble.num_drops * scenario.num_users);
    let mut warnings = BTreeSet::new();
    for (rates, w) in per_drop {
        rates_bps.extend(rates);
        warnings.extend(w);
    }
    Ok(RatePool {
        rates_bps,
        warnings: warnings.into_iter().collect(),
    })
}

/// Pooled uplink rate statistics over the ensemble's disk.
pub fn ul_rate_experiment(scenario: &Scenario, ensemble: &DropEnsemble) -> Result<ExperimentSummary, McError> {
    rate_pool(scenario, ensemble, Link::Ul)?.summarize()
}

pub fn dl_rate_experiment(scenario: &Scenario, ensemble: &DropEnsemble) -> Result<ExperimentSummary, McError> {
    rate_pool(scenario, ensemble, Link::Dl)?.summarize()
}

/// Formats `x` with three significant digits.
pub fn format_sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let scale = 10f64.powi(x.abs().log10().floor() as i32 - 2);
    let rounded = (x / scale).round() * scale;
    let decimals = (2 - rounded.abs().log10().floor() as i32).max(0) as usize;
    format!("{rounded:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Band, BsType};
    use crate::seeding::rng_from_seed;

    #[test]
    fn area_uniform_second_moment() {
        let ens = DropEnsemble::new(1, 1_000.0, 0);
        let mut rng = rng_from_seed(12);
        let d = drop(&mut rng, &ens, 100_000, 8.0);
        let mean_r2 = d.positions.iter().map(|p| p.distance_2d_m.powi(2)).sum::<f64>() / 1e5;
        let expected = (1_000.0f64.powi(2) + 35.0f64.powi(2)) / 2.0;
        assert!((mean_r2 / expected - 1.0).abs() < 0.01);
        assert!(d
            .positions
            .iter()
            .all(|p| p.distance_2d_m >= 35.0 && p.distance_2d_m <= 1_000.0));
    }

    #[test]
    fn empty_and_deterministic_drops() {
        let ens = DropEnsemble::new(1, 500.0, 0);
        assert!(drop(&mut rng_from_seed(1), &ens, 0, 8.0).is_empty());
        assert_eq!(
            drop(&mut rng_from_seed(1), &ens, 10, 8.0),
            drop(&mut rng_from_seed(1), &ens, 10, 8.0)
        );
    }

    #[test]
    fn nearest_rank_percentile() {
        let pool: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_rate(&pool, 5.0).unwrap(), 5.0);
        assert_eq!(percentile_rate(&pool, 0.0).unwrap(), 1.0);
        assert_eq!(percentile_rate(&pool, 100.0).unwrap(), 100.0);
        assert_eq!(percentile_rate(&[3.5; 7], 42.0).unwrap(), 3.5);
        assert_eq!(percentile_rate(&[], 5.0), Err(McError::EmptyPool));
    }

    #[test]
    fn percentile_matches_sort_oracle() {
        let mut rng = rng_from_seed(3);
        for n in [1usize, 2, 7, 100, 1001] {
            let pool: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e7)).collect();
            let mut sorted = pool.clone();
            sorted.sort_by(f64::total_cmp);
            for q in [0.5, 5.0, 33.3, 50.0, 95.0, 99.9] {
                let rank = ((q / 100.0 * n as f64).ceil() as usize).max(1);
                assert_eq!(percentile_rate(&pool, q).unwrap(), sorted[rank - 1]);
            }
        }
    }

    #[test]
    fn sig3_formatting() {
        assert_eq!(format_sig3(2.5), "2.50");
        assert_eq!(format_sig3(32.47), "32.5");
        assert_eq!(format_sig3(123.4), "123");
        assert_eq!(format_sig3(1234.0), "1230");
        assert_eq!(format_sig3(0.012345), "0.0123");
        assert_eq!(format_sig3(9.996), "10.0");
        assert_eq!(format_sig3(0.0), "0");
    }

    fn small_scenario(bs_type: BsType, eirp: f64) -> Scenario {
        Scenario::reference(bs_type, 1, Band::Fc700, eirp)
            .with(|d| {
                d.insert("m_horizontal".into(), 4.into());
                d.insert("m_vertical".into(), 2.into());
            })
            .unwrap()
    }

    #[test]
    fn vanishing_eirp_gives_vanishing_rate() {
        let s = small_scenario(BsType::Htbs, -200.0);
        let summary = ul_rate_experiment(&s, &DropEnsemble::new(20, 5_000.0, 1)).unwrap();
        assert!(summary.p5_bps < 1e-3);
        assert!(summary.p50_bps < 1e-3);
    }

    #[test]
    fn more_eirp_raises_the_single_user_median() {
        let ens = DropEnsemble::new(30, 8_000.0, 2);
        let low = ul_rate_experiment(&small_scenario(BsType::Htbs, 20.0), &ens).unwrap();
        let high = ul_rate_experiment(&small_scenario(BsType::Htbs, 23.0103), &ens).unwrap();
        assert!(high.p50_bps > low.p50_bps);
    }

    #[test]
    fn zero_drops_is_rejected() {
        let s = small_scenario(BsType::Htbs, 23.0);
        assert!(matches!(
            ul_rate_experiment(&s, &DropEnsemble::new(0, 1_000.0, 0)),
            Err(McError::InvalidEnsemble(_))
        ));
        assert!(matches!(
            ul_rate_experiment(&s, &DropEnsemble::new(3, 20.0, 0)),
            Err(McError::InvalidEnsemble(_))
        ));
    }

    #[test]
    fn extrapolation_is_reported() {
        let s = small_scenario(BsType::Htbs, 23.0);
        let summary = ul_rate_experiment(&s, &DropEnsemble::new(10, 30_000.0, 0)).unwrap();
        assert_eq!(summary.warnings, vec![crate::channel::EXTRAPOLATION_WARNING.to_string()]);
    }
}
