//! Traffic-model arithmetic and covered-population figures.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::Link;

const BITS_PER_GB: f64 = 8e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("no EIRP in the UL table reaches the required capacity of {required_bps:.0} bps")]
    NoFeasibleEirp { required_bps: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("UL table line {line}: {reason}")]
    TableParse { line: usize, reason: String },
}

/// Monthly traffic volume per subscriber, carried during the busy hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    pub ul_gb_per_month: f64,
    pub dl_gb_per_month: f64,
    pub busy_hours_per_day: f64,
    #[serde(default = "default_days")]
    pub days_per_month: u32,
}

fn default_days() -> u32 {
    30
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            ul_gb_per_month: 1.0,
            dl_gb_per_month: 5.0,
            busy_hours_per_day: 10.0,
            days_per_month: 30,
        }
    }
}

impl TrafficModel {
    pub fn check(&self) -> Result<(), EconError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.ul_gb_per_month) && ok(self.dl_gb_per_month) && ok(self.busy_hours_per_day) && self.days_per_month > 0 {
            Ok(())
        } else {
            Err(EconError::InvalidInput("traffic model fields must be positive".into()))
        }
    }
}

/// Average busy-hour rate of one subscriber [bps]; GB is decimal.
pub fn avg_user_rate(traffic: &TrafficModel, link: Link) -> f64 {
    let gb = match link {
        Link::Ul => traffic.ul_gb_per_month,
        Link::Dl => traffic.dl_gb_per_month,
    };
    gb * BITS_PER_GB / (traffic.days_per_month as f64 * traffic.busy_hours_per_day * 3600.0)
}

/// Subscribers whose average demand fits into `K` simultaneous links.
pub fn covered_users(num_users: usize, per_user_rate_bps: f64, avg_dl_rate_bps: f64) -> u64 {
    // the small slack absorbs representation error in exact ratios such as K r / r
    (num_users as f64 * per_user_rate_bps / avg_dl_rate_bps * (1.0 + 1e-12)).floor() as u64
}

/// Rounds to three significant figures.
pub fn round_sig3(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

/// One row of an uplink rate table: 5th-percentile rate per user at an EIRP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UlTableEntry {
    pub eirp_dbm: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconInputs {
    pub d_cov_km: f64,
    pub num_users: usize,
    pub target_dl_rate_bps: f64,
    pub traffic: TrafficModel,
    pub ul_rate_table: Vec<UlTableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconReport {
    pub num_users: usize,
    pub d_cov_km: f64,
    pub n_cov: u64,
    /// persons/km^2
    pub rho_cov: f64,
    /// km^2
    pub a_cov: f64,
    pub avg_ul_rate_bps: f64,
    pub avg_dl_rate_bps: f64,
    pub required_ul_capacity_bps: f64,
    pub min_eirp_dbm: f64,
    pub ul_capacity_at_min_eirp_bps: f64,
    pub activity_ratio: f64,
}

/// Covered population, density and the lowest EIRP whose aggregate UL rate
/// carries the covered subscribers' uplink traffic.
///
/// Average per-subscriber rates are rounded to three significant figures
/// (7.41 kbps, 37.0 kbps) before use, so the user counts are whole multiples
/// of the published per-subscriber figures.
pub fn econ_report(
    d_cov_km: f64,
    num_users: usize,
    target_dl_rate_bps: f64,
    traffic: &TrafficModel,
    ul_rate_table: &[UlTableEntry],
) -> Result<EconReport, EconError> {
    traffic.check()?;
    if !(d_cov_km.is_finite() && d_cov_km > 0.0) {
        return Err(EconError::InvalidInput("d_cov must be positive".into()));
    }
    if num_users == 0 || !(target_dl_rate_bps > 0.0) {
        return Err(EconError::InvalidInput("K and the DL target must be positive".into()));
    }
    if ul_rate_table.is_empty() {
        return Err(EconError::InvalidInput("UL rate table is empty".into()));
    }

    let avg_ul = round_sig3(avg_user_rate(traffic, Link::Ul));
    let avg_dl = round_sig3(avg_user_rate(traffic, Link::Dl));
    let n_cov = covered_users(num_users, target_dl_rate_bps, avg_dl);
    if n_cov == 0 {
        return Err(EconError::InvalidInput("no subscriber fits the DL capacity".into()));
    }
    let a_cov = PI * d_cov_km * d_cov_km;
    let required = n_cov as f64 * avg_ul;

    let mut table = ul_rate_table.to_vec();
    table.sort_by(|a, b| a.eirp_dbm.total_cmp(&b.eirp_dbm));
    let feasible = table
        .iter()
        .find(|e| num_users as f64 * e.rate_bps >= required)
        .ok_or(EconError::NoFeasibleEirp { required_bps: required })?;

    Ok(EconReport {
        num_users,
        d_cov_km,
        n_cov,
        rho_cov: n_cov as f64 / a_cov,
        a_cov,
        avg_ul_rate_bps: avg_ul,
        avg_dl_rate_bps: avg_dl,
        required_ul_capacity_bps: required,
        min_eirp_dbm: feasible.eirp_dbm,
        ul_capacity_at_min_eirp_bps: num_users as f64 * feasible.rate_bps,
        activity_ratio: num_users as f64 / n_cov as f64,
    })
}

pub const ECON_TABLE_HEADER: &str = "K | d_cov [km] | N_cov | rho_cov [persons/km^2] | A_cov [km^2] | UL capacity [Mbps] | min EIRP [dBm]";

impl EconReport {
    /// Formatted row matching [`ECON_TABLE_HEADER`].
    pub fn table_row(&self) -> String {
        format!(
            "{} | {} | {} | {} | {} | {} | {}",
            self.num_users,
            self.d_cov_km,
            self.n_cov,
            round_sig3(self.rho_cov),
            round_sig3(self.a_cov),
            round_sig3(self.required_ul_capacity_bps / 1e6),
            self.min_eirp_dbm
        )
    }
}

impl fmt::Display for EconReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{ECON_TABLE_HEADER}")?;
        write!(f, "{}", self.table_row())
    }
}

/// Reads an uplink rate table from CSV.
///
/// Uses the `eirp_dbm` and `rate_p5_mbps` columns; lines starting with `#`
/// are skipped. When a `K` column is present only rows with `K == num_users`
/// are kept. Sweep output is accepted as is.
pub fn parse_ul_table(text: &str, num_users: Option<usize>) -> Result<Vec<UlTableEntry>, EconError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (header_no, header) = lines.next().ok_or(EconError::TableParse {
        line: 1,
        reason: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (ie, ir) = match (find("eirp_dbm"), find("rate_p5_mbps")) {
        (Some(e), Some(r)) => (e, r),
        _ => {
            return Err(EconError::TableParse {
                line: header_no + 1,
                reason: "header needs eirp_dbm and rate_p5_mbps".into(),
            })
        }
    };
    let ik = find("K");

    let mut out = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |reason: &str| EconError::TableParse {
            line: no + 1,
            reason: reason.into(),
        };
        if fields.len() < cols.len() {
            return Err(err("too few fields"));
        }
        if let (Some(ik), Some(k)) = (ik, num_users) {
            let row_k: usize = fields[ik].parse().map_err(|_| err("bad K"))?;
            if row_k != k {
                continue;
            }
        }
        // cells whose experiment failed carry an empty rate
        if fields[ir].is_empty() {
            continue;
        }
        let eirp_dbm: f64 = fields[ie].parse().map_err(|_| err("bad eirp_dbm"))?;
        let rate: f64 = fields[ir].parse().map_err(|_| err("bad rate_p5_mbps"))?;
        out.push(UlTableEntry {
            eirp_dbm,
            rate_bps: rate * 1e6,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rates_mbps: [f64; 4]) -> Vec<UlTableEntry> {
        [40.0, 33.0, 30.0, 23.0]
            .iter()
            .zip(rates_mbps)
            .map(|(&e, r)| UlTableEntry {
                eirp_dbm: e,
                rate_bps: r * 1e6,
            })
            .collect()
    }

    #[test]
    fn traffic_rates() {
        let t = TrafficModel::default();
        let ul = avg_user_rate(&t, Link::Ul);
        let dl = avg_user_rate(&t, Link::Dl);
        assert!((ul - 7407.407407).abs() < 1e-3);
        assert!((dl - 37037.037037).abs() < 1e-3);
        assert_eq!(round_sig3(ul), 7410.0);
        assert_eq!(round_sig3(dl), 37000.0);
        let half = TrafficModel {
            ul_gb_per_month: 0.5,
            ..t.clone()
        };
        assert_eq!(avg_user_rate(&half, Link::Ul) * 2.0, ul);
    }

    #[test]
    fn covered_user_counts() {
        assert_eq!(covered_users(100, 10e6, 37_000.0), 27_027);
        assert_eq!(covered_users(20, 10e6, 37_000.0), 5_405);
        assert_eq!(covered_users(50, 10e6, 37_000.0), 13_513);
        assert_eq!(covered_users(7, 0.3, 0.3), 7);
    }

    #[test]
    fn k100_report() {
        let r = econ_report(12.5, 100, 10e6, &TrafficModel::default(), &table([22.0, 10.0, 6.5, 2.5])).unwrap();
        assert_eq!(r.n_cov, 27_027);
        assert!((r.rho_cov / 55.06 - 1.0).abs() < 5e-3);
        assert!((r.a_cov / 490.87 - 1.0).abs() < 5e-3);
        assert!((r.required_ul_capacity_bps / 200.27e6 - 1.0).abs() < 1e-3);
        assert_eq!(r.min_eirp_dbm, 23.0);
        assert!((r.activity_ratio * 100.0 - 0.37).abs() < 0.01);
    }

    #[test]
    fn k20_and_k50_reports() {
        let t = TrafficModel::default();
        let r = econ_report(37.0, 20, 10e6, &t, &table([12.5, 4.5, 2.5, 0.85])).unwrap();
        assert_eq!(r.n_cov, 5_405);
        assert!((r.rho_cov / 1.2567 - 1.0).abs() < 5e-3);
        assert!((r.a_cov / 4300.8 - 1.0).abs() < 5e-3);
        assert_eq!(r.min_eirp_dbm, 30.0);

        let r = econ_report(21.0, 50, 10e6, &t, &table([16.5, 7.0, 4.5, 1.55])).unwrap();
        assert_eq!(r.n_cov, 13_513);
        assert!((r.rho_cov / 9.7536 - 1.0).abs() < 5e-3);
        assert!((r.a_cov / 1385.4 - 1.0).abs() < 5e-3);
        assert_eq!(r.min_eirp_dbm, 30.0);
    }

    #[test]
    fn infeasible_table() {
        let err = econ_report(12.5, 100, 10e6, &TrafficModel::default(), &table([1.0, 0.5, 0.2, 0.1])).unwrap_err();
        assert!(matches!(err, EconError::NoFeasibleEirp { .. }));
    }

    #[test]
    fn table_row_and_json() {
        let r = econ_report(12.5, 100, 10e6, &TrafficModel::default(), &table([22.0, 10.0, 6.5, 2.5])).unwrap();
        assert_eq!(r.table_row(), "100 | 12.5 | 27027 | 55.1 | 491 | 200 | 23");
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"n_cov\":27027"));
    }

    #[test]
    fn ul_table_csv() {
        let text = "# manifest {}\nbs_type,K,fc_mhz,eirp_dbm,rate_p5_mbps\nhtbs,20,700,40,12.5\nhtbs,100,700,40,22\nhtbs,100,700,23,2.5\nhtbs,100,700,30,\n";
        let t = parse_ul_table(text, Some(100)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1], UlTableEntry { eirp_dbm: 23.0, rate_bps: 2.5e6 });
        assert_eq!(parse_ul_table(text, None).unwrap().len(), 3);
        assert!(matches!(parse_ul_table("a,b\n1,2", None), Err(EconError::TableParse { line: 1, .. })));
        assert!(matches!(parse_ul_table("eirp_dbm,rate_p5_mbps\nx,1", None), Err(EconError::TableParse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn density_identity(d in 0.5f64..80.0, k in 1usize..200) {
            let r = econ_report(d, k, 10e6, &TrafficModel::default(), &table([1e3, 1e3, 1e3, 1e3])).unwrap();
            let n = r.rho_cov * PI * d * d;
            prop_assert!((n / r.n_cov as f64 - 1.0).abs() < 5e-3);
            let far = econ_report(2.0 * d, k, 10e6, &TrafficModel::default(), &table([1e3; 4])).unwrap();
            prop_assert!((far.rho_cov * 4.0 / r.rho_cov - 1.0).abs() < 1e-12);
        }

        #[test]
        fn covered_users_homogeneity(k in 1usize..200, r in 1e5f64..1e8, a in 1e3f64..1e5, s in 1u32..8) {
            let s = s as f64;
            let base = k as f64 * r / a;
            let scaled_r = covered_users(k, r * s, a) as f64;
            let scaled_a = covered_users(k, r, a * s) as f64;
            prop_assert!((scaled_r - (base * s).floor()).abs() <= 1.0);
            prop_assert!((scaled_a - (base / s).floor()).abs() <= 1.0);
        }
    }
}
