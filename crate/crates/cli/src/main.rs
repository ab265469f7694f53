//! `ruralmimo` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 infeasible request. `RURALMIMO_THREADS` caps the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use ruralmimo_core::econ::{self, EconError, TrafficModel};
use ruralmimo_core::geodata::{self, GeoError};
use ruralmimo_core::manifest::{self, RunManifest};
use ruralmimo_core::montecarlo::{
    self, coverage_search, ul_rate_experiment, CoverageSearch, DropEnsemble, Link, McError, SweepRow,
};
use ruralmimo_core::scenario::{parse_scenario, ConfigErrors};

#[derive(Parser)]
#[command(name = "ruralmimo", version, about = "Massive-MIMO link-level simulator for high-tower rural base stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uplink rate percentiles for users spread over a disk.
    UlRate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        distance_km: f64,
        #[arg(long, default_value_t = montecarlo::DEFAULT_NUM_DROPS)]
        drops: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Largest disk radius whose percentile rate meets a target.
    Coverage {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        target_mbps: f64,
        #[arg(long, default_value_t = montecarlo::DEFAULT_PERCENTILE)]
        percentile: f64,
        #[arg(long, default_value = "dl")]
        link: Link,
        #[arg(long, default_value_t = montecarlo::DEFAULT_NUM_DROPS)]
        drops: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uplink rate table over a grid of BS types, bands, user counts and EIRPs.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covered users, population density and minimum EIRP.
    Econ {
        #[arg(long)]
        dcov_km: f64,
        #[arg(long)]
        k: usize,
        /// TOML with ul_gb_per_month, dl_gb_per_month, busy_hours_per_day[, days_per_month].
        #[arg(long)]
        traffic: Option<PathBuf>,
        /// CSV with eirp_dbm and rate_p5_mbps columns, e.g. sweep output.
        #[arg(long)]
        ul_table: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        target_mbps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidate sites by closeness to a target population density.
    Sites {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        radius_km: f64,
        #[arg(long, default_value_t = 3)]
        top: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-hash output files and check their embedded manifests.
    Verify {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

enum Failure {
    Config(Vec<String>),
    Runtime(String),
    Infeasible(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Infeasible(_) => 4,
        }
    }

    fn report(&self) {
        match self {
            Failure::Config(lines) => {
                eprintln!("error: invalid configuration");
                for l in lines {
                    eprintln!("  {l}");
                }
            }
            Failure::Runtime(m) => eprintln!("error: {m}"),
            Failure::Infeasible(m) => eprintln!("infeasible: {m}"),
        }
    }
}

impl From<ConfigErrors> for Failure {
    fn from(e: ConfigErrors) -> Self {
        Failure::Config(e.0.iter().map(ToString::to_string).collect())
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::Config(c) => c.into(),
            McError::InvalidEnsemble(m) => Failure::Config(vec![m]),
            McError::TargetUnreachable { .. } => Failure::Infeasible(e.to_string()),
            McError::Downlink(ruralmimo_core::downlink::DownlinkError::ConfigError(m)) => Failure::Config(vec![m]),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<EconError> for Failure {
    fn from(e: EconError) -> Self {
        match e {
            EconError::NoFeasibleEirp { .. } => Failure::Infeasible(e.to_string()),
            other => Failure::Config(vec![other.to_string()]),
        }
    }
}

impl From<GeoError> for Failure {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::Io(_) => Failure::Runtime(e.to_string()),
            GeoError::OutOfBounds { .. } => Failure::Infeasible(e.to_string()),
            other => Failure::Config(vec![other.to_string()]),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(vec![format!("cannot read {}: {e}", path.display())]))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn positive(name: &str, x: f64) -> Result<(), Failure> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Failure::Config(vec![format!("range violation on `{name}`: must be positive, got {x}")]))
    }
}

fn drops_arg(drops: usize) -> Result<(), Failure> {
    if drops == 0 {
        return Err(Failure::Config(vec!["range violation on `drops`: at least one drop is required".into()]));
    }
    Ok(())
}

fn ul_rate(config: &Path, distance_km: f64, drops: usize, out: Option<&Path>) -> Result<(), Failure> {
    let scenario = parse_scenario(&read(config)?)?;
    drops_arg(drops)?;
    positive("distance_km", distance_km)?;
    let ensemble = DropEnsemble::new(drops, distance_km * 1e3, scenario.seed);
    ensemble.check()?;
    let summary = ul_rate_experiment(&scenario, &ensemble)?;
    let row = SweepRow {
        bs_type: scenario.bs_type,
        num_users: scenario.num_users,
        fc_mhz: scenario.carrier_frequency_hz / 1e6,
        w_mhz: scenario.bandwidth_hz / 1e6,
        duplex: scenario.duplex,
        eirp_dbm: scenario.eirp_max_dbm,
        d_eval_km: Some(distance_km),
        rate_p5_mbps: Some(summary.p5_bps / 1e6),
        rate_p50_mbps: Some(summary.p50_bps / 1e6),
        rate_p95_mbps: Some(summary.p95_bps / 1e6),
        rate_mean_mbps: Some(summary.mean_bps / 1e6),
        dcov_km: None,
        warnings: summary.warnings.clone(),
    };
    let mut body = Vec::new();
    montecarlo::write_sweep_csv(&[row], &mut body).map_err(|e| Failure::Runtime(e.to_string()))?;
    let inputs = format!("{}\ndistance_km = {distance_km}\ndrops = {drops}\n", scenario.to_toml_string());
    let m = RunManifest::new("ul-rate", &inputs, scenario.seed, summary.warnings);
    emit(out, &manifest::attach_csv(m, &String::from_utf8(body).expect("utf8")))
}

fn coverage(
    config: &Path,
    target_mbps: f64,
    percentile: f64,
    link: Link,
    drops: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = parse_scenario(&read(config)?)?;
    drops_arg(drops)?;
    positive("target_mbps", target_mbps)?;
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Failure::Config(vec![format!("range violation on `percentile`: {percentile} not in [0, 100]")]));
    }
    let search = CoverageSearch::default();
    let ensemble = DropEnsemble::new(drops, search.max_radius_m, scenario.seed);
    let result = match coverage_search(&scenario, &ensemble, target_mbps * 1e6, percentile, link, &search) {
        Ok(r) => r,
        Err(McError::NoUpperBracket(r)) => {
            eprintln!("warning: target still met at the maximum search radius; reporting a saturated result");
            *r
        }
        Err(e) => return Err(e.into()),
    };
    let inputs = format!(
        "{}\ntarget_mbps = {target_mbps}\npercentile = {percentile}\nlink = {link:?}\ndrops = {drops}\n",
        scenario.to_toml_string()
    );
    let m = RunManifest::new("coverage", &inputs, scenario.seed, result.warnings.clone());
    let mut value = serde_json::to_value(&result).map_err(|e| Failure::Runtime(e.to_string()))?;
    value["d_cov_km"] = json!(result.d_cov_m / 1e3);
    emit(out, &manifest::attach_json(m, &value))
}

fn sweep(grid_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let text = read(grid_path)?;
    let grid = montecarlo::parse_grid(&text)?;
    let rows = montecarlo::run_sweep(&grid);
    let mut body = Vec::new();
    montecarlo::write_sweep_csv(&rows, &mut body).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut warnings: Vec<String> = rows.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
    warnings.sort();
    warnings.dedup();
    let m = RunManifest::new("sweep", &text, grid.seed, warnings);
    emit(out, &manifest::attach_csv(m, &String::from_utf8(body).expect("utf8")))
}

fn econ_cmd(
    dcov_km: f64,
    k: usize,
    traffic: Option<&Path>,
    ul_table: &Path,
    target_mbps: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (traffic_text, traffic) = match traffic {
        Some(p) => {
            let t = read(p)?;
            let model: TrafficModel = toml::from_str(&t).map_err(|e| Failure::Config(vec![e.message().to_string()]))?;
            (t, model)
        }
        None => (String::new(), TrafficModel::default()),
    };
    let table_text = read(ul_table)?;
    let table = econ::parse_ul_table(&table_text, Some(k))?;
    let report = econ::econ_report(dcov_km, k, target_mbps * 1e6, &traffic, &table)?;
    let inputs = format!("dcov_km = {dcov_km}\nk = {k}\ntarget_mbps = {target_mbps}\n{traffic_text}\n{table_text}");
    let m = RunManifest::new("econ", &inputs, 0, Vec::new());
    let mut value = serde_json::to_value(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    value["table_header"] = json!(econ::ECON_TABLE_HEADER);
    value["table_row"] = json!(report.table_row());
    emit(out, &manifest::attach_json(m, &value))
}

fn sites(raster: &Path, rho: f64, radius_km: f64, top: usize, out: Option<&Path>) -> Result<(), Failure> {
    let text = read(raster)?;
    let r = geodata::parse_raster(&text)?;
    let found = geodata::find_sites(&r, rho, radius_km, top)?;
    let mut body = Vec::new();
    geodata::write_sites_csv(&found, &mut body).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut warnings = Vec::new();
    if r.missing_cells > 0 {
        warnings.push(format!("{} missing raster cells treated as zero", r.missing_cells));
    }
    if found.iter().any(|s| s.partial) {
        warnings.push("some sites extend beyond the raster".into());
    }
    let inputs = format!("rho = {rho}\nradius_km = {radius_km}\ntop = {top}\n{text}");
    let m = RunManifest::new("sites", &inputs, 0, warnings);
    emit(out, &manifest::attach_csv(m, &String::from_utf8(body).expect("utf8")))
}

fn verify(files: &[PathBuf]) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", f.display())))?;
        match manifest::verify(&text) {
            Ok(m) => println!("ok {} ({}, digest {})", f.display(), m.command, m.output_digest),
            Err(e) => {
                println!("FAILED {}: {e}", f.display());
                failed.push(f.display().to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("verification failed for {}", failed.join(", "))))
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("RURALMIMO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Config(vec![format!("RURALMIMO_THREADS must be a positive integer, got {v:?}")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::UlRate {
            config,
            distance_km,
            drops,
            out,
        } => ul_rate(&config, distance_km, drops, out.as_deref()),
        Command::Coverage {
            config,
            target_mbps,
            percentile,
            link,
            drops,
            out,
        } => coverage(&config, target_mbps, percentile, link, drops, out.as_deref()),
        Command::Sweep { grid, out } => sweep(&grid, out.as_deref()),
        Command::Econ {
            dcov_km,
            k,
            traffic,
            ul_table,
            target_mbps,
            out,
        } => econ_cmd(dcov_km, k, traffic.as_deref(), &ul_table, target_mbps, out.as_deref()),
        Command::Sites {
            raster,
            rho,
            radius_km,
            top,
            out,
        } => sites(&raster, rho, radius_km, top, out.as_deref()),
        Command::Verify { files } => verify(&files),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.exit_code())
        }
    }
}
