//! Experiment configuration.
//!
//! A [`Scenario`] is only ever produced by [`validate`] (or the presets built
//! on top of it), so every scenario in circulation satisfies its invariants.
//! Scenario files are flat TOML documents; see [`KEYS`] for the accepted keys.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

/// Thermal noise power spectral density at 290 K [dBm/Hz].
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

pub const DEFAULT_NOISE_FIGURE_DB: f64 = 7.0;
pub const DEFAULT_TAU_C: usize = 10_000;
pub const DEFAULT_TDD_UL_FRACTION: f64 = 0.25;
pub const DEFAULT_DELTA_DB: f64 = 20.0;
pub const DEFAULT_CP_OVERHEAD_PERCENT: f64 = 5.0;
pub const DEFAULT_ELEMENT_SPACING: f64 = 0.5;

/// Every key a scenario file may contain.
pub const KEYS: [&str; 18] = [
    "carrier_frequency_mhz",
    "bandwidth_mhz",
    "duplex",
    "bs_height_m",
    "user_height_m",
    "bs_type",
    "num_users",
    "m_horizontal",
    "m_vertical",
    "dual_polarized",
    "eirp_max_dbm",
    "power_ratio_delta_db",
    "cp_overhead_percent",
    "noise_figure_db",
    "tau_c",
    "ul_fraction",
    "dl_tx_power_dbm",
    "seed",
];

const REQUIRED: [&str; 11] = [
    "carrier_frequency_mhz",
    "bandwidth_mhz",
    "duplex",
    "bs_height_m",
    "user_height_m",
    "bs_type",
    "num_users",
    "m_horizontal",
    "m_vertical",
    "dual_polarized",
    "eirp_max_dbm",
];

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * watt.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Duplex {
    Fdd,
    Tdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BsType {
    Legacy,
    Htbs,
}

impl BsType {
    /// Mast height used for this base-station class.
    pub fn default_height_m(self) -> f64 {
        match self {
            BsType::Legacy => 25.0,
            BsType::Htbs => 150.0,
        }
    }

    /// Total downlink transmit power used for this class.
    pub fn default_dl_power_dbm(self) -> f64 {
        match self {
            BsType::Legacy => 46.0,
            BsType::Htbs => 50.0,
        }
    }
}

impl fmt::Display for Duplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Duplex::Fdd => "fdd",
            Duplex::Tdd => "tdd",
        })
    }
}

impl fmt::Display for BsType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BsType::Legacy => "legacy",
            BsType::Htbs => "htbs",
        })
    }
}

impl std::str::FromStr for Duplex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fdd" => Ok(Duplex::Fdd),
            "tdd" => Ok(Duplex::Tdd),
            other => Err(format!("expected \"fdd\" or \"tdd\", got {other:?}")),
        }
    }
}

impl std::str::FromStr for BsType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "legacy" => Ok(BsType::Legacy),
            "htbs" => Ok(BsType::Htbs),
            other => Err(format!("expected \"legacy\" or \"htbs\", got {other:?}")),
        }
    }
}

/// Carrier/bandwidth/duplex combinations evaluated for both BS classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    Fc700,
    Fc1800,
    Fc3500,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Fc700, Band::Fc1800, Band::Fc3500];

    pub fn carrier_mhz(self) -> f64 {
        match self {
            Band::Fc700 => 700.0,
            Band::Fc1800 => 1800.0,
            Band::Fc3500 => 3500.0,
        }
    }

    pub fn bandwidth_mhz(self) -> f64 {
        match self {
            Band::Fc700 => 10.0,
            Band::Fc1800 => 20.0,
            Band::Fc3500 => 100.0,
        }
    }

    pub fn duplex(self) -> Duplex {
        match self {
            Band::Fc3500 => Duplex::Tdd,
            _ => Duplex::Fdd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_horizontal: usize,
    pub m_vertical: usize,
    pub dual_polarized: bool,
    pub element_spacing_wavelengths: f64,
}

impl ArrayConfig {
    pub fn new(m_horizontal: usize, m_vertical: usize, dual_polarized: bool) -> Self {
        Self {
            m_horizontal,
            m_vertical,
            dual_polarized,
            element_spacing_wavelengths: DEFAULT_ELEMENT_SPACING,
        }
    }

    pub fn polarizations(&self) -> usize {
        if self.dual_polarized {
            2
        } else {
            1
        }
    }

    /// Total number of antenna ports `M`.
    pub fn num_ports(&self) -> usize {
        self.m_horizontal * self.m_vertical * self.polarizations()
    }
}

/// Samples per coherence block and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStructure {
    pub tau_c: usize,
    /// Uplink pilot length; equals the number of users.
    pub tau_p: usize,
    /// Share of the data samples carrying uplink data (1 for FDD).
    pub ul_fraction: f64,
}

impl FrameStructure {
    /// Effective uplink share `tau_u / tau_c`.
    pub fn ul_share(&self) -> f64 {
        self.ul_fraction * (self.tau_c - self.tau_p) as f64 / self.tau_c as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub duplex: Duplex,
    pub bs_height_m: f64,
    pub user_height_m: f64,
    pub bs_type: BsType,
    pub num_users: usize,
    pub array: ArrayConfig,
    pub eirp_max_dbm: f64,
    pub power_ratio_delta_db: f64,
    /// Cyclic-prefix overhead as a fraction in `[0, 1)`.
    pub cp_overhead: f64,
    pub noise_figure_db: f64,
    pub coherence_block: FrameStructure,
    pub dl_tx_power_dbm: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("range violation on `{key}`: {reason}")]
    RangeViolation { key: String, reason: String },
}

impl ConfigError {
    pub fn key(&self) -> &str {
        match self {
            ConfigError::UnknownKey(k) | ConfigError::MissingKey(k) => k,
            ConfigError::RangeViolation { key, .. } => key,
        }
    }

    fn range(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::RangeViolation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// The complete list of problems found in a scenario document.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Reads typed values out of a table while accumulating violations.
struct Reader<'a> {
    doc: &'a Table,
    errors: Vec<ConfigError>,
}

impl<'a> Reader<'a> {
    fn real(&mut self, key: &str) -> Option<f64> {
        match self.doc.get(key)? {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.errors.push(ConfigError::range(key, "expected a finite number"));
                None
            }
        }
    }

    fn integer(&mut self, key: &str) -> Option<i64> {
        match self.doc.get(key)? {
            Value::Integer(i) => Some(*i),
            _ => {
                self.errors.push(ConfigError::range(key, "expected an integer"));
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.doc.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.errors.push(ConfigError::range(key, "expected true or false"));
                None
            }
        }
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&mut self, key: &str) -> Option<T> {
        match self.doc.get(key)? {
            Value::String(s) => match s.parse() {
                Ok(v) => Some(v),
                Err(reason) => {
                    self.errors.push(ConfigError::range(key, reason));
                    None
                }
            },
            _ => {
                self.errors.push(ConfigError::range(key, "expected a string"));
                None
            }
        }
    }

    fn check(&mut self, key: &str, ok: bool, reason: &str) -> bool {
        if !ok {
            self.errors.push(ConfigError::range(key, reason));
        }
        ok
    }

    fn positive_real(&mut self, key: &str) -> Option<f64> {
        let x = self.real(key)?;
        self.check(key, x > 0.0, "must be > 0").then_some(x)
    }

    fn nonnegative_real(&mut self, key: &str) -> Option<f64> {
        let x = self.real(key)?;
        self.check(key, x >= 0.0, "must be >= 0").then_some(x)
    }

    fn positive_count(&mut self, key: &str) -> Option<usize> {
        let i = self.integer(key)?;
        self.check(key, i >= 1, "must be a positive integer")
            .then_some(i as usize)
    }
}

/// Builds a [`Scenario`] from a parsed key-value document.
///
/// All violations are collected; a scenario is returned only when there are
/// none.
pub fn validate(doc: &Table) -> Result<Scenario, ConfigErrors> {
    let mut r = Reader {
        doc,
        errors: Vec::new(),
    };

    let mut unknown: Vec<&String> = doc.keys().filter(|k| !KEYS.contains(&k.as_str())).collect();
    unknown.sort();
    r.errors
        .extend(unknown.into_iter().map(|k| ConfigError::UnknownKey(k.clone())));
    for key in REQUIRED {
        if !doc.contains_key(key) {
            r.errors.push(ConfigError::MissingKey(key.to_string()));
        }
    }

    let fc_mhz = r.positive_real("carrier_frequency_mhz");
    let w_mhz = r.positive_real("bandwidth_mhz");
    let duplex: Option<Duplex> = r.parsed("duplex");
    let bs_height = r.positive_real("bs_height_m");
    let user_height = r.positive_real("user_height_m");
    let bs_type: Option<BsType> = r.parsed("bs_type");
    let num_users = r.positive_count("num_users");
    let m_h = r.positive_count("m_horizontal");
    let m_v = r.positive_count("m_vertical");
    let dual = r.boolean("dual_polarized");
    let eirp = r.real("eirp_max_dbm");
    let delta = if doc.contains_key("power_ratio_delta_db") {
        r.nonnegative_real("power_ratio_delta_db")
    } else {
        Some(DEFAULT_DELTA_DB)
    };
    let cp_percent = match r.real("cp_overhead_percent") {
        Some(x) => r
            .check("cp_overhead_percent", (0.0..100.0).contains(&x), "must lie in [0, 100)")
            .then_some(x),
        None if doc.contains_key("cp_overhead_percent") => None,
        None => Some(DEFAULT_CP_OVERHEAD_PERCENT),
    };
    let nf = if doc.contains_key("noise_figure_db") {
        r.nonnegative_real("noise_figure_db")
    } else {
        Some(DEFAULT_NOISE_FIGURE_DB)
    };
    let tau_c = if doc.contains_key("tau_c") {
        r.positive_count("tau_c")
    } else {
        Some(DEFAULT_TAU_C)
    };
    let ul_fraction = match (r.real("ul_fraction"), duplex) {
        (Some(x), Some(Duplex::Fdd)) => r
            .check("ul_fraction", x == 1.0, "FDD uses the whole band for the uplink; must be 1")
            .then_some(x),
        (Some(x), Some(Duplex::Tdd)) => r
            .check("ul_fraction", x > 0.0 && x < 1.0, "TDD requires a value in (0, 1)")
            .then_some(x),
        (Some(_), None) => None,
        (None, _) if doc.contains_key("ul_fraction") => None,
        (None, Some(Duplex::Fdd)) => Some(1.0),
        (None, Some(Duplex::Tdd)) => Some(DEFAULT_TDD_UL_FRACTION),
        (None, None) => None,
    };
    let dl_power = match r.real("dl_tx_power_dbm") {
        Some(x) => Some(x),
        None if doc.contains_key("dl_tx_power_dbm") => None,
        None => bs_type.map(BsType::default_dl_power_dbm),
    };
    let seed = match r.integer("seed") {
        Some(s) => r.check("seed", s >= 0, "must be >= 0").then_some(s as u64),
        None if doc.contains_key("seed") => None,
        None => Some(0),
    };

    let array = match (m_h, m_v, dual) {
        (Some(h), Some(v), Some(d)) => Some(ArrayConfig::new(h, v, d)),
        _ => None,
    };
    if let (Some(k), Some(a)) = (num_users, &array) {
        r.check(
            "num_users",
            k <= a.num_ports(),
            &format!("{k} users exceed the {} antenna ports (M/K >= 1)", a.num_ports()),
        );
    }
    if let (Some(k), Some(tc)) = (num_users, tau_c) {
        r.check(
            "tau_c",
            k < tc,
            &format!("coherence block of {tc} samples leaves no data after {k} pilot samples"),
        );
    }

    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    // Every field is present once no errors were recorded.
    let num_users = num_users.unwrap();
    Ok(Scenario {
        carrier_frequency_hz: fc_mhz.unwrap() * 1e6,
        bandwidth_hz: w_mhz.unwrap() * 1e6,
        duplex: duplex.unwrap(),
        bs_height_m: bs_height.unwrap(),
        user_height_m: user_height.unwrap(),
        bs_type: bs_type.unwrap(),
        num_users,
        array: array.unwrap(),
        eirp_max_dbm: eirp.unwrap(),
        power_ratio_delta_db: delta.unwrap(),
        cp_overhead: cp_percent.unwrap() / 100.0,
        noise_figure_db: nf.unwrap(),
        coherence_block: FrameStructure {
            tau_c: tau_c.unwrap(),
            tau_p: num_users,
            ul_fraction: ul_fraction.unwrap(),
        },
        dl_tx_power_dbm: dl_power.unwrap(),
        seed: seed.unwrap(),
    })
}

/// Parses and validates a scenario file's contents.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigErrors> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigError::range("<document>", e.message().to_string())])
    })?;
    validate(&doc)
}

impl Scenario {
    /// Reference parameters for one BS class, user count, band and EIRP cap.
    pub fn reference(bs_type: BsType, num_users: usize, band: Band, eirp_max_dbm: f64) -> Scenario {
        let mut doc = reference_document(bs_type, num_users, band);
        doc.insert("eirp_max_dbm".into(), Value::Float(eirp_max_dbm));
        validate(&doc).expect("reference parameters are valid")
    }

    /// Serializes back into a scenario document accepted by [`validate`].
    pub fn to_document(&self) -> Table {
        let mut t = Table::new();
        t.insert("carrier_frequency_mhz".into(), Value::Float(self.carrier_frequency_hz / 1e6));
        t.insert("bandwidth_mhz".into(), Value::Float(self.bandwidth_hz / 1e6));
        t.insert("duplex".into(), Value::String(self.duplex.to_string()));
        t.insert("bs_height_m".into(), Value::Float(self.bs_height_m));
        t.insert("user_height_m".into(), Value::Float(self.user_height_m));
        t.insert("bs_type".into(), Value::String(self.bs_type.to_string()));
        t.insert("num_users".into(), Value::Integer(self.num_users as i64));
        t.insert("m_horizontal".into(), Value::Integer(self.array.m_horizontal as i64));
        t.insert("m_vertical".into(), Value::Integer(self.array.m_vertical as i64));
        t.insert("dual_polarized".into(), Value::Boolean(self.array.dual_polarized));
        t.insert("eirp_max_dbm".into(), Value::Float(self.eirp_max_dbm));
        t.insert("power_ratio_delta_db".into(), Value::Float(self.power_ratio_delta_db));
        t.insert("cp_overhead_percent".into(), Value::Float(self.cp_overhead * 100.0));
        t.insert("noise_figure_db".into(), Value::Float(self.noise_figure_db));
        t.insert("tau_c".into(), Value::Integer(self.coherence_block.tau_c as i64));
        t.insert("ul_fraction".into(), Value::Float(self.coherence_block.ul_fraction));
        t.insert("dl_tx_power_dbm".into(), Value::Float(self.dl_tx_power_dbm));
        t.insert("seed".into(), Value::Integer(self.seed as i64));
        t
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_document()).expect("flat table serializes")
    }

    /// Re-validates after a field edit, e.g. `s.with(|s| s.num_users = 50)`.
    pub fn with(&self, edit: impl FnOnce(&mut Table)) -> Result<Scenario, ConfigErrors> {
        let mut doc = self.to_document();
        edit(&mut doc);
        validate(&doc)
    }

    pub fn num_ports(&self) -> usize {
        self.array.num_ports()
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn eirp_max_w(&self) -> f64 {
        dbm_to_watt(self.eirp_max_dbm)
    }

    pub fn dl_tx_power_w(&self) -> f64 {
        dbm_to_watt(self.dl_tx_power_dbm)
    }

    /// Receiver noise power over the full bandwidth [W].
    pub fn noise_power(&self) -> f64 {
        noise_power(self)
    }
}

/// Reference document without the EIRP, for sweeps that set it per cell.
pub fn reference_document(bs_type: BsType, num_users: usize, band: Band) -> Table {
    let mut t = Table::new();
    t.insert("carrier_frequency_mhz".into(), Value::Float(band.carrier_mhz()));
    t.insert("bandwidth_mhz".into(), Value::Float(band.bandwidth_mhz()));
    t.insert("duplex".into(), Value::String(band.duplex().to_string()));
    t.insert("bs_height_m".into(), Value::Float(bs_type.default_height_m()));
    t.insert("user_height_m".into(), Value::Float(8.0));
    t.insert("bs_type".into(), Value::String(bs_type.to_string()));
    t.insert("num_users".into(), Value::Integer(num_users as i64));
    t.insert("m_horizontal".into(), Value::Integer(32));
    t.insert("m_vertical".into(), Value::Integer(8));
    t.insert("dual_polarized".into(), Value::Boolean(true));
    t.insert("power_ratio_delta_db".into(), Value::Float(DEFAULT_DELTA_DB));
    t.insert("cp_overhead_percent".into(), Value::Float(DEFAULT_CP_OVERHEAD_PERCENT));
    t
}

/// `sigma^2 = -174 dBm/Hz + 10 log10(W) + NF`, in watts.
pub fn noise_power(scenario: &Scenario) -> f64 {
    dbm_to_watt(noise_power_dbm(scenario.bandwidth_hz, scenario.noise_figure_db))
}

pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}
