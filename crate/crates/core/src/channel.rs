//! Rural-macro channel synthesis.
//!
//! Large-scale fading follows the 3GPP TR 38.901 RMa path-loss and
//! shadowing tables:
//!
//! ```text
//! PL1(d)     = 20 log10(40 pi d fc / 3) + min(0.03 h^1.72, 10) log10(d)
//!              - min(0.044 h^1.72, 14.77) + 0.002 log10(h) d
//! PL_LoS(d)  = PL1(d)                             d <= d_BP
//!            = PL1(d_BP) + 40 log10(d / d_BP)     d >  d_BP
//! PL'_NLoS   = 161.04 - 7.1 log10(W) + 7.5 log10(h)
//!              - (24.37 - 3.7 (h/h_BS)^2) log10(h_BS)
//!              + (43.42 - 3.1 log10(h_BS)) (log10(d) - 3)
//!              + 20 log10(fc) - (3.2 (log10(11.75 h_UT))^2 - 4.97)
//! PL_NLoS    = max(PL_LoS, PL'_NLoS)
//! d_BP       = 2 pi h_BS h_UT f_c / c
//! ```
//!
//! with `d` the 3D distance in metres, `fc` in GHz, `h` the average building
//! height and `W` the street width. Shadowing is log-normal with 4 dB / 6 dB
//! (LoS before / after the breakpoint) and 8 dB (NLoS). Distances beyond
//! the 10 km validity range are extrapolated with the same slopes and
//! reported as warnings.
//!
//! Small-scale fading is a geometric cluster model: a set of single-path
//! clusters scattered around the LoS azimuth with an exponential power
//! profile and random polarization, plus a Rician line-of-sight component
//! for LoS links. Each channel vector has unit average energy per port
//! before the large-scale gain is applied.

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{self, ElementLayout, MATCHED_POLARIZATION};
use crate::scenario::{db_to_linear, BsType, Scenario};
use crate::{CMatrix, SPEED_OF_LIGHT};

/// Below this 2D distance the RMa formulas are not defined.
pub const MIN_DISTANCE_M: f64 = 10.0;

pub const EXTRAPOLATION_WARNING: &str = "rma path loss extrapolated beyond validity range";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance {distance_m} m is below the {MIN_DISTANCE_M} m validity floor")]
    DistanceBelowValidity { distance_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmaParams {
    pub building_height_m: f64,
    pub street_width_m: f64,
    /// Largest 2D distance covered by the standard; farther links are extrapolated.
    pub validity_max_m: f64,
}

impl Default for RmaParams {
    fn default() -> Self {
        Self {
            building_height_m: 5.0,
            street_width_m: 20.0,
            validity_max_m: 10_000.0,
        }
    }
}

pub fn breakpoint_distance(fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    2.0 * PI * h_bs * h_ut * fc_hz / SPEED_OF_LIGHT
}

fn distance_3d(d2d: f64, h_bs: f64, h_ut: f64) -> f64 {
    (d2d * d2d + (h_bs - h_ut).powi(2)).sqrt()
}

impl RmaParams {
    fn pl1(&self, d3d: f64, fc_ghz: f64) -> f64 {
        let h = self.building_height_m;
        let hp = h.powf(1.72);
        20.0 * (40.0 * PI * d3d * fc_ghz / 3.0).log10() + (0.03 * hp).min(10.0) * d3d.log10()
            - (0.044 * hp).min(14.77)
            + 0.002 * h.log10() * d3d
    }

    fn check(d2d: f64) -> Result<(), ChannelError> {
        if d2d < MIN_DISTANCE_M || d2d.is_nan() {
            return Err(ChannelError::DistanceBelowValidity { distance_m: d2d });
        }
        Ok(())
    }

    /// LoS path loss [dB]. The breakpoint switch is taken on the 3D
    /// distance so the two slopes join continuously.
    pub fn path_loss_los(&self, fc_hz: f64, h_bs: f64, h_ut: f64, d2d: f64) -> Result<f64, ChannelError> {
        Self::check(d2d)?;
        let fc_ghz = fc_hz / 1e9;
        let d_bp = breakpoint_distance(fc_hz, h_bs, h_ut);
        let d3d = distance_3d(d2d, h_bs, h_ut);
        Ok(if d3d <= d_bp {
            self.pl1(d3d, fc_ghz)
        } else {
            self.pl1(d_bp, fc_ghz) + 40.0 * (d3d / d_bp).log10()
        })
    }

    pub fn path_loss_nlos(&self, fc_hz: f64, h_bs: f64, h_ut: f64, d2d: f64) -> Result<f64, ChannelError> {
        let los = self.path_loss_los(fc_hz, h_bs, h_ut, d2d)?;
        let d3d = distance_3d(d2d, h_bs, h_ut);
        let h = self.building_height_m;
        let w = self.street_width_m;
        let nlos = 161.04 - 7.1 * w.log10() + 7.5 * h.log10()
            - (24.37 - 3.7 * (h / h_bs).powi(2)) * h_bs.log10()
            + (43.42 - 3.1 * h_bs.log10()) * (d3d.log10() - 3.0)
            + 20.0 * (fc_hz / 1e9).log10()
            - (3.2 * (11.75 * h_ut).log10().powi(2) - 4.97);
        Ok(los.max(nlos))
    }

    pub fn path_loss(&self, fc_hz: f64, h_bs: f64, h_ut: f64, d2d: f64, los: bool) -> Result<f64, ChannelError> {
        if los {
            self.path_loss_los(fc_hz, h_bs, h_ut, d2d)
        } else {
            self.path_loss_nlos(fc_hz, h_bs, h_ut, d2d)
        }
    }
}

/// RMa path loss for the scenario's carrier and heights, default parameters.
pub fn path_loss(scenario: &Scenario, distance_2d_m: f64, los: bool) -> Result<f64, ChannelError> {
    RmaParams::default().path_loss(
        scenario.carrier_frequency_hz,
        scenario.bs_height_m,
        scenario.user_height_m,
        distance_2d_m,
        los,
    )
}

pub fn shadow_sigma_db(los: bool, before_breakpoint: bool) -> f64 {
    match (los, before_breakpoint) {
        (true, true) => 4.0,
        (true, false) => 6.0,
        (false, _) => 8.0,
    }
}

pub fn shadow_sample<R: Rng + ?Sized>(rng: &mut R, los: bool, before_breakpoint: bool) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    shadow_sigma_db(los, before_breakpoint) * z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KFactor {
    /// Rician factor drawn per link, normal in dB.
    Lognormal { mean_db: f64, std_db: f64 },
    /// Fixed linear factor; `f64::INFINITY` gives a pure LoS channel.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub num_clusters: usize,
    pub az_spread_los_deg: f64,
    pub az_spread_nlos_deg: f64,
    pub el_spread_deg: f64,
    /// Power drop between consecutive clusters [dB].
    pub power_step_db: f64,
    pub k_factor: KFactor,
}

impl Default for ClusterModel {
    fn default() -> Self {
        Self {
            num_clusters: 10,
            az_spread_los_deg: 12.0,
            az_spread_nlos_deg: 25.0,
            el_spread_deg: 3.0,
            power_step_db: 2.0,
            k_factor: KFactor::Lognormal {
                mean_db: 7.0,
                std_db: 4.0,
            },
        }
    }
}

impl ClusterModel {
    /// Normalized cluster powers (sum to one).
    pub fn cluster_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_clusters)
            .map(|n| db_to_linear(-self.power_step_db * n as f64))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserGeometry {
    pub azimuth: f64,
    pub elevation: f64,
}

/// One small-scale channel vector with unit average energy per port.
pub fn small_scale<R: Rng + ?Sized>(
    rng: &mut R,
    layout: &ElementLayout,
    geometry: UserGeometry,
    los: bool,
    model: &ClusterModel,
    wavelength_m: f64,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); layout.num_ports()];
    let (los_amp, diffuse_amp) = if los {
        let kappa = match model.k_factor {
            KFactor::Lognormal { mean_db, std_db } => {
                let z: f64 = rng.sample(StandardNormal);
                db_to_linear(mean_db + std_db * z)
            }
            KFactor::Fixed(k) => k,
        };
        if kappa.is_infinite() {
            (1.0, 0.0)
        } else {
            ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
        }
    } else {
        (0.0, 1.0)
    };

    if los_amp > 0.0 {
        let phase = rng.random_range(0.0..2.0 * PI);
        array::accumulate(
            layout,
            geometry.azimuth,
            geometry.elevation,
            wavelength_m,
            Some(MATCHED_POLARIZATION),
            Complex64::from_polar(los_amp, phase),
            &mut out,
        );
    }
    if diffuse_amp > 0.0 {
        let az_spread = if los {
            model.az_spread_los_deg
        } else {
            model.az_spread_nlos_deg
        }
        .to_radians();
        let el_spread = model.el_spread_deg.to_radians();
        for power in model.cluster_powers() {
            let dz_az: f64 = rng.sample(StandardNormal);
            let dz_el: f64 = rng.sample(StandardNormal);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let psi = rng.random_range(0.0..2.0 * PI);
            let az = (geometry.azimuth + az_spread * dz_az + PI).rem_euclid(2.0 * PI) - PI;
            let el = (geometry.elevation + el_spread * dz_el).clamp(-PI / 2.0, PI / 2.0);
            let gain = Complex64::new(re, im) * (diffuse_amp * (power / 2.0).sqrt());
            array::accumulate(layout, az, el, wavelength_m, Some(psi), gain, &mut out);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPosition {
    pub distance_2d_m: f64,
    pub azimuth_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDrop {
    pub positions: Vec<UserPosition>,
    pub user_height_m: f64,
}

impl UserDrop {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Per-user large-scale quantities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LargeScale {
    pub path_loss_db: Vec<f64>,
    pub shadow_db: Vec<f64>,
    pub los: Vec<bool>,
    /// Linear channel gain `10^(-(PL + SF) / 10)`.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// `M x K`; column `k` is the channel of user `k`.
    pub h: CMatrix,
    pub large_scale: LargeScale,
    pub wavelength_m: f64,
    pub carrier_frequency_hz: f64,
    pub warnings: Vec<String>,
}

impl ChannelMatrix {
    pub fn num_ports(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.h.ncols()
    }

    /// Writes the binary dump: little-endian `u32 M`, `u32 K`, `f64 f_c`,
    /// then `M*K` row-major `(f32 re, f32 im)` pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.num_ports() as u32).to_le_bytes())?;
        w.write_all(&(self.num_users() as u32).to_le_bytes())?;
        w.write_all(&self.carrier_frequency_hz.to_le_bytes())?;
        for m in 0..self.num_ports() {
            for k in 0..self.num_users() {
                let z = self.h[(m, k)];
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads a dump written by [`ChannelMatrix::write_binary`]; returns `(H, f_c)`.
pub fn read_binary<R: Read>(mut r: R) -> io::Result<(CMatrix, f64)> {
    let mut u4 = [0u8; 4];
    let mut u8b = [0u8; 8];
    r.read_exact(&mut u4)?;
    let m = u32::from_le_bytes(u4) as usize;
    r.read_exact(&mut u4)?;
    let k = u32::from_le_bytes(u4) as usize;
    r.read_exact(&mut u8b)?;
    let fc = f64::from_le_bytes(u8b);
    let mut h = DMatrix::zeros(m, k);
    for row in 0..m {
        for col in 0..k {
            r.read_exact(&mut u4)?;
            let re = f32::from_le_bytes(u4);
            r.read_exact(&mut u4)?;
            let im = f32::from_le_bytes(u4);
            h[(row, col)] = Complex64::new(re as f64, im as f64);
        }
    }
    Ok((h, fc))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub rma: RmaParams,
    pub clusters: ClusterModel,
}

/// Per-scenario state reused across drops.
#[derive(Debug, Clone)]
pub struct ChannelGenerator {
    pub layout: ElementLayout,
    pub model: ChannelModel,
    pub wavelength_m: f64,
    pub carrier_frequency_hz: f64,
    pub bs_height_m: f64,
    /// HTBS links are always LoS, legacy links always NLoS.
    pub los: bool,
}

/// Large-scale and small-scale channel of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub path_loss_db: f64,
    pub shadow_db: f64,
    pub beta: f64,
    pub fading: Vec<Complex64>,
    pub extrapolated: bool,
}

impl ChannelGenerator {
    pub fn new(scenario: &Scenario, model: ChannelModel) -> Self {
        let wavelength_m = scenario.wavelength_m();
        Self {
            layout: array::build_layout(&scenario.array, wavelength_m),
            model,
            wavelength_m,
            carrier_frequency_hz: scenario.carrier_frequency_hz,
            bs_height_m: scenario.bs_height_m,
            los: scenario.bs_type == BsType::Htbs,
        }
    }

    pub fn user_channel<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        position: UserPosition,
        user_height_m: f64,
    ) -> Result<UserChannel, ChannelError> {
        let d = position.distance_2d_m;
        let fc = self.carrier_frequency_hz;
        let pl = self.model.rma.path_loss(fc, self.bs_height_m, user_height_m, d, self.los)?;
        let d_bp = breakpoint_distance(fc, self.bs_height_m, user_height_m);
        let shadow = shadow_sample(rng, self.los, d <= d_bp);
        let geometry = UserGeometry {
            azimuth: position.azimuth_rad,
            elevation: -(self.bs_height_m - user_height_m).atan2(d),
        };
        let fading = small_scale(
            rng,
            &self.layout,
            geometry,
            self.los,
            &self.model.clusters,
            self.wavelength_m,
        );
        Ok(UserChannel {
            path_loss_db: pl,
            shadow_db: shadow,
            beta: db_to_linear(-(pl + shadow)),
            fading,
            extrapolated: d > self.model.rma.validity_max_m,
        })
    }

    /// Assembles `H = [h_1 .. h_K]` with `h_k = sqrt(beta_k) g_k`.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R, drop: &UserDrop) -> Result<ChannelMatrix, ChannelError> {
        let m = self.layout.num_ports();
        let k = drop.len();
        let mut h = DMatrix::zeros(m, k);
        let mut ls = LargeScale::default();
        let mut extrapolated = false;
        for (col, &pos) in drop.positions.iter().enumerate() {
            let uc = self.user_channel(rng, pos, drop.user_height_m)?;
            let amp = uc.beta.sqrt();
            for (row, g) in uc.fading.iter().enumerate() {
                h[(row, col)] = g * amp;
            }
            extrapolated |= uc.extrapolated;
            ls.path_loss_db.push(uc.path_loss_db);
            ls.shadow_db.push(uc.shadow_db);
            ls.los.push(self.los);
            ls.beta.push(uc.beta);
        }
        Ok(ChannelMatrix {
            h,
            large_scale: ls,
            wavelength_m: self.wavelength_m,
            carrier_frequency_hz: self.carrier_frequency_hz,
            warnings: if extrapolated {
                vec![EXTRAPOLATION_WARNING.to_string()]
            } else {
                Vec::new()
            },
        })
    }
}

/// Generates one channel realization with the default channel model.
pub fn generate<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario, drop: &UserDrop) -> Result<ChannelMatrix, ChannelError> {
    ChannelGenerator::new(scenario, ChannelModel::default()).generate(rng, drop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ArrayConfig, Band};
    use crate::seeding::rng_from_seed;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, Exp};

    fn htbs() -> Scenario {
        Scenario::reference(BsType::Htbs, 20, Band::Fc700, 23.0)
    }

    fn legacy() -> Scenario {
        Scenario::reference(BsType::Legacy, 20, Band::Fc700, 23.0)
    }

    #[test]
    fn breakpoint_at_700_mhz() {
        let d_bp = breakpoint_distance(700e6, 150.0, 8.0);
        assert!((d_bp - 17_605.098).abs() < 0.01);
        assert!((d_bp / 1000.0 - 17.6).abs() < 0.05);
    }

    #[test]
    fn reference_path_loss_values() {
        // independently evaluated closed forms
        let s = htbs();
        let cases = [
            (1_000.0, 91.577_269_693_311_59),
            (12_500.0, 130.014_914_507_733_12),
            (37_000.0, 153.098_141_205_337_07),
        ];
        for (d, pl) in cases {
            assert!((path_loss(&s, d, true).unwrap() - pl).abs() < 1e-9, "d = {d}");
        }
        let l = legacy();
        assert!((path_loss(&l, 5_000.0, false).unwrap() - 139.917_982_176_305_54).abs() < 1e-9);
        assert!((path_loss(&l, 5_000.0, true).unwrap() - 113.010_921_342_443_95).abs() < 1e-9);
    }

    #[test]
    fn below_validity_floor() {
        assert_eq!(
            path_loss(&htbs(), 9.0, true),
            Err(ChannelError::DistanceBelowValidity { distance_m: 9.0 })
        );
        assert!(path_loss(&htbs(), 10.0, true).is_ok());
    }

    #[test]
    fn path_loss_monotone_and_nlos_dominates() {
        let mut rng = rng_from_seed(1);
        for s in [htbs(), legacy()] {
            for _ in 0..1000 {
                let a = rng.random_range(10.0..60_000.0);
                let b = rng.random_range(10.0..60_000.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                for los in [true, false] {
                    assert!(path_loss(&s, hi, los).unwrap() >= path_loss(&s, lo, los).unwrap());
                }
                assert!(path_loss(&s, a, false).unwrap() >= path_loss(&s, a, true).unwrap());
            }
        }
    }

    #[test]
    fn shadowing_statistics() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| shadow_sample(&mut rng, false, true)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((std - 8.0).abs() < 0.1, "std {std}");

        let mean_los = (0..n).map(|_| shadow_sample(&mut rng, true, false)).sum::<f64>() / n as f64;
        assert!(mean_los.abs() < 0.05);

        let a: Vec<f64> = {
            let mut r = rng_from_seed(5);
            (0..10).map(|_| shadow_sample(&mut r, true, true)).collect()
        };
        let b: Vec<f64> = {
            let mut r = rng_from_seed(5);
            (0..10).map(|_| shadow_sample(&mut r, true, true)).collect()
        };
        assert_eq!(a, b);
    }

    fn geometry() -> UserGeometry {
        UserGeometry {
            azimuth: 0.7,
            elevation: -0.05,
        }
    }

    #[test]
    fn infinite_k_factor_gives_the_steering_vector() {
        let lambda = 0.43;
        let layout = array::build_layout(&ArrayConfig::new(8, 2, true), lambda);
        let model = ClusterModel {
            k_factor: KFactor::Fixed(f64::INFINITY),
            ..ClusterModel::default()
        };
        let mut rng = rng_from_seed(3);
        let g = small_scale(&mut rng, &layout, geometry(), true, &model, lambda);
        let a = array::steering(&layout, 0.7, -0.05, lambda);
        let ratio = g[0] / a.entries[0];
        for (x, y) in g.iter().zip(&a.entries) {
            assert!((x.norm() - 1.0).abs() < 1e-12);
            assert!((x - ratio * y).norm() < 1e-12);
        }
    }

    #[test]
    fn diffuse_entries_have_unit_variance() {
        let lambda = 0.43;
        let layout = array::build_layout(&ArrayConfig::new(8, 2, true), lambda);
        let model = ClusterModel {
            k_factor: KFactor::Fixed(0.0),
            ..ClusterModel::default()
        };
        let mut rng = rng_from_seed(4);
        let draws = 10_000;
        let mut energy = vec![0.0; layout.num_ports()];
        for _ in 0..draws {
            let g = small_scale(&mut rng, &layout, geometry(), true, &model, lambda);
            for (e, z) in energy.iter_mut().zip(&g) {
                *e += z.norm_sqr();
            }
        }
        for e in energy {
            let var = e / draws as f64;
            assert!((var - 1.0).abs() < 0.03, "variance {var}");
        }
    }

    /// Kolmogorov-Smirnov statistic of `samples` against `cdf`.
    fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Asymptotic KS p-value.
    fn ks_p_value(d: f64, n: usize) -> f64 {
        let sqrt_n = (n as f64).sqrt();
        let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
        let mut p = 0.0;
        for j in 1..100 {
            let j = j as f64;
            p += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    fn bessel_i0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        let q = x * x / 4.0;
        for k in 1..200 {
            term *= q / (k as f64 * k as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum
    }

    /// CDF of the normalized Rician power by Simpson integration of its pdf.
    fn rician_power_cdf(kappa: f64, x: f64) -> f64 {
        let pdf = |t: f64| {
            (1.0 + kappa) * (-kappa - (1.0 + kappa) * t).exp() * bessel_i0(2.0 * (kappa * (1.0 + kappa) * t).sqrt())
        };
        let n = 2000;
        let h = x / n as f64;
        let mut acc = pdf(0.0) + pdf(x);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn single_port_power_distributions() {
        let lambda = 0.43;
        let layout = array::build_layout(&ArrayConfig::new(1, 1, false), lambda);
        let draws = 10_000;

        let rayleigh = ClusterModel::default();
        let mut rng = rng_from_seed(21);
        let p: Vec<f64> = (0..draws)
            .map(|_| small_scale(&mut rng, &layout, geometry(), false, &rayleigh, lambda)[0].norm_sqr())
            .collect();
        let mean = p.iter().sum::<f64>() / draws as f64;
        assert!((mean - 1.0).abs() < 0.05);
        let exp = Exp::new(1.0).unwrap();
        let d = ks_statistic(p, |x| exp.cdf(x));
        assert!(ks_p_value(d, draws) > 0.01, "KS D = {d}");

        let kappa = db_to_linear(7.0);
        let rician = ClusterModel {
            k_factor: KFactor::Fixed(kappa),
            ..ClusterModel::default()
        };
        let p: Vec<f64> = (0..draws)
            .map(|_| small_scale(&mut rng, &layout, geometry(), true, &rician, lambda)[0].norm_sqr())
            .collect();
        let mean = p.iter().sum::<f64>() / draws as f64;
        assert!((mean - 1.0).abs() < 0.03);
        let d = ks_statistic(p, |x| rician_power_cdf(kappa, x));
        assert!(ks_p_value(d, draws) > 0.01, "KS D = {d}");
    }

    fn drop_at(distances: &[f64], azimuths: &[f64]) -> UserDrop {
        UserDrop {
            positions: distances
                .iter()
                .zip(azimuths)
                .map(|(&d, &a)| UserPosition {
                    distance_2d_m: d,
                    azimuth_rad: a,
                })
                .collect(),
            user_height_m: 8.0,
        }
    }

    #[test]
    fn empty_drop_gives_empty_matrix() {
        let s = htbs();
        let h = generate(&mut rng_from_seed(0), &s, &drop_at(&[], &[])).unwrap();
        assert_eq!(h.h.shape(), (512, 0));
        assert!(h.large_scale.beta.is_empty());
    }

    #[test]
    fn same_user_seed_same_gain_different_fading() {
        let s = htbs();
        let gen = ChannelGenerator::new(&s, ChannelModel::default());
        let pos = |az| UserPosition {
            distance_2d_m: 3_000.0,
            azimuth_rad: az,
        };
        let a = gen.user_channel(&mut rng_from_seed(9), pos(0.1), 8.0).unwrap();
        let b = gen.user_channel(&mut rng_from_seed(9), pos(2.0), 8.0).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_ne!(a.fading, b.fading);
    }

    #[test]
    fn los_selection_follows_bs_type() {
        let d = drop_at(&[500.0, 900.0], &[0.0, 1.0]);
        let h = generate(&mut rng_from_seed(1), &htbs(), &d).unwrap();
        assert_eq!(h.large_scale.los, vec![true, true]);
        let l = generate(&mut rng_from_seed(1), &legacy(), &d).unwrap();
        assert_eq!(l.large_scale.los, vec![false, false]);
        for b in l.large_scale.beta.iter().chain(&h.large_scale.beta) {
            assert!(*b > 0.0 && *b < 1.0);
        }
        assert!(h.warnings.is_empty());
    }

    #[test]
    fn far_users_are_flagged() {
        let d = drop_at(&[37_000.0], &[0.0]);
        let h = generate(&mut rng_from_seed(1), &htbs(), &d).unwrap();
        assert_eq!(h.warnings, vec![EXTRAPOLATION_WARNING.to_string()]);
        let err = generate(&mut rng_from_seed(1), &htbs(), &drop_at(&[5.0], &[0.0])).unwrap_err();
        assert!(matches!(err, ChannelError::DistanceBelowValidity { .. }));
    }

    #[test]
    fn generation_is_deterministic() {
        let d = drop_at(&[500.0, 9_000.0, 20_000.0], &[0.0, 1.0, -2.0]);
        let a = generate(&mut rng_from_seed(77), &htbs(), &d).unwrap();
        let b = generate(&mut rng_from_seed(77), &htbs(), &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binary_dump_round_trip() {
        let s = Scenario::reference(BsType::Htbs, 4, Band::Fc700, 23.0)
            .with(|d| {
                d.insert("m_horizontal".into(), 4.into());
                d.insert("m_vertical".into(), 1.into());
            })
            .unwrap();
        let h = generate(&mut rng_from_seed(2), &s, &drop_at(&[100.0, 200.0], &[0.0, 1.0])).unwrap();
        let mut buf = Vec::new();
        h.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 8 * 2);
        let (back, fc) = read_binary(&buf[..]).unwrap();
        assert_eq!(fc, 700e6);
        assert_eq!(back.shape(), (8, 2));
        for (x, y) in back.iter().zip(h.h.iter()) {
            assert!((x - y).norm() <= 1e-6 * y.norm());
        }
    }

    #[test]
    fn spatial_correlation_decays_with_separation() {
        let lambda = crate::SPEED_OF_LIGHT / 700e6;
        let layout = array::build_layout(&ArrayConfig::new(16, 4, true), lambda);
        let model = ClusterModel {
            num_clusters: 1,
            k_factor: KFactor::Fixed(100.0),
            ..ClusterModel::default()
        };
        let el = -0.02;
        let corr = |sep_deg: f64, rng: &mut crate::seeding::SimRng| {
            let a = small_scale(rng, &layout, UserGeometry { azimuth: 0.3, elevation: el }, true, &model, lambda);
            let b = small_scale(
                rng,
                &layout,
                UserGeometry {
                    azimuth: 0.3 + sep_deg.to_radians(),
                    elevation: el,
                },
                true,
                &model,
                lambda,
            );
            let ip: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
            let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            ip.norm() / (na * nb)
        };
        let mut rng = rng_from_seed(8);
        let trials = 200;
        let c0 = (0..trials).map(|_| corr(0.0, &mut rng)).sum::<f64>() / trials as f64;
        let c10 = (0..trials).map(|_| corr(10.0, &mut rng)).sum::<f64>() / trials as f64;
        assert!(c0 > 0.95, "c0 = {c0}");
        assert!(c10 < c0, "c10 = {c10}, c0 = {c0}");
    }
}
