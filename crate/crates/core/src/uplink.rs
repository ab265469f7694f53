//! Uplink power control, linear receive combining and per-user rates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, GramFailure};
use crate::scenario::{db_to_linear, Scenario};
use crate::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UplinkError {
    #[error("large-scale gain of user {user} is zero or not finite")]
    DegenerateGains { user: usize },
    #[error("regularized Gram matrix is not positive definite")]
    SingularSystem,
    #[error("channel matrix does not have full column rank")]
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Per-user transmit power (EIRP) [W].
    pub p: Vec<f64>,
    pub eirp_max_w: f64,
    pub delta_linear: f64,
}

impl PowerAllocation {
    pub fn equal(num_users: usize, power_w: f64) -> Self {
        Self {
            p: vec![power_w; num_users],
            eirp_max_w: power_w,
            delta_linear: 1.0,
        }
    }
}

/// Caps each user's EIRP so that received powers `p_k beta_k` span at most
/// `delta` from the weakest user:
/// `p_k = min(eirp_max, eirp_max * delta * beta_min / beta_k)`.
pub fn power_control(beta: &[f64], eirp_max_w: f64, delta_db: f64) -> Result<PowerAllocation, UplinkError> {
    if let Some(user) = beta.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(UplinkError::DegenerateGains { user });
    }
    let delta_linear = db_to_linear(delta_db);
    let beta_min = beta.iter().copied().fold(f64::INFINITY, f64::min);
    let p = beta
        .iter()
        .map(|b| eirp_max_w.min(eirp_max_w * delta_linear * beta_min / b))
        .collect();
    Ok(PowerAllocation {
        p,
        eirp_max_w,
        delta_linear,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombinerScheme {
    Rzf,
    Zf,
    Mr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    /// `M x K`; column `k` combines user `k`.
    pub v: CMatrix,
    pub scheme: CombinerScheme,
}

/// `V = H (H^H H + sigma^2 P^{-1})^{-1}`.
pub fn rzf_combiner(h: &CMatrix, power: &PowerAllocation, sigma2: f64) -> Result<Combiner, UplinkError> {
    let reg: Vec<f64> = power.p.iter().map(|p| sigma2 / p).collect();
    let v = linalg::regularized_right_inverse(h, &reg).map_err(|_| UplinkError::SingularSystem)?;
    Ok(Combiner {
        v,
        scheme: CombinerScheme::Rzf,
    })
}

/// `V = H (H^H H)^{-1}`; requires full column rank.
pub fn zf_combiner(h: &CMatrix) -> Result<Combiner, UplinkError> {
    if h.ncols() > h.nrows() {
        return Err(UplinkError::RankDeficient);
    }
    let reg = vec![0.0; h.ncols()];
    let v = linalg::regularized_right_inverse(h, &reg).map_err(|e| match e {
        GramFailure::NotPositiveDefinite | GramFailure::IllConditioned => UplinkError::RankDeficient,
    })?;
    Ok(Combiner {
        v,
        scheme: CombinerScheme::Zf,
    })
}

/// Maximum-ratio combining, `v_k = h_k`.
pub fn mr_combiner(h: &CMatrix) -> Combiner {
    Combiner {
        v: h.clone(),
        scheme: CombinerScheme::Mr,
    }
}

/// Per-user uplink SINR
/// `p_k |v_k^H h_k|^2 / (sum_{i != k} p_i |v_k^H h_i|^2 + sigma^2 ||v_k||^2)`.
pub fn sinr(h: &CMatrix, v: &CMatrix, p: &[f64], sigma2: f64) -> Vec<f64> {
    assert_eq!(h.ncols(), v.ncols(), "combiner column count");
    assert_eq!(h.nrows(), v.nrows(), "combiner row count");
    assert_eq!(h.ncols(), p.len(), "power vector length");
    // cross[(k, i)] = v_k^H h_i
    let cross = v.adjoint() * h;
    (0..h.ncols())
        .map(|k| {
            let mut interference = 0.0;
            for (i, pi) in p.iter().enumerate() {
                if i != k {
                    interference += pi * cross[(k, i)].norm_sqr();
                }
            }
            let noise = sigma2 * v.column(k).norm_squared();
            let signal = p[k] * cross[(k, k)].norm_sqr();
            let denom = interference + noise;
            if denom > 0.0 {
                signal / denom
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub se_bits_per_hz: Vec<f64>,
    pub rate_bps: Vec<f64>,
    /// Share of coherence-block samples carrying data in this direction.
    pub data_share: f64,
    /// `1 - cp_overhead`.
    pub cp_factor: f64,
}

impl RateReport {
    pub(crate) fn from_sinr(sinr: Vec<f64>, data_share: f64, bandwidth_hz: f64, cp_overhead: f64) -> Self {
        let cp_factor = 1.0 - cp_overhead;
        let se_bits_per_hz: Vec<f64> = sinr.iter().map(|s| data_share * (1.0 + s).log2()).collect();
        let rate_bps = se_bits_per_hz.iter().map(|se| bandwidth_hz * se * cp_factor).collect();
        Self {
            sinr,
            se_bits_per_hz,
            rate_bps,
            data_share,
            cp_factor,
        }
    }
}

/// `SE_k = (tau_u / tau_c) log2(1 + SINR_k)`, `R_k = W SE_k (1 - CP)`, with
/// `K` pilot samples per coherence block.
pub fn rate(sinr: &[f64], scenario: &Scenario) -> RateReport {
    RateReport::from_sinr(
        sinr.to_vec(),
        scenario.coherence_block.ul_share(),
        scenario.bandwidth_hz,
        scenario.cp_overhead,
    )
}

/// Power control, RZF combining, SINR and rate for one channel realization.
pub fn evaluate(h: &CMatrix, beta: &[f64], scenario: &Scenario) -> Result<RateReport, UplinkError> {
    let sigma2 = scenario.noise_power();
    let power = power_control(beta, scenario.eirp_max_w(), scenario.power_ratio_delta_db)?;
    let v = rzf_combiner(h, &power, sigma2)?;
    Ok(rate(&sinr(h, &v.v, &power.p, sigma2), scenario))
}
