//! Downlink RZF precoding with an equal power split.
//!
//! Precoding directions are the normalized RZF columns computed with
//! `P = (total_power / K) I`; every user receives `total_power / K`.

use thiserror::Error;

use crate::linalg;
use crate::scenario::{Duplex, Scenario};
use crate::uplink::RateReport;
use crate::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DownlinkError {
    #[error("regularized Gram matrix is not positive definite")]
    SingularSystem,
    #[error("no users to precode for")]
    NoUsers,
    #[error("configuration error: {0}")]
    ConfigError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// `M x K`, unit-norm columns.
    pub w: CMatrix,
    /// Per-user transmit power [W].
    pub power: Vec<f64>,
}

pub fn dl_precoder(h: &CMatrix, sigma2: f64, total_power_w: f64) -> Result<Precoder, DownlinkError> {
    let k = h.ncols();
    if k == 0 {
        return Err(DownlinkError::NoUsers);
    }
    let q = total_power_w / k as f64;
    let reg = vec![sigma2 / q; k];
    let mut w = linalg::regularized_right_inverse(h, &reg).map_err(|_| DownlinkError::SingularSystem)?;
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(DownlinkError::SingularSystem);
        }
        col.unscale_mut(n);
    }
    Ok(Precoder {
        w,
        power: vec![q; k],
    })
}

/// `q_k |h_k^H w_k|^2 / (sum_{i != k} q_i |h_k^H w_i|^2 + sigma^2)`.
pub fn dl_sinr(h: &CMatrix, precoder: &Precoder, sigma2: f64) -> Vec<f64> {
    assert_eq!(h.shape(), precoder.w.shape(), "precoder shape");
    let q = &precoder.power;
    // cross[(k, i)] = h_k^H w_i
    let cross = h.adjoint() * &precoder.w;
    (0..h.ncols())
        .map(|k| {
            let interference: f64 = (0..h.ncols())
                .filter(|&i| i != k)
                .map(|i| q[i] * cross[(k, i)].norm_sqr())
                .sum();
            q[k] * cross[(k, k)].norm_sqr() / (interference + sigma2)
        })
        .collect()
}

/// Share of coherence-block samples carrying downlink data. FDD spends `M`
/// downlink pilot samples; TDD spends `K` and leaves `1 - ul_fraction` of
/// the remainder to the downlink.
pub fn dl_data_share(scenario: &Scenario, num_ports: usize) -> Result<f64, DownlinkError> {
    let fs = &scenario.coherence_block;
    let tau_c = fs.tau_c as f64;
    match scenario.duplex {
        Duplex::Fdd => {
            if fs.tau_c <= num_ports {
                return Err(DownlinkError::ConfigError(format!(
                    "coherence block of {} samples leaves no downlink data after {num_ports} pilots",
                    fs.tau_c
                )));
            }
            Ok((tau_c - num_ports as f64) / tau_c)
        }
        Duplex::Tdd => Ok((1.0 - fs.ul_fraction) * (tau_c - fs.tau_p as f64) / tau_c),
    }
}

pub fn dl_rate(h: &CMatrix, precoder: &Precoder, scenario: &Scenario) -> Result<RateReport, DownlinkError> {
    let share = dl_data_share(scenario, h.nrows())?;
    let sinr = dl_sinr(h, precoder, scenario.noise_power());
    Ok(RateReport::from_sinr(sinr, share, scenario.bandwidth_hz, scenario.cp_overhead))
}

/// Precoding and rates for one channel realization at the scenario's DL power.
pub fn evaluate(h: &CMatrix, scenario: &Scenario) -> Result<RateReport, DownlinkError> {
    let share = dl_data_share(scenario, h.nrows())?;
    let sigma2 = scenario.noise_power();
    let precoder = dl_precoder(h, sigma2, scenario.dl_tx_power_w())?;
    let sinr = dl_sinr(h, &precoder, sigma2);
    Ok(RateReport::from_sinr(sinr, share, scenario.bandwidth_hz, scenario.cp_overhead))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Band, BsType};
    use crate::seeding::rng_from_seed;
    use crate::Complex64;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_channel(rng: &mut impl Rng, m: usize, k: usize) -> CMatrix {
        DMatrix::from_fn(m, k, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
    }

    #[test]
    fn single_user_is_maximum_ratio() {
        let mut rng = rng_from_seed(1);
        let h = random_channel(&mut rng, 12, 1);
        let pre = dl_precoder(&h, 0.1, 4.0).unwrap();
        let mrt = h.column(0).unscale(h.column(0).norm());
        // equal up to a global phase; RZF with K = 1 keeps the phase
        for (a, b) in pre.w.iter().zip(mrt.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let s = dl_sinr(&h, &pre, 0.1);
        let expected = 4.0 * h.norm_squared() / 0.1;
        assert!((s[0] - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn columns_are_unit_norm_and_power_sums() {
        let mut rng = rng_from_seed(2);
        let h = random_channel(&mut rng, 16, 5);
        let pre = dl_precoder(&h, 0.5, 100.0).unwrap();
        for col in pre.w.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-9);
        }
        let total: f64 = pre.power.iter().sum();
        assert!((total - 100.0).abs() <= 1e-12 * 100.0);
    }

    #[test]
    fn vanishing_noise_gives_zero_forcing() {
        let mut rng = rng_from_seed(3);
        let h = random_channel(&mut rng, 16, 6);
        let pre = dl_precoder(&h, 1e-14, 1.0).unwrap();
        let c = h.adjoint() * &pre.w;
        for k in 0..6 {
            for i in 0..6 {
                if i != k {
                    assert!(c[(k, i)].norm() / c[(k, k)].norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sinr_matches_naive_sum() {
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let h = random_channel(&mut rng, 8, 3);
            let mut w = random_channel(&mut rng, 8, 3);
            for mut c in w.column_iter_mut() {
                let n = c.norm();
                c.unscale_mut(n);
            }
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..3.0)).collect();
            let pre = Precoder { w: w.clone(), power: q.clone() };
            let fast = dl_sinr(&h, &pre, 0.3);
            for k in 0..3 {
                let dot = |i: usize| -> Complex64 { (0..8).map(|m| h[(m, k)].conj() * w[(m, i)]).sum() };
                let mut interference = 0.0;
                for i in 0..3 {
                    if i != k {
                        interference += q[i] * dot(i).norm_sqr();
                    }
                }
                let naive = q[k] * dot(k).norm_sqr() / (interference + 0.3);
                assert!((fast[k] - naive).abs() <= 1e-10 * naive);
            }
        }
    }

    #[test]
    fn fdd_needs_room_for_downlink_pilots() {
        let s = Scenario::reference(BsType::Htbs, 20, Band::Fc700, 23.0)
            .with(|d| {
                d.insert("tau_c".into(), 512.into());
            })
            .unwrap();
        let h = DMatrix::from_element(512, 1, Complex64::new(1.0, 0.0));
        let pre = Precoder {
            w: h.clone() / Complex64::new(512f64.sqrt(), 0.0),
            power: vec![1.0],
        };
        assert!(matches!(dl_rate(&h, &pre, &s), Err(DownlinkError::ConfigError(_))));
    }

    #[test]
    fn data_shares() {
        let fdd = Scenario::reference(BsType::Htbs, 20, Band::Fc700, 23.0);
        assert!((dl_data_share(&fdd, 512).unwrap() - 9488.0 / 10000.0).abs() < 1e-15);
        let tdd = Scenario::reference(BsType::Htbs, 20, Band::Fc3500, 23.0);
        assert!((dl_data_share(&tdd, 512).unwrap() - 0.75 * 9980.0 / 10000.0).abs() < 1e-15);
    }

    #[test]
    fn global_phase_and_own_power() {
        let mut rng = rng_from_seed(5);
        let h = random_channel(&mut rng, 10, 4);
        let pre = dl_precoder(&h, 0.2, 4.0).unwrap();
        let base = dl_sinr(&h, &pre, 0.2);
        let rotated = Precoder {
            w: &pre.w * Complex64::from_polar(1.0, 1.1),
            power: pre.power.clone(),
        };
        for (a, b) in base.iter().zip(dl_sinr(&h, &rotated, 0.2)) {
            assert!((a - b).abs() <= 1e-10 * a);
        }
        let mut boosted = pre.clone();
        boosted.power[2] *= 1.5;
        assert!(dl_sinr(&h, &boosted, 0.2)[2] > base[2]);
    }
}
