//! Coverage-distance search by bisection on the disk radius.

use serde::{Deserialize, Serialize};

use super::{percentile_rate, rate_pool, DropEnsemble, Link, McError};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSearch {
    pub min_radius_m: f64,
    pub max_radius_m: f64,
    /// Stop once `hi / lo - 1` falls below this.
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for CoverageSearch {
    fn default() -> Self {
        Self {
            min_radius_m: 100.0,
            max_radius_m: 100_000.0,
            rel_tol: 0.02,
            max_iterations: 64,
        }
    }
}

/// Radii straddling the target: the percentile rate meets it at `lo_m` and
/// misses it at `hi_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo_m: f64,
    pub rate_lo_bps: f64,
    pub hi_m: f64,
    pub rate_hi_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub d_cov_m: f64,
    pub target_rate_bps: f64,
    pub percentile: f64,
    pub link: Link,
    pub iterations: usize,
    pub converged: bool,
    /// The target is still met at the maximum search radius.
    pub saturated: bool,
    pub bracket: Option<Bracket>,
    pub warnings: Vec<String>,
}

struct Evaluation {
    rate_bps: f64,
    warnings: Vec<String>,
}

/// Geometric bisection of a non-increasing `rate(radius)` curve.
///
/// Returns the largest evaluated radius known to meet `target` together with
/// its bracket. `rate` receives a radius and returns the percentile rate and
/// any warnings raised while computing it.
pub fn search_radius<F>(
    mut rate: F,
    target_bps: f64,
    percentile: f64,
    link: Link,
    search: &CoverageSearch,
) -> Result<CoverageResult, McError>
where
    F: FnMut(f64) -> Result<(f64, Vec<String>), McError>,
{
    let mut warnings = std::collections::BTreeSet::new();
    let mut eval = |r: f64| -> Result<Evaluation, McError> {
        let (rate_bps, w) = rate(r)?;
        Ok(Evaluation { rate_bps, warnings: w })
    };

    let mut lo = search.min_radius_m;
    let lo_eval = eval(lo)?;
    warnings.extend(lo_eval.warnings);
    if lo_eval.rate_bps < target_bps {
        return Err(McError::TargetUnreachable {
            radius_m: lo,
            rate_bps: lo_eval.rate_bps,
            target_bps,
        });
    }
    let mut rate_lo = lo_eval.rate_bps;

    let mut hi = search.max_radius_m;
    let hi_eval = eval(hi)?;
    warnings.extend(hi_eval.warnings);
    let mut iterations = 2;
    if hi_eval.rate_bps >= target_bps {
        return Err(McError::NoUpperBracket(Box::new(CoverageResult {
            d_cov_m: hi,
            target_rate_bps: target_bps,
            percentile,
            link,
            iterations,
            converged: false,
            saturated: true,
            bracket: None,
            warnings: warnings.into_iter().collect(),
        })));
    }
    let mut rate_hi = hi_eval.rate_bps;

    while hi / lo - 1.0 >= search.rel_tol && iterations < search.max_iterations {
        let mid = (lo * hi).sqrt();
        let e = eval(mid)?;
        iterations += 1;
        warnings.extend(e.warnings);
        if e.rate_bps >= target_bps {
            lo = mid;
            rate_lo = e.rate_bps;
        } else {
            hi = mid;
            rate_hi = e.rate_bps;
        }
    }

    Ok(CoverageResult {
        d_cov_m: lo,
        target_rate_bps: target_bps,
        percentile,
        link,
        iterations,
        converged: hi / lo - 1.0 < search.rel_tol,
        saturated: false,
        bracket: Some(Bracket {
            lo_m: lo,
            rate_lo_bps: rate_lo,
            hi_m: hi,
            rate_hi_bps: rate_hi,
        }),
        warnings: warnings.into_iter().collect(),
    })
}

/// Largest disk radius at which the `percentile`-th percentile of the pooled
/// per-user rate still meets `target_bps`. Every candidate radius reuses the
/// ensemble's seeds.
pub fn coverage_search(
    scenario: &Scenario,
    ensemble: &DropEnsemble,
    target_bps: f64,
    percentile: f64,
    link: Link,
    search: &CoverageSearch,
) -> Result<CoverageResult, McError> {
    search_radius(
        |radius| {
            let pool = rate_pool(scenario, &ensemble.with_radius(radius), link)?;
            Ok((percentile_rate(&pool.rates_bps, percentile)?, pool.warnings))
        },
        target_bps,
        percentile,
        link,
        search,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Band, BsType};

    #[test]
    fn inverse_square_model_crossing() {
        // r(d) = c / d^2 crosses the target at d* = sqrt(c / target)
        let c = 4.0e14;
        let target = 10e6;
        let exact = (c / target as f64).sqrt();
        let result = search_radius(
            |d| Ok((c / (d * d), Vec::new())),
            target,
            5.0,
            Link::Dl,
            &CoverageSearch::default(),
        )
        .unwrap();
        assert!(result.converged);
        assert!((result.d_cov_m / exact - 1.0).abs() < 0.02);
        let b = result.bracket.unwrap();
        assert!(b.rate_lo_bps >= target && b.rate_hi_bps < target);
        assert!(b.hi_m / b.lo_m - 1.0 < 0.02);
        assert!(b.lo_m <= exact && exact < b.hi_m);
    }

    #[test]
    fn zero_target_saturates() {
        let err = search_radius(|_| Ok((1.0, Vec::new())), 0.0, 5.0, Link::Dl, &CoverageSearch::default()).unwrap_err();
        match err {
            McError::NoUpperBracket(r) => {
                assert!(r.saturated);
                assert_eq!(r.d_cov_m, 100_000.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_target() {
        let err = search_radius(|_| Ok((1.0, Vec::new())), 2.0, 5.0, Link::Ul, &CoverageSearch::default()).unwrap_err();
        assert!(matches!(err, McError::TargetUnreachable { .. }));
    }

    #[test]
    fn small_array_dl_coverage_has_valid_certificate() {
        let s = Scenario::reference(BsType::Htbs, 4, Band::Fc700, 23.0)
            .with(|d| {
                d.insert("m_horizontal".into(), 4.into());
                d.insert("m_vertical".into(), 2.into());
            })
            .unwrap();
        let ens = DropEnsemble::new(20, 1_000.0, 9);
        let r = coverage_search(&s, &ens, 10e6, 5.0, Link::Dl, &CoverageSearch::default()).unwrap();
        let b = r.bracket.unwrap();
        assert!(r.converged);
        assert!(b.rate_lo_bps >= 10e6 && b.rate_hi_bps < 10e6);
        // the certificate re-evaluates identically
        let again = rate_pool(&s, &ens.with_radius(b.lo_m), Link::Dl).unwrap();
        assert_eq!(percentile_rate(&again.rates_bps, 5.0).unwrap(), b.rate_lo_bps);
    }
}
