use crate::error::{Error, Result};
use crate::privacy::accountant::{rdp_to_dp, sgm_rdp};

const SIGMA_LO: f64 = 1e-2;
const SIGMA_HI: f64 = 1e3;
const MAX_BISECTIONS: u32 = 60;
/// Acceptable gap between the achieved and requested epsilon.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

fn epsilon_at(sigma: f64, q: f64, steps: u64, delta: f64, orders: &[u32]) -> Result<f64> {
    let rdp: Vec<f64> = orders
        .iter()
        .map(|&a| sgm_rdp(q, sigma, a).map(|r| r * steps as f64))
        .collect::<Result<_>>()?;
    Ok(rdp_to_dp(orders, &rdp, delta)?.0)
}

/// Finds the smallest noise multiplier in `[1e-2, 1e3]` whose composed
/// epsilon over `steps` subsampled Gaussian releases does not exceed
/// `eps_target`.
///
/// Bisection; the returned sigma satisfies `eps(sigma) <= eps_target` and
/// `eps_target - eps(sigma) <= CALIBRATION_TOLERANCE` unless the target is
/// looser than the whole search range, in which case the range floor is
/// returned.
///
/// # Errors
///
/// [`Error::PrivacyInfeasible`] when even the top of the range cannot meet
/// the target.
pub fn calibrate_sigma(
    eps_target: f64,
    delta: f64,
    q: f64,
    steps: u64,
    orders: &[u32],
) -> Result<f64> {
    if !(eps_target > 0.0) || !eps_target.is_finite() {
        return Err(Error::InvalidArgument(format!("target epsilon must be > 0, got {eps_target}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration needs a sampling rate in (0,1], got {q}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one step".into()));
    }

    if epsilon_at(SIGMA_HI, q, steps, delta, orders)? > eps_target {
        return Err(Error::PrivacyInfeasible(format!(
            "epsilon {eps_target} at delta {delta} unreachable for q={q}, steps={steps} \
             even at sigma={SIGMA_HI}"
        )));
    }
    if epsilon_at(SIGMA_LO, q, steps, delta, orders)? <= eps_target {
        return Ok(SIGMA_LO);
    }

    // Invariant: eps(lo) > target >= eps(hi).
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let eps = epsilon_at(mid, q, steps, delta, orders)?;
        if eps > eps_target {
            lo = mid;
        } else {
            hi = mid;
            if eps_target - eps <= CALIBRATION_TOLERANCE {
                break;
            }
        }
    }
    let achieved = epsilon_at(hi, q, steps, delta, orders)?;
    if achieved > eps_target || eps_target - achieved > CALIBRATION_TOLERANCE {
        return Err(Error::PrivacyInfeasible(format!(
            "bisection did not converge: achieved epsilon {achieved} for target {eps_target}"
        )));
    }
    Ok(hi)
}

/// Noise standard deviation of the classical Gaussian mechanism:
/// `sqrt(2 ln(1.25/delta)) * sensitivity / eps`.
pub fn classical_gaussian_sigma(eps: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(Error::InvalidArgument(format!("sensitivity must be > 0, got {sensitivity}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::accountant::default_orders;

    #[test]
    fn roundtrip_hits_target_from_below() {
        let orders = default_orders();
        let (q, steps, delta, target) = (0.005, 1000, 1e-5, 2.0);
        let sigma = calibrate_sigma(target, delta, q, steps, &orders).unwrap();
        let eps = epsilon_at(sigma, q, steps, delta, &orders).unwrap();
        assert!(eps <= target);
        assert!(target - eps <= CALIBRATION_TOLERANCE, "eps {eps}");
    }

    #[test]
    fn unreachable_target_errors() {
        let orders = default_orders();
        let err = calibrate_sigma(1e-9, 1e-5, 0.5, 1_000_000, &orders).unwrap_err();
        assert!(matches!(err, Error::PrivacyInfeasible(_)), "got {err:?}");
    }

    #[test]
    fn loose_target_returns_range_floor() {
        let orders = default_orders();
        // One nearly-sampled step with huge epsilon allowance.
        let sigma = calibrate_sigma(1e9, 1e-5, 0.001, 1, &orders).unwrap();
        assert_eq!(sigma, SIGMA_LO);
    }

    #[test]
    fn rejects_bad_arguments() {
        let orders = default_orders();
        assert!(calibrate_sigma(0.0, 1e-5, 0.1, 10, &orders).is_err());
        assert!(calibrate_sigma(1.0, 0.0, 0.1, 10, &orders).is_err());
        assert!(calibrate_sigma(1.0, 1e-5, 0.0, 10, &orders).is_err());
        assert!(calibrate_sigma(1.0, 1e-5, 0.1, 0, &orders).is_err());
    }

    #[test]
    fn classical_sigma_reference_value() {
        // eps=1, delta=1e-5, unit sensitivity.
        let s = classical_gaussian_sigma(1.0, 1e-5, 1.0).unwrap();
        assert!((s - 4.844805262605389).abs() < 1e-12);
    }

    #[test]
    fn classical_sigma_scales_linearly() {
        let base = classical_gaussian_sigma(1.0, 1e-5, 1.0).unwrap();
        let double_sens = classical_gaussian_sigma(1.0, 1e-5, 2.0).unwrap();
        let double_eps = classical_gaussian_sigma(2.0, 1e-5, 1.0).unwrap();
        assert!((double_sens - 2.0 * base).abs() < 1e-12);
        assert!((double_eps - 0.5 * base).abs() < 1e-12);
        assert!(classical_gaussian_sigma(1.0, 1e-5, 0.0).is_err());
    }
}
