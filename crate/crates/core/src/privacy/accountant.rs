use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-step Renyi divergence bound of the subsampled Gaussian mechanism at
/// integer order `alpha`.
///
/// The mechanism draws a Poisson subsample with rate `q`, sums clipped
/// contributions and adds Gaussian noise with standard deviation
/// `sigma * clip`. The bound is the exact integer-order expansion
///
/// ```text
/// (alpha - 1) * rdp = log sum_{i=0..alpha} C(alpha,i) q^i (1-q)^(alpha-i)
///                                          * exp(i (i-1) / (2 sigma^2))
/// ```
///
/// evaluated in log space so large orders and small `sigma` cannot overflow.
///
/// # Errors
///
/// `sigma == 0` with `q > 0` is refused: no noise means no finite bound, and
/// silently clamping would fabricate a guarantee.
pub fn sgm_rdp(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::InvalidArgument(format!("rdp order must be >= 2, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&q) || !q.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling rate must lie in [0,1], got {q}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if q == 0.0 {
        // Nothing is ever sampled; the mechanism output is independent of the data.
        return Ok(0.0);
    }
    if sigma == 0.0 {
        return Err(Error::PrivacyInfeasible(
            "sigma = 0 with nonzero sampling rate admits no finite privacy bound".into(),
        ));
    }
    let a = alpha as f64;
    if q == 1.0 {
        // Degenerates to the plain Gaussian mechanism.
        return Ok(a / (2.0 * sigma * sigma));
    }

    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);
    let ln_q = q.ln();
    let ln_1q = (-q).ln_1p();

    // log C(alpha, i) built incrementally; alpha is small so the loop is cheap.
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    let mut log_binom = 0.0f64;
    for i in 0..=alpha {
        if i > 0 {
            log_binom += ((a - i as f64 + 1.0) / i as f64).ln();
        }
        let fi = i as f64;
        terms.push(log_binom + fi * ln_q + (a - fi) * ln_1q + fi * (fi - 1.0) * inv_2s2);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_a = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    Ok((log_a / (a - 1.0)).max(0.0))
}

/// Converts a composed RDP curve to an (epsilon, delta) guarantee.
///
/// Returns the minimum over orders of `rdp + ln(1/delta) / (alpha - 1)`
/// together with the order attaining it.
pub fn rdp_to_dp(orders: &[u32], rdp: &[f64], delta: f64) -> Result<(f64, u32)> {
    if orders.is_empty() || orders.len() != rdp.len() {
        return Err(Error::InvalidArgument(format!(
            "orders ({}) and rdp values ({}) must be nonempty and aligned",
            orders.len(),
            rdp.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let mut best: Option<(f64, u32)> = None;
    for (&alpha, &r) in orders.iter().zip(rdp.iter()) {
        if alpha < 2 {
            return Err(Error::InvalidArgument(format!("rdp order must be >= 2, got {alpha}")));
        }
        if r < 0.0 || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("rdp value at order {alpha} is {r}")));
        }
        let eps = r + log_inv_delta / (alpha as f64 - 1.0);
        if best.map_or(true, |(b, _)| eps < b) {
            best = Some((eps, alpha));
        }
    }
    Ok(best.expect("orders nonempty"))
}

/// Default order grid: all integers 2..=64 plus two coarse tail orders.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256]).collect()
}

/// Running RDP ledger for a sequence of subsampled Gaussian releases.
///
/// Composition is additive per order, so the ledger stores one accumulated
/// divergence per order plus the number of steps absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    orders: Vec<u32>,
    rdp: Vec<f64>,
    steps: u64,
}

impl AccountantState {
    pub fn new(orders: Vec<u32>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::InvalidArgument("order grid must be nonempty".into()));
        }
        let mut orders = orders;
        orders.sort_unstable();
        orders.dedup();
        if orders[0] < 2 {
            return Err(Error::InvalidArgument(format!(
                "rdp order must be >= 2, got {}",
                orders[0]
            )));
        }
        let n = orders.len();
        Ok(AccountantState { orders, rdp: vec![0.0; n], steps: 0 })
    }

    pub fn with_default_orders() -> Self {
        Self::new(default_orders()).expect("default grid is valid")
    }

    /// Absorbs `steps` identical subsampled Gaussian releases.
    pub fn accumulate(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let per_step: Vec<f64> =
            self.orders.iter().map(|&a| sgm_rdp(q, sigma, a)).collect::<Result<_>>()?;
        for (acc, r) in self.rdp.iter_mut().zip(per_step.iter()) {
            *acc += steps as f64 * r;
        }
        self.steps += steps;
        Ok(())
    }

    /// Tightest (epsilon, order) at the given delta for the ledger so far.
    pub fn epsilon(&self, delta: f64) -> Result<(f64, u32)> {
        rdp_to_dp(&self.orders, &self.rdp, delta)
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with an independent arbitrary-precision
    // evaluation of the binomial expansion; tolerances are relative 1e-9.
    const REF_Q: f64 = 0.01;
    const REF_SIGMA: f64 = 2.0;
    const REF: &[(u32, f64)] = &[
        (2, 2.84021383241e-05),
        (4, 5.71558073717e-05),
        (8, 1.1575614793e-04),
        (16, 2.3762401964e-04),
        (32, 5.02894646863e-04),
        (64, 3.32174640868),
    ];

    #[test]
    fn matches_reference_grid() {
        for &(alpha, want) in REF {
            let got = sgm_rdp(REF_Q, REF_SIGMA, alpha).unwrap();
            let rel = (got - want).abs() / want;
            assert!(rel < 1e-9, "alpha={alpha}: got {got}, want {want}, rel {rel}");
        }
    }

    #[test]
    fn zero_sampling_rate_is_free() {
        for &alpha in &[2u32, 7, 64, 256] {
            assert_eq!(sgm_rdp(0.0, 1.3, alpha).unwrap(), 0.0);
        }
        // q = 0 short-circuits before the sigma check.
        assert_eq!(sgm_rdp(0.0, 0.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn full_sampling_matches_plain_gaussian() {
        for &alpha in &[2u32, 8, 64] {
            for &sigma in &[0.5, 1.0, 4.0] {
                let got = sgm_rdp(1.0, sigma, alpha).unwrap();
                let want = alpha as f64 / (2.0 * sigma * sigma);
                assert!((got - want).abs() < 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn zero_sigma_with_sampling_is_refused() {
        let err = sgm_rdp(0.3, 0.0, 4).unwrap_err();
        assert!(matches!(err, Error::PrivacyInfeasible(_)), "got {err:?}");
    }

    #[test]
    fn rejects_out_of_range_arguments() {
        assert!(sgm_rdp(-0.1, 1.0, 2).is_err());
        assert!(sgm_rdp(1.1, 1.0, 2).is_err());
        assert!(sgm_rdp(0.5, -1.0, 2).is_err());
        assert!(sgm_rdp(0.5, 1.0, 1).is_err());
        assert!(sgm_rdp(0.5, 1.0, 0).is_err());
    }

    #[test]
    fn tiny_sigma_large_order_stays_finite() {
        let v = sgm_rdp(0.5, 0.01, 256).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn monotone_in_q_and_sigma() {
        let mut prev = 0.0;
        for &q in &[0.001, 0.01, 0.1, 0.5, 1.0] {
            let v = sgm_rdp(q, 1.5, 8).unwrap();
            assert!(v >= prev, "rdp should not decrease in q");
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for &sigma in &[0.5, 1.0, 2.0, 4.0, 8.0] {
            let v = sgm_rdp(0.01, sigma, 8).unwrap();
            assert!(v <= prev, "rdp should not increase in sigma");
            prev = v;
        }
    }

    #[test]
    fn accumulation_is_additive() {
        let mut one = AccountantState::with_default_orders();
        one.accumulate(0.01, 1.5, 1).unwrap();
        let mut three = AccountantState::with_default_orders();
        three.accumulate(0.01, 1.5, 3).unwrap();
        let mut split = AccountantState::with_default_orders();
        split.accumulate(0.01, 1.5, 2).unwrap();
        split.accumulate(0.01, 1.5, 1).unwrap();
        assert_eq!(three.steps(), 3);
        assert_eq!(split.steps(), 3);
        for i in 0..one.rdp().len() {
            assert!((three.rdp()[i] - 3.0 * one.rdp()[i]).abs() < 1e-12 * three.rdp()[i].max(1e-300));
            assert!((split.rdp()[i] - three.rdp()[i]).abs() < 1e-12 * three.rdp()[i].max(1e-300));
        }
    }

    #[test]
    fn conversion_on_zero_rdp_is_pure_delta_term() {
        // ln(1e5) / 63 for orders 2..=64; the largest order wins.
        let orders: Vec<u32> = (2..=64).collect();
        let rdp = vec![0.0; orders.len()];
        let (eps, order) = rdp_to_dp(&orders, &rdp, 1e-5).unwrap();
        assert!((eps - 0.1827448486503211).abs() < 1e-9);
        assert_eq!(order, 64);
    }

    #[test]
    fn conversion_picks_interior_order() {
        // Linearly growing rdp trades off against the shrinking delta term,
        // so the argmin should be strictly between the grid ends.
        let orders: Vec<u32> = (2..=64).collect();
        let rdp: Vec<f64> = orders.iter().map(|&a| 0.005 * (a as f64 - 1.0)).collect();
        let (eps, order) = rdp_to_dp(&orders, &rdp, 1e-5).unwrap();
        assert!(order > 2 && order < 64, "order {order}");
        for (&a, &r) in orders.iter().zip(rdp.iter()) {
            assert!(eps <= r + (1e5f64).ln() / (a as f64 - 1.0) + 1e-12);
        }
    }

    #[test]
    fn conversion_validates_inputs() {
        assert!(rdp_to_dp(&[], &[], 1e-5).is_err());
        assert!(rdp_to_dp(&[2, 3], &[0.0], 1e-5).is_err());
        assert!(rdp_to_dp(&[2], &[0.0], 0.0).is_err());
        assert!(rdp_to_dp(&[2], &[0.0], 1.0).is_err());
        assert!(rdp_to_dp(&[2], &[-0.1], 1e-5).is_err());
        assert!(rdp_to_dp(&[1], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn state_serializes_roundtrip() {
        let mut acc = AccountantState::with_default_orders();
        acc.accumulate(0.02, 1.1, 17).unwrap();
        let json = serde_json::to_string(&acc).unwrap();
        let back: AccountantState = serde_json::from_str(&json).unwrap();
        assert_eq!(acc, back);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_orders();
        assert_eq!(g.len(), 65);
        assert_eq!(g[0], 2);
        assert_eq!(g[62], 64);
        assert_eq!(&g[63..], &[128, 256]);
    }
}
