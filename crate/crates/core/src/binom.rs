use num_bigint::BigUint;
use num_traits::{One, Zero};

/// Exact binomial coefficient `C(n, k)`; zero when `k > n`.
pub(crate) fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // Exact at every step: acc is C(n, i) before the update.
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `ln C(n, k)` in floating point, for rates that would overflow as integers.
pub(crate) fn ln_binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        assert_eq!(binomial(12, 3), BigUint::from(220u32));
        assert_eq!(binomial(11, 2), BigUint::from(55u32));
        assert_eq!(binomial(5, 0), BigUint::one());
        assert_eq!(binomial(3, 4), BigUint::zero());
        assert_eq!(binomial(50, 25), BigUint::from(126_410_606_437_752u64));
    }

    #[test]
    fn log_matches_exact() {
        let exact: f64 = 126_410_606_437_752.0;
        assert!((ln_binomial(50, 25) - exact.ln()).abs() < 1e-9);
    }
}
