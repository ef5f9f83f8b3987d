//! Training compute under the `6 N B` per-step cost model.

/// FLOPs of one step on a model with `n` parameters and `b` tokens.
pub fn flops_per_step(n: u64, b: u64) -> u64 {
    6 * n * b
}

/// `6 B (tau N_small + (T - tau) N_large)`.
pub fn staged_flops(b: u64, horizon: u64, tau: u64, n_small: u64, n_large: u64) -> u64 {
    assert!(tau <= horizon, "tau within horizon");
    6 * b * (tau * n_small + (horizon - tau) * n_large)
}

/// Staged-to-fixed compute ratio as an exact fraction `(num, den)`.
pub fn staged_ratio(horizon: u64, tau: u64, n_small: u64, n_large: u64) -> (u128, u128) {
    assert!(tau <= horizon, "tau within horizon");
    let num = tau as u128 * n_small as u128 + (horizon - tau) as u128 * n_large as u128;
    let den = horizon as u128 * n_large as u128;
    (num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_step_example() {
        assert_eq!(flops_per_step(676, 32), 129_792);
    }

    #[test]
    fn tau_zero_is_fixed_size() {
        assert_eq!(staged_flops(32, 1000, 0, 10, 500), 6 * 32 * 1000 * 500);
    }

    #[test]
    fn eighty_percent_small_phase() {
        let (num, den) = staged_ratio(10_000, 8_000, 2, 100);
        assert_eq!(num * 1000, den * 216);
    }
}
