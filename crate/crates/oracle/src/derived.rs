//! Closed-form expectations for counts and percentages.

/// Percentage of entries removed, computed in exact rational arithmetic and
/// rounded to `decimals` places.
pub fn reduction_pct(input: u64, output: u64, decimals: u32) -> f64 {
    assert!(input > 0 && output <= input);
    let scale = 10u64.pow(decimals);
    let removed = (input - output) * 100 * scale;
    let rounded = (removed + input / 2) / input;
    rounded as f64 / scale as f64
}

/// Number of scheduled firings in a horizon that starts at registration.
pub fn scheduled_firings(horizon_seconds: u64, interval_seconds: u64) -> u64 {
    let mut n = 0;
    let mut t = interval_seconds;
    while t <= horizon_seconds {
        n += 1;
        t += interval_seconds;
    }
    n
}
