//! Benchmarks only; see `benches/`.

/// Deterministic pseudo-ECG used as benchmark input.
pub fn test_signal(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 300.0;
            (2.0 * std::f64::consts::PI * 1.2 * t).sin() + if i % 250 == 0 { 2.0 } else { 0.0 }
        })
        .collect()
}
