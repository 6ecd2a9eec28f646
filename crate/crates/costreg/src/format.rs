//! Deterministic float formatting for CSV artifacts.

/// Format with six significant digits: plain decimal in a moderate exponent
/// range, scientific notation outside it. Deterministic for byte-identical
/// artifact comparisons.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-4..=5).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}
