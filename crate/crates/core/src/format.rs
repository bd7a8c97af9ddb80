//! Diff-stable number formatting for logs and tables.

/// Formats `x` with six significant digits, without exponent for ordinary
/// magnitudes. Negative zero prints as `0`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=14).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(123.456789), "123.457");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(1500.0), "1500");
        assert_eq!(sig6(-0.0), "0");
        assert_eq!(sig6(-2.5), "-2.5");
        assert_eq!(sig6(999999.6), "1000000");
        assert_eq!(sig6(f64::INFINITY), "inf");
    }
}
