//! Numeric output with six significant digits.

/// Formats `x` with six significant digits, switching to scientific
/// notation for very large or very small magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..6).contains(&magnitude) {
        let decimals = (5 - magnitude).max(0) as usize;
        let text = format!("{x:.decimals$}");
        // Rounding can carry into a new digit (9.999995 -> 10.00000).
        let digits = text.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
        if digits > 6 && decimals > 0 {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        text
    } else {
        format!("{x:.5e}")
    }
}

/// Coefficient label `F_ij` with the intercept as row 1 and outcomes from 1.
pub fn coefficient_label(row: usize, outcome: usize) -> String {
    format!("F_{}{}", row + 1, outcome + 1)
}
