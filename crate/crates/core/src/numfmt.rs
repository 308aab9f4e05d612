/// Format `x` with `digits` significant digits, `.` as the decimal
/// separator. Very large or small magnitudes switch to exponent notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    // Rounding can push the value to the next decade, e.g. 9.99995 -> 10.0000.
    let rounded_exp = {
        let s = format!("{:.*e}", digits - 1, x);
        s.split('e')
            .nth(1)
            .and_then(|e| e.parse::<i32>().ok())
            .unwrap_or(exp)
    };
    if !(-5..15).contains(&rounded_exp) {
        return format!("{:.*e}", digits - 1, x);
    }
    let decimals = (digits as i32 - 1 - rounded_exp).max(0) as usize;
    format!("{x:.decimals$}")
}
