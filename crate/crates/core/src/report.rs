//! Number formatting shared by result documents and CSV output.

/// Rounds to 12 significant digits. Non-finite values pass through.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// `sig12` rendered with `.` as the decimal point and no exponent for
/// ordinary magnitudes; non-finite values render as `inf`, `-inf` or `NaN`.
pub fn fmt12(x: f64) -> String {
    format!("{}", sig12(x))
}
