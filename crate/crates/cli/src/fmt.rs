//! Deterministic numeric formatting for persisted outputs.

/// Round to 12 significant digits — the precision at which angles are
/// serialized everywhere (records, CSVs, reports).
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("rounded float reparses")
}

/// Shortest decimal form that round-trips the value exactly.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Angle formatted for text outputs: rounded to 12 significant digits,
/// shortest decimal form.
pub fn angle(x: f64) -> String {
    num(sig12(x))
}
