//! Small numeric helpers shared across modules.

/// Compensated (Neumaier) summation. Used where a conservation check needs
/// the reduction itself to be far more accurate than the quantity under test.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Round to one decimal place (used by the power model's wattage bookkeeping).
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
