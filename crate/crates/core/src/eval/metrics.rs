//! Distribution-level distances between output sets.

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += dist(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Energy distance `2 E|A - B| - E|A - A'| - E|B - B'|`.
///
/// The within-set expectations average over all ordered pairs including the
/// diagonal, so identical multisets give exactly zero and two point masses
/// at distance `d` give `2d`. Panics on empty input.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "energy distance needs non-empty sets");
    2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b)
}
