//! Dynamic time warping under the structural degree-ratio cost.

/// Cost charged per element when one sequence is empty and the other is not.
pub const EMPTY_PENALTY: f64 = 1.0;

/// `max(a, b) / min(a, b) - 1`, with values floored at 1 so zero degrees stay finite.
pub fn element_cost(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(1.0), b.max(1.0));
    a.max(b) / a.min(b) - 1.0
}

/// Classic O(|a|·|b|) DTW with unit steps (diagonal, up, left).
///
/// Both empty → 0; exactly one empty → `len(nonempty) × EMPTY_PENALTY`.
pub fn dtw_cost(a: &[f64], b: &[f64]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) => return b.len() as f64 * EMPTY_PENALTY,
        (false, true) => return a.len() as f64 * EMPTY_PENALTY,
        _ => {}
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let best = prev[j].min(prev[j + 1]).min(cur[j]);
            cur[j + 1] = element_cost(x, y) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}
