//! Exact linear assignment by shortest augmenting paths with dual
//! potentials (the Jonker-Volgenant scheme). Solves the uniform-weight
//! equal-size empirical transport problem exactly.

/// Minimum-cost perfect assignment for a dense square cost matrix
/// (row-major, `n x n`). Returns the column assigned to each row and the
/// total cost.
pub fn solve(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    const UNSET: usize = usize::MAX;
    // Dual potentials for rows/columns and the current matching.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // way[j] = previous column on the alternating path to column j.
    let mut row_of = vec![UNSET; n + 1]; // row matched to column j (n = virtual root)
    for i in 0..n {
        row_of[n] = i;
        let mut j0 = n; // current column, start at the virtual root
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut way = vec![UNSET; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = UNSET;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 * n + j] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == UNSET {
                break;
            }
        }
        // Augment along the alternating path.
        while j0 != n {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        }
    }
    let mut assign = vec![UNSET; n];
    let mut total = 0.0;
    for j in 0..n {
        if row_of[j] != UNSET {
            assign[row_of[j]] = j;
            total += cost[row_of[j] * n + j];
        }
    }
    (assign, total)
}
